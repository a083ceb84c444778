#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <limits>

#include "imdnet/degrade.hpp"
#include "imdnet/image_io.hpp"
#include "imdnet/network.hpp"

namespace imdnet {
namespace metrics {

enum class ChannelMode { RGB, Y };

inline ChannelMode mode_from_string(const std::string& s) {
    if (s == "rgb") return ChannelMode::RGB;
    if (s == "y") return ChannelMode::Y;
    throw std::invalid_argument("unknown channel mode: " + s);
}

/// ITU-R BT.601 luma.
template <typename T>
Tensor<T> to_luma(const Tensor<T>& img) {
    check(img.c() == 3, "to_luma: 3-channel image expected");
    Tensor<T> out(img.b(), 1, img.h(), img.w());
    const size_t plane = static_cast<size_t>(img.h()) * img.w();
    for (int b = 0; b < img.b(); ++b)
        for (size_t i = 0; i < plane; ++i) {
            const T* p = img.data() + static_cast<size_t>(b) * 3 * plane;
            out.v[b * plane + i] =
                T(0.299) * p[i] + T(0.587) * p[plane + i] + T(0.114) * p[2 * plane + i];
        }
    return out;
}

/// 10*log10(1/MSE) on [0,1] images; +inf sentinel for identical inputs.
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& target, ChannelMode mode = ChannelMode::RGB) {
    check_same_shape(pred, target, "psnr");
    Tensor<T> a = pred, b = target;
    if (mode == ChannelMode::Y) {
        a = to_luma(pred);
        b = to_luma(target);
    }
    double mse = 0;
    for (size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
        mse += d * d;
    }
    mse /= a.numel();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

namespace detail {
inline const std::vector<double>& gaussian11() {
    static const std::vector<double> k = [] {
        std::vector<double> v(11);
        double sum = 0;
        for (int i = 0; i < 11; ++i) {
            double x = i - 5;
            v[i] = std::exp(-0.5 * x * x / (1.5 * 1.5));
            sum += v[i];
        }
        for (auto& e : v) e /= sum;
        return v;
    }();
    return k;
}

/// Separable valid filtering with the 11-tap Gaussian.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, int& oh, int& ow) {
    const auto& k = gaussian11();
    oh = h - 10;
    ow = w - 10;
    std::vector<double> tmp(static_cast<size_t>(h) * ow);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < ow; ++j) {
            double acc = 0;
            for (int t = 0; t < 11; ++t) acc += k[t] * img[i * w + j + t];
            tmp[i * ow + j] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
            double acc = 0;
            for (int t = 0; t < 11; ++t) acc += k[t] * tmp[(i + t) * ow + j];
            out[i * ow + j] = acc;
        }
    return out;
}

inline double ssim_plane(const std::vector<double>& x, const std::vector<double>& y, int h, int w) {
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // dynamic range 1
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    int oh, ow;
    auto mx = filter_valid(x, h, w, oh, ow);
    auto my = filter_valid(y, h, w, oh, ow);
    auto mxx = filter_valid(xx, h, w, oh, ow);
    auto myy = filter_valid(yy, h, w, oh, ow);
    auto mxy = filter_valid(xy, h, w, oh, ow);
    double acc = 0;
    for (size_t i = 0; i < mx.size(); ++i) {
        double vx = mxx[i] - mx[i] * mx[i];
        double vy = myy[i] - my[i] * my[i];
        double cxy = mxy[i] - mx[i] * my[i];
        double num = (2 * mx[i] * my[i] + c1) * (2 * cxy + c2);
        double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        acc += num / den;
    }
    return acc / mx.size();
}
}  // namespace detail

/// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// unit dynamic range, mean over valid windows; RGB mode averages channels.
template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& target, ChannelMode mode = ChannelMode::RGB) {
    check_same_shape(pred, target, "ssim");
    check(pred.h() >= 11 && pred.w() >= 11, "ssim: spatial dims must be >= 11, got " + pred.shape_str());
    Tensor<T> a = pred, b = target;
    if (mode == ChannelMode::Y) {
        a = to_luma(pred);
        b = to_luma(target);
    }
    const int h = a.h(), w = a.w();
    const size_t plane = static_cast<size_t>(h) * w;
    double acc = 0;
    int n = 0;
    for (int bb = 0; bb < a.b(); ++bb)
        for (int c = 0; c < a.c(); ++c) {
            std::vector<double> x(plane), y(plane);
            for (size_t i = 0; i < plane; ++i) {
                x[i] = static_cast<double>(a.v[(static_cast<size_t>(bb) * a.c() + c) * plane + i]);
                y[i] = static_cast<double>(b.v[(static_cast<size_t>(bb) * a.c() + c) * plane + i]);
            }
            acc += detail::ssim_plane(x, y, h, w);
            ++n;
        }
    return acc / n;
}

struct MetricResult {
    std::string combo;
    double psnr_db = 0;
    double ssim = 0;
    int n_images = 0;
};

/// Mean that is independent of input order: values are sorted first; +inf
/// entries are excluded (degenerate identical pairs) with a warning.
inline double order_free_mean(std::vector<double> vals, bool* had_inf = nullptr) {
    std::vector<double> finite;
    for (double v : vals)
        if (std::isfinite(v))
            finite.push_back(v);
        else if (had_inf)
            *had_inf = true;
    if (finite.empty()) return std::numeric_limits<double>::infinity();
    std::sort(finite.begin(), finite.end());
    return pairwise_sum(finite.data(), finite.size()) / static_cast<double>(finite.size());
}

template <typename T>
Tensor<T> clipped_full_restoration(const Imdnet<T>& model, const SamplePair<T>& pair) {
    NoGradGuard ng;
    auto out = model.forward(pair.pyramid);
    Tensor<T> restored = out.restored[0]->val;
    img::clip01_inplace(restored);
    return restored;
}

/// Per-combo mean PSNR/SSIM on the full-scale output, then the across-combo
/// average row (the final-column convention of the evaluation tables).
template <typename T>
std::vector<MetricResult> evaluate_suite(const Imdnet<T>& model,
                                         const std::map<std::string, std::vector<SamplePair<T>>>& suite,
                                         ChannelMode mode = ChannelMode::RGB) {
    std::vector<MetricResult> rows;
    std::vector<double> combo_psnr, combo_ssim;
    for (const auto& name : degrade::combo_names()) {
        auto it = suite.find(name);
        check(it != suite.end(), "evaluate_suite: suite is missing combo " + name);
        std::vector<double> ps, ss;
        for (const auto& pair : it->second) {
            Tensor<T> restored = clipped_full_restoration(model, pair);
            ps.push_back(psnr(restored, pair.clean, mode));
            ss.push_back(ssim(restored, pair.clean, mode));
        }
        bool had_inf = false;
        MetricResult r;
        r.combo = name;
        r.psnr_db = order_free_mean(ps, &had_inf);
        r.ssim = order_free_mean(ss);
        r.n_images = static_cast<int>(it->second.size());
        if (had_inf) std::cerr << "evaluate_suite: +inf PSNR entries in combo " << name << " excluded from mean\n";
        rows.push_back(r);
        combo_psnr.push_back(r.psnr_db);
        combo_ssim.push_back(r.ssim);
    }
    bool avg_inf = false;
    MetricResult avg;
    avg.combo = "average";
    avg.psnr_db = order_free_mean(combo_psnr, &avg_inf);
    avg.ssim = order_free_mean(combo_ssim);
    avg.n_images = 0;
    for (const auto& r : rows) avg.n_images += r.n_images;
    if (avg_inf) std::cerr << "evaluate_suite: +inf combo rows excluded from the average row\n";
    rows.push_back(avg);
    return rows;
}

inline void write_results_csv(const std::string& path, const std::vector<MetricResult>& rows) {
    std::ofstream os(path);
    check(os.good(), "write_results_csv: cannot open " + path);
    os << "combo,psnr,ssim,n\n";
    for (const auto& r : rows) {
        os << r.combo << ",";
        if (std::isfinite(r.psnr_db))
            os << r.psnr_db;
        else
            os << "inf";
        os << "," << r.ssim << "," << r.n_images << "\n";
    }
}

struct GateHeatmap {
    std::vector<std::string> combos;       // rows
    std::vector<std::string> branch_ids;   // columns: level{l}.block{b}.branch{k}
    std::vector<std::vector<double>> mean_weight;  // [row][col]
};

/// Mean activation weight of every gated branch per degradation combo.
template <typename T>
GateHeatmap export_gate_heatmap(const Imdnet<T>& model,
                                const std::map<std::string, std::vector<SamplePair<T>>>& suite) {
    GateHeatmap hm;
    bool ids_done = false;
    for (const auto& name : degrade::combo_names()) {
        auto it = suite.find(name);
        check(it != suite.end(), "export_gate_heatmap: suite is missing combo " + name);
        std::vector<std::vector<double>> per_branch;  // [col] -> values over images
        for (const auto& pair : it->second) {
            NoGradGuard ng;
            auto out = model.forward(pair.pyramid);
            size_t col = 0;
            for (size_t t = 0; t < out.gate_log.size(); ++t) {
                const Tensor<T>& g = out.gate_log[t];
                for (int k = 0; k < g.c(); ++k, ++col) {
                    if (per_branch.size() <= col) per_branch.resize(col + 1);
                    double mean_b = 0;
                    for (int b = 0; b < g.b(); ++b) mean_b += static_cast<double>(g.v[b * g.c() + k]);
                    per_branch[col].push_back(mean_b / g.b());
                    if (!ids_done)
                        hm.branch_ids.push_back("tab" + std::to_string(t + 1) + ".branch" + std::to_string(k + 1));
                }
            }
            ids_done = true;
        }
        hm.combos.push_back(name);
        std::vector<double> row;
        for (auto& vals : per_branch) row.push_back(order_free_mean(vals));
        hm.mean_weight.push_back(std::move(row));
    }
    return hm;
}

inline void write_heatmap_csv(const std::string& path, const GateHeatmap& hm) {
    std::ofstream os(path);
    check(os.good(), "write_heatmap_csv: cannot open " + path);
    os << "combo";
    for (const auto& id : hm.branch_ids) os << "," << id;
    os << "\n";
    for (size_t r = 0; r < hm.combos.size(); ++r) {
        os << hm.combos[r];
        for (double v : hm.mean_weight[r]) os << "," << v;
        os << "\n";
    }
}

/// Rendered heatmap: one cell per (combo, branch), viridis-like ramp, values
/// mapped from [0,1].
inline void write_heatmap_png(const std::string& path, const GateHeatmap& hm, int cell = 16) {
    const int rows = static_cast<int>(hm.combos.size());
    const int cols = rows ? static_cast<int>(hm.mean_weight[0].size()) : 0;
    check(rows > 0 && cols > 0, "write_heatmap_png: empty heatmap");
    Tensor<double> img(1, 3, rows * cell, cols * cell);
    auto ramp = [](double t, int c) {
        t = std::min(1.0, std::max(0.0, t));
        const double r0 = 0.267, g0 = 0.005, b0 = 0.329;   // dark violet
        const double r1 = 0.993, g1 = 0.906, b1 = 0.144;   // yellow
        double mid_r = 0.128, mid_g = 0.567, mid_b = 0.551;
        double r, g, b;
        if (t < 0.5) {
            double u = t * 2;
            r = r0 + (mid_r - r0) * u;
            g = g0 + (mid_g - g0) * u;
            b = b0 + (mid_b - b0) * u;
        } else {
            double u = (t - 0.5) * 2;
            r = mid_r + (r1 - mid_r) * u;
            g = mid_g + (g1 - mid_g) * u;
            b = mid_b + (b1 - mid_b) * u;
        }
        return c == 0 ? r : (c == 1 ? g : b);
    };
    for (int r = 0; r < rows; ++r)
        for (int cidx = 0; cidx < cols; ++cidx) {
            double v = hm.mean_weight[r][cidx];
            for (int i = 0; i < cell; ++i)
                for (int j = 0; j < cell; ++j)
                    for (int ch = 0; ch < 3; ++ch) img.at(0, ch, r * cell + i, cidx * cell + j) = ramp(v, ch);
        }
    io::write_png(path, img);
}

/// Multinomial linear probe: standardized features, fixed 80/20 split,
/// full-batch gradient descent; returns held-out accuracy.
template <typename T>
double probe_embeddings(const std::vector<std::vector<T>>& vectors, const std::vector<int>& labels,
                        uint64_t split_seed = 17, int iterations = 400, double lr = 0.5) {
    check(vectors.size() == labels.size() && !vectors.empty(), "probe_embeddings: empty or mismatched inputs");
    const int n = static_cast<int>(vectors.size());
    const int d = static_cast<int>(vectors[0].size());
    int k = 0;
    for (int l : labels) {
        check(l >= 0, "probe_embeddings: negative label");
        k = std::max(k, l + 1);
    }
    std::vector<int> per_class(k, 0);
    for (int l : labels) per_class[l]++;
    for (int c = 0; c < k; ++c)
        check(per_class[c] >= 2, "probe_embeddings: class " + std::to_string(c) + " has fewer than 2 samples");

    Eigen::MatrixXd X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = static_cast<double>(vectors[i][j]);
    Eigen::RowVectorXd mu = X.colwise().mean();
    Eigen::RowVectorXd sd = ((X.rowwise() - mu).array().square().colwise().mean()).sqrt();
    for (int j = 0; j < d; ++j)
        if (sd(j) < 1e-12) sd(j) = 1.0;
    X = (X.rowwise() - mu).array().rowwise() / sd.array();

    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < n; ++i) {
        if (Rng::derive(split_seed, i).uniform() < 0.8)
            train_idx.push_back(i);
        else
            test_idx.push_back(i);
    }
    check(!train_idx.empty() && !test_idx.empty(), "probe_embeddings: degenerate split");

    const int nt = static_cast<int>(train_idx.size());
    Eigen::MatrixXd Xt(nt, d + 1);
    Eigen::MatrixXd Yt = Eigen::MatrixXd::Zero(nt, k);
    for (int i = 0; i < nt; ++i) {
        Xt.block(i, 0, 1, d) = X.row(train_idx[i]);
        Xt(i, d) = 1.0;
        Yt(i, labels[train_idx[i]]) = 1.0;
    }
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d + 1, k);
    for (int it = 0; it < iterations; ++it) {
        Eigen::MatrixXd logits = Xt * W;
        Eigen::MatrixXd p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
        Eigen::VectorXd z = p.rowwise().sum();
        p.array().colwise() /= z.array();
        Eigen::MatrixXd grad = Xt.transpose() * (p - Yt) / nt;
        W -= lr * grad;
    }
    int correct = 0;
    for (int i : test_idx) {
        Eigen::RowVectorXd xi(d + 1);
        xi.head(d) = X.row(i);
        xi(d) = 1.0;
        Eigen::Index best;
        (xi * W).maxCoeff(&best);
        if (static_cast<int>(best) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / test_idx.size();
}

}  // namespace metrics
}  // namespace imdnet
