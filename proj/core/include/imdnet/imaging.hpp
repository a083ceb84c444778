#pragma once

#include <cmath>
#include <vector>

#include "imdnet/tensor.hpp"

namespace imdnet {
namespace img {

/// Separable bilinear resize on a (1,C,H,W) image. Downscaling uses a
/// triangle filter widened by the scale ratio (antialiased).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& src, int oh, int ow, bool antialias = true) {
    const int C = src.c(), H = src.h(), W = src.w();
    check(src.b() == 1, "resize_bilinear: single image expected");
    check(oh >= 1 && ow >= 1, "resize_bilinear: bad target size");

    struct Taps {
        std::vector<int> idx;     // flattened [out][tap]
        std::vector<double> wgt;  // same layout
        int support = 0;
    };
    auto build = [&](int n_in, int n_out) {
        Taps t;
        double scale = static_cast<double>(n_in) / n_out;
        double fscale = antialias && scale > 1.0 ? scale : 1.0;
        int support = static_cast<int>(std::ceil(fscale)) + 1;
        t.support = 2 * support;
        t.idx.assign(static_cast<size_t>(n_out) * t.support, 0);
        t.wgt.assign(static_cast<size_t>(n_out) * t.support, 0.0);
        for (int o = 0; o < n_out; ++o) {
            double center = (o + 0.5) * scale - 0.5;
            int lo = static_cast<int>(std::floor(center)) - support + 1;
            double sum = 0.0;
            for (int k = 0; k < t.support; ++k) {
                int i = lo + k;
                double x = std::abs((i - center) / fscale);
                double w = x < 1.0 ? 1.0 - x : 0.0;
                int ic = std::min(std::max(i, 0), n_in - 1);
                t.idx[static_cast<size_t>(o) * t.support + k] = ic;
                t.wgt[static_cast<size_t>(o) * t.support + k] = w;
                sum += w;
            }
            for (int k = 0; k < t.support; ++k) t.wgt[static_cast<size_t>(o) * t.support + k] /= sum;
        }
        return t;
    };
    Taps tr = build(H, oh), tc = build(W, ow);

    Tensor<T> tmp(1, C, oh, W);
    for (int c = 0; c < C; ++c)
        for (int o = 0; o < oh; ++o) {
            T* dst = tmp.data() + (static_cast<size_t>(c) * oh + o) * W;
            for (int j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int k = 0; k < tr.support; ++k)
                    acc += tr.wgt[static_cast<size_t>(o) * tr.support + k] *
                           static_cast<double>(src.at(0, c, tr.idx[static_cast<size_t>(o) * tr.support + k], j));
                dst[j] = static_cast<T>(acc);
            }
        }
    Tensor<T> out(1, C, oh, ow);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < oh; ++i)
            for (int o = 0; o < ow; ++o) {
                double acc = 0.0;
                for (int k = 0; k < tc.support; ++k)
                    acc += tc.wgt[static_cast<size_t>(o) * tc.support + k] *
                           static_cast<double>(tmp.at(0, c, i, tc.idx[static_cast<size_t>(o) * tc.support + k]));
                out.at(0, c, i, o) = static_cast<T>(acc);
            }
    return out;
}

/// 4-level pyramid: [image, 1/2, 1/4, 1/8], ceil dims, antialiased.
template <typename T>
std::vector<Tensor<T>> build_pyramid(const Tensor<T>& image, int levels = 4) {
    std::vector<Tensor<T>> pyr;
    pyr.push_back(image);
    for (int k = 1; k < levels; ++k) {
        int oh = (image.h() + (1 << k) - 1) >> k;
        int ow = (image.w() + (1 << k) - 1) >> k;
        pyr.push_back(resize_bilinear(image, oh, ow, true));
    }
    return pyr;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& src, int top, int left, int h, int w) {
    check(top >= 0 && left >= 0 && top + h <= src.h() && left + w <= src.w(), "crop: out of bounds");
    Tensor<T> out(src.b(), src.c(), h, w);
    for (int b = 0; b < src.b(); ++b)
        for (int c = 0; c < src.c(); ++c)
            for (int i = 0; i < h; ++i)
                std::memcpy(out.data() + out.idx(b, c, i, 0), src.data() + src.idx(b, c, top + i, left),
                            w * sizeof(T));
    return out;
}

template <typename T>
void flip_h_inplace(Tensor<T>& t) {
    for (int b = 0; b < t.b(); ++b)
        for (int c = 0; c < t.c(); ++c)
            for (int i = 0; i < t.h(); ++i)
                for (int j = 0; j < t.w() / 2; ++j) std::swap(t.at(b, c, i, j), t.at(b, c, i, t.w() - 1 - j));
}

template <typename T>
void flip_v_inplace(Tensor<T>& t) {
    for (int b = 0; b < t.b(); ++b)
        for (int c = 0; c < t.c(); ++c)
            for (int i = 0; i < t.h() / 2; ++i)
                for (int j = 0; j < t.w(); ++j) std::swap(t.at(b, c, i, j), t.at(b, c, t.h() - 1 - i, j));
}

template <typename T>
void clip01_inplace(Tensor<T>& t) {
    for (auto& e : t.v) e = std::min(T(1), std::max(T(0), e));
}

/// Separable Gaussian blur with reflect boundary; radius covers 3 sigma.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& src, double sigma) {
    if (sigma <= 0.0) return src;
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& e : k) e /= sum;
    auto reflect = [](int i, int n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
        return std::min(std::max(i, 0), n - 1);
    };
    const int C = src.c(), H = src.h(), W = src.w();
    Tensor<T> tmp(src.shape), out(src.shape);
    for (int b = 0; b < src.b(); ++b)
        for (int c = 0; c < C; ++c) {
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double acc = 0.0;
                    for (int d = -radius; d <= radius; ++d) acc += k[d + radius] * src.at(b, c, i, reflect(j + d, W));
                    tmp.at(b, c, i, j) = static_cast<T>(acc);
                }
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double acc = 0.0;
                    for (int d = -radius; d <= radius; ++d) acc += k[d + radius] * tmp.at(b, c, reflect(i + d, H), j);
                    out.at(b, c, i, j) = static_cast<T>(acc);
                }
        }
    return out;
}

}  // namespace img
}  // namespace imdnet
