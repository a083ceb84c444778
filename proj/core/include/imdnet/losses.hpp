#pragma once

#include <cstring>
#include <map>

#include "imdnet/fft.hpp"
#include "imdnet/network.hpp"

namespace imdnet {

struct LossWeights {
    double lambda_f = 0.1;   // frequency
    double delta_e = 0.05;   // edge
    double gamma_d = 0.001;  // decoupling
    double epsilon = 0.001;  // Charbonnier constant

    void validate() const {
        check(lambda_f >= 0 && delta_e >= 0 && gamma_d >= 0 && epsilon >= 0, "LossWeights: weights must be >= 0");
    }
};

struct LossReport {
    double total = 0;
    std::map<std::string, double> per_term;  // charbonnier, edge, frequency, decouple (unweighted sums)
    std::array<double, 4> per_scale{};       // weighted subtotals; middle-level decouple folds into scale 4
};

/// mean(sqrt((pred-target)^2 + eps^2)); exactly eps at pred == target for
/// power-of-two element counts (pairwise reduction).
template <typename T>
Var<T> charbonnier(const Var<T>& pred, const Var<T>& target, T eps) {
    check_same_shape(pred->val, target->val, "charbonnier");
    Var<T> d = ops::sub(pred, target);
    return ops::mean_all(ops::sqrt_op(ops::add_scalar(ops::mul(d, d), eps * eps)));
}

/// Charbonnier distance between 4-neighbour Laplacian responses
/// (reflect padding, per channel).
template <typename T>
Var<T> laplacian(const Var<T>& x) {
    check(x->val.h() >= 3 && x->val.w() >= 3, "laplacian: spatial dims must be >= 3, got " + x->val.shape_str());
    const int C = x->val.c();
    Tensor<T> st(C, 1, 3, 3);
    for (int c = 0; c < C; ++c) {
        T* k = st.data() + static_cast<size_t>(c) * 9;
        k[1] = T(1);
        k[3] = T(1);
        k[4] = T(-4);
        k[5] = T(1);
        k[7] = T(1);
    }
    Var<T> stencil = make_var<T>(std::move(st), false);
    return ops::conv2d_valid(ops::pad2d(x, 1, ops::Pad::Reflect), stencil, Var<T>(), 1, C);
}

template <typename T>
Var<T> edge_loss(const Var<T>& pred, const Var<T>& target, T eps) {
    check_same_shape(pred->val, target->val, "edge_loss");
    return charbonnier(laplacian(pred), laplacian(target), eps);
}

/// Mean L1 distance between the 2-D DFTs of pred and target, real and
/// imaginary parts compared as two real components per frequency bin.
template <typename T>
Var<T> frequency_loss(const Var<T>& pred, const Var<T>& target) {
    check_same_shape(pred->val, target->val, "frequency_loss");
    Var<T> d = ops::sub(pred, target);
    const Tensor<T>& D = d->val;
    const int B = D.b(), C = D.c(), H = D.h(), W = D.w();
    const size_t hw = static_cast<size_t>(H) * W;
    const T scale = T(1) / static_cast<T>(D.numel());
    auto& plan = fft::Dft2<T>::get(H, W);
    std::vector<std::complex<T>> buf(hw), spec(hw);
    // keep per-slice spectra signs for the adjoint
    auto signs = std::make_shared<std::vector<std::complex<T>>>(static_cast<size_t>(B) * C * hw);
    std::vector<T> mags(hw);
    T acc = T(0);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* p = D.data() + (static_cast<size_t>(b) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) buf[i] = {p[i], T(0)};
            plan.forward(buf.data(), spec.data());
            std::complex<T>* sg = signs->data() + (static_cast<size_t>(b) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) {
                T re = spec[i].real(), im = spec[i].imag();
                mags[i] = std::abs(re) + std::abs(im);
                sg[i] = {re > T(0) ? T(1) : (re < T(0) ? T(-1) : T(0)),
                         im > T(0) ? T(1) : (im < T(0) ? T(-1) : T(0))};
            }
            acc += pairwise_sum(mags.data(), hw);
        }
    Tensor<T> out = Tensor<T>::scalar(acc * scale);
    return make_op<T>(std::move(out), {d}, [d, signs, B, C, H, W, hw, scale](Node<T>& n) {
        if (!d->requires_grad) return;
        auto& plan = fft::Dft2<T>::get(H, W);
        std::vector<std::complex<T>> z(hw);
        Tensor<T>& g = d->g();
        T up = n.grad.v[0] * scale;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const std::complex<T>* sg = signs->data() + (static_cast<size_t>(b) * C + c) * hw;
                plan.backward(sg, z.data());
                T* gp = g.data() + (static_cast<size_t>(b) * C + c) * hw;
                for (size_t i = 0; i < hw; ++i) gp[i] += up * z[i].real();
            }
    });
}

/// Per-sample cosine similarity between flattened CF and DI, averaged over
/// the batch. kappa stabilizes the all-zero case to 0.
template <typename T>
Var<T> decouple_loss(const Var<T>& cf, const Var<T>& di, T kappa = T(1e-8)) {
    check_same_shape(cf->val, di->val, "decouple_loss");
    Var<T> dot = ops::dot_per_sample(cf, di);
    Var<T> na = ops::sqrt_op(ops::dot_per_sample(cf, cf));
    Var<T> nb = ops::sqrt_op(ops::dot_per_sample(di, di));
    Var<T> denom = ops::add_scalar(ops::mul(na, nb), kappa);
    return ops::mean_all(ops::div(dot, denom));
}

template <typename T>
struct TotalLoss {
    Var<T> total;
    LossReport report;
};

/// Eq-style multi-scale objective: sum over the 4 scales of
/// Lc + delta*Le + lambda*Lf, plus gamma times the decoupling cosine summed
/// over every emitting encoder level (4 levels + middle).
template <typename T>
TotalLoss<T> total_loss(const NetworkOutput<T>& out, const std::vector<Var<T>>& targets, const LossWeights& w) {
    check(out.restored.size() == 4, "total_loss: expected 4 output scales, got " + std::to_string(out.restored.size()));
    check(targets.size() == 4, "total_loss: expected 4 target scales, got " + std::to_string(targets.size()));
    w.validate();
    const T eps = static_cast<T>(w.epsilon);

    TotalLoss<T> r;
    r.report.per_term = {{"charbonnier", 0.0}, {"edge", 0.0}, {"frequency", 0.0}, {"decouple", 0.0}};
    std::array<Var<T>, 4> scale_sub;
    for (int i = 0; i < 4; ++i) {
        Var<T> lc = charbonnier(out.restored[i], targets[i], eps);
        Var<T> le = edge_loss(out.restored[i], targets[i], eps);
        Var<T> lf = frequency_loss(out.restored[i], targets[i]);
        r.report.per_term["charbonnier"] += static_cast<double>(lc->val.v[0]);
        r.report.per_term["edge"] += static_cast<double>(le->val.v[0]);
        r.report.per_term["frequency"] += static_cast<double>(lf->val.v[0]);
        scale_sub[i] = ops::add(lc, ops::add(ops::mul_scalar(le, static_cast<T>(w.delta_e)),
                                             ops::mul_scalar(lf, static_cast<T>(w.lambda_f))));
    }
    for (size_t l = 0; l < out.level_outputs.size(); ++l) {
        const auto& eo = out.level_outputs[l];
        if (!eo.di || !eo.cf) continue;
        Var<T> ld = decouple_loss(eo.cf, eo.di);
        r.report.per_term["decouple"] += static_cast<double>(ld->val.v[0]);
        int bucket = static_cast<int>(std::min<size_t>(l, 3));  // middle folds into the deepest scale
        scale_sub[bucket] = ops::add(scale_sub[bucket], ops::mul_scalar(ld, static_cast<T>(w.gamma_d)));
    }
    Var<T> total = scale_sub[0];
    for (int i = 1; i < 4; ++i) total = ops::add(total, scale_sub[i]);
    r.total = total;
    r.report.total = static_cast<double>(total->val.v[0]);
    for (int i = 0; i < 4; ++i) r.report.per_scale[i] = static_cast<double>(scale_sub[i]->val.v[0]);
    return r;
}

}  // namespace imdnet
