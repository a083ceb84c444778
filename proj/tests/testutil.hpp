#pragma once

#include <functional>

#include "imdnet/autograd.hpp"
#include "imdnet/rng.hpp"

namespace imdnet {
namespace testutil {

template <typename T>
Tensor<T> random_tensor(int b, int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(b, c, h, w);
    for (auto& e : t.v) e = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
Tensor<T> random_normal(int b, int c, int h, int w, Rng& rng, double std = 1.0) {
    Tensor<T> t(b, c, h, w);
    for (auto& e : t.v) e = static_cast<T>(rng.normal(0.0, std));
    return t;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

/// Central finite-difference check of d(scalar f)/d(input) at float64.
/// Returns max|analytic - numeric| / (max|numeric| + floor).
inline double fd_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x0,
                       double h = 1e-3) {
    Var<double> x = make_var<double>(x0, true);
    Var<double> y = f(x);
    check(y->val.numel() == 1, "fd_check: f must return a scalar");
    backward(y);
    Tensor<double> analytic = x->grad.empty() ? Tensor<double>(x0.shape) : x->grad;

    Tensor<double> numeric(x0.shape);
    Tensor<double> xp = x0;
    NoGradGuard ng;
    for (size_t i = 0; i < x0.numel(); ++i) {
        double orig = xp.v[i];
        xp.v[i] = orig + h;
        double fp = f(make_var<double>(xp, false))->val.v[0];
        xp.v[i] = orig - h;
        double fm = f(make_var<double>(xp, false))->val.v[0];
        xp.v[i] = orig;
        numeric.v[i] = (fp - fm) / (2 * h);
    }
    double max_num = 0, max_diff = 0;
    for (size_t i = 0; i < x0.numel(); ++i) {
        max_num = std::max(max_num, std::abs(numeric.v[i]));
        max_diff = std::max(max_diff, std::abs(numeric.v[i] - analytic.v[i]));
    }
    return max_diff / (max_num + 1e-10);
}

}  // namespace testutil
}  // namespace imdnet
