#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstring>

#include "imdnet/autograd.hpp"

namespace imdnet {
namespace ops {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "add");
    Tensor<T> out = a->val;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] += b->val.v[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) accumulate(a->g(), n.grad);
        if (b->requires_grad) accumulate(b->g(), n.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "sub");
    Tensor<T> out = a->val;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] -= b->val.v[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) accumulate(a->g(), n.grad);
        if (b->requires_grad) {
            Tensor<T>& gb = b->g();
            for (size_t i = 0; i < gb.numel(); ++i) gb.v[i] -= n.grad.v[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "mul");
    Tensor<T> out = a->val;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] *= b->val.v[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) {
            Tensor<T>& ga = a->g();
            for (size_t i = 0; i < ga.numel(); ++i) ga.v[i] += n.grad.v[i] * b->val.v[i];
        }
        if (b->requires_grad) {
            Tensor<T>& gb = b->g();
            for (size_t i = 0; i < gb.numel(); ++i) gb.v[i] += n.grad.v[i] * a->val.v[i];
        }
    });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "div");
    Tensor<T> out = a->val;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] /= b->val.v[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->requires_grad) {
            Tensor<T>& ga = a->g();
            for (size_t i = 0; i < ga.numel(); ++i) ga.v[i] += n.grad.v[i] / b->val.v[i];
        }
        if (b->requires_grad) {
            Tensor<T>& gb = b->g();
            for (size_t i = 0; i < gb.numel(); ++i)
                gb.v[i] -= n.grad.v[i] * a->val.v[i] / (b->val.v[i] * b->val.v[i]);
        }
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
    Tensor<T> out = x->val;
    for (auto& e : out.v) e += s;
    return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
        if (x->requires_grad) accumulate(x->g(), n.grad);
    });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, T s) {
    Tensor<T> out = x->val;
    for (auto& e : out.v) e *= s;
    return make_op<T>(std::move(out), {x}, [x, s](Node<T>& n) {
        if (x->requires_grad) {
            Tensor<T>& g = x->g();
            for (size_t i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i] * s;
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out = x->val;
    for (auto& e : out.v) e = T(1) / (T(1) + std::exp(-e));
    Tensor<T> saved = out;
    return make_op<T>(std::move(out), {x}, [x, saved](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        for (size_t i = 0; i < g.numel(); ++i) {
            T y = saved.v[i];
            g.v[i] += n.grad.v[i] * y * (T(1) - y);
        }
    });
}

template <typename T>
Var<T> sqrt_op(const Var<T>& x) {
    Tensor<T> out = x->val;
    for (auto& e : out.v) e = std::sqrt(e);
    Tensor<T> saved = out;
    return make_op<T>(std::move(out), {x}, [x, saved](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        const T tiny = std::numeric_limits<T>::min();
        for (size_t i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i] * T(0.5) / std::max(saved.v[i], tiny);
    });
}

// ---------------------------------------------------------------------------
// broadcasting: v has shape (B,C,1,1) or (B,1,1,1); x is (B,C,H,W)
// ---------------------------------------------------------------------------

template <typename T>
void check_bc(const Tensor<T>& x, const Tensor<T>& v, const char* where) {
    check(v.h() == 1 && v.w() == 1 && v.b() == x.b() && (v.c() == x.c() || v.c() == 1),
          std::string(where) + ": bad broadcast shape " + v.shape_str() + " for " + x.shape_str());
}

template <typename T>
Var<T> mul_bc(const Var<T>& x, const Var<T>& v) {
    check_bc(x->val, v->val, "mul_bc");
    const int B = x->val.b(), C = x->val.c(), HW = x->val.h() * x->val.w();
    const bool per_c = v->val.c() != 1;
    Tensor<T> out = x->val;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            T s = v->val.v[per_c ? b * C + c : b];
            T* p = out.data() + (static_cast<size_t>(b) * C + c) * HW;
            for (int i = 0; i < HW; ++i) p[i] *= s;
        }
    return make_op<T>(std::move(out), {x, v}, [x, v, B, C, HW, per_c](Node<T>& n) {
        if (x->requires_grad) {
            Tensor<T>& g = x->g();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    T s = v->val.v[per_c ? b * C + c : b];
                    size_t off = (static_cast<size_t>(b) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) g.v[off + i] += n.grad.v[off + i] * s;
                }
        }
        if (v->requires_grad) {
            Tensor<T>& g = v->g();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    size_t off = (static_cast<size_t>(b) * C + c) * HW;
                    T acc = T(0);
                    for (int i = 0; i < HW; ++i) acc += n.grad.v[off + i] * x->val.v[off + i];
                    g.v[per_c ? b * C + c : b] += acc;
                }
        }
    });
}

template <typename T>
Var<T> add_bc(const Var<T>& x, const Var<T>& v) {
    check_bc(x->val, v->val, "add_bc");
    const int B = x->val.b(), C = x->val.c(), HW = x->val.h() * x->val.w();
    const bool per_c = v->val.c() != 1;
    Tensor<T> out = x->val;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            T s = v->val.v[per_c ? b * C + c : b];
            T* p = out.data() + (static_cast<size_t>(b) * C + c) * HW;
            for (int i = 0; i < HW; ++i) p[i] += s;
        }
    return make_op<T>(std::move(out), {x, v}, [x, v, B, C, HW, per_c](Node<T>& n) {
        if (x->requires_grad) accumulate(x->g(), n.grad);
        if (v->requires_grad) {
            Tensor<T>& g = v->g();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    size_t off = (static_cast<size_t>(b) * C + c) * HW;
                    T acc = T(0);
                    for (int i = 0; i < HW; ++i) acc += n.grad.v[off + i];
                    g.v[per_c ? b * C + c : b] += acc;
                }
        }
    });
}

// ---------------------------------------------------------------------------
// channel structure
// ---------------------------------------------------------------------------

template <typename T>
Var<T> concat_c(const Var<T>& a, const Var<T>& b) {
    const Tensor<T>&A = a->val, &B = b->val;
    check(A.b() == B.b() && A.h() == B.h() && A.w() == B.w(), "concat_c: spatial/batch mismatch");
    Tensor<T> out(A.b(), A.c() + B.c(), A.h(), A.w());
    const size_t plane = static_cast<size_t>(A.h()) * A.w();
    for (int bb = 0; bb < A.b(); ++bb) {
        std::memcpy(out.data() + out.idx(bb, 0, 0, 0), A.data() + A.idx(bb, 0, 0, 0), A.c() * plane * sizeof(T));
        std::memcpy(out.data() + out.idx(bb, A.c(), 0, 0), B.data() + B.idx(bb, 0, 0, 0), B.c() * plane * sizeof(T));
    }
    int ca = A.c();
    return make_op<T>(std::move(out), {a, b}, [a, b, ca, plane](Node<T>& n) {
        int B_ = n.val.b(), cb = n.val.c() - ca;
        if (a->requires_grad) {
            Tensor<T>& g = a->g();
            for (int bb = 0; bb < B_; ++bb)
                for (size_t i = 0; i < ca * plane; ++i) g.v[bb * ca * plane + i] += n.grad.v[n.grad.idx(bb, 0, 0, 0) + i];
        }
        if (b->requires_grad) {
            Tensor<T>& g = b->g();
            for (int bb = 0; bb < B_; ++bb)
                for (size_t i = 0; i < cb * plane; ++i)
                    g.v[bb * cb * plane + i] += n.grad.v[n.grad.idx(bb, ca, 0, 0) + i];
        }
    });
}

template <typename T>
Var<T> slice_c(const Var<T>& x, int c0, int len) {
    const Tensor<T>& X = x->val;
    check(c0 >= 0 && len > 0 && c0 + len <= X.c(), "slice_c: bad channel range");
    Tensor<T> out(X.b(), len, X.h(), X.w());
    const size_t plane = static_cast<size_t>(X.h()) * X.w();
    for (int bb = 0; bb < X.b(); ++bb)
        std::memcpy(out.data() + out.idx(bb, 0, 0, 0), X.data() + X.idx(bb, c0, 0, 0), len * plane * sizeof(T));
    return make_op<T>(std::move(out), {x}, [x, c0, len, plane](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        for (int bb = 0; bb < n.val.b(); ++bb)
            for (size_t i = 0; i < len * plane; ++i)
                g.v[g.idx(bb, c0, 0, 0) + i] += n.grad.v[static_cast<size_t>(bb) * len * plane + i];
    });
}

/// SimpleGate: split channels in half, multiply the halves.
template <typename T>
Var<T> simple_gate(const Var<T>& x) {
    check(x->val.c() % 2 == 0, "simple_gate: channel count must be even, got " + x->val.shape_str());
    int half = x->val.c() / 2;
    return mul(slice_c(x, 0, half), slice_c(x, half, half));
}

// ---------------------------------------------------------------------------
// reductions and pooling
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    Tensor<T> out = Tensor<T>::scalar(sum_of(x->val));
    return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        T s = n.grad.v[0];
        for (auto& e : g.v) e += s;
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    T inv = T(1) / static_cast<T>(x->val.numel());
    Tensor<T> out = Tensor<T>::scalar(sum_of(x->val) * inv);
    return make_op<T>(std::move(out), {x}, [x, inv](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        T s = n.grad.v[0] * inv;
        for (auto& e : g.v) e += s;
    });
}

/// Global average pooling over the spatial dims -> (B,C,1,1).
template <typename T>
Var<T> gap(const Var<T>& x) {
    const Tensor<T>& X = x->val;
    const int B = X.b(), C = X.c(), HW = X.h() * X.w();
    Tensor<T> out(B, C, 1, 1);
    const T inv = T(1) / static_cast<T>(HW);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            out.v[b * C + c] = pairwise_sum(X.data() + (static_cast<size_t>(b) * C + c) * HW, HW) * inv;
    return make_op<T>(std::move(out), {x}, [x, B, C, HW, inv](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                T s = n.grad.v[b * C + c] * inv;
                T* p = g.data() + (static_cast<size_t>(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) p[i] += s;
            }
    });
}

/// Per-channel population standard deviation over the spatial dims.
/// Exactly zero for 1x1 inputs; the backward pass guards the std==0 pole.
template <typename T>
Var<T> std_spatial(const Var<T>& x) {
    const Tensor<T>& X = x->val;
    const int B = X.b(), C = X.c(), HW = X.h() * X.w();
    Tensor<T> out(B, C, 1, 1);
    Tensor<T> means(B, C, 1, 1);
    const T inv = T(1) / static_cast<T>(HW);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* p = X.data() + (static_cast<size_t>(b) * C + c) * HW;
            T mn = p[0], mx = p[0];
            for (int i = 1; i < HW; ++i) {
                mn = std::min(mn, p[i]);
                mx = std::max(mx, p[i]);
            }
            if (mn == mx) {  // constant channel: std is exactly zero
                means.v[b * C + c] = mn;
                out.v[b * C + c] = T(0);
                continue;
            }
            T m = pairwise_sum(p, HW) * inv;
            T var = T(0);
            for (int i = 0; i < HW; ++i) {
                T d = p[i] - m;
                var += d * d;
            }
            var *= inv;
            means.v[b * C + c] = m;
            out.v[b * C + c] = std::sqrt(var);
        }
    Tensor<T> saved_std = out;
    return make_op<T>(std::move(out), {x}, [x, means, saved_std, B, C, HW, inv](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                T sd = saved_std.v[b * C + c];
                T denom = std::max(sd, T(1e-12));
                T scale = n.grad.v[b * C + c] * inv / denom;
                T m = means.v[b * C + c];
                const T* p = x->val.data() + (static_cast<size_t>(b) * C + c) * HW;
                T* gp = g.data() + (static_cast<size_t>(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) gp[i] += scale * (p[i] - m);
            }
    });
}

/// Per-sample dot product over all of C,H,W -> (B,1,1,1).
template <typename T>
Var<T> dot_per_sample(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a->val, b->val, "dot_per_sample");
    const int B = a->val.b();
    const size_t stride = a->val.numel() / B;
    Tensor<T> out(B, 1, 1, 1);
    std::vector<T> tmp(stride);
    for (int bb = 0; bb < B; ++bb) {
        const T* pa = a->val.data() + bb * stride;
        const T* pb = b->val.data() + bb * stride;
        for (size_t i = 0; i < stride; ++i) tmp[i] = pa[i] * pb[i];
        out.v[bb] = pairwise_sum(tmp.data(), stride);
    }
    return make_op<T>(std::move(out), {a, b}, [a, b, B, stride](Node<T>& n) {
        for (int bb = 0; bb < B; ++bb) {
            T s = n.grad.v[bb];
            if (a->requires_grad) {
                T* g = a->g().data() + bb * stride;
                const T* pb = b->val.data() + bb * stride;
                for (size_t i = 0; i < stride; ++i) g[i] += s * pb[i];
            }
            if (b->requires_grad) {
                T* g = b->g().data() + bb * stride;
                const T* pa = a->val.data() + bb * stride;
                for (size_t i = 0; i < stride; ++i) g[i] += s * pa[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// LayerNorm across the channel dim at every (b,h,w) location, with
/// per-channel affine parameters (the NAF-family "LayerNorm2d").
template <typename T>
Var<T> layer_norm_chan(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-6)) {
    const Tensor<T>& X = x->val;
    const int B = X.b(), C = X.c(), H = X.h(), W = X.w();
    check(gamma->val.c() == C && beta->val.c() == C, "layer_norm_chan: affine shape");
    const int HW = H * W;
    Tensor<T> out(X.shape);
    Tensor<T> xhat(X.shape);
    Tensor<T> rstd(B, 1, H, W);
    const T invC = T(1) / static_cast<T>(C);
    for (int b = 0; b < B; ++b) {
        const T* px = X.data() + static_cast<size_t>(b) * C * HW;
        for (int i = 0; i < HW; ++i) {
            T m = T(0);
            for (int c = 0; c < C; ++c) m += px[c * HW + i];
            m *= invC;
            T var = T(0);
            for (int c = 0; c < C; ++c) {
                T d = px[c * HW + i] - m;
                var += d * d;
            }
            var *= invC;
            T rs = T(1) / std::sqrt(var + eps);
            rstd.v[static_cast<size_t>(b) * HW + i] = rs;
            for (int c = 0; c < C; ++c) {
                T xh = (px[c * HW + i] - m) * rs;
                xhat.v[(static_cast<size_t>(b) * C + c) * HW + i] = xh;
                out.v[(static_cast<size_t>(b) * C + c) * HW + i] = xh * gamma->val.v[c] + beta->val.v[c];
            }
        }
    }
    return make_op<T>(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, xhat, rstd, B, C, HW, invC](Node<T>& n) {
                          if (gamma->requires_grad) {
                              Tensor<T>& g = gamma->g();
                              for (int b = 0; b < B; ++b)
                                  for (int c = 0; c < C; ++c) {
                                      size_t off = (static_cast<size_t>(b) * C + c) * HW;
                                      T acc = T(0);
                                      for (int i = 0; i < HW; ++i) acc += n.grad.v[off + i] * xhat.v[off + i];
                                      g.v[c] += acc;
                                  }
                          }
                          if (beta->requires_grad) {
                              Tensor<T>& g = beta->g();
                              for (int b = 0; b < B; ++b)
                                  for (int c = 0; c < C; ++c) {
                                      size_t off = (static_cast<size_t>(b) * C + c) * HW;
                                      T acc = T(0);
                                      for (int i = 0; i < HW; ++i) acc += n.grad.v[off + i];
                                      g.v[c] += acc;
                                  }
                          }
                          if (x->requires_grad) {
                              Tensor<T>& g = x->g();
                              for (int b = 0; b < B; ++b)
                                  for (int i = 0; i < HW; ++i) {
                                      T rs = rstd.v[static_cast<size_t>(b) * HW + i];
                                      T sum_dy = T(0), sum_dy_xh = T(0);
                                      for (int c = 0; c < C; ++c) {
                                          size_t off = (static_cast<size_t>(b) * C + c) * HW + i;
                                          T dy = n.grad.v[off] * gamma->val.v[c];
                                          sum_dy += dy;
                                          sum_dy_xh += dy * xhat.v[off];
                                      }
                                      for (int c = 0; c < C; ++c) {
                                          size_t off = (static_cast<size_t>(b) * C + c) * HW + i;
                                          T dy = n.grad.v[off] * gamma->val.v[c];
                                          g.v[off] += rs * (dy - invC * sum_dy - xhat.v[off] * invC * sum_dy_xh);
                                      }
                                  }
                          }
                      });
}

/// Softmax jointly over the spatial dims of each (b,c) slice; used to
/// normalize predicted filter taps to unit DC gain.
template <typename T>
Var<T> softmax_hw(const Var<T>& x) {
    const Tensor<T>& X = x->val;
    const int BC = X.b() * X.c(), HW = X.h() * X.w();
    Tensor<T> out(X.shape);
    for (int bc = 0; bc < BC; ++bc) {
        const T* p = X.data() + static_cast<size_t>(bc) * HW;
        T* q = out.data() + static_cast<size_t>(bc) * HW;
        T mx = p[0];
        for (int i = 1; i < HW; ++i) mx = std::max(mx, p[i]);
        T Z = T(0);
        for (int i = 0; i < HW; ++i) {
            q[i] = std::exp(p[i] - mx);
            Z += q[i];
        }
        T invZ = T(1) / Z;
        for (int i = 0; i < HW; ++i) q[i] *= invZ;
    }
    Tensor<T> saved = out;
    return make_op<T>(std::move(out), {x}, [x, saved, BC, HW](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        for (int bc = 0; bc < BC; ++bc) {
            const T* y = saved.data() + static_cast<size_t>(bc) * HW;
            const T* dy = n.grad.data() + static_cast<size_t>(bc) * HW;
            T dot = T(0);
            for (int i = 0; i < HW; ++i) dot += y[i] * dy[i];
            T* gp = g.data() + static_cast<size_t>(bc) * HW;
            for (int i = 0; i < HW; ++i) gp[i] += y[i] * (dy[i] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// padding
// ---------------------------------------------------------------------------

enum class Pad { Zero, Reflect };

template <typename T>
Var<T> pad2d(const Var<T>& x, int p, Pad mode) {
    if (p == 0) return x;
    const Tensor<T>& X = x->val;
    const int B = X.b(), C = X.c(), H = X.h(), W = X.w();
    if (mode == Pad::Reflect) check(H > p && W > p, "pad2d: reflect padding needs dims > pad");
    Tensor<T> out(B, C, H + 2 * p, W + 2 * p);
    auto src_index = [&](int i, int n) {
        int s = i - p;
        if (mode == Pad::Reflect) {
            if (s < 0) s = -s;
            if (s >= n) s = 2 * n - 2 - s;
            return s;
        }
        return (s < 0 || s >= n) ? -1 : s;
    };
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H + 2 * p; ++i) {
                int si = src_index(i, H);
                for (int j = 0; j < W + 2 * p; ++j) {
                    int sj = src_index(j, W);
                    out.at(b, c, i, j) = (si < 0 || sj < 0) ? T(0) : X.at(b, c, si, sj);
                }
            }
    return make_op<T>(std::move(out), {x}, [x, p, mode, H, W](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        const int B = g.b(), C = g.c();
        auto src_index = [&](int i, int nn) {
            int s = i - p;
            if (mode == Pad::Reflect) {
                if (s < 0) s = -s;
                if (s >= nn) s = 2 * nn - 2 - s;
                return s;
            }
            return (s < 0 || s >= nn) ? -1 : s;
        };
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < H + 2 * p; ++i) {
                    int si = src_index(i, H);
                    if (si < 0) continue;
                    for (int j = 0; j < W + 2 * p; ++j) {
                        int sj = src_index(j, W);
                        if (sj < 0) continue;
                        g.at(b, c, si, sj) += n.grad.at(b, c, i, j);
                    }
                }
    });
}

// ---------------------------------------------------------------------------
// convolution (valid, optionally grouped/strided) via im2col + Eigen GEMM
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const Tensor<T>& X, int b, int k, int stride, Tensor<T>& col, int Ho, int Wo) {
    const int C = X.c(), H = X.h(), W = X.w();
    // col is (C*k*k) x (Ho*Wo), rows channel-major then tap-major
    T* out = col.data();
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const T* src = X.data() + ((static_cast<size_t>(b) * C + c) * H + ki) * W + kj;
                for (int ho = 0; ho < Ho; ++ho) {
                    const T* row = src + static_cast<size_t>(ho) * stride * W;
                    for (int wo = 0; wo < Wo; ++wo) *out++ = row[wo * stride];
                }
            }
}

template <typename T>
void col2im_add(const Tensor<T>& col, int b, int k, int stride, Tensor<T>& X, int Ho, int Wo) {
    const int C = X.c(), H = X.h(), W = X.w();
    const T* in = col.data();
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                T* dst = X.data() + ((static_cast<size_t>(b) * C + c) * H + ki) * W + kj;
                for (int ho = 0; ho < Ho; ++ho) {
                    T* row = dst + static_cast<size_t>(ho) * stride * W;
                    for (int wo = 0; wo < Wo; ++wo) row[wo * stride] += *in++;
                }
            }
}

/// Valid convolution of a (pre-padded) input. weight is (Cout, Cin/groups, k, k),
/// bias (1, Cout, 1, 1) or null. Pure depthwise (groups == Cin == Cout) takes a
/// direct loop; everything else goes through im2col + GEMM.
template <typename T>
Var<T> conv2d_valid(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride = 1, int groups = 1) {
    const Tensor<T>& X = x->val;
    const Tensor<T>& Wt = w->val;
    const int B = X.b(), Cin = X.c(), H = X.h(), Wd = X.w();
    const int Cout = Wt.b(), Cin_g = Wt.c(), k = Wt.h();
    check(Wt.h() == Wt.w(), "conv2d: square kernels only");
    check(Cin % groups == 0 && Cout % groups == 0, "conv2d: groups must divide channels");
    check(Cin / groups == Cin_g, "conv2d: weight channel mismatch");
    check(H >= k && Wd >= k, "conv2d: spatial dims smaller than kernel " + X.shape_str());
    if (bias) check(bias->val.c() == Cout, "conv2d: bias shape");
    const int Ho = (H - k) / stride + 1, Wo = (Wd - k) / stride + 1;
    const int Cout_g = Cout / groups;
    Tensor<T> out(B, Cout, Ho, Wo);

    const bool depthwise = (groups == Cin && Cout == Cin && Cin_g == 1);
    const bool pointwise = (k == 1 && stride == 1 && groups == 1);

    if (depthwise) {
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < Cin; ++c) {
                const T* src = X.data() + (static_cast<size_t>(b) * Cin + c) * H * Wd;
                const T* kk = Wt.data() + static_cast<size_t>(c) * k * k;
                T bv = bias ? bias->val.v[c] : T(0);
                T* dst = out.data() + (static_cast<size_t>(b) * Cout + c) * Ho * Wo;
                for (int ho = 0; ho < Ho; ++ho)
                    for (int wo = 0; wo < Wo; ++wo) {
                        T acc = bv;
                        const T* base = src + (ho * stride) * Wd + wo * stride;
                        for (int ki = 0; ki < k; ++ki)
                            for (int kj = 0; kj < k; ++kj) acc += kk[ki * k + kj] * base[ki * Wd + kj];
                        dst[ho * Wo + wo] = acc;
                    }
            }
    } else if (pointwise) {
        CMapRM<T> Wm(Wt.data(), Cout, Cin);
        for (int b = 0; b < B; ++b) {
            CMapRM<T> Xm(X.data() + static_cast<size_t>(b) * Cin * H * Wd, Cin, H * Wd);
            MapRM<T> Om(out.data() + static_cast<size_t>(b) * Cout * H * Wd, Cout, H * Wd);
            Om.noalias() = Wm * Xm;
        }
        if (bias)
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < Cout; ++c) {
                    T bv = bias->val.v[c];
                    T* p = out.data() + (static_cast<size_t>(b) * Cout + c) * Ho * Wo;
                    for (int i = 0; i < Ho * Wo; ++i) p[i] += bv;
                }
    } else {
        Tensor<T> col(1, 1, Cin * k * k, Ho * Wo);
        for (int b = 0; b < B; ++b) {
            im2col(X, b, k, stride, col, Ho, Wo);
            for (int g = 0; g < groups; ++g) {
                CMapRM<T> Wm(Wt.data() + static_cast<size_t>(g) * Cout_g * Cin_g * k * k, Cout_g, Cin_g * k * k);
                CMapRM<T> Cm(col.data() + static_cast<size_t>(g) * Cin_g * k * k * Ho * Wo, Cin_g * k * k, Ho * Wo);
                MapRM<T> Om(out.data() + (static_cast<size_t>(b) * Cout + g * Cout_g) * Ho * Wo, Cout_g, Ho * Wo);
                Om.noalias() = Wm * Cm;
            }
        }
        if (bias)
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < Cout; ++c) {
                    T bv = bias->val.v[c];
                    T* p = out.data() + (static_cast<size_t>(b) * Cout + c) * Ho * Wo;
                    for (int i = 0; i < Ho * Wo; ++i) p[i] += bv;
                }
    }

    std::vector<Var<T>> parents = bias ? std::vector<Var<T>>{x, w, bias} : std::vector<Var<T>>{x, w};
    return make_op<T>(
        std::move(out), std::move(parents),
        [x, w, bias, stride, groups, B, Cin, H, Wd, Cout, Cin_g, k, Ho, Wo, Cout_g, depthwise, pointwise](Node<T>& n) {
            const Tensor<T>& X = x->val;
            const Tensor<T>& Wt = w->val;
            if (bias && bias->requires_grad) {
                Tensor<T>& g = bias->g();
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < Cout; ++c) {
                        const T* p = n.grad.data() + (static_cast<size_t>(b) * Cout + c) * Ho * Wo;
                        T acc = T(0);
                        for (int i = 0; i < Ho * Wo; ++i) acc += p[i];
                        g.v[c] += acc;
                    }
            }
            if (depthwise) {
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < Cin; ++c) {
                        const T* go = n.grad.data() + (static_cast<size_t>(b) * Cout + c) * Ho * Wo;
                        const T* src = X.data() + (static_cast<size_t>(b) * Cin + c) * H * Wd;
                        const T* kk = Wt.data() + static_cast<size_t>(c) * k * k;
                        T* gx = x->requires_grad ? x->g().data() + (static_cast<size_t>(b) * Cin + c) * H * Wd : nullptr;
                        T* gw = w->requires_grad ? w->g().data() + static_cast<size_t>(c) * k * k : nullptr;
                        for (int ho = 0; ho < Ho; ++ho)
                            for (int wo = 0; wo < Wo; ++wo) {
                                T gv = go[ho * Wo + wo];
                                size_t base = (ho * stride) * Wd + wo * stride;
                                for (int ki = 0; ki < k; ++ki)
                                    for (int kj = 0; kj < k; ++kj) {
                                        if (gx) gx[base + ki * Wd + kj] += gv * kk[ki * k + kj];
                                        if (gw) gw[ki * k + kj] += gv * src[base + ki * Wd + kj];
                                    }
                            }
                    }
                return;
            }
            if (pointwise) {
                CMapRM<T> Wm(Wt.data(), Cout, Cin);
                for (int b = 0; b < B; ++b) {
                    CMapRM<T> Gm(n.grad.data() + static_cast<size_t>(b) * Cout * H * Wd, Cout, H * Wd);
                    if (x->requires_grad) {
                        MapRM<T> Gx(x->g().data() + static_cast<size_t>(b) * Cin * H * Wd, Cin, H * Wd);
                        Gx.noalias() += Wm.transpose() * Gm;
                    }
                    if (w->requires_grad) {
                        CMapRM<T> Xm(X.data() + static_cast<size_t>(b) * Cin * H * Wd, Cin, H * Wd);
                        MapRM<T> Gw(w->g().data(), Cout, Cin);
                        Gw.noalias() += Gm * Xm.transpose();
                    }
                }
                return;
            }
            Tensor<T> col(1, 1, Cin * k * k, Ho * Wo);
            Tensor<T> gcol(1, 1, Cin * k * k, Ho * Wo);
            for (int b = 0; b < B; ++b) {
                if (w->requires_grad || x->requires_grad) im2col(X, b, k, stride, col, Ho, Wo);
                if (w->requires_grad) {
                    for (int g = 0; g < groups; ++g) {
                        CMapRM<T> Gm(n.grad.data() + (static_cast<size_t>(b) * Cout + g * Cout_g) * Ho * Wo, Cout_g,
                                     Ho * Wo);
                        CMapRM<T> Cm(col.data() + static_cast<size_t>(g) * Cin_g * k * k * Ho * Wo, Cin_g * k * k,
                                     Ho * Wo);
                        MapRM<T> Gw(w->g().data() + static_cast<size_t>(g) * Cout_g * Cin_g * k * k, Cout_g,
                                    Cin_g * k * k);
                        Gw.noalias() += Gm * Cm.transpose();
                    }
                }
                if (x->requires_grad) {
                    for (int g = 0; g < groups; ++g) {
                        CMapRM<T> Wm(Wt.data() + static_cast<size_t>(g) * Cout_g * Cin_g * k * k, Cout_g,
                                     Cin_g * k * k);
                        CMapRM<T> Gm(n.grad.data() + (static_cast<size_t>(b) * Cout + g * Cout_g) * Ho * Wo, Cout_g,
                                     Ho * Wo);
                        MapRM<T> Gc(gcol.data() + static_cast<size_t>(g) * Cin_g * k * k * Ho * Wo, Cin_g * k * k,
                                    Ho * Wo);
                        Gc.noalias() = Wm.transpose() * Gm;
                    }
                    col2im_add(gcol, b, k, stride, x->g(), Ho, Wo);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// sample-adaptive groupwise filtering (dynamic filter application)
// ---------------------------------------------------------------------------

/// Convolve a (pre-padded) input with per-sample, per-channel-group kernels.
/// kernels: (B, G, k, k); channels c belong to group c / (Cin/G). Stride 1.
template <typename T>
Var<T> dyn_conv_valid(const Var<T>& x, const Var<T>& kern) {
    const Tensor<T>& X = x->val;
    const Tensor<T>& K = kern->val;
    const int B = X.b(), C = X.c(), H = X.h(), W = X.w();
    const int G = K.c(), k = K.h();
    check(K.b() == B && K.h() == K.w(), "dyn_conv: kernel shape");
    check(C % G == 0, "dyn_conv: groups must divide channels");
    check(H >= k && W >= k, "dyn_conv: spatial dims smaller than kernel");
    const int Ho = H - k + 1, Wo = W - k + 1;
    const int Cg = C / G;
    Tensor<T> out(B, C, Ho, Wo);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* kk = K.data() + (static_cast<size_t>(b) * G + c / Cg) * k * k;
            const T* src = X.data() + (static_cast<size_t>(b) * C + c) * H * W;
            T* dst = out.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
            for (int ho = 0; ho < Ho; ++ho)
                for (int wo = 0; wo < Wo; ++wo) {
                    T acc = T(0);
                    const T* base = src + ho * W + wo;
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj) acc += kk[ki * k + kj] * base[ki * W + kj];
                    dst[ho * Wo + wo] = acc;
                }
        }
    return make_op<T>(std::move(out), {x, kern}, [x, kern, B, C, H, W, G, k, Ho, Wo, Cg](Node<T>& n) {
        const Tensor<T>& X = x->val;
        const Tensor<T>& K = kern->val;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const T* go = n.grad.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
                const T* kk = K.data() + (static_cast<size_t>(b) * G + c / Cg) * k * k;
                const T* src = X.data() + (static_cast<size_t>(b) * C + c) * H * W;
                T* gx = x->requires_grad ? x->g().data() + (static_cast<size_t>(b) * C + c) * H * W : nullptr;
                T* gk = kern->requires_grad ? kern->g().data() + (static_cast<size_t>(b) * G + c / Cg) * k * k : nullptr;
                for (int ho = 0; ho < Ho; ++ho)
                    for (int wo = 0; wo < Wo; ++wo) {
                        T gv = go[ho * Wo + wo];
                        size_t base = static_cast<size_t>(ho) * W + wo;
                        for (int ki = 0; ki < k; ++ki)
                            for (int kj = 0; kj < k; ++kj) {
                                if (gx) gx[base + ki * W + kj] += gv * kk[ki * k + kj];
                                if (gk) gk[ki * k + kj] += gv * src[base + ki * W + kj];
                            }
                    }
            }
    });
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

/// (B, 4C, H, W) -> (B, C, 2H, 2W); the four source channels of each output
/// channel tile the 2x2 sub-pixel grid.
template <typename T>
Var<T> pixel_shuffle2(const Var<T>& x) {
    const Tensor<T>& X = x->val;
    check(X.c() % 4 == 0, "pixel_shuffle2: channels must be divisible by 4");
    const int B = X.b(), C = X.c() / 4, H = X.h(), W = X.w();
    Tensor<T> out(B, C, 2 * H, 2 * W);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const T* src = X.data() + (static_cast<size_t>(b) * 4 * C + (c * 4 + dy * 2 + dx)) * H * W;
                    for (int i = 0; i < H; ++i)
                        for (int j = 0; j < W; ++j) out.at(b, c, 2 * i + dy, 2 * j + dx) = src[i * W + j];
                }
    return make_op<T>(std::move(out), {x}, [x, B, C, H, W](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        T* dst = g.data() + (static_cast<size_t>(b) * 4 * C + (c * 4 + dy * 2 + dx)) * H * W;
                        for (int i = 0; i < H; ++i)
                            for (int j = 0; j < W; ++j) dst[i * W + j] += n.grad.at(b, c, 2 * i + dy, 2 * j + dx);
                    }
    });
}

/// Factor-2 bilinear upsample with half-pixel centers.
template <typename T>
Var<T> upsample_bilinear2(const Var<T>& x) {
    const Tensor<T>& X = x->val;
    const int B = X.b(), C = X.c(), H = X.h(), W = X.w();
    const int Ho = 2 * H, Wo = 2 * W;
    // precompute 1-D source taps: out i maps to src (i+0.5)/2 - 0.5
    auto taps = [](int n_out, int n_in, std::vector<int>& i0, std::vector<int>& i1, std::vector<T>& w1) {
        i0.resize(n_out);
        i1.resize(n_out);
        w1.resize(n_out);
        for (int i = 0; i < n_out; ++i) {
            double s = (i + 0.5) / 2.0 - 0.5;
            double fl = std::floor(s);
            int a = static_cast<int>(fl);
            double f = s - fl;
            int b = a + 1;
            if (a < 0) a = 0;
            if (b > n_in - 1) b = n_in - 1;
            i0[i] = a;
            i1[i] = b;
            w1[i] = static_cast<T>(f);
        }
    };
    std::vector<int> ri0, ri1, ci0, ci1;
    std::vector<T> rw, cw;
    taps(Ho, H, ri0, ri1, rw);
    taps(Wo, W, ci0, ci1, cw);
    Tensor<T> out(B, C, Ho, Wo);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* src = X.data() + (static_cast<size_t>(b) * C + c) * H * W;
            T* dst = out.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) {
                    T f = rw[i], gq = cw[j];
                    T v00 = src[ri0[i] * W + ci0[j]], v01 = src[ri0[i] * W + ci1[j]];
                    T v10 = src[ri1[i] * W + ci0[j]], v11 = src[ri1[i] * W + ci1[j]];
                    dst[i * Wo + j] =
                        (T(1) - f) * ((T(1) - gq) * v00 + gq * v01) + f * ((T(1) - gq) * v10 + gq * v11);
                }
        }
    return make_op<T>(std::move(out), {x}, [x, B, C, H, W, Ho, Wo, ri0, ri1, ci0, ci1, rw, cw](Node<T>& n) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                T* dst = g.data() + (static_cast<size_t>(b) * C + c) * H * W;
                const T* go = n.grad.data() + (static_cast<size_t>(b) * C + c) * Ho * Wo;
                for (int i = 0; i < Ho; ++i)
                    for (int j = 0; j < Wo; ++j) {
                        T f = rw[i], gq = cw[j], gv = go[i * Wo + j];
                        dst[ri0[i] * W + ci0[j]] += gv * (T(1) - f) * (T(1) - gq);
                        dst[ri0[i] * W + ci1[j]] += gv * (T(1) - f) * gq;
                        dst[ri1[i] * W + ci0[j]] += gv * f * (T(1) - gq);
                        dst[ri1[i] * W + ci1[j]] += gv * f * gq;
                    }
            }
    });
}

// ---------------------------------------------------------------------------
// shape and scalar-parameter utilities
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& x, std::array<int, 4> shape) {
    size_t n = static_cast<size_t>(shape[0]) * shape[1] * shape[2] * shape[3];
    check(n == x->val.numel(), "reshape: numel mismatch");
    Tensor<T> out(shape);
    out.v = x->val.v;
    return make_op<T>(std::move(out), {x}, [x](Node<T>& n_) {
        if (!x->requires_grad) return;
        Tensor<T>& g = x->g();
        for (size_t i = 0; i < g.numel(); ++i) g.v[i] += n_.grad.v[i];
    });
}

/// Multiply a tensor by a learnable scalar parameter of shape (1,1,1,1).
template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
    check(s->val.numel() == 1, "scale_by: scalar parameter expected");
    T sv = s->val.v[0];
    Tensor<T> out = x->val;
    for (auto& e : out.v) e *= sv;
    return make_op<T>(std::move(out), {x, s}, [x, s, sv](Node<T>& n) {
        if (x->requires_grad) {
            Tensor<T>& g = x->g();
            for (size_t i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i] * sv;
        }
        if (s->requires_grad) {
            T acc = T(0);
            for (size_t i = 0; i < n.grad.numel(); ++i) acc += n.grad.v[i] * x->val.v[i];
            s->g().v[0] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// per-sample selection (sparse branch gating)
// ---------------------------------------------------------------------------

/// out[b] = mask[b] ? a[b] : fallback[b]; the mask is non-differentiable.
/// Inactive samples pass `fallback` through bit-exactly.
template <typename T>
Var<T> where_batch(const std::vector<bool>& mask, const Var<T>& a, const Var<T>& fallback) {
    check_same_shape(a->val, fallback->val, "where_batch");
    check(static_cast<int>(mask.size()) == a->val.b(), "where_batch: mask length");
    const int B = a->val.b();
    const size_t stride = a->val.numel() / B;
    Tensor<T> out(a->val.shape);
    for (int b = 0; b < B; ++b) {
        const T* src = (mask[b] ? a->val.data() : fallback->val.data()) + b * stride;
        std::memcpy(out.data() + b * stride, src, stride * sizeof(T));
    }
    return make_op<T>(std::move(out), {a, fallback}, [a, fallback, mask, B, stride](Node<T>& n) {
        for (int b = 0; b < B; ++b) {
            const Var<T>& tgt = mask[b] ? a : fallback;
            if (!tgt->requires_grad) continue;
            T* g = tgt->g().data() + b * stride;
            const T* src = n.grad.data() + b * stride;
            for (size_t i = 0; i < stride; ++i) g[i] += src[i];
        }
    });
}

}  // namespace ops
}  // namespace imdnet
