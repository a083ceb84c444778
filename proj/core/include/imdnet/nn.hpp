#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "imdnet/ops.hpp"
#include "imdnet/rng.hpp"

namespace imdnet {

/// Owns all learnable tensors of a model in registration order; the order
/// is fixed by module construction and is the serialization order.
template <typename T>
class ParamStore {
  public:
    Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true) {
        for (auto& it : items_)
            check(it.first != name, "ParamStore: duplicate parameter name " + name);
        Var<T> v = make_var<T>(std::move(init), trainable);
        items_.emplace_back(name, v);
        return v;
    }

    const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }

    Var<T> find(const std::string& name) const {
        for (auto& it : items_)
            if (it.first == name) return it.second;
        return nullptr;
    }

    std::vector<Var<T>> trainable() const {
        std::vector<Var<T>> out;
        for (auto& it : items_)
            if (it.second->requires_grad) out.push_back(it.second);
        return out;
    }

    size_t count_scalars() const {
        size_t n = 0;
        for (auto& it : items_) n += it.second->val.numel();
        return n;
    }

    void zero_grad() {
        for (auto& it : items_) it.second->grad = Tensor<T>();
    }

  private:
    std::vector<std::pair<std::string, Var<T>>> items_;
};

/// Construction context threaded through module constructors: parameter
/// store, init RNG and the hierarchical name prefix.
template <typename T>
struct Ctx {
    ParamStore<T>* store;
    Rng* rng;
    std::string prefix;

    Ctx sub(const std::string& name) const { return Ctx{store, rng, prefix + name + "."}; }
};

enum class Init { FanInNormal, Zero };

template <typename T>
Tensor<T> init_conv_weight(Rng& rng, int cout, int cin_g, int k, Init kind) {
    Tensor<T> w(cout, cin_g, k, k);
    if (kind == Init::Zero) return w;
    double std = 1.0 / std::sqrt(static_cast<double>(cin_g) * k * k);
    for (auto& e : w.v) e = static_cast<T>(rng.normal(0.0, std));
    return w;
}

/// Shape-preserving (or stride-downsampling) 2-D convolution layer.
template <typename T>
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(Ctx<T> ctx, const std::string& name, int cin, int cout, int k, int stride = 1, int groups = 1,
           ops::Pad pad_mode = ops::Pad::Zero, bool bias = true, Init init = Init::FanInNormal)
        : k_(k), stride_(stride), groups_(groups), pad_((k - 1) / 2), pad_mode_(pad_mode) {
        weight_ = ctx.store->add(ctx.prefix + name + ".weight", init_conv_weight<T>(*ctx.rng, cout, cin / groups, k, init));
        if (bias) bias_ = ctx.store->add(ctx.prefix + name + ".bias", Tensor<T>(1, cout, 1, 1));
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> in = pad_ ? ops::pad2d(x, pad_, pad_mode_) : x;
        return ops::conv2d_valid(in, weight_, bias_, stride_, groups_);
    }

    Var<T> weight() const { return weight_; }
    Var<T> bias() const { return bias_; }

  private:
    Var<T> weight_;
    Var<T> bias_;
    int k_ = 1, stride_ = 1, groups_ = 1, pad_ = 0;
    ops::Pad pad_mode_ = ops::Pad::Zero;
};

/// Channel LayerNorm with affine parameters.
template <typename T>
class LayerNorm2d {
  public:
    LayerNorm2d() = default;
    LayerNorm2d(Ctx<T> ctx, const std::string& name, int c) {
        Tensor<T> g(1, c, 1, 1);
        g.fill(T(1));
        gamma_ = ctx.store->add(ctx.prefix + name + ".gamma", std::move(g));
        beta_ = ctx.store->add(ctx.prefix + name + ".beta", Tensor<T>(1, c, 1, 1));
    }
    Var<T> operator()(const Var<T>& x) const { return ops::layer_norm_chan(x, gamma_, beta_); }

  private:
    Var<T> gamma_, beta_;
};

/// Simplified channel attention: x * conv1x1(GAP(x)).
template <typename T>
class SCAttention {
  public:
    SCAttention() = default;
    SCAttention(Ctx<T> ctx, const std::string& name, int c) : att_(ctx.sub(name), "att", c, c, 1) {}
    Var<T> operator()(const Var<T>& x) const { return ops::mul_bc(x, att_(ops::gap(x))); }

  private:
    Conv2d<T> att_;
};

}  // namespace imdnet
