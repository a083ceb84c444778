#pragma once

#include "imdnet/nn.hpp"

namespace imdnet {

/// Settle a complement pair and republish the total as their exact sum.
/// When a part's magnitude exceeds the total's, no representable pair can
/// sum to the original total bit-exactly (its ulp grid is coarser), so the
/// total itself absorbs the <=1 ulp residual. total + parts all shift by at
/// most 1 ulp; gradients keep the algebraic path.
template <typename T>
void bind_partition(Tensor<T>& total, Tensor<T>& part_b, Tensor<T>& part_a) {
    for (size_t i = 0; i < total.numel(); ++i) {
        T e = total.v[i];
        T pb = part_b.v[i];
        T pa = e - pb;
        pb = e - pa;
        pa = e - pb;
        total.v[i] = pa + pb;
        part_b.v[i] = pb;
        part_a.v[i] = pa;
    }
}

/// Settle (part, complement) against a FIXED total. Exact whenever the part
/// stays within the total's magnitude scale (always true for the bounded
/// coefficients produced in training); the half-split fallback covers
/// degenerate coefficients.
template <typename T>
void enforce_complement(const Tensor<T>& total, Tensor<T>& part_b, Tensor<T>& part_a) {
    for (size_t i = 0; i < total.numel(); ++i) {
        T e = total.v[i];
        T pb = part_b.v[i];
        T pa = e - pb;
        int it = 0;
        while (pa + pb != e && it < 4) {
            pb = e - pa;
            pa = e - pb;
            ++it;
        }
        if (pa + pb != e) {
            pb = e * T(0.5);
            pa = e - pb;
        }
        part_b.v[i] = pb;
        part_a.v[i] = pa;
    }
}

/// NAFBlock: LN -> 1x1 -> 3x3 dwconv -> SimpleGate -> SCA -> 1x1 (+residual),
/// then LN -> 1x1 -> SimpleGate -> 1x1 (+residual).
template <typename T>
class NafBlock {
  public:
    NafBlock() = default;
    NafBlock(Ctx<T> ctx, const std::string& name, int c) {
        Ctx<T> s = ctx.sub(name);
        ln1_ = LayerNorm2d<T>(s, "ln1", c);
        pw1_ = Conv2d<T>(s, "pw1", c, 2 * c, 1);
        dw_ = Conv2d<T>(s, "dw", 2 * c, 2 * c, 3, 1, 2 * c);
        sca_ = SCAttention<T>(s, "sca", c);
        pw2_ = Conv2d<T>(s, "pw2", c, c, 1);
        ln2_ = LayerNorm2d<T>(s, "ln2", c);
        ffn1_ = Conv2d<T>(s, "ffn1", c, 2 * c, 1);
        ffn2_ = Conv2d<T>(s, "ffn2", c, c, 1);
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> y = ln1_(x);
        y = pw1_(y);
        y = dw_(y);
        y = ops::simple_gate(y);
        y = sca_(y);
        y = pw2_(y);
        Var<T> mid = ops::add(x, y);
        Var<T> z = ln2_(mid);
        z = ffn1_(z);
        z = ops::simple_gate(z);
        z = ffn2_(z);
        return ops::add(mid, z);
    }

    Conv2d<T>& pw2() { return pw2_; }
    Conv2d<T>& ffn2() { return ffn2_; }

  private:
    LayerNorm2d<T> ln1_, ln2_;
    Conv2d<T> pw1_, dw_, pw2_, ffn1_, ffn2_;
    SCAttention<T> sca_;
};

/// Learnable dynamic filter: a pooled generator predicts softmax-normalized
/// k x k low-pass taps per sample and channel group; the high-frequency part
/// is the residual, so F_H + F_L == E by construction.
template <typename T>
class DynamicFilter {
  public:
    DynamicFilter() = default;
    DynamicFilter(Ctx<T> ctx, const std::string& name, int c, int k = 3, int group_size = 8)
        : k_(k), groups_(c / std::min(group_size, c)) {
        check(c % std::min(group_size, c) == 0, "DynamicFilter: group size must divide channels");
        Ctx<T> s = ctx.sub(name);
        gen1_ = Conv2d<T>(s, "gen1", c, c, 1);
        gen2_ = Conv2d<T>(s, "gen2", c / 2, groups_ * k * k, 1);
    }

    struct Split {
        Var<T> high;
        Var<T> low;
        Var<T> kernels;  // (B, G, k, k), taps sum to 1
    };

    Split operator()(const Var<T>& e) const {
        check(e->val.h() >= k_ && e->val.w() >= k_, "DynamicFilter: spatial dims smaller than kernel");
        Var<T> v = ops::gap(e);
        v = gen1_(v);
        v = ops::simple_gate(v);
        v = gen2_(v);  // (B, G*k*k, 1, 1)
        Var<T> kern = ops::reshape(v, {e->val.b(), groups_, k_, k_});
        kern = ops::softmax_hw(kern);
        Var<T> low = ops::dyn_conv_valid(ops::pad2d(e, k_ / 2, ops::Pad::Reflect), kern);
        Var<T> high = ops::sub(e, low);
        bind_partition(e->val, low->val, high->val);
        return {high, low, kern};
    }

    int kernel_size() const { return k_; }

  private:
    Conv2d<T> gen1_, gen2_;
    int k_ = 3, groups_ = 1;
};

/// Statistical coefficient SC(.): pooled mean and std statistics, each run
/// through 1x1 -> SimpleGate -> 1x1, summed into a channel vector.
template <typename T>
class StatCoeff {
  public:
    StatCoeff() = default;
    StatCoeff(Ctx<T> ctx, const std::string& name, int c) {
        Ctx<T> s = ctx.sub(name);
        gap1_ = Conv2d<T>(s, "gap1", c, c, 1);
        gap2_ = Conv2d<T>(s, "gap2", c / 2, c, 1);
        std1_ = Conv2d<T>(s, "std1", c, c, 1);
        std2_ = Conv2d<T>(s, "std2", c / 2, c, 1);
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> a = gap2_(ops::simple_gate(gap1_(ops::gap(x))));
        Var<T> b = std2_(ops::simple_gate(std1_(ops::std_spatial(x))));
        return ops::add(a, b);
    }

  private:
    Conv2d<T> gap1_, gap2_, std1_, std2_;
};

template <typename T>
struct EncoderLevelOutput {
    Var<T> e;   // feature for the next encoder stage
    Var<T> di;  // degradation information (null when decoupling disabled)
    Var<T> cf;  // clean skip feature, cf = e - di
};

/// Injects a pyramid-scale image into the feature stream:
/// Convs(I) = 1x1(SG(3x3(I))), concatenated and fused by a 1x1 conv.
template <typename T>
class ImageInject {
  public:
    ImageInject() = default;
    ImageInject(Ctx<T> ctx, const std::string& name, int c) {
        Ctx<T> s = ctx.sub(name);
        conv_in_ = Conv2d<T>(s, "conv_in", 3, 2 * c, 3);
        conv_mid_ = Conv2d<T>(s, "conv_mid", c, c, 1);
        fuse_ = Conv2d<T>(s, "fuse", 2 * c, c, 1);
    }

    Var<T> operator()(const Var<T>& feat, const Var<T>& image) const {
        check(feat->val.h() == image->val.h() && feat->val.w() == image->val.w(),
              "ImageInject: image scale does not match features");
        Var<T> im = conv_mid_(ops::simple_gate(conv_in_(image)));
        return fuse_(ops::concat_c(feat, im));
    }

  private:
    Conv2d<T> conv_in_, conv_mid_, fuse_;
};

/// Degradation ingredient decoupling block. The spatial path is a NAFBlock;
/// when `decouple` is set the block also splits frequency bands and emits
/// (E, DI, CF) with CF = E - DI exact.
template <typename T>
class DidBlock {
  public:
    DidBlock() = default;
    DidBlock(Ctx<T> ctx, const std::string& name, int c, bool decouple, int df_kernel = 3, int df_group = 8)
        : decouple_(decouple) {
        Ctx<T> s = ctx.sub(name);
        naf_ = NafBlock<T>(s, "naf", c);
        if (decouple_) {
            df_ = DynamicFilter<T>(s, "df", c, df_kernel, df_group);
            sc_high_ = StatCoeff<T>(s, "sc_high", c);
            sc_low_ = StatCoeff<T>(s, "sc_low", c);
            sc_spatial_ = StatCoeff<T>(s, "sc_spatial", c);
        }
    }

    EncoderLevelOutput<T> operator()(const Var<T>& x) const {
        Var<T> e = naf_(x);
        if (!decouple_) return {e, nullptr, nullptr};
        auto split = df_(e);
        Var<T> coeff = ops::add(ops::add(sc_high_(split.high), sc_low_(split.low)), sc_spatial_(e));
        coeff = ops::mul_scalar(coeff, T(1) / T(6));
        Var<T> di = ops::mul_bc(e, coeff);
        Var<T> cf = ops::sub(e, di);
        enforce_complement(e->val, di->val, cf->val);
        return {e, di, cf};
    }

    bool decouples() const { return decouple_; }
    DynamicFilter<T>& dynamic_filter() { return df_; }

  private:
    NafBlock<T> naf_;
    DynamicFilter<T> df_;
    StatCoeff<T> sc_high_, sc_low_, sc_spatial_;
    bool decouple_ = false;
};

/// One functional branch of the decoder: 1x1 -> SimpleGate -> 1x1.
template <typename T>
class BranchBlock {
  public:
    BranchBlock() = default;
    BranchBlock(Ctx<T> ctx, const std::string& name, int c) {
        Ctx<T> s = ctx.sub(name);
        a_ = Conv2d<T>(s, "a", c, 2 * c, 1);
        b_ = Conv2d<T>(s, "b", c, c, 1);
    }
    Var<T> operator()(const Var<T>& x) const { return b_(ops::simple_gate(a_(x))); }

  private:
    Conv2d<T> a_, b_;
};

/// tau-thresholded sparse branch chain: DX_k = W_k * Block_k(DX_{k-1}) when
/// W_k >= tau, else the previous value passes through bit-exactly. Gating is
/// decided per batch element; a branch no sample activates is skipped
/// entirely.
template <typename T>
Var<T> sparse_branch_chain(const Var<T>& dx0, const Var<T>& weights, T tau,
                           const std::vector<BranchBlock<T>>& branches) {
    check(static_cast<size_t>(weights->val.c()) == branches.size(),
          "sparse_branch_chain: weight/branch count mismatch");
    const int B = weights->val.b(), n = weights->val.c();
    Var<T> dx = dx0;
    for (int k = 0; k < n; ++k) {
        std::vector<bool> mask(B);
        bool any = false;
        for (int b = 0; b < B; ++b) {
            mask[b] = weights->val.v[b * n + k] >= tau;
            any = any || mask[b];
        }
        if (!any) continue;
        Var<T> wk = ops::slice_c(weights, k, 1);
        Var<T> cand = ops::mul_bc(branches[k](dx), wk);
        dx = ops::where_batch(mask, cand, dx);
    }
    return dx;
}

/// Task adaptation block: context extraction with degradation injection,
/// a general branch, and tau-thresholded sparsely gated branches applied
/// per batch element.
template <typename T>
class TaBlock {
  public:
    TaBlock() = default;
    TaBlock(Ctx<T> ctx, const std::string& name, int c, int gated_branches) {
        Ctx<T> s = ctx.sub(name);
        ln_ = LayerNorm2d<T>(s, "ln", c);
        pw1_ = Conv2d<T>(s, "pw1", c, 2 * c, 1);
        dw_ = Conv2d<T>(s, "dw", 2 * c, 2 * c, 3, 1, 2 * c);
        // bias-free so a zero DI stream reduces to the plain context path
        di_proj_ = Conv2d<T>(s, "di_proj", c, c, 1, 1, 1, ops::Pad::Zero, false);
        sca_ = SCAttention<T>(s, "sca", c);
        ctx_out_ = Conv2d<T>(s, "ctx_out", c, c, 1);
        general_ = BranchBlock<T>(s, "general", c);
        if (gated_branches > 0)
            gate_ = Conv2d<T>(s, "gate", c, gated_branches, 1, 1, 1, ops::Pad::Zero, true, Init::Zero);
        for (int k = 0; k < gated_branches; ++k)
            branches_.push_back(BranchBlock<T>(s, "branch" + std::to_string(k + 1), c));
    }

    /// Context path of Eq-style wiring; di_hat may be null.
    Var<T> context(const Var<T>& d_hat, const Var<T>& di_hat) const {
        Var<T> y = ops::simple_gate(dw_(pw1_(ln_(d_hat))));
        if (di_hat) y = ops::add(y, di_proj_(di_hat));
        return ctx_out_(sca_(y));
    }

    Var<T> gate_weights(const Var<T>& dc) const {
        check(!branches_.empty(), "TaBlock: no gated branches configured");
        return ops::sigmoid(gate_(ops::gap(dc)));  // (B, n, 1, 1)
    }

    struct Result {
        Var<T> out;
        Tensor<T> gates;  // (B, n, 1, 1) copy for logging; empty when n == 0
    };

    Result operator()(const Var<T>& d_hat, const Var<T>& di_hat, T tau, bool branches_enabled = true) const {
        Var<T> dc = context(d_hat, di_hat);
        Var<T> dx = general_(ops::add(dc, d_hat));
        if (branches_.empty() || !branches_enabled) return {dx, Tensor<T>()};
        Var<T> wv = gate_weights(dc);
        return {sparse_branch_chain(dx, wv, tau, branches_), wv->val};
    }

    int gated_branches() const { return static_cast<int>(branches_.size()); }

  private:
    LayerNorm2d<T> ln_;
    Conv2d<T> pw1_, dw_, di_proj_, ctx_out_, gate_;
    SCAttention<T> sca_;
    BranchBlock<T> general_;
    std::vector<BranchBlock<T>> branches_;
};

enum class FusionMode { Direct, Sum, Concat, FBlock };

inline const char* to_string(FusionMode m) {
    switch (m) {
        case FusionMode::Direct: return "direct";
        case FusionMode::Sum: return "sum";
        case FusionMode::Concat: return "concat";
        case FusionMode::FBlock: return "fblock";
    }
    return "?";
}

/// One stage of the cross-level degradation fusion: the running deeper
/// estimate is upsampled 2x, channel-projected, and combined with the
/// current level's DI. FBlock mode scales the deeper estimate by a
/// learnable scalar initialized to 1.
template <typename T>
class FusionStage {
  public:
    FusionStage() = default;
    FusionStage(Ctx<T> ctx, const std::string& name, int c_deep, int c_cur, FusionMode mode, bool freeze_w = false)
        : mode_(mode) {
        Ctx<T> s = ctx.sub(name);
        if (mode == FusionMode::Direct) return;
        // bias-free so an all-zero degradation stream stays exactly zero
        proj_ = Conv2d<T>(s, "proj", c_deep, c_cur, 1, 1, 1, ops::Pad::Zero, false);
        if (mode == FusionMode::Concat)
            cat_fuse_ = Conv2d<T>(s, "cat_fuse", 2 * c_cur, c_cur, 1, 1, 1, ops::Pad::Zero, false);
        if (mode == FusionMode::FBlock) {
            Tensor<T> one(1, 1, 1, 1);
            one.fill(T(1));
            w_ = ctx.store->add(s.prefix + "w", std::move(one), !freeze_w);
        }
    }

    Var<T> operator()(const Var<T>& di_cur, const Var<T>& di_hat_deeper) const {
        if (mode_ == FusionMode::Direct || !di_hat_deeper) return di_cur;
        Var<T> p = proj_(ops::upsample_bilinear2(di_hat_deeper));
        switch (mode_) {
            case FusionMode::Sum: return ops::add(di_cur, p);
            case FusionMode::Concat: return cat_fuse_(ops::concat_c(di_cur, p));
            case FusionMode::FBlock: return ops::add(di_cur, ops::scale_by(p, w_));
            default: return di_cur;
        }
    }

    Var<T> w() const { return w_; }

  private:
    Conv2d<T> proj_, cat_fuse_;
    Var<T> w_;
    FusionMode mode_ = FusionMode::FBlock;
};

}  // namespace imdnet
