#pragma once

#include <map>
#include <memory>
#include <string>

#include "imdnet/blocks.hpp"

namespace imdnet {

enum class Variant { Baseline, DidOnly, TabOnly, DidTab, Full };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::DidOnly: return "did_only";
        case Variant::TabOnly: return "tab_only";
        case Variant::DidTab: return "did_tab";
        case Variant::Full: return "full";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "baseline") return Variant::Baseline;
    if (s == "did_only") return Variant::DidOnly;
    if (s == "tab_only") return Variant::TabOnly;
    if (s == "did_tab") return Variant::DidTab;
    if (s == "full") return Variant::Full;
    throw std::invalid_argument("unknown variant: " + s);
}

inline FusionMode fusion_from_string(const std::string& s) {
    if (s == "direct") return FusionMode::Direct;
    if (s == "sum") return FusionMode::Sum;
    if (s == "concat") return FusionMode::Concat;
    if (s == "fblock") return FusionMode::FBlock;
    throw std::invalid_argument("unknown fusion mode: " + s);
}

enum class SkipSource { CF, E };

struct ModelConfig {
    int base_width = 32;
    std::array<int, 4> enc_blocks{4, 4, 4, 8};
    int mid_blocks = 8;
    std::array<int, 4> dec_blocks{2, 2, 2, 2};
    int gated_branches = 3;
    double tau = 0.2;
    int scales = 4;
    int df_kernel = 3;
    int df_group = 8;
    Variant variant = Variant::Full;
    FusionMode fusion = FusionMode::FBlock;
    SkipSource skip = SkipSource::CF;
    bool freeze_fusion_w = false;

    void validate() const {
        check(base_width >= 2 && base_width % 2 == 0, "ModelConfig: base_width must be even and >= 2");
        for (int n : enc_blocks) check(n >= 1, "ModelConfig: enc_blocks >= 1");
        for (int n : dec_blocks) check(n >= 1, "ModelConfig: dec_blocks >= 1");
        check(mid_blocks >= 1, "ModelConfig: mid_blocks >= 1");
        check(gated_branches >= 0, "ModelConfig: gated_branches >= 0");
        check(tau >= 0.0 && tau <= 1.01, "ModelConfig: tau in [0, 1.01]");
        check(scales == 4, "ModelConfig: only 4 scales supported");
    }

    bool encoder_decouples() const {
        return variant == Variant::DidOnly || variant == Variant::DidTab || variant == Variant::Full;
    }
    bool decoder_tab() const {
        return variant == Variant::TabOnly || variant == Variant::DidTab || variant == Variant::Full;
    }
    bool injects_di() const { return variant == Variant::DidTab || variant == Variant::Full; }
    FusionMode effective_fusion() const {
        if (!injects_di()) return FusionMode::Direct;
        return variant == Variant::DidTab ? FusionMode::Direct : fusion;
    }
    /// Width of encoder level l (0-based) and the middle block.
    int width(int level) const { return base_width << std::min(level, 3); }

    std::map<std::string, std::string> to_map() const;
    static ModelConfig from_map(const std::map<std::string, std::string>& m);
};

template <typename T>
struct NetworkOutput {
    std::vector<Var<T>> restored;             // [full, 1/2, 1/4, 1/8]
    std::vector<Var<T>> residuals;            // same order
    std::vector<EncoderLevelOutput<T>> level_outputs;  // enc1..enc4, middle
    std::vector<Tensor<T>> gate_log;          // one (B, n, 1, 1) entry per gated TABlock
};

/// IMDNet: shallow stem, four DIDBlock encoder levels plus a middle stack,
/// cross-level degradation fusion, four TABlock decoder levels with
/// multi-scale residual output heads.
template <typename T>
class Imdnet {
  public:
    Imdnet(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg), tau_(static_cast<T>(cfg.tau)) {
        cfg_.validate();
        rng_ = Rng(init_seed);
        Ctx<T> root{&store_, &rng_, ""};
        const int C = cfg_.base_width;

        stem_ = Conv2d<T>(root, "stem", 3, C, 3);
        for (int l = 0; l < 4; ++l) {
            Ctx<T> lv = root.sub("encoder.level" + std::to_string(l + 1));
            int w = cfg_.width(l);
            inject_.push_back(ImageInject<T>(lv, "inject", w));
            std::vector<DidBlock<T>> stack;
            for (int b = 0; b < cfg_.enc_blocks[l]; ++b) {
                bool dec = cfg_.encoder_decouples() && b == cfg_.enc_blocks[l] - 1;
                stack.push_back(DidBlock<T>(lv, "block" + std::to_string(b + 1), w, dec, cfg_.df_kernel, cfg_.df_group));
            }
            enc_.push_back(std::move(stack));
            int w_next = l < 3 ? cfg_.width(l + 1) : cfg_.width(3);
            down_.push_back(Conv2d<T>(lv, "down", w, w_next, 3, 2));
        }
        {
            Ctx<T> mv = root.sub("middle");
            int w = cfg_.width(3);
            for (int b = 0; b < cfg_.mid_blocks; ++b) {
                bool dec = cfg_.encoder_decouples() && b == cfg_.mid_blocks - 1;
                mid_.push_back(DidBlock<T>(mv, "block" + std::to_string(b + 1), w, dec, cfg_.df_kernel, cfg_.df_group));
            }
        }
        if (cfg_.injects_di()) {
            Ctx<T> fv = root.sub("fusion");
            FusionMode fm = cfg_.effective_fusion();
            // decoder position d handles encoder level 4-d; deeper width feeds in
            const int deep_w[4] = {cfg_.width(3), cfg_.width(3), cfg_.width(2), cfg_.width(1)};
            const int cur_w[4] = {cfg_.width(3), cfg_.width(2), cfg_.width(1), cfg_.width(0)};
            for (int d = 0; d < 4; ++d)
                fusion_.push_back(
                    FusionStage<T>(fv, "level" + std::to_string(4 - d), deep_w[d], cur_w[d], fm, cfg_.freeze_fusion_w));
        }
        for (int d = 0; d < 4; ++d) {
            Ctx<T> dv = root.sub("decoder.level" + std::to_string(4 - d));
            const int in_w = d == 0 ? cfg_.width(3) : cfg_.width(4 - d);
            const int dec_w = cfg_.width(3 - d);
            up_.push_back(Conv2d<T>(dv, "up", in_w, 2 * in_w, 1));
            fuse_.push_back(Conv2d<T>(dv, "fuse", in_w / 2 + dec_w, dec_w, 1));
            // part of the skip-fusion design: keeps the decoder stream at unit
            // scale, since the gated blocks square unnormalized magnitudes
            fuse_ln_.push_back(LayerNorm2d<T>(dv, "fuse_ln", dec_w));
            if (cfg_.decoder_tab()) {
                std::vector<TaBlock<T>> stack;
                for (int b = 0; b < cfg_.dec_blocks[d]; ++b)
                    stack.push_back(TaBlock<T>(dv, "block" + std::to_string(b + 1), dec_w, cfg_.gated_branches));
                dec_tab_.push_back(std::move(stack));
            } else {
                std::vector<NafBlock<T>> stack;
                for (int b = 0; b < cfg_.dec_blocks[d]; ++b)
                    stack.push_back(NafBlock<T>(dv, "block" + std::to_string(b + 1), dec_w));
                dec_naf_.push_back(std::move(stack));
            }
            head_.push_back(Conv2d<T>(dv, "head", dec_w, 3, 3));
        }
    }

    NetworkOutput<T> forward(const std::vector<Var<T>>& pyramid) const {
        check(static_cast<int>(pyramid.size()) == 4, "forward: pyramid must have 4 scales");
        const Tensor<T>& im = pyramid[0]->val;
        check(im.c() == 3, "forward: expected 3 input channels, got " + im.shape_str());
        check(im.h() % 8 == 0 && im.w() % 8 == 0, "forward: spatial dims must be divisible by 8, got " + im.shape_str());
        for (int k = 1; k < 4; ++k)
            check(pyramid[k]->val.h() == im.h() >> k && pyramid[k]->val.w() == im.w() >> k,
                  "forward: pyramid scale " + std::to_string(k) + " has wrong dims");

        NetworkOutput<T> out;
        Var<T> f = stem_(pyramid[0]);
        std::vector<EncoderLevelOutput<T>> lvl(5);
        for (int l = 0; l < 4; ++l) {
            f = inject_[l](f, pyramid[l]);
            EncoderLevelOutput<T> eo;
            for (const auto& blk : enc_[l]) {
                eo = blk(f);
                f = eo.e;
            }
            lvl[l] = eo;
            f = down_[l](f);
        }
        {
            EncoderLevelOutput<T> eo;
            for (const auto& blk : mid_) {
                eo = blk(f);
                f = eo.e;
            }
            lvl[4] = eo;
        }
        out.level_outputs = lvl;

        std::vector<Var<T>> dihat(4);
        if (cfg_.injects_di()) {
            Var<T> running = lvl[4].di;
            for (int d = 0; d < 4; ++d) {
                running = fusion_[d](lvl[3 - d].di, running);
                dihat[d] = running;
            }
        }

        auto skip_of = [&](const EncoderLevelOutput<T>& eo) -> Var<T> {
            return (cfg_.skip == SkipSource::CF && cfg_.encoder_decouples()) ? eo.cf : eo.e;
        };

        Var<T> x = skip_of(lvl[4]);
        out.restored.resize(4);
        out.residuals.resize(4);
        for (int d = 0; d < 4; ++d) {
            x = ops::pixel_shuffle2(up_[d](x));
            x = fuse_ln_[d](fuse_[d](ops::concat_c(x, skip_of(lvl[3 - d]))));
            if (cfg_.decoder_tab()) {
                for (const auto& blk : dec_tab_[d]) {
                    auto res = blk(x, dihat[d], tau_, branches_enabled_);
                    x = res.out;
                    if (!res.gates.empty()) out.gate_log.push_back(res.gates);
                }
            } else {
                for (const auto& blk : dec_naf_[d]) x = blk(x);
            }
            Var<T> resid = head_[d](x);
            out.residuals[3 - d] = resid;
            out.restored[3 - d] = ops::add(resid, pyramid[3 - d]);
        }
        return out;
    }

    NetworkOutput<T> forward(const std::vector<Tensor<T>>& pyramid) const {
        std::vector<Var<T>> vars;
        for (const auto& t : pyramid) vars.push_back(make_var<T>(t, false));
        return forward(vars);
    }

    /// GAP-pooled middle-level DI vectors, one row per sample.
    std::vector<std::vector<T>> extract_embeddings(const std::vector<Tensor<T>>& pyramid) const {
        check(cfg_.encoder_decouples(), "extract_embeddings: variant has no degradation stream");
        NoGradGuard ng;
        NetworkOutput<T> out = forward(pyramid);
        Var<T> di = out.level_outputs[4].di;
        Var<T> pooled = ops::gap(di);
        const int B = pooled->val.b(), C = pooled->val.c();
        std::vector<std::vector<T>> rows(B, std::vector<T>(C));
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) rows[b][c] = pooled->val.v[b * C + c];
        return rows;
    }

    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }
    const ModelConfig& config() const { return cfg_; }

    void set_tau(T tau) { tau_ = tau; }
    T tau() const { return tau_; }
    void set_branches_enabled(bool on) { branches_enabled_ = on; }

    size_t parameter_count() const { return store_.count_scalars(); }

    /// Per-gated-TABlock FBlock fusion scalar handles (empty unless fblock mode).
    std::vector<Var<T>> fusion_weights() const {
        std::vector<Var<T>> out;
        for (const auto& st : fusion_)
            if (st.w()) out.push_back(st.w());
        return out;
    }

  private:
    ModelConfig cfg_;
    Rng rng_{0};
    ParamStore<T> store_;
    Conv2d<T> stem_;
    std::vector<ImageInject<T>> inject_;
    std::vector<std::vector<DidBlock<T>>> enc_;
    std::vector<Conv2d<T>> down_;
    std::vector<DidBlock<T>> mid_;
    std::vector<FusionStage<T>> fusion_;
    std::vector<Conv2d<T>> up_;
    std::vector<Conv2d<T>> fuse_;
    std::vector<LayerNorm2d<T>> fuse_ln_;
    std::vector<std::vector<TaBlock<T>>> dec_tab_;
    std::vector<std::vector<NafBlock<T>>> dec_naf_;
    std::vector<Conv2d<T>> head_;
    T tau_;
    bool branches_enabled_ = true;
};

inline std::map<std::string, std::string> ModelConfig::to_map() const {
    std::map<std::string, std::string> m;
    auto puti = [&](const char* k, int v) { m[k] = std::to_string(v); };
    puti("base_width", base_width);
    for (int i = 0; i < 4; ++i) m["enc_blocks" + std::to_string(i)] = std::to_string(enc_blocks[i]);
    puti("mid_blocks", mid_blocks);
    for (int i = 0; i < 4; ++i) m["dec_blocks" + std::to_string(i)] = std::to_string(dec_blocks[i]);
    puti("gated_branches", gated_branches);
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", tau);
        m["tau"] = buf;
    }
    puti("scales", scales);
    puti("df_kernel", df_kernel);
    puti("df_group", df_group);
    m["variant"] = to_string(variant);
    m["fusion"] = to_string(fusion);
    m["skip"] = skip == SkipSource::CF ? "cf" : "e";
    m["freeze_fusion_w"] = freeze_fusion_w ? "1" : "0";
    return m;
}

inline ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& m) {
    ModelConfig c;
    auto get = [&](const char* k) -> const std::string* {
        auto it = m.find(k);
        return it == m.end() ? nullptr : &it->second;
    };
    if (auto* v = get("base_width")) c.base_width = std::stoi(*v);
    for (int i = 0; i < 4; ++i)
        if (auto* v = get(("enc_blocks" + std::to_string(i)).c_str())) c.enc_blocks[i] = std::stoi(*v);
    if (auto* v = get("mid_blocks")) c.mid_blocks = std::stoi(*v);
    for (int i = 0; i < 4; ++i)
        if (auto* v = get(("dec_blocks" + std::to_string(i)).c_str())) c.dec_blocks[i] = std::stoi(*v);
    if (auto* v = get("gated_branches")) c.gated_branches = std::stoi(*v);
    if (auto* v = get("tau")) c.tau = std::stod(*v);
    if (auto* v = get("scales")) c.scales = std::stoi(*v);
    if (auto* v = get("df_kernel")) c.df_kernel = std::stoi(*v);
    if (auto* v = get("df_group")) c.df_group = std::stoi(*v);
    if (auto* v = get("variant")) c.variant = variant_from_string(*v);
    if (auto* v = get("fusion")) c.fusion = fusion_from_string(*v);
    if (auto* v = get("skip")) c.skip = (*v == "e") ? SkipSource::E : SkipSource::CF;
    if (auto* v = get("freeze_fusion_w")) c.freeze_fusion_w = (*v == "1");
    c.validate();
    return c;
}

}  // namespace imdnet
