#pragma once

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <json.hpp>

#include "imdnet/losses.hpp"
#include "imdnet/manifest.hpp"
#include "imdnet/metrics.hpp"
#include "imdnet/serialize.hpp"

namespace imdnet {

/// Cosine annealing from lr_init at step 0 to lr_final at step total.
inline double cosine_lr(int64_t step, int64_t total, double lr_init, double lr_final) {
    check(step >= 0, "cosine_lr: negative step");
    if (step >= total) return lr_final;
    double c = std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total));
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + c);
}

inline bool deterministic_mode() {
    const char* v = std::getenv("IMDNET_DETERMINISTIC");
    return v && v[0] == '1';
}

struct TrainConfig {
    double lr_init = 2e-4;
    double lr_final = 1e-7;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int64_t iterations = 2000;
    int batch = 8;
    int patch = 64;
    uint64_t seed = 1;
    Variant ablation_variant = Variant::Full;
    bool augment = true;
    double grad_clip = 0.0;  // 0 disables
    int log_interval = 50;
    int ckpt_interval = 500;
    LossWeights loss;

    void validate() const {
        check(lr_final < lr_init, "TrainConfig: lr_final must be < lr_init");
        check(patch % 8 == 0, "TrainConfig: patch must be divisible by 8");
        check(iterations >= 0 && batch >= 1, "TrainConfig: bad iterations/batch");
        loss.validate();
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> m;
        auto putd = [&](const char* k, double v) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            m[k] = buf;
        };
        putd("lr_init", lr_init);
        putd("lr_final", lr_final);
        putd("beta1", beta1);
        putd("beta2", beta2);
        m["iterations"] = std::to_string(iterations);
        m["batch"] = std::to_string(batch);
        m["patch"] = std::to_string(patch);
        m["seed"] = std::to_string(seed);
        m["ablation_variant"] = to_string(ablation_variant);
        m["augment"] = augment ? "1" : "0";
        putd("grad_clip", grad_clip);
        m["log_interval"] = std::to_string(log_interval);
        m["ckpt_interval"] = std::to_string(ckpt_interval);
        putd("loss.lambda_f", loss.lambda_f);
        putd("loss.delta_e", loss.delta_e);
        putd("loss.gamma_d", loss.gamma_d);
        putd("loss.epsilon", loss.epsilon);
        return m;
    }

    static TrainConfig from_map(const std::map<std::string, std::string>& m) {
        TrainConfig c;
        auto get = [&](const std::string& k) -> const std::string* {
            auto it = m.find(k);
            return it == m.end() ? nullptr : &it->second;
        };
        if (auto* v = get("lr_init")) c.lr_init = std::stod(*v);
        if (auto* v = get("lr_final")) c.lr_final = std::stod(*v);
        if (auto* v = get("beta1")) c.beta1 = std::stod(*v);
        if (auto* v = get("beta2")) c.beta2 = std::stod(*v);
        if (auto* v = get("iterations")) c.iterations = std::stoll(*v);
        if (auto* v = get("batch")) c.batch = std::stoi(*v);
        if (auto* v = get("patch")) c.patch = std::stoi(*v);
        if (auto* v = get("seed")) c.seed = std::stoull(*v);
        if (auto* v = get("ablation_variant")) c.ablation_variant = variant_from_string(*v);
        if (auto* v = get("augment")) c.augment = (*v == "1");
        if (auto* v = get("grad_clip")) c.grad_clip = std::stod(*v);
        if (auto* v = get("log_interval")) c.log_interval = std::stoi(*v);
        if (auto* v = get("ckpt_interval")) c.ckpt_interval = std::stoi(*v);
        if (auto* v = get("loss.lambda_f")) c.loss.lambda_f = std::stod(*v);
        if (auto* v = get("loss.delta_e")) c.loss.delta_e = std::stod(*v);
        if (auto* v = get("loss.gamma_d")) c.loss.gamma_d = std::stod(*v);
        if (auto* v = get("loss.epsilon")) c.loss.epsilon = std::stod(*v);
        c.validate();
        return c;
    }
};

template <typename T>
class Adam {
  public:
    Adam(std::vector<Var<T>> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto& p : params_) {
            m_.emplace_back(p->val.shape);
            v_.emplace_back(p->val.shape);
        }
    }

    void step(double lr, double grad_clip = 0.0) {
        if (grad_clip > 0.0) {
            double norm_sq = 0;
            for (auto& p : params_)
                if (!p->grad.empty())
                    for (T g : p->grad.v) norm_sq += static_cast<double>(g) * g;
            double norm = std::sqrt(norm_sq);
            if (norm > grad_clip) {
                T scale = static_cast<T>(grad_clip / norm);
                for (auto& p : params_)
                    if (!p->grad.empty())
                        for (T& g : p->grad.v) g *= scale;
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>& p = params_[i]->val;
            const Tensor<T>& g = params_[i]->grad;
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
            for (size_t j = 0; j < p.numel(); ++j) {
                T gj = g.empty() ? T(0) : g.v[j];
                m.v[j] = b1 * m.v[j] + (T(1) - b1) * gj;
                v.v[j] = b2 * v.v[j] + (T(1) - b2) * gj * gj;
                double mhat = static_cast<double>(m.v[j]) / bc1;
                double vhat = static_cast<double>(v.v[j]) / bc2;
                p.v[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    std::vector<Tensor<T>>& m() { return m_; }
    std::vector<Tensor<T>>& v() { return v_; }
    const std::vector<Var<T>>& params() const { return params_; }

  private:
    std::vector<Var<T>> params_;
    std::vector<Tensor<T>> m_, v_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Checkpoint: "IMDC" magic, u32 version, i64 step, i64 adam_t, rng state,
// config kv-block (model.* / train.*), parameter map, optimizer m map,
// optimizer v map. Deterministic layout: save -> load -> save is
// byte-identical.
constexpr uint32_t kCkptMagic = 0x43444D49;  // "IMDC"

template <typename T>
struct Checkpoint {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    int64_t step = 0;
    int64_t adam_t = 0;
    uint64_t rng_state = 0;
    bool rng_spare_valid = false;
    double rng_spare = 0.0;
    std::vector<std::pair<std::string, Tensor<T>>> params;
    std::vector<std::pair<std::string, Tensor<T>>> adam_m;
    std::vector<std::pair<std::string, Tensor<T>>> adam_v;
};

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "save_checkpoint: cannot open " + path);
    ser::write_pod(os, kCkptMagic);
    ser::write_pod(os, ser::kVersion);
    ser::write_pod<int64_t>(os, ck.step);
    ser::write_pod<int64_t>(os, ck.adam_t);
    ser::write_pod<uint64_t>(os, ck.rng_state);
    ser::write_pod<uint8_t>(os, ck.rng_spare_valid ? 1 : 0);
    ser::write_pod<double>(os, ck.rng_spare);
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : ck.model_cfg.to_map()) kv["model." + k] = v;
    for (const auto& [k, v] : ck.train_cfg.to_map()) kv["train." + k] = v;
    ser::write_kv_block(os, kv);
    ser::write_param_map(os, ck.params);
    ser::write_param_map(os, ck.adam_m);
    ser::write_param_map(os, ck.adam_v);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "load_checkpoint: cannot open " + path);
    check(ser::read_pod<uint32_t>(is) == kCkptMagic, "load_checkpoint: bad magic in " + path);
    uint32_t ver = ser::read_pod<uint32_t>(is);
    check(ver == ser::kVersion, "load_checkpoint: unsupported version");
    Checkpoint<T> ck;
    ck.step = ser::read_pod<int64_t>(is);
    ck.adam_t = ser::read_pod<int64_t>(is);
    ck.rng_state = ser::read_pod<uint64_t>(is);
    ck.rng_spare_valid = ser::read_pod<uint8_t>(is) != 0;
    ck.rng_spare = ser::read_pod<double>(is);
    auto kv = ser::read_kv_block(is);
    std::map<std::string, std::string> mkv, tkv;
    for (const auto& [k, v] : kv) {
        if (k.rfind("model.", 0) == 0) mkv[k.substr(6)] = v;
        if (k.rfind("train.", 0) == 0) tkv[k.substr(6)] = v;
    }
    ck.model_cfg = ModelConfig::from_map(mkv);
    ck.train_cfg = TrainConfig::from_map(tkv);
    ck.params = ser::read_param_map<T>(is);
    ck.adam_m = ser::read_param_map<T>(is);
    ck.adam_v = ser::read_param_map<T>(is);
    return ck;
}

/// Non-finite loss abort: carries the offending batch indices and the gate
/// weights of the failing forward pass.
struct NonFiniteLossError : std::runtime_error {
    explicit NonFiniteLossError(const std::string& what) : std::runtime_error(what) {}
};

template <typename T>
struct TrainResult {
    int64_t final_step = 0;
    std::vector<double> loss_history;               // one total per step
    std::vector<LossReport> logged_reports;         // every log_interval
    std::string final_checkpoint_path;
};

/// One trainer owns the model parameters and optimizer state.
template <typename T>
class Trainer {
  public:
    Trainer(Imdnet<T>& model, const TrainConfig& cfg, degrade::Dataset<T>& data, std::string out_dir = "")
        : model_(model), cfg_(cfg), data_(&data), out_dir_(std::move(out_dir)), data_rng_(cfg.seed) {
        cfg_.validate();
        adam_ = std::make_unique<Adam<T>>(model_.params().trainable(), cfg_.beta1, cfg_.beta2);
        if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
    }

    /// Restore optimizer/rng/step state from a checkpoint (parameters are
    /// applied by the caller via apply_params).
    void restore(const Checkpoint<T>& ck) {
        adam_->set_t(ck.adam_t);
        auto& ms = adam_->m();
        auto& vs = adam_->v();
        check(ck.adam_m.size() == ms.size() && ck.adam_v.size() == vs.size(),
              "Trainer::restore: optimizer state size mismatch");
        for (size_t i = 0; i < ms.size(); ++i) {
            ms[i] = ck.adam_m[i].second;
            vs[i] = ck.adam_v[i].second;
        }
        data_rng_.set_state(ck.rng_state, ck.rng_spare_valid, ck.rng_spare);
        step_ = ck.step;
    }

    Checkpoint<T> snapshot() const {
        Checkpoint<T> ck;
        ck.model_cfg = model_.config();
        ck.train_cfg = cfg_;
        ck.step = step_;
        ck.adam_t = adam_->t();
        ck.rng_state = data_rng_.state();
        ck.rng_spare_valid = data_rng_.spare_valid();
        ck.rng_spare = data_rng_.spare_value();
        for (const auto& [name, var] : model_.params().items()) ck.params.emplace_back(name, var->val);
        const auto& tp = adam_->params();
        auto& ms = const_cast<Adam<T>*>(adam_.get())->m();
        auto& vs = const_cast<Adam<T>*>(adam_.get())->v();
        size_t ti = 0;
        for (const auto& [name, var] : model_.params().items()) {
            if (!var->requires_grad) continue;
            check(ti < tp.size() && tp[ti].get() == var.get(), "Trainer::snapshot: optimizer order mismatch");
            ck.adam_m.emplace_back(name + ".m", ms[ti]);
            ck.adam_v.emplace_back(name + ".v", vs[ti]);
            ++ti;
        }
        return ck;
    }

    TrainResult<T> run() { return run_until(cfg_.iterations); }

    /// Run up to stop_step (capped by the configured horizon); the cosine
    /// schedule always spans the full configured iteration count.
    TrainResult<T> run_until(int64_t stop_step) {
        TrainResult<T> result;
        stop_step = std::min(stop_step, cfg_.iterations);
        std::ofstream log;
        if (!out_dir_.empty()) log.open(out_dir_ + "/train_log.jsonl", step_ > 0 ? std::ios::app : std::ios::out);
        while (step_ < stop_step) {
            double lr = cosine_lr(step_, cfg_.iterations, cfg_.lr_init, cfg_.lr_final);
            auto batch = degrade::sample_batch(*data_, cfg_.patch, cfg_.batch, cfg_.augment, data_rng_);
            std::vector<Var<T>> pyr, targets;
            for (auto& t : batch.degraded) pyr.push_back(make_var<T>(t, false));
            for (auto& t : batch.clean) targets.push_back(make_var<T>(t, false));
            auto out = model_.forward(pyr);
            auto loss = total_loss(out, targets, cfg_.loss);
            if (!std::isfinite(loss.report.total)) abort_non_finite(batch.indices, out);
            model_.params().zero_grad();
            backward(loss.total);
            adam_->step(lr, cfg_.grad_clip);
            result.loss_history.push_back(loss.report.total);
            ++step_;
            if (cfg_.log_interval > 0 && (step_ % cfg_.log_interval == 0 || step_ == cfg_.iterations)) {
                nlohmann::json j{{"step", step_},
                                 {"total", loss.report.total},
                                 {"charbonnier", loss.report.per_term.at("charbonnier")},
                                 {"edge", loss.report.per_term.at("edge")},
                                 {"frequency", loss.report.per_term.at("frequency")},
                                 {"decouple", loss.report.per_term.at("decouple")},
                                 {"lr", lr}};
                if (log.is_open()) log << j.dump() << "\n" << std::flush;
                result.logged_reports.push_back(loss.report);
            }
            if (!out_dir_.empty() && cfg_.ckpt_interval > 0 && step_ % cfg_.ckpt_interval == 0 &&
                step_ != cfg_.iterations)
                save_checkpoint(out_dir_ + "/ckpt_" + std::to_string(step_) + ".imdc", snapshot());
        }
        result.final_step = step_;
        if (!out_dir_.empty() && step_ == cfg_.iterations) {
            result.final_checkpoint_path = out_dir_ + "/ckpt_final.imdc";
            save_checkpoint(result.final_checkpoint_path, snapshot());
            std::ofstream cfgfile(out_dir_ + "/config.txt");
            for (const auto& [k, v] : model_.config().to_map()) cfgfile << "model." << k << " = " << v << "\n";
            for (const auto& [k, v] : cfg_.to_map()) cfgfile << "train." << k << " = " << v << "\n";
        }
        return result;
    }

    int64_t step() const { return step_; }
    Rng& data_rng() { return data_rng_; }
    Adam<T>& optimizer() { return *adam_; }

  private:
    [[noreturn]] void abort_non_finite(const std::vector<size_t>& indices, const NetworkOutput<T>& out) {
        std::ostringstream os;
        os << "non-finite loss at step " << step_ << "; batch indices [";
        for (size_t i = 0; i < indices.size(); ++i) os << (i ? "," : "") << indices[i];
        os << "]; gate weights:";
        for (const auto& g : out.gate_log) {
            os << " (";
            for (size_t i = 0; i < g.numel(); ++i) os << (i ? "," : "") << g.v[i];
            os << ")";
        }
        throw NonFiniteLossError(os.str());
    }

    Imdnet<T>& model_;
    TrainConfig cfg_;
    degrade::Dataset<T>* data_;
    std::string out_dir_;
    Rng data_rng_;
    std::unique_ptr<Adam<T>> adam_;
    int64_t step_ = 0;
};

struct AblationRow {
    std::string name;
    double psnr = 0;
    double delta = 0;
    uint64_t seed = 0;
};

/// Train one variant from scratch and report mean full-scale PSNR on the
/// given suite.
template <typename T>
double train_and_eval_psnr(ModelConfig model_cfg, const TrainConfig& cfg, degrade::Dataset<T>& data,
                           const std::map<std::string, std::vector<SamplePair<T>>>& suite) {
    model_cfg.variant = cfg.ablation_variant;
    Imdnet<T> model(model_cfg, cfg.seed);
    Trainer<T> trainer(model, cfg, data);
    trainer.run();
    auto rows = metrics::evaluate_suite(model, suite);
    return rows.back().psnr_db;  // across-combo average
}

/// Step-by-step component ablation under identical data and seed.
template <typename T>
std::vector<AblationRow> run_ablation(const std::vector<Variant>& variants, const ModelConfig& model_cfg,
                                      const TrainConfig& cfg, degrade::Dataset<T>& data,
                                      const std::map<std::string, std::vector<SamplePair<T>>>& suite) {
    check(!variants.empty(), "run_ablation: no variants");
    std::vector<AblationRow> rows;
    double baseline_psnr = 0;
    bool have_baseline = false;
    for (const auto& v : variants) {
        TrainConfig c = cfg;
        c.ablation_variant = v;
        if (v == Variant::Baseline || v == Variant::TabOnly) c.loss.gamma_d = 0;  // no (CF, DI) pairs emitted
        AblationRow row;
        row.name = to_string(v);
        row.seed = c.seed;
        row.psnr = train_and_eval_psnr(model_cfg, c, data, suite);
        if (v == Variant::Baseline) {
            baseline_psnr = row.psnr;
            have_baseline = true;
        }
        rows.push_back(row);
    }
    double ref = have_baseline ? baseline_psnr : rows.front().psnr;
    for (auto& r : rows) r.delta = r.psnr - ref;
    return rows;
}

/// CF-skip vs raw-E-skip comparison on the full variant, identical seeds.
template <typename T>
std::vector<AblationRow> run_skip_ablation(const ModelConfig& model_cfg, const TrainConfig& cfg,
                                           degrade::Dataset<T>& data,
                                           const std::map<std::string, std::vector<SamplePair<T>>>& suite) {
    std::vector<AblationRow> rows;
    for (SkipSource skip : {SkipSource::CF, SkipSource::E}) {
        ModelConfig mc = model_cfg;
        mc.skip = skip;
        TrainConfig c = cfg;
        c.ablation_variant = Variant::Full;
        AblationRow row;
        row.name = skip == SkipSource::CF ? "skip_cf" : "skip_e";
        row.seed = c.seed;
        row.psnr = train_and_eval_psnr(mc, c, data, suite);
        rows.push_back(row);
    }
    for (auto& r : rows) r.delta = r.psnr - rows[0].psnr;
    return rows;
}

/// sum / concat / fblock aggregation comparison, identical seeds.
template <typename T>
std::vector<AblationRow> run_fusion_ablation(const ModelConfig& model_cfg, const TrainConfig& cfg,
                                             degrade::Dataset<T>& data,
                                             const std::map<std::string, std::vector<SamplePair<T>>>& suite) {
    std::vector<AblationRow> rows;
    for (FusionMode fm : {FusionMode::Sum, FusionMode::Concat, FusionMode::FBlock}) {
        ModelConfig mc = model_cfg;
        mc.fusion = fm;
        TrainConfig c = cfg;
        c.ablation_variant = Variant::Full;
        AblationRow row;
        row.name = to_string(fm);
        row.seed = c.seed;
        row.psnr = train_and_eval_psnr(mc, c, data, suite);
        rows.push_back(row);
    }
    for (auto& r : rows) r.delta = r.psnr - rows.back().psnr;
    return rows;
}

}  // namespace imdnet
