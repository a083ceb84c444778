#pragma once

#include <map>
#include <string>

#include "imdnet/imaging.hpp"
#include "imdnet/rng.hpp"

namespace imdnet {

/// Intensity levels of one synthetic corruption; fully determines the
/// degraded output together with the clean image.
struct DegradationSpec {
    double haze_level = 0;   // [0, 150]
    double rain_level = 0;   // [0, 300]
    double noise_level = 0;  // sigma in [0, 50], 8-bit units
    uint64_t rng_seed = 0;

    void validate() const {
        check(haze_level >= 0 && haze_level <= 150, "DegradationSpec: haze_level outside [0,150]");
        check(rain_level >= 0 && rain_level <= 300, "DegradationSpec: rain_level outside [0,300]");
        check(noise_level >= 0 && noise_level <= 50, "DegradationSpec: noise_level outside [0,50]");
    }

    std::string combo() const {
        std::string s;
        if (haze_level > 0) s += "H";
        if (rain_level > 0) s += s.empty() ? "R" : "+R";
        if (noise_level > 0) s += s.empty() ? "N" : "+N";
        return s.empty() ? "clean" : s;
    }
};

template <typename T>
struct SamplePair {
    Tensor<T> clean;
    Tensor<T> degraded;
    DegradationSpec spec;
    std::vector<Tensor<T>> pyramid;  // degraded at scales 1, 1/2, 1/4, 1/8
};

namespace degrade {

constexpr double kBetaMax = 2.0;
constexpr double kDepthNear = 0.5;
constexpr double kDepthFar = 1.5;
constexpr double kAirlightLo = 0.7;
constexpr double kAirlightHi = 1.0;
constexpr double kStreaksPerMpxAtMax = 1500.0;
constexpr double kStreakLenLo = 8.0, kStreakLenHi = 24.0;
constexpr double kStreakAngleLo = 70.0, kStreakAngleHi = 110.0;  // degrees
constexpr double kStreakIntLo = 0.15, kStreakIntHi = 0.5;
constexpr double kStreakBlurSigma = 0.7;

/// Atmospheric scattering: I = J*t + A*(1-t), per pixel, clipped to [0,1].
template <typename T>
Tensor<T> haze_model(const Tensor<T>& clean, double airlight, const Tensor<T>& transmission) {
    check(clean.h() == transmission.h() && clean.w() == transmission.w(), "haze_model: transmission dims");
    Tensor<T> out = clean;
    for (int c = 0; c < clean.c(); ++c)
        for (int i = 0; i < clean.h(); ++i)
            for (int j = 0; j < clean.w(); ++j) {
                T t = transmission.at(0, 0, i, j);
                out.at(0, c, i, j) = clean.at(0, c, i, j) * t + static_cast<T>(airlight) * (T(1) - t);
            }
    img::clip01_inplace(out);
    return out;
}

/// Transmission map for the synthetic left-to-right depth ramp.
template <typename T>
Tensor<T> haze_transmission(int h, int w, double haze_level) {
    Tensor<T> t(1, 1, h, w);
    double beta = haze_level / 150.0 * kBetaMax;
    for (int j = 0; j < w; ++j) {
        double d = w > 1 ? kDepthNear + (kDepthFar - kDepthNear) * (static_cast<double>(j) / (w - 1)) : 1.0;
        T tv = static_cast<T>(std::exp(-beta * d));
        for (int i = 0; i < h; ++i) t.at(0, 0, i, j) = tv;
    }
    return t;
}

template <typename T>
Tensor<T> apply_haze(const Tensor<T>& clean, double haze_level, Rng& rng) {
    check(haze_level >= 0 && haze_level <= 150, "apply_haze: haze_level outside [0,150]");
    if (haze_level == 0) return clean;
    double airlight = rng.uniform(kAirlightLo, kAirlightHi);
    return haze_model(clean, airlight, haze_transmission<T>(clean.h(), clean.w(), haze_level));
}

struct RainStreak {
    double cx, cy, length, angle_deg, intensity;
};

/// Streak count: rain_level maps linearly to streaks per megapixel
/// (0 -> 0, 300 -> 1500), scaled by image area.
inline int rain_streak_count(double rain_level, int h, int w) {
    double mpx = static_cast<double>(h) * w / 1e6;
    return static_cast<int>(std::lround(rain_level / 300.0 * kStreaksPerMpxAtMax * mpx));
}

/// Additive oriented rain streaks with Gaussian blur. The optional out
/// parameter records the rendered streaks (test hook).
template <typename T>
Tensor<T> apply_rain(const Tensor<T>& clean, double rain_level, Rng& rng, std::vector<RainStreak>* streaks_out = nullptr) {
    check(rain_level >= 0 && rain_level <= 300, "apply_rain: rain_level outside [0,300]");
    if (rain_level == 0) return clean;
    const int H = clean.h(), W = clean.w();
    const int n = rain_streak_count(rain_level, H, W);
    Tensor<T> layer(1, 1, H, W);
    for (int s = 0; s < n; ++s) {
        RainStreak st;
        st.cx = rng.uniform(0.0, W);
        st.cy = rng.uniform(0.0, H);
        st.length = rng.uniform(kStreakLenLo, kStreakLenHi);
        st.angle_deg = rng.uniform(kStreakAngleLo, kStreakAngleHi);
        st.intensity = rng.uniform(kStreakIntLo, kStreakIntHi);
        if (streaks_out) streaks_out->push_back(st);
        double th = st.angle_deg * M_PI / 180.0;
        double dx = std::cos(th), dy = std::sin(th);
        int steps = static_cast<int>(std::ceil(st.length / 0.25));
        for (int q = 0; q <= steps; ++q) {
            double t = (static_cast<double>(q) / steps - 0.5) * st.length;
            int px = static_cast<int>(std::lround(st.cx + t * dx));
            int py = static_cast<int>(std::lround(st.cy + t * dy));
            if (px < 0 || px >= W || py < 0 || py >= H) continue;
            layer.at(0, 0, py, px) = std::max(layer.at(0, 0, py, px), static_cast<T>(st.intensity));
        }
    }
    layer = img::gaussian_blur(layer, kStreakBlurSigma);
    Tensor<T> out = clean;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) out.at(0, c, i, j) += layer.at(0, 0, i, j);
    img::clip01_inplace(out);
    return out;
}

/// Pre-clipping Gaussian noise field with std sigma/255 (test/oracle hook).
template <typename T>
Tensor<T> gaussian_field(int c, int h, int w, double sigma, Rng& rng) {
    Tensor<T> eps(1, c, h, w);
    double s = sigma / 255.0;
    for (auto& e : eps.v) e = static_cast<T>(rng.normal(0.0, s));
    return eps;
}

template <typename T>
Tensor<T> apply_noise(const Tensor<T>& clean, double sigma, Rng& rng) {
    check(sigma >= 0 && sigma <= 50, "apply_noise: sigma outside [0,50]");
    if (sigma == 0) return clean;
    Tensor<T> eps = gaussian_field<T>(clean.c(), clean.h(), clean.w(), sigma, rng);
    Tensor<T> out = clean;
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] += eps.v[i];
    img::clip01_inplace(out);
    return out;
}

/// haze -> rain -> noise, zero levels skipped; builds the 4-level pyramid.
template <typename T>
SamplePair<T> compose_degradations(const Tensor<T>& clean, const DegradationSpec& spec) {
    spec.validate();
    check(clean.b() == 1 && clean.c() == 3, "compose_degradations: (1,3,H,W) image expected");
    Rng rng(spec.rng_seed);
    Tensor<T> x = clean;
    if (spec.haze_level > 0) x = apply_haze(x, spec.haze_level, rng);
    if (spec.rain_level > 0) x = apply_rain(x, spec.rain_level, rng);
    if (spec.noise_level > 0) x = apply_noise(x, spec.noise_level, rng);
    SamplePair<T> pair;
    pair.clean = clean;
    pair.degraded = x;
    pair.spec = spec;
    pair.pyramid = img::build_pyramid(x);
    return pair;
}

inline const std::vector<std::string>& combo_names() {
    static const std::vector<std::string> names{"H+R+N", "H+R", "H+N", "R+N", "H", "R", "N"};
    return names;
}

/// Sample a spec for a combo: active levels uniform over the full range,
/// inactive levels exactly 0.
inline DegradationSpec sample_spec(const std::string& combo, Rng& rng) {
    DegradationSpec s;
    bool haze = combo.find('H') != std::string::npos;
    bool rain = combo.find('R') != std::string::npos;
    bool noise = combo.find('N') != std::string::npos;
    check(haze || rain || noise, "sample_spec: unknown combo " + combo);
    if (haze) s.haze_level = rng.uniform(0.0, 150.0);
    if (rain) s.rain_level = rng.uniform(0.0, 300.0);
    if (noise) s.noise_level = rng.uniform(0.0, 50.0);
    s.rng_seed = rng.next_u64();
    return s;
}

/// The seven-combo test suite of the evaluation protocol.
template <typename T>
std::map<std::string, std::vector<SamplePair<T>>> make_test_suite(const std::vector<Tensor<T>>& clean_set,
                                                                  uint64_t seed) {
    check(!clean_set.empty(), "make_test_suite: empty clean set");
    std::map<std::string, std::vector<SamplePair<T>>> suite;
    for (const auto& combo : combo_names()) {
        std::vector<SamplePair<T>> pairs;
        pairs.reserve(clean_set.size());
        for (size_t i = 0; i < clean_set.size(); ++i) {
            Rng rng = Rng::derive(seed ^ splitmix64(std::hash<std::string>{}(combo)), i);
            DegradationSpec spec = sample_spec(combo, rng);
            pairs.push_back(compose_degradations(clean_set[i], spec));
        }
        suite[combo] = std::move(pairs);
    }
    return suite;
}

/// Procedural clean texture: smooth gradients, sinusoid plaids and soft
/// shapes. Keeps training data self-contained.
template <typename T>
Tensor<T> make_texture(int h, int w, Rng& rng) {
    Tensor<double> im(1, 3, h, w);
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.25, 0.75);
        gx[c] = rng.uniform(-0.3, 0.3);
        gy[c] = rng.uniform(-0.3, 0.3);
    }
    int plaids = 2 + static_cast<int>(rng.below(3));
    std::vector<std::array<double, 5>> waves;  // fx, fy, phase, amp, channel-weight seed
    for (int p = 0; p < plaids; ++p)
        waves.push_back({rng.uniform(0.02, 0.25), rng.uniform(0.02, 0.25), rng.uniform(0.0, 6.283),
                         rng.uniform(0.03, 0.15), rng.uniform(0.0, 1.0)});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double u = static_cast<double>(j) / std::max(1, w - 1) - 0.5;
            double v = static_cast<double>(i) / std::max(1, h - 1) - 0.5;
            double wave = 0;
            for (auto& wv : waves) wave += wv[3] * std::sin(6.283185307 * (wv[0] * j + wv[1] * i) + wv[2]);
            for (int c = 0; c < 3; ++c) im.at(0, c, i, j) = base[c] + gx[c] * u + gy[c] * v + wave;
        }
    int shapes = 3 + static_cast<int>(rng.below(5));
    for (int s = 0; s < shapes; ++s) {
        double cx = rng.uniform(0.0, w), cy = rng.uniform(0.0, h);
        double rx = rng.uniform(0.05, 0.35) * w, ry = rng.uniform(0.05, 0.35) * h;
        double col[3] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
        double alpha = rng.uniform(0.3, 0.9);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double q = ((j - cx) / rx) * ((j - cx) / rx) + ((i - cy) / ry) * ((i - cy) / ry);
                if (q < 1.0) {
                    double a = alpha * (1.0 - q);
                    for (int c = 0; c < 3; ++c)
                        im.at(0, c, i, j) = (1.0 - a) * im.at(0, c, i, j) + a * col[c];
                }
            }
    }
    Tensor<T> out = im.template cast<T>();
    img::clip01_inplace(out);
    return out;
}

/// In-memory training corpus: full-size clean/degraded pairs.
template <typename T>
struct Dataset {
    std::vector<SamplePair<T>> pairs;
};

/// Mixed-combo training dataset over procedural textures; per-index seed
/// derivation keeps any worker layout deterministic.
template <typename T>
Dataset<T> make_training_dataset(int count, int height, int width, uint64_t seed) {
    Dataset<T> ds;
    ds.pairs.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng rng = Rng::derive(seed, i);
        Tensor<T> clean = make_texture<T>(height, width, rng);
        const auto& combos = combo_names();
        std::string combo = combos[rng.below(combos.size())];
        DegradationSpec spec = sample_spec(combo, rng);
        ds.pairs.push_back(compose_degradations(clean, spec));
    }
    return ds;
}

template <typename T>
struct Batch {
    std::vector<Tensor<T>> degraded;  // 4 pyramid scales, each (B,3,...)
    std::vector<Tensor<T>> clean;     // matching clean pyramid
    std::vector<size_t> indices;      // source pair per batch row
};

/// Random crops with synchronized flips; pyramids rebuilt after cropping.
/// Patch must be divisible by 8 so all four scales are exact.
template <typename T>
Batch<T> sample_batch(const Dataset<T>& ds, int patch, int batch, bool augment, Rng& rng) {
    check(patch % 8 == 0, "sample_batch: patch must be divisible by 8, got " + std::to_string(patch));
    check(!ds.pairs.empty(), "sample_batch: empty dataset");
    Batch<T> out;
    out.degraded.resize(4);
    out.clean.resize(4);
    for (int k = 0; k < 4; ++k) {
        out.degraded[k] = Tensor<T>(batch, 3, patch >> k, patch >> k);
        out.clean[k] = Tensor<T>(batch, 3, patch >> k, patch >> k);
    }
    for (int b = 0; b < batch; ++b) {
        size_t idx = rng.below(ds.pairs.size());
        out.indices.push_back(idx);
        const SamplePair<T>& pair = ds.pairs[idx];
        check(pair.clean.h() >= patch && pair.clean.w() >= patch, "sample_batch: patch larger than image");
        int top = static_cast<int>(rng.below(pair.clean.h() - patch + 1));
        int left = static_cast<int>(rng.below(pair.clean.w() - patch + 1));
        Tensor<T> cl = img::crop(pair.clean, top, left, patch, patch);
        Tensor<T> dg = img::crop(pair.degraded, top, left, patch, patch);
        if (augment) {
            bool fh = rng.uniform() < 0.5, fv = rng.uniform() < 0.5;
            if (fh) {
                img::flip_h_inplace(cl);
                img::flip_h_inplace(dg);
            }
            if (fv) {
                img::flip_v_inplace(cl);
                img::flip_v_inplace(dg);
            }
        }
        auto cpyr = img::build_pyramid(cl);
        auto dpyr = img::build_pyramid(dg);
        for (int k = 0; k < 4; ++k) {
            const int plane = (patch >> k) * (patch >> k);
            for (int c = 0; c < 3; ++c) {
                std::memcpy(out.clean[k].data() + out.clean[k].idx(b, c, 0, 0),
                            cpyr[k].data() + cpyr[k].idx(0, c, 0, 0), plane * sizeof(T));
                std::memcpy(out.degraded[k].data() + out.degraded[k].idx(b, c, 0, 0),
                            dpyr[k].data() + dpyr[k].idx(0, c, 0, 0), plane * sizeof(T));
            }
        }
    }
    for (int k = 0; k < 4; ++k) {
        for (T x : out.degraded[k].v) check(x >= T(0) && x <= T(1), "sample_batch: degraded value outside [0,1]");
        for (T x : out.clean[k].v) check(x >= T(0) && x <= T(1), "sample_batch: clean value outside [0,1]");
    }
    return out;
}

}  // namespace degrade
}  // namespace imdnet
