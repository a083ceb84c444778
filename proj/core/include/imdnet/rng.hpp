#pragma once

#include <cmath>
#include <cstdint>

namespace imdnet {

/// Counter-free splitmix64 step; also used to derive independent streams.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic, platform-independent RNG. std::mt19937_64 has a pinned
/// sequence but the std distributions do not, so sampling is done by hand.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : state_(splitmix64(seed ^ 0xD1B54A32D192ED03ULL)) {}

    /// Stream for element `index` of a dataset/run keyed by `base` (the
    /// seed_i = hash(base_seed, index) contract).
    static Rng derive(uint64_t base, uint64_t index) {
        return Rng(splitmix64(base) ^ splitmix64(index * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    /// Standard normal via Box-Muller (deterministic across platforms).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s, bool spare_valid = false, double spare = 0.0) {
        state_ = s;
        have_spare_ = spare_valid;
        spare_ = spare;
    }
    bool spare_valid() const { return have_spare_; }
    double spare_value() const { return spare_; }

  private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace imdnet
