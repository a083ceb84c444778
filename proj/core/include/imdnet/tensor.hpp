#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace imdnet {

/// Dense 4-D array in batch x channels x height x width layout.
/// Lower-rank data (channel vectors, gate weights, scalars) uses
/// trailing singleton dims, e.g. (B, C, 1, 1).
template <typename T>
struct Tensor {
    std::array<int, 4> shape{0, 0, 0, 0};
    std::vector<T> v;

    Tensor() = default;
    Tensor(int b, int c, int h, int w) : shape{b, c, h, w}, v(static_cast<size_t>(b) * c * h * w, T(0)) {
        if (b < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("Tensor: negative dim");
    }
    explicit Tensor(const std::array<int, 4>& s) : Tensor(s[0], s[1], s[2], s[3]) {}

    static Tensor scalar(T x) {
        Tensor t(1, 1, 1, 1);
        t.v[0] = x;
        return t;
    }

    int b() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }
    size_t numel() const { return v.size(); }
    bool empty() const { return v.empty(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    size_t idx(int bb, int cc, int hh, int ww) const {
        return ((static_cast<size_t>(bb) * shape[1] + cc) * shape[2] + hh) * shape[3] + ww;
    }
    T& at(int bb, int cc, int hh, int ww) { return v[idx(bb, cc, hh, ww)]; }
    T at(int bb, int cc, int hh, int ww) const { return v[idx(bb, cc, hh, ww)]; }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape[0], shape[1], shape[2], shape[3]);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(" << shape[0] << "," << shape[1] << "," << shape[2] << "," << shape[3] << ")";
        return os.str();
    }
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

/// Pairwise (cascade) sum: deterministic and exact for power-of-two counts
/// of identical values, which several loss identities rely on.
template <typename T>
T pairwise_sum(const T* p, size_t n) {
    if (n == 0) return T(0);
    if (n <= 8) {
        T s = p[0];
        for (size_t i = 1; i < n; ++i) s += p[i];
        return s;
    }
    size_t half = n / 2;
    // split at a power-of-two boundary so uniform inputs stay exact
    size_t block = 1;
    while (block * 2 < n) block *= 2;
    half = block;
    return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

template <typename T>
T sum_of(const Tensor<T>& t) {
    return pairwise_sum(t.data(), t.numel());
}

template <typename T>
T mean_of(const Tensor<T>& t) {
    return t.numel() ? sum_of(t) / static_cast<T>(t.numel()) : T(0);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T x : t.v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

}  // namespace imdnet
