#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <utility>

namespace imdnet {
namespace fft {

/// Cached FFTW c2c 2-D transforms (FFTW_ESTIMATE: deterministic planning).
/// Single-threaded use only, matching the rest of the kernels.
template <typename T>
class Dft2;

template <>
class Dft2<double> {
  public:
    static Dft2& get(int h, int w) {
        static thread_local std::map<std::pair<int, int>, Dft2*> cache;
        auto key = std::make_pair(h, w);
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, new Dft2(h, w)).first;
        return *it->second;
    }

    void forward(const std::complex<double>* in, std::complex<double>* out) {
        std::memcpy(in_, in, sizeof(fftw_complex) * n_);
        fftw_execute(fwd_);
        std::memcpy(out, out_, sizeof(fftw_complex) * n_);
    }
    /// Unnormalized inverse transform.
    void backward(const std::complex<double>* in, std::complex<double>* out) {
        std::memcpy(in_, in, sizeof(fftw_complex) * n_);
        fftw_execute(bwd_);
        std::memcpy(out, out_, sizeof(fftw_complex) * n_);
    }

  private:
    Dft2(int h, int w) : n_(static_cast<size_t>(h) * w) {
        in_ = fftw_alloc_complex(n_);
        out_ = fftw_alloc_complex(n_);
        fwd_ = fftw_plan_dft_2d(h, w, in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftw_plan_dft_2d(h, w, in_, out_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    size_t n_;
    fftw_complex* in_;
    fftw_complex* out_;
    fftw_plan fwd_, bwd_;
};

template <>
class Dft2<float> {
  public:
    static Dft2& get(int h, int w) {
        static thread_local std::map<std::pair<int, int>, Dft2*> cache;
        auto key = std::make_pair(h, w);
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, new Dft2(h, w)).first;
        return *it->second;
    }

    void forward(const std::complex<float>* in, std::complex<float>* out) {
        std::memcpy(in_, in, sizeof(fftwf_complex) * n_);
        fftwf_execute(fwd_);
        std::memcpy(out, out_, sizeof(fftwf_complex) * n_);
    }
    void backward(const std::complex<float>* in, std::complex<float>* out) {
        std::memcpy(in_, in, sizeof(fftwf_complex) * n_);
        fftwf_execute(bwd_);
        std::memcpy(out, out_, sizeof(fftwf_complex) * n_);
    }

  private:
    Dft2(int h, int w) : n_(static_cast<size_t>(h) * w) {
        in_ = fftwf_alloc_complex(n_);
        out_ = fftwf_alloc_complex(n_);
        fwd_ = fftwf_plan_dft_2d(h, w, in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd_ = fftwf_plan_dft_2d(h, w, in_, out_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    size_t n_;
    fftwf_complex* in_;
    fftwf_complex* out_;
    fftwf_plan fwd_, bwd_;
};

}  // namespace fft
}  // namespace imdnet
