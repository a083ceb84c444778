#pragma once

#include <string>

#include "imdnet/tensor.hpp"

namespace imdnet {
namespace io {

/// 8-bit RGB PNG -> (1,3,H,W) float image in [0,1]. Grayscale/alpha inputs
/// are expanded/stripped.
Tensor<double> read_png(const std::string& path);

/// (1,3,H,W) in [0,1] -> 8-bit RGB PNG (values clipped, round-to-nearest).
void write_png(const std::string& path, const Tensor<double>& image);

template <typename T>
Tensor<T> read_png_as(const std::string& path) {
    return read_png(path).template cast<T>();
}

template <typename T>
void write_png_from(const std::string& path, const Tensor<T>& image) {
    write_png(path, image.template cast<double>());
}

}  // namespace io
}  // namespace imdnet
