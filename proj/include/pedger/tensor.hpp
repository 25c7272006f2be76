#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "pedger/core.hpp"

namespace pedger {

// Aligned storage keeps Eigen's vectorised kernels on the same code path for a
// given shape, so results do not depend on where the heap put a buffer.
template <typename S>
using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

/// Dense C×H×W array. Parameters reuse the same container with their own
/// interpretation of the three extents (e.g. Cout × Cin × k²).
template <typename S>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  Buffer<S> data;

  Tensor() = default;
  Tensor(int c, int h, int w, S fill = S{}) : channels(c), height(h), width(w), data(count(c, h, w), fill) {}
  Tensor(int c, int h, int w, const std::vector<S>& values)
      : channels(c), height(h), width(w), data(values.begin(), values.end()) {
    if (data.size() != count(c, h, w)) throw ShapeMismatch("tensor: value count does not match shape");
  }

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const Tensor& o) const { return channels == o.channels && height == o.height && width == o.width; }

  S& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  S at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

  static std::size_t count(int c, int h, int w) {
    if (c < 0 || h < 0 || w < 0) throw InvalidArgument("tensor: negative extent");
    return static_cast<std::size_t>(c) * h * w;
  }
};

template <typename S>
Tensor<S> image_tensor(const Image& image) {
  Tensor<S> t(3, image.height(), image.width());
  auto px = image.pixels();
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(px[i]);
  return t;
}

}  // namespace pedger
