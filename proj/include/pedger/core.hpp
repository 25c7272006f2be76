#pragma once

// Domain types shared by every PEdger component: images, annotation stacks,
// per-pixel maps, and ground-truth preparation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pedger {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameter collections or configs that do not describe the same network.
class StructuralMismatch : public Error {
 public:
  using Error::Error;
};

/// Two per-pixel maps (or a map and an image) whose H×W disagree.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A non-finite value showed up where the math requires a finite one.
class NumericError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

/// Row-major H×W array of T.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width), values_(checked_size(height, width), fill) {}
  Grid(int height, int width, std::vector<T> values) : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != checked_size(height, width)) throw ShapeMismatch("grid: value count does not match H×W");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T& operator()(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid& a, const Grid& b) = default;

 private:
  static std::size_t checked_size(int height, int width) {
    if (height < 0 || width < 0) throw InvalidArgument("grid: negative dimension");
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                        std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                        std::to_string(b.width()) + ")");
  }
}

/// Edge-probability field with every value in [0,1].
struct ProbMap : Grid<double> {
  using Grid<double>::Grid;
  ProbMap() = default;
  explicit ProbMap(Grid<double> g) : Grid<double>(std::move(g)) {}
};

/// Per-pixel fraction of annotators marking an edge.
struct ConsensusMap : Grid<double> {
  using Grid<double>::Grid;
  ConsensusMap() = default;
  explicit ConsensusMap(Grid<double> g) : Grid<double>(std::move(g)) {}
};

/// Strictly binary {0,1} edge map.
struct BinaryEdgeMap : Grid<std::uint8_t> {
  using Grid<std::uint8_t>::Grid;
  BinaryEdgeMap() = default;
  explicit BinaryEdgeMap(Grid<std::uint8_t> g) : Grid<std::uint8_t>(std::move(g)) {}

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values()) n += v != 0;
    return n;
  }
};

inline ProbMap to_prob(const BinaryEdgeMap& b) {
  ProbMap p(b.height(), b.width());
  for (std::size_t i = 0; i < b.size(); ++i) p[i] = b[i] ? 1.0 : 0.0;
  return p;
}

/// Throws NumericError unless every value is finite and inside [0,1].
inline void validate_prob(const Grid<double>& m, const char* what) {
  for (double v : m.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw NumericError(std::string(what) + ": value outside [0,1]");
  }
}

inline constexpr int kMinImageSide = 16;

/// Planar RGB image, channel-major, values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int height, int width) : height_(height), width_(width), pixels_(3 * plane(height, width), 0.0f) {}
  Image(int height, int width, std::vector<float> planar) : height_(height), width_(width), pixels_(std::move(planar)) {
    if (pixels_.size() != 3 * plane(height, width)) throw ShapeMismatch("image: pixel count does not match 3×H×W");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return plane(height_, width_); }

  float& at(int c, int y, int x) { return pixels_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
  float at(int c, int y, int x) const { return pixels_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  /// Throws unless dimensions reach the minimum side and all values lie in [0,1].
  void validate() const {
    if (height_ < kMinImageSide || width_ < kMinImageSide)
      throw InvalidArgument("image: sides must be at least " + std::to_string(kMinImageSide) + " pixels");
    for (float v : pixels_) {
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw InvalidArgument("image: pixel value outside [0,1]");
    }
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static std::size_t plane(int h, int w) {
    if (h < 0 || w < 0) throw InvalidArgument("image: negative dimension");
    return static_cast<std::size_t>(h) * w;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

/// One binary layer per annotator.
class AnnotationStack {
 public:
  AnnotationStack() = default;
  explicit AnnotationStack(std::vector<BinaryEdgeMap> layers) : layers_(std::move(layers)) {
    for (const auto& l : layers_) {
      require_same_shape(l, layers_.front(), "annotation stack");
      for (auto v : l.values())
        if (v > 1) throw InvalidArgument("annotation stack: entries must be 0 or 1");
    }
  }

  std::size_t annotators() const { return layers_.size(); }
  int height() const { return layers_.empty() ? 0 : layers_.front().height(); }
  int width() const { return layers_.empty() ? 0 : layers_.front().width(); }
  const std::vector<BinaryEdgeMap>& layers() const { return layers_; }
  const BinaryEdgeMap& layer(std::size_t a) const { return layers_.at(a); }

  friend bool operator==(const AnnotationStack&, const AnnotationStack&) = default;

 private:
  std::vector<BinaryEdgeMap> layers_;
};

struct Sample {
  Image image;
  AnnotationStack annotations;
  BinaryEdgeMap gt_binary;
  std::string identifier;
};

inline ConsensusMap consensus(const AnnotationStack& annotations) {
  if (annotations.annotators() == 0) throw InvalidArgument("consensus: at least one annotator is required");
  ConsensusMap out(annotations.height(), annotations.width(), 0.0);
  for (const auto& layer : annotations.layers())
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += layer[i];
  const double inv = 1.0 / static_cast<double>(annotations.annotators());
  for (auto& v : out.values()) v *= inv;
  return out;
}

inline constexpr double kBsdsGtThreshold = 0.2;

inline BinaryEdgeMap binarize_ground_truth(const ConsensusMap& consensus_map, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InvalidArgument("binarize_ground_truth: threshold must lie in (0,1]");
  BinaryEdgeMap out(consensus_map.height(), consensus_map.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = consensus_map[i] >= threshold ? 1 : 0;
  return out;
}

/// Builds a sample with its binary ground truth derived from the annotator consensus.
inline Sample make_sample(Image image, AnnotationStack annotations, std::string identifier,
                          double gt_threshold = kBsdsGtThreshold) {
  if (image.height() != annotations.height() || image.width() != annotations.width())
    throw ShapeMismatch("sample '" + identifier + "': image and annotations differ in size");
  auto gt = binarize_ground_truth(consensus(annotations), gt_threshold);
  return Sample{std::move(image), std::move(annotations), std::move(gt), std::move(identifier)};
}

}  // namespace pedger
