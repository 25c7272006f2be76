#pragma once

// Photometric training augmentation: brightness, contrast, saturation and hue
// jitter in [50%, 150%] of the original, and random grayscale conversion.

#include <algorithm>
#include <cmath>
#include <random>

#include "pedger/core.hpp"

namespace pedger {

struct AugmentConfig {
  double low = 0.5;
  double high = 1.5;
  double grayscale_probability = 0.2;
  bool enabled = true;
};

struct AugmentParams {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 1.0;
  bool grayscale = false;

  static AugmentParams identity() { return {}; }
};

template <typename Rng>
AugmentParams draw_augment(Rng& rng, const AugmentConfig& cfg) {
  if (!cfg.enabled) return AugmentParams::identity();
  std::uniform_real_distribution<double> factor(cfg.low, cfg.high);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  AugmentParams p;
  p.brightness = factor(rng);
  p.contrast = factor(rng);
  p.saturation = factor(rng);
  p.hue = factor(rng);
  p.grayscale = coin(rng) < cfg.grayscale_probability;
  return p;
}

namespace detail {

inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }
inline float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0f + (b - r) / d;
  else
    h = 4.0f + (r - g) / d;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float h6 = h * 6.0f;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

}  // namespace detail

/// Applies photometric jitter to the image; factors equal to 1 leave pixels untouched.
inline Image apply_augment(const Image& in, const AugmentParams& p) {
  Image out = in;
  const int h = out.height(), w = out.width();
  auto each_pixel = [&](auto&& fn) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) fn(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
  };
  if (p.brightness != 1.0) {
    const float f = static_cast<float>(p.brightness);
    each_pixel([&](float& r, float& g, float& b) {
      r = detail::clamp01(r * f), g = detail::clamp01(g * f), b = detail::clamp01(b * f);
    });
  }
  if (p.contrast != 1.0) {
    double mean = 0.0;
    each_pixel([&](float& r, float& g, float& b) { mean += detail::luma(r, g, b); });
    const float m = static_cast<float>(mean / (static_cast<double>(h) * w));
    const float f = static_cast<float>(p.contrast);
    each_pixel([&](float& r, float& g, float& b) {
      r = detail::clamp01(m + (r - m) * f), g = detail::clamp01(m + (g - m) * f), b = detail::clamp01(m + (b - m) * f);
    });
  }
  if (p.saturation != 1.0) {
    const float f = static_cast<float>(p.saturation);
    each_pixel([&](float& r, float& g, float& b) {
      const float l = detail::luma(r, g, b);
      r = detail::clamp01(l + (r - l) * f), g = detail::clamp01(l + (g - l) * f), b = detail::clamp01(l + (b - l) * f);
    });
  }
  if (p.hue != 1.0) {
    const float f = static_cast<float>(p.hue);
    each_pixel([&](float& r, float& g, float& b) {
      float hh, s, v;
      detail::rgb_to_hsv(r, g, b, hh, s, v);
      hh = std::fmod(hh * f, 1.0f);
      detail::hsv_to_rgb(hh, s, v, r, g, b);
      r = detail::clamp01(r), g = detail::clamp01(g), b = detail::clamp01(b);
    });
  }
  if (p.grayscale) {
    each_pixel([&](float& r, float& g, float& b) {
      const float l = detail::clamp01(detail::luma(r, g, b));
      r = l, g = l, b = l;
    });
  }
  return out;
}

/// Augments the image of a sample; annotations and ground truth are untouched.
template <typename Rng>
Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& cfg = {}) {
  Sample out = sample;
  out.image = apply_augment(sample.image, draw_augment(rng, cfg));
  return out;
}

}  // namespace pedger
