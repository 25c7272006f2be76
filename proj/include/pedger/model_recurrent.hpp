#pragma once

// Recurrent edge network: encoder, one residual module applied T times with
// max-pooling between steps, shared side branches, tied 1×1 fusion.

#include <cstdint>
#include <map>
#include <tuple>
#include <string>
#include <vector>

#include "pedger/side_outputs.hpp"

namespace pedger {

struct RecurrentConfig {
  int steps = 5;
  int encoder_channels = 32;
  int recurrent_channels = 64;
  int decoder_channels = 16;

  void validate() const {
    if (steps < 2) throw InvalidArgument("recurrent config: steps must be at least 2");
    if (encoder_channels <= 0 || recurrent_channels <= 0 || decoder_channels <= 0)
      throw InvalidArgument("recurrent config: channel counts must be positive");
  }

  /// Narrower plan used for single-core desk-scale experiments.
  static RecurrentConfig compact() { return {5, 16, 32, 16}; }

  friend bool operator==(const RecurrentConfig&, const RecurrentConfig&) = default;
};

template <typename S>
ModelParams<S> build_recurrent(const RecurrentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int e = cfg.encoder_channels, r = cfg.recurrent_channels, d = cfg.decoder_channels;
  ModelParams<S> p;
  ParamInitializer<S> init(seed);
  init.conv(p, "enc.conv0", 3, e, 3);
  for (const char* blk : {"enc.res1", "enc.res2"}) {
    init.conv(p, std::string(blk) + ".conv1", e, e, 3);
    init.conv(p, std::string(blk) + ".conv2", e, e, 3);
  }
  if (e != r) init.conv(p, "enc.proj", e, r, 1);
  // One copy of the recurrent module; every step reuses it.
  init.conv(p, "rec.conv1", r, r, 3);
  init.conv(p, "rec.conv2", r, r, 3);
  for (const char* dir : {"dec.f2c", "dec.c2f"}) {
    init.conv(p, std::string(dir) + ".conv", r, d, 3);
    init.conv(p, std::string(dir) + ".out", d, 1, 1);
  }
  // One weight per direction, tied across steps.
  init.fusion(p, "fuse", 2, 2 * cfg.steps);
  return p;
}

template <typename S>
std::uint64_t recurrent_fingerprint(const RecurrentConfig& cfg) {
  static thread_local std::map<std::tuple<int, int, int, int>, std::uint64_t> cache;
  auto key = std::tuple{cfg.steps, cfg.encoder_channels, cfg.recurrent_channels, cfg.decoder_channels};
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_recurrent<S>(cfg, 0).fingerprint()).first;
  return it->second;
}

/// Records one forward pass on `tape`. Throws StructuralMismatch when `params`
/// was not built for `cfg`.
template <typename S>
ForwardGraph<S> forward_recurrent(Tape<S>& tape, const RecurrentConfig& cfg, const ModelParams<S>& params,
                                  const BoundParams<S>& p, const Image& image) {
  cfg.validate();
  if (params.fingerprint() != recurrent_fingerprint<S>(cfg))
    throw StructuralMismatch("forward_recurrent: parameters do not match the recurrent configuration");
  image.validate();
  using Var = typename Tape<S>::Var;

  Var x = tape.input(image_tensor<S>(image));
  Var h = ops::relu(tape, ops::conv2d(tape, x, p["enc.conv0.weight"], p["enc.conv0.bias"], 3));
  h = detail::residual_block(tape, p, params, "enc.res1", h);
  h = detail::residual_block(tape, p, params, "enc.res2", h);
  if (params.contains("enc.proj.weight"))
    h = ops::relu(tape, ops::conv2d(tape, h, p["enc.proj.weight"], p["enc.proj.bias"], 1));

  ForwardGraph<S> g;
  for (int t = 0; t < cfg.steps; ++t) {
    if (t > 0) h = ops::maxpool2(tape, h);
    h = detail::residual_block(tape, p, params, "rec", h);
    g.features.push_back(h);
  }
  std::vector<int> slots(2 * cfg.steps);
  for (int t = 0; t < cfg.steps; ++t) slots[cfg.steps + t] = 1;
  bidirectional_decode<S>(
      tape, g, [&](std::size_t t) { return detail::side_branch(tape, p, "dec.f2c", g.features[t]); },
      [&](std::size_t t) { return detail::side_branch(tape, p, "dec.c2f", g.features[t]); }, p["fuse.weight"],
      slots, p["fuse.bias"], image.height(), image.width());
  return g;
}

/// Inference-only convenience wrapper.
template <typename S>
SideOutputs forward_recurrent(const RecurrentConfig& cfg, const ModelParams<S>& params, const Image& image) {
  Tape<S> tape(false);
  BoundParams<S> bound(tape, params);
  auto g = forward_recurrent(tape, cfg, params, bound, image);
  return collect_side_outputs(tape, g);
}

}  // namespace pedger
