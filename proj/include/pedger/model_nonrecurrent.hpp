#pragma once

// Non-recurrent edge network: four stages with their own parameters, widening
// as resolution drops, per-stage side branches and a 1×1 fusion. This is the
// network deployed at inference time.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pedger/side_outputs.hpp"

namespace pedger {

inline constexpr int kNonRecurrentStages = 4;

struct NonRecurrentConfig {
  std::array<int, kNonRecurrentStages> stage_channels{16, 32, 48, 64};
  int decoder_channels = 16;

  void validate() const {
    bool grows = false;
    for (int s = 0; s < kNonRecurrentStages; ++s) {
      if (stage_channels[s] <= 0) throw InvalidArgument("non-recurrent config: stage channels must be positive");
      if (s > 0 && stage_channels[s] < stage_channels[s - 1])
        throw InvalidArgument("non-recurrent config: stage channels must be non-decreasing");
      if (s > 0 && stage_channels[s] > stage_channels[s - 1]) grows = true;
    }
    if (!grows) throw InvalidArgument("non-recurrent config: stage channels must grow at least once");
    if (decoder_channels <= 0) throw InvalidArgument("non-recurrent config: decoder channels must be positive");
  }

  /// Wider variant (~1.15× per stage).
  static NonRecurrentConfig large() { return {{18, 37, 55, 74}, 18}; }

  friend bool operator==(const NonRecurrentConfig&, const NonRecurrentConfig&) = default;
};

inline std::string stage_prefix(int s) { return "s" + std::to_string(s + 1); }

template <typename S>
ModelParams<S> build_nonrecurrent(const NonRecurrentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<S> p;
  ParamInitializer<S> init(seed);
  const auto& ch = cfg.stage_channels;
  init.conv(p, "s1.stem", 3, ch[0], 3);
  for (int s = 0; s < kNonRecurrentStages; ++s) {
    const int cin = s == 0 ? ch[0] : ch[s - 1], cout = ch[s];
    const auto pre = stage_prefix(s);
    init.conv(p, pre + ".conv1", cin, cout, 3);
    init.conv(p, pre + ".conv2", cout, cout, 3);
    if (cin != cout) init.conv(p, pre + ".skip", cin, cout, 1);
    for (const char* dir : {".f2c", ".c2f"}) {
      init.conv(p, pre + dir + ".conv", cout, cfg.decoder_channels, 3);
      init.conv(p, pre + dir + ".out", cfg.decoder_channels, 1, 1);
    }
  }
  init.fusion(p, "fuse", 2 * kNonRecurrentStages, 2 * kNonRecurrentStages);
  return p;
}

/// Parameter count owned by each stage (its module plus its side branches; the stem counts toward stage 1).
template <typename S>
std::array<std::size_t, kNonRecurrentStages> stage_parameter_counts(const ModelParams<S>& params) {
  std::array<std::size_t, kNonRecurrentStages> out{};
  for (int s = 0; s < kNonRecurrentStages; ++s) out[s] = params.count_with_prefix(stage_prefix(s) + ".");
  return out;
}

template <typename S>
std::uint64_t nonrecurrent_fingerprint(const NonRecurrentConfig& cfg) {
  static thread_local std::map<std::array<int, kNonRecurrentStages + 1>, std::uint64_t> cache;
  std::array<int, kNonRecurrentStages + 1> key{};
  std::copy(cfg.stage_channels.begin(), cfg.stage_channels.end(), key.begin());
  key.back() = cfg.decoder_channels;
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_nonrecurrent<S>(cfg, 0).fingerprint()).first;
  return it->second;
}

template <typename S>
ForwardGraph<S> forward_nonrecurrent(Tape<S>& tape, const NonRecurrentConfig& cfg, const ModelParams<S>& params,
                                     const BoundParams<S>& p, const Image& image) {
  cfg.validate();
  if (params.fingerprint() != nonrecurrent_fingerprint<S>(cfg))
    throw StructuralMismatch("forward_nonrecurrent: parameters do not match the non-recurrent configuration");
  image.validate();
  using Var = typename Tape<S>::Var;

  Var h = tape.input(image_tensor<S>(image));
  h = ops::relu(tape, ops::conv2d(tape, h, p["s1.stem.weight"], p["s1.stem.bias"], 3));
  ForwardGraph<S> g;
  for (int s = 0; s < kNonRecurrentStages; ++s) {
    if (s > 0) h = ops::maxpool2(tape, h);
    h = detail::residual_block(tape, p, params, stage_prefix(s), h);
    g.features.push_back(h);
  }
  std::vector<int> slots(2 * kNonRecurrentStages);
  for (int j = 0; j < 2 * kNonRecurrentStages; ++j) slots[j] = j;
  bidirectional_decode<S>(
      tape, g,
      [&](std::size_t t) { return detail::side_branch(tape, p, stage_prefix(static_cast<int>(t)) + ".f2c", g.features[t]); },
      [&](std::size_t t) { return detail::side_branch(tape, p, stage_prefix(static_cast<int>(t)) + ".c2f", g.features[t]); },
      p["fuse.weight"], slots, p["fuse.bias"], image.height(), image.width());
  return g;
}

template <typename S>
SideOutputs forward_nonrecurrent(const NonRecurrentConfig& cfg, const ModelParams<S>& params, const Image& image) {
  Tape<S> tape(false);
  BoundParams<S> bound(tape, params);
  auto g = forward_nonrecurrent(tape, cfg, params, bound, image);
  return collect_side_outputs(tape, g);
}

}  // namespace pedger
