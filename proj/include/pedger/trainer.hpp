#pragma once

// Collaborative one-stage training of the recurrent and non-recurrent edge
// networks with their momentum twins, plus the ablation variants.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pedger/augment.hpp"
#include "pedger/ensemble.hpp"
#include "pedger/eval.hpp"
#include "pedger/loss.hpp"
#include "pedger/model_nonrecurrent.hpp"
#include "pedger/model_recurrent.hpp"
#include "pedger/optim.hpp"

namespace pedger {

enum class AblationMode { full, baseline, nims, eadm, eads, mlhs, average, two_stage };

inline const char* to_string(AblationMode m) {
  switch (m) {
    case AblationMode::full: return "full";
    case AblationMode::baseline: return "baseline";
    case AblationMode::nims: return "nims";
    case AblationMode::eadm: return "eadm";
    case AblationMode::eads: return "eads";
    case AblationMode::mlhs: return "mlhs";
    case AblationMode::average: return "average";
    default: return "two_stage";
  }
}

inline AblationMode parse_ablation_mode(const std::string& s) {
  for (auto m : {AblationMode::full, AblationMode::baseline, AblationMode::nims, AblationMode::eadm, AblationMode::eads,
                 AblationMode::mlhs, AblationMode::average, AblationMode::two_stage})
    if (s == to_string(m)) return m;
  throw InvalidArgument("unknown ablation mode '" + s +
                        "' (expected full, baseline, nims, eadm, eads, mlhs, average or two_stage)");
}

/// Whether a mode trains the recurrent network at all.
inline bool uses_recurrent(AblationMode m) {
  return m != AblationMode::baseline && m != AblationMode::nims && m != AblationMode::eadm;
}

/// How the second parameter copy of each network evolves at epoch ends.
enum class TwinKind { none, momentum, snapshot };

inline TwinKind twin_kind(AblationMode m) {
  switch (m) {
    case AblationMode::baseline: return TwinKind::none;
    case AblationMode::nims:
    case AblationMode::eads: return TwinKind::snapshot;
    default: return TwinKind::momentum;
  }
}

struct TrainConfig {
  int total_epochs = 30;
  int warmup_epochs = 4;
  double peak_lr = 1e-3;
  double optimizer_momentum = 0.9;
  double weight_decay = 1e-3;
  int accumulate_to_batch = 16;
  LossConfig loss;
  double eta_final = kEtaFinal;
  std::uint64_t seed = 0;
  AblationMode ablation_mode = AblationMode::full;
  AugmentConfig augment;
  RecurrentConfig recurrent;
  NonRecurrentConfig nonrecurrent;

  void validate() const {
    if (total_epochs < 1) throw InvalidArgument("train config: total_epochs must be positive");
    if (warmup_epochs < 0 || warmup_epochs >= total_epochs)
      throw InvalidArgument("train config: warmup_epochs must lie in [0, total_epochs)");
    if (!(peak_lr > 0.0)) throw InvalidArgument("train config: peak_lr must be positive");
    if (accumulate_to_batch < 1) throw InvalidArgument("train config: accumulate_to_batch must be at least 1");
    if (!(eta_final >= 0.0 && eta_final <= 1.0)) throw InvalidArgument("train config: eta_final must lie in [0,1]");
    if (!(optimizer_momentum >= 0.0 && optimizer_momentum < 1.0))
      throw InvalidArgument("train config: optimizer_momentum must lie in [0,1)");
    if (weight_decay < 0.0) throw InvalidArgument("train config: weight_decay must be non-negative");
    loss.validate();
    recurrent.validate();
    nonrecurrent.validate();
  }

  AdamWConfig adamw() const { return {optimizer_momentum, 0.999, 1e-8, weight_decay}; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"total_epochs", c.total_epochs},
      {"warmup_epochs", c.warmup_epochs},
      {"peak_lr", c.peak_lr},
      {"optimizer_momentum", c.optimizer_momentum},
      {"weight_decay", c.weight_decay},
      {"accumulate_to_batch", c.accumulate_to_batch},
      {"lambda", c.loss.lambda},
      {"log_clamp", c.loss.log_clamp},
      {"alpha_convention", to_string(c.loss.alpha_convention)},
      {"eta_final", c.eta_final},
      {"seed", c.seed},
      {"ablation_mode", to_string(c.ablation_mode)},
      {"augment", c.augment.enabled},
      {"recurrent",
       {{"steps", c.recurrent.steps},
        {"encoder_channels", c.recurrent.encoder_channels},
        {"recurrent_channels", c.recurrent.recurrent_channels},
        {"decoder_channels", c.recurrent.decoder_channels}}},
      {"nonrecurrent",
       {{"stage_channels", c.nonrecurrent.stage_channels}, {"decoder_channels", c.nonrecurrent.decoder_channels}}},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.total_epochs = j.at("total_epochs");
  c.warmup_epochs = j.at("warmup_epochs");
  c.peak_lr = j.at("peak_lr");
  c.optimizer_momentum = j.at("optimizer_momentum");
  c.weight_decay = j.at("weight_decay");
  c.accumulate_to_batch = j.at("accumulate_to_batch");
  c.loss.lambda = j.at("lambda");
  c.loss.log_clamp = j.at("log_clamp");
  c.loss.alpha_convention = parse_alpha_convention(j.at("alpha_convention"));
  c.eta_final = j.at("eta_final");
  c.seed = j.at("seed");
  c.ablation_mode = parse_ablation_mode(j.at("ablation_mode"));
  c.augment.enabled = j.at("augment");
  const auto& r = j.at("recurrent");
  c.recurrent = {r.at("steps"), r.at("encoder_channels"), r.at("recurrent_channels"), r.at("decoder_channels")};
  const auto& n = j.at("nonrecurrent");
  c.nonrecurrent.stage_channels = n.at("stage_channels");
  c.nonrecurrent.decoder_channels = n.at("decoder_channels");
  c.validate();
  return c;
}

/// Epochs actually iterated: two_stage runs the recurrent phase first, then
/// the non-recurrent phase, each for total_epochs.
inline int scheduled_epochs(const TrainConfig& cfg) {
  return cfg.ablation_mode == AblationMode::two_stage ? 2 * cfg.total_epochs : cfg.total_epochs;
}

inline long steps_per_epoch(std::size_t samples, const TrainConfig& cfg) {
  return static_cast<long>((samples + cfg.accumulate_to_batch - 1) / cfg.accumulate_to_batch);
}

/// Learning rate of optimizer step `step` (0-based, counted within one training phase).
inline double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg) {
  return warmup_linear_lr(step, cfg.warmup_epochs * steps_per_epoch, cfg.total_epochs * steps_per_epoch, cfg.peak_lr);
}

/// Which parameter set a checkpoint designates for deployment.
enum class Deployable { nonrecurrent, momentum_nonrecurrent };

inline Deployable deployable_for(AblationMode m) {
  return twin_kind(m) == TwinKind::momentum ? Deployable::momentum_nonrecurrent : Deployable::nonrecurrent;
}

using Params = ModelParams<float>;

struct TrainState {
  TrainConfig config;
  Params recurrent;                // G^R
  Params nonrecurrent;             // G^NonR
  Params momentum_recurrent;       // G_m^R (or snapshot)
  Params momentum_nonrecurrent;    // G_m^NonR (or snapshot)
  AdamW<float> opt_recurrent;
  AdamW<float> opt_nonrecurrent;
  int epoch = 0;                   // next epoch to run
  long step = 0;                   // optimizer steps in the current phase
  long total_steps = 0;            // optimizer steps overall
  bool has_recurrent = false;
  bool has_twins = false;          // twins have been initialized (after epoch 0)

  const Params& deployable() const {
    if (deployable_for(config.ablation_mode) == Deployable::momentum_nonrecurrent && has_twins)
      return momentum_nonrecurrent;
    return nonrecurrent;
  }
};

inline TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  s.nonrecurrent = build_nonrecurrent<float>(cfg.nonrecurrent, cfg.seed * 2 + 1);
  s.opt_nonrecurrent = AdamW<float>(s.nonrecurrent, cfg.adamw());
  if (uses_recurrent(cfg.ablation_mode)) {
    s.has_recurrent = true;
    s.recurrent = build_recurrent<float>(cfg.recurrent, cfg.seed * 2 + 2);
    s.opt_recurrent = AdamW<float>(s.recurrent, cfg.adamw());
  }
  return s;
}

/// Everything that went into the supervision of one sample.
struct TargetRecord {
  int epoch = 0;
  std::size_t position = 0;  // index within the shuffled epoch order
  std::string id;
  double eta = 0.0;
  BinaryEdgeMap y;
  std::optional<ProbMap> m_recurrent;     // M^R from the twin, when queried
  std::optional<ProbMap> m_nonrecurrent;  // M^NonR from the twin, when queried
  std::optional<ProbMap> m;               // combined target map
  ProbMap y_soft_recurrent;               // empty when the recurrent net is idle
  ProbMap y_soft_nonrecurrent;            // empty when the non-recurrent net is idle
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss_recurrent = 0.0;     // batch mean; NaN when not trained
  double loss_nonrecurrent = 0.0;
  double eta = 0.0;
};

inline void write_step_log(std::ostream& os, const StepRecord& r) {
  nlohmann::json j{{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr}, {"eta", r.eta}};
  j["loss_r"] = std::isfinite(r.loss_recurrent) ? nlohmann::json(r.loss_recurrent) : nlohmann::json(nullptr);
  j["loss_nonr"] = std::isfinite(r.loss_nonrecurrent) ? nlohmann::json(r.loss_nonrecurrent) : nlohmann::json(nullptr);
  os << j.dump() << '\n';
}

struct TrainHooks {
  std::function<void(const TargetRecord&)> on_target;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const TrainState&)> on_epoch_end;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <typename Forward>
double accumulate_sample(const Params& params, Params& grads, Forward&& forward, const Image& image,
                         const ProbMap& y_soft, const BinaryEdgeMap& y_hard, const LossConfig& loss_cfg) {
  Tape<float> tape;
  BoundParams<float> bound(tape, params);
  auto graph = forward(tape, bound, image);
  auto loss = ops::total_loss(tape, graph, y_soft, y_hard, loss_cfg);
  const double value = tape.value(loss).data[0];
  if (!std::isfinite(value)) return value;
  tape.backward(loss);
  bound.accumulate_grads(tape, grads);
  return value;
}

inline void scale(Params& p, float f) {
  for (auto& e : p.entries())
    for (auto& v : e.values) v *= f;
}

}  // namespace detail

/// Runs one epoch of the collaborative loop (or of the configured ablation).
inline void train_epoch(TrainState& state, const std::vector<Sample>& data, const TrainHooks& hooks = {}) {
  const TrainConfig& cfg = state.config;
  if (data.empty()) throw InvalidArgument("train_epoch: empty dataset");
  const int total = scheduled_epochs(cfg);
  if (state.epoch >= total) throw InvalidArgument("train_epoch: all epochs already run");

  const AblationMode mode = cfg.ablation_mode;
  const TwinKind twins = twin_kind(mode);
  const bool two_stage = mode == AblationMode::two_stage;
  // Phase-local epoch: two_stage restarts the schedule for the second network.
  const int ep = two_stage ? state.epoch % cfg.total_epochs : state.epoch;
  const bool phase_two = two_stage && state.epoch >= cfg.total_epochs;
  if (two_stage && ep == 0) state.step = 0;
  const bool train_r = state.has_recurrent && (!two_stage || !phase_two);
  const bool train_nonr = !two_stage || phase_two;
  const double eta = eta_at({cfg.eta_final, cfg.total_epochs}, ep);
  const bool corrected = twins != TwinKind::none && ep > 0;

  const long spe = steps_per_epoch(data.size(), cfg);
  Params grad_r = train_r ? state.recurrent.zeros_like() : Params{};
  Params grad_nonr = train_nonr ? state.nonrecurrent.zeros_like() : Params{};
  std::mt19937_64 aug_rng(detail::mix_seed(cfg.seed ^ 0xa5a5a5a5ull, static_cast<std::uint64_t>(state.epoch)));
  const auto order = detail::epoch_order(data.size(), cfg.seed, state.epoch);

  int in_batch = 0;
  double batch_loss_r = 0.0, batch_loss_nonr = 0.0;
  auto flush = [&] {
    if (in_batch == 0) return;
    const double lr = lr_at(state.step, spe, cfg);
    const float inv = 1.0f / static_cast<float>(in_batch);
    if (train_r) {
      detail::scale(grad_r, inv);
      state.opt_recurrent.step(state.recurrent, grad_r, lr);
      grad_r = state.recurrent.zeros_like();
    }
    if (train_nonr) {
      detail::scale(grad_nonr, inv);
      state.opt_nonrecurrent.step(state.nonrecurrent, grad_nonr, lr);
      grad_nonr = state.nonrecurrent.zeros_like();
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (hooks.on_step)
      hooks.on_step({state.total_steps, state.epoch, lr, train_r ? batch_loss_r / in_batch : nan,
                     train_nonr ? batch_loss_nonr / in_batch : nan, eta});
    ++state.step;
    ++state.total_steps;
    in_batch = 0;
    batch_loss_r = batch_loss_nonr = 0.0;
  };

  auto fwd_r = [&](Tape<float>& t, const BoundParams<float>& b, const Image& img) {
    return forward_recurrent(t, cfg.recurrent, state.recurrent, b, img);
  };
  auto fwd_nonr = [&](Tape<float>& t, const BoundParams<float>& b, const Image& img) {
    return forward_nonrecurrent(t, cfg.nonrecurrent, state.nonrecurrent, b, img);
  };

  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const Sample& sample = data[order[pos]];
    const Image image = cfg.augment.enabled ? apply_augment(sample.image, draw_augment(aug_rng, cfg.augment))
                                            : sample.image;
    const BinaryEdgeMap& y = sample.gt_binary;

    TargetRecord rec;
    rec.epoch = state.epoch;
    rec.position = pos;
    rec.id = sample.identifier;
    rec.eta = corrected ? eta : 0.0;
    rec.y = y;

    ProbMap target_r = to_prob(y), target_nonr = to_prob(y);
    if (corrected) {
      // Queries of twins use the same (augmented) input the trained networks see.
      const bool need_r = state.has_recurrent && mode != AblationMode::nims && mode != AblationMode::eadm;
      const bool need_nonr = !(two_stage && !phase_two);
      if (need_r) rec.m_recurrent = forward_recurrent(cfg.recurrent, state.momentum_recurrent, image).fused;
      if (need_nonr) rec.m_nonrecurrent = forward_nonrecurrent(cfg.nonrecurrent, state.momentum_nonrecurrent, image).fused;
      switch (mode) {
        case AblationMode::nims:
        case AblationMode::eadm: rec.m = *rec.m_nonrecurrent; break;
        case AblationMode::average: rec.m = average(*rec.m_recurrent, *rec.m_nonrecurrent); break;
        case AblationMode::mlhs: break;
        case AblationMode::two_stage:
          rec.m = phase_two ? fuse(*rec.m_recurrent, *rec.m_nonrecurrent) : *rec.m_recurrent;
          break;
        default: rec.m = fuse(*rec.m_recurrent, *rec.m_nonrecurrent); break;
      }
      if (mode == AblationMode::mlhs) {
        // Each network learns from its partner's momentum twin.
        target_r = soft_target(*rec.m_nonrecurrent, y, eta);
        target_nonr = soft_target(*rec.m_recurrent, y, eta);
      } else {
        target_r = target_nonr = soft_target(*rec.m, y, eta);
      }
    }

    if (train_r) {
      const double l = detail::accumulate_sample(state.recurrent, grad_r, fwd_r, image, target_r, y, cfg.loss);
      if (!std::isfinite(l))
        throw NumericError("non-finite recurrent loss on sample '" + sample.identifier + "' (epoch " +
                           std::to_string(state.epoch) + ")");
      batch_loss_r += l;
      rec.y_soft_recurrent = target_r;
    }
    if (train_nonr) {
      const double l = detail::accumulate_sample(state.nonrecurrent, grad_nonr, fwd_nonr, image, target_nonr, y, cfg.loss);
      if (!std::isfinite(l))
        throw NumericError("non-finite non-recurrent loss on sample '" + sample.identifier + "' (epoch " +
                           std::to_string(state.epoch) + ")");
      batch_loss_nonr += l;
      rec.y_soft_nonrecurrent = target_nonr;
    }
    if (hooks.on_target) hooks.on_target(rec);
    if (++in_batch == cfg.accumulate_to_batch) flush();
  }
  flush();

  // Epoch-end twin refresh.
  if (twins != TwinKind::none) {
    auto refresh = [&](const Params& bp, Params& twin) {
      twin = (twins == TwinKind::snapshot || ep == 0) ? bp : momentum_update(bp, twin);
    };
    if (train_r) refresh(state.recurrent, state.momentum_recurrent);
    if (train_nonr) refresh(state.nonrecurrent, state.momentum_nonrecurrent);
    state.has_twins = true;
  }
  if (!state.recurrent.all_finite() || !state.nonrecurrent.all_finite())
    throw NumericError("non-finite parameters after epoch " + std::to_string(state.epoch));
  ++state.epoch;
  if (hooks.on_epoch_end) hooks.on_epoch_end(state);
}

/// Runs every scheduled epoch.
inline TrainState train(const std::vector<Sample>& data, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  TrainState state = init_state(cfg);
  while (state.epoch < scheduled_epochs(cfg)) train_epoch(state, data, hooks);
  return state;
}

// ---------------------------------------------------------------------------
// Inference helpers

enum class NetworkChoice { nonrecurrent, recurrent };

inline NetworkChoice parse_network_choice(const std::string& s) {
  if (s == "nonrecurrent") return NetworkChoice::nonrecurrent;
  if (s == "recurrent") return NetworkChoice::recurrent;
  throw InvalidArgument("unknown network '" + s + "' (expected nonrecurrent or recurrent)");
}

/// Edge probabilities of the deployable network with the test-time activation.
inline ProbMap predict(const TrainState& state, const Image& image, NetworkChoice net = NetworkChoice::nonrecurrent,
                       bool apply_test_activation = true) {
  SideOutputs out;
  if (net == NetworkChoice::recurrent) {
    if (!state.has_recurrent) throw InvalidArgument("predict: this run has no recurrent network");
    const Params& p = state.has_twins && twin_kind(state.config.ablation_mode) == TwinKind::momentum
                          ? state.momentum_recurrent
                          : state.recurrent;
    out = forward_recurrent(state.config.recurrent, p, image);
  } else {
    out = forward_nonrecurrent(state.config.nonrecurrent, state.deployable(), image);
  }
  return apply_test_activation ? test_activation(out.fused_logit) : out.fused;
}

/// Markdown summary stored alongside checkpoints.
inline std::string model_card(const TrainState& s) {
  std::ostringstream os;
  const auto& c = s.config;
  os << "# Model card\n\n"
     << "- ablation mode: " << to_string(c.ablation_mode) << '\n'
     << "- deployable network: "
     << (deployable_for(c.ablation_mode) == Deployable::momentum_nonrecurrent && s.has_twins ? "momentum_nonrecurrent"
                                                                                             : "nonrecurrent")
     << '\n'
     << "- epochs completed: " << s.epoch << " of " << scheduled_epochs(c) << '\n'
     << "- optimizer steps: " << s.total_steps << '\n'
     << "- non-recurrent parameters: " << s.nonrecurrent.count() << '\n';
  if (s.has_recurrent) os << "- recurrent parameters: " << s.recurrent.count() << " (steps " << c.recurrent.steps << ")\n";
  os << "- lambda " << c.loss.lambda << ", alpha convention " << to_string(c.loss.alpha_convention) << ", eta_final "
     << c.eta_final << '\n'
     << "- AdamW lr " << c.peak_lr << " (warm-up " << c.warmup_epochs << " epochs, linear decay), weight decay "
     << c.weight_decay << ", batch " << c.accumulate_to_batch << " by accumulation\n"
     << "- seed " << c.seed << '\n'
     << "\nInference applies sigmoid(2x-1) to the fused logit. Outputs are edge probabilities at input resolution.\n";
  return os.str();
}

}  // namespace pedger
