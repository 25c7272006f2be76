#pragma once

// Class-balanced cross-entropy on soft targets and the per-network totals
// over all side outputs.

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "pedger/autograd.hpp"
#include "pedger/core.hpp"
#include "pedger/side_outputs.hpp"

namespace pedger {

enum class AlphaConvention {
  paper,  // α = λ·|Y⁺|/(|Y⁺|+|Y⁻|), β = |Y⁻|/(|Y⁺|+|Y⁻|)
  hed,    // α = λ·|Y⁻|/(|Y⁺|+|Y⁻|), β = |Y⁺|/(|Y⁺|+|Y⁻|)
};

inline AlphaConvention parse_alpha_convention(const std::string& s) {
  if (s == "paper") return AlphaConvention::paper;
  if (s == "hed") return AlphaConvention::hed;
  throw InvalidArgument("unknown alpha convention '" + s + "' (expected paper or hed)");
}

inline const char* to_string(AlphaConvention c) { return c == AlphaConvention::paper ? "paper" : "hed"; }

inline constexpr double kLambdaBsds = 1.1;
inline constexpr double kLambdaNyud = 1.3;

struct LossConfig {
  double lambda = kLambdaBsds;
  double log_clamp = 1e-6;
  AlphaConvention alpha_convention = AlphaConvention::paper;

  void validate() const {
    if (!(lambda > 0.0)) throw InvalidArgument("loss config: lambda must be positive");
    if (!(log_clamp > 0.0 && log_clamp < 0.5)) throw InvalidArgument("loss config: log_clamp must lie in (0, 0.5)");
  }
};

struct BalanceWeights {
  double alpha = 0.0;
  double beta = 0.0;
  double positives = 0.0;  // ‖Y∘Ỹ‖₁
  double negatives = 0.0;  // ‖(1−Y)∘(1−Ỹ)‖₁
  bool degenerate() const { return positives + negatives <= 0.0; }
};

inline BalanceWeights balance_weights(const ProbMap& y_soft, const BinaryEdgeMap& y_hard, const LossConfig& cfg) {
  require_same_shape(y_soft, y_hard, "balance_weights");
  BalanceWeights w;
  for (std::size_t i = 0; i < y_soft.size(); ++i) {
    const double y = y_hard[i];
    w.positives += y * y_soft[i];
    w.negatives += (1.0 - y) * (1.0 - y_soft[i]);
  }
  const double total = w.positives + w.negatives;
  if (total <= 0.0) return w;
  if (cfg.alpha_convention == AlphaConvention::paper) {
    w.alpha = cfg.lambda * w.positives / total;
    w.beta = w.negatives / total;
  } else {
    w.alpha = cfg.lambda * w.negatives / total;
    w.beta = w.positives / total;
  }
  return w;
}

namespace detail {

inline void warn_degenerate() {
  static thread_local bool warned = false;
  if (!warned) {
    std::cerr << "warning: balanced_bce: no positive or negative target mass, loss defined as 0\n";
    warned = true;
  }
}

inline double clamp_prob(double e, double c) { return std::min(std::max(e, c), 1.0 - c); }

}  // namespace detail

/// −α·Σ Ỹ·log E − β·Σ (1−Ỹ)·log(1−E), E clamped to [c, 1−c].
inline double balanced_bce(const ProbMap& e, const ProbMap& y_soft, const BinaryEdgeMap& y_hard,
                           const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(e, y_soft, "balanced_bce");
  const auto w = balance_weights(y_soft, y_hard, cfg);
  if (w.degenerate()) {
    detail::warn_degenerate();
    return 0.0;
  }
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double ec = detail::clamp_prob(e[i], cfg.log_clamp);
    pos += y_soft[i] * std::log(ec);
    neg += (1.0 - y_soft[i]) * std::log(1.0 - ec);
  }
  return -w.alpha * pos - w.beta * neg;
}

/// ∂balanced_bce/∂E (zero where the clamp is active).
inline Grid<double> balanced_bce_grad(const ProbMap& e, const ProbMap& y_soft, const BinaryEdgeMap& y_hard,
                                      const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(e, y_soft, "balanced_bce_grad");
  const auto w = balance_weights(y_soft, y_hard, cfg);
  Grid<double> g(e.height(), e.width(), 0.0);
  if (w.degenerate()) return g;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e[i] < cfg.log_clamp || e[i] > 1.0 - cfg.log_clamp) continue;
    g[i] = -w.alpha * y_soft[i] / e[i] + w.beta * (1.0 - y_soft[i]) / (1.0 - e[i]);
  }
  return g;
}

inline ProbMap sigmoid_map(const Grid<double>& logits) {
  ProbMap out(logits.height(), logits.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  return out;
}

/// Per-term values: fused prediction first, then σ(f2c(t)), σ(c2f(t)) for t = 1..T.
inline std::vector<double> loss_terms(const SideOutputs& outputs, const ProbMap& y_soft, const BinaryEdgeMap& y_hard,
                                      const LossConfig& cfg) {
  if (outputs.f2c.size() != outputs.c2f.size()) throw StructuralMismatch("loss_terms: f2c/c2f count mismatch");
  std::vector<double> terms{balanced_bce(outputs.fused, y_soft, y_hard, cfg)};
  for (std::size_t t = 0; t < outputs.f2c.size(); ++t) {
    terms.push_back(balanced_bce(sigmoid_map(outputs.f2c[t]), y_soft, y_hard, cfg));
    terms.push_back(balanced_bce(sigmoid_map(outputs.c2f[t]), y_soft, y_hard, cfg));
  }
  return terms;
}

inline double total_loss(const SideOutputs& outputs, const ProbMap& y_soft, const BinaryEdgeMap& y_hard,
                         const LossConfig& cfg) {
  double sum = 0.0;
  for (double t : loss_terms(outputs, y_soft, y_hard, cfg)) sum += t;
  return sum;
}

inline double total_loss_recurrent(const SideOutputs& outputs, const ProbMap& y_soft, const BinaryEdgeMap& y_hard,
                                   const LossConfig& cfg) {
  if (outputs.f2c.size() < 2) throw StructuralMismatch("total_loss_recurrent: expected at least two steps");
  return total_loss(outputs, y_soft, y_hard, cfg);
}

inline double total_loss_nonrecurrent(const SideOutputs& outputs, const ProbMap& y_soft, const BinaryEdgeMap& y_hard,
                                      const LossConfig& cfg) {
  if (outputs.f2c.size() != 4) throw StructuralMismatch("total_loss_nonrecurrent: expected four stages");
  return total_loss(outputs, y_soft, y_hard, cfg);
}

namespace ops {

/// Balanced BCE of σ(logits) as a scalar tape node. Targets are constants.
template <typename S>
typename Tape<S>::Var balanced_bce_logits(Tape<S>& tape, typename Tape<S>::Var logits, const ProbMap& y_soft,
                                          const BinaryEdgeMap& y_hard, const LossConfig& cfg) {
  const auto& x = tape.value(logits);
  if (x.channels != 1 || x.height != y_soft.height() || x.width != y_soft.width())
    throw ShapeMismatch("balanced_bce_logits: logits and targets differ in shape");
  const auto w = balance_weights(y_soft, y_hard, cfg);
  if (w.degenerate()) {
    pedger::detail::warn_degenerate();
    return tape.input(Tensor<S>(1, 1, 1, S(0)));
  }
  const double c = cfg.log_clamp;
  std::vector<S> dx(x.size());
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = 1.0 / (1.0 + std::exp(-static_cast<double>(x.data[i])));
    const double ec = pedger::detail::clamp_prob(e, c);
    const double ys = y_soft[i];
    pos += ys * std::log(ec);
    neg += (1.0 - ys) * std::log(1.0 - ec);
    dx[i] = (e < c || e > 1.0 - c) ? S(0) : static_cast<S>(-w.alpha * ys * (1.0 - e) + w.beta * (1.0 - ys) * e);
  }
  const double loss = -w.alpha * pos - w.beta * neg;
  return tape.record(Tensor<S>(1, 1, 1, static_cast<S>(loss)), tape.requires_grad(logits),
                     [logits, dx = std::move(dx)](Tape<S>& t, const Tensor<S>& g) {
                       auto& d = t.grad_buffer(logits).data;
                       const S s = g.data[0];
                       for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * dx[i];
                     });
}

/// Fused term plus both side-output terms at every scale (2T+1 terms).
template <typename S>
typename Tape<S>::Var total_loss(Tape<S>& tape, const ForwardGraph<S>& graph, const ProbMap& y_soft,
                                 const BinaryEdgeMap& y_hard, const LossConfig& cfg) {
  cfg.validate();
  std::vector<typename Tape<S>::Var> terms{balanced_bce_logits(tape, graph.fused_logit, y_soft, y_hard, cfg)};
  for (std::size_t t = 0; t < graph.f2c.size(); ++t) {
    terms.push_back(balanced_bce_logits(tape, graph.f2c[t], y_soft, y_hard, cfg));
    terms.push_back(balanced_bce_logits(tape, graph.c2f[t], y_soft, y_hard, cfg));
  }
  return sum_scalars(tape, terms);
}

}  // namespace ops
}  // namespace pedger
