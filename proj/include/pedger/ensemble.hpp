#pragma once

// Knowledge integration across training moments (momentum parameters) and
// across architectures (uncertainty-weighted fusion), plus the soft targets
// built from the fused prediction.

#include <cmath>
#include <string>

#include "pedger/core.hpp"
#include "pedger/params.hpp"

namespace pedger {

/// W_m ← (W_bp + W_m_prev) / 2, element-wise, into fresh storage.
template <typename S>
ModelParams<S> momentum_update(const ModelParams<S>& w_bp, const ModelParams<S>& w_m_prev) {
  w_bp.require_compatible(w_m_prev, "momentum_update");
  ModelParams<S> out = w_m_prev;
  auto& dst = out.entries();
  const auto& src = w_bp.entries();
  for (std::size_t e = 0; e < dst.size(); ++e)
    for (std::size_t i = 0; i < dst[e].values.size(); ++i)
      dst[e].values[i] = (src[e].values[i] + dst[e].values[i]) / S(2);
  return out;
}

inline constexpr double kUncertaintyEpsilon = 1e-8;

struct UncertaintyWeights {
  Grid<double> u_r;
  Grid<double> u_nonr;
};

/// Each network's weight is its distance from 0.5 relative to the sum of both
/// distances; when that sum is below `epsilon` both weights are 0.5.
inline UncertaintyWeights uncertainty_weights(const ProbMap& m_r, const ProbMap& m_nonr,
                                              double epsilon = kUncertaintyEpsilon) {
  require_same_shape(m_r, m_nonr, "uncertainty_weights");
  UncertaintyWeights w{Grid<double>(m_r.height(), m_r.width()), Grid<double>(m_r.height(), m_r.width())};
  for (std::size_t i = 0; i < m_r.size(); ++i) {
    const double dr = std::abs(m_r[i] - 0.5);
    const double dn = std::abs(m_nonr[i] - 0.5);
    const double denom = dr + dn;
    if (denom < epsilon) {
      w.u_r[i] = 0.5;
      w.u_nonr[i] = 0.5;
    } else {
      w.u_r[i] = dr / denom;
      w.u_nonr[i] = dn / denom;
    }
  }
  return w;
}

/// M = M_R ∘ U_R + M_NonR ∘ U_NonR.
inline ProbMap fuse(const ProbMap& m_r, const ProbMap& m_nonr, double epsilon = kUncertaintyEpsilon) {
  const auto w = uncertainty_weights(m_r, m_nonr, epsilon);
  ProbMap out(m_r.height(), m_r.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = m_r[i] * w.u_r[i] + m_nonr[i] * w.u_nonr[i];
    // Rounding may step a hair outside the bracket of the two inputs.
    out[i] = std::min(std::max(v, std::min(m_r[i], m_nonr[i])), std::max(m_r[i], m_nonr[i]));
  }
  return out;
}

/// Equal-weight average, used by the "average" ablation.
inline ProbMap average(const ProbMap& a, const ProbMap& b) {
  require_same_shape(a, b, "average");
  ProbMap out(a.height(), a.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
  return out;
}

inline constexpr double kEtaFinal = 0.8;

struct TrustSchedule {
  double eta_final = kEtaFinal;
  int total_epochs = 30;

  void validate() const {
    if (!(eta_final >= 0.0 && eta_final <= 1.0)) throw InvalidArgument("trust schedule: eta_final must lie in [0,1]");
    if (total_epochs <= 0) throw InvalidArgument("trust schedule: total_epochs must be positive");
  }
};

/// η_ep = η_EP · ep / EP.
inline double eta_at(const TrustSchedule& schedule, int ep) {
  schedule.validate();
  if (ep < 0 || ep > schedule.total_epochs)
    throw InvalidArgument("eta_at: epoch " + std::to_string(ep) + " outside [0, " +
                          std::to_string(schedule.total_epochs) + "]");
  return schedule.eta_final * static_cast<double>(ep) / static_cast<double>(schedule.total_epochs);
}

/// Ỹ = η·M + (1−η)·Y.
inline ProbMap soft_target(const ProbMap& m, const BinaryEdgeMap& y, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidArgument("soft_target: eta must lie in [0,1]");
  require_same_shape(m, y, "soft_target");
  ProbMap out(m.height(), m.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eta * m[i] + (1.0 - eta) * static_cast<double>(y[i]);
  return out;
}

}  // namespace pedger
