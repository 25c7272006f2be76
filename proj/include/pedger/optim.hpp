#pragma once

#include <cmath>

#include "pedger/params.hpp"

namespace pedger {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.001;
};

/// AdamW with decoupled weight decay applied uniformly to every array.
template <typename S>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ModelParams<S>& like, AdamWConfig cfg) : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(ModelParams<S>& params, const ModelParams<S>& grads, double lr) {
    params.require_compatible(grads, "adamw");
    params.require_compatible(m_, "adamw");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& pe = params.entries();
    const auto& ge = grads.entries();
    auto& me = m_.entries();
    auto& ve = v_.entries();
    for (std::size_t e = 0; e < pe.size(); ++e) {
      auto& p = pe[e].values;
      const auto& g = ge[e].values;
      auto& m = me[e].values;
      auto& v = ve[e].values;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        double pi = static_cast<double>(p[i]) * (1.0 - lr * cfg_.weight_decay);
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        pi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
        p[i] = static_cast<S>(pi);
      }
    }
  }

  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  const ModelParams<S>& first_moment() const { return m_; }
  const ModelParams<S>& second_moment() const { return v_; }
  void restore(long t, ModelParams<S> m, ModelParams<S> v) {
    m.require_compatible(m_, "adamw restore");
    v.require_compatible(v_, "adamw restore");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamWConfig cfg_;
  ModelParams<S> m_;
  ModelParams<S> v_;
  long t_ = 0;
};

/// Linear warm-up to `peak` over the first `warmup_steps` optimizer steps
/// (first step already at peak/warmup_steps), then linear decay reaching zero
/// one step after `total_steps − 1`.
inline double warmup_linear_lr(long step, long warmup_steps, long total_steps, double peak) {
  if (step < 0) throw InvalidArgument("learning rate: negative step");
  if (warmup_steps > 0 && step < warmup_steps) return peak * static_cast<double>(step + 1) / warmup_steps;
  if (step >= total_steps) return 0.0;
  const long decay = total_steps - warmup_steps;
  return peak * static_cast<double>(total_steps - step) / static_cast<double>(decay);
}

}  // namespace pedger
