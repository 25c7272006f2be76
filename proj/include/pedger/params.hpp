#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pedger/autograd.hpp"

namespace pedger {

/// One named parameter array. Convolution weights use shape {Cout, Cin, k, k},
/// biases {Cout}.
template <typename S>
struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<S> values;

  std::size_t count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

/// Named, ordered parameter arrays for one network.
template <typename S>
class ModelParams {
 public:
  ModelParams() = default;

  ParamEntry<S>& add(std::string name, std::vector<int> shape, std::vector<S> values) {
    if (index_.contains(name)) throw StructuralMismatch("model params: duplicate entry '" + name + "'");
    ParamEntry<S> e{std::move(name), std::move(shape), std::move(values)};
    if (e.values.size() != e.count()) throw ShapeMismatch("model params: '" + e.name + "' value count mismatch");
    index_.emplace(e.name, entries_.size());
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  const std::vector<ParamEntry<S>>& entries() const { return entries_; }
  std::vector<ParamEntry<S>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }
  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw StructuralMismatch("model params: no entry named '" + std::string(name) + "'");
    return it->second;
  }
  const ParamEntry<S>& at(std::string_view name) const { return entries_[index_of(name)]; }
  ParamEntry<S>& at(std::string_view name) { return entries_[index_of(name)]; }

  /// Total number of scalar values.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.count();
    return n;
  }

  /// Values across entries whose name starts with `prefix`.
  std::size_t count_with_prefix(std::string_view prefix) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (std::string_view(e.name).starts_with(prefix)) n += e.count();
    return n;
  }

  /// FNV-1a over names and shapes; equal for structurally compatible collections.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 1099511628211ull;
      }
    };
    for (const auto& e : entries_) {
      for (char c : e.name) mix(static_cast<unsigned char>(c));
      mix(0xff);
      for (int d : e.shape) mix(static_cast<std::uint64_t>(d));
      mix(0xfe);
    }
    return h;
  }

  bool compatible(const ModelParams& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape) return false;
    return true;
  }

  void require_compatible(const ModelParams& other, const char* what) const {
    if (!compatible(other)) throw StructuralMismatch(std::string(what) + ": parameter collections are not compatible");
  }

  /// Same structure, all values zero.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    for (auto& e : z.entries_) std::fill(e.values.begin(), e.values.end(), S(0));
    return z;
  }

  template <typename T>
  ModelParams<T> cast() const {
    ModelParams<T> out;
    for (const auto& e : entries_) out.add(e.name, e.shape, std::vector<T>(e.values.begin(), e.values.end()));
    return out;
  }

  bool all_finite() const {
    for (const auto& e : entries_)
      for (S v : e.values)
        if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<ParamEntry<S>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Builder used by the network constructors: fan-in normal weights, zero biases.
template <typename S>
class ParamInitializer {
 public:
  explicit ParamInitializer(std::uint64_t seed) : rng_(seed) {}

  void conv(ModelParams<S>& p, const std::string& name, int cin, int cout, int k) {
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    std::normal_distribution<double> dist(0.0, std_dev);
    std::vector<S> w(static_cast<std::size_t>(cout) * cin * k * k);
    for (auto& v : w) v = static_cast<S>(dist(rng_));
    p.add(name + ".weight", {cout, cin, k, k}, std::move(w));
    p.add(name + ".bias", {cout}, std::vector<S>(cout, S(0)));
  }

  /// 1×1 fusion over `inputs` maps, starting as their plain average.
  void fusion(ModelParams<S>& p, const std::string& name, int weights, int inputs) {
    p.add(name + ".weight", {weights}, std::vector<S>(weights, static_cast<S>(1.0 / inputs)));
    p.add(name + ".bias", {1}, std::vector<S>{S(0)});
  }

 private:
  std::mt19937_64 rng_;
};

/// Tape bindings of a parameter collection, looked up by entry name.
template <typename S>
class BoundParams {
 public:
  using Var = typename Tape<S>::Var;

  BoundParams(Tape<S>& tape, const ModelParams<S>& params) : params_(&params) {
    vars_.reserve(params.size());
    for (const auto& e : params.entries()) {
      int c = e.shape.empty() ? 1 : e.shape[0];
      int h = e.shape.size() > 1 ? e.shape[1] : 1;
      int w = 1;
      for (std::size_t d = 2; d < e.shape.size(); ++d) w *= e.shape[d];
      if (e.shape.size() == 1) {
        c = e.shape[0];
        h = 1;
      }
      vars_.push_back(tape.parameter(Tensor<S>(c, h, w, e.values)));
    }
  }

  Var operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }
  const std::vector<Var>& vars() const { return vars_; }

  /// Adds the tape gradients into `grads` (compatible with the bound params).
  void accumulate_grads(const Tape<S>& tape, ModelParams<S>& grads) const {
    auto& entries = grads.entries();
    if (entries.size() != vars_.size()) throw StructuralMismatch("accumulate_grads: entry count mismatch");
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      const auto* g = tape.grad(vars_[i]);
      if (!g) continue;
      auto& dst = entries[i].values;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g->data[j];
    }
  }

 private:
  const ModelParams<S>* params_;
  std::vector<Var> vars_;
};

}  // namespace pedger
