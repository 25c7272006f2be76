#pragma once

// Bidirectional side-output decoding shared by both edge networks.

#include <functional>
#include <string>
#include <vector>

#include "pedger/autograd.hpp"
#include "pedger/core.hpp"
#include "pedger/params.hpp"

namespace pedger {

/// Per-scale logit maps (restored to input resolution) plus the fused prediction.
struct SideOutputs {
  std::vector<Grid<double>> f2c;
  std::vector<Grid<double>> c2f;
  Grid<double> fused_logit;
  ProbMap fused;
};

/// Tape handles of one forward pass.
template <typename S>
struct ForwardGraph {
  using Var = typename Tape<S>::Var;
  std::vector<Var> features;  // per step/stage, before decoding
  std::vector<Var> f2c;       // upsampled side logits, 1×H×W
  std::vector<Var> c2f;
  Var fused_logit;
  Var fused;  // sigmoid(fused_logit)
};

template <typename S>
Grid<double> to_grid(const Tensor<S>& t) {
  if (t.channels != 1) throw ShapeMismatch("to_grid: expected a single-channel tensor");
  Grid<double> g(t.height, t.width);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(t.data[i]);
  return g;
}

template <typename S>
SideOutputs collect_side_outputs(const Tape<S>& tape, const ForwardGraph<S>& graph) {
  SideOutputs out;
  for (auto v : graph.f2c) out.f2c.push_back(to_grid(tape.value(v)));
  for (auto v : graph.c2f) out.c2f.push_back(to_grid(tape.value(v)));
  out.fused_logit = to_grid(tape.value(graph.fused_logit));
  out.fused = ProbMap(to_grid(tape.value(graph.fused)));
  return out;
}

namespace detail {

/// 3×3 conv → ReLU → 1×1 conv to a single logit channel.
template <typename S>
typename Tape<S>::Var side_branch(Tape<S>& tape, const BoundParams<S>& p, const std::string& prefix,
                                  typename Tape<S>::Var feat) {
  auto h = ops::conv2d(tape, feat, p[prefix + ".conv.weight"], p[prefix + ".conv.bias"], 3);
  h = ops::relu(tape, h);
  return ops::conv2d(tape, h, p[prefix + ".out.weight"], p[prefix + ".out.bias"], 1);
}

/// relu(skip(x) + conv2(relu(conv1(x)))); skip is identity unless `prefix.skip` exists.
template <typename S>
typename Tape<S>::Var residual_block(Tape<S>& tape, const BoundParams<S>& p, const ModelParams<S>& params,
                                    const std::string& prefix, typename Tape<S>::Var x) {
  auto h = ops::conv2d(tape, x, p[prefix + ".conv1.weight"], p[prefix + ".conv1.bias"], 3);
  h = ops::relu(tape, h);
  h = ops::conv2d(tape, h, p[prefix + ".conv2.weight"], p[prefix + ".conv2.bias"], 3);
  auto skip = params.contains(prefix + ".skip.weight")
                  ? ops::conv2d(tape, x, p[prefix + ".skip.weight"], p[prefix + ".skip.bias"], 1)
                  : x;
  return ops::relu(tape, ops::add(tape, h, skip));
}

}  // namespace detail

/// Fine-to-coarse and coarse-to-fine aggregation over per-step features.
/// f2c(t) = branch_f2c(t) + maxpool(f2c(t−1)), c2f(t) = branch_c2f(t) + up(c2f(t+1));
/// the missing ends are zero. All 2T maps are bilinearly restored to
/// (height, width) and fused by a 1×1 combination (f2c maps first).
template <typename S>
void bidirectional_decode(Tape<S>& tape, ForwardGraph<S>& graph,
                          const std::function<typename Tape<S>::Var(std::size_t)>& branch_f2c,
                          const std::function<typename Tape<S>::Var(std::size_t)>& branch_c2f,
                          typename Tape<S>::Var fuse_weight, const std::vector<int>& fuse_slots,
                          typename Tape<S>::Var fuse_bias, int height, int width) {
  using Var = typename Tape<S>::Var;
  const std::size_t steps = graph.features.size();
  std::vector<Var> f2c_raw(steps), c2f_raw(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var side = branch_f2c(t);
    if (t > 0) {
      Var down = ops::maxpool2(tape, f2c_raw[t - 1]);
      if (!tape.value(down).same_shape(tape.value(side)))
        throw ShapeMismatch("f2c aggregation: pooled map does not match the next scale");
      side = ops::add(tape, side, down);
    }
    f2c_raw[t] = side;
  }
  for (std::size_t r = steps; r-- > 0;) {
    Var side = branch_c2f(r);
    if (r + 1 < steps) {
      const auto& ref = tape.value(side);
      side = ops::add(tape, side, ops::resize_bilinear(tape, c2f_raw[r + 1], ref.height, ref.width));
    }
    c2f_raw[r] = side;
  }
  std::vector<Var> all;
  for (std::size_t t = 0; t < steps; ++t) graph.f2c.push_back(ops::resize_bilinear(tape, f2c_raw[t], height, width));
  for (std::size_t t = 0; t < steps; ++t) graph.c2f.push_back(ops::resize_bilinear(tape, c2f_raw[t], height, width));
  all.insert(all.end(), graph.f2c.begin(), graph.f2c.end());
  all.insert(all.end(), graph.c2f.begin(), graph.c2f.end());
  graph.fused_logit = ops::combine_maps(tape, all, fuse_weight, fuse_slots, fuse_bias);
  graph.fused = ops::sigmoid(tape, graph.fused_logit);
}

}  // namespace pedger
