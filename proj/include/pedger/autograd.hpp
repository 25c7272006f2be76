#pragma once

// Minimal reverse-mode tape over C×H×W tensors. Only the operations the two
// edge networks need are provided; convolutions lower to im2col + GEMM.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "pedger/tensor.hpp"

namespace pedger {

template <typename S>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };
  using BackwardFn = std::function<void(Tape&, const Tensor<S>& out_grad)>;

  /// With recording off no backward closures or im2col buffers are kept.
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var input(Tensor<S> value) { return push(std::move(value), false, {}); }
  Var parameter(Tensor<S> value) { return push(std::move(value), recording_, {}); }

  /// Appends an op result. `fn` runs during backward() when the result has a gradient.
  Var record(Tensor<S> value, bool requires_grad, BackwardFn fn) {
    return push(std::move(value), recording_ && requires_grad, recording_ && requires_grad ? std::move(fn) : BackwardFn{});
  }

  const Tensor<S>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated into `v`, or nullptr if nothing reached it.
  const Tensor<S>* grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.grad.data.empty() ? nullptr : &n.grad;
  }

  /// Zero-initialised gradient buffer for `v`, allocated on first use.
  Tensor<S>& grad_buffer(Var v) {
    auto& n = nodes_.at(v.id);
    if (n.grad.data.empty()) n.grad = Tensor<S>(n.value.channels, n.value.height, n.value.width);
    return n.grad;
  }

  /// Back-propagates from a scalar root with seed 1.
  void backward(Var root) {
    if (!recording_) throw InvalidArgument("tape: backward() on a non-recording tape");
    if (value(root).size() != 1) throw InvalidArgument("tape: backward() root must be a scalar");
    if (!requires_grad(root)) return;
    grad_buffer(root).data[0] = S(1);
    for (int id = root.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.backward || n.grad.data.empty()) continue;
      // Closures only touch gradients of earlier nodes; nodes_ never reallocates here.
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor<S> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(fn)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool recording_;
  std::vector<Node> nodes_;
};

namespace ops {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

namespace detail {

template <typename S>
void im2col(const Tensor<S>& x, int k, int dilation, Buffer<S>& col) {
  const int h = x.height, w = x.width, pad = dilation * (k - 1) / 2;
  const std::size_t hw = x.plane();
  col.assign(static_cast<std::size_t>(x.channels) * k * k * hw, S(0));
  for (int c = 0; c < x.channels; ++c) {
    const S* src = x.data.data() + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* dst = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dy = ky * dilation - pad, dx = kx * dilation - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h || x_lo >= x_hi) continue;
          std::copy(src + sy * w + x_lo + dx, src + sy * w + x_hi + dx, dst + y * w + x_lo);
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* col, int k, int dilation, Tensor<S>& dx) {
  const int h = dx.height, w = dx.width, pad = dilation * (k - 1) / 2;
  const std::size_t hw = dx.plane();
  for (int c = 0; c < dx.channels; ++c) {
    S* dst = dx.data.data() + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* src = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dy = ky * dilation - pad, ddx = kx * dilation - pad;
        const int x_lo = std::max(0, -ddx), x_hi = std::min(w, w - ddx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h || x_lo >= x_hi) continue;
          S* d = dst + sy * w + ddx;
          const S* s = src + y * w;
          for (int xx = x_lo; xx < x_hi; ++xx) d[xx] += s[xx];
        }
      }
    }
  }
}

struct Interp {
  int lo, hi;
  double frac;
};

// Half-pixel-centre source coordinates for resizing `in` samples to `out`.
inline std::vector<Interp> bilinear_axis(int in, int out) {
  std::vector<Interp> r(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double s = std::max(0.0, (i + 0.5) * scale - 0.5);
    int lo = std::min(static_cast<int>(s), in - 1);
    int hi = std::min(lo + 1, in - 1);
    r[i] = {lo, hi, s - lo};
  }
  return r;
}

}  // namespace detail

/// Same-padded convolution. `w` is Cout × Cin × k², `b` is Cout × 1 × 1.
template <typename S>
typename Tape<S>::Var conv2d(Tape<S>& tape, typename Tape<S>::Var x, typename Tape<S>::Var w,
                             typename Tape<S>::Var b, int kernel, int dilation = 1) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const int cin = xv.channels, cout = wv.channels;
  if (wv.height != cin || wv.width != kernel * kernel || tape.value(b).channels != cout)
    throw StructuralMismatch("conv2d: weight shape does not match input channels");
  const int hw = static_cast<int>(xv.plane());
  const int rows = cin * kernel * kernel;

  Buffer<S> col;
  const S* col_ptr = xv.data.data();
  if (kernel != 1) {
    detail::im2col(xv, kernel, dilation, col);
    col_ptr = col.data();
  }
  Tensor<S> out(cout, xv.height, xv.width);
  MatMap<S> y(out.data.data(), cout, hw);
  y.noalias() = ConstMatMap<S>(wv.data.data(), cout, rows) * ConstMatMap<S>(col_ptr, rows, hw);
  const auto& bv = tape.value(b).data;
  for (int c = 0; c < cout; ++c) y.row(c).array() += bv[c];

  const bool need = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
  if (kernel == 1) col.clear();
  return tape.record(std::move(out), need,
                     [x, w, b, kernel, dilation, cout, rows, hw, col = std::move(col)](Tape<S>& t, const Tensor<S>& g) {
                       ConstMatMap<S> gm(g.data.data(), cout, hw);
                       const S* cp = kernel == 1 ? t.value(x).data.data() : col.data();
                       if (t.requires_grad(w)) {
                         MatMap<S> dw(t.grad_buffer(w).data.data(), cout, rows);
                         dw.noalias() += gm * ConstMatMap<S>(cp, rows, hw).transpose();
                       }
                       if (t.requires_grad(b)) {
                         auto& db = t.grad_buffer(b).data;
                         for (int c = 0; c < cout; ++c) db[c] += gm.row(c).sum();
                       }
                       if (t.requires_grad(x)) {
                         ConstMatMap<S> wm(t.value(w).data.data(), cout, rows);
                         auto& dx = t.grad_buffer(x);
                         if (kernel == 1) {
                           MatMap<S>(dx.data.data(), rows, hw).noalias() += wm.transpose() * gm;
                         } else {
                           RowMatrix<S> dcol = wm.transpose() * gm;
                           detail::col2im_add(dcol.data(), kernel, dilation, dx);
                         }
                       }
                     });
}

template <typename S>
typename Tape<S>::Var relu(Tape<S>& tape, typename Tape<S>::Var x) {
  Tensor<S> out = tape.value(x);
  for (auto& v : out.data) v = v > S(0) ? v : S(0);
  return tape.record(std::move(out), tape.requires_grad(x), [x](Tape<S>& t, const Tensor<S>& g) {
    const auto& xv = t.value(x).data;
    auto& dx = t.grad_buffer(x).data;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (xv[i] > S(0)) dx[i] += g.data[i];
  });
}

template <typename S>
typename Tape<S>::Var add(Tape<S>& tape, typename Tape<S>::Var a, typename Tape<S>::Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (!av.same_shape(bv)) throw ShapeMismatch("add: operand shapes differ");
  Tensor<S> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  return tape.record(std::move(out), tape.requires_grad(a) || tape.requires_grad(b),
                     [a, b](Tape<S>& t, const Tensor<S>& g) {
                       for (auto v : {a, b}) {
                         if (!t.requires_grad(v)) continue;
                         auto& d = t.grad_buffer(v).data;
                         for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.data[i];
                       }
                     });
}

template <typename S>
typename Tape<S>::Var sigmoid(Tape<S>& tape, typename Tape<S>::Var x) {
  Tensor<S> out = tape.value(x);
  for (auto& v : out.data) v = S(1) / (S(1) + std::exp(-v));
  return tape.record(out, tape.requires_grad(x), [x, y = out.data](Tape<S>& t, const Tensor<S>& g) {
    auto& dx = t.grad_buffer(x).data;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.data[i] * y[i] * (S(1) - y[i]);
  });
}

/// 2×2 stride-2 max pooling in ceil mode (odd sides keep their last row/column).
template <typename S>
typename Tape<S>::Var maxpool2(Tape<S>& tape, typename Tape<S>::Var x) {
  const auto& xv = tape.value(x);
  const int h = xv.height, w = xv.width, oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor<S> out(xv.channels, oh, ow);
  std::vector<int> arg(out.size());
  for (int c = 0; c < xv.channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        S best = -std::numeric_limits<S>::infinity();
        int best_i = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int sy = 2 * y + dy, sx = 2 * xx + dx;
            if (sy >= h || sx >= w) continue;
            const int i = static_cast<int>(c * xv.plane()) + sy * w + sx;
            if (xv.data[i] > best) {
              best = xv.data[i];
              best_i = i;
            }
          }
        }
        const std::size_t o = c * out.plane() + static_cast<std::size_t>(y) * ow + xx;
        out.data[o] = best;
        arg[o] = best_i;
      }
    }
  }
  return tape.record(std::move(out), tape.requires_grad(x), [x, arg = std::move(arg)](Tape<S>& t, const Tensor<S>& g) {
    auto& dx = t.grad_buffer(x).data;
    for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += g.data[i];
  });
}

/// Bilinear resize to (height, width) with half-pixel centres.
template <typename S>
typename Tape<S>::Var resize_bilinear(Tape<S>& tape, typename Tape<S>::Var x, int height, int width) {
  const auto& xv = tape.value(x);
  if (xv.height == height && xv.width == width) return x;
  const auto ry = detail::bilinear_axis(xv.height, height);
  const auto rx = detail::bilinear_axis(xv.width, width);
  Tensor<S> out(xv.channels, height, width);
  for (int c = 0; c < xv.channels; ++c) {
    const S* src = xv.data.data() + c * xv.plane();
    S* dst = out.data.data() + c * out.plane();
    for (int y = 0; y < height; ++y) {
      const auto& iy = ry[y];
      const S* r0 = src + iy.lo * xv.width;
      const S* r1 = src + iy.hi * xv.width;
      const S fy = static_cast<S>(iy.frac);
      for (int xx = 0; xx < width; ++xx) {
        const auto& ix = rx[xx];
        const S fx = static_cast<S>(ix.frac);
        const S top = r0[ix.lo] + (r0[ix.hi] - r0[ix.lo]) * fx;
        const S bot = r1[ix.lo] + (r1[ix.hi] - r1[ix.lo]) * fx;
        dst[y * width + xx] = top + (bot - top) * fy;
      }
    }
  }
  return tape.record(std::move(out), tape.requires_grad(x),
                     [x, ry, rx, height, width](Tape<S>& t, const Tensor<S>& g) {
                       auto& dx = t.grad_buffer(x);
                       const int in_w = dx.width;
                       for (int c = 0; c < dx.channels; ++c) {
                         S* d = dx.data.data() + c * dx.plane();
                         const S* gs = g.data.data() + c * g.plane();
                         for (int y = 0; y < height; ++y) {
                           const auto& iy = ry[y];
                           const S fy = static_cast<S>(iy.frac);
                           for (int xx = 0; xx < width; ++xx) {
                             const auto& ix = rx[xx];
                             const S fx = static_cast<S>(ix.frac);
                             const S gv = gs[y * width + xx];
                             d[iy.lo * in_w + ix.lo] += gv * (1 - fy) * (1 - fx);
                             d[iy.lo * in_w + ix.hi] += gv * (1 - fy) * fx;
                             d[iy.hi * in_w + ix.lo] += gv * fy * (1 - fx);
                             d[iy.hi * in_w + ix.hi] += gv * fy * fx;
                           }
                         }
                       }
                     });
}

/// out = bias + Σ_j weights[slot[j]] · maps[j], a 1×1 convolution over the
/// stacked single-channel maps whose weights may be tied through `slot`.
template <typename S>
typename Tape<S>::Var combine_maps(Tape<S>& tape, const std::vector<typename Tape<S>::Var>& maps,
                                   typename Tape<S>::Var weights, const std::vector<int>& slot,
                                   typename Tape<S>::Var bias) {
  if (maps.empty() || maps.size() != slot.size()) throw InvalidArgument("combine_maps: one slot per map required");
  const auto& first = tape.value(maps.front());
  const auto& wv = tape.value(weights).data;
  Tensor<S> out(1, first.height, first.width, tape.value(bias).data.at(0));
  bool need = tape.requires_grad(weights) || tape.requires_grad(bias);
  for (std::size_t j = 0; j < maps.size(); ++j) {
    const auto& m = tape.value(maps[j]);
    if (!m.same_shape(out)) throw ShapeMismatch("combine_maps: maps must be single-channel and equally sized");
    const S wj = wv.at(slot[j]);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += wj * m.data[i];
    need = need || tape.requires_grad(maps[j]);
  }
  return tape.record(std::move(out), need, [maps, weights, slot, bias](Tape<S>& t, const Tensor<S>& g) {
    const auto& wv = t.value(weights).data;
    for (std::size_t j = 0; j < maps.size(); ++j) {
      const auto& m = t.value(maps[j]).data;
      if (t.requires_grad(weights)) {
        S acc = 0;
        for (std::size_t i = 0; i < m.size(); ++i) acc += g.data[i] * m[i];
        t.grad_buffer(weights).data[slot[j]] += acc;
      }
      if (t.requires_grad(maps[j])) {
        auto& d = t.grad_buffer(maps[j]).data;
        const S wj = wv[slot[j]];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += wj * g.data[i];
      }
    }
    if (t.requires_grad(bias)) {
      S acc = 0;
      for (auto v : g.data) acc += v;
      t.grad_buffer(bias).data[0] += acc;
    }
  });
}

/// Sum of scalar vars.
template <typename S>
typename Tape<S>::Var sum_scalars(Tape<S>& tape, const std::vector<typename Tape<S>::Var>& terms) {
  if (terms.empty()) throw InvalidArgument("sum_scalars: no terms");
  auto acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(tape, acc, terms[i]);
  return acc;
}

}  // namespace ops
}  // namespace pedger
