#pragma once

// Boundary evaluation: test-time activation, NMS thinning, tolerance-based
// one-to-one matching, and the ODS/OIS precision-recall sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <ostream>
#include <vector>

#include "pedger/core.hpp"

namespace pedger {

/// e^{x−0.5} / (e^{x−0.5} + e^{−x+0.5}), evaluated as σ(2x−1) for stability.
inline double test_activation(double x) {
  const double z = 2.0 * x - 1.0;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline ProbMap test_activation(const Grid<double>& logits) {
  ProbMap out(logits.height(), logits.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = test_activation(logits[i]);
  return out;
}

struct NmsConfig {
  int orientation_radius = 4;  // triangle smoothing before orientation estimation
  int suppression_radius = 1;  // neighbours sampled at ±1..r along the normal
  double multiplier = 1.01;    // a pixel survives ties within this factor
};

namespace detail {

inline Grid<double> triangle_smooth(const Grid<double>& in, int r) {
  if (r <= 0) return in;
  std::vector<double> kernel(2 * r + 1);
  double norm = 0.0;
  for (int i = -r; i <= r; ++i) norm += kernel[i + r] = r + 1 - std::abs(i);
  for (auto& k : kernel) k /= norm;
  const int h = in.height(), w = in.width();
  Grid<double> tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += kernel[i + r] * in(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += kernel[i + r] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

// Central differences inside, one-sided at the border.
inline void gradient(const Grid<double>& f, Grid<double>& gx, Grid<double>& gy) {
  const int h = f.height(), w = f.width();
  gx = Grid<double>(h, w);
  gy = Grid<double>(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
      const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
      gx(y, x) = x1 > x0 ? (f(y, x1) - f(y, x0)) / (x1 - x0) : 0.0;
      gy(y, x) = y1 > y0 ? (f(y1, x) - f(y0, x)) / (y1 - y0) : 0.0;
    }
}

inline double sample_clamped(const Grid<double>& f, double x, double y) {
  const int h = f.height(), w = f.width();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = f(y0, x0) * (1 - fx) + f(y0, x1) * fx;
  const double bot = f(y1, x0) * (1 - fx) + f(y1, x1) * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace detail

/// Edge-normal angle per pixel: direction of the strongest curvature of the
/// smoothed map (Hessian eigenvector with the largest |eigenvalue|).
inline Grid<double> edge_normal_orientation(const Grid<double>& prob, int smoothing_radius) {
  const auto s = detail::triangle_smooth(prob, smoothing_radius);
  Grid<double> ox, oy, oxx, oxy_a, oyx, oyy;
  detail::gradient(s, ox, oy);
  detail::gradient(ox, oxx, oxy_a);
  detail::gradient(oy, oyx, oyy);
  Grid<double> angle(prob.height(), prob.width());
  for (std::size_t i = 0; i < angle.size(); ++i) {
    const double a = oxx[i], c = oyy[i], b = 0.5 * (oxy_a[i] + oyx[i]);
    const double theta_max = 0.5 * std::atan2(2.0 * b, a - c);
    const double mean = 0.5 * (a + c), rad = std::hypot(0.5 * (a - c), b);
    const double l_max = mean + rad, l_min = mean - rad;
    angle[i] = std::abs(l_min) > std::abs(l_max) ? theta_max + std::numbers::pi / 2 : theta_max;
  }
  return angle;
}

/// Keeps only pixels that are local maxima along their edge normal, comparing
/// against bilinearly interpolated neighbours (clamped at the border).
inline ProbMap nms_thin(const ProbMap& prob, const NmsConfig& cfg = {}) {
  const auto normal = edge_normal_orientation(prob, cfg.orientation_radius);
  ProbMap out = prob;
  for (int y = 0; y < prob.height(); ++y) {
    for (int x = 0; x < prob.width(); ++x) {
      const double e = prob(y, x);
      if (e <= 0.0) continue;
      const double ce = std::cos(normal(y, x)), se = std::sin(normal(y, x));
      const double scaled = e * cfg.multiplier;
      for (int d = -cfg.suppression_radius; d <= cfg.suppression_radius; ++d) {
        if (d == 0) continue;
        if (scaled < detail::sample_clamped(prob, x + d * ce, y + d * se)) {
          out(y, x) = 0.0;
          break;
        }
      }
    }
  }
  return out;
}

struct MatchResult {
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t ground_truth = 0;
  std::vector<std::uint8_t> pred_matched;  // per pixel, row-major
  std::vector<std::uint8_t> gt_matched;

  std::size_t tp() const { return matched; }
  std::size_t fp() const { return predicted - matched; }
  std::size_t fn() const { return ground_truth - matched; }
};

/// Maximum-cardinality one-to-one matching between predicted and ground-truth
/// edge pixels whose Euclidean distance is at most `max_dist_px` (Hopcroft–Karp).
inline MatchResult match_edges(const BinaryEdgeMap& pred, const BinaryEdgeMap& gt, double max_dist_px) {
  require_same_shape(pred, gt, "match_edges");
  if (!(max_dist_px >= 0.0)) throw InvalidArgument("match_edges: max_dist_px must be non-negative");
  const int h = pred.height(), w = pred.width();
  MatchResult r;
  r.pred_matched.assign(pred.size(), 0);
  r.gt_matched.assign(gt.size(), 0);

  std::vector<int> left_pixel, right_pixel;
  std::vector<int> right_index(gt.size(), -1);
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i]) left_pixel.push_back(static_cast<int>(i));
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i]) {
      right_index[i] = static_cast<int>(right_pixel.size());
      right_pixel.push_back(static_cast<int>(i));
    }
  r.predicted = left_pixel.size();
  r.ground_truth = right_pixel.size();
  if (left_pixel.empty() || right_pixel.empty()) return r;

  const int reach = static_cast<int>(std::floor(max_dist_px));
  const double limit = max_dist_px * max_dist_px + 1e-9;
  std::vector<std::vector<int>> adj(left_pixel.size());
  for (std::size_t l = 0; l < left_pixel.size(); ++l) {
    const int py = left_pixel[l] / w, px = left_pixel[l] % w;
    for (int dy = -reach; dy <= reach; ++dy) {
      const int y = py + dy;
      if (y < 0 || y >= h) continue;
      for (int dx = -reach; dx <= reach; ++dx) {
        const int x = px + dx;
        if (x < 0 || x >= w || dx * dx + dy * dy > limit) continue;
        const int ri = right_index[static_cast<std::size_t>(y) * w + x];
        if (ri >= 0) adj[l].push_back(ri);
      }
    }
    // Closest candidates first.
    std::sort(adj[l].begin(), adj[l].end(), [&](int a, int b) {
      auto d2 = [&](int ri) {
        const int gy = right_pixel[ri] / w - py, gx = right_pixel[ri] % w - px;
        return gx * gx + gy * gy;
      };
      const int da = d2(a), db = d2(b);
      return da != db ? da < db : a < b;
    });
  }

  const int n_left = static_cast<int>(left_pixel.size());
  const int n_right = static_cast<int>(right_pixel.size());
  constexpr int kInf = std::numeric_limits<int>::max();
  std::vector<int> match_l(n_left, -1), match_r(n_right, -1), dist(n_left);

  auto bfs = [&]() {
    std::deque<int> q;
    bool found = false;
    for (int l = 0; l < n_left; ++l) {
      if (match_l[l] < 0) {
        dist[l] = 0;
        q.push_back(l);
      } else {
        dist[l] = kInf;
      }
    }
    while (!q.empty()) {
      const int l = q.front();
      q.pop_front();
      for (int rr : adj[l]) {
        const int next = match_r[rr];
        if (next < 0) {
          found = true;
        } else if (dist[next] == kInf) {
          dist[next] = dist[l] + 1;
          q.push_back(next);
        }
      }
    }
    return found;
  };
  // Iterative DFS along the BFS layering.
  std::vector<std::size_t> cursor(n_left);
  auto dfs = [&](int root) {
    std::vector<int> stack{root};
    std::vector<int> via;
    while (!stack.empty()) {
      const int l = stack.back();
      bool advanced = false;
      while (cursor[l] < adj[l].size()) {
        const int rr = adj[l][cursor[l]++];
        const int next = match_r[rr];
        if (next < 0) {
          via.push_back(rr);
          for (std::size_t k = 0; k < stack.size(); ++k) {
            match_l[stack[k]] = via[k];
            match_r[via[k]] = stack[k];
          }
          return true;
        }
        if (dist[next] == dist[l] + 1) {
          via.push_back(rr);
          stack.push_back(next);
          advanced = true;
          break;
        }
      }
      if (!advanced) {
        dist[l] = kInf;
        stack.pop_back();
        if (!via.empty()) via.pop_back();
      }
    }
    return false;
  };
  while (bfs()) {
    std::fill(cursor.begin(), cursor.end(), 0);
    for (int l = 0; l < n_left; ++l)
      if (match_l[l] < 0) dfs(l);
  }

  for (int l = 0; l < n_left; ++l) {
    if (match_l[l] < 0) continue;
    ++r.matched;
    r.pred_matched[left_pixel[l]] = 1;
    r.gt_matched[right_pixel[match_l[l]]] = 1;
  }
  return r;
}

inline constexpr double kMaxDistBsds = 0.0075;
inline constexpr double kMaxDistNyud = 0.011;

struct EvalConfig {
  double max_dist = kMaxDistBsds;  // fraction of the image diagonal
  std::vector<double> thresholds = even_thresholds(99);
  bool apply_test_activation = true;
  bool thin = true;
  NmsConfig nms;

  static std::vector<double> even_thresholds(int n) {
    if (n < 1) throw InvalidArgument("thresholds: need at least one");
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = static_cast<double>(i + 1) / (n + 1);
    return t;
  }

  void validate() const {
    if (!(max_dist > 0.0 && max_dist < 1.0)) throw InvalidArgument("eval config: max_dist must lie in (0,1)");
    if (thresholds.empty()) throw InvalidArgument("eval config: no thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) throw InvalidArgument("eval config: thresholds must lie in (0,1)");
      if (i > 0 && thresholds[i] <= thresholds[i - 1])
        throw InvalidArgument("eval config: thresholds must be strictly increasing");
    }
  }
};

/// Benchmark counts for one image at one threshold. Recall counts are summed
/// over annotators; precision counts a prediction as correct if any annotator
/// matched it.
struct BoundaryCounts {
  std::size_t matched_gt = 0;    // Σ_a matched GT pixels of annotator a
  std::size_t total_gt = 0;      // Σ_a GT pixels of annotator a
  std::size_t matched_pred = 0;  // predictions matched by at least one annotator
  std::size_t total_pred = 0;

  std::size_t tp() const { return matched_pred; }
  std::size_t fp() const { return total_pred - matched_pred; }
  std::size_t fn() const { return total_gt - matched_gt; }

  BoundaryCounts& operator+=(const BoundaryCounts& o) {
    matched_gt += o.matched_gt;
    total_gt += o.total_gt;
    matched_pred += o.matched_pred;
    total_pred += o.total_pred;
    return *this;
  }
  friend bool operator==(const BoundaryCounts&, const BoundaryCounts&) = default;
};

struct PrfPoint {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

inline PrfPoint prf(const BoundaryCounts& c) {
  PrfPoint p;
  p.precision = c.total_pred ? static_cast<double>(c.matched_pred) / c.total_pred : 0.0;
  p.recall = c.total_gt ? static_cast<double>(c.matched_gt) / c.total_gt : 0.0;
  p.f = p.precision + p.recall > 0.0 ? 2.0 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
  return p;
}

inline BoundaryCounts boundary_counts(const BinaryEdgeMap& pred, const AnnotationStack& gt, double max_dist_px) {
  BoundaryCounts c;
  c.total_pred = pred.count();
  std::vector<std::uint8_t> any(pred.size(), 0);
  for (const auto& layer : gt.layers()) {
    const auto m = match_edges(pred, layer, max_dist_px);
    c.matched_gt += m.matched;
    c.total_gt += m.ground_truth;
    for (std::size_t i = 0; i < any.size(); ++i) any[i] |= m.pred_matched[i];
  }
  for (auto v : any) c.matched_pred += v;
  return c;
}

struct ThresholdRow {
  double threshold = 0.0;
  BoundaryCounts counts;
  PrfPoint prf;
};

struct EvalResult {
  std::vector<ThresholdRow> rows;                   // dataset-wide, one per threshold
  std::vector<std::vector<BoundaryCounts>> images;  // [image][threshold]
  double ods_f = 0.0;
  double ods_threshold = 0.0;
  PrfPoint ods;
  double ois_f = 0.0;
  PrfPoint ois;
  double ois_mean_f = 0.0;  // mean of per-image best F
};

/// Collects per-image counts; merging is associative and commutative.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {}

  void add_image(std::size_t index, std::vector<BoundaryCounts> per_threshold) {
    if (per_threshold.size() != thresholds_.size()) throw InvalidArgument("eval accumulator: threshold count mismatch");
    images_.emplace_back(index, std::move(per_threshold));
  }

  void merge(const EvalAccumulator& other) {
    if (other.thresholds_ != thresholds_) throw InvalidArgument("eval accumulator: merging different threshold sets");
    images_.insert(images_.end(), other.images_.begin(), other.images_.end());
  }

  EvalResult finish() const {
    if (images_.empty()) throw InvalidArgument("evaluate: empty dataset");
    auto ordered = images_;
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    EvalResult r;
    r.rows.resize(thresholds_.size());
    for (std::size_t t = 0; t < thresholds_.size(); ++t) r.rows[t].threshold = thresholds_[t];
    BoundaryCounts ois_counts;
    for (const auto& [index, counts] : ordered) {
      std::size_t best = 0;
      double best_f = -1.0;
      for (std::size_t t = 0; t < counts.size(); ++t) {
        r.rows[t].counts += counts[t];
        const double f = prf(counts[t]).f;
        if (f > best_f) {
          best_f = f;
          best = t;
        }
      }
      ois_counts += counts[best];
      r.ois_mean_f += best_f;
      r.images.push_back(counts);
    }
    for (std::size_t t = 0; t < r.rows.size(); ++t) {
      auto& row = r.rows[t];
      row.prf = prf(row.counts);
      if (t == 0 || row.prf.f > r.ods_f) {
        r.ods_f = row.prf.f;
        r.ods_threshold = row.threshold;
        r.ods = row.prf;
      }
    }
    r.ois_mean_f /= static_cast<double>(ordered.size());
    r.ois = prf(ois_counts);
    r.ois_f = r.ois.f;
    return r;
  }

 private:
  std::vector<double> thresholds_;
  std::vector<std::pair<std::size_t, std::vector<BoundaryCounts>>> images_;
};

inline double max_dist_pixels(double max_dist, int height, int width) {
  return max_dist * std::hypot(static_cast<double>(height), static_cast<double>(width));
}

/// Per-threshold counts for one image: thin, binarize at each threshold, match.
inline std::vector<BoundaryCounts> evaluate_image(const ProbMap& pred, const AnnotationStack& gt, const EvalConfig& cfg) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw ShapeMismatch("evaluate: prediction and ground truth differ in size");
  const ProbMap thinned = cfg.thin ? nms_thin(pred, cfg.nms) : pred;
  const double radius = max_dist_pixels(cfg.max_dist, pred.height(), pred.width());
  std::vector<BoundaryCounts> out;
  out.reserve(cfg.thresholds.size());
  BinaryEdgeMap bin(pred.height(), pred.width());
  for (double t : cfg.thresholds) {
    for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = thinned[i] >= t ? 1 : 0;
    out.push_back(boundary_counts(bin, gt, radius));
  }
  return out;
}

inline EvalResult evaluate(const std::vector<ProbMap>& preds, const std::vector<AnnotationStack>& gts,
                           const EvalConfig& cfg) {
  cfg.validate();
  if (preds.size() != gts.size()) throw InvalidArgument("evaluate: prediction and ground-truth lists differ in length");
  if (preds.empty()) throw InvalidArgument("evaluate: empty dataset");
  EvalAccumulator acc(cfg.thresholds);
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add_image(i, evaluate_image(preds[i], gts[i], cfg));
  return acc.finish();
}

/// "threshold precision recall f" per line, preceded by a '#' header.
inline void write_pr_curve(std::ostream& os, const EvalResult& r) {
  os << "# threshold precision recall f\n";
  for (const auto& row : r.rows)
    os << row.threshold << ' ' << row.prf.precision << ' ' << row.prf.recall << ' ' << row.prf.f << '\n';
  os << "# ods_f " << r.ods_f << " at " << r.ods_threshold << "\n# ois_f " << r.ois_f << "\n# ois_mean_f "
     << r.ois_mean_f << '\n';
}

}  // namespace pedger
