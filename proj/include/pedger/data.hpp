#pragma once

// Dataset ingestion (directory layout + manifest text), image file I/O, and
// the synthetic noisy-edge generator used for desk-scale experiments.
//
// Layout under a dataset root:
//   images/<split>/<id>.{png,jpg,jpeg,ppm,bmp}
//   groundTruth/<split>/<id>/<k>.png        one binary PNG per annotator
//   groundTruthClean/<split>/<id>/<k>.png   synthetic data only: noise-free labels

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pedger/core.hpp"

namespace pedger {

namespace fs = std::filesystem;

enum class DatasetKind { bsds, nyud, synth };
enum class Split { train, val, test };

inline const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::bsds: return "bsds";
    case DatasetKind::nyud: return "nyud";
    default: return "synth";
  }
}
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}
inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "bsds") return DatasetKind::bsds;
  if (s == "nyud") return DatasetKind::nyud;
  if (s == "synth") return DatasetKind::synth;
  throw InvalidArgument("unknown dataset kind '" + s + "' (expected bsds, nyud or synth)");
}
inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split '" + s + "' (expected train, val or test)");
}

/// Binarization threshold for the annotator consensus of a dataset kind.
/// Singly-annotated data binarizes identically for any threshold in (0,1].
inline double gt_threshold_for(DatasetKind) { return kBsdsGtThreshold; }

// ---------------------------------------------------------------------------
// Image files

inline Image read_image(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw LoadError("cannot read image '" + path.string() + "'");
  Image img(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c] / 255.0f;  // BGR → RGB
  }
  return img;
}

inline void write_image(const fs::path& path, const Image& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c)
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
  }
  if (!cv::imwrite(path.string(), m)) throw LoadError("cannot write image '" + path.string() + "'");
}

/// Any nonzero pixel counts as an edge.
inline BinaryEdgeMap read_binary_map(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw LoadError("cannot read annotation '" + path.string() + "'");
  BinaryEdgeMap b(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) b(y, x) = row[x] ? 1 : 0;
  }
  return b;
}

inline void write_binary_map(const fs::path& path, const BinaryEdgeMap& b) {
  cv::Mat m(b.height(), b.width(), CV_8UC1);
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x) m.at<std::uint8_t>(y, x) = b(y, x) ? 255 : 0;
  if (!cv::imwrite(path.string(), m)) throw LoadError("cannot write annotation '" + path.string() + "'");
}

/// 8-bit grayscale, value = round(255·p).
inline void write_prob_image(const fs::path& path, const Grid<double>& p) {
  cv::Mat m(p.height(), p.width(), CV_8UC1);
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x)
      m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(p(y, x), 0.0, 1.0) * 255.0));
  if (!cv::imwrite(path.string(), m)) throw LoadError("cannot write probability map '" + path.string() + "'");
}

inline ProbMap read_prob_image(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw LoadError("cannot read probability map '" + path.string() + "'");
  ProbMap p(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) p(y, x) = m.at<std::uint8_t>(y, x) / 255.0;
  return p;
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  std::string id;
  fs::path image;
  std::vector<fs::path> annotations;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  fs::path root;
  Split split = Split::train;
  DatasetKind kind = DatasetKind::bsds;
  std::vector<ManifestEntry> entries;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline constexpr const char* kManifestTag = "pedger-manifest";
inline constexpr int kManifestVersion = 1;

inline bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm" || ext == ".bmp";
}

/// Scans the directory layout. Entries are sorted by id.
inline DatasetManifest load_manifest(const fs::path& root, DatasetKind kind, Split split,
                                     const std::string& annotation_dir = "groundTruth") {
  const fs::path image_dir = root / "images" / to_string(split);
  const fs::path gt_dir = root / annotation_dir / to_string(split);
  if (!fs::is_directory(image_dir)) throw LoadError("missing image directory '" + image_dir.string() + "'");
  if (!fs::is_directory(gt_dir)) throw LoadError("missing annotation directory '" + gt_dir.string() + "'");
  DatasetManifest m{root, split, kind, {}};
  for (const auto& f : fs::directory_iterator(image_dir)) {
    if (!f.is_regular_file() || !is_image_file(f.path())) continue;
    ManifestEntry e{f.path().stem().string(), fs::relative(f.path(), root), {}};
    const fs::path ann = gt_dir / e.id;
    if (!fs::is_directory(ann)) throw LoadError("no annotations for '" + e.id + "' (expected '" + ann.string() + "')");
    for (const auto& a : fs::directory_iterator(ann))
      if (a.is_regular_file() && is_image_file(a.path())) e.annotations.push_back(fs::relative(a.path(), root));
    if (e.annotations.empty()) throw LoadError("annotation directory '" + ann.string() + "' is empty");
    std::sort(e.annotations.begin(), e.annotations.end());
    m.entries.push_back(std::move(e));
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return m;
}

/// Tab-separated: header line, then "id<TAB>image<TAB>ann1<TAB>ann2...". Paths are relative to the root.
inline void write_manifest(std::ostream& os, const DatasetManifest& m) {
  os << kManifestTag << '\t' << kManifestVersion << '\t' << to_string(m.kind) << '\t' << to_string(m.split) << '\n';
  for (const auto& e : m.entries) {
    os << e.id << '\t' << e.image.generic_string();
    for (const auto& a : e.annotations) os << '\t' << a.generic_string();
    os << '\n';
  }
}

inline DatasetManifest read_manifest(std::istream& is, const fs::path& root) {
  std::string line;
  if (!std::getline(is, line)) throw LoadError("manifest: empty file");
  std::istringstream head(line);
  std::string tag, kind, split;
  int version = 0;
  head >> tag >> version >> kind >> split;
  if (tag != kManifestTag || version != kManifestVersion) throw LoadError("manifest: unsupported header '" + line + "'");
  DatasetManifest m{root, parse_split(split), parse_dataset_kind(kind), {}};
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (cols.size() < 3) throw LoadError("manifest: entry '" + cols.front() + "' has no annotations");
    ManifestEntry e{cols[0], cols[1], {}};
    for (std::size_t i = 2; i < cols.size(); ++i) e.annotations.emplace_back(cols[i]);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline Sample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
  const fs::path img_path = m.root / e.image;
  if (!fs::exists(img_path)) throw LoadError("missing image '" + img_path.string() + "'");
  Image img = read_image(img_path);
  std::vector<BinaryEdgeMap> layers;
  for (const auto& a : e.annotations) {
    const fs::path ap = m.root / a;
    if (!fs::exists(ap)) throw LoadError("missing annotation '" + ap.string() + "'");
    layers.push_back(read_binary_map(ap));
    if (layers.back().height() != img.height() || layers.back().width() != img.width())
      throw LoadError("annotation '" + ap.string() + "' does not match its image size");
  }
  if (layers.empty()) throw LoadError("entry '" + e.id + "' has no annotations");
  return make_sample(std::move(img), AnnotationStack(std::move(layers)), e.id, gt_threshold_for(m.kind));
}

inline std::vector<Sample> load_samples(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_sample(m, e));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic noisy-edge data

struct SynthConfig {
  int image_size = 64;
  int count = 200;
  int min_shapes = 3;
  int max_shapes = 6;
  double noise_rate = 0.2;  // ρ
  bool drop_edges = true;
  bool spurious_texture = true;
  bool jitter = true;
  int annotators = 1;
  double texture_probability = 0.4;
  double pixel_noise = 0.02;
  std::uint64_t seed = 1;
  std::string split = "train";

  void validate() const {
    if (image_size < kMinImageSide) throw InvalidArgument("synth: image_size must be at least 16");
    if (count < 1) throw InvalidArgument("synth: count must be positive");
    if (min_shapes < 1 || max_shapes < min_shapes) throw InvalidArgument("synth: invalid shape range");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw InvalidArgument("synth: noise_rate must lie in [0,1)");
    if (annotators < 1) throw InvalidArgument("synth: need at least one annotator");
  }
};

struct SynthStats {
  std::size_t clean_edge_pixels = 0;  // summed over images and annotators
  std::size_t corrupted = 0;          // clean edge pixels dropped or displaced
  std::size_t dropped = 0;
  std::size_t jittered = 0;
  std::size_t spurious = 0;           // texture pixels added as edges
};

struct SynthDataset {
  std::vector<Sample> clean;
  std::vector<Sample> noisy;
  SynthStats stats;
};

namespace detail {

struct Shape {
  bool ellipse = true;
  double cx = 0, cy = 0, a = 0, b = 0, angle = 0;
  std::vector<std::pair<double, double>> poly;
  std::array<float, 3> color{};
  std::array<float, 3> alt{};
  bool textured = false;
  double tex_freq = 0, tex_angle = 0;

  bool inside(double x, double y) const {
    if (ellipse) {
      const double dx = x - cx, dy = y - cy, c = std::cos(angle), s = std::sin(angle);
      const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
      return u * u + v * v <= 1.0;
    }
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const auto [xi, yi] = poly[i];
      const auto [xj, yj] = poly[j];
      if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
    }
    return in;
  }

  /// Stripe phase (0/1) for textured fills.
  int stripe(double x, double y) const {
    const double t = (x * std::cos(tex_angle) + y * std::sin(tex_angle)) * tex_freq;
    return static_cast<int>(std::floor(t)) & 1;
  }
};

template <typename Rng>
std::array<float, 3> random_color(Rng& rng) {
  std::uniform_real_distribution<float> u(0.05f, 0.95f);
  return {u(rng), u(rng), u(rng)};
}

template <typename Rng>
Shape random_shape(Rng& rng, int size, double texture_probability, bool background) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Shape s;
  s.color = random_color(rng);
  // Texture alternates with a shifted shade of the fill.
  const float shift = static_cast<float>(0.15 + 0.15 * u(rng)) * (u(rng) < 0.5 ? -1.0f : 1.0f);
  for (int c = 0; c < 3; ++c) s.alt[c] = std::clamp(s.color[c] + shift, 0.0f, 1.0f);
  s.textured = u(rng) < texture_probability;
  s.tex_freq = 0.25 + 0.2 * u(rng);
  s.tex_angle = u(rng) * std::numbers::pi;
  if (background) return s;
  s.ellipse = u(rng) < 0.5;
  s.cx = size * (0.15 + 0.7 * u(rng));
  s.cy = size * (0.15 + 0.7 * u(rng));
  const double r = size * (0.12 + 0.2 * u(rng));
  if (s.ellipse) {
    s.a = r;
    s.b = r * (0.5 + 0.5 * u(rng));
    s.angle = u(rng) * std::numbers::pi;
  } else {
    const int k = 3 + static_cast<int>(u(rng) * 4);
    std::vector<double> angles(k);
    for (auto& a : angles) a = u(rng) * 2.0 * std::numbers::pi;
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double rr = r * (0.7 + 0.3 * u(rng));
      s.poly.emplace_back(s.cx + rr * std::cos(a), s.cy + rr * std::sin(a));
    }
  }
  return s;
}

struct Rendered {
  Image image;
  BinaryEdgeMap edges;    // true region boundaries
  BinaryEdgeMap texture;  // stripe boundaries inside textured regions, excluding true edges
};

template <typename Rng>
Rendered render_scene(Rng& rng, const SynthConfig& cfg) {
  const int n = cfg.image_size;
  std::uniform_int_distribution<int> shape_count(cfg.min_shapes, cfg.max_shapes);
  std::vector<Shape> shapes{random_shape(rng, n, cfg.texture_probability, true)};
  const int k = shape_count(rng);
  for (int i = 0; i < k; ++i) shapes.push_back(random_shape(rng, n, cfg.texture_probability, false));

  auto top_shape = [&](double x, double y) {
    for (int i = static_cast<int>(shapes.size()) - 1; i > 0; --i)
      if (shapes[i].inside(x, y)) return i;
    return 0;
  };

  Rendered out{Image(n, n), BinaryEdgeMap(n, n), BinaryEdgeMap(n, n)};
  Grid<int> label(n, n), phase(n, n);
  constexpr int kSuper = 4;
  std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.pixel_noise));
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      std::array<float, 3> acc{};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper, py = y + (sy + 0.5) / kSuper;
          const auto& s = shapes[top_shape(px, py)];
          const auto& col = s.textured && s.stripe(px, py) ? s.alt : s.color;
          for (int c = 0; c < 3; ++c) acc[c] += col[c];
        }
      }
      const int l = top_shape(x + 0.5, y + 0.5);
      label(y, x) = l;
      phase(y, x) = shapes[l].textured ? shapes[l].stripe(x + 0.5, y + 0.5) : 0;
      for (int c = 0; c < 3; ++c) {
        const float v = acc[c] / (kSuper * kSuper) + (cfg.pixel_noise > 0 ? noise(rng) : 0.0f);
        out.image.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const bool right = x + 1 < n && label(y, x + 1) != label(y, x);
      const bool down = y + 1 < n && label(y + 1, x) != label(y, x);
      out.edges(y, x) = right || down;
    }
  }
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (out.edges(y, x) || !shapes[label(y, x)].textured) continue;
      const bool right = x + 1 < n && label(y, x + 1) == label(y, x) && phase(y, x + 1) != phase(y, x);
      const bool down = y + 1 < n && label(y + 1, x) == label(y, x) && phase(y + 1, x) != phase(y, x);
      out.texture(y, x) = right || down;
    }
  }
  return out;
}

template <typename Rng>
BinaryEdgeMap corrupt(const Rendered& r, const SynthConfig& cfg, Rng& rng, SynthStats& stats) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = r.edges.height();
  BinaryEdgeMap out(n, n);
  std::vector<int> kinds;
  if (cfg.drop_edges) kinds.push_back(0);
  if (cfg.jitter) kinds.push_back(1);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      if (!r.edges(y, x)) continue;
      ++stats.clean_edge_pixels;
      if (kinds.empty() || u(rng) >= cfg.noise_rate) {
        out(y, x) = 1;
        continue;
      }
      ++stats.corrupted;
      const int kind = kinds[std::min<std::size_t>(kinds.size() - 1, static_cast<std::size_t>(u(rng) * kinds.size()))];
      if (kind == 0) {
        ++stats.dropped;
        continue;
      }
      ++stats.jittered;
      static constexpr int kOffsets[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
      const auto* o = kOffsets[std::min(7, static_cast<int>(u(rng) * 8))];
      out(std::clamp(y + o[0], 0, n - 1), std::clamp(x + o[1], 0, n - 1)) = 1;
    }
  }
  if (cfg.spurious_texture) {
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (r.texture(y, x) && u(rng) < cfg.noise_rate) {
          ++stats.spurious;
          out(y, x) = 1;
        }
  }
  return out;
}

inline std::string synth_id(const std::string& split, int index) {
  std::ostringstream os;
  os << "synth_" << split << '_' << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

}  // namespace detail

/// Renders random anti-aliased ellipses and polygons (some with striped
/// texture) and derives pixel-aligned clean and noisy label sets.
inline SynthDataset synthesize(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SynthDataset ds;
  for (int i = 0; i < cfg.count; ++i) {
    auto scene = detail::render_scene(rng, cfg);
    std::vector<BinaryEdgeMap> clean_layers(cfg.annotators, scene.edges);
    std::vector<BinaryEdgeMap> noisy_layers;
    for (int a = 0; a < cfg.annotators; ++a) noisy_layers.push_back(detail::corrupt(scene, cfg, rng, ds.stats));
    const std::string id = detail::synth_id(cfg.split, i);
    ds.clean.push_back(make_sample(scene.image, AnnotationStack(std::move(clean_layers)), id));
    ds.noisy.push_back(make_sample(std::move(scene.image), AnnotationStack(std::move(noisy_layers)), id));
  }
  return ds;
}

/// Writes one split of a synthetic dataset into the directory layout plus a
/// manifest file (manifest_<split>.tsv) for both label sets.
inline void save_synthetic(const fs::path& root, const SynthDataset& ds, Split split) {
  const std::string sp = to_string(split);
  fs::create_directories(root / "images" / sp);
  for (std::size_t i = 0; i < ds.noisy.size(); ++i) {
    const auto& noisy = ds.noisy[i];
    write_image(root / "images" / sp / (noisy.identifier + ".png"), noisy.image);
    for (const auto& [dir, sample] : {std::pair{"groundTruth", &noisy}, std::pair{"groundTruthClean", &ds.clean[i]}}) {
      const fs::path d = root / dir / sp / noisy.identifier;
      fs::create_directories(d);
      for (std::size_t a = 0; a < sample->annotations.annotators(); ++a)
        write_binary_map(d / (std::to_string(a) + ".png"), sample->annotations.layer(a));
    }
  }
  std::ofstream(root / ("manifest_" + sp + ".tsv")) << [&] {
    std::ostringstream os;
    write_manifest(os, load_manifest(root, DatasetKind::synth, split));
    return os.str();
  }();
}

}  // namespace pedger
