#include <gtest/gtest.h>

#include <sstream>

#include "pedger/data.hpp"

using namespace pedger;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pedger_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SynthConfig small(std::uint64_t seed, int count = 6) {
  SynthConfig c;
  c.image_size = 32;
  c.count = count;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Synth, ZeroNoiseMeansCleanLabels) {
  auto c = small(1);
  c.noise_rate = 0.0;
  auto ds = synthesize(c);
  for (std::size_t i = 0; i < ds.clean.size(); ++i) EXPECT_EQ(ds.noisy[i].annotations, ds.clean[i].annotations);
  EXPECT_EQ(ds.stats.corrupted, 0u);
  EXPECT_EQ(ds.stats.spurious, 0u);
}

TEST(Synth, DeterministicForSeed) {
  auto a = synthesize(small(7)), b = synthesize(small(7)), c = synthesize(small(8));
  for (std::size_t i = 0; i < a.noisy.size(); ++i) {
    EXPECT_EQ(a.noisy[i].image, b.noisy[i].image);
    EXPECT_EQ(a.noisy[i].annotations, b.noisy[i].annotations);
    EXPECT_EQ(a.clean[i].annotations, b.clean[i].annotations);
  }
  EXPECT_FALSE(a.noisy[0].image == c.noisy[0].image);
}

TEST(Synth, CleanAndNoisyShareImagesAndIds) {
  auto ds = synthesize(small(2));
  for (std::size_t i = 0; i < ds.clean.size(); ++i) {
    EXPECT_EQ(ds.clean[i].image, ds.noisy[i].image);
    EXPECT_EQ(ds.clean[i].identifier, ds.noisy[i].identifier);
    EXPECT_GT(ds.clean[i].gt_binary.count(), 0u);
    EXPECT_NO_THROW(ds.clean[i].image.validate());
  }
}

TEST(Synth, CorruptionRateMatchesRho) {
  auto c = small(3, 60);
  c.image_size = 64;
  c.noise_rate = 0.2;
  auto ds = synthesize(c);
  const double n = static_cast<double>(ds.stats.clean_edge_pixels);
  ASSERT_GT(n, 10000.0);
  const double sd = std::sqrt(n * 0.2 * 0.8);
  EXPECT_NEAR(static_cast<double>(ds.stats.corrupted), 0.2 * n, 4 * sd);
  EXPECT_EQ(ds.stats.dropped + ds.stats.jittered, ds.stats.corrupted);
  EXPECT_GT(ds.stats.spurious, 0u);
}

TEST(Synth, NoiseKindsCanBeDisabled) {
  auto c = small(4, 10);
  c.jitter = false;
  c.spurious_texture = false;
  auto ds = synthesize(c);
  EXPECT_EQ(ds.stats.jittered, 0u);
  EXPECT_EQ(ds.stats.spurious, 0u);
  // Only drops: noisy labels are a subset of clean ones.
  for (std::size_t i = 0; i < ds.noisy.size(); ++i)
    for (std::size_t p = 0; p < ds.noisy[i].gt_binary.size(); ++p)
      EXPECT_LE(ds.noisy[i].gt_binary[p], ds.clean[i].gt_binary[p]);
}

TEST(Synth, MultipleAnnotators) {
  auto c = small(5, 3);
  c.annotators = 4;
  auto ds = synthesize(c);
  EXPECT_EQ(ds.noisy[0].annotations.annotators(), 4u);
  EXPECT_FALSE(ds.noisy[0].annotations.layer(0) == ds.noisy[0].annotations.layer(1));
}

TEST(Synth, RejectsBadConfig) {
  auto c = small(1);
  c.noise_rate = 1.0;
  EXPECT_THROW(synthesize(c), InvalidArgument);
  c = small(1);
  c.image_size = 8;
  EXPECT_THROW(synthesize(c), InvalidArgument);
}

TEST(Loader, SaveThenLoadRoundTrips) {
  auto root = scratch("roundtrip");
  auto c = small(9, 4);
  c.annotators = 2;
  auto ds = synthesize(c);
  save_synthetic(root, ds, Split::train);
  auto noisy = load_samples(load_manifest(root, DatasetKind::synth, Split::train));
  auto clean = load_samples(load_manifest(root, DatasetKind::synth, Split::train, "groundTruthClean"));
  ASSERT_EQ(noisy.size(), ds.noisy.size());
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    EXPECT_EQ(noisy[i].identifier, ds.noisy[i].identifier);
    EXPECT_EQ(noisy[i].annotations, ds.noisy[i].annotations);
    EXPECT_EQ(clean[i].annotations, ds.clean[i].annotations);
    // 8-bit storage: pixel values agree to within rounding.
    for (std::size_t p = 0; p < noisy[i].image.pixels().size(); ++p)
      EXPECT_NEAR(noisy[i].image.pixels()[p], ds.noisy[i].image.pixels()[p], 0.5f / 255.0f + 1e-6f);
  }
  // Reloading what was loaded is exact.
  auto again = load_samples(load_manifest(root, DatasetKind::synth, Split::train));
  for (std::size_t i = 0; i < noisy.size(); ++i) EXPECT_EQ(again[i].image, noisy[i].image);
  fs::remove_all(root);
}

TEST(Loader, ManifestIsSortedAndStable) {
  auto root = scratch("sorted");
  save_synthetic(root, synthesize(small(10, 5)), Split::test);
  auto a = load_manifest(root, DatasetKind::synth, Split::test);
  auto b = load_manifest(root, DatasetKind::synth, Split::test);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.entries.size(), 5u);
  for (std::size_t i = 1; i < a.entries.size(); ++i) EXPECT_LT(a.entries[i - 1].id, a.entries[i].id);
  std::ostringstream os;
  write_manifest(os, a);
  std::istringstream is(os.str());
  EXPECT_EQ(read_manifest(is, root), a);
  EXPECT_TRUE(fs::exists(root / "manifest_test.tsv"));
  fs::remove_all(root);
}

TEST(Loader, MissingAnnotationsAreLoadErrors) {
  auto root = scratch("missing");
  save_synthetic(root, synthesize(small(11, 2)), Split::val);
  auto m = load_manifest(root, DatasetKind::synth, Split::val);
  const auto id = m.entries[0].id;
  for (const auto& f : fs::directory_iterator(root / "groundTruth" / "val" / id)) fs::remove(f.path());
  try {
    load_manifest(root, DatasetKind::synth, Split::val);
    FAIL() << "expected a load error";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find(id), std::string::npos);
  }
  fs::remove_all(root / "groundTruth" / "val" / id);
  EXPECT_THROW(load_manifest(root, DatasetKind::synth, Split::val), LoadError);
  EXPECT_THROW(load_manifest(root / "nowhere", DatasetKind::bsds, Split::train), LoadError);
  // A manifest pointing at a deleted file names the path.
  fs::remove(root / m.entries[1].image);
  try {
    load_sample(m, m.entries[1]);
    FAIL() << "expected a load error";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find(m.entries[1].image.string()), std::string::npos);
  }
  fs::remove_all(root);
}

TEST(Loader, ManifestEntryWithoutAnnotationsRejected) {
  std::istringstream is("pedger-manifest\t1\tbsds\ttrain\nabc\timages/train/abc.png\n");
  EXPECT_THROW(read_manifest(is, "/tmp"), LoadError);
  std::istringstream bad("something else\n");
  EXPECT_THROW(read_manifest(bad, "/tmp"), LoadError);
}

TEST(Loader, ParseHelpers) {
  EXPECT_EQ(parse_split("val"), Split::val);
  EXPECT_EQ(parse_dataset_kind("nyud"), DatasetKind::nyud);
  EXPECT_THROW(parse_split("dev"), InvalidArgument);
  EXPECT_THROW(parse_dataset_kind("coco"), InvalidArgument);
}
