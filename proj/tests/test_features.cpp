#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "afci/binary_io.hpp"
#include "afci/features.hpp"
#include "afci/rng.hpp"
#include "oracles.hpp"

using namespace afci;

namespace {

std::vector<float> random_frame(Rng& rng, std::size_t n) {
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  return x;
}

}  // namespace

TEST(Segment, TwoFullFrames) {
  std::vector<float> x(2048);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i);
  const auto frames = segment(x, FeatureConfig{});
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[1][0], 1024.0f);
  EXPECT_EQ(frames[1].size(), 1024u);
}

TEST(Segment, ShortTraceIsAnError) {
  std::vector<float> x(1023);
  EXPECT_THROW(segment(x, FeatureConfig{}), std::invalid_argument);
}

TEST(Segment, RemainderDropped) {
  std::vector<float> x(3000);
  const auto frames = segment(x, FeatureConfig{});
  EXPECT_EQ(frames.size(), 2u);
  EXPECT_EQ(x.size() - frames.size() * 1024, 952u);
}

TEST(Hanning, EndpointsAndSymmetry) {
  const auto w = hanning(1024);
  EXPECT_EQ(w[0], 0.0);
  EXPECT_EQ(w[1023], 0.0);
  for (std::size_t n = 0; n < w.size(); ++n) EXPECT_NEAR(w[n], w[1023 - n], 1e-15);
  EXPECT_DOUBLE_EQ(w[512], 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * 512.0 / 1023.0)));
}

TEST(Dft, ZerosInZerosOut) {
  std::vector<double> x(1024, 0.0);
  for (const auto& v : dft(std::span<const double>(x))) EXPECT_EQ(std::abs(v), 0.0);
}

TEST(Dft, BinAlignedCosine) {
  const std::size_t n = 1024;
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = std::cos(2.0 * std::numbers::pi * 8.0 * t / n);
  const auto X = dft(std::span<const double>(x));
  EXPECT_NEAR(std::abs(X[8]), n / 2.0, 1e-9);
  EXPECT_NEAR(std::abs(X[n - 8]), n / 2.0, 1e-9);
  for (std::size_t k = 0; k < n; ++k) {
    if (k == 8 || k == n - 8) continue;
    EXPECT_LT(std::abs(X[k]), 1e-9) << k;
  }
}

TEST(Dft, MatchesNaiveOracleOnRandomFrames) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(1024);
    for (auto& v : x) v = rng.normal();
    const auto fast = dft(std::span<const double>(x));
    const auto slow = oracle::naive_dft(x);
    double max_mag = 0, max_err = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      max_mag = std::max(max_mag, std::abs(slow[k]));
      max_err = std::max(max_err, std::abs(fast[k] - slow[k]));
    }
    EXPECT_LT(max_err / max_mag, 1e-6);
  }
}

TEST(Dft, ConjugateSymmetryForRealInput) {
  Rng rng(5);
  std::vector<double> x(256);
  for (auto& v : x) v = rng.normal();
  const auto X = dft(std::span<const double>(x));
  for (std::size_t k = 1; k < x.size(); ++k) EXPECT_LT(std::abs(X[k] - std::conj(X[x.size() - k])), 1e-9);
}

TEST(ToDb, ReferenceMagnitudes) {
  FeatureConfig cfg;
  Spectrum s(1024, 0.0);
  s[0] = 123.0;  // removed as DC
  s[1] = 1024.0;
  s[2] = 102.4;
  const auto b = to_db(s, cfg);
  ASSERT_EQ(b.size(), 512u);
  EXPECT_DOUBLE_EQ(b[0], 10.0 * std::log10(1e-12 / 1024.0));
  EXPECT_NEAR(b[1], 0.0, 1e-12);
  EXPECT_NEAR(b[2], -10.0, 1e-12);
  EXPECT_DOUBLE_EQ(b[3], 10.0 * std::log10(1e-12 / 1024.0));
}

TEST(Aggregate, SumsAdjacentBins) {
  FeatureConfig cfg;
  cfg.aggregation = 2;
  const std::vector<double> in{1, 2, 3, 4};
  EXPECT_EQ(aggregate(in, cfg), (std::vector<double>{3, 7}));
  cfg.aggregation = 1;
  EXPECT_EQ(aggregate(in, cfg), in);
  cfg.aggregation = 3;
  EXPECT_THROW(aggregate(in, cfg), std::invalid_argument);
}

TEST(Featurize, DimensionAndZeroFrame) {
  FeatureConfig cfg;
  std::vector<float> zero(1024, 0.0f);
  const auto v = featurize(zero, cfg);
  ASSERT_EQ(v.size(), 256u);
  const float expected = static_cast<float>(2 * 10.0 * std::log10(1e-12 / 1024.0));
  for (float x : v) EXPECT_EQ(x, expected);
}

TEST(Featurize, ScaleShiftsEveryBandByConstant) {
  FeatureConfig cfg;
  Rng rng(3);
  auto x = random_frame(rng, 1024);
  std::vector<float> x2(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x2[i] = 2.0f * x[i];
  const auto a = featurize(x, cfg), b = featurize(x2, cfg);
  // Band 0 holds the removed DC bin (pinned at the floor) plus bin 1.
  const double per_bin = 10.0 * std::log10(2.0);
  EXPECT_NEAR(b[0] - a[0], per_bin, 1e-4);
  for (std::size_t m = 1; m < a.size(); ++m) EXPECT_NEAR(b[m] - a[m], 2 * per_bin, 1e-4);
}

TEST(Featurize, MatchesNaivePipeline) {
  FeatureConfig cfg;
  Rng rng(17);
  const auto x = random_frame(rng, 1024);
  const auto fast = featurize(x, cfg);
  const auto slow = oracle::naive_features(x, cfg.aggregation, cfg.db_floor);
  for (std::size_t m = 0; m < fast.size(); ++m) EXPECT_NEAR(fast[m], slow[m], 1e-4);
}

TEST(Featurize, Deterministic) {
  Rng rng(21);
  const auto x = random_frame(rng, 1024);
  Featurizer f;
  EXPECT_EQ(f(x), f(x));
}

TEST(Featurize, DbOfSumModeDiffersButKeepsDimension) {
  FeatureConfig cfg;
  cfg.band_mode = BandMode::db_of_sum;
  Rng rng(2);
  const auto x = random_frame(rng, 1024);
  const auto v = featurize(x, cfg);
  EXPECT_EQ(v.size(), 256u);
  EXPECT_NE(v, featurize(x, FeatureConfig{}));
}

TEST(FeatureConfig, Validation) {
  FeatureConfig cfg;
  cfg.frame_len = 1000;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.aggregation = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.db_floor = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(FeatureFile, RoundTripAndRejectsCorruption) {
  Rng rng(8);
  FeatureDataset ds;
  for (int i = 0; i < 5; ++i) {
    std::vector<float> row(4);
    for (auto& v : row) v = static_cast<float>(rng.normal());
    ds.push(row, static_cast<std::uint8_t>(i % 2));
  }
  const auto bytes = encode_feature_dataset(ds);
  const auto back = decode_feature_dataset(bytes);
  EXPECT_EQ(back.values, ds.values);
  EXPECT_EQ(back.labels, ds.labels);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_feature_dataset(bad), FormatError);
  for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_feature_dataset(t), FormatError);
  }
}

TEST(Featurize, GoldenFrameMatchesOracleVector) {
  const std::filesystem::path dir = AFCI_TEST_DATA_DIR;
  const auto trace = decode_trace(read_file(dir / "golden_frame.afci"));
  const auto golden = load_feature_dataset(dir / "golden_features.afcf");
  ASSERT_EQ(trace.samples.size(), 1024u);
  ASSERT_EQ(golden.size(), 1u);
  const auto v = featurize(trace.samples, FeatureConfig{});
  for (std::size_t m = 0; m < v.size(); ++m) EXPECT_NEAR(v[m], golden.row(0)[m], 1e-3) << m;
  EXPECT_EQ(v, featurize(trace.samples, FeatureConfig{}));
}
