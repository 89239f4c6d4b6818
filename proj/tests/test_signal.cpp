#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "afci/binary_io.hpp"
#include "afci/features.hpp"
#include "afci/signal.hpp"
#include "oracles.hpp"

using namespace afci;

namespace {

HardwareProfile clean_profile() {
  HardwareProfile p;
  p.profile_id = "clean";
  p.dc_level = 10.0;
  p.switching_freq = 20'000.0;
  p.harmonics = {{1, 1.0}};
  p.noise_floor = 0.0;
  p.mppt_depth = 0.0;
  return p;
}

ScenarioSpec steady(double duration, std::uint64_t seed) {
  ScenarioSpec s;
  s.category = Category::steady;
  s.duration = duration;
  s.seed = seed;
  return s;
}

std::vector<double> mean_features(const SignalTrace& trace, std::size_t from_frame, std::size_t to_frame) {
  Featurizer f;
  const auto frames = segment(trace, f.config());
  std::vector<double> mean(f.config().dim(), 0.0);
  for (std::size_t i = from_frame; i < to_frame; ++i) {
    const auto v = f(frames[i]);
    for (std::size_t m = 0; m < v.size(); ++m) mean[m] += v[m];
  }
  for (auto& m : mean) m /= static_cast<double>(to_frame - from_frame);
  return mean;
}

}  // namespace

TEST(SynthNormal, ClosedFormWithoutNoise) {
  const auto p = clean_profile();
  const auto trace = synth_normal(p, steady(0.01, 1));
  ASSERT_EQ(trace.samples.size(), 2500u);
  for (std::size_t t = 0; t < trace.samples.size(); ++t) {
    const double expected = 10.0 + std::sin(2.0 * std::numbers::pi * p.switching_freq * static_cast<double>(t) / p.sample_rate);
    EXPECT_NEAR(trace.samples[t], expected, 2e-6) << t;
  }
}

TEST(SynthNormal, DeterministicForSeed) {
  const auto p = default_profile_a();
  for (Category c : kNuisanceCategories) {
    ScenarioSpec s;
    s.category = c;
    s.duration = 0.2;
    s.seed = 42;
    const auto a = encode_trace(synth_normal(p, s));
    const auto b = encode_trace(synth_normal(p, s));
    EXPECT_EQ(a, b) << category_name(c);
  }
}

TEST(SynthNormal, DominantBinAtSwitchingFrequency) {
  const auto p = default_profile_a();
  const auto trace = synth_normal(p, steady(0.05, 9));
  std::vector<double> frame(trace.samples.begin(), trace.samples.begin() + 1024);
  const auto X = oracle::naive_dft(frame);
  std::size_t best = 1;
  for (std::size_t k = 1; k < 512; ++k)
    if (std::abs(X[k]) > std::abs(X[best])) best = k;
  const double expected_bin = p.switching_freq / p.sample_rate * 1024.0;
  EXPECT_LE(std::abs(static_cast<double>(best) - expected_bin), 1.0);
}

TEST(SynthNormal, NeverLabelsArc) {
  const auto p = default_profile_b();
  for (Category c : kNuisanceCategories) {
    ScenarioSpec s;
    s.category = c;
    s.duration = 0.1;
    s.seed = 3;
    const auto t = synth_normal(p, s);
    EXPECT_EQ(std::accumulate(t.frame_labels.begin(), t.frame_labels.end(), 0), 0);
  }
}

TEST(SynthNormal, RejectsNyquistViolation) {
  auto p = default_profile_a();
  p.switching_freq = p.sample_rate / 2;
  EXPECT_THROW(synth_normal(p, steady(0.1, 1)), std::invalid_argument);
  ScenarioSpec s = steady(0.1, 1);
  s.category = Category::arc;
  EXPECT_THROW(synth_normal(default_profile_a(), s), std::invalid_argument);
}

TEST(SynthNormal, EventTimesValidated) {
  ScenarioSpec s = steady(0.1, 1);
  s.category = Category::startup;
  s.event_times = {0.2};
  EXPECT_THROW(synth_normal(default_profile_a(), s), std::invalid_argument);
}

TEST(SynthArc, PureDcDrop) {
  auto p = clean_profile();
  p.harmonics.clear();
  ArcParams arc;
  arc.broadband_gain = 1e-9;  // must exceed the zero noise floor
  arc.burst_amp = 0.0;
  arc.dc_drop = 0.2;
  arc.onset_index = 5000;
  const auto t = synth_arc(p, arc, steady(0.1, 4));
  double mean = 0;
  for (std::size_t i = arc.onset_index; i < t.samples.size(); ++i) mean += t.samples[i];
  mean /= static_cast<double>(t.samples.size() - arc.onset_index);
  EXPECT_NEAR(mean, 8.0, 1e-6);
}

TEST(SynthArc, IdenticalToNormalBeforeOnset) {
  const auto p = default_profile_a();
  ArcParams arc;
  arc.onset_index = 30'000;
  const auto s = steady(0.2, 77);
  const auto normal = synth_normal(p, s);
  const auto faulted = synth_arc(p, arc, s);
  for (std::size_t i = 0; i < arc.onset_index; ++i) ASSERT_EQ(normal.samples[i], faulted.samples[i]) << i;
  EXPECT_NE(normal.samples[arc.onset_index + 10], faulted.samples[arc.onset_index + 10]);
  // Labels: frames overlapping [onset, end) are arc.
  for (std::size_t f = 0; f < faulted.frame_labels.size(); ++f)
    EXPECT_EQ(faulted.frame_labels[f], (f + 1) * 1024 > arc.onset_index ? 1 : 0);
}

TEST(SynthArc, OnsetAtZeroLabelsEveryFrame) {
  ArcParams arc;
  arc.onset_index = 0;
  const auto t = synth_arc(default_profile_a(), arc, steady(0.05, 1));
  for (auto l : t.frame_labels) EXPECT_EQ(l, 1);
}

TEST(SynthArc, RejectsWeakBroadbandGainAndLateOnset) {
  const auto p = default_profile_a();
  ArcParams arc;
  arc.broadband_gain = p.noise_floor;
  EXPECT_THROW(synth_arc(p, arc, steady(0.05, 1)), std::invalid_argument);
  arc = {};
  arc.onset_index = 1'000'000;
  EXPECT_THROW(synth_arc(p, arc, steady(0.05, 1)), std::invalid_argument);
}

TEST(SynthArc, ElevatesBandsAboveSwitchingFrequency) {
  const auto p = default_profile_a();
  ArcParams arc;
  arc.onset_index = 100 * 1024;
  const auto t = synth_arc(p, arc, steady(0.8, 5));
  const auto pre = mean_features(t, 0, 100);
  const auto post = mean_features(t, 100, t.frame_count());
  const double band_hz = p.sample_rate / 1024.0 * 2.0;
  std::size_t above = 0, elevated = 0;
  for (std::size_t m = 0; m < pre.size(); ++m) {
    if (static_cast<double>(m) * band_hz <= p.switching_freq) continue;
    ++above;
    elevated += post[m] > pre[m];
  }
  EXPECT_GE(static_cast<double>(elevated), 0.9 * static_cast<double>(above));
}

TEST(Suite, TableOneCountsForOneProfile) {
  const auto suite = synth_suite({default_profile_a()}, 1, 42, {0.1, kArcConditions, 1024});
  std::size_t nuisance = 0, arcs = 0;
  for (const auto& e : suite.manifest.traces) (e.is_arc ? arcs : nuisance) += 1;
  // 7 + 3 + 6 + 4 + 3 + 2 + 4 + 4 + 2 detailed operating conditions.
  EXPECT_EQ(nuisance, 35u);
  EXPECT_EQ(arcs, static_cast<std::size_t>(kArcConditions));
  int table_sum = 0;
  for (Category c : kNuisanceCategories) table_sum += sub_condition_count(c);
  EXPECT_EQ(table_sum, 35);
}

TEST(Suite, ManifestBytesReproducible) {
  const auto a = synth_suite({default_profile_a(), default_profile_b()}, 1, 9).manifest.to_json();
  const auto b = synth_suite({default_profile_a(), default_profile_b()}, 1, 9).manifest.to_json();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, synth_suite({default_profile_a(), default_profile_b()}, 1, 10).manifest.to_json());
}

TEST(Suite, ManifestFrameCountsMatchMaterializedTraces) {
  const auto suite = synth_suite({default_profile_a()}, 1, 5, {0.1, 4, 1024});
  std::size_t arc = 0, normal = 0;
  for (std::size_t i = 0; i < suite.recipes.size(); ++i) {
    const auto t = suite.materialize(i);
    EXPECT_EQ(t.frame_labels, suite.manifest.traces[i].frame_labels);
    for (auto l : t.frame_labels) (l ? arc : normal) += 1;
  }
  EXPECT_EQ(arc, suite.manifest.arc_frames());
  EXPECT_EQ(normal, suite.manifest.normal_frames());
}

TEST(Suite, RejectsZeroCount) { EXPECT_THROW(synth_suite({default_profile_a()}, 0, 1), std::invalid_argument); }

TEST(Drift, IdentityLeavesProfileUnchanged) {
  const auto p = default_profile_a();
  const auto d = apply_drift(p, DriftSpec{});
  EXPECT_EQ(d.noise_floor, p.noise_floor);
  EXPECT_EQ(d.switching_freq, p.switching_freq);
  EXPECT_EQ(d.dc_level, p.dc_level);
  EXPECT_TRUE(d.resonances.empty());
}

TEST(Drift, ScalesNoiseFloorWithoutTouchingOriginal) {
  const auto p = default_profile_a();
  DriftSpec spec;
  spec.noise_floor_scale = 3.0;
  const auto d = apply_drift(p, spec);
  EXPECT_DOUBLE_EQ(d.noise_floor, 3.0 * p.noise_floor);
  EXPECT_DOUBLE_EQ(p.noise_floor, 0.01);
  spec.noise_floor_scale = 0.0;
  EXPECT_THROW(apply_drift(p, spec), std::invalid_argument);
  spec = {};
  spec.season_gain = -1.0;
  EXPECT_THROW(apply_drift(p, spec), std::invalid_argument);
}

TEST(Drift, ShiftExceedsIntraSeedVariation) {
  const auto p = default_profile_a();
  const auto drifted = apply_drift(p, default_field_drift());
  const auto base_a = mean_features(synth_normal(p, steady(0.25, 1)), 0, 50);
  const auto base_b = mean_features(synth_normal(p, steady(0.25, 2)), 0, 50);
  const auto shifted = mean_features(synth_normal(drifted, steady(0.25, 1)), 0, 50);
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  EXPECT_GT(dist(base_a, shifted), 5 * dist(base_a, base_b));
}

TEST(TraceFile, RoundTripAndCorruption) {
  const auto t = synth_normal(default_profile_a(), steady(0.01, 1));
  const auto bytes = encode_trace(t);
  EXPECT_EQ(bytes.size(), 4u + 2 + 4 + 8 + 4 * t.samples.size());
  const auto back = decode_trace(bytes);
  EXPECT_EQ(back.samples, t.samples);
  EXPECT_EQ(back.sample_rate, t.sample_rate);
  auto bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(decode_trace(bad), FormatError);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(decode_trace(cut), FormatError);
}
