#include <gtest/gtest.h>

#include <cmath>

#include "afci/transfer.hpp"
#include "toy_data.hpp"

using namespace afci;

namespace {

struct Fixture {
  FeatureDataset source, target;
  nn::Model model;
};

// Source model trained on blobs; target drawn from a shifted copy.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.source = toy::blobs(200, 32, 1.5, 1);
    TrainConfig cfg;
    cfg.epochs = 8;
    const auto sv = stratified_split(x.source.labels, 0.1, 2);
    x.model = fit_model(x.source.subset(sv.first), x.source.subset(sv.second), toy::small_arch(), cfg, 3);
    x.target = toy::blobs(60, 32, 1.5, 4, 0.8);
    return x;
  }();
  return f;
}

double displacement(const nn::ModelParams& a, const nn::ModelParams& b) {
  double s = 0;
  for (std::size_t t = 0; t < a.tensors.size(); ++t) {
    if (a.tensors[t].role == nn::Role::running_stat) continue;
    for (std::size_t i = 0; i < a.tensors[t].values.size(); ++i) {
      const double d = a.tensors[t].values[i] - b.tensors[t].values[i];
      s += d * d;
    }
  }
  return std::sqrt(s);
}

FeatureDataset rows(std::size_t n, std::size_t dim, std::uint64_t seed) { return toy::blobs(n / 2, dim, 1.0, seed); }

}  // namespace

TEST(MixedBatchTest, ZeroMixIsPureTarget) {
  ReplayBuffer replay(rows(40, 8, 1), 1);
  Rng rng(1);
  const auto b = mixed_batch(replay, rows(16, 8, 2), 0.0, rng);
  EXPECT_EQ(b.labels.size(), 16u);
  EXPECT_EQ(b.n_source, 0u);
}

TEST(MixedBatchTest, UnitMixDoublesBatchWithTags) {
  ReplayBuffer replay(rows(40, 8, 1), 1);
  Rng rng(1);
  const auto target = rows(16, 8, 2);
  const auto b = mixed_batch(replay, target, 1.0, rng);
  ASSERT_EQ(b.labels.size(), 32u);
  EXPECT_EQ(b.n_source, 16u);
  for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(b.domain[i], i < 16 ? Domain::target : Domain::source);
  for (std::size_t i = 0; i < 16; ++i) {
    const auto r = replay.rows().row(b.replay_rows[i]);
    EXPECT_TRUE(std::equal(r.begin(), r.end(), b.x.begin() + static_cast<std::ptrdiff_t>((16 + i) * 8)));
  }
  const auto w = b.weights(1.0, 0.5);
  EXPECT_DOUBLE_EQ(w[0], 1.0 / 16);
  EXPECT_DOUBLE_EQ(w[31], 0.5 / 16);
  EXPECT_THROW(mixed_batch(replay, FeatureDataset{8, {}, {}}, 1.0, rng), std::invalid_argument);
}

TEST(MixedBatchTest, ReplaySelectionIsUniform) {
  ReplayBuffer replay(rows(50, 4, 3), 2);
  Rng rng(3);
  std::vector<int> hits(50, 0);
  const auto target = rows(8, 4, 4);
  for (int i = 0; i < 1000; ++i)
    for (auto r : mixed_batch(replay, target, 0.5, rng).replay_rows) ++hits[r];
  const double expected = 1000.0 * 4 / 50;
  for (int h : hits) EXPECT_NEAR(h, expected, 0.2 * expected);
}

TEST(MixedBatchTest, DrawsWithoutReplacementUntilExhausted) {
  ReplayBuffer replay(rows(30, 4, 3), 5);
  Rng rng(1);
  auto first = replay.draw(30, rng);
  std::sort(first.begin(), first.end());
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(first[i], i);
}

TEST(Adapt, NoDataTermsStaysAtAnchor) {
  const auto& f = fixture();
  TransferConfig cfg;
  cfg.alpha = 0;
  cfg.beta = 0;
  cfg.lambda = 1e-2;
  cfg.max_epochs = 5;
  cfg.plateau_patience = 100;
  AdaptOptions opts;
  int steps = 0;
  opts.on_step = [&](const StepAudit&) { ++steps; };
  auto r = adapt(f.model, f.source, f.target, cfg, opts);
  EXPECT_GT(steps, 0);
  EXPECT_LT(displacement(r.last.params, f.model.params), 1e-3);
  EXPECT_LT(displacement(r.model.params, f.model.params), 1e-3);
}

TEST(Adapt, LargeLambdaPinsParameters) {
  const auto& f = fixture();
  TransferConfig cfg;
  // lr * 2 * lambda = 0.8 keeps the anchor pull a contraction; smaller lr
  // values drown in float32 rounding of the weights.
  cfg.head_lr = 1e-4;
  cfg.backbone_lr_ratio = 1.0;
  cfg.max_epochs = 10;
  cfg.plateau_patience = 100;
  cfg.momentum = 0.0;
  cfg.lambda = 0.0;
  const auto loose = adapt(f.model, f.source, f.target, cfg);
  cfg.lambda = 4e3;
  const auto tight = adapt(f.model, f.source, f.target, cfg);
  const double d_loose = displacement(loose.last.params, f.model.params);
  const double d_tight = displacement(tight.last.params, f.model.params);
  EXPECT_GT(d_loose, 0.0);
  EXPECT_LE(d_tight * 10, d_loose);
}

TEST(Adapt, LossTermsComposeAndAnchorStartsAtZero) {
  const auto& f = fixture();
  TransferConfig cfg;
  cfg.alpha = 0.7;
  cfg.beta = 0.4;
  cfg.lambda = 0.3;
  cfg.max_epochs = 3;
  std::vector<StepAudit> audit;
  AdaptOptions opts;
  opts.on_step = [&](const StepAudit& a) { audit.push_back(a); };
  adapt(f.model, f.source, f.target, cfg, opts);
  ASSERT_FALSE(audit.empty());
  EXPECT_EQ(audit.front().l2sp, 0.0);
  for (const auto& a : audit) {
    const double manual = cfg.alpha * a.l_tgt + cfg.beta * a.l_src + cfg.lambda * a.l2sp;
    EXPECT_NEAR(a.total, manual, 1e-5 * std::max(1.0, manual)) << "step " << a.step;
  }
  EXPECT_GT(audit.back().l2sp, 0.0);
}

TEST(Adapt, BackboneLrRatioHeldAndHalvedTogether) {
  const auto& f = fixture();
  TransferConfig cfg;
  cfg.backbone_lr_ratio = 0.25;
  cfg.plateau_patience = 1;
  cfg.early_stop_patience = 3;
  cfg.max_epochs = 12;
  std::vector<StepAudit> audit;
  AdaptOptions opts;
  opts.on_step = [&](const StepAudit& a) { audit.push_back(a); };
  const auto r = adapt(f.model, f.source, f.target, cfg, opts);
  for (const auto& a : audit) EXPECT_NEAR(a.backbone_lr / a.head_lr, 0.25, 1e-12);
  double lr = cfg.head_lr;
  for (const auto& e : r.history.epochs) {
    EXPECT_DOUBLE_EQ(e.head_lr, lr);
    EXPECT_DOUBLE_EQ(e.backbone_lr, lr * 0.25);
    if (e.plateau) lr *= cfg.lr_decay;
  }
  EXPECT_GT(r.history.plateau_events, 0);
  EXPECT_TRUE(r.history.early_stopped);
}

TEST(Adapt, SameDistributionKeepsSourceScore) {
  const auto& f = fixture();
  const auto same = toy::blobs(60, 32, 1.5, 9);
  const auto held = toy::blobs(200, 32, 1.5, 10);
  const double before = evaluate(f.model, held).macro_f1;
  const auto r = adapt(f.model, f.source, same, TransferConfig{});
  EXPECT_NEAR(evaluate(r.model, held).macro_f1, before, 0.005);
}

TEST(Adapt, RejectsBadInputs) {
  const auto& f = fixture();
  EXPECT_THROW(adapt(f.model, f.source, FeatureDataset{32, {}, {}}, {}), std::invalid_argument);
  EXPECT_THROW(adapt(f.model, FeatureDataset{32, {}, {}}, f.target, {}), std::invalid_argument);
  std::vector<std::size_t> ones;
  for (std::size_t i = 0; i < f.target.size(); ++i)
    if (f.target.labels[i]) ones.push_back(i);
  EXPECT_THROW(adapt(f.model, f.source, f.target.subset(ones), {}), std::invalid_argument);
  TransferConfig bad;
  bad.backbone_lr_ratio = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_THROW(transfer_config_from_json({{"gamma", 1}}), std::invalid_argument);
}

TEST(Sweeps, TargetSweepSkipsSingleClassFractions) {
  const auto& f = fixture();
  TransferConfig cfg;
  cfg.max_epochs = 2;
  const std::vector<double> fr{0.001, 0.5};
  const auto r = target_fraction_sweep(f.model, f.source, f.source, f.target, fr, cfg);
  ASSERT_EQ(r.points.size(), 1u);
  EXPECT_EQ(r.points[0].fraction, 0.5);
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_NE(r.diagnostics[0].find("lacks a class"), std::string::npos);
  const auto csv = sweep_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  const std::vector<double> unordered{0.5, 0.2};
  EXPECT_THROW(target_fraction_sweep(f.model, f.source, f.source, f.target, unordered, cfg), std::invalid_argument);
}

TEST(Sweeps, SourceSweepFullFractionMatchesPlainFit) {
  const auto data = toy::blobs(100, 32, 1.0, 21);
  TrainConfig cfg;
  cfg.epochs = 3;
  const std::vector<double> fr{0.5, 1.0};
  const auto s = source_fraction_sweep(data, fr, toy::small_arch(), cfg);
  ASSERT_EQ(s.points.size(), 2u);
  const auto pool = data.subset(s.pool_indices);
  const auto sv = stratified_split(pool.labels, cfg.val_fraction, cfg.seed + 11);
  const auto m = fit_model(pool.subset(sv.first), pool.subset(sv.second), toy::small_arch(), cfg, cfg.seed * 131);
  EXPECT_EQ(evaluate(m, data.subset(s.test_indices)).macro_f1, s.points[1].macro_f1);
}
