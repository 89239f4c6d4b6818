#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "afci/features.hpp"
#include "afci/metrics.hpp"
#include "afci/nn.hpp"
#include "afci/rng.hpp"
#include "afci/train.hpp"

namespace afci {

struct TransferConfig {
  double alpha = 1.0;    // target loss weight
  double beta = 0.5;     // source replay loss weight
  double lambda = 1e-4;  // L2-SP weight
  double head_lr = 0.01;
  double backbone_lr_ratio = 0.1;
  double mix_ratio = 1.0;  // replay rows per target row in each step
  double momentum = 0.9;
  double lr_decay = 0.5;
  int plateau_patience = 3;     // epochs without mixed macro-F1 gain >= 1e-3
  int early_stop_patience = 5;  // plateau events before stopping
  int max_epochs = 30;
  std::size_t batch_size = 32;  // target rows per step
  std::size_t min_steps_per_epoch = 4;  // tiny target sets are cycled to reach this
  double val_fraction = 0.2;    // of the target set, stratified
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TransferConfig& c);
TransferConfig transfer_config_from_json(const nlohmann::json& j);

// Source rows retained for replay. Draws walk a shuffled order without
// replacement and reshuffle once it is exhausted.
class ReplayBuffer {
 public:
  ReplayBuffer(FeatureDataset rows, std::uint64_t seed);
  const FeatureDataset& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  std::vector<std::size_t> draw(std::size_t n, Rng& rng);

 private:
  FeatureDataset rows_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

enum class Domain : std::uint8_t { target = 0, source = 1 };

struct MixedBatch {
  std::size_t dim = 0;
  std::vector<float> x;  // raw (un-normalized) rows
  std::vector<int> labels;
  std::vector<Domain> domain;
  std::size_t n_target = 0, n_source = 0;
  std::vector<std::size_t> replay_rows;  // buffer indices drawn for this batch

  // alpha / N_t on target rows, beta / N_s on source rows.
  std::vector<double> weights(double alpha, double beta) const;
};

// Target rows followed by ceil(mix_ratio * |target|) replay rows.
MixedBatch mixed_batch(ReplayBuffer& replay, const FeatureDataset& target_batch, double mix_ratio, Rng& rng);

struct StepAudit {
  std::size_t step = 0;
  int epoch = 0;
  double l_tgt = 0, l_src = 0, l2sp = 0;
  double total = 0;  // as optimized: alpha*l_tgt + beta*l_src + lambda*l2sp
  double head_lr = 0, backbone_lr = 0;
};

struct EpochRecord {
  int epoch = 0;
  double head_lr = 0, backbone_lr = 0;
  double val_target_f1 = 0, val_source_f1 = 0, val_mixed_f1 = 0;
  double mean_total = 0;
  bool plateau = false;
};

struct AdaptHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 = the unadapted source model
  double best_val_mixed_f1 = 0;
  int plateau_events = 0;
  bool early_stopped = false;
};

struct AdaptOptions {
  std::function<void(const StepAudit&)> on_step;
  // Source rows for the source half of the validation metric; defaults to a
  // slice of the replay rows when empty.
  const FeatureDataset* source_val = nullptr;
};

struct AdaptResult {
  nn::Model model;  // best-validation snapshot
  nn::Model last;   // final iterate
  AdaptHistory history;
};

// Fine-tunes a copy of `source_model` on `target` with source replay and an
// L2-SP anchor at the source weights. Validation macro-F1 is the
// (alpha, beta)-weighted mix of target and source macro-F1.
AdaptResult adapt(const nn::Model& source_model, const FeatureDataset& source, const FeatureDataset& target,
                  const TransferConfig& cfg, const AdaptOptions& options = {});

// ---- Sweeps ----------------------------------------------------------------

struct SourceCurvePoint {
  double fraction = 0;
  std::size_t n = 0;
  double macro_f1 = 0;
  nn::Model model;
};

// One model per fraction, all scored on a fixed 20% source test split.
struct SourceSweep {
  std::vector<SourceCurvePoint> points;
  std::vector<std::size_t> test_indices;
  std::vector<std::size_t> pool_indices;
};

SourceSweep source_fraction_sweep(const FeatureDataset& source, std::span<const double> fractions,
                                  const nn::ArchSpec& arch, const TrainConfig& cfg);

struct SweepPoint {
  double fraction = 0;
  std::size_t n_target = 0;
  double target_macro_f1 = 0;
  double source_macro_f1 = 0;
  double arc_accuracy = 0;  // recall of the arc class on the target test split
};

struct SweepResult {
  std::vector<SweepPoint> points;  // fractions strictly increasing
  std::vector<std::string> diagnostics;
};

// Fixed 20% target test split; each fraction adapts on a stratified sample of
// the remaining target pool. Fractions whose sample lacks a class are skipped
// with a diagnostic.
SweepResult target_fraction_sweep(const nn::Model& source_model, const FeatureDataset& source_replay,
                                  const FeatureDataset& source_test, const FeatureDataset& target,
                                  std::span<const double> fractions, const TransferConfig& cfg);

std::string sweep_csv(const SweepResult& r);
nlohmann::json to_json(const SweepResult& r);

}  // namespace afci
