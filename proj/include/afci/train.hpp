#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "afci/features.hpp"
#include "afci/metrics.hpp"
#include "afci/nn.hpp"
#include "afci/rng.hpp"

namespace afci {

enum class Selection { macro_f1, loss, last };

struct TrainConfig {
  int epochs = 12;
  std::size_t batch_size = 64;
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_decay = 0.5;       // multiplier applied on a validation plateau
  int plateau_patience = 2;    // epochs without macro-F1 gain >= 1e-3
  int early_stop_patience = 4; // epochs without a new best snapshot
  double val_fraction = 0.1;   // of each training split
  int folds = 5;
  std::uint64_t seed = 1;
  // Epochs are raised so that at least this many SGD steps run (0 = off).
  std::size_t min_steps = 0;
  // Snapshot criterion: validation macro-F1 (ties to lower loss), loss alone,
  // or the final epoch with early stopping disabled.
  Selection select_by = Selection::macro_f1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Stratified partition of [0, n) into k folds (per-class round robin after a
// seeded shuffle). Every fold gets both classes when each class has >= k rows.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const std::uint8_t> labels, int k,
                                                       std::uint64_t seed);

struct Split {
  std::vector<std::size_t> first, second;
};
// Stratified split; `second` receives round(fraction * class count) of each class.
Split stratified_split(std::span<const std::uint8_t> labels, double fraction, std::uint64_t seed);
// Stratified subsample of round(fraction * class count) per class, but at
// least `min_per_class` of each class that is present.
std::vector<std::size_t> stratified_sample(std::span<const std::uint8_t> labels, double fraction, std::uint64_t seed,
                                           std::size_t min_per_class = 1);

struct StepLoss {
  double data = 0.0;     // weighted cross-entropy
  double penalty = 0.0;  // unscaled L2-SP
  double total = 0.0;    // data + lambda * penalty
};

// One SGD update on pre-normalized rows. Also refreshes the BN running stats.
// `anchor` (with `lambda`) adds the L2-SP term.
StepLoss sgd_step(nn::Model& model, std::span<const float> x, std::span<const int> labels,
                  std::span<const double> weights, const nn::LrMap& lr, double weight_decay, nn::SgdState& state,
                  Rng& rng, const nn::ModelParams* anchor = nullptr, double lambda = 0.0);

Metrics evaluate(const nn::Model& model, const FeatureDataset& data);

struct FitLog {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_macro_f1 = 0.0;
  std::vector<double> lr_history;
};

// Trains a fresh model on `train`, early-stopping on `val` macro-F1 (ties go to
// the lower validation loss). Returns the best snapshot.
nn::Model fit_model(const FeatureDataset& train, const FeatureDataset& val, const nn::ArchSpec& arch,
                    const TrainConfig& cfg, std::uint64_t seed, FitLog* log = nullptr);

struct FoldResult {
  Metrics test;
  FitLog log;
  std::vector<std::size_t> test_indices;
};

struct TrainResult {
  nn::Model model;  // best fold by test macro-F1
  std::size_t best_fold = 0;
  std::vector<FoldResult> folds;
};

// folds == 1 holds out a stratified 20% test split instead.
TrainResult train(const FeatureDataset& data, const nn::ArchSpec& arch, const TrainConfig& cfg);

}  // namespace afci
