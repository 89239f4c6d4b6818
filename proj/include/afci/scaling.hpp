#pragma once

#include <span>
#include <vector>

#include "json.hpp"

#include "afci/features.hpp"
#include "afci/nn.hpp"
#include "afci/train.hpp"

namespace afci {

struct ScalePoint {
  double fraction = 0.0;
  std::size_t n = 0;     // training rows (train + validation)
  double loss = 0.0;     // mean over repeats of the held-out cross-entropy
  std::vector<double> repeat_losses;
};

// L(N) = a * N^-alpha + l_inf
struct ScalingFit {
  double a = 0.0, alpha = 0.0, l_inf = 0.0;
  double rmse = 0.0;
  double operator()(double n) const;
};

nlohmann::json to_json(const ScalingFit& f);

// One held-out set (20%, stratified, cfg.seed) shared by every point; each
// fraction trains `repeats` models (different init/dropout seeds) on one
// stratified subsample of the remaining pool, honouring cfg.select_by.
std::vector<ScalePoint> scale_sweep(const FeatureDataset& data, std::span<const double> fractions,
                                    const nn::ArchSpec& arch, const TrainConfig& cfg, int repeats = 1);

// Least squares over l_inf in [0, min L): coarse grid then golden-section
// refinement, each candidate solved in closed form by log-linear regression.
// With fewer than four points l_inf is pinned to 0.
ScalingFit fit_scaling_law(std::span<const ScalePoint> points);

}  // namespace afci
