#pragma once

#include <cstdint>
#include <span>

#include "json.hpp"

namespace afci {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

// Arc is the positive class. A ratio with a zero denominator is 1 when the
// class is absent from both truth and prediction, else 0.
struct Metrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, macro_f1 = 0;
  double roc_auc = 0, pr_auc = 0;
  double loss = 0;  // mean cross-entropy of the scores
  Confusion confusion;
};

nlohmann::json to_json(const Metrics& m);

enum class AucKind { roc, pr };

// ROC: trapezoid over every distinct score threshold. PR: step-wise average
// precision. Throws std::domain_error when a class is missing.
double auc(std::span<const float> scores, std::span<const std::uint8_t> labels, AucKind kind);

// A frame is predicted arc when score > threshold.
Confusion confusion_at(std::span<const float> scores, std::span<const std::uint8_t> labels, double threshold);
double macro_f1(const Confusion& c);

// AUCs are left at 0 when only one class is present.
Metrics compute_metrics(std::span<const float> scores, std::span<const std::uint8_t> labels, double threshold = 0.5);

}  // namespace afci
