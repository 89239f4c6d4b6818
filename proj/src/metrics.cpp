#include "afci/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace afci {
namespace {

double ratio(std::size_t num, std::size_t den, bool absent) {
  if (den == 0) return absent ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

struct ClassScores {
  double precision, recall, f1;
};

// Per-class scores treating `positive` as the class of interest.
ClassScores class_scores(std::size_t tp, std::size_t fp, std::size_t fn) {
  const bool absent = tp + fp + fn == 0;
  const double p = ratio(tp, tp + fp, absent);
  const double r = ratio(tp, tp + fn, absent);
  return {p, r, absent ? 1.0 : f1_of(p, r)};
}

}  // namespace

nlohmann::json to_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},   {"f1", m.f1},
          {"macro_f1", m.macro_f1}, {"roc_auc", m.roc_auc},     {"pr_auc", m.pr_auc},   {"loss", m.loss},
          {"tp", m.confusion.tp},   {"fp", m.confusion.fp},     {"tn", m.confusion.tn}, {"fn", m.confusion.fn}};
}

double auc(std::span<const float> scores, std::span<const std::uint8_t> labels, AucKind kind) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  const std::size_t pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw std::domain_error("AUC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double area = 0.0;
  std::size_t tp = 0, fp = 0;
  double prev_tpr = 0.0, prev_fpr = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    // Lower the threshold past one whole group of tied scores.
    const float s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp)++;
    if (kind == AucKind::roc) {
      const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
      const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
      area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2;
      prev_tpr = tpr;
      prev_fpr = fpr;
    } else {
      const double recall = static_cast<double>(tp) / static_cast<double>(pos);
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      area += (recall - prev_recall) * precision;
      prev_recall = recall;
    }
  }
  return std::clamp(area, 0.0, 1.0);
}

Confusion confusion_at(std::span<const float> scores, std::span<const std::uint8_t> labels, double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    if (labels[i]) {
      (pred ? c.tp : c.fn)++;
    } else {
      (pred ? c.fp : c.tn)++;
    }
  }
  return c;
}

double macro_f1(const Confusion& c) {
  return (class_scores(c.tp, c.fp, c.fn).f1 + class_scores(c.tn, c.fn, c.fp).f1) / 2;
}

Metrics compute_metrics(std::span<const float> scores, std::span<const std::uint8_t> labels, double threshold) {
  if (scores.empty()) throw std::invalid_argument("metrics need at least one prediction");
  Metrics m;
  m.confusion = confusion_at(scores, labels, threshold);
  const auto& c = m.confusion;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  const auto arc = class_scores(c.tp, c.fp, c.fn);
  m.precision = arc.precision;
  m.recall = arc.recall;
  m.f1 = arc.f1;
  m.macro_f1 = macro_f1(c);
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(static_cast<double>(scores[i]), 1e-7, 1.0 - 1e-7);
    loss -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  m.loss = loss / static_cast<double>(scores.size());
  if (c.tp + c.fn > 0 && c.tn + c.fp > 0) {
    m.roc_auc = auc(scores, labels, AucKind::roc);
    m.pr_auc = auc(scores, labels, AucKind::pr);
  }
  return m;
}

}  // namespace afci
