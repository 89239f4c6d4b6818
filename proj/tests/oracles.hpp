#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the code paths it is used to check.

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace afci::oracle {

// O(L^2) DFT straight from the definition.
inline std::vector<std::complex<double>> naive_dft(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t mod n first so the angle stays small and accurate.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
  return out;
}

// Feature vector computed through the naive DFT with the window formula
// evaluated inline.
inline std::vector<double> naive_features(std::span<const float> frame, std::size_t aggregation, double db_floor) {
  const std::size_t len = frame.size();
  std::vector<double> xw(len);
  for (std::size_t n = 0; n < len; ++n) {
    const double w = n + 1 == len ? 0.0
                                  : 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                                          static_cast<double>(len - 1)));
    xw[n] = frame[n] * w;
  }
  auto spec = naive_dft(xw);
  spec[0] = 0;
  std::vector<double> out(len / (2 * aggregation), 0.0);
  for (std::size_t k = 0; k < len / 2; ++k)
    out[k / aggregation] += 10.0 * std::log10(std::max(std::abs(spec[k]), db_floor) / static_cast<double>(len));
  return out;
}

// Probability that a random positive outranks a random negative (ties count
// one half), by enumerating every pair.
inline double pairwise_roc_auc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion recount(std::span<const double> scores, std::span<const int> labels, double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    if (pred && labels[i] == 1) ++c.tp;
    else if (pred) ++c.fp;
    else if (labels[i] == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Central difference of f at x along coordinate i.
template <class F>
double central_difference(F&& f, std::vector<double>& x, std::size_t i, double eps) {
  const double keep = x[i];
  x[i] = keep + eps;
  const double up = f(x);
  x[i] = keep - eps;
  const double down = f(x);
  x[i] = keep;
  return (up - down) / (2 * eps);
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

}  // namespace afci::oracle
