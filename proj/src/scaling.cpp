#include "afci/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace afci {

double ScalingFit::operator()(double n) const { return a * std::pow(n, -alpha) + l_inf; }

nlohmann::json to_json(const ScalingFit& f) {
  return {{"a", f.a}, {"alpha", f.alpha}, {"l_inf", f.l_inf}, {"rmse", f.rmse}};
}

std::vector<ScalePoint> scale_sweep(const FeatureDataset& data, std::span<const double> fractions,
                                    const nn::ArchSpec& arch, const TrainConfig& cfg, int repeats) {
  cfg.validate();
  if (repeats < 1) throw std::invalid_argument("scale sweep repeats must be >= 1");
  const Split held = stratified_split(data.labels, 0.2, cfg.seed);
  const FeatureDataset pool = data.subset(held.first);
  const FeatureDataset test = data.subset(held.second);
  std::vector<ScalePoint> out;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double f = fractions[i];
    if (!(f > 0 && f <= 1)) throw std::invalid_argument("scale fractions must be in (0, 1]");
    const FeatureDataset sample = pool.subset(stratified_sample(pool.labels, f, cfg.seed + 7));
    if (sample.count(0) < 2 || sample.count(1) < 2)
      throw std::invalid_argument("fraction " + std::to_string(f) + " leaves fewer than 2 rows of a class");
    const Split sv = stratified_split(sample.labels, cfg.val_fraction, cfg.seed + 11);
    const auto train_part = sample.subset(sv.first), val_part = sample.subset(sv.second);
    ScalePoint pt{f, sample.size(), 0.0, {}};
    for (int r = 0; r < repeats; ++r) {
      const auto model = fit_model(train_part, val_part, arch, cfg, cfg.seed * 131 + static_cast<std::uint64_t>(r));
      pt.repeat_losses.push_back(evaluate(model, test).loss);
      pt.loss += pt.repeat_losses.back() / repeats;
    }
    out.push_back(std::move(pt));
  }
  return out;
}

namespace {

struct LogLinear {
  double a, alpha, rmse;
};

// Regress log(L - l_inf) on log N; RMSE measured on L itself.
LogLinear solve(std::span<const ScalePoint> pts, double l_inf) {
  const double n = static_cast<double>(pts.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& p : pts) {
    const double x = std::log(static_cast<double>(p.n));
    const double y = std::log(p.loss - l_inf);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  LogLinear r{std::exp(intercept), -slope, 0.0};
  double se = 0;
  for (const auto& p : pts) {
    const double e = r.a * std::pow(static_cast<double>(p.n), -r.alpha) + l_inf - p.loss;
    se += e * e;
  }
  r.rmse = std::sqrt(se / n);
  return r;
}

}  // namespace

ScalingFit fit_scaling_law(std::span<const ScalePoint> points) {
  if (points.size() < 2) throw std::invalid_argument("scaling fit needs at least two points");
  std::set<std::size_t> ns;
  double lo = points[0].loss, hi = points[0].loss;
  for (const auto& p : points) {
    if (p.n == 0 || !(p.loss > 0) || !std::isfinite(p.loss))
      throw std::invalid_argument("scaling points need N > 0 and finite positive loss");
    ns.insert(p.n);
    lo = std::min(lo, p.loss);
    hi = std::max(hi, p.loss);
  }
  if (ns.size() != points.size()) throw std::invalid_argument("scaling points need distinct N");
  if (hi - lo <= 1e-12 * hi) throw std::invalid_argument("degenerate scaling points: all losses equal");

  auto best_at = [&](double l_inf) { return solve(points, l_inf); };
  double l_inf = 0.0;
  if (points.size() >= 4) {
    constexpr int kGrid = 400;
    const double top = lo * (1 - 1e-9);
    auto at = [&](int i) { return top * static_cast<double>(i) / kGrid; };
    int best_i = 0;
    double best_rmse = best_at(0.0).rmse;
    for (int i = 1; i < kGrid; ++i) {
      const double r = best_at(at(i)).rmse;
      if (r < best_rmse) {
        best_rmse = r;
        best_i = i;
      }
    }
    double a = at(std::max(0, best_i - 1)), b = std::min(top, at(best_i + 1));
    const double g = (std::sqrt(5.0) - 1) / 2;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = best_at(c).rmse, fd = best_at(d).rmse;
    for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, lo); ++it) {
      if (fc < fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - g * (b - a);
        fc = best_at(c).rmse;
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + g * (b - a);
        fd = best_at(d).rmse;
      }
    }
    l_inf = (a + b) / 2;
    if (best_at(l_inf).rmse > best_rmse) l_inf = at(best_i);
  }
  const auto s = best_at(l_inf);
  if (!(s.alpha > 0)) throw std::invalid_argument("losses do not decrease with N; no power law with alpha > 0");
  return {s.a, s.alpha, l_inf, s.rmse};
}

}  // namespace afci
