#include "afci/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace afci {

void TransferConfig::validate() const {
  if (!(alpha >= 0) || !(beta >= 0)) throw std::invalid_argument("transfer.alpha and transfer.beta must be >= 0");
  if (!(lambda >= 0)) throw std::invalid_argument("transfer.lambda must be >= 0");
  if (!(backbone_lr_ratio > 0 && backbone_lr_ratio <= 1))
    throw std::invalid_argument("transfer.backbone_lr_ratio must be in (0, 1]");
  if (!(mix_ratio >= 0)) throw std::invalid_argument("transfer.mix_ratio must be >= 0");
  if (!(head_lr > 0)) throw std::invalid_argument("transfer.head_lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("transfer.momentum must be in [0, 1)");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw std::invalid_argument("transfer.lr_decay must be in (0, 1]");
  if (plateau_patience < 1 || early_stop_patience < 1) throw std::invalid_argument("transfer patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("transfer.max_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("transfer.batch_size must be >= 1");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw std::invalid_argument("transfer.val_fraction must be in [0, 1)");
}

nlohmann::json to_json(const TransferConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"lambda", c.lambda},
          {"head_lr", c.head_lr},
          {"backbone_lr_ratio", c.backbone_lr_ratio},
          {"mix_ratio", c.mix_ratio},
          {"momentum", c.momentum},
          {"lr_decay", c.lr_decay},
          {"plateau_patience", c.plateau_patience},
          {"early_stop_patience", c.early_stop_patience},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"min_steps_per_epoch", c.min_steps_per_epoch},
          {"val_fraction", c.val_fraction},
          {"seed", c.seed}};
}

TransferConfig transfer_config_from_json(const nlohmann::json& j) {
  TransferConfig c;
  const auto known = to_json(c);
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("unknown key transfer." + k);
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.lambda = j.value("lambda", c.lambda);
  c.head_lr = j.value("head_lr", c.head_lr);
  c.backbone_lr_ratio = j.value("backbone_lr_ratio", c.backbone_lr_ratio);
  c.mix_ratio = j.value("mix_ratio", c.mix_ratio);
  c.momentum = j.value("momentum", c.momentum);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.min_steps_per_epoch = j.value("min_steps_per_epoch", c.min_steps_per_epoch);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// ---- Replay ------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(FeatureDataset rows, std::uint64_t seed) : rows_(std::move(rows)), order_(rows_.size()) {
  std::iota(order_.begin(), order_.end(), 0);
  Rng rng(seed, 61);
  shuffle(order_, rng);
}

std::vector<std::size_t> ReplayBuffer::draw(std::size_t n, Rng& rng) {
  if (n > 0 && rows_.empty()) throw std::logic_error("replay buffer is empty");
  std::vector<std::size_t> out;
  out.reserve(n);
  while (out.size() < n) {
    if (cursor_ == order_.size()) {
      shuffle(order_, rng);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

std::vector<double> MixedBatch::weights(double alpha, double beta) const {
  std::vector<double> w(labels.size(), 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (domain[i] == Domain::target) {
      w[i] = alpha / static_cast<double>(n_target);
    } else {
      w[i] = beta / static_cast<double>(n_source);
    }
  }
  return w;
}

MixedBatch mixed_batch(ReplayBuffer& replay, const FeatureDataset& target_batch, double mix_ratio, Rng& rng) {
  if (target_batch.empty()) throw std::invalid_argument("mixed batch needs target rows");
  MixedBatch b;
  b.dim = target_batch.dim;
  b.x = target_batch.values;
  for (auto l : target_batch.labels) {
    b.labels.push_back(l);
    b.domain.push_back(Domain::target);
  }
  b.n_target = target_batch.size();
  const auto extra = static_cast<std::size_t>(std::ceil(mix_ratio * static_cast<double>(b.n_target) - 1e-9));
  if (extra > 0) {
    if (replay.rows().dim != b.dim) throw std::invalid_argument("replay rows differ in width from target rows");
    b.replay_rows = replay.draw(extra, rng);
    for (auto r : b.replay_rows) {
      const auto row = replay.rows().row(r);
      b.x.insert(b.x.end(), row.begin(), row.end());
      b.labels.push_back(replay.rows().labels[r]);
      b.domain.push_back(Domain::source);
    }
  }
  b.n_source = extra;
  return b;
}

// ---- adapt ---------------------------------------------------------------------

namespace {

double f1_on(const nn::Model& m, const FeatureDataset& d) {
  return d.empty() ? 0.0 : macro_f1(confusion_at(m.predict(d.values), d.labels, 0.5));
}

double mean_ce(std::span<const float> logits, std::span<const int> labels, std::span<const Domain> domain, Domain which) {
  std::vector<double> w(labels.size(), 0.0);
  double n = 0;
  for (std::size_t i = 0; i < w.size(); ++i) n += domain[i] == which;
  if (n == 0) return 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = domain[i] == which ? 1.0 / n : 0.0;
  return nn::cross_entropy<float>(logits, 2, labels, w);
}

}  // namespace

AdaptResult adapt(const nn::Model& source_model, const FeatureDataset& source, const FeatureDataset& target,
                  const TransferConfig& cfg, const AdaptOptions& options) {
  cfg.validate();
  if (target.empty()) throw std::invalid_argument("adapt needs a non-empty target set");
  if (cfg.beta > 0 && source.empty()) throw std::invalid_argument("beta > 0 needs source rows for replay");
  if (target.count(0) == 0 || target.count(1) == 0) throw std::invalid_argument("target set needs both classes");
  if (target.dim != static_cast<std::size_t>(source_model.arch.input_dim))
    throw std::invalid_argument("target width does not match model input_dim");

  const Split tsplit = stratified_split(target.labels, cfg.val_fraction, cfg.seed);
  const FeatureDataset t_train = target.subset(tsplit.first.empty() ? tsplit.second : tsplit.first);
  const FeatureDataset t_val = tsplit.second.empty() ? t_train : target.subset(tsplit.second);
  FeatureDataset s_val;
  if (options.source_val) {
    s_val = *options.source_val;
  } else if (!source.empty()) {
    const double f = std::min(1.0, 1000.0 / static_cast<double>(source.size()));
    s_val = source.subset(stratified_sample(source.labels, f, cfg.seed + 3));
  }
  const double wsum = cfg.alpha + cfg.beta;
  auto mixed_f1 = [&](const nn::Model& m, double* tf, double* sf) {
    *tf = f1_on(m, t_val);
    *sf = s_val.empty() ? 0.0 : f1_on(m, s_val);
    if (s_val.empty() || wsum == 0) return *tf;
    return (cfg.alpha * *tf + cfg.beta * *sf) / wsum;
  };

  AdaptResult out;
  out.model = source_model;
  nn::Model model = source_model;
  const nn::ModelParams anchor = source_model.params;
  ReplayBuffer replay(source, cfg.seed);
  const double mix = cfg.beta > 0 ? cfg.mix_ratio : 0.0;
  Rng rng(cfg.seed, 53);
  nn::SgdState sgd;
  sgd.momentum = cfg.momentum;

  double tf = 0, sf = 0;
  double best = mixed_f1(source_model, &tf, &sf);
  double plateau_ref = best;
  int since_gain = 0;
  auto& h = out.history;
  h.best_val_mixed_f1 = best;
  double head_lr = cfg.head_lr;

  std::vector<std::size_t> order(t_train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::min(cfg.batch_size, t_train.size());
  const std::size_t steps = std::max((t_train.size() + bs - 1) / bs, cfg.min_steps_per_epoch);
  std::size_t step_no = 0, cursor = order.size();
  std::vector<float> xn;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto lr = nn::layerwise_lr(model.params, head_lr, cfg.backbone_lr_ratio);
    double total_sum = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<std::size_t> pick;
      for (std::size_t i = 0; i < bs; ++i) {
        if (cursor == order.size()) {
          shuffle(order, rng);
          cursor = 0;
        }
        pick.push_back(order[cursor++]);
      }
      const MixedBatch mb = mixed_batch(replay, t_train.subset(pick), mix, rng);
      if (mb.labels.size() < 2) continue;
      model.norm.apply(mb.x, xn);
      const auto w = mb.weights(cfg.alpha, cfg.beta);

      auto fwd = nn::forward<float>(model.arch, model.params, xn, mb.labels.size(), nn::Mode::train, &rng);
      auto back = nn::backward<float>(model.arch, model.params, fwd.cache, mb.labels, w);
      auto sp = nn::l2_sp(model.params, anchor);
      if (cfg.lambda > 0) nn::add_scaled(back.grads, sp.grads, cfg.lambda);

      StepAudit a;
      a.step = step_no++;
      a.epoch = epoch;
      a.l_tgt = mean_ce(fwd.logits, mb.labels, mb.domain, Domain::target);
      a.l_src = mean_ce(fwd.logits, mb.labels, mb.domain, Domain::source);
      a.l2sp = sp.penalty;
      a.total = back.loss + cfg.lambda * sp.penalty;
      a.head_lr = lr.at("head.weight");
      a.backbone_lr = lr.at("fc.weight");
      if (options.on_step) options.on_step(a);
      total_sum += a.total;

      nn::apply_update(model.params, back.grads, lr, 0.0, sgd);
      nn::update_running_stats(model.arch, model.params, fwd.cache);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.head_lr = head_lr;
    rec.backbone_lr = head_lr * cfg.backbone_lr_ratio;
    rec.mean_total = total_sum / static_cast<double>(steps);
    rec.val_mixed_f1 = mixed_f1(model, &rec.val_target_f1, &rec.val_source_f1);
    if (rec.val_mixed_f1 > best) {
      best = rec.val_mixed_f1;
      out.model = model;
      h.best_epoch = epoch;
      h.best_val_mixed_f1 = best;
    }
    if (rec.val_mixed_f1 >= plateau_ref + 1e-3) {
      plateau_ref = rec.val_mixed_f1;
      since_gain = 0;
    } else if (++since_gain >= cfg.plateau_patience) {
      rec.plateau = true;
      head_lr *= cfg.lr_decay;
      since_gain = 0;
      ++h.plateau_events;
    }
    h.epochs.push_back(rec);
    if (h.plateau_events >= cfg.early_stop_patience) {
      h.early_stopped = true;
      break;
    }
  }
  if (h.best_epoch == 0) out.model = source_model;
  out.last = std::move(model);
  out.model.params.version = source_model.params.version + "+adapt";
  return out;
}

// ---- Sweeps ---------------------------------------------------------------------

SourceSweep source_fraction_sweep(const FeatureDataset& source, std::span<const double> fractions,
                                  const nn::ArchSpec& arch, const TrainConfig& cfg) {
  cfg.validate();
  for (std::size_t i = 1; i < fractions.size(); ++i)
    if (!(fractions[i] > fractions[i - 1])) throw std::invalid_argument("sweep fractions must be strictly increasing");
  SourceSweep out;
  const Split held = stratified_split(source.labels, 0.2, cfg.seed);
  out.pool_indices = held.first;
  out.test_indices = held.second;
  const FeatureDataset pool = source.subset(held.first);
  const FeatureDataset test = source.subset(held.second);
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) throw std::invalid_argument("sweep fractions must be in (0, 1]");
    const FeatureDataset sample = pool.subset(stratified_sample(pool.labels, f, cfg.seed + 7, 0));
    if (sample.count(0) < 2 || sample.count(1) < 2)
      throw std::invalid_argument("fraction " + std::to_string(f) + " is too small for both classes");
    const Split sv = stratified_split(sample.labels, cfg.val_fraction, cfg.seed + 11);
    SourceCurvePoint p;
    p.fraction = f;
    p.n = sample.size();
    p.model = fit_model(sample.subset(sv.first), sample.subset(sv.second), arch, cfg, cfg.seed * 131);
    p.macro_f1 = evaluate(p.model, test).macro_f1;
    out.points.push_back(std::move(p));
  }
  return out;
}

SweepResult target_fraction_sweep(const nn::Model& source_model, const FeatureDataset& source_replay,
                                  const FeatureDataset& source_test, const FeatureDataset& target,
                                  std::span<const double> fractions, const TransferConfig& cfg) {
  cfg.validate();
  for (std::size_t i = 1; i < fractions.size(); ++i)
    if (!(fractions[i] > fractions[i - 1])) throw std::invalid_argument("sweep fractions must be strictly increasing");
  const Split held = stratified_split(target.labels, 0.2, cfg.seed);
  const FeatureDataset pool = target.subset(held.first);
  const FeatureDataset test = target.subset(held.second);
  SweepResult out;
  AdaptOptions opts;
  opts.source_val = source_test.empty() ? nullptr : &source_test;
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) throw std::invalid_argument("sweep fractions must be in (0, 1]");
    const FeatureDataset sample = pool.subset(stratified_sample(pool.labels, f, cfg.seed + 7, 0));
    if (sample.count(0) == 0 || sample.count(1) == 0) {
      out.diagnostics.push_back("fraction " + std::to_string(f) + " skipped: target sample of " +
                                std::to_string(sample.size()) + " rows lacks a class");
      continue;
    }
    const auto r = adapt(source_model, source_replay, sample, cfg, opts);
    const Metrics tm = evaluate(r.model, test);
    SweepPoint p;
    p.fraction = f;
    p.n_target = sample.size();
    p.target_macro_f1 = tm.macro_f1;
    p.arc_accuracy = tm.recall;
    p.source_macro_f1 = source_test.empty() ? 0.0 : evaluate(r.model, source_test).macro_f1;
    out.points.push_back(p);
  }
  return out;
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "fraction,n_target,target_macro_f1,source_macro_f1,arc_accuracy\n";
  for (const auto& p : r.points)
    os << p.fraction << ',' << p.n_target << ',' << p.target_macro_f1 << ',' << p.source_macro_f1 << ','
       << p.arc_accuracy << '\n';
  return os.str();
}

nlohmann::json to_json(const SweepResult& r) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.points)
    pts.push_back({{"fraction", p.fraction},
                   {"n_target", p.n_target},
                   {"target_macro_f1", p.target_macro_f1},
                   {"source_macro_f1", p.source_macro_f1},
                   {"arc_accuracy", p.arc_accuracy}});
  return {{"points", pts}, {"diagnostics", r.diagnostics}};
}

}  // namespace afci
