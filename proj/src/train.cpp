#include "afci/train.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <cmath>
#include <stdexcept>

namespace afci {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (folds < 1) throw std::invalid_argument("train.folds must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("train.batch_size must be >= 2");
  if (!(base_lr > 0)) throw std::invalid_argument("train.base_lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw std::invalid_argument("train.lr_decay must be in (0, 1]");
  if (plateau_patience < 1 || early_stop_patience < 1) throw std::invalid_argument("train patience must be >= 1");
  if (!(val_fraction > 0 && val_fraction < 1)) throw std::invalid_argument("train.val_fraction must be in (0, 1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"lr_decay", c.lr_decay},
          {"plateau_patience", c.plateau_patience},
          {"early_stop_patience", c.early_stop_patience},
          {"val_fraction", c.val_fraction},
          {"folds", c.folds},
          {"min_steps", c.min_steps},
          {"seed", c.seed},
          {"select_by", c.select_by == Selection::loss   ? "loss"
                        : c.select_by == Selection::last ? "last"
                                                         : "macro_f1"}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto known = to_json(c);
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("unknown key train." + k);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.folds = j.value("folds", c.folds);
  c.min_steps = j.value("min_steps", c.min_steps);
  c.seed = j.value("seed", c.seed);
  const auto sel = j.value("select_by", std::string("macro_f1"));
  if (sel != "macro_f1" && sel != "loss" && sel != "last")
    throw std::invalid_argument("train.select_by must be macro_f1, loss or last");
  c.select_by = sel == "loss" ? Selection::loss : sel == "last" ? Selection::last : Selection::macro_f1;
  c.validate();
  return c;
}

namespace {

std::array<std::vector<std::size_t>, 2> by_class(std::span<const std::uint8_t> labels, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 2> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) idx[labels[i] ? 1 : 0].push_back(i);
  Rng rng(seed, 31);
  for (auto& v : idx) shuffle(v, rng);
  return idx;
}

std::size_t class_share(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

void require_both_classes(const FeatureDataset& d, const char* what) {
  if (d.count(0) == 0 || d.count(1) == 0) throw std::invalid_argument(std::string(what) + " needs both classes");
}

}  // namespace

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const std::uint8_t> labels, int k,
                                                       std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("fold count must be >= 1");
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  for (const auto& cls : by_class(labels, seed))
    for (std::size_t i = 0; i < cls.size(); ++i) folds[i % folds.size()].push_back(cls[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

Split stratified_split(std::span<const std::uint8_t> labels, double fraction, std::uint64_t seed) {
  Split s;
  for (const auto& cls : by_class(labels, seed)) {
    const std::size_t take = class_share(cls.size(), fraction);
    s.second.insert(s.second.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(take));
    s.first.insert(s.first.end(), cls.begin() + static_cast<std::ptrdiff_t>(take), cls.end());
  }
  std::sort(s.first.begin(), s.first.end());
  std::sort(s.second.begin(), s.second.end());
  return s;
}

std::vector<std::size_t> stratified_sample(std::span<const std::uint8_t> labels, double fraction,
                                           std::uint64_t seed, std::size_t min_per_class) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("sample fraction must be in (0, 1]");
  std::vector<std::size_t> out;
  for (const auto& cls : by_class(labels, seed)) {
    if (cls.empty()) continue;
    const std::size_t take = std::min(cls.size(), std::max(min_per_class, class_share(cls.size(), fraction)));
    out.insert(out.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

StepLoss sgd_step(nn::Model& model, std::span<const float> x, std::span<const int> labels,
                  std::span<const double> weights, const nn::LrMap& lr, double weight_decay, nn::SgdState& state,
                  Rng& rng, const nn::ModelParams* anchor, double lambda) {
  auto fwd = nn::forward<float>(model.arch, model.params, x, labels.size(), nn::Mode::train, &rng);
  auto back = nn::backward<float>(model.arch, model.params, fwd.cache, labels, weights);
  StepLoss loss;
  loss.data = back.loss;
  if (anchor != nullptr && lambda > 0) {
    auto sp = nn::l2_sp(model.params, *anchor);
    loss.penalty = sp.penalty;
    nn::add_scaled(back.grads, sp.grads, lambda);
  } else if (anchor != nullptr) {
    loss.penalty = nn::l2_sp(model.params, *anchor).penalty;
  }
  loss.total = loss.data + lambda * loss.penalty;
  nn::apply_update(model.params, back.grads, lr, weight_decay, state);
  nn::update_running_stats(model.arch, model.params, fwd.cache);
  return loss;
}

Metrics evaluate(const nn::Model& model, const FeatureDataset& data) {
  if (data.empty()) throw std::invalid_argument("evaluate needs a non-empty dataset");
  if (data.dim != static_cast<std::size_t>(model.arch.input_dim))
    throw std::invalid_argument("dataset width does not match model input_dim");
  const auto scores = model.predict(data.values);
  return compute_metrics(scores, data.labels);
}

nn::Model fit_model(const FeatureDataset& train_set, const FeatureDataset& val, const nn::ArchSpec& arch,
                    const TrainConfig& cfg, std::uint64_t seed, FitLog* log) {
  cfg.validate();
  arch.validate();
  require_both_classes(train_set, "training");
  if (val.empty()) throw std::invalid_argument("validation set is empty");
  if (train_set.dim != static_cast<std::size_t>(arch.input_dim))
    throw std::invalid_argument("dataset width does not match arch input_dim");

  nn::Model model = nn::make_model(arch, seed);
  model.norm = nn::InputNorm::fit(train_set.values, train_set.dim);
  model.params.version = "fit-" + std::to_string(seed);
  std::vector<float> xn;
  model.norm.apply(train_set.values, xn);

  Rng rng(seed, 41);
  nn::SgdState sgd;
  sgd.momentum = cfg.momentum;
  double lr = cfg.base_lr;
  nn::Model best = model;
  double best_f1 = -1.0, best_loss = 0.0, plateau_ref = -1.0;
  int since_best = 0, since_gain = 0;
  FitLog local;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> bx;
  std::vector<int> by;
  const std::size_t dim = train_set.dim;
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, (order.size() + cfg.batch_size - 2) / cfg.batch_size);
  const int epochs = std::max<int>(cfg.epochs, static_cast<int>((cfg.min_steps + steps_per_epoch - 1) / steps_per_epoch));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle(order, rng);
    const auto lr_map = nn::uniform_lr(model.params, lr);
    for (std::size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      if (n < 2) break;
      bx.resize(n * dim);
      by.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = order[start + i];
        std::copy_n(xn.begin() + static_cast<std::ptrdiff_t>(r * dim), dim, bx.begin() + static_cast<std::ptrdiff_t>(i * dim));
        by[i] = train_set.labels[r];
      }
      sgd_step(model, bx, by, {}, lr_map, cfg.weight_decay, sgd, rng);
    }
    local.lr_history.push_back(lr);
    local.epochs_run = epoch + 1;
    if (!nn::all_finite(model.params)) break;

    const Metrics m = evaluate(model, val);
    bool better = m.macro_f1 > best_f1 || (m.macro_f1 == best_f1 && m.loss < best_loss);
    if (cfg.select_by == Selection::loss) better = best_f1 < 0 || m.loss < best_loss;
    if (cfg.select_by == Selection::last) better = true;
    if (better) {
      best = model;
      best_f1 = m.macro_f1;
      best_loss = m.loss;
      local.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
    if (m.macro_f1 >= plateau_ref + 1e-3) {
      plateau_ref = m.macro_f1;
      since_gain = 0;
    } else if (++since_gain >= cfg.plateau_patience) {
      lr *= cfg.lr_decay;
      since_gain = 0;
    }
  }
  local.best_val_macro_f1 = best_f1;
  if (log) *log = local;
  return best;
}

TrainResult train(const FeatureDataset& data, const nn::ArchSpec& arch, const TrainConfig& cfg) {
  cfg.validate();
  require_both_classes(data, "training");
  std::vector<std::vector<std::size_t>> tests;
  if (cfg.folds == 1) {
    tests.push_back(stratified_split(data.labels, 0.2, cfg.seed).second);
  } else {
    tests = stratified_folds(data.labels, cfg.folds, cfg.seed);
  }

  TrainResult out;
  double best = -1.0;
  for (std::size_t f = 0; f < tests.size(); ++f) {
    std::vector<std::size_t> rest;
    std::vector<bool> in_test(data.size(), false);
    for (auto i : tests[f]) in_test[i] = true;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!in_test[i]) rest.push_back(i);
    const FeatureDataset pool = data.subset(rest);
    const Split sv = stratified_split(pool.labels, cfg.val_fraction, cfg.seed + 1000 + f);

    FoldResult fr;
    auto model = fit_model(pool.subset(sv.first), pool.subset(sv.second), arch, cfg, cfg.seed * 131 + f, &fr.log);
    model.params.version = "train-" + std::to_string(cfg.seed) + "-fold" + std::to_string(f);
    fr.test = evaluate(model, data.subset(tests[f]));
    fr.test_indices = tests[f];
    if (fr.test.macro_f1 > best) {
      best = fr.test.macro_f1;
      out.best_fold = f;
      out.model = std::move(model);
    }
    out.folds.push_back(std::move(fr));
  }
  return out;
}

}  // namespace afci
