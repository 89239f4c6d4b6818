#include "afci/evolve.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace afci {

// ---- Alarm capture and verification ---------------------------------------

AlarmRecord capture_alarm(const std::string& device_id, double timestamp, const DetectorState& state,
                          FrameView frame, const Featurizer& featurizer, const nn::Model& model,
                          const AlarmContext& context) {
  if (!state.latched) throw std::logic_error("capture_alarm needs a latched detector");
  AlarmRecord r;
  r.device_id = device_id;
  r.timestamp = timestamp;
  r.raw_frame.assign(frame.begin(), frame.end());
  r.features = featurizer(frame);
  if (r.features.size() != static_cast<std::size_t>(model.arch.input_dim))
    throw std::invalid_argument("alarm feature width does not match the model input");
  r.context = context;
  r.model_version = model.params.version;
  return r;
}

std::vector<AlarmRecord> stream_alarms(const std::string& device_id, const nn::Model& model, const SignalTrace& trace,
                                       const AlarmContext& context, const Featurizer& featurizer,
                                       const DetectorConfig& detector, double t0) {
  const auto frames = segment(trace, featurizer.config());
  const double frame_s = static_cast<double>(trace.frame_len) / trace.sample_rate;
  std::vector<AlarmRecord> out;
  DetectorState state;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto x = featurizer(frames[i]);
    const float p = model.predict(x)[0];
    const auto step = detect_step(state, p, detector);
    state = step.state;
    if (step.alarm) {
      AlarmContext ctx = context;
      ctx.frame_index = i;
      out.push_back(capture_alarm(device_id, t0 + static_cast<double>(i + 1) * frame_s, state, frames[i], featurizer,
                                  model, ctx));
      state = {};
    }
  }
  return out;
}

void LabelOracle::add(const std::string& device_id, std::uint64_t trace_key, std::vector<std::uint8_t> labels) {
  labels_[{device_id, trace_key}] = std::move(labels);
}

bool LabelOracle::covers(const AlarmRecord& record) const {
  const auto it = labels_.find({record.device_id, record.context.trace_key});
  return it != labels_.end() && record.context.frame_index < it->second.size();
}

std::uint8_t LabelOracle::label(const AlarmRecord& record) const {
  if (!covers(record))
    throw std::out_of_range("no ground truth for device " + record.device_id + " trace " +
                            std::to_string(record.context.trace_key) + " frame " +
                            std::to_string(record.context.frame_index));
  return labels_.at({record.device_id, record.context.trace_key})[record.context.frame_index];
}

VerificationResult verify(const AlarmRecord& record, const LabelOracle& oracle) {
  return {oracle.label(record) ? Verdict::true_arc : Verdict::false_alarm, "oracle"};
}

void Archive::add(const AlarmRecord& record) {
  if (data.dim == 0) data.dim = record.features.size();
  data.push(record.features, 1);
  confirmed.push_back(record);
}

FeatureDataset AdaptationBatch::features() const {
  FeatureDataset out;
  if (!records.empty()) out.dim = records.front().features.size();
  for (const auto& r : records) out.push(r.features, 0);
  return out;
}

Verdict route(const AlarmRecord& record, const LabelOracle& oracle, Archive& archive, AdaptationBatch& batch) {
  const auto v = verify(record, oracle).verdict;
  if (v == Verdict::true_arc) archive.add(record);
  else batch.records.push_back(record);
  return v;
}

// ---- Configuration ---------------------------------------------------------

namespace {

template <class T>
void require_grid(const std::vector<T>& g, const char* name) {
  if (g.empty()) throw std::invalid_argument(std::string("evolution grid ") + name + " is empty");
}

}  // namespace

void EvolutionConfig::validate() const {
  require_grid(stage1.head_lr, "head_lr");
  require_grid(stage1.backbone_lr_ratio, "backbone_lr_ratio");
  require_grid(stage1.alpha, "alpha");
  require_grid(stage1.beta, "beta");
  require_grid(stage1.lambda, "lambda");
  require_grid(stage1.mix_ratio, "mix_ratio");
  require_grid(stage1.max_epochs, "max_epochs");
  require_grid(stage2.kernel_delta, "kernel_delta");
  require_grid(stage2.width, "width");
  require_grid(stage2.fc_delta, "fc_delta");
  require_grid(stage2.dropout, "dropout");
  for (double w : stage2.width)
    if (!(w > 0)) throw std::invalid_argument("evolution.stage2.width entries must be positive");
  for (double d : stage2.dropout)
    if (!(d >= 0 && d < 1)) throw std::invalid_argument("evolution.stage2.dropout entries must lie in [0, 1)");
  if (population < 2) throw std::invalid_argument("evolution.population must be >= 2");
  if (generations < 1) throw std::invalid_argument("evolution.generations must be >= 1");
  if (tournament < 1 || tournament > population)
    throw std::invalid_argument("evolution.tournament must lie in [1, population]");
  if (!(mutation_rate >= 0 && mutation_rate <= 1)) throw std::invalid_argument("evolution.mutation_rate must lie in [0, 1]");
  if (!(flops_bound >= 1)) throw std::invalid_argument("evolution.flops_bound must be >= 1");
  if (!(saturation_eps >= 0)) throw std::invalid_argument("evolution.saturation_eps must be >= 0");
  if (!(novel_val_fraction > 0 && novel_val_fraction < 1))
    throw std::invalid_argument("evolution.novel_val_fraction must lie in (0, 1)");
  if (!(archive_val_fraction > 0 && archive_val_fraction < 1))
    throw std::invalid_argument("evolution.archive_val_fraction must lie in (0, 1)");
  if (archive_val_max < 2) throw std::invalid_argument("evolution.archive_val_max must be >= 2");
  if (stage2_search_rows < 4) throw std::invalid_argument("evolution.stage2_search_rows must be >= 4");
  if (stage2_search_epochs < 1) throw std::invalid_argument("evolution.stage2_search_epochs must be >= 1");
  stage2_train.validate();
  base.validate();
}

nlohmann::json to_json(const EvolutionConfig& c) {
  return {{"stage1",
           {{"head_lr", c.stage1.head_lr},
            {"backbone_lr_ratio", c.stage1.backbone_lr_ratio},
            {"alpha", c.stage1.alpha},
            {"beta", c.stage1.beta},
            {"lambda", c.stage1.lambda},
            {"mix_ratio", c.stage1.mix_ratio},
            {"max_epochs", c.stage1.max_epochs}}},
          {"stage2",
           {{"kernel_delta", c.stage2.kernel_delta},
            {"width", c.stage2.width},
            {"fc_delta", c.stage2.fc_delta},
            {"dropout", c.stage2.dropout}}},
          {"population", c.population},
          {"generations", c.generations},
          {"tournament", c.tournament},
          {"mutation_rate", c.mutation_rate},
          {"flops_bound", c.flops_bound},
          {"saturation_eps", c.saturation_eps},
          {"novel_val_fraction", c.novel_val_fraction},
          {"archive_val_fraction", c.archive_val_fraction},
          {"archive_val_max", c.archive_val_max},
          {"stage2_search_rows", c.stage2_search_rows},
          {"stage2_search_epochs", c.stage2_search_epochs},
          {"stage2_train", to_json(c.stage2_train)},
          {"base", to_json(c.base)},
          {"seed", c.seed}};
}

namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& prefix) {
  if (!j.is_object()) throw std::invalid_argument(prefix + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("unknown key " + prefix + "." + k);
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

EvolutionConfig evolution_config_from_json(const nlohmann::json& j) {
  EvolutionConfig c;
  const auto known = to_json(c);
  reject_unknown(j, known, "evolution");
  if (j.contains("stage1")) {
    const auto& s = j.at("stage1");
    reject_unknown(s, known.at("stage1"), "evolution.stage1");
    take(s, "head_lr", c.stage1.head_lr);
    take(s, "backbone_lr_ratio", c.stage1.backbone_lr_ratio);
    take(s, "alpha", c.stage1.alpha);
    take(s, "beta", c.stage1.beta);
    take(s, "lambda", c.stage1.lambda);
    take(s, "mix_ratio", c.stage1.mix_ratio);
    take(s, "max_epochs", c.stage1.max_epochs);
  }
  if (j.contains("stage2")) {
    const auto& s = j.at("stage2");
    reject_unknown(s, known.at("stage2"), "evolution.stage2");
    take(s, "kernel_delta", c.stage2.kernel_delta);
    take(s, "width", c.stage2.width);
    take(s, "fc_delta", c.stage2.fc_delta);
    take(s, "dropout", c.stage2.dropout);
  }
  take(j, "population", c.population);
  take(j, "generations", c.generations);
  take(j, "tournament", c.tournament);
  take(j, "mutation_rate", c.mutation_rate);
  take(j, "flops_bound", c.flops_bound);
  take(j, "saturation_eps", c.saturation_eps);
  take(j, "novel_val_fraction", c.novel_val_fraction);
  take(j, "archive_val_fraction", c.archive_val_fraction);
  take(j, "archive_val_max", c.archive_val_max);
  take(j, "stage2_search_rows", c.stage2_search_rows);
  take(j, "stage2_search_epochs", c.stage2_search_epochs);
  if (j.contains("stage2_train")) c.stage2_train = train_config_from_json(j.at("stage2_train"));
  if (j.contains("base")) c.base = transfer_config_from_json(j.at("base"));
  take(j, "seed", c.seed);
  c.validate();
  return c;
}

// ---- Evolution data ----------------------------------------------------------

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

EvolutionData prepare_evolution_data(const AdaptationBatch& batch, const Archive& archive,
                                     const EvolutionConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!batch.ready())
    throw std::invalid_argument("adaptation batch holds " + std::to_string(batch.records.size()) + " of " +
                                std::to_string(batch.threshold) + " records");
  if (archive.data.empty() || archive.data.count(1) == 0)
    throw std::invalid_argument("archive has no arc exemplars to mix with the novel regime");
  const auto novel = batch.features();
  if (novel.dim != archive.data.dim) throw std::invalid_argument("batch and archive feature widths differ");

  EvolutionData d;
  auto order = iota_n(novel.size());
  shuffle(order, rng);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.novel_val_fraction * static_cast<double>(novel.size()))), 1,
      novel.size() - 1);
  d.novel_val = novel.subset(std::span(order).first(n_val));
  d.novel_train = novel.subset(std::span(order).subspan(n_val));

  const double frac = std::min(cfg.archive_val_fraction, static_cast<double>(cfg.archive_val_max) /
                                                             static_cast<double>(archive.data.size()));
  const auto split = stratified_split(archive.data.labels, frac, rng.next_u64());
  d.archive_train = archive.data.subset(split.first);
  d.archive_val = archive.data.subset(split.second);

  std::vector<std::size_t> arcs;
  for (std::size_t i = 0; i < d.archive_train.size(); ++i)
    if (d.archive_train.labels[i]) arcs.push_back(i);
  if (arcs.empty()) throw std::invalid_argument("archive has no arc exemplars outside its validation split");
  shuffle(arcs, rng);
  std::vector<std::size_t> pick;
  for (std::size_t i = 0; i < d.novel_train.size(); ++i) pick.push_back(arcs[i % arcs.size()]);
  d.target = d.novel_train;
  d.target.append(d.archive_train.subset(pick));
  return d;
}

double blend_fitness(const nn::Model& model, const EvolutionData& data) {
  // Weighted confusion: each half of the blend carries total weight 1.
  double tp = 0, fp = 0, tn = 0, fn = 0;
  const auto tally = [&](const FeatureDataset& part) {
    if (part.empty()) return;
    const double w = 1.0 / static_cast<double>(part.size());
    const auto p = model.predict(part.values);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const bool pred = p[i] > 0.5f;
      if (part.labels[i]) (pred ? tp : fn) += w;
      else (pred ? fp : tn) += w;
    }
  };
  tally(data.novel_val);
  tally(data.archive_val);
  const auto f1 = [](double t, double f_pos, double f_neg) {
    const double den = 2 * t + f_pos + f_neg;
    return den > 0 ? 2 * t / den : 1.0;
  };
  return 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));
}

// ---- Stage 1 -----------------------------------------------------------------

namespace {

constexpr std::size_t kGenes1 = 7;
using Genome1 = std::array<std::size_t, kGenes1>;

std::array<std::size_t, kGenes1> grid_sizes(const Stage1Space& s) {
  return {s.head_lr.size(), s.backbone_lr_ratio.size(), s.alpha.size(), s.beta.size(),
          s.lambda.size(),  s.mix_ratio.size(),         s.max_epochs.size()};
}

TransferConfig decode_genome(const Genome1& g, const EvolutionConfig& cfg) {
  TransferConfig t = cfg.base;
  const auto& s = cfg.stage1;
  t.head_lr = s.head_lr[g[0]];
  t.backbone_lr_ratio = s.backbone_lr_ratio[g[1]];
  t.alpha = s.alpha[g[2]];
  t.beta = s.beta[g[3]];
  t.lambda = s.lambda[g[4]];
  t.mix_ratio = s.mix_ratio[g[5]];
  t.max_epochs = s.max_epochs[g[6]];
  std::uint64_t code = 0;
  for (auto v : g) code = code * 31 + v;
  t.seed = cfg.seed * 7919 + code;
  return t;
}

// Re-draws each gene with probability `rate`; at least one gene always
// changes when any grid has more than one entry.
template <std::size_t N>
std::array<std::size_t, N> mutate(std::array<std::size_t, N> g, const std::array<std::size_t, N>& sizes, double rate,
                                  Rng& rng) {
  std::vector<std::size_t> open;
  for (std::size_t i = 0; i < N; ++i)
    if (sizes[i] > 1) open.push_back(i);
  if (open.empty()) return g;
  bool changed = false;
  const auto redraw = [&](std::size_t i) {
    const auto v = rng.below(sizes[i] - 1);
    g[i] = v >= g[i] ? v + 1 : v;
    changed = true;
  };
  for (auto i : open)
    if (rng.bernoulli(rate)) redraw(i);
  if (!changed) redraw(open[rng.below(open.size())]);
  return g;
}

template <class G>
std::size_t tournament_pick(const std::vector<G>& pop, const std::vector<double>& fit, int k, Rng& rng) {
  std::size_t best = rng.below(pop.size());
  for (int i = 1; i < k; ++i) {
    const auto c = rng.below(pop.size());
    if (fit[c] > fit[best] || (fit[c] == fit[best] && c < best)) best = c;
  }
  return best;
}

bool saturated(const std::vector<double>& best, double baseline, double eps) {
  // Improvement over the final two generations.
  const std::size_t g = best.size();
  const double before = g >= 3 ? best[g - 3] : baseline;
  return best.back() - before < eps;
}

}  // namespace

Stage1Result stage1_evolve(const nn::Model& deployed, const AdaptationBatch& batch, const Archive& archive,
                           const EvolutionConfig& cfg, Rng& rng) {
  const auto data = prepare_evolution_data(batch, archive, cfg, rng);
  return stage1_evolve(deployed, data, cfg, rng);
}

Stage1Result stage1_evolve(const nn::Model& deployed, const EvolutionData& data, const EvolutionConfig& cfg,
                           Rng& rng) {
  cfg.validate();
  if (data.novel_train.empty() || data.target.empty()) throw std::invalid_argument("stage 1 needs novel rows");
  const auto sizes = grid_sizes(cfg.stage1);

  Stage1Result out;
  out.baseline_fitness = blend_fitness(deployed, data);
  out.model = deployed;
  out.config = cfg.base;
  out.fitness = -1.0;

  std::map<Genome1, double> cache;
  std::map<Genome1, nn::Model> models;
  std::vector<Genome1> pop;
  Genome1 middle{};
  for (std::size_t i = 0; i < kGenes1; ++i) middle[i] = sizes[i] / 2;
  pop.push_back(middle);
  while (pop.size() < static_cast<std::size_t>(cfg.population)) {
    Genome1 g{};
    for (std::size_t i = 0; i < kGenes1; ++i) g[i] = rng.below(sizes[i]);
    pop.push_back(g);
  }

  Genome1 best_genome = middle;
  for (int gen = 0; gen < cfg.generations; ++gen) {
    std::vector<double> fit(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) {
      const auto& g = pop[i];
      const auto tc = decode_genome(g, cfg);
      auto it = cache.find(g);
      const bool cached = it != cache.end();
      if (!cached) {
        auto r = adapt(deployed, data.archive_train, data.target, tc);
        const double f = blend_fitness(r.model, data);
        it = cache.emplace(g, f).first;
        models.emplace(g, std::move(r.model));
      }
      fit[i] = it->second;
      out.log.push_back({{"stage", 1},
                         {"generation", gen},
                         {"index", i},
                         {"config", to_json(tc)},
                         {"fitness", fit[i]},
                         {"flops_ratio", 1.0},
                         {"cached", cached}});
      if (fit[i] > out.fitness) {
        out.fitness = fit[i];
        best_genome = g;
      }
    }
    out.best_per_generation.push_back(out.fitness);
    if (gen + 1 == cfg.generations) break;

    std::vector<Genome1> next{best_genome};
    while (next.size() < pop.size())
      next.push_back(mutate(pop[tournament_pick(pop, fit, cfg.tournament, rng)], sizes, cfg.mutation_rate, rng));
    pop = std::move(next);
  }

  out.model = models.at(best_genome);
  out.config = decode_genome(best_genome, cfg);
  out.saturated = saturated(out.best_per_generation, out.baseline_fitness, cfg.saturation_eps);
  return out;
}

// ---- Stage 2 -----------------------------------------------------------------

nn::ArchSpec mutate_arch(const nn::ArchSpec& base, const Stage2Space& space, Rng& rng) {
  nn::ArchSpec a = base;
  int prev_kernel = 0;
  for (std::size_t b = 0; b < a.blocks.size(); ++b) {
    auto& blk = a.blocks[b];
    int k = blk.kernel + space.kernel_delta[rng.below(space.kernel_delta.size())];
    k = std::max(k, 1);
    if (k % 2 == 0) --k;
    if (b > 0) k = std::min(k, prev_kernel);
    blk.kernel = k;
    prev_kernel = k;
    const double w = space.width[rng.below(space.width.size())];
    blk.channels = std::max(1, static_cast<int>(std::lround(blk.channels * w)));
  }
  a.fc_hidden = std::max(1, a.fc_hidden + space.fc_delta[rng.below(space.fc_delta.size())]);
  a.dropout = space.dropout[rng.below(space.dropout.size())];
  return a;
}

ArchCandidate screen_flops(const nn::ArchSpec& base, const nn::ArchSpec& candidate, double bound) {
  const auto b = static_cast<double>(nn::flops(base).total);
  const auto c = static_cast<double>(nn::flops(candidate).total);
  ArchCandidate out{candidate, c / b, false};
  out.feasible = out.flops_ratio <= bound;
  return out;
}

Stage2Result stage2_evolve(const Stage1Result& stage1, const nn::ArchSpec& base, const EvolutionData& data,
                           const EvolutionConfig& cfg, Rng& rng) {
  if (!stage1.saturated) throw std::logic_error("stage 2 runs only after stage 1 saturates");
  cfg.validate();

  FeatureDataset all = data.archive_train;
  all.append(data.novel_train);
  const auto tv = stratified_split(all.labels, cfg.stage2_train.val_fraction, rng.next_u64());
  const auto train_all = all.subset(tv.first);
  const auto val_all = all.subset(tv.second);
  const double frac = std::min(1.0, static_cast<double>(cfg.stage2_search_rows) / static_cast<double>(train_all.size()));
  // Novel rows are few; keep all of them in the search subsample.
  FeatureDataset search = data.novel_train;
  search.append(data.archive_train.subset(stratified_sample(data.archive_train.labels, frac, rng.next_u64())));
  TrainConfig quick = cfg.stage2_train;
  quick.epochs = cfg.stage2_search_epochs;

  Stage2Result out;
  out.arch = base;
  out.fitness = -1.0;
  std::map<std::string, double> cache;
  std::vector<nn::ArchSpec> pop{base};
  std::vector<double> fit;
  int trained = 0;

  const auto score = [&](const nn::ArchSpec& a, int gen, std::size_t index) -> double {
    const auto screened = screen_flops(base, a, cfg.flops_bound);
    nlohmann::json rec{{"stage", 2},
                       {"generation", gen},
                       {"index", index},
                       {"config", nn::to_json(a)},
                       {"flops_ratio", screened.flops_ratio}};
    if (!screened.feasible) {
      ++out.rejected;
      rec["fitness"] = nullptr;
      rec["trained"] = false;
      out.log.push_back(std::move(rec));
      return -1.0;
    }
    const auto key = nn::to_json(a).dump();
    auto it = cache.find(key);
    const bool cached = it != cache.end();
    if (!cached) {
      if (!(screened.flops_ratio <= cfg.flops_bound)) throw std::logic_error("FLOPs bound violated before training");
      const auto m = fit_model(search, val_all, a, quick, cfg.seed * 131 + static_cast<std::uint64_t>(trained++));
      it = cache.emplace(key, blend_fitness(m, data)).first;
    }
    rec["fitness"] = it->second;
    rec["trained"] = !cached;
    out.log.push_back(std::move(rec));
    if (it->second > out.fitness) {
      out.fitness = it->second;
      out.arch = a;
      out.flops_ratio = screened.flops_ratio;
    }
    return it->second;
  };

  while (pop.size() < static_cast<std::size_t>(cfg.population)) pop.push_back(mutate_arch(base, cfg.stage2, rng));
  for (int gen = 0; gen < cfg.generations; ++gen) {
    fit.assign(pop.size(), -1.0);
    for (std::size_t i = 0; i < pop.size(); ++i) fit[i] = score(pop[i], gen, i);
    if (gen + 1 == cfg.generations) break;
    std::vector<nn::ArchSpec> next{out.arch};
    while (next.size() < pop.size())
      next.push_back(mutate_arch(pop[tournament_pick(pop, fit, cfg.tournament, rng)], cfg.stage2, rng));
    pop = std::move(next);
  }
  if (out.fitness < 0) throw std::runtime_error("no stage-2 candidate satisfies the FLOPs bound");

  out.model = fit_model(train_all, val_all, out.arch, cfg.stage2_train, cfg.seed * 131 + 977);
  out.model.params.version = stage1.model.params.version + "+arch";
  out.fitness = blend_fitness(out.model, data);
  return out;
}

std::string search_log_jsonl(const std::vector<nlohmann::json>& log) {
  std::string s;
  for (const auto& r : log) s += r.dump() + "\n";
  return s;
}

// ---- Temporal validation ---------------------------------------------------

nlohmann::json to_json(const TemporalReport& r) {
  nlohmann::json streams = nlohmann::json::array();
  for (const auto& s : r.streams)
    streams.push_back({{"name", s.name},
                       {"has_arc", s.has_arc},
                       {"alarms", s.alarms},
                       {"false_alarms", s.false_alarms},
                       {"detected", s.detected}});
  return {{"pass", r.pass},
          {"false_alarms", r.false_alarms},
          {"arc_streams", r.arc_streams},
          {"detected_arcs", r.detected_arcs},
          {"streams", streams}};
}

TemporalReport temporal_validate(const nn::Model& model, const std::vector<HoldoutStream>& streams,
                                 const FeatureConfig& features, const DetectorConfig& detector) {
  TemporalReport rep;
  for (const auto& s : streams) {
    const auto ev = run_detector(model, s.trace, features, detector);
    StreamOutcome o;
    o.name = s.name;
    o.has_arc = ev.first_arc_frame.has_value();
    o.alarms = ev.alarm_frames.size();
    o.false_alarms = ev.false_alarms;
    o.detected = ev.latency_frames.has_value();
    rep.false_alarms += o.false_alarms;
    if (o.has_arc) {
      ++rep.arc_streams;
      if (o.detected) ++rep.detected_arcs;
    }
    rep.streams.push_back(std::move(o));
  }
  rep.pass = rep.false_alarms == 0 && rep.detected_arcs == rep.arc_streams;
  return rep;
}

// ---- Canary ----------------------------------------------------------------

void CanaryConfig::validate() const {
  if (!(canary_fraction > 0 && canary_fraction <= 1)) throw std::invalid_argument("canary.canary_fraction must lie in (0, 1]");
  if (window_frames == 0) throw std::invalid_argument("canary.window_frames must be positive");
  if (!(tolerance >= 0)) throw std::invalid_argument("canary.tolerance must be >= 0");
}

nlohmann::json to_json(const CanaryConfig& c) {
  return {{"canary_fraction", c.canary_fraction}, {"window_frames", c.window_frames}, {"tolerance", c.tolerance}};
}

CanaryConfig canary_config_from_json(const nlohmann::json& j) {
  CanaryConfig c;
  reject_unknown(j, to_json(c), "canary");
  take(j, "canary_fraction", c.canary_fraction);
  take(j, "window_frames", c.window_frames);
  take(j, "tolerance", c.tolerance);
  c.validate();
  return c;
}

double CanaryStats::false_alarm_rate() const {
  return normal_frames ? static_cast<double>(false_alarms) / static_cast<double>(normal_frames) : 0.0;
}

double CanaryStats::miss_rate() const {
  return arc_events ? static_cast<double>(missed_arcs) / static_cast<double>(arc_events) : 0.0;
}

CanaryStats& CanaryStats::operator+=(const CanaryStats& o) {
  frames += o.frames;
  normal_frames += o.normal_frames;
  false_alarms += o.false_alarms;
  arc_events += o.arc_events;
  missed_arcs += o.missed_arcs;
  return *this;
}

nlohmann::json to_json(const CanaryStats& s) {
  return {{"frames", s.frames},
          {"normal_frames", s.normal_frames},
          {"false_alarms", s.false_alarms},
          {"arc_events", s.arc_events},
          {"missed_arcs", s.missed_arcs}};
}

CanaryStats canary_stats_from_json(const nlohmann::json& j) {
  CanaryStats s;
  reject_unknown(j, to_json(s), "canary_stats");
  take(j, "frames", s.frames);
  take(j, "normal_frames", s.normal_frames);
  take(j, "false_alarms", s.false_alarms);
  take(j, "arc_events", s.arc_events);
  take(j, "missed_arcs", s.missed_arcs);
  return s;
}

nlohmann::json to_json(const CanaryDecision& d) {
  return {{"decision", d.verdict == CanaryVerdict::promote ? "promote" : "rollback"},
          {"candidate", to_json(d.candidate)},
          {"baseline", to_json(d.baseline)},
          {"rules", d.trace}};
}

CanaryDecision canary_decide(const CanaryStats& candidate, const CanaryStats& baseline, const CanaryConfig& cfg) {
  cfg.validate();
  if (candidate.frames < cfg.window_frames || baseline.frames < cfg.window_frames)
    throw std::invalid_argument("canary statistics do not cover the monitoring window");
  CanaryDecision d;
  d.candidate = candidate;
  d.baseline = baseline;
  const double fa_c = candidate.false_alarm_rate(), fa_b = baseline.false_alarm_rate();
  const double miss_c = candidate.miss_rate(), miss_b = baseline.miss_rate();
  const bool fa_ok = fa_c <= fa_b + cfg.tolerance;
  const bool miss_ok = miss_c <= miss_b + cfg.tolerance;
  const bool strict = fa_c < fa_b || miss_c < miss_b;
  d.trace = nlohmann::json::array(
      {{{"rule", "false_alarm_rate_not_worse"}, {"candidate", fa_c}, {"baseline", fa_b}, {"holds", fa_ok}},
       {{"rule", "miss_rate_not_worse"}, {"candidate", miss_c}, {"baseline", miss_b}, {"holds", miss_ok}},
       {{"rule", "strict_improvement"}, {"holds", strict}}});
  d.verdict = fa_ok && miss_ok && strict ? CanaryVerdict::promote : CanaryVerdict::rollback;
  return d;
}

}  // namespace afci
