// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "afci/binary_io.hpp"
#include "afci/dataset.hpp"
#include "afci/detector.hpp"
#include "afci/evolve.hpp"
#include "afci/features.hpp"
#include "afci/fleet.hpp"
#include "afci/scaling.hpp"
#include "afci/train.hpp"
#include "afci/transfer.hpp"
#include "nn_gradcheck.hpp"
#include "oracles.hpp"

using namespace afci;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- shared fixtures, built on first use --------------------------------------

// Default synthetic suite: profiles A and B, one trace per sub-condition and
// per arc condition, seed 42.
const FeatureDataset& default_suite() {
  static const auto d = featurize_suite(synth_suite({default_profile_a(), default_profile_b()}, 1, 42), {});
  return d;
}

const TrainResult& detection_training() {
  static const auto r = [] {
    TrainConfig cfg;
    cfg.folds = 5;
    return train(default_suite(), nn::ArchSpec::ld_spec(), cfg);
  }();
  return r;
}

// Single model on the whole suite (10% validation) for the fleet run.
nn::Model fleet_model() {
  const auto& d = default_suite();
  const auto sv = stratified_split(d.labels, 0.1, 5);
  auto m = fit_model(d.subset(sv.first), d.subset(sv.second), nn::ArchSpec::ld_spec(), TrainConfig{}, 7);
  return m;
}

// ---- 1 --------------------------------------------------------------------------

Outcome c1_dft() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0;
  for (int f = 0; f < 100; ++f) {
    std::vector<double> x(1024);
    for (auto& v : x) v = rng.normal();
    const auto fast = dft(std::span<const double>(x));
    const auto slow = oracle::naive_dft(x);
    double max_mag = 0, max_err = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      max_mag = std::max(max_mag, std::abs(slow[k]));
      max_err = std::max(max_err, std::abs(fast[k] - slow[k]));
    }
    worst = std::max(worst, max_err / max_mag);
  }
  const double t = seconds_since(t0);
  return {worst < 1e-6 && t < 10, fmt("max relative error %.2e over 100 frames (< 1e-6), %.2f s (< 10 s)", worst, t)};
}

// ---- 2 --------------------------------------------------------------------------

Outcome c2_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0;
  std::size_t checked = 0, kinks = 0;
  std::set<std::string> tensors;
  for (int trial = 0; trial < 16; ++trial) {
    auto c = testutil::random_grad_case(rng);
    const auto mode = trial % 4 == 3 ? nn::Mode::infer : nn::Mode::train;
    std::vector<double> weights;
    const nn::ParamSet<double>* anchor = nullptr;
    nn::ParamSet<double> a;
    double l2 = 0;
    if (trial % 2 == 1) {
      // Weighted loss plus the anchored L2 penalty.
      for (std::size_t i = 0; i < c.labels.size(); ++i) weights.push_back(rng.uniform(0.1, 1.0));
      a = c.params;
      for (auto& t : a.tensors)
        for (auto& v : t.values) v += rng.normal() * 0.1;
      anchor = &a;
      l2 = rng.uniform(0.1, 2.0);
    }
    const auto rep = testutil::gradcheck(c.arch, c.params, c.inputs, c.labels, weights, mode, 300 + trial, anchor, l2);
    worst = std::max(worst, rep.max_rel_error);
    checked += rep.checked;
    kinks += rep.skipped_kinks;
    for (const auto& t : c.params.tensors) tensors.insert(t.name.substr(t.name.find('.') + 1));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 60 && checked > 10 * kinks,
          fmt("max relative error %.2e (< 1e-4) over %zu coordinates (%zu kinks skipped), tensor kinds %zu, "
              "%.1f s (< 60 s)",
              worst, checked, kinks, tensors.size(), t)};
}

// ---- 3 --------------------------------------------------------------------------

Outcome c3_detection() {
  const auto& d = default_suite();
  const auto& r = detection_training();
  double acc = 1, f1 = 1, roc = 1, pr = 1;
  for (const auto& f : r.folds) {
    acc = std::min(acc, f.test.accuracy);
    f1 = std::min(f1, f.test.f1);
    roc = std::min(roc, f.test.roc_auc);
    pr = std::min(pr, f.test.pr_auc);
  }
  const bool pass = d.size() >= 20000 && r.folds.size() == 5 && acc >= 0.99 && f1 >= 0.99 && roc >= 0.995 && pr >= 0.995;
  return {pass, fmt("%zu frames; worst fold of 5: accuracy %.5f, F1 %.5f, ROC-AUC %.5f, PR-AUC %.5f", d.size(), acc,
                    f1, roc, pr)};
}

// ---- 4 --------------------------------------------------------------------------

Outcome c4_nuisance() {
  const auto& model = detection_training().model;
  const FeatureConfig fc;
  const DetectorConfig dc;
  const Featurizer fz(fc);
  const std::vector<HardwareProfile> profiles{default_profile_a(), default_profile_b()};
  std::size_t nuisance = 0, alarms = 0, records = 0;
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    for (const auto& recipe : nuisance_recipes(p, profiles[p], 4242, 1.0)) {
      const auto trace = materialize(profiles[p], recipe, fc.frame_len);
      alarms += run_detector(model, trace, fc, dc).alarm_frames.size();
      records += stream_alarms("acc", model, trace, {profiles[p].profile_id, trace.category, nuisance, 0}, fz, dc).size();
      ++nuisance;
    }
  }
  const auto fresh = synth_suite(profiles, 1, 4243);
  std::size_t arcs = 0, detected = 0;
  double worst_latency = 0;
  for (std::size_t i = 0; i < fresh.recipes.size(); ++i) {
    if (!fresh.recipes[i].arc) continue;
    ++arcs;
    const auto rep = run_detector(model, fresh.materialize(i), fc, dc);
    if (rep.latency_ms && *rep.latency_ms < 100) ++detected;
    worst_latency = std::max(worst_latency, rep.latency_ms.value_or(1e9));
  }
  return {alarms == 0 && records == 0 && arcs > 0 && detected == arcs,
          fmt("%zu alarms over %zu nuisance traces; %zu/%zu arc traces detected, worst latency %.1f ms (< 100)", alarms,
              nuisance, detected, arcs, worst_latency)};
}

// ---- 5 --------------------------------------------------------------------------

ScalePoint point(double n, double loss) {
  ScalePoint p;
  p.n = static_cast<std::size_t>(std::llround(n));
  p.loss = loss;
  return p;
}

Outcome c5_scaling() {
  std::vector<ScalePoint> clean;
  for (int i = 0; i < 8; ++i) {
    const double n = 10 * std::pow(10.0, 4.0 * i / 7);
    clean.push_back(point(n, 2 * std::pow(std::llround(n), -0.37) + 0.01));
  }
  const double a_clean = fit_scaling_law(clean).alpha;

  double worst_noisy = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    std::vector<ScalePoint> pts;
    for (int i = 0; i < 8; ++i) {
      const double n = 10 * std::pow(10.0, 4.0 * i / 7);
      pts.push_back(point(n, (2 * std::pow(std::llround(n), -0.37) + 0.01) * (1 + 0.05 * rng.normal())));
    }
    worst_noisy = std::max(worst_noisy, std::abs(fit_scaling_law(pts).alpha - 0.37));
  }

  TrainConfig cfg;
  cfg.select_by = Selection::last;
  const std::vector<double> fractions{0.002, 0.008, 0.032, 0.128, 0.5};
  const auto pts = scale_sweep(default_suite(), fractions, nn::ArchSpec::ld_spec(), cfg, 5);
  bool monotone = true;
  std::string curve;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i > 0 && pts[i].loss > 1.10 * pts[i - 1].loss) monotone = false;
    curve += fmt("%s%zu:%.4f", i ? " " : "", pts[i].n, pts[i].loss);
  }
  const auto fit = fit_scaling_law(pts);
  const bool pass = std::abs(a_clean - 0.37) <= 0.01 && worst_noisy <= 0.05 && monotone;
  return {pass, fmt("(a) alpha %.4f; (b) worst |alpha-0.37| over 20 seeds %.4f; (c) %s curve [%s], fitted alpha %.3f",
                    a_clean, worst_noisy, monotone ? "monotone" : "NOT monotone", curve.c_str(), fit.alpha)};
}

// ---- 6, 7 -----------------------------------------------------------------------

// Source domain: profile A (seed 42); target domain: profile B (seed 43).
struct TransferWorld {
  FeatureDataset source, source_pool, source_test, target;
  nn::Model source_model;
};

const TransferWorld& transfer_world() {
  static const auto w = [] {
    TransferWorld w;
    w.source = featurize_suite(synth_suite({default_profile_a()}, 1, 42), {});
    w.target = featurize_suite(synth_suite({default_profile_b()}, 1, 43), {});
    const TrainConfig tc;
    const auto held = stratified_split(w.source.labels, 0.2, tc.seed);
    w.source_pool = w.source.subset(held.first);
    w.source_test = w.source.subset(held.second);
    const auto sv = stratified_split(w.source_pool.labels, 0.1, 5);
    w.source_model =
        fit_model(w.source_pool.subset(sv.first), w.source_pool.subset(sv.second), nn::ArchSpec::ld_spec(), tc, 7);
    return w;
  }();
  return w;
}

const SweepPoint* at(const SweepResult& r, double fraction) {
  for (const auto& p : r.points)
    if (std::abs(p.fraction - fraction) < 1e-12) return &p;
  return nullptr;
}

Outcome c6_saturation() {
  const auto& w = transfer_world();
  const std::vector<double> fractions{0.002, 0.005, 0.01, 0.03, 0.1};
  const auto sweep = target_fraction_sweep(w.source_model, w.source_pool, w.source_test, w.target, fractions, {});
  const auto* p1 = at(sweep, 0.01);
  const auto* p10 = at(sweep, 0.1);
  if (!p1 || !p10) return {false, "sweep skipped the 1% or 10% point"};
  const double gap = std::abs(p10->target_macro_f1 - p1->target_macro_f1);

  // Source models on 30% and 80% of the source pool, each adapted with 1% target data.
  const std::vector<double> src_fr{0.3, 0.8};
  const auto ss = source_fraction_sweep(w.source, src_fr, nn::ArchSpec::ld_spec(), TrainConfig{});
  const auto pool = w.source.subset(ss.pool_indices);
  const auto test = w.source.subset(ss.test_indices);
  std::vector<double> arc_acc;
  for (const auto& sp : ss.points) {
    const std::vector<double> one{0.01};
    const auto r = target_fraction_sweep(sp.model, pool, test, w.target, one, {});
    if (r.points.empty()) return {false, "adaptation of a source-fraction model was skipped"};
    arc_acc.push_back(r.points[0].arc_accuracy);
  }
  const double arc_gap = std::abs(arc_acc[0] - arc_acc[1]);
  return {gap <= 0.01 && arc_gap <= 0.01,
          fmt("target macro-F1 1%% %.4f vs 10%% %.4f (gap %.4f <= 0.01); arc accuracy after adaptation: 30%% source "
              "%.4f vs 80%% source %.4f (gap %.4f <= 0.01)",
              p1->target_macro_f1, p10->target_macro_f1, gap, arc_acc[0], arc_acc[1], arc_gap)};
}

Outcome c7_replay() {
  const auto& w = transfer_world();
  const std::vector<double> fractions{0.01, 0.1};
  double mean[2] = {0, 0};
  int n = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (int b = 0; b < 2; ++b) {
      TransferConfig cfg;
      cfg.seed = seed;
      cfg.beta = b == 0 ? 0.5 : 0.0;
      const auto r = target_fraction_sweep(w.source_model, w.source_pool, w.source_test, w.target, fractions, cfg);
      for (const auto& p : r.points) mean[b] += p.source_macro_f1 / static_cast<double>(fractions.size());
    }
    ++n;
  }
  mean[0] /= n;
  mean[1] /= n;
  return {mean[0] > mean[1],
          fmt("mean source macro-F1 after adaptation (3 seeds, target fractions 1%% and 10%%): beta=0.5 %.4f > beta=0 "
              "%.4f",
              mean[0], mean[1])};
}

// ---- 8, 9 -----------------------------------------------------------------------

struct DriftWorld {
  nn::Model deployed;
  FeatureDataset archive_test, novel;
  EvolutionData data;
  Stage1Result stage1;
  std::size_t batch = 0;
};

const DriftWorld& drift_world() {
  static const auto w = [] {
    DriftWorld w;
    const auto& d = default_suite();
    const auto held = stratified_split(d.labels, 0.2, 99);
    const auto archive_train = d.subset(held.first);
    w.archive_test = d.subset(held.second);
    const auto sv = stratified_split(archive_train.labels, 0.1, 5);
    w.deployed = fit_model(archive_train.subset(sv.first), archive_train.subset(sv.second), nn::ArchSpec::ld_spec(),
                           TrainConfig{}, 7);
    w.deployed.params.version = "v1";

    const auto drifted = apply_drift(default_profile_a(), default_field_drift());
    const auto field = synth_suite({drifted}, 1, 77);
    const Featurizer fz{};
    LabelOracle oracle;
    Archive archive{archive_train, {}};
    AdaptationBatch batch;
    for (std::size_t i = 0; i < field.recipes.size() && !batch.ready(); ++i) {
      const auto tr = field.materialize(i);
      oracle.add("d0", i, tr.frame_labels);
      for (const auto& a : stream_alarms("d0", w.deployed, tr, {drifted.profile_id, tr.category, i, 0}, fz, {}))
        if (!batch.ready()) route(a, oracle, archive, batch);
    }
    w.batch = batch.records.size();
    w.novel = featurize_suite(synth_suite({drifted}, 1, 78), {});
    const EvolutionConfig ec;
    Rng rng(5);
    w.data = prepare_evolution_data(batch, archive, ec, rng);
    w.stage1 = stage1_evolve(w.deployed, w.data, ec, rng);
    return w;
  }();
  return w;
}

Outcome c8_adaptation() {
  const auto& w = drift_world();
  const auto pre = evaluate(w.deployed, w.novel);
  const auto post = evaluate(w.stage1.model, w.novel);
  const double arch_pre = evaluate(w.deployed, w.archive_test).macro_f1;
  const double arch_post = evaluate(w.stage1.model, w.archive_test).macro_f1;
  const bool pass = pre.precision < 0.5 && post.precision >= 0.9 && arch_pre - arch_post <= 0.01;
  return {pass, fmt("novel precision %.3f -> %.3f (recall %.3f); archive macro-F1 %.4f -> %.4f (drop %.2f pt); "
                    "%zu false alarms collected",
                    pre.precision, post.precision, post.recall, arch_pre, arch_post, 100 * (arch_pre - arch_post),
                    w.batch)};
}

// Compute count written out independently of nn::flops.
std::uint64_t oracle_flops(const nn::ArchSpec& a) {
  std::uint64_t total = 0, len = static_cast<std::uint64_t>(a.input_dim), cin = 1;
  for (const auto& b : a.blocks) {
    const auto ch = static_cast<std::uint64_t>(b.channels);
    total += len * ch * cin * static_cast<std::uint64_t>(b.kernel) + 3 * len * ch;  // conv + BN/ReLU/dropout
    len /= static_cast<std::uint64_t>(b.pool);
    cin = ch;
  }
  const auto h = static_cast<std::uint64_t>(a.fc_hidden);
  total += len * cin * h + h + h * static_cast<std::uint64_t>(a.num_classes);
  return total;
}

Outcome c9_flops() {
  const auto base = nn::ArchSpec::ld_spec();
  const double base_flops = static_cast<double>(oracle_flops(base));
  const Stage2Space space;
  Rng rng(909);
  std::size_t rejected = 0, violations = 0, disagreements = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto cand = mutate_arch(base, space, rng);
    const auto s = screen_flops(base, cand, 1.05);
    const double ratio = static_cast<double>(oracle_flops(cand)) / base_flops;
    if (s.feasible != (ratio <= 1.05)) ++disagreements;
    if (s.feasible && ratio > 1.05) ++violations;
    if (!s.feasible) ++rejected;
  }

  // A short stage-2 search on the drift scenario: every trained candidate is within the bound.
  const auto& w = drift_world();
  std::size_t trained = 0, trained_violations = 0, search_rejected = 0;
  if (w.stage1.saturated) {
    EvolutionConfig ec;
    ec.population = 6;
    ec.generations = 2;
    ec.stage2_search_rows = 1000;
    ec.stage2_search_epochs = 2;
    Rng srng(11);
    const auto s2 = stage2_evolve(w.stage1, base, w.data, ec, srng);
    for (const auto& rec : s2.log) {
      if (!rec.at("trained").get<bool>()) continue;
      ++trained;
      if (static_cast<double>(oracle_flops(nn::arch_from_json(rec.at("config")))) > 1.05 * base_flops) ++trained_violations;
    }
    search_rejected = s2.rejected;
  }
  const bool pass = violations == 0 && disagreements == 0 && rejected > 0 && trained_violations == 0;
  return {pass, fmt("1000 mutations: %zu rejected by the bound, %zu feasible over 1.05x, %zu screen/oracle "
                    "disagreements; stage-2 search trained %zu candidates (%zu over bound), rejected %zu%s",
                    rejected, violations, disagreements, trained, trained_violations, search_rejected,
                    w.stage1.saturated ? "" : " (stage 1 not saturated, search skipped)")};
}

// ---- 10 -------------------------------------------------------------------------

Outcome c10_fleet() {
  const auto model = fleet_model();
  const auto spec = fleet::FleetSpec::demo(10, 3);
  const auto a = fleet::run_sim(spec, model, default_suite());
  const auto b = fleet::run_sim(spec, model, default_suite());
  const auto& j = a.json;
  double worst_before = 0, worst_after = 1;
  std::size_t drifted = 0;
  for (std::size_t i = 0; i < spec.devices.size(); ++i) {
    const auto& dev = j.at("devices").at(i);
    if (spec.devices[i].drift) {
      ++drifted;
      const auto& pb = dev.at("precision_before");
      worst_before = std::max(worst_before, pb.is_null() ? 1.0 : pb.get<double>());
    }
    const auto& pa = dev.at("precision_after");
    if (!pa.is_null()) worst_after = std::min(worst_after, pa.get<double>());
  }
  const auto& agg = j.at("aggregate").at("after").at("precision");
  const double agg_after = agg.is_null() ? 0.0 : agg.get<double>();
  std::size_t promotions = 0, rollbacks = 0;
  for (const auto& d : j.at("decisions"))
    (d.at("decision").at("decision") == "promote" ? promotions : rollbacks) += 1;
  const bool same = a.to_json_string() == b.to_json_string() && a.to_csv() == b.to_csv();
  const bool pass = drifted == 3 && worst_before < 0.5 && promotions >= 1 && worst_after >= 0.9 && agg_after >= 0.9 &&
                    a.containment_violations == 0 && a.version_violations == 0 && same;
  return {pass, fmt("drifted devices precision before <= %.3f; after: worst device %.3f, fleet %.3f; %zu promotions, "
                    "%zu rollbacks; containment violations %zu; reports %s (%zu bytes, digest %s)",
                    worst_before, worst_after, agg_after, promotions, rollbacks, a.containment_violations,
                    same ? "identical" : "DIFFER", a.to_json_string().size(),
                    j.at("event_digest").get<std::string>().c_str())};
}

// ---- 11 -------------------------------------------------------------------------

Outcome c11_protocol() {
  using namespace fleet;
  Rng rng(1111);
  std::size_t lossless = 0, truncations = 0, typed_truncations = 0, corruptions = 0, typed_corruptions = 0;
  const auto typed_error = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const FormatError&) {
      return true;
    } catch (...) {
      return false;
    }
    return false;
  };
  for (int i = 0; i < 10000; ++i) {
    const auto kind = rng.below(4);
    Message m;
    std::function<bool(const Message&)> same;
    if (kind == 0) {
      AlarmRecord a;
      a.device_id = "dev" + std::to_string(rng.below(1000));
      a.timestamp = rng.uniform(0, 1e4);
      a.raw_frame.resize(rng.below(1025));
      for (auto& v : a.raw_frame) v = static_cast<float>(rng.normal());
      a.features.resize(rng.below(257));
      for (auto& v : a.features) v = static_cast<float>(rng.normal() * 50);
      a.context = {"p" + std::to_string(rng.below(9)), static_cast<Category>(rng.below(11)), rng.next_u64(),
                   rng.below(5000)};
      a.model_version = "v" + std::to_string(rng.below(50));
      m = make_alarm_upload(a);
      same = [a](const Message& x) { return read_alarm_upload(x) == a; };
    } else if (kind == 1) {
      OtaPush p{"v" + std::to_string(rng.below(50)), rng.bernoulli(0.5), {}};
      p.model_file.resize(rng.below(4096));
      for (auto& v : p.model_file) v = static_cast<std::uint8_t>(rng.below(256));
      m = make_ota_push(p);
      same = [p](const Message& x) { return read_ota_push(x) == p; };
    } else if (kind == 2) {
      const OtaAck k{"dev" + std::to_string(rng.below(1000)), "v" + std::to_string(rng.below(50))};
      m = make_ota_ack(k);
      same = [k](const Message& x) { return read_ota_ack(x) == k; };
    } else {
      const MetricsReport r{"dev" + std::to_string(rng.below(1000)), "v1", rng.next_u64(), rng.next_u64()};
      m = make_metrics_report(r);
      same = [r](const Message& x) { return read_metrics_report(x) == r; };
    }
    const auto frame = encode_message(m);
    const auto back = decode_message(frame);
    if (back == m && same(back)) ++lossless;

    // Every proper prefix for the first 200 messages, one random prefix for the rest.
    const auto check_prefix = [&](std::size_t len) {
      ++truncations;
      const std::span<const std::uint8_t> cut(frame.data(), len);
      try {
        decode_message(cut);
      } catch (const FormatError& e) {
        if (e.kind() == FormatErrorKind::truncated) ++typed_truncations;
      } catch (...) {
      }
    };
    if (i < 200) {
      for (std::size_t len = 0; len < frame.size(); ++len) check_prefix(len);
    } else {
      check_prefix(rng.below(frame.size()));
    }

    // A burst of up to 32 flipped bits anywhere in the frame.
    auto bad = frame;
    const auto pos = rng.below(bad.size());
    const auto width = std::min<std::size_t>(1 + rng.below(4), bad.size() - pos);
    for (std::size_t k = 0; k < width; ++k) bad[pos + k] ^= static_cast<std::uint8_t>(k == 0 ? 1 + rng.below(255) : rng.below(256));
    ++corruptions;
    if (typed_error([&] {
          const auto x = decode_message(bad);
          (void)same(x);
        }))
      ++typed_corruptions;
  }
  const bool pass = lossless == 10000 && typed_truncations == truncations && typed_corruptions == corruptions;
  return {pass, fmt("%zu/10000 lossless round trips; %zu/%zu truncations -> truncated; %zu/%zu corruptions -> typed "
                    "error",
                    lossless, typed_truncations, truncations, typed_corruptions, corruptions)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"DFT oracle", c1_dft},
      {"gradient oracle", c2_gradients},
      {"detection, scaled", c3_detection},
      {"zero nuisance trips", c4_nuisance},
      {"scaling law", c5_scaling},
      {"transfer saturation", c6_saturation},
      {"replay ablation", c7_replay},
      {"adaptation recovery", c8_adaptation},
      {"FLOPs bound", c9_flops},
      {"fleet end-to-end", c10_fleet},
      {"protocol totality", c11_protocol},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const auto start = std::chrono::steady_clock::now();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%s, %.1f s total\n", failed ? (std::to_string(failed) + " criteria failed").c_str() : "all criteria passed",
              seconds_since(start));
  return failed ? 1 : 0;
}
