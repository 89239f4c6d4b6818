// afci: synthetic AFCI pipeline from the command line.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "afci/binary_io.hpp"
#include "afci/config.hpp"
#include "afci/dataset.hpp"
#include "afci/detector.hpp"
#include "afci/evolve.hpp"
#include "afci/fleet.hpp"
#include "afci/scaling.hpp"
#include "afci/train.hpp"
#include "afci/transfer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace afci;

namespace {

constexpr const char* kConfigEnv = "AFCI_CONFIG";
constexpr const char* kToolVersion = "1.0.0";

enum Exit : int { ok = 0, failure = 1, usage = 2, config_error = 3, missing_file = 4, bad_format = 5 };

struct MissingFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything a subcommand needs, plus the provenance it accumulates.
struct Run {
  std::string command;
  RunConfig cfg;
  json doc;  // canonical config
  json inputs = json::array();
  json outputs = json::array();

  json file_entry(const fs::path& p) const {
    const auto bytes = read_file(p);
    return {{"path", p.string()}, {"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}};
  }

  fs::path input(const std::string& p) {
    if (!fs::is_regular_file(p)) throw MissingFile("missing input file " + p);
    inputs.push_back(file_entry(p));
    return p;
  }

  void output(const fs::path& p) { outputs.push_back(file_entry(p)); }

  void text(const fs::path& p, std::string_view body) {
    write_text(p, body);
    output(p);
  }

  void manifest(const fs::path& p) {
    json m = {{"command", command},
              {"tool_version", kToolVersion},
              {"config_hash", config_hash(doc)},
              {"seeds",
               {{"suite", cfg.seed},
                {"train", cfg.train.seed},
                {"transfer", cfg.transfer.seed},
                {"evolution", cfg.evolution.seed},
                {"adapt", cfg.adapt.seed},
                {"fleet", cfg.fleet.seed}}},
              {"config", doc},
              {"inputs", inputs},
              {"outputs", outputs}};
    write_text(p, m.dump(2) + "\n");
  }
};

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides, json& canonical) {
  try {
    json doc = to_json(RunConfig{});
    if (!path.empty()) {
      if (!fs::is_regular_file(path)) throw MissingFile("missing config file " + path);
      std::ifstream in(path);
      json file = json::parse(in, nullptr, false);
      if (file.is_discarded() || !file.is_object()) throw ConfigError("config file " + path + " is not a JSON object");
      doc.merge_patch(file);
    }
    for (const auto& o : overrides) apply_override(doc, o);
    auto cfg = run_config_from_json(doc);
    canonical = to_json(cfg);
    return cfg;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

nn::Model load_model(Run& run, const std::string& path) {
  auto m = nn::decode_model(read_file(run.input(path)));
  return m;
}

FeatureDataset load_features(Run& run, const std::string& path) {
  return load_feature_dataset(run.input(path));
}

void require_dim(const FeatureDataset& d, std::size_t dim, const std::string& what) {
  if (d.dim != dim)
    throw ConfigError(what + " has " + std::to_string(d.dim) + " features, the model expects " + std::to_string(dim));
}

void save_model(Run& run, const fs::path& p, const nn::Model& m) {
  write_file(p, nn::encode_model(m));
  run.output(p);
}

// ---- subcommands ---------------------------------------------------------------

void cmd_synth(Run& run, const fs::path& out) {
  const auto& c = run.cfg;
  const auto suite = synth_suite(c.profiles, c.suite.per_category, c.seed, c.suite_options());
  for (std::size_t i = 0; i < suite.recipes.size(); ++i) {
    const auto p = out / suite.manifest.traces[i].file;
    write_file(p, encode_trace(suite.materialize(i)));
    run.output(p);
  }
  run.text(out / "manifest.json", suite.manifest.to_json());
  std::size_t arcs = 0;
  for (const auto& t : suite.manifest.traces) arcs += t.is_arc;
  std::printf("%zu traces (%zu nuisance, %zu arc), %zu frames\n", suite.manifest.traces.size(),
              suite.manifest.traces.size() - arcs, arcs, suite.manifest.arc_frames() + suite.manifest.normal_frames());
  run.manifest(out / "run_manifest.json");
}

void cmd_featurize(Run& run, const fs::path& suite_dir, const fs::path& out) {
  const auto mpath = run.input((suite_dir / "manifest.json").string());
  const auto text = read_file(mpath);
  const auto j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded()) throw FormatError(FormatErrorKind::malformed, "manifest is not JSON");
  DatasetManifest m;
  try {
    m = manifest_from_json(j);
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::malformed, e.what());
  }
  if (m.frame_len != run.cfg.features.frame_len)
    throw ConfigError("features.frame_len " + std::to_string(run.cfg.features.frame_len) +
                      " differs from the suite frame_len " + std::to_string(m.frame_len));
  std::vector<SignalTrace> traces;
  for (const auto& e : m.traces) {
    auto t = decode_trace(read_file(run.input((suite_dir / e.file).string())), m.frame_len);
    if (t.samples.size() != e.sample_count || t.frame_labels.size() != e.frame_labels.size())
      throw FormatError(FormatErrorKind::malformed, e.file + " does not match its manifest entry");
    t.frame_labels = e.frame_labels;
    t.profile_id = e.profile_id;
    t.category = e.category;
    t.onset_index = e.onset_index;
    traces.push_back(std::move(t));
  }
  const auto data = featurize_traces(traces, run.cfg.features);
  save_feature_dataset(out, data, run.cfg.features);
  run.output(out);
  std::printf("%zu frames x %zu features (%zu arc)\n", data.size(), data.dim, data.count(1));
  run.manifest(out.string() + ".run.json");
}

void cmd_train(Run& run, const std::string& data_path, const fs::path& out) {
  const auto data = load_features(run, data_path);
  require_dim(data, static_cast<std::size_t>(run.cfg.arch.input_dim), data_path);
  const auto r = train(data, run.cfg.arch, run.cfg.train);
  json folds = json::array();
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fr = r.folds[f];
    folds.push_back({{"fold", f},
                     {"test_rows", fr.test_indices.size()},
                     {"epochs_run", fr.log.epochs_run},
                     {"best_epoch", fr.log.best_epoch},
                     {"test", to_json(fr.test)}});
    std::printf("fold %zu  acc %.5f  f1 %.5f  roc_auc %.5f  pr_auc %.5f\n", f, fr.test.accuracy, fr.test.f1,
                fr.test.roc_auc, fr.test.pr_auc);
  }
  save_model(run, out / "model.afcm", r.model);
  const auto test = data.subset(r.folds[r.best_fold].test_indices);
  save_feature_dataset(out / "test.afcf", test, run.cfg.features);
  run.output(out / "test.afcf");
  json report = {{"best_fold", r.best_fold}, {"best_test", to_json(r.folds[r.best_fold].test)}, {"folds", folds}};
  run.text(out / "report.json", report.dump(2) + "\n");
  run.manifest(out / "run_manifest.json");
}

void cmd_eval(Run& run, const std::string& model_path, const std::string& data_path, const std::string& out) {
  const auto model = load_model(run, model_path);
  const auto data = load_features(run, data_path);
  require_dim(data, static_cast<std::size_t>(model.arch.input_dim), data_path);
  const auto body = to_json(evaluate(model, data)).dump(2) + "\n";
  std::cout << body;
  if (!out.empty()) {
    run.text(out, body);
    run.manifest(out + ".run.json");
  }
}

void cmd_detect(Run& run, const std::string& model_path, const std::string& trace_path, const std::string& manifest,
                const std::string& out) {
  const auto model = load_model(run, model_path);
  auto trace = decode_trace(read_file(run.input(trace_path)), run.cfg.features.frame_len);
  if (!manifest.empty()) {
    const auto bytes = read_file(run.input(manifest));
    DatasetManifest m;
    try {
      m = manifest_from_json(json::parse(bytes.begin(), bytes.end()));
    } catch (const std::exception& e) {
      throw FormatError(FormatErrorKind::malformed, e.what());
    }
    bool found = false;
    for (const auto& e : m.traces) {
      if (fs::path(e.file).filename() != fs::path(trace_path).filename()) continue;
      if (e.frame_labels.size() != trace.frame_labels.size())
        throw FormatError(FormatErrorKind::malformed, "manifest labels do not match the trace length");
      trace.frame_labels = e.frame_labels;
      trace.onset_index = e.onset_index;
      found = true;
    }
    if (!found) throw ConfigError("manifest has no entry for " + fs::path(trace_path).filename().string());
  }
  const auto rep = run_detector(model, trace, run.cfg.features, run.cfg.detector);
  std::printf("%zu alarms", rep.alarm_frames.size());
  if (rep.latency_ms) std::printf(", latency %.2f ms", *rep.latency_ms);
  std::printf("\n");
  if (!out.empty()) {
    run.text(out, to_json(rep).dump(2) + "\n");
    run.manifest(out + ".run.json");
  }
}

void cmd_transfer(Run& run, const std::string& model_path, const std::string& source_path,
                  const std::string& target_path, const fs::path& out, bool sweep) {
  const auto model = load_model(run, model_path);
  const auto source = load_features(run, source_path);
  const auto target = load_features(run, target_path);
  require_dim(source, static_cast<std::size_t>(model.arch.input_dim), source_path);
  require_dim(target, static_cast<std::size_t>(model.arch.input_dim), target_path);
  const auto r = adapt(model, source, target, run.cfg.transfer);
  save_model(run, out / "model.afcm", r.model);
  json epochs = json::array();
  for (const auto& e : r.history.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"head_lr", e.head_lr},
                      {"backbone_lr", e.backbone_lr},
                      {"val_target_f1", e.val_target_f1},
                      {"val_source_f1", e.val_source_f1},
                      {"val_mixed_f1", e.val_mixed_f1},
                      {"plateau", e.plateau}});
  json hist = {{"best_epoch", r.history.best_epoch},
               {"best_val_mixed_f1", r.history.best_val_mixed_f1},
               {"plateau_events", r.history.plateau_events},
               {"early_stopped", r.history.early_stopped},
               {"epochs", epochs}};
  run.text(out / "history.json", hist.dump(2) + "\n");
  std::printf("adapted: best epoch %d, validation macro-F1 %.5f\n", r.history.best_epoch,
              r.history.best_val_mixed_f1);
  if (sweep) {
    const auto split = stratified_split(source.labels, 0.2, run.cfg.train.seed);
    const auto s = target_fraction_sweep(model, source.subset(split.first), source.subset(split.second), target,
                                         run.cfg.sweep.target_fractions, run.cfg.transfer);
    run.text(out / "sweep.csv", sweep_csv(s));
    run.text(out / "sweep.json", to_json(s).dump(2) + "\n");
    std::printf("%s", sweep_csv(s).c_str());
  }
  run.manifest(out / "run_manifest.json");
}

void cmd_adapt(Run& run, const std::string& model_path, const std::string& archive_path, const fs::path& out) {
  const auto& c = run.cfg;
  const auto deployed = load_model(run, model_path);
  const auto archive_rows = load_features(run, archive_path);
  require_dim(archive_rows, static_cast<std::size_t>(deployed.arch.input_dim), archive_path);
  const auto drifted = apply_drift(c.profiles[c.adapt.profile], c.adapt.drift);
  const auto field = synth_suite({drifted}, c.suite.per_category, c.adapt.seed, c.suite_options());
  const auto heldout = synth_suite({drifted}, c.suite.per_category, c.adapt.seed + 1, c.suite_options());

  const Featurizer fz(c.features);
  LabelOracle oracle;
  Archive archive{archive_rows, {}};
  AdaptationBatch batch;
  batch.threshold = c.adapt.batch_threshold;
  for (std::size_t i = 0; i < field.recipes.size() && !batch.ready(); ++i) {
    const auto tr = field.materialize(i);
    oracle.add(c.adapt.device_id, i, tr.frame_labels);
    for (const auto& a : stream_alarms(c.adapt.device_id, deployed, tr, {drifted.profile_id, tr.category, i, 0}, fz,
                                       c.detector))
      if (!batch.ready()) route(a, oracle, archive, batch);
  }

  const auto novel = featurize_suite(heldout, c.features);
  const auto before = evaluate(deployed, novel);
  json report = {{"drifted_profile", to_json(drifted)},
                 {"false_alarms_collected", batch.records.size()},
                 {"arcs_confirmed", archive.confirmed.size()},
                 {"before", {{"novel", to_json(before)}}}};
  if (!batch.ready()) {
    report["adapted"] = false;
    std::printf("only %zu false alarms (threshold %zu); no adaptation\n", batch.records.size(), batch.threshold);
    run.text(out / "report.json", report.dump(2) + "\n");
    run.manifest(out / "run_manifest.json");
    return;
  }
  Rng rng(c.evolution.seed);
  const auto data = prepare_evolution_data(batch, archive, c.evolution, rng);
  const auto s1 = stage1_evolve(deployed, data, c.evolution, rng);
  auto model = s1.model;
  auto log = s1.log;
  report["stage1"] = {{"fitness", s1.fitness},
                      {"baseline_fitness", s1.baseline_fitness},
                      {"best_per_generation", s1.best_per_generation},
                      {"saturated", s1.saturated},
                      {"config", to_json(s1.config)}};
  if (c.adapt.allow_stage2 && s1.saturated) {
    const auto s2 = stage2_evolve(s1, deployed.arch, data, c.evolution, rng);
    report["stage2"] = {{"fitness", s2.fitness},
                        {"flops_ratio", s2.flops_ratio},
                        {"rejected", s2.rejected},
                        {"arch", nn::to_json(s2.arch)}};
    log.insert(log.end(), s2.log.begin(), s2.log.end());
    if (s2.fitness > s1.fitness) model = s2.model;
  }
  std::vector<HoldoutStream> streams;
  for (std::size_t i = 0; i < heldout.recipes.size(); ++i) streams.push_back({heldout.recipes[i].name, heldout.materialize(i)});
  const auto temporal = temporal_validate(model, streams, c.features, c.detector);
  const auto after = evaluate(model, novel);
  report["adapted"] = true;
  report["after"] = {{"novel", to_json(after)}};
  report["archive_val_macro_f1"] = {{"before", evaluate(deployed, data.archive_val).macro_f1},
                                    {"after", evaluate(model, data.archive_val).macro_f1}};
  report["temporal_validation"] = to_json(temporal);
  save_model(run, out / "model.afcm", model);
  run.text(out / "search_log.jsonl", search_log_jsonl(log));
  run.text(out / "report.json", report.dump(2) + "\n");
  std::printf("novel precision %.4f -> %.4f, recall %.4f -> %.4f; temporal validation %s\n", before.precision,
              after.precision, before.recall, after.recall, temporal.pass ? "pass" : "fail");
  run.manifest(out / "run_manifest.json");
}

void cmd_fleet(Run& run, const std::string& model_path, const std::string& archive_path, const fs::path& out) {
  const auto model = load_model(run, model_path);
  const auto archive = load_features(run, archive_path);
  require_dim(archive, static_cast<std::size_t>(model.arch.input_dim), archive_path);
  const auto rep = fleet::run_sim(run.cfg.fleet_spec(), model, archive);
  run.text(out / "fleet_report.json", rep.to_json_string() + "\n");
  run.text(out / "fleet_report.csv", rep.to_csv());
  std::printf("%s", rep.to_csv().c_str());
  std::printf("fleet version %s, containment violations %zu\n", rep.json.at("fleet_version").get<std::string>().c_str(),
              rep.containment_violations);
  run.manifest(out / "run_manifest.json");
}

void cmd_scale(Run& run, const std::string& data_path, const fs::path& out) {
  const auto data = load_features(run, data_path);
  require_dim(data, static_cast<std::size_t>(run.cfg.arch.input_dim), data_path);
  const auto pts = scale_sweep(data, run.cfg.scale.fractions, run.cfg.arch, run.cfg.train, run.cfg.scale.repeats);
  std::ostringstream csv;
  csv << "n,loss\n";
  csv.precision(10);
  for (const auto& p : pts) csv << p.n << ',' << p.loss << '\n';
  run.text(out / "scale.csv", csv.str());
  const auto fit = fit_scaling_law(pts);
  run.text(out / "scaling_fit.json", to_json(fit).dump(2) + "\n");
  std::printf("%s", csv.str().c_str());
  std::printf("alpha %.4f  l_inf %.5f\n", fit.alpha, fit.l_inf);
  run.manifest(out / "run_manifest.json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic AFCI pipeline: synthesis, features, training, detection, adaptation, fleet simulation"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, std::string("Run config JSON (default: $") + kConfigEnv + ")");
  app.add_option("-s,--set", overrides, "Override one config key, e.g. train.epochs=4")->allow_extra_args(false);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);

  std::string out, data, model, trace, manifest, suite, source, target, archive;
  bool sweep = false;

  auto* synth = app.add_subcommand("synth", "Synthesize the labeled trace suite");
  synth->add_option("-o,--out", out, "Output directory")->required();
  auto* featurize = app.add_subcommand("featurize", "Featurize a synthesized suite");
  featurize->add_option("--suite", suite, "Suite directory (with manifest.json)")->required();
  featurize->add_option("-o,--out", out, "Feature file")->required();
  auto* train_cmd = app.add_subcommand("train", "K-fold training");
  train_cmd->add_option("--data", data, "Feature file")->required();
  train_cmd->add_option("-o,--out", out, "Output directory")->required();
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a feature file");
  eval->add_option("--model", model, "Model file")->required();
  eval->add_option("--data", data, "Feature file")->required();
  eval->add_option("-o,--out", out, "Metrics JSON");
  auto* detect = app.add_subcommand("detect", "Stream a trace through the detector");
  detect->add_option("--model", model, "Model file")->required();
  detect->add_option("--trace", trace, "Trace file")->required();
  detect->add_option("--manifest", manifest, "Suite manifest holding the trace labels");
  detect->add_option("-o,--out", out, "Event report JSON");
  auto* transfer = app.add_subcommand("transfer", "Adapt a source model to a target domain");
  transfer->add_option("--model", model, "Source model file")->required();
  transfer->add_option("--source", source, "Source feature file (replay)")->required();
  transfer->add_option("--target", target, "Target feature file")->required();
  transfer->add_option("-o,--out", out, "Output directory")->required();
  transfer->add_flag("--sweep", sweep, "Also run the target-fraction sweep");
  auto* adapt_cmd = app.add_subcommand("adapt", "Collect false alarms under drift and evolve the model");
  adapt_cmd->add_option("--model", model, "Deployed model file")->required();
  adapt_cmd->add_option("--archive", archive, "Archive feature file")->required();
  adapt_cmd->add_option("-o,--out", out, "Output directory")->required();
  auto* fleet_cmd = app.add_subcommand("fleet", "Run the fleet simulation");
  fleet_cmd->add_option("--model", model, "Initial model file")->required();
  fleet_cmd->add_option("--archive", archive, "Archive feature file")->required();
  fleet_cmd->add_option("-o,--out", out, "Output directory")->required();
  auto* scale = app.add_subcommand("scale", "Data scaling sweep and power-law fit");
  scale->add_option("--data", data, "Feature file")->required();
  scale->add_option("-o,--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return usage;
  }

  try {
    if (config_path.empty())
      if (const char* env = std::getenv(kConfigEnv)) config_path = env;
    Run run;
    run.command = app.get_subcommands().front()->get_name();
    run.cfg = load_config(config_path, overrides, run.doc);
    try {
      if (*adapt_cmd) run.cfg.validate_adapt();
      if (*fleet_cmd) run.cfg.validate_fleet();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!config_path.empty()) run.input(config_path);

    if (*synth) cmd_synth(run, out);
    if (*featurize) cmd_featurize(run, suite, out);
    if (*train_cmd) cmd_train(run, data, out);
    if (*eval) cmd_eval(run, model, data, out);
    if (*detect) cmd_detect(run, model, trace, manifest, out);
    if (*transfer) cmd_transfer(run, model, source, target, out, sweep);
    if (*adapt_cmd) cmd_adapt(run, model, archive, out);
    if (*fleet_cmd) cmd_fleet(run, model, archive, out);
    if (*scale) cmd_scale(run, data, out);
    return ok;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const MissingFile& e) {
    std::cerr << "error: " << e.what() << "\n";
    return missing_file;
  } catch (const FormatError& e) {
    std::cerr << "bad input format: " << e.what() << "\n";
    return bad_format;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failure;
  }
}
