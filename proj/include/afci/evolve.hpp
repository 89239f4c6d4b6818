#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "afci/detector.hpp"
#include "afci/features.hpp"
#include "afci/nn.hpp"
#include "afci/rng.hpp"
#include "afci/train.hpp"
#include "afci/transfer.hpp"

namespace afci {

// ---- Alarm capture and verification ---------------------------------------

struct AlarmContext {
  std::string profile_id;
  Category category = Category::steady;
  std::uint64_t trace_key = 0;  // identifies the stream within the device
  std::size_t frame_index = 0;
  bool operator==(const AlarmContext&) const = default;
};

struct AlarmRecord {
  std::string device_id;
  double timestamp = 0.0;  // sim seconds
  std::vector<float> raw_frame;
  SpectralVector features;
  AlarmContext context;
  std::string model_version;
  bool operator==(const AlarmRecord&) const = default;
};

// Requires a latched detector state. Throws std::invalid_argument when the
// feature width does not match the model input.
AlarmRecord capture_alarm(const std::string& device_id, double timestamp, const DetectorState& state,
                          FrameView frame, const Featurizer& featurizer, const nn::Model& model,
                          const AlarmContext& context);

// Streams a whole trace through the detector and captures one record per alarm.
std::vector<AlarmRecord> stream_alarms(const std::string& device_id, const nn::Model& model, const SignalTrace& trace,
                                       const AlarmContext& context, const Featurizer& featurizer,
                                       const DetectorConfig& detector, double t0 = 0.0);

enum class Verdict { true_arc, false_alarm };

struct VerificationResult {
  Verdict verdict = Verdict::false_alarm;
  std::string source = "oracle";
};

// Ground-truth frame labels keyed by (device_id, trace_key).
class LabelOracle {
 public:
  void add(const std::string& device_id, std::uint64_t trace_key, std::vector<std::uint8_t> labels);
  bool covers(const AlarmRecord& record) const;
  // Throws std::out_of_range outside coverage.
  std::uint8_t label(const AlarmRecord& record) const;

 private:
  std::map<std::pair<std::string, std::uint64_t>, std::vector<std::uint8_t>> labels_;
};

VerificationResult verify(const AlarmRecord& record, const LabelOracle& oracle);

// Labelled training data plus every confirmed arc.
struct Archive {
  FeatureDataset data;
  std::vector<AlarmRecord> confirmed;

  void add(const AlarmRecord& record);
};

struct AdaptationBatch {
  std::size_t threshold = 64;
  std::vector<AlarmRecord> records;

  bool ready() const { return records.size() >= threshold; }
  // Every record as a normal-labelled row.
  FeatureDataset features() const;
};

// Verifies and files the record: true arcs into the archive, false alarms
// into the batch.
Verdict route(const AlarmRecord& record, const LabelOracle& oracle, Archive& archive, AdaptationBatch& batch);

// ---- Evolution -------------------------------------------------------------

struct Stage1Space {
  std::vector<double> head_lr{0.003, 0.01, 0.03};
  std::vector<double> backbone_lr_ratio{0.1, 0.3, 1.0};
  std::vector<double> alpha{0.5, 1.0, 2.0};
  std::vector<double> beta{0.25, 0.5, 1.0};
  std::vector<double> lambda{1e-5, 1e-4, 1e-3};
  std::vector<double> mix_ratio{0.5, 1.0, 2.0};
  std::vector<int> max_epochs{10, 20, 30};
};

struct Stage2Space {
  std::vector<int> kernel_delta{-2, 0, 2};
  std::vector<double> width{0.75, 1.0, 1.25};
  std::vector<int> fc_delta{-32, 0, 32};
  std::vector<double> dropout{0.1, 0.2, 0.3};
};

struct EvolutionConfig {
  Stage1Space stage1;
  Stage2Space stage2;
  int population = 8;
  int generations = 5;
  int tournament = 2;
  double mutation_rate = 0.3;
  double flops_bound = 1.05;
  double saturation_eps = 1e-3;
  double novel_val_fraction = 0.25;
  double archive_val_fraction = 0.2;
  std::size_t archive_val_max = 2000;
  // Stage-2 candidates are scored after a short fit on a subsample; the
  // winner is then retrained with `stage2_train` on everything.
  std::size_t stage2_search_rows = 4000;
  int stage2_search_epochs = 4;
  TrainConfig stage2_train;
  TransferConfig base;  // fields not covered by the stage-1 space
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const EvolutionConfig& c);
EvolutionConfig evolution_config_from_json(const nlohmann::json& j);

// Train/validation material shared by both stages.
struct EvolutionData {
  FeatureDataset novel_train;    // false alarms, label 0
  FeatureDataset novel_val;
  FeatureDataset archive_train;  // replay pool and arc exemplar source
  FeatureDataset archive_val;
  // Novel rows and 1:1 archive arc exemplars.
  FeatureDataset target;
};

// Errors: batch not ready; empty archive or no archived arcs.
EvolutionData prepare_evolution_data(const AdaptationBatch& batch, const Archive& archive,
                                     const EvolutionConfig& cfg, Rng& rng);

// Macro-F1 over novel_val and archive_val with both halves weighted equally.
double blend_fitness(const nn::Model& model, const EvolutionData& data);

struct Stage1Result {
  nn::Model model;
  TransferConfig config;
  double fitness = 0.0;
  double baseline_fitness = 0.0;
  std::vector<double> best_per_generation;
  bool saturated = false;
  std::vector<nlohmann::json> log;  // one record per evaluated candidate
};

Stage1Result stage1_evolve(const nn::Model& deployed, const AdaptationBatch& batch, const Archive& archive,
                           const EvolutionConfig& cfg, Rng& rng);
// Same, from prepared data.
Stage1Result stage1_evolve(const nn::Model& deployed, const EvolutionData& data, const EvolutionConfig& cfg,
                           Rng& rng);

struct ArchCandidate {
  nn::ArchSpec arch;
  double flops_ratio = 0.0;
  bool feasible = false;
};

// Random stage-2 mutation of `base`. Kernels stay odd, >= 1, and
// non-increasing from block to block.
nn::ArchSpec mutate_arch(const nn::ArchSpec& base, const Stage2Space& space, Rng& rng);
ArchCandidate screen_flops(const nn::ArchSpec& base, const nn::ArchSpec& candidate, double bound);

struct Stage2Result {
  nn::Model model;
  nn::ArchSpec arch;
  double fitness = 0.0;
  double flops_ratio = 1.0;
  std::size_t rejected = 0;
  std::vector<nlohmann::json> log;
};

// Throws std::logic_error unless stage 1 saturated, std::runtime_error when
// no candidate satisfies the FLOPs bound.
Stage2Result stage2_evolve(const Stage1Result& stage1, const nn::ArchSpec& base, const EvolutionData& data,
                           const EvolutionConfig& cfg, Rng& rng);

std::string search_log_jsonl(const std::vector<nlohmann::json>& log);

// ---- Temporal validation ---------------------------------------------------

struct StreamOutcome {
  std::string name;
  bool has_arc = false;
  std::size_t alarms = 0;
  std::size_t false_alarms = 0;
  bool detected = false;
};

struct TemporalReport {
  bool pass = false;
  std::size_t false_alarms = 0;
  std::size_t arc_streams = 0;
  std::size_t detected_arcs = 0;
  std::vector<StreamOutcome> streams;
};

nlohmann::json to_json(const TemporalReport& r);

struct HoldoutStream {
  std::string name;
  SignalTrace trace;
};

// Pass iff no alarm lands on a normal frame in any stream and every stream
// containing an arc raises at least one alarm on its arc frames.
TemporalReport temporal_validate(const nn::Model& model, const std::vector<HoldoutStream>& streams,
                                 const FeatureConfig& features, const DetectorConfig& detector);

// ---- Canary ----------------------------------------------------------------

struct CanaryConfig {
  double canary_fraction = 0.1;
  std::size_t window_frames = 2000;  // per-device frames in the monitoring window
  double tolerance = 0.0;

  void validate() const;
};

nlohmann::json to_json(const CanaryConfig& c);
CanaryConfig canary_config_from_json(const nlohmann::json& j);

struct CanaryStats {
  std::size_t frames = 0;
  std::size_t normal_frames = 0;
  std::size_t false_alarms = 0;
  std::size_t arc_events = 0;
  std::size_t missed_arcs = 0;

  double false_alarm_rate() const;
  double miss_rate() const;
  CanaryStats& operator+=(const CanaryStats& o);
  bool operator==(const CanaryStats&) const = default;
};

nlohmann::json to_json(const CanaryStats& s);
CanaryStats canary_stats_from_json(const nlohmann::json& j);

enum class CanaryVerdict { promote, rollback };

struct CanaryDecision {
  CanaryVerdict verdict = CanaryVerdict::rollback;
  CanaryStats candidate;
  CanaryStats baseline;
  nlohmann::json trace;  // rule evaluation, one entry per rule
};

nlohmann::json to_json(const CanaryDecision& d);

// Throws std::invalid_argument when either stat set covers fewer frames
// than the window.
CanaryDecision canary_decide(const CanaryStats& candidate, const CanaryStats& baseline, const CanaryConfig& cfg);

}  // namespace afci
