#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "afci/binary_io.hpp"
#include "afci/detector.hpp"
#include "afci/evolve.hpp"
#include "afci/features.hpp"
#include "afci/nn.hpp"
#include "afci/signal.hpp"

namespace afci::fleet {

// ---- Wire protocol -----------------------------------------------------------

enum class MessageType : std::uint8_t { alarm_upload = 1, ota_push = 2, ota_ack = 3, metrics_report = 4 };

std::string_view message_type_name(MessageType t);

struct Message {
  MessageType type = MessageType::metrics_report;
  std::vector<std::uint8_t> body;
  bool operator==(const Message&) const = default;
};

// u8 tag | u32 body length | body. Decoding throws FormatError: truncated,
// unknown_tag, or malformed for trailing bytes.
std::vector<std::uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const std::uint8_t> bytes);

// Typed bodies end with a CRC-32 over the tag byte and the payload, so a
// damaged or re-tagged body fails with FormatErrorKind::checksum.
struct OtaPush {
  std::string version;
  bool rollback = false;
  std::vector<std::uint8_t> model_file;  // nn model file bytes
  bool operator==(const OtaPush&) const = default;
};

struct OtaAck {
  std::string device_id;
  std::string version;
  bool operator==(const OtaAck&) const = default;
};

struct MetricsReport {
  std::string device_id;
  std::string version;
  std::uint64_t frames = 0;
  std::uint64_t alarms = 0;
  bool operator==(const MetricsReport&) const = default;
};

Message make_alarm_upload(const AlarmRecord& r);
Message make_ota_push(const OtaPush& p);
Message make_ota_ack(const OtaAck& a);
Message make_metrics_report(const MetricsReport& r);
// Each throws FormatError, including unknown_tag when the message type differs.
AlarmRecord read_alarm_upload(const Message& m);
OtaPush read_ota_push(const Message& m);
OtaAck read_ota_ack(const Message& m);
MetricsReport read_metrics_report(const Message& m);

// ---- Event queue ---------------------------------------------------------------

enum class EventKind : std::uint8_t { frame_tick, upload_arrive, ota_arrive, window_close };

std::string_view event_kind_name(EventKind k);

struct SimEvent {
  double time = 0.0;
  std::uint64_t seq = 0;  // insertion order, assigned by the queue
  EventKind kind = EventKind::frame_tick;
  std::size_t device = 0;
  std::optional<Message> message;
};

// Pops in (time, insertion order). Scheduling before the current time throws
// std::logic_error.
class EventQueue {
 public:
  std::uint64_t push(SimEvent e);
  SimEvent pop();
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  double now() const { return now_; }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
  std::uint64_t next_seq_ = 0;
  double now_ = 0.0;
};

// ---- Fleet specification -------------------------------------------------------

struct ScheduleSegment {
  Category category = Category::steady;
  double duration = 1.0;
  int sub_condition = 0;
  int arc_condition = 0;  // used when category is arc
};

struct DeviceSpec {
  std::string device_id;
  std::size_t profile = 0;
  std::optional<DriftSpec> drift;
};

struct FleetSpec {
  std::vector<HardwareProfile> profiles;
  std::vector<DeviceSpec> devices;
  // Cycled for the whole run; device i starts at segment i mod size.
  std::vector<ScheduleSegment> schedule;
  double duration = 30.0;        // sim seconds
  double link_latency = 0.01;    // seconds, every message
  double metrics_period = 1.0;   // seconds between METRICS_REPORTs
  double adaptation_delay = 1.0; // sim seconds between batch ready and the canary push
  std::size_t batch_threshold = 64;
  int max_rounds = 2;
  bool allow_stage2 = false;
  double holdout_duration = 0.5;
  CanaryConfig canary;
  EvolutionConfig evolution;
  DetectorConfig detector;
  FeatureConfig features;
  std::uint64_t seed = 1;

  void validate() const;
  // Ten devices over profiles A and B, the last `drifted` of them carrying
  // the default field drift; schedule = every nuisance category, steady, arc.
  static FleetSpec demo(std::size_t devices = 10, std::size_t drifted = 3);
};

// ---- Cloud ---------------------------------------------------------------------

struct RegistryEntry {
  std::string version;
  std::vector<std::uint8_t> model_file;
  bool rejected = false;
};

struct CloudNode {
  std::vector<RegistryEntry> registry;
  std::vector<std::string> device_ids;  // fleet order
  std::vector<std::string> roster;      // canary devices
  std::map<std::string, std::string> reported_version;

  const RegistryEntry* find(std::string_view version) const;
  // Registers the model as "v<n>" and returns the version.
  std::string add(nn::Model model);
};

// First ceil(fraction * n) device ids in sorted order.
std::vector<std::string> canary_roster(std::vector<std::string> device_ids, double fraction);

// OTA_PUSH events for the targets (restricted to the roster when `canary`).
// Throws std::out_of_range for a version missing from the registry.
std::vector<SimEvent> ota_deploy(const CloudNode& cloud, const std::string& version,
                                 const std::vector<std::string>& targets, bool canary, double now, double latency,
                                 bool rollback = false);

// ---- Metrics -------------------------------------------------------------------

// One processed frame on one device.
struct FrameLog {
  double time = 0.0;  // end of the frame
  std::uint32_t version = 0;  // index into the registry
  std::uint8_t label = 0;
  bool alarm = false;
  std::int64_t arc_event = -1;  // per-device arc event id
};

struct DeviceMetrics {
  std::string device_id;
  std::size_t frames = 0, normal_frames = 0;
  std::size_t alarms = 0, true_alarms = 0, false_alarms = 0;
  std::size_t arc_events = 0, missed_arcs = 0;
  std::optional<double> precision;  // null without alarms

  double false_alarm_rate() const;
  double miss_rate() const;
  DeviceMetrics& operator+=(const DeviceMetrics& o);
};

nlohmann::json to_json(const DeviceMetrics& m);

struct FleetMetrics {
  std::vector<DeviceMetrics> devices;
  DeviceMetrics aggregate;
};

nlohmann::json to_json(const FleetMetrics& m);

struct Window {
  double start = 0.0, end = 0.0;
};

// Frames with start <= time < end, optionally only those run on one version.
// Arc events count when their first frame falls inside and are missed when
// no alarm lands on any of their frames.
DeviceMetrics device_metrics(const std::string& device_id, const std::vector<FrameLog>& log, const Window& w,
                             std::optional<std::uint32_t> version = std::nullopt);

// Throws std::logic_error when the window extends past `now`.
FleetMetrics collect_fleet_metrics(const std::vector<std::string>& device_ids,
                                   const std::vector<std::vector<FrameLog>>& logs, const Window& w, double now);

// ---- Simulation ----------------------------------------------------------------

struct Candidate {
  nn::Model model;
  nlohmann::json info;
};

// Produces a candidate from the deployed model and the filled batch.
using AdaptEngine = std::function<Candidate(const nn::Model& deployed, const AdaptationBatch& batch,
                                            const Archive& archive, const FleetSpec& spec, Rng& rng)>;

// Stage 1, then stage 2 when allowed and stage 1 saturated.
Candidate default_engine(const nn::Model& deployed, const AdaptationBatch& batch, const Archive& archive,
                         const FleetSpec& spec, Rng& rng);

struct TraceEntry {
  double time = 0.0;
  std::string kind;  // event kind, or "swap" / "decision" / "adapt"
  std::string device;
  std::string detail;
};

struct FleetReport {
  nlohmann::json json;
  std::vector<TraceEntry> trace;
  std::size_t containment_violations = 0;
  std::size_t version_violations = 0;

  std::string to_json_string() const { return json.dump(2); }
  // device_id,alarms,precision_before,precision_after
  std::string to_csv() const;
};

using Validator = std::function<TemporalReport(const nn::Model& candidate, const std::vector<HoldoutStream>& holdout,
                                               const FleetSpec& spec)>;

TemporalReport default_validator(const nn::Model& candidate, const std::vector<HoldoutStream>& holdout,
                                 const FleetSpec& spec);

struct SimOptions {
  AdaptEngine engine = default_engine;
  Validator validator = default_validator;
};

// Errors: std::invalid_argument for an empty fleet, an empty or malformed
// schedule, or an archive whose width differs from the model input.
FleetReport run_sim(const FleetSpec& spec, const nn::Model& initial, const FeatureDataset& archive,
                    const SimOptions& options = {});

// Non-canary devices that ever ran a rejected version, from the trace.
std::size_t audit_containment(const std::vector<TraceEntry>& trace, const std::vector<std::string>& roster,
                              const std::vector<std::string>& rejected_versions);

}  // namespace afci::fleet
