#include "afci/fleet.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>
#include <stdexcept>

namespace afci::fleet {

// ---- Wire protocol -----------------------------------------------------------

std::string_view message_type_name(MessageType t) {
  switch (t) {
    case MessageType::alarm_upload: return "ALARM_UPLOAD";
    case MessageType::ota_push: return "OTA_PUSH";
    case MessageType::ota_ack: return "OTA_ACK";
    case MessageType::metrics_report: return "METRICS_REPORT";
  }
  return "?";
}

namespace {

bool known_tag(std::uint8_t t) { return t >= 1 && t <= 4; }

std::uint32_t body_crc(MessageType type, std::span<const std::uint8_t> payload) {
  const auto tag = static_cast<Bytef>(type);
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, &tag, 1);
  c = crc32(c, payload.data(), static_cast<uInt>(payload.size()));
  return static_cast<std::uint32_t>(c);
}

Message seal(MessageType type, ByteWriter&& w) {
  auto payload = std::move(w).take();
  const auto crc = body_crc(type, payload);
  ByteWriter out;
  out.bytes(payload);
  out.u32(crc);
  return {type, std::move(out).take()};
}

// Checks type and CRC and returns a reader over the payload.
ByteReader open(const Message& m, MessageType expected) {
  if (m.type != expected)
    throw FormatError(FormatErrorKind::unknown_tag, "expected " + std::string(message_type_name(expected)) + ", got " +
                                                        std::string(message_type_name(m.type)));
  if (m.body.size() < 4) throw FormatError(FormatErrorKind::truncated, "message body shorter than its checksum");
  const std::span<const std::uint8_t> body(m.body);
  const auto payload = body.first(body.size() - 4);
  ByteReader tail(body.last(4));
  if (tail.u32() != body_crc(m.type, payload))
    throw FormatError(FormatErrorKind::checksum, std::string(message_type_name(m.type)) + " checksum mismatch");
  return ByteReader(payload);
}

void done(const ByteReader& r, MessageType t) {
  if (!r.at_end())
    throw FormatError(FormatErrorKind::malformed, std::string(message_type_name(t)) + " body has trailing bytes");
}

std::vector<float> read_floats(ByteReader& r) {
  const auto n = r.u32();
  if (static_cast<std::size_t>(n) * 4 > r.remaining())
    throw FormatError(FormatErrorKind::truncated, "float array longer than the body");
  return r.f32s(n);
}

void write_floats(ByteWriter& w, std::span<const float> v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.f32s(v);
}

}  // namespace

std::vector<std::uint8_t> encode_message(const Message& m) {
  if (!known_tag(static_cast<std::uint8_t>(m.type))) throw std::invalid_argument("unknown message type");
  if (m.body.size() > 0xFFFFFFFFu) throw std::invalid_argument("message body too large");
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u32(static_cast<std::uint32_t>(m.body.size()));
  w.bytes(m.body);
  return std::move(w).take();
}

Message decode_message(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto tag = r.u8();
  if (!known_tag(tag)) throw FormatError(FormatErrorKind::unknown_tag, "unknown message tag " + std::to_string(tag));
  const auto len = r.u32();
  Message m;
  m.type = static_cast<MessageType>(tag);
  const auto body = r.bytes(len);
  m.body.assign(body.begin(), body.end());
  if (!r.at_end()) throw FormatError(FormatErrorKind::malformed, "trailing bytes after message body");
  return m;
}

Message make_alarm_upload(const AlarmRecord& a) {
  ByteWriter w;
  w.str(a.device_id);
  w.f64(a.timestamp);
  write_floats(w, a.raw_frame);
  write_floats(w, a.features);
  w.str(a.context.profile_id);
  w.u8(static_cast<std::uint8_t>(a.context.category));
  w.u64(a.context.trace_key);
  w.u64(a.context.frame_index);
  w.str(a.model_version);
  return seal(MessageType::alarm_upload, std::move(w));
}

AlarmRecord read_alarm_upload(const Message& m) {
  auto r = open(m, MessageType::alarm_upload);
  AlarmRecord a;
  a.device_id = r.str();
  a.timestamp = r.f64();
  a.raw_frame = read_floats(r);
  a.features = read_floats(r);
  a.context.profile_id = r.str();
  const auto cat = r.u8();
  if (cat > static_cast<std::uint8_t>(Category::arc))
    throw FormatError(FormatErrorKind::malformed, "unknown scenario category " + std::to_string(cat));
  a.context.category = static_cast<Category>(cat);
  a.context.trace_key = r.u64();
  a.context.frame_index = r.u64();
  a.model_version = r.str();
  done(r, m.type);
  return a;
}

Message make_ota_push(const OtaPush& p) {
  ByteWriter w;
  w.str(p.version);
  w.u8(p.rollback ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(p.model_file.size()));
  w.bytes(p.model_file);
  return seal(MessageType::ota_push, std::move(w));
}

OtaPush read_ota_push(const Message& m) {
  auto r = open(m, MessageType::ota_push);
  OtaPush p;
  p.version = r.str();
  const auto flag = r.u8();
  if (flag > 1) throw FormatError(FormatErrorKind::malformed, "OTA_PUSH rollback flag must be 0 or 1");
  p.rollback = flag == 1;
  const auto n = r.u32();
  const auto b = r.bytes(n);
  p.model_file.assign(b.begin(), b.end());
  done(r, m.type);
  return p;
}

Message make_ota_ack(const OtaAck& a) {
  ByteWriter w;
  w.str(a.device_id);
  w.str(a.version);
  return seal(MessageType::ota_ack, std::move(w));
}

OtaAck read_ota_ack(const Message& m) {
  auto r = open(m, MessageType::ota_ack);
  OtaAck a;
  a.device_id = r.str();
  a.version = r.str();
  done(r, m.type);
  return a;
}

Message make_metrics_report(const MetricsReport& x) {
  ByteWriter w;
  w.str(x.device_id);
  w.str(x.version);
  w.u64(x.frames);
  w.u64(x.alarms);
  return seal(MessageType::metrics_report, std::move(w));
}

MetricsReport read_metrics_report(const Message& m) {
  auto r = open(m, MessageType::metrics_report);
  MetricsReport x;
  x.device_id = r.str();
  x.version = r.str();
  x.frames = r.u64();
  x.alarms = r.u64();
  done(r, m.type);
  return x;
}

// ---- Event queue ---------------------------------------------------------------

std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::frame_tick: return "frame_tick";
    case EventKind::upload_arrive: return "upload_arrive";
    case EventKind::ota_arrive: return "ota_arrive";
    case EventKind::window_close: return "window_close";
  }
  return "?";
}

std::uint64_t EventQueue::push(SimEvent e) {
  if (e.time < now_) throw std::logic_error("event scheduled in the past");
  e.seq = next_seq_++;
  heap_.push(std::move(e));
  return next_seq_ - 1;
}

SimEvent EventQueue::pop() {
  if (heap_.empty()) throw std::logic_error("pop on an empty event queue");
  SimEvent e = heap_.top();
  heap_.pop();
  now_ = e.time;
  return e;
}

// ---- Fleet specification -------------------------------------------------------

void FleetSpec::validate() const {
  if (devices.empty()) throw std::invalid_argument("fleet needs at least one device");
  if (profiles.empty()) throw std::invalid_argument("fleet needs at least one profile");
  for (const auto& p : profiles) p.validate();
  std::set<std::string> ids;
  for (const auto& d : devices) {
    if (d.device_id.empty()) throw std::invalid_argument("device_id must not be empty");
    if (!ids.insert(d.device_id).second) throw std::invalid_argument("duplicate device_id " + d.device_id);
    if (d.profile >= profiles.size())
      throw std::invalid_argument("device " + d.device_id + " names profile " + std::to_string(d.profile) +
                                  " of " + std::to_string(profiles.size()));
    if (d.drift) apply_drift(profiles[d.profile], *d.drift);
  }
  if (schedule.empty()) throw std::invalid_argument("schedule must not be empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& s = schedule[i];
    const auto where = "schedule[" + std::to_string(i) + "]";
    if (!(s.duration > 0) || !std::isfinite(s.duration)) throw std::invalid_argument(where + ".duration must be positive");
    if (s.sub_condition < 0) throw std::invalid_argument(where + ".sub_condition must be >= 0");
    if (s.arc_condition < 0) throw std::invalid_argument(where + ".arc_condition must be >= 0");
    const auto fs = profiles.front().sample_rate;
    if (static_cast<std::size_t>(s.duration * fs) < features.frame_len)
      throw std::invalid_argument(where + " is shorter than one frame");
  }
  for (const auto& p : profiles)
    if (p.sample_rate != profiles.front().sample_rate) throw std::invalid_argument("fleet profiles must share one sample_rate");
  if (!(duration > 0)) throw std::invalid_argument("fleet.duration must be positive");
  if (!(link_latency >= 0)) throw std::invalid_argument("fleet.link_latency must be >= 0");
  if (!(metrics_period > 0)) throw std::invalid_argument("fleet.metrics_period must be positive");
  if (!(adaptation_delay >= 0)) throw std::invalid_argument("fleet.adaptation_delay must be >= 0");
  if (batch_threshold == 0) throw std::invalid_argument("fleet.batch_threshold must be positive");
  if (max_rounds < 0) throw std::invalid_argument("fleet.max_rounds must be >= 0");
  if (!(holdout_duration > 0)) throw std::invalid_argument("fleet.holdout_duration must be positive");
  canary.validate();
  evolution.validate();
  detector.validate();
  features.validate();
}

FleetSpec FleetSpec::demo(std::size_t devices, std::size_t drifted) {
  if (drifted > devices) throw std::invalid_argument("more drifted devices than devices");
  FleetSpec s;
  s.profiles = {default_profile_a(), default_profile_b()};
  for (std::size_t i = 0; i < devices; ++i) {
    DeviceSpec d;
    d.device_id = (i < 10 ? "dev0" : "dev") + std::to_string(i);
    d.profile = i % 2;
    if (i >= devices - drifted) d.drift = default_field_drift();
    s.devices.push_back(std::move(d));
  }
  for (auto c : kNuisanceCategories) s.schedule.push_back({c, 1.0, 0, 0});
  s.schedule.push_back({Category::steady, 1.0, 0, 0});
  s.schedule.push_back({Category::arc, 1.0, 0, 0});
  return s;
}

// ---- Cloud ---------------------------------------------------------------------

const RegistryEntry* CloudNode::find(std::string_view version) const {
  for (const auto& e : registry)
    if (e.version == version) return &e;
  return nullptr;
}

std::string CloudNode::add(nn::Model model) {
  const auto version = "v" + std::to_string(registry.size() + 1);
  model.params.version = version;
  registry.push_back({version, nn::encode_model(model), false});
  return version;
}

std::vector<std::string> canary_roster(std::vector<std::string> device_ids, double fraction) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("canary fraction must lie in (0, 1]");
  std::sort(device_ids.begin(), device_ids.end());
  // Guard against 0.1 * 10 landing a hair above 1.
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(device_ids.size()) - 1e-9));
  device_ids.resize(std::min(n, device_ids.size()));
  return device_ids;
}

std::vector<SimEvent> ota_deploy(const CloudNode& cloud, const std::string& version,
                                 const std::vector<std::string>& targets, bool canary, double now, double latency,
                                 bool rollback) {
  const auto* entry = cloud.find(version);
  if (!entry) throw std::out_of_range("unknown model version " + version);
  const auto msg = make_ota_push({version, rollback, entry->model_file});
  std::vector<SimEvent> out;
  for (std::size_t d = 0; d < cloud.device_ids.size(); ++d) {
    const auto& id = cloud.device_ids[d];
    if (std::find(targets.begin(), targets.end(), id) == targets.end()) continue;
    if (canary && std::find(cloud.roster.begin(), cloud.roster.end(), id) == cloud.roster.end()) continue;
    SimEvent e;
    e.time = now + latency;
    e.kind = EventKind::ota_arrive;
    e.device = d;
    e.message = msg;
    out.push_back(std::move(e));
  }
  return out;
}

// ---- Metrics -------------------------------------------------------------------

double DeviceMetrics::false_alarm_rate() const {
  return normal_frames ? static_cast<double>(false_alarms) / static_cast<double>(normal_frames) : 0.0;
}

double DeviceMetrics::miss_rate() const {
  return arc_events ? static_cast<double>(missed_arcs) / static_cast<double>(arc_events) : 0.0;
}

DeviceMetrics& DeviceMetrics::operator+=(const DeviceMetrics& o) {
  frames += o.frames;
  normal_frames += o.normal_frames;
  alarms += o.alarms;
  true_alarms += o.true_alarms;
  false_alarms += o.false_alarms;
  arc_events += o.arc_events;
  missed_arcs += o.missed_arcs;
  precision = alarms ? std::optional(static_cast<double>(true_alarms) / static_cast<double>(alarms)) : std::nullopt;
  return *this;
}

nlohmann::json to_json(const DeviceMetrics& m) {
  return {{"device_id", m.device_id},
          {"frames", m.frames},
          {"normal_frames", m.normal_frames},
          {"alarms", m.alarms},
          {"true_alarms", m.true_alarms},
          {"false_alarms", m.false_alarms},
          {"arc_events", m.arc_events},
          {"missed_arcs", m.missed_arcs},
          {"false_alarm_rate", m.false_alarm_rate()},
          {"miss_rate", m.miss_rate()},
          {"precision", m.precision ? nlohmann::json(*m.precision) : nlohmann::json(nullptr)}};
}

nlohmann::json to_json(const FleetMetrics& m) {
  nlohmann::json devices = nlohmann::json::array();
  for (const auto& d : m.devices) devices.push_back(to_json(d));
  return {{"devices", devices}, {"aggregate", to_json(m.aggregate)}};
}

DeviceMetrics device_metrics(const std::string& device_id, const std::vector<FrameLog>& log, const Window& w,
                             std::optional<std::uint32_t> version) {
  DeviceMetrics m;
  m.device_id = device_id;
  std::map<std::int64_t, bool> detected;  // events whose first frame is in the window
  std::set<std::int64_t> seen;
  for (const auto& f : log) {
    if (f.arc_event >= 0) {
      const bool first = seen.insert(f.arc_event).second;
      if (first && f.time >= w.start && f.time < w.end && (!version || f.version == *version)) detected[f.arc_event] = false;
    }
    if (f.time < w.start || f.time >= w.end || (version && f.version != *version)) continue;
    ++m.frames;
    if (!f.label) ++m.normal_frames;
    if (f.alarm) {
      ++m.alarms;
      if (f.label) ++m.true_alarms;
      else ++m.false_alarms;
    }
  }
  // Detection may happen after the window closes; look at the whole event.
  for (const auto& f : log)
    if (f.alarm && f.label && f.arc_event >= 0) {
      auto it = detected.find(f.arc_event);
      if (it != detected.end()) it->second = true;
    }
  m.arc_events = detected.size();
  for (const auto& [id, hit] : detected) m.missed_arcs += hit ? 0 : 1;
  if (m.alarms) m.precision = static_cast<double>(m.true_alarms) / static_cast<double>(m.alarms);
  return m;
}

FleetMetrics collect_fleet_metrics(const std::vector<std::string>& device_ids,
                                   const std::vector<std::vector<FrameLog>>& logs, const Window& w, double now) {
  if (w.end > now) throw std::logic_error("metrics window is still open");
  if (device_ids.size() != logs.size()) throw std::invalid_argument("one frame log per device expected");
  FleetMetrics out;
  out.aggregate.device_id = "fleet";
  for (std::size_t d = 0; d < device_ids.size(); ++d) {
    out.devices.push_back(device_metrics(device_ids[d], logs[d], w));
    out.aggregate += out.devices.back();
  }
  return out;
}

// ---- Engine --------------------------------------------------------------------

Candidate default_engine(const nn::Model& deployed, const AdaptationBatch& batch, const Archive& archive,
                         const FleetSpec& spec, Rng& rng) {
  const auto data = prepare_evolution_data(batch, archive, spec.evolution, rng);
  auto s1 = stage1_evolve(deployed, data, spec.evolution, rng);
  Candidate c;
  c.info = {{"stage1",
             {{"fitness", s1.fitness},
              {"baseline_fitness", s1.baseline_fitness},
              {"saturated", s1.saturated},
              {"best_per_generation", s1.best_per_generation},
              {"config", to_json(s1.config)},
              {"candidates", s1.log.size()}}}};
  c.model = s1.model;
  if (spec.allow_stage2 && s1.saturated) {
    auto s2 = stage2_evolve(s1, deployed.arch, data, spec.evolution, rng);
    c.info["stage2"] = {{"fitness", s2.fitness},
                        {"flops_ratio", s2.flops_ratio},
                        {"rejected", s2.rejected},
                        {"arch", nn::to_json(s2.arch)}};
    if (s2.fitness > s1.fitness) c.model = std::move(s2.model);
  }
  return c;
}

TemporalReport default_validator(const nn::Model& candidate, const std::vector<HoldoutStream>& holdout,
                                 const FleetSpec& spec) {
  return temporal_validate(candidate, holdout, spec.features, spec.detector);
}

// ---- Simulation ----------------------------------------------------------------

namespace {

struct Device {
  std::string id;
  std::size_t index = 0;
  HardwareProfile profile;
  bool drifted = false;
  nn::Model model;
  std::uint32_t version = 0;
  DetectorState detector;
  std::deque<Message> outbox;
  std::size_t segment = 0;  // count of segments started
  std::uint64_t frames_done = 0;
  std::uint64_t alarms = 0;
  SignalTrace trace;
  std::vector<FrameView> frames;
  std::size_t frame = 0;
  std::int64_t event_id = -1;
  std::int64_t next_event = 0;
  Category category = Category::steady;
  double next_report = 0.0;
  std::vector<FrameLog> log;
};

enum class Phase { idle, canary_push, monitoring };

class Simulator {
 public:
  Simulator(const FleetSpec& spec, const nn::Model& initial, const FeatureDataset& archive, const SimOptions& opts)
      : spec_(spec), opts_(opts), fz_(spec.features) {
    spec_.validate();
    if (archive.dim != static_cast<std::size_t>(initial.arch.input_dim))
      throw std::invalid_argument("archive width differs from the model input");
    if (spec_.features.dim() != static_cast<std::size_t>(initial.arch.input_dim))
      throw std::invalid_argument("feature width differs from the model input");
    const double fs = spec_.profiles.front().sample_rate;
    frame_s_ = static_cast<double>(spec_.features.frame_len) / fs;
    archive_.data = archive;
    batch_.threshold = spec_.batch_threshold;

    const auto v1 = cloud_.add(initial);
    models_.push_back(nn::decode_model(cloud_.registry.back().model_file));
    for (std::size_t i = 0; i < spec_.devices.size(); ++i) {
      const auto& ds = spec_.devices[i];
      Device d;
      d.id = ds.device_id;
      d.index = i;
      d.profile = ds.drift ? apply_drift(spec_.profiles[ds.profile], *ds.drift) : spec_.profiles[ds.profile];
      d.drifted = ds.drift.has_value();
      d.model = models_.front();
      d.next_report = spec_.metrics_period;
      devices_.push_back(std::move(d));
      cloud_.device_ids.push_back(ds.device_id);
    }
    cloud_.roster = canary_roster(cloud_.device_ids, spec_.canary.canary_fraction);
    build_holdout();
    (void)v1;
  }

  FleetReport run() {
    for (std::size_t d = 0; d < devices_.size(); ++d) push({frame_s_, 0, EventKind::frame_tick, d, std::nullopt});
    while (!queue_.empty()) {
      auto e = queue_.pop();
      if (e.time > spec_.duration) break;
      ++events_;
      digest_event(e);
      switch (e.kind) {
        case EventKind::frame_tick: tick(e); break;
        case EventKind::upload_arrive: cloud_receive(e); break;
        case EventKind::ota_arrive: device_ota(e); break;
        case EventKind::window_close: close_window(e.time); break;
      }
    }
    return report();
  }

 private:
  void push(SimEvent e) { queue_.push(std::move(e)); }

  void note(double t, std::string kind, std::string device, std::string detail) {
    trace_.push_back({t, std::move(kind), std::move(device), std::move(detail)});
  }

  void digest_event(const SimEvent& e) {
    std::ostringstream s;
    s.precision(17);
    s << e.time << ' ' << event_kind_name(e.kind) << ' ' << e.device << ' '
      << (e.message ? encode_message(*e.message).size() : 0) << '\n';
    digest_ ^= fnv1a64(s.str()) + 0x9E3779B97F4A7C15ULL + (digest_ << 6) + (digest_ >> 2);
  }

  std::uint64_t segment_seed(const Device& d, std::size_t segment) const {
    return Rng(spec_.seed, 1'000'003ULL * (d.index + 1) + segment).next_u64();
  }

  void load_segment(Device& d) {
    const auto s = d.segment++;
    const auto& entry = spec_.schedule[(s + d.index) % spec_.schedule.size()];
    const auto cycle = static_cast<int>((s + d.index) / spec_.schedule.size());
    ScenarioSpec sc;
    sc.category = entry.category;
    sc.duration = entry.duration;
    sc.seed = segment_seed(d, s);
    if (is_nuisance(entry.category)) sc.sub_condition = (entry.sub_condition + cycle) % sub_condition_count(entry.category);
    else sc.sub_condition = entry.sub_condition;
    if (entry.category == Category::arc) {
      Rng rng(sc.seed, 500);
      const auto arc = arc_condition(d.profile, (entry.arc_condition + cycle) % kArcConditions,
                                     sc.sample_count(d.profile.sample_rate), rng);
      d.trace = synth_arc(d.profile, arc, sc, spec_.features.frame_len);
      d.event_id = d.next_event++;
    } else {
      d.trace = synth_normal(d.profile, sc, spec_.features.frame_len);
      d.event_id = -1;
    }
    d.category = entry.category;
    d.frames = segment(d.trace, spec_.features);
    d.frame = 0;
    oracle_.add(d.id, s, d.trace.frame_labels);
  }

  void send(Device& d, double now) {
    while (!d.outbox.empty()) {
      push({now + spec_.link_latency, 0, EventKind::upload_arrive, d.index, std::move(d.outbox.front())});
      d.outbox.pop_front();
    }
  }

  void tick(const SimEvent& e) {
    auto& d = devices_[e.device];
    while (d.frame >= d.frames.size()) load_segment(d);
    const auto frame = d.frames[d.frame];
    const auto x = fz_(frame);
    const float p = d.model.predict(x)[0];
    const auto step = detect_step(d.detector, p, spec_.detector);
    d.detector = step.state;
    const auto label = d.trace.frame_labels[d.frame];
    d.log.push_back({e.time, d.version, label, step.alarm, label ? d.event_id : -1});
    ++d.frames_done;
    if (step.alarm) {
      ++d.alarms;
      const AlarmContext ctx{d.profile.profile_id, d.category, d.segment - 1, d.frame};
      d.outbox.push_back(make_alarm_upload(capture_alarm(d.id, e.time, d.detector, frame, fz_, d.model, ctx)));
      d.detector = {};
    }
    if (e.time >= d.next_report) {
      d.outbox.push_back(make_metrics_report({d.id, d.model.params.version, d.frames_done, d.alarms}));
      d.next_report += spec_.metrics_period;
    }
    ++d.frame;
    send(d, e.time);
    const double next = e.time + frame_s_;
    if (next <= spec_.duration) push({next, 0, EventKind::frame_tick, e.device, std::nullopt});
  }

  std::uint32_t registry_index(const std::string& version) const {
    for (std::uint32_t i = 0; i < cloud_.registry.size(); ++i)
      if (cloud_.registry[i].version == version) return i;
    return static_cast<std::uint32_t>(-1);
  }

  void device_ota(const SimEvent& e) {
    auto& d = devices_[e.device];
    const auto push_msg = read_ota_push(*e.message);
    const auto idx = registry_index(push_msg.version);
    if (idx == static_cast<std::uint32_t>(-1)) ++version_violations_;
    d.model = nn::decode_model(push_msg.model_file);
    d.version = idx;
    d.detector = {};
    note(e.time, "swap", d.id, push_msg.version);
    d.outbox.push_back(make_ota_ack({d.id, push_msg.version}));
    send(d, e.time);
  }

  void cloud_receive(const SimEvent& e) {
    const auto& msg = *e.message;
    switch (msg.type) {
      case MessageType::alarm_upload: {
        const auto rec = read_alarm_upload(msg);
        const auto v = route(rec, oracle_, archive_, batch_);
        v == Verdict::true_arc ? ++confirmed_arcs_ : ++confirmed_false_;
        maybe_adapt(e.time);
        break;
      }
      case MessageType::ota_ack: {
        const auto ack = read_ota_ack(msg);
        note(e.time, "ack", ack.device_id, ack.version);
        if (phase_ == Phase::canary_push && registry_index(ack.version) == candidate_) {
          acked_.insert(ack.device_id);
          if (acked_.size() == cloud_.roster.size()) {
            phase_ = Phase::monitoring;
            window_ = {e.time, e.time + (static_cast<double>(spec_.canary.window_frames) + 0.5) * frame_s_};
            push({window_.end, 0, EventKind::window_close, 0, std::nullopt});
            note(e.time, "window_open", "", cloud_.registry[candidate_].version);
          }
        }
        break;
      }
      case MessageType::metrics_report: {
        const auto r = read_metrics_report(msg);
        cloud_.reported_version[r.device_id] = r.version;
        break;
      }
      case MessageType::ota_push: throw std::logic_error("cloud received an OTA_PUSH");
    }
  }

  void maybe_adapt(double now) {
    if (phase_ != Phase::idle || !batch_.ready() || rounds_ >= spec_.max_rounds) return;
    ++rounds_;
    Rng rng(spec_.seed, 7000 + static_cast<std::uint64_t>(rounds_));
    auto cand = opts_.engine(models_[baseline_], batch_, archive_, spec_, rng);
    nlohmann::json rec{{"round", rounds_},
                       {"time", now},
                       {"batch_size", batch_.records.size()},
                       {"archive_size", archive_.data.size()},
                       {"engine", cand.info}};
    batch_.records.clear();
    const auto temporal = opts_.validator(cand.model, holdout_, spec_);
    rec["temporal"] = {{"pass", temporal.pass},
                       {"false_alarms", temporal.false_alarms},
                       {"arc_streams", temporal.arc_streams},
                       {"detected_arcs", temporal.detected_arcs}};
    if (!temporal.pass) {
      rec["outcome"] = "failed_temporal_validation";
      note(now, "adapt", "", "failed_temporal_validation");
      adaptations_.push_back(std::move(rec));
      return;
    }
    const auto version = cloud_.add(cand.model);
    models_.push_back(nn::decode_model(cloud_.registry.back().model_file));
    candidate_ = static_cast<std::uint32_t>(cloud_.registry.size() - 1);
    rec["candidate_version"] = version;
    rec["outcome"] = "canary";
    adaptations_.push_back(std::move(rec));
    note(now, "adapt", "", version);
    phase_ = Phase::canary_push;
    acked_.clear();
    for (auto& ev : ota_deploy(cloud_, version, cloud_.roster, true, now + spec_.adaptation_delay, spec_.link_latency))
      push(std::move(ev));
  }

  CanaryStats cohort_stats(bool canary, std::uint32_t version, const Window& w) const {
    CanaryStats s;
    for (const auto& d : devices_) {
      const bool in_roster = std::find(cloud_.roster.begin(), cloud_.roster.end(), d.id) != cloud_.roster.end();
      if (in_roster != canary) continue;
      const auto m = device_metrics(d.id, d.log, w, version);
      s += CanaryStats{m.frames, m.normal_frames, m.false_alarms, m.arc_events, m.missed_arcs};
    }
    return s;
  }

  void close_window(double now) {
    if (phase_ != Phase::monitoring) return;
    const auto candidate = cohort_stats(true, candidate_, window_);
    CanaryStats baseline = cohort_stats(false, baseline_, window_);
    std::string baseline_source = "non_canary_cohort";
    if (baseline.frames < spec_.canary.window_frames) {
      // Whole fleet is canary: compare with the same devices just before the push.
      const double len = window_.end - window_.start;
      baseline = cohort_stats(true, baseline_, {window_.start - len - spec_.adaptation_delay, window_.start});
      baseline_source = "canary_cohort_before";
    }
    nlohmann::json rec{{"time", now},
                       {"window", {window_.start, window_.end}},
                       {"candidate_version", cloud_.registry[candidate_].version},
                       {"baseline_version", cloud_.registry[baseline_].version},
                       {"baseline_source", baseline_source},
                       {"roster", cloud_.roster}};
    CanaryDecision dec;
    try {
      dec = canary_decide(candidate, baseline, spec_.canary);
    } catch (const std::invalid_argument& err) {
      dec.verdict = CanaryVerdict::rollback;
      dec.candidate = candidate;
      dec.baseline = baseline;
      dec.trace = nlohmann::json::array({{{"rule", "complete_window"}, {"holds", false}, {"error", err.what()}}});
    }
    rec["decision"] = to_json(dec);
    decisions_.push_back(rec);
    const auto& version = cloud_.registry[candidate_].version;
    note(now, "decision", "", (dec.verdict == CanaryVerdict::promote ? "promote " : "rollback ") + version);
    std::vector<std::string> others;
    for (const auto& id : cloud_.device_ids)
      if (std::find(cloud_.roster.begin(), cloud_.roster.end(), id) == cloud_.roster.end()) others.push_back(id);
    if (dec.verdict == CanaryVerdict::promote) {
      baseline_ = candidate_;
      for (auto& ev : ota_deploy(cloud_, version, others, false, now, spec_.link_latency)) push(std::move(ev));
    } else {
      cloud_.registry[candidate_].rejected = true;
      rejected_.push_back(version);
      for (auto& ev : ota_deploy(cloud_, cloud_.registry[baseline_].version, cloud_.roster, true, now, 0.0, true))
        push(std::move(ev));
    }
    batch_.records.clear();
    phase_ = Phase::idle;
  }

  void build_holdout() {
    std::vector<std::pair<std::string, HardwareProfile>> seen;
    for (const auto& d : devices_) {
      const auto key = d.profile.profile_id + (d.drifted ? "+drift" : "");
      if (std::none_of(seen.begin(), seen.end(), [&](const auto& s) { return s.first == key; }))
        seen.emplace_back(key, d.profile);
    }
    std::uint64_t stream = 0;
    for (const auto& [key, profile] : seen) {
      std::vector<Category> cats(std::begin(kNuisanceCategories), std::end(kNuisanceCategories));
      cats.push_back(Category::steady);
      for (auto c : cats) {
        ScenarioSpec sc;
        sc.category = c;
        sc.duration = spec_.holdout_duration;
        sc.seed = Rng(spec_.seed ^ 0xA5A5A5A5ULL, 90'000 + stream++).next_u64();
        holdout_.push_back({key + "/" + std::string(category_name(c)), synth_normal(profile, sc, spec_.features.frame_len)});
      }
      for (int cond : {0, 4}) {
        ScenarioSpec sc;
        sc.category = Category::arc;
        sc.duration = spec_.holdout_duration;
        sc.seed = Rng(spec_.seed ^ 0xA5A5A5A5ULL, 90'000 + stream++).next_u64();
        Rng rng(sc.seed, 500);
        const auto arc = arc_condition(profile, cond, sc.sample_count(profile.sample_rate), rng);
        holdout_.push_back({key + "/arc" + std::to_string(cond), synth_arc(profile, arc, sc, spec_.features.frame_len)});
      }
    }
  }

  FleetReport report() {
    const double end = std::min(spec_.duration, queue_.now() + frame_s_);
    FleetReport rep;
    rep.trace = trace_;
    rep.containment_violations = audit_containment(trace_, cloud_.roster, rejected_);
    rep.version_violations = version_violations_;
    const std::uint32_t final_version = baseline_;
    const Window all{0.0, end + 1.0};
    nlohmann::json devices = nlohmann::json::array();
    DeviceMetrics agg_before, agg_after, agg_all;
    agg_before.device_id = agg_after.device_id = agg_all.device_id = "fleet";
    std::size_t reported_final = 0;
    for (const auto& d : devices_) {
      const auto before = device_metrics(d.id, d.log, all, 0);
      const auto total = device_metrics(d.id, d.log, all);
      std::optional<DeviceMetrics> after;
      if (final_version != 0) after = device_metrics(d.id, d.log, all, final_version);
      agg_before += before;
      agg_all += total;
      if (after) agg_after += *after;
      const auto reported = cloud_.reported_version.contains(d.id) ? cloud_.reported_version.at(d.id) : "";
      if (reported == cloud_.registry[final_version].version) ++reported_final;
      devices.push_back({{"device_id", d.id},
                         {"profile_id", d.profile.profile_id},
                         {"drifted", d.drifted},
                         {"alarms", total.alarms},
                         {"precision_before", before.precision ? nlohmann::json(*before.precision) : nlohmann::json(nullptr)},
                         {"precision_after", after && after->precision ? nlohmann::json(*after->precision)
                                                                       : nlohmann::json(nullptr)},
                         {"final_version", cloud_.registry[d.version].version},
                         {"reported_version", reported},
                         {"before", to_json(before)},
                         {"after", after ? to_json(*after) : nlohmann::json(nullptr)},
                         {"total", to_json(total)}});
    }
    nlohmann::json registry = nlohmann::json::array();
    for (const auto& r : cloud_.registry) registry.push_back({{"version", r.version}, {"rejected", r.rejected}});
    rep.json = {{"seed", spec_.seed},
                {"duration", spec_.duration},
                {"frame_seconds", frame_s_},
                {"devices", devices},
                {"aggregate",
                 {{"before", to_json(agg_before)},
                  {"after", final_version != 0 ? to_json(agg_after) : nlohmann::json(nullptr)},
                  {"total", to_json(agg_all)}}},
                {"fleet_version", cloud_.registry[final_version].version},
                {"devices_reporting_fleet_version", reported_final},
                {"registry", registry},
                {"roster", cloud_.roster},
                {"adaptations", adaptations_},
                {"decisions", decisions_},
                {"verified", {{"true_arc", confirmed_arcs_}, {"false_alarm", confirmed_false_}}},
                {"pending_false_alarms", batch_.records.size()},
                {"events", events_},
                {"event_digest", hex64(digest_)},
                {"containment_violations", rep.containment_violations},
                {"version_violations", rep.version_violations}};
    return rep;
  }

  FleetSpec spec_;
  const SimOptions& opts_;
  Featurizer fz_;
  double frame_s_ = 0.0;
  CloudNode cloud_;
  std::vector<nn::Model> models_;  // decoded registry, by index
  std::vector<Device> devices_;
  EventQueue queue_;
  LabelOracle oracle_;
  Archive archive_;
  AdaptationBatch batch_;
  std::vector<HoldoutStream> holdout_;
  Phase phase_ = Phase::idle;
  std::uint32_t baseline_ = 0, candidate_ = 0;
  std::set<std::string> acked_;
  Window window_;
  int rounds_ = 0;
  std::vector<std::string> rejected_;
  nlohmann::json adaptations_ = nlohmann::json::array();
  nlohmann::json decisions_ = nlohmann::json::array();
  std::vector<TraceEntry> trace_;
  std::size_t version_violations_ = 0;
  std::size_t confirmed_arcs_ = 0, confirmed_false_ = 0;
  std::uint64_t events_ = 0;
  std::uint64_t digest_ = 0;
};

}  // namespace

FleetReport run_sim(const FleetSpec& spec, const nn::Model& initial, const FeatureDataset& archive,
                    const SimOptions& options) {
  Simulator sim(spec, initial, archive, options);
  return sim.run();
}

std::string FleetReport::to_csv() const {
  std::string s = "device_id,alarms,precision_before,precision_after\n";
  const auto num = [](const nlohmann::json& v) { return v.is_null() ? std::string() : v.dump(); };
  for (const auto& d : json.at("devices"))
    s += d.at("device_id").get<std::string>() + "," + d.at("alarms").dump() + "," + num(d.at("precision_before")) + "," +
         num(d.at("precision_after")) + "\n";
  return s;
}

std::size_t audit_containment(const std::vector<TraceEntry>& trace, const std::vector<std::string>& roster,
                              const std::vector<std::string>& rejected_versions) {
  std::size_t n = 0;
  for (const auto& t : trace) {
    if (t.kind != "swap") continue;
    const bool rejected = std::find(rejected_versions.begin(), rejected_versions.end(), t.detail) != rejected_versions.end();
    const bool canary = std::find(roster.begin(), roster.end(), t.device) != roster.end();
    if (rejected && !canary) ++n;
  }
  return n;
}

}  // namespace afci::fleet
