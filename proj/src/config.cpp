#include "afci/config.hpp"

#include <stdexcept>

#include "afci/binary_io.hpp"

namespace afci {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto n : known) ok = ok || n == k;
    if (!ok) throw std::invalid_argument("unknown key " + where + "." + k);
  }
}

template <class T>
void take(const json& j, const char* key, T& into, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(where + "." + key + " has the wrong type");
  }
}

json resonance_json(const Resonance& r) {
  return {{"center_hz", r.center_hz}, {"amplitude", r.amplitude}, {"q", r.q}};
}

Resonance resonance_from(const json& j, const std::string& where) {
  reject_unknown(j, {"center_hz", "amplitude", "q"}, where);
  Resonance r;
  take(j, "center_hz", r.center_hz, where);
  take(j, "amplitude", r.amplitude, where);
  take(j, "q", r.q, where);
  return r;
}

// Re-throws a validation failure with the location of the offending block.
template <class F>
void located(const std::string& where, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(where + ": " + e.what());
  }
}

json fleet_json(const fleet::FleetSpec& s) {
  json devices = json::array();
  for (const auto& d : s.devices)
    devices.push_back({{"device_id", d.device_id},
                       {"profile", d.profile},
                       {"drift", d.drift ? to_json(*d.drift) : json(nullptr)}});
  json schedule = json::array();
  for (const auto& g : s.schedule)
    schedule.push_back({{"category", category_name(g.category)},
                        {"duration", g.duration},
                        {"sub_condition", g.sub_condition},
                        {"arc_condition", g.arc_condition}});
  return {{"devices", devices},
          {"schedule", schedule},
          {"duration", s.duration},
          {"link_latency", s.link_latency},
          {"metrics_period", s.metrics_period},
          {"adaptation_delay", s.adaptation_delay},
          {"batch_threshold", s.batch_threshold},
          {"max_rounds", s.max_rounds},
          {"allow_stage2", s.allow_stage2},
          {"holdout_duration", s.holdout_duration},
          {"seed", s.seed}};
}

fleet::FleetSpec fleet_from(const json& j) {
  const std::string w = "fleet";
  reject_unknown(j,
                 {"devices", "schedule", "duration", "link_latency", "metrics_period", "adaptation_delay",
                  "batch_threshold", "max_rounds", "allow_stage2", "holdout_duration", "seed"},
                 w);
  auto s = fleet::FleetSpec::demo();
  if (j.contains("devices")) {
    s.devices.clear();
    for (std::size_t i = 0; i < j.at("devices").size(); ++i) {
      const auto& d = j.at("devices").at(i);
      const auto where = w + ".devices[" + std::to_string(i) + "]";
      reject_unknown(d, {"device_id", "profile", "drift"}, where);
      fleet::DeviceSpec dev;
      take(d, "device_id", dev.device_id, where);
      take(d, "profile", dev.profile, where);
      if (d.contains("drift") && !d.at("drift").is_null()) located(where, [&] { dev.drift = drift_from_json(d.at("drift")); });
      s.devices.push_back(std::move(dev));
    }
  }
  if (j.contains("schedule")) {
    s.schedule.clear();
    for (std::size_t i = 0; i < j.at("schedule").size(); ++i) {
      const auto& g = j.at("schedule").at(i);
      const auto where = w + ".schedule[" + std::to_string(i) + "]";
      reject_unknown(g, {"category", "duration", "sub_condition", "arc_condition"}, where);
      fleet::ScheduleSegment seg;
      std::string cat = std::string(category_name(seg.category));
      take(g, "category", cat, where);
      located(where, [&] { seg.category = category_from_name(cat); });
      take(g, "duration", seg.duration, where);
      take(g, "sub_condition", seg.sub_condition, where);
      take(g, "arc_condition", seg.arc_condition, where);
      s.schedule.push_back(seg);
    }
  }
  take(j, "duration", s.duration, w);
  take(j, "link_latency", s.link_latency, w);
  take(j, "metrics_period", s.metrics_period, w);
  take(j, "adaptation_delay", s.adaptation_delay, w);
  take(j, "batch_threshold", s.batch_threshold, w);
  take(j, "max_rounds", s.max_rounds, w);
  take(j, "allow_stage2", s.allow_stage2, w);
  take(j, "holdout_duration", s.holdout_duration, w);
  take(j, "seed", s.seed, w);
  return s;
}

void check_fractions(const std::vector<double>& f, const std::string& where) {
  if (f.empty()) throw std::invalid_argument(where + " must not be empty");
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!(f[i] > 0 && f[i] <= 1)) throw std::invalid_argument(where + " entries must lie in (0, 1]");
    if (i > 0 && !(f[i] > f[i - 1])) throw std::invalid_argument(where + " must be strictly increasing");
  }
}

}  // namespace

json to_json(const HardwareProfile& p) {
  json h = json::array(), r = json::array();
  for (const auto& x : p.harmonics) h.push_back({{"multiple", x.multiple}, {"amplitude", x.amplitude}});
  for (const auto& x : p.resonances) r.push_back(resonance_json(x));
  return {{"profile_id", p.profile_id},   {"sample_rate", p.sample_rate}, {"dc_level", p.dc_level},
          {"switching_freq", p.switching_freq}, {"harmonics", h},        {"noise_floor", p.noise_floor},
          {"mppt_rate", p.mppt_rate},     {"mppt_depth", p.mppt_depth},   {"resonances", r}};
}

HardwareProfile profile_from_json(const json& j) {
  const std::string w = "profile";
  reject_unknown(j,
                 {"profile_id", "sample_rate", "dc_level", "switching_freq", "harmonics", "noise_floor", "mppt_rate",
                  "mppt_depth", "resonances"},
                 w);
  HardwareProfile p;
  take(j, "profile_id", p.profile_id, w);
  take(j, "sample_rate", p.sample_rate, w);
  take(j, "dc_level", p.dc_level, w);
  take(j, "switching_freq", p.switching_freq, w);
  take(j, "noise_floor", p.noise_floor, w);
  take(j, "mppt_rate", p.mppt_rate, w);
  take(j, "mppt_depth", p.mppt_depth, w);
  if (j.contains("harmonics")) {
    for (const auto& h : j.at("harmonics")) {
      reject_unknown(h, {"multiple", "amplitude"}, w + ".harmonics[]");
      Harmonic x;
      take(h, "multiple", x.multiple, w + ".harmonics[]");
      take(h, "amplitude", x.amplitude, w + ".harmonics[]");
      p.harmonics.push_back(x);
    }
  }
  if (j.contains("resonances"))
    for (const auto& r : j.at("resonances")) p.resonances.push_back(resonance_from(r, w + ".resonances[]"));
  if (p.profile_id.empty()) throw std::invalid_argument("profile.profile_id must not be empty");
  p.validate();
  return p;
}

json to_json(const DriftSpec& d) {
  return {{"noise_floor_scale", d.noise_floor_scale},
          {"harmonic_shift", d.harmonic_shift},
          {"added_resonance", d.added_resonance ? resonance_json(*d.added_resonance) : json(nullptr)},
          {"season_gain", d.season_gain}};
}

DriftSpec drift_from_json(const json& j) {
  const std::string w = "drift";
  reject_unknown(j, {"noise_floor_scale", "harmonic_shift", "added_resonance", "season_gain"}, w);
  DriftSpec d;
  take(j, "noise_floor_scale", d.noise_floor_scale, w);
  take(j, "harmonic_shift", d.harmonic_shift, w);
  take(j, "season_gain", d.season_gain, w);
  if (j.contains("added_resonance") && !j.at("added_resonance").is_null())
    d.added_resonance = resonance_from(j.at("added_resonance"), w + ".added_resonance");
  d.validate();
  return d;
}

json to_json(const FeatureConfig& c) {
  return {{"frame_len", c.frame_len},
          {"aggregation", c.aggregation},
          {"db_floor", c.db_floor},
          {"band_mode", c.band_mode == BandMode::sum_db ? "sum_db" : "db_of_sum"}};
}

FeatureConfig feature_config_from_json(const json& j) {
  const std::string w = "features";
  reject_unknown(j, {"frame_len", "aggregation", "db_floor", "band_mode"}, w);
  FeatureConfig c;
  take(j, "frame_len", c.frame_len, w);
  take(j, "aggregation", c.aggregation, w);
  take(j, "db_floor", c.db_floor, w);
  std::string mode = "sum_db";
  take(j, "band_mode", mode, w);
  if (mode == "sum_db") {
    c.band_mode = BandMode::sum_db;
  } else if (mode == "db_of_sum") {
    c.band_mode = BandMode::db_of_sum;
  } else {
    throw std::invalid_argument("features.band_mode must be sum_db or db_of_sum");
  }
  c.validate();
  return c;
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    if (j.at("format") != "afci-manifest") throw std::invalid_argument("not an afci manifest");
    DatasetManifest m;
    m.sample_rate = j.at("sample_rate").get<double>();
    m.frame_len = j.at("frame_len").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("traces")) {
      ManifestEntry t;
      t.file = e.at("file").get<std::string>();
      t.profile_id = e.at("profile_id").get<std::string>();
      t.category = category_from_name(e.at("category").get<std::string>());
      t.sub_condition = e.at("sub_condition").get<int>();
      t.seed = e.at("seed").get<std::uint64_t>();
      t.is_arc = e.at("label") == "arc";
      if (!e.at("onset_index").is_null()) t.onset_index = e.at("onset_index").get<std::size_t>();
      t.sample_count = e.at("sample_count").get<std::size_t>();
      t.frame_labels = e.at("frame_labels").get<std::vector<std::uint8_t>>();
      m.traces.push_back(std::move(t));
    }
    return m;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed manifest: ") + e.what());
  }
}

void RunConfig::validate() const {
  if (profiles.empty()) throw std::invalid_argument("profiles must not be empty");
  for (std::size_t i = 0; i < profiles.size(); ++i)
    located("profiles[" + std::to_string(i) + "]", [&] { profiles[i].validate(); });
  if (suite.per_category < 1) throw std::invalid_argument("suite.per_category must be >= 1");
  if (!(suite.trace_duration > 0)) throw std::invalid_argument("suite.trace_duration must be positive");
  if (suite.arc_conditions < 0 || suite.arc_conditions > kArcConditions)
    throw std::invalid_argument("suite.arc_conditions must lie in [0, " + std::to_string(kArcConditions) + "]");
  features.validate();
  arch.validate();
  if (static_cast<std::size_t>(arch.input_dim) != features.dim())
    throw std::invalid_argument("arch.input_dim must equal the feature dimension " + std::to_string(features.dim()));
  train.validate();
  transfer.validate();
  evolution.validate();
  canary.validate();
  detector.validate();
  check_fractions(scale.fractions, "scale.fractions");
  if (scale.repeats < 1) throw std::invalid_argument("scale.repeats must be >= 1");
  check_fractions(sweep.target_fractions, "sweep.target_fractions");
  located("adapt.drift", [&] { adapt.drift.validate(); });
  if (adapt.batch_threshold == 0) throw std::invalid_argument("adapt.batch_threshold must be >= 1");
  if (adapt.device_id.empty()) throw std::invalid_argument("adapt.device_id must not be empty");
  for (const auto& g : fleet.schedule)
    if (!(g.duration > 0)) throw std::invalid_argument("fleet.schedule durations must be positive");
}

void RunConfig::validate_adapt() const {
  validate();
  if (adapt.profile >= profiles.size())
    throw std::invalid_argument("adapt.profile " + std::to_string(adapt.profile) + " names a missing profile");
}

void RunConfig::validate_fleet() const {
  validate();
  located("fleet", [&] { fleet_spec().validate(); });
}

fleet::FleetSpec RunConfig::fleet_spec() const {
  auto s = fleet;
  s.profiles = profiles;
  s.canary = canary;
  s.evolution = evolution;
  s.detector = detector;
  s.features = features;
  return s;
}

SuiteOptions RunConfig::suite_options() const {
  SuiteOptions o;
  o.trace_duration = suite.trace_duration;
  o.arc_conditions = suite.arc_conditions;
  o.frame_len = features.frame_len;
  return o;
}

json to_json(const RunConfig& c) {
  json profiles = json::array();
  for (const auto& p : c.profiles) profiles.push_back(to_json(p));
  return {{"seed", c.seed},
          {"profiles", profiles},
          {"suite",
           {{"per_category", c.suite.per_category},
            {"trace_duration", c.suite.trace_duration},
            {"arc_conditions", c.suite.arc_conditions}}},
          {"features", to_json(c.features)},
          {"arch", nn::to_json(c.arch)},
          {"train", to_json(c.train)},
          {"transfer", to_json(c.transfer)},
          {"evolution", to_json(c.evolution)},
          {"canary", to_json(c.canary)},
          {"detector", to_json(c.detector)},
          {"scale", {{"fractions", c.scale.fractions}, {"repeats", c.scale.repeats}}},
          {"sweep", {{"target_fractions", c.sweep.target_fractions}}},
          {"adapt",
           {{"profile", c.adapt.profile},
            {"drift", to_json(c.adapt.drift)},
            {"seed", c.adapt.seed},
            {"device_id", c.adapt.device_id},
            {"batch_threshold", c.adapt.batch_threshold},
            {"allow_stage2", c.adapt.allow_stage2}}},
          {"fleet", fleet_json(c.fleet)}};
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j,
                 {"seed", "profiles", "suite", "features", "arch", "train", "transfer", "evolution", "canary",
                  "detector", "scale", "sweep", "adapt", "fleet"},
                 "config");
  RunConfig c;
  take(j, "seed", c.seed, "config");
  if (j.contains("profiles")) {
    c.profiles.clear();
    for (std::size_t i = 0; i < j.at("profiles").size(); ++i)
      located("profiles[" + std::to_string(i) + "]",
              [&] { c.profiles.push_back(profile_from_json(j.at("profiles").at(i))); });
  }
  if (j.contains("suite")) {
    const auto& s = j.at("suite");
    reject_unknown(s, {"per_category", "trace_duration", "arc_conditions"}, "suite");
    take(s, "per_category", c.suite.per_category, "suite");
    take(s, "trace_duration", c.suite.trace_duration, "suite");
    take(s, "arc_conditions", c.suite.arc_conditions, "suite");
  }
  if (j.contains("features")) c.features = feature_config_from_json(j.at("features"));
  if (j.contains("arch")) c.arch = nn::arch_from_json(j.at("arch"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("transfer")) c.transfer = transfer_config_from_json(j.at("transfer"));
  if (j.contains("evolution")) c.evolution = evolution_config_from_json(j.at("evolution"));
  if (j.contains("canary")) c.canary = canary_config_from_json(j.at("canary"));
  if (j.contains("detector")) c.detector = detector_config_from_json(j.at("detector"));
  if (j.contains("scale")) {
    const auto& s = j.at("scale");
    reject_unknown(s, {"fractions", "repeats"}, "scale");
    take(s, "fractions", c.scale.fractions, "scale");
    take(s, "repeats", c.scale.repeats, "scale");
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    reject_unknown(s, {"target_fractions"}, "sweep");
    take(s, "target_fractions", c.sweep.target_fractions, "sweep");
  }
  if (j.contains("adapt")) {
    const auto& s = j.at("adapt");
    reject_unknown(s, {"profile", "drift", "seed", "device_id", "batch_threshold", "allow_stage2"}, "adapt");
    take(s, "profile", c.adapt.profile, "adapt");
    if (s.contains("drift")) located("adapt", [&] { c.adapt.drift = drift_from_json(s.at("drift")); });
    take(s, "seed", c.adapt.seed, "adapt");
    take(s, "device_id", c.adapt.device_id, "adapt");
    take(s, "batch_threshold", c.adapt.batch_threshold, "adapt");
    take(s, "allow_stage2", c.adapt.allow_stage2, "adapt");
  }
  if (j.contains("fleet")) c.fleet = fleet_from(j.at("fleet"));
  c.validate();
  return c;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw std::invalid_argument("override '" + std::string(assignment) + "' must look like key.path=value");
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const auto key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("override path '" + path + "' has an empty segment");
    json* next = nullptr;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoul(key, &used);
        if (used != key.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw std::invalid_argument("override path '" + path + "': '" + key + "' is not an array index");
      }
      if (idx >= node->size()) throw std::invalid_argument("override path '" + path + "': index out of range");
      next = &(*node)[idx];
    } else if (node->is_object() || node->is_null()) {
      next = &(*node)[key];
    } else {
      throw std::invalid_argument("override path '" + path + "' descends into a scalar");
    }
    if (dot == std::string::npos) {
      *next = value;
      return;
    }
    node = next;
    start = dot + 1;
  }
}

std::string config_hash(const json& doc) { return hex64(fnv1a64(doc.dump())); }

}  // namespace afci
