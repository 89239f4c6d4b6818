#include "afci/detector.hpp"

#include <stdexcept>

namespace afci {

void DetectorConfig::validate() const {
  if (!(p_threshold > 0 && p_threshold < 1)) throw std::invalid_argument("detector.p_threshold must be in (0, 1)");
  if (count_threshold < 1) throw std::invalid_argument("detector.count_threshold must be >= 1");
}

nlohmann::json to_json(const DetectorConfig& c) {
  return {{"p_threshold", c.p_threshold},
          {"count_threshold", c.count_threshold},
          {"policy", c.policy == CounterPolicy::reset ? "reset" : "decrement"}};
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  for (const auto& [k, v] : j.items())
    if (k != "p_threshold" && k != "count_threshold" && k != "policy")
      throw std::invalid_argument("unknown key detector." + k);
  c.p_threshold = j.value("p_threshold", c.p_threshold);
  c.count_threshold = j.value("count_threshold", c.count_threshold);
  const auto policy = j.value("policy", std::string("reset"));
  if (policy == "reset") {
    c.policy = CounterPolicy::reset;
  } else if (policy == "decrement") {
    c.policy = CounterPolicy::decrement;
  } else {
    throw std::invalid_argument("detector.policy must be reset or decrement");
  }
  c.validate();
  return c;
}

StepOutcome detect_step(const DetectorState& state, double p_arc, const DetectorConfig& cfg) {
  if (state.latched) throw std::logic_error("detector is latched; reset before streaming further frames");
  StepOutcome out{state, false};
  auto& c = out.state.counter;
  if (p_arc > cfg.p_threshold) {
    ++c;
  } else if (cfg.policy == CounterPolicy::reset) {
    c = 0;
  } else if (c > 0) {
    --c;
  }
  if (c >= cfg.count_threshold) {
    c = cfg.count_threshold;
    out.state.latched = true;
    out.alarm = true;
  }
  return out;
}

nlohmann::json to_json(const EventReport& r) {
  nlohmann::json j = {{"frames", r.p_arc.size()},
                      {"frame_ms", r.frame_ms},
                      {"alarms", r.alarm_frames.size()},
                      {"alarm_frames", r.alarm_frames},
                      {"false_alarms", r.false_alarms}};
  j["first_arc_frame"] = r.first_arc_frame ? nlohmann::json(*r.first_arc_frame) : nlohmann::json(nullptr);
  j["latency_frames"] = r.latency_frames ? nlohmann::json(*r.latency_frames) : nlohmann::json(nullptr);
  j["latency_ms"] = r.latency_ms ? nlohmann::json(*r.latency_ms) : nlohmann::json(nullptr);
  return j;
}

EventReport run_detector(std::span<const float> p_arc, std::span<const std::uint8_t> labels, double frame_ms,
                         const DetectorConfig& cfg) {
  cfg.validate();
  if (p_arc.size() != labels.size()) throw std::invalid_argument("probabilities and labels differ in length");
  EventReport r;
  r.p_arc.assign(p_arc.begin(), p_arc.end());
  r.frame_ms = frame_ms;
  DetectorState state;
  for (std::size_t i = 0; i < p_arc.size(); ++i) {
    if (labels[i] && !r.first_arc_frame) r.first_arc_frame = i;
    const auto step = detect_step(state, p_arc[i], cfg);
    state = step.state;
    if (!step.alarm) continue;
    r.alarm_frames.push_back(i);
    if (!labels[i]) ++r.false_alarms;
    if (r.first_arc_frame && !r.latency_frames) {
      r.latency_frames = i - *r.first_arc_frame;
      r.latency_ms = static_cast<double>(*r.latency_frames) * frame_ms;
    }
    state = {};
  }
  return r;
}

EventReport run_detector(const nn::Model& model, const SignalTrace& trace, const FeatureConfig& features,
                         const DetectorConfig& cfg) {
  FeatureDataset frames;
  frames.dim = features.dim();
  append_trace_features(frames, trace, Featurizer(features));
  if (frames.empty()) throw std::invalid_argument("trace is shorter than one frame");
  const auto p = model.predict(frames.values);
  const double frame_ms = 1000.0 * static_cast<double>(features.frame_len) / trace.sample_rate;
  return run_detector(p, frames.labels, frame_ms, cfg);
}

}  // namespace afci
