#pragma once

#include <optional>
#include <vector>

#include "json.hpp"

#include "afci/features.hpp"
#include "afci/nn.hpp"
#include "afci/signal.hpp"

namespace afci {

enum class CounterPolicy { reset, decrement };

struct DetectorConfig {
  double p_threshold = 0.5;
  int count_threshold = 8;
  // reset: a negative frame zeroes the counter. decrement: it lowers it by one.
  CounterPolicy policy = CounterPolicy::reset;

  void validate() const;
};

nlohmann::json to_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

struct DetectorState {
  int counter = 0;
  bool latched = false;
  bool operator==(const DetectorState&) const = default;
};

struct StepOutcome {
  DetectorState state;
  bool alarm = false;
};

// Throws std::logic_error on a latched state; callers reset after an alarm.
StepOutcome detect_step(const DetectorState& state, double p_arc, const DetectorConfig& cfg);

struct EventReport {
  std::vector<float> p_arc;             // per frame
  std::vector<std::size_t> alarm_frames;
  std::optional<std::size_t> first_arc_frame;
  std::optional<std::size_t> latency_frames;  // first alarm at/after the first arc frame
  std::optional<double> latency_ms;
  double frame_ms = 0.0;
  std::size_t false_alarms = 0;  // alarms on normal-labelled frames
};

nlohmann::json to_json(const EventReport& r);

// Streams the trace frame by frame; the detector re-arms right after each alarm.
EventReport run_detector(const nn::Model& model, const SignalTrace& trace, const FeatureConfig& features,
                         const DetectorConfig& cfg);
// Same, from precomputed per-frame probabilities and labels.
EventReport run_detector(std::span<const float> p_arc, std::span<const std::uint8_t> labels, double frame_ms,
                         const DetectorConfig& cfg);

}  // namespace afci
