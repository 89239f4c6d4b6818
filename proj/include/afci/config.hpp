#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "afci/detector.hpp"
#include "afci/evolve.hpp"
#include "afci/features.hpp"
#include "afci/fleet.hpp"
#include "afci/nn.hpp"
#include "afci/signal.hpp"
#include "afci/train.hpp"
#include "afci/transfer.hpp"

namespace afci {

// JSON for the synthesis types. Parsers reject unknown keys and validate.
nlohmann::json to_json(const HardwareProfile& p);
HardwareProfile profile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DriftSpec& d);
DriftSpec drift_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FeatureConfig& c);
FeatureConfig feature_config_from_json(const nlohmann::json& j);
// Reads the manifest written by DatasetManifest::to_json.
DatasetManifest manifest_from_json(const nlohmann::json& j);

struct SuiteSettings {
  int per_category = 1;
  double trace_duration = 1.0;
  int arc_conditions = kArcConditions;
};

struct ScaleSettings {
  std::vector<double> fractions{0.002, 0.008, 0.032, 0.128, 0.5};
  int repeats = 1;
};

struct SweepSettings {
  std::vector<double> target_fractions{0.002, 0.005, 0.01, 0.03, 0.1};
};

// Field drift scenario for the adapt subcommand.
struct AdaptSettings {
  std::size_t profile = 0;
  DriftSpec drift = default_field_drift();
  std::uint64_t seed = 77;  // drifted suite; seed + 1 is the evaluation suite
  std::string device_id = "field";
  std::size_t batch_threshold = 64;
  bool allow_stage2 = false;
};

// One file for a whole run. `fleet` carries only the fleet-specific fields;
// profiles, features, detector, canary and evolution come from the top level.
struct RunConfig {
  std::uint64_t seed = 42;
  std::vector<HardwareProfile> profiles{default_profile_a(), default_profile_b()};
  SuiteSettings suite;
  FeatureConfig features;
  nn::ArchSpec arch = nn::ArchSpec::ld_spec();
  TrainConfig train;
  TransferConfig transfer;
  EvolutionConfig evolution;
  CanaryConfig canary;
  DetectorConfig detector;
  ScaleSettings scale;
  SweepSettings sweep;
  AdaptSettings adapt;
  fleet::FleetSpec fleet = fleet::FleetSpec::demo();

  // Checks every section on its own. Sections that refer to profiles by
  // index are checked by the subcommands that use them.
  void validate() const;
  void validate_adapt() const;
  void validate_fleet() const;
  fleet::FleetSpec fleet_spec() const;
  SuiteOptions suite_options() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

// Applies "a.b.c=value" to a config document. The value is parsed as JSON
// and taken as a plain string when that fails. Array elements are addressed
// by index ("profiles.0.noise_floor").
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Hash of the canonical serialization.
std::string config_hash(const nlohmann::json& doc);

}  // namespace afci
