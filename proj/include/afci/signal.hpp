#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "afci/rng.hpp"

namespace afci {

// Operating scenarios. The first nine are the nuisance-trip categories; steady
// and arc are the plain baseline and the fault case.
enum class Category {
  startup,
  parallel_strings,
  direct_connection,
  breaker_operation,
  variable_input,
  start_stop,
  grid_connection,
  load_switching,
  harmonic_grid,
  steady,
  arc,
};

inline constexpr Category kNuisanceCategories[] = {
    Category::startup,        Category::parallel_strings, Category::direct_connection,
    Category::breaker_operation, Category::variable_input, Category::start_stop,
    Category::grid_connection,  Category::load_switching,   Category::harmonic_grid,
};

std::string_view category_name(Category c);
std::string_view category_title(Category c);
Category category_from_name(std::string_view name);
// Number of detailed operating conditions per nuisance category (7+3+6+4+3+2+4+4+2).
int sub_condition_count(Category c);
bool is_nuisance(Category c);

struct Harmonic {
  double multiple = 1.0;   // of the switching frequency
  double amplitude = 0.0;  // amperes
};

struct Resonance {
  double center_hz = 0.0;
  double amplitude = 0.0;  // amperes RMS
  double q = 5.0;
};

struct HardwareProfile {
  std::string profile_id;
  double sample_rate = 250'000.0;
  double dc_level = 10.0;
  double switching_freq = 20'000.0;
  std::vector<Harmonic> harmonics;
  double noise_floor = 0.01;  // amperes RMS
  double mppt_rate = 10.0;    // Hz
  double mppt_depth = 0.01;   // fraction of dc_level
  std::vector<Resonance> resonances;

  void validate() const;
};

struct ArcParams {
  std::size_t onset_index = 0;
  double broadband_gain = 0.1;  // amperes RMS
  double pink_exponent = 1.0;
  double burst_rate = 200.0;  // bursts per second
  double burst_amp = 0.3;     // amperes
  double dc_drop = 0.05;      // fraction of dc_level

  void validate(const HardwareProfile& host) const;
};

struct ScenarioSpec {
  Category category = Category::steady;
  double duration = 1.0;  // seconds
  std::uint64_t seed = 0;
  std::vector<double> event_times;  // seconds; empty selects recipe defaults
  int sub_condition = 0;

  void validate() const;
  std::size_t sample_count(double sample_rate) const;
};

enum class FrameLabel : std::uint8_t { normal = 0, arc = 1 };

struct SignalTrace {
  std::vector<float> samples;
  double sample_rate = 0.0;
  std::size_t frame_len = 1024;
  std::vector<std::uint8_t> frame_labels;
  std::string profile_id;
  Category category = Category::steady;
  std::optional<std::size_t> onset_index;

  std::size_t frame_count() const { return samples.size() / frame_len; }
};

struct DriftSpec {
  double noise_floor_scale = 1.0;
  double harmonic_shift = 0.0;  // fractional shift of the switching frequency
  std::optional<Resonance> added_resonance;
  double season_gain = 1.0;  // multiplier on dc_level

  void validate() const;
};

// Per-frame labels: a frame is arc iff it overlaps [onset, end).
std::vector<std::uint8_t> frame_labels_for(std::size_t sample_count, std::size_t frame_len,
                                           std::optional<std::size_t> onset);

SignalTrace synth_normal(const HardwareProfile& profile, const ScenarioSpec& scenario,
                         std::size_t frame_len = 1024);
SignalTrace synth_arc(const HardwareProfile& profile, const ArcParams& arc, const ScenarioSpec& scenario,
                      std::size_t frame_len = 1024);
HardwareProfile apply_drift(const HardwareProfile& profile, const DriftSpec& drift);

// Two stock profiles with different switching frequency, harmonic set and
// noise floor; used as source and target hardware.
HardwareProfile default_profile_a();
HardwareProfile default_profile_b();
// Field drift that raises the noise floor and adds a high-frequency resonance.
DriftSpec default_field_drift();

// Arc parameters for one of the stock arc operating conditions.
ArcParams arc_condition(const HardwareProfile& profile, int condition, std::size_t sample_count, Rng& rng);
inline constexpr int kArcConditions = 12;

// ---- Suite ---------------------------------------------------------------

struct SuiteOptions {
  double trace_duration = 1.0;
  int arc_conditions = kArcConditions;
  std::size_t frame_len = 1024;
};

// Everything needed to regenerate one trace.
struct TraceRecipe {
  std::string name;
  std::size_t profile_index = 0;
  ScenarioSpec scenario;
  std::optional<ArcParams> arc;
};

struct ManifestEntry {
  std::string file;
  std::string profile_id;
  Category category = Category::steady;
  int sub_condition = 0;
  std::uint64_t seed = 0;
  bool is_arc = false;
  std::optional<std::size_t> onset_index;
  std::size_t sample_count = 0;
  std::vector<std::uint8_t> frame_labels;
};

struct DatasetManifest {
  double sample_rate = 0.0;
  std::size_t frame_len = 1024;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> traces;

  std::size_t arc_frames() const;
  std::size_t normal_frames() const;
  std::string to_json() const;
};

struct SyntheticSuite {
  std::vector<HardwareProfile> profiles;
  std::vector<TraceRecipe> recipes;
  DatasetManifest manifest;

  SignalTrace materialize(std::size_t index) const;
};

SyntheticSuite synth_suite(const std::vector<HardwareProfile>& profiles, int per_category_count,
                           std::uint64_t seed, const SuiteOptions& options = {});

// Nuisance traces only (all nine categories, every sub-condition), one per
// sub-condition per profile.
std::vector<TraceRecipe> nuisance_recipes(std::size_t profile_index, const HardwareProfile& profile,
                                          std::uint64_t seed, double duration);

SignalTrace materialize(const HardwareProfile& profile, const TraceRecipe& recipe, std::size_t frame_len);

// ---- Trace file ("AFCI") ---------------------------------------------------

std::vector<std::uint8_t> encode_trace(const SignalTrace& trace);
// Only samples and sample rate travel in the binary; labels live in the manifest.
SignalTrace decode_trace(std::span<const std::uint8_t> bytes, std::size_t frame_len = 1024);

// ---- Internal building blocks shared with the scenario recipes ----------

namespace synth_detail {

// Per-sample modulation produced by a category recipe.
struct Waveform {
  std::vector<double> dc_envelope;    // multiplier on dc_level
  std::vector<double> harmonic_gain;  // multiplier on switching harmonics
  std::vector<double> additive;       // amperes, added last
};

Waveform build_waveform(const ScenarioSpec& scenario, const HardwareProfile& profile, std::size_t n, Rng& rng);

void add_exp_pulse(std::vector<double>& out, double fs, double t0, double amplitude, double tau);
void add_ringing(std::vector<double>& out, double fs, double t0, double amplitude, double freq, double tau);

// Zero-mean noise with a 1/f^gamma power spectrum above low_cut_hz, unit RMS.
std::vector<double> pink_noise(std::size_t n, double fs, double gamma, double low_cut_hz, Rng& rng);
// White noise through a band-pass biquad, scaled to the given RMS.
std::vector<double> resonant_noise(std::size_t n, double fs, const Resonance& r, Rng& rng);

}  // namespace synth_detail

}  // namespace afci
