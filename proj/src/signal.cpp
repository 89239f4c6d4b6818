#include "afci/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

#include "afci/binary_io.hpp"
#include "afci/features.hpp"

namespace afci {

namespace {

constexpr std::uint16_t kTraceFormatVersion = 1;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Sub-stream identifiers so that adding arc components never perturbs the
// draws used for the normal-operation part of a trace.
enum Stream : std::uint64_t {
  kRecipeStream = 1,
  kNoiseStream = 2,
  kResonanceStream = 16,
  kPinkStream = 101,
  kBurstStream = 102,
};

struct CategoryInfo {
  Category category;
  std::string_view name;
  std::string_view title;
  int sub_conditions;
};

constexpr CategoryInfo kCategoryTable[] = {
    {Category::startup, "startup", "System Start-up Processes", 7},
    {Category::parallel_strings, "parallel_strings", "Parallel Operation of PV Strings", 3},
    {Category::direct_connection, "direct_connection", "PV Direct-Connection Modes", 6},
    {Category::breaker_operation, "breaker_operation", "DC Circuit Breaker Operation", 4},
    {Category::variable_input, "variable_input", "Variable PV Input Modes", 3},
    {Category::start_stop, "start_stop", "Limited Grid-Feeding & Repeated Start-Stop", 2},
    {Category::grid_connection, "grid_connection", "Grid Connection and Disconnection", 4},
    {Category::load_switching, "load_switching", "AC-Side Load Switching", 4},
    {Category::harmonic_grid, "harmonic_grid", "Harmonic Grid Conditions", 2},
    {Category::steady, "steady", "Steady Operation", 4},
    {Category::arc, "arc", "Series DC Arc", 1},
};

const CategoryInfo& info(Category c) {
  for (const auto& i : kCategoryTable)
    if (i.category == c) return i;
  throw std::invalid_argument("unknown category");
}

struct Synthesized {
  std::vector<double> samples;
  std::vector<double> dc_envelope;
};

Synthesized synth_base(const HardwareProfile& profile, const ScenarioSpec& scenario) {
  profile.validate();
  scenario.validate();
  const double fs = profile.sample_rate;
  const std::size_t n = scenario.sample_count(fs);

  Rng recipe_rng(scenario.seed, kRecipeStream);
  auto wf = synth_detail::build_waveform(scenario, profile, n, recipe_rng);

  std::vector<Harmonic> active;
  for (const auto& h : profile.harmonics)
    if (h.multiple * profile.switching_freq < fs / 2 && h.amplitude > 0) active.push_back(h);

  Synthesized out;
  out.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double time = static_cast<double>(t) / fs;
    const double mppt = 1.0 + profile.mppt_depth * std::sin(kTwoPi * profile.mppt_rate * time);
    double harm = 0.0;
    for (const auto& h : active) harm += h.amplitude * std::sin(kTwoPi * h.multiple * profile.switching_freq * time);
    out.samples[t] = profile.dc_level * wf.dc_envelope[t] * mppt + wf.harmonic_gain[t] * harm + wf.additive[t];
  }

  if (profile.noise_floor > 0) {
    Rng noise(scenario.seed, kNoiseStream);
    for (auto& s : out.samples) s += profile.noise_floor * noise.normal();
  }
  for (std::size_t i = 0; i < profile.resonances.size(); ++i) {
    Rng rr(scenario.seed, kResonanceStream + i);
    const auto res = synth_detail::resonant_noise(n, fs, profile.resonances[i], rr);
    for (std::size_t t = 0; t < n; ++t) out.samples[t] += res[t];
  }
  out.dc_envelope = std::move(wf.dc_envelope);
  return out;
}

SignalTrace to_trace(const std::vector<double>& samples, const HardwareProfile& profile, Category category,
                     std::optional<std::size_t> onset, std::size_t frame_len) {
  SignalTrace trace;
  trace.samples.resize(samples.size());
  std::transform(samples.begin(), samples.end(), trace.samples.begin(),
                 [](double v) { return static_cast<float>(v); });
  trace.sample_rate = profile.sample_rate;
  trace.frame_len = frame_len;
  trace.frame_labels = frame_labels_for(samples.size(), frame_len, onset);
  trace.profile_id = profile.profile_id;
  trace.category = category;
  trace.onset_index = onset;
  return trace;
}

std::uint64_t trace_seed(std::uint64_t suite_seed, std::uint64_t stream) { return Rng(suite_seed, stream).next_u64(); }

}  // namespace

std::string_view category_name(Category c) { return info(c).name; }
std::string_view category_title(Category c) { return info(c).title; }
int sub_condition_count(Category c) { return info(c).sub_conditions; }
bool is_nuisance(Category c) { return c != Category::steady && c != Category::arc; }

Category category_from_name(std::string_view name) {
  for (const auto& i : kCategoryTable)
    if (i.name == name) return i.category;
  throw std::invalid_argument("unknown scenario category '" + std::string(name) + "'");
}

void HardwareProfile::validate() const {
  if (!(sample_rate > 0)) throw std::invalid_argument("profile.sample_rate must be positive");
  if (!(switching_freq > 0) || switching_freq >= sample_rate / 2)
    throw std::invalid_argument("profile.switching_freq must lie in (0, sample_rate/2)");
  if (!(dc_level >= 0)) throw std::invalid_argument("profile.dc_level must be >= 0");
  if (!(noise_floor >= 0)) throw std::invalid_argument("profile.noise_floor must be >= 0");
  for (const auto& h : harmonics)
    if (!(h.amplitude >= 0) || !(h.multiple > 0))
      throw std::invalid_argument("profile.harmonic_amps entries need multiple > 0 and amplitude >= 0");
  if (!(mppt_depth >= 0 && mppt_depth < 1)) throw std::invalid_argument("profile.mppt_depth must lie in [0, 1)");
  if (!(mppt_rate >= 0) || mppt_rate >= sample_rate / 2)
    throw std::invalid_argument("profile.mppt_rate must lie in [0, sample_rate/2)");
  for (const auto& r : resonances)
    if (!(r.center_hz > 0) || r.center_hz >= sample_rate / 2 || !(r.amplitude >= 0) || !(r.q > 0))
      throw std::invalid_argument("profile.resonances entries need 0 < center < sample_rate/2, amplitude >= 0, q > 0");
}

void ArcParams::validate(const HardwareProfile& host) const {
  if (!(broadband_gain > host.noise_floor))
    throw std::invalid_argument("arc.broadband_gain must exceed the host noise floor");
  if (!(pink_exponent >= 0)) throw std::invalid_argument("arc.pink_exponent must be >= 0");
  if (!(burst_rate >= 0) || !(burst_amp >= 0)) throw std::invalid_argument("arc burst parameters must be >= 0");
  if (!(dc_drop >= 0 && dc_drop < 1)) throw std::invalid_argument("arc.dc_drop must lie in [0, 1)");
}

void ScenarioSpec::validate() const {
  if (!(duration > 0)) throw std::invalid_argument("scenario.duration must be positive");
  for (double t : event_times)
    if (!(t >= 0 && t <= duration)) throw std::invalid_argument("scenario.event_times must lie within [0, duration]");
  if (sub_condition < 0) throw std::invalid_argument("scenario.sub_condition must be >= 0");
}

std::size_t ScenarioSpec::sample_count(double sample_rate) const {
  return static_cast<std::size_t>(std::floor(duration * sample_rate));
}

void DriftSpec::validate() const {
  if (!(noise_floor_scale > 0) || !(season_gain > 0) || !(1.0 + harmonic_shift > 0))
    throw std::invalid_argument("drift multipliers must be positive");
  if (added_resonance && (!(added_resonance->amplitude >= 0) || !(added_resonance->q > 0)))
    throw std::invalid_argument("drift resonance needs amplitude >= 0 and q > 0");
}

std::vector<std::uint8_t> frame_labels_for(std::size_t sample_count, std::size_t frame_len,
                                           std::optional<std::size_t> onset) {
  std::vector<std::uint8_t> labels(sample_count / frame_len, 0);
  if (onset)
    for (std::size_t i = 0; i < labels.size(); ++i)
      if ((i + 1) * frame_len > *onset) labels[i] = 1;
  return labels;
}

SignalTrace synth_normal(const HardwareProfile& profile, const ScenarioSpec& scenario, std::size_t frame_len) {
  if (scenario.category == Category::arc) throw std::invalid_argument("synth_normal called with the arc category");
  auto base = synth_base(profile, scenario);
  return to_trace(base.samples, profile, scenario.category, std::nullopt, frame_len);
}

SignalTrace synth_arc(const HardwareProfile& profile, const ArcParams& arc, const ScenarioSpec& scenario,
                      std::size_t frame_len) {
  arc.validate(profile);
  ScenarioSpec host = scenario;
  if (host.category == Category::arc) host.category = Category::steady;
  auto base = synth_base(profile, host);
  auto& x = base.samples;
  const std::size_t n = x.size();
  if (arc.onset_index >= n) throw std::invalid_argument("arc.onset_index beyond the end of the trace");
  const double fs = profile.sample_rate;

  if (arc.broadband_gain > 0) {
    Rng pr(scenario.seed, kPinkStream);
    const auto pink = synth_detail::pink_noise(n, fs, arc.pink_exponent, 1000.0, pr);
    for (std::size_t t = arc.onset_index; t < n; ++t) x[t] += arc.broadband_gain * pink[t];
  }
  if (arc.burst_rate > 0 && arc.burst_amp > 0) {
    Rng br(scenario.seed, kBurstStream);
    std::vector<double> bursts(n, 0.0);
    double t = static_cast<double>(arc.onset_index) / fs + br.exponential(arc.burst_rate);
    const double end = static_cast<double>(n) / fs;
    while (t < end) {
      // Current dips through the gap: negative one-sided pulses lasting ~0.2 ms.
      synth_detail::add_exp_pulse(bursts, fs, t, -arc.burst_amp * br.uniform(0.5, 1.5), 0.2e-3 / 4);
      t += br.exponential(arc.burst_rate);
    }
    for (std::size_t i = arc.onset_index; i < n; ++i) x[i] += bursts[i];
  }
  for (std::size_t t = arc.onset_index; t < n; ++t) x[t] -= arc.dc_drop * profile.dc_level * base.dc_envelope[t];

  return to_trace(x, profile, Category::arc, arc.onset_index, frame_len);
}

HardwareProfile apply_drift(const HardwareProfile& profile, const DriftSpec& drift) {
  drift.validate();
  HardwareProfile out = profile;
  out.noise_floor *= drift.noise_floor_scale;
  out.switching_freq *= 1.0 + drift.harmonic_shift;
  out.dc_level *= drift.season_gain;
  if (drift.added_resonance) out.resonances.push_back(*drift.added_resonance);
  out.validate();
  return out;
}

HardwareProfile default_profile_a() {
  HardwareProfile p;
  p.profile_id = "inv-a";
  p.dc_level = 10.0;
  p.switching_freq = 20'000.0;
  p.harmonics = {{1, 0.4}, {2, 0.08}, {3, 0.05}, {4, 0.02}, {5, 0.015}};
  p.noise_floor = 0.01;
  p.mppt_rate = 10.0;
  p.mppt_depth = 0.01;
  return p;
}

HardwareProfile default_profile_b() {
  HardwareProfile p;
  p.profile_id = "inv-b";
  p.dc_level = 8.0;
  p.switching_freq = 16'000.0;
  p.harmonics = {{1, 0.6}, {2, 0.15}, {3, 0.03}, {5, 0.02}, {7, 0.01}};
  p.noise_floor = 0.02;
  p.mppt_rate = 25.0;
  p.mppt_depth = 0.02;
  return p;
}

DriftSpec default_field_drift() {
  DriftSpec d;
  d.noise_floor_scale = 6.0;
  d.harmonic_shift = 0.03;
  d.added_resonance = Resonance{70'000.0, 0.05, 4.0};
  d.season_gain = 0.8;
  return d;
}

ArcParams arc_condition(const HardwareProfile& profile, int condition, std::size_t sample_count, Rng& rng) {
  static constexpr double kGainOverFloor[] = {5.0, 10.0, 20.0};
  ArcParams a;
  const int level = (condition / 4) % 3;
  a.broadband_gain = std::max(profile.noise_floor, 0.01) * kGainOverFloor[level] * rng.uniform(0.9, 1.1);
  a.pink_exponent = rng.uniform(0.8, 1.3);
  a.burst_rate = rng.uniform(100.0, 400.0);
  a.burst_amp = rng.uniform(0.1, 0.4);
  a.dc_drop = rng.uniform(0.02, 0.08);
  a.onset_index = static_cast<std::size_t>(rng.uniform(0.2, 0.5) * static_cast<double>(sample_count));
  return a;
}

// ---- Suite ---------------------------------------------------------------

std::size_t DatasetManifest::arc_frames() const {
  std::size_t n = 0;
  for (const auto& t : traces)
    for (auto l : t.frame_labels) n += l;
  return n;
}

std::size_t DatasetManifest::normal_frames() const {
  std::size_t n = 0;
  for (const auto& t : traces) n += t.frame_labels.size();
  return n - arc_frames();
}

std::string DatasetManifest::to_json() const {
  nlohmann::json j;
  j["format"] = "afci-manifest";
  j["version"] = 1;
  j["sample_rate"] = sample_rate;
  j["frame_len"] = frame_len;
  j["seed"] = seed;
  auto& arr = j["traces"] = nlohmann::json::array();
  std::size_t nuisance = 0, arcs = 0;
  for (const auto& t : traces) {
    nlohmann::json e = {{"file", t.file},
                        {"profile_id", t.profile_id},
                        {"category", category_name(t.category)},
                        {"sub_condition", t.sub_condition},
                        {"seed", t.seed},
                        {"label", t.is_arc ? "arc" : "normal"},
                        {"sample_count", t.sample_count},
                        {"frame_labels", t.frame_labels}};
    e["onset_index"] = t.onset_index ? nlohmann::json(*t.onset_index) : nlohmann::json(nullptr);
    arr.push_back(std::move(e));
    (t.is_arc ? arcs : nuisance) += 1;
  }
  const auto af = arc_frames(), nf = normal_frames();
  j["summary"] = {{"traces", traces.size()},
                  {"nuisance_traces", nuisance},
                  {"arc_traces", arcs},
                  {"arc_frames", af},
                  {"normal_frames", nf},
                  {"arc_fraction", af + nf == 0 ? 0.0 : static_cast<double>(af) / static_cast<double>(af + nf)}};
  return j.dump(1) + "\n";
}

std::vector<TraceRecipe> nuisance_recipes(std::size_t profile_index, const HardwareProfile& profile,
                                          std::uint64_t seed, double duration) {
  std::vector<TraceRecipe> out;
  for (Category c : kNuisanceCategories) {
    for (int sub = 0; sub < sub_condition_count(c); ++sub) {
      TraceRecipe r;
      r.profile_index = profile_index;
      r.scenario.category = c;
      r.scenario.duration = duration;
      r.scenario.sub_condition = sub;
      const std::uint64_t stream = ((profile_index * 16 + static_cast<std::uint64_t>(c)) * 64 + sub) * 1024;
      r.scenario.seed = trace_seed(seed, stream);
      r.name = profile.profile_id + "_" + std::string(category_name(c)) + "_" + std::to_string(sub);
      out.push_back(std::move(r));
    }
  }
  return out;
}

SignalTrace materialize(const HardwareProfile& profile, const TraceRecipe& recipe, std::size_t frame_len) {
  if (recipe.arc) return synth_arc(profile, *recipe.arc, recipe.scenario, frame_len);
  return synth_normal(profile, recipe.scenario, frame_len);
}

SignalTrace SyntheticSuite::materialize(std::size_t index) const {
  const auto& r = recipes.at(index);
  return afci::materialize(profiles.at(r.profile_index), r, manifest.frame_len);
}

SyntheticSuite synth_suite(const std::vector<HardwareProfile>& profiles, int per_category_count, std::uint64_t seed,
                           const SuiteOptions& options) {
  if (per_category_count < 1) throw std::invalid_argument("per_category_count must be >= 1");
  if (profiles.empty()) throw std::invalid_argument("synth_suite needs at least one profile");
  double fs = profiles.front().sample_rate;
  for (const auto& p : profiles) {
    p.validate();
    if (p.sample_rate != fs) throw std::invalid_argument("all suite profiles must share one sample_rate");
  }

  SyntheticSuite suite;
  suite.profiles = profiles;
  suite.manifest.sample_rate = fs;
  suite.manifest.frame_len = options.frame_len;
  suite.manifest.seed = seed;

  for (std::size_t p = 0; p < profiles.size(); ++p) {
    const auto& profile = profiles[p];
    for (int rep = 0; rep < per_category_count; ++rep) {
      for (auto r : nuisance_recipes(p, profile, trace_seed(seed, 7919 + p * 1000 + rep), options.trace_duration)) {
        r.name += "_r" + std::to_string(rep);
        suite.recipes.push_back(std::move(r));
      }
    }
    for (int rep = 0; rep < per_category_count; ++rep) {
      for (int cond = 0; cond < options.arc_conditions; ++cond) {
        TraceRecipe r;
        r.profile_index = p;
        r.scenario.category = Category::arc;
        r.scenario.duration = options.trace_duration;
        r.scenario.sub_condition = cond % 4;
        const std::uint64_t stream = ((p * 16 + static_cast<std::uint64_t>(Category::arc)) * 64 + cond) * 1024 + rep;
        r.scenario.seed = trace_seed(seed, stream);
        Rng arc_rng(r.scenario.seed, 500);
        r.arc = arc_condition(profile, cond, r.scenario.sample_count(fs), arc_rng);
        r.name = profile.profile_id + "_arc_" + std::to_string(cond) + "_r" + std::to_string(rep);
        suite.recipes.push_back(std::move(r));
      }
    }
  }

  for (const auto& r : suite.recipes) {
    ManifestEntry e;
    e.file = "traces/" + r.name + ".afci";
    e.profile_id = profiles[r.profile_index].profile_id;
    e.category = r.arc ? Category::arc : r.scenario.category;
    e.sub_condition = r.scenario.sub_condition;
    e.seed = r.scenario.seed;
    e.is_arc = r.arc.has_value();
    e.sample_count = r.scenario.sample_count(fs);
    if (r.arc) e.onset_index = r.arc->onset_index;
    e.frame_labels = frame_labels_for(e.sample_count, options.frame_len, e.onset_index);
    suite.manifest.traces.push_back(std::move(e));
  }
  return suite;
}

// ---- Trace file -------------------------------------------------------------

std::vector<std::uint8_t> encode_trace(const SignalTrace& trace) {
  ByteWriter w;
  w.raw("AFCI");
  w.u16(kTraceFormatVersion);
  w.u32(static_cast<std::uint32_t>(trace.sample_rate));
  w.u64(trace.samples.size());
  w.f32s(trace.samples);
  return std::move(w).take();
}

SignalTrace decode_trace(std::span<const std::uint8_t> bytes, std::size_t frame_len) {
  ByteReader r(bytes);
  r.expect_magic("AFCI");
  if (r.u16() != kTraceFormatVersion) throw FormatError(FormatErrorKind::bad_version, "unsupported AFCI version");
  SignalTrace t;
  t.sample_rate = r.u32();
  const std::uint64_t count = r.u64();
  if (count > r.remaining() / 4) throw FormatError(FormatErrorKind::truncated, "AFCI payload shorter than header");
  t.samples = r.f32s(count);
  if (!r.at_end()) throw FormatError(FormatErrorKind::malformed, "trailing bytes after AFCI payload");
  t.frame_len = frame_len;
  t.frame_labels.assign(count / frame_len, 0);
  return t;
}

// ---- Noise generators ---------------------------------------------------------

namespace synth_detail {

void add_exp_pulse(std::vector<double>& out, double fs, double t0, double amplitude, double tau) {
  const auto start = static_cast<std::size_t>(std::ceil(t0 * fs));
  const auto span = static_cast<std::size_t>(std::ceil(8 * tau * fs));
  for (std::size_t i = start; i < out.size() && i < start + span; ++i)
    out[i] += amplitude * std::exp(-(static_cast<double>(i) / fs - t0) / tau);
}

void add_ringing(std::vector<double>& out, double fs, double t0, double amplitude, double freq, double tau) {
  const auto start = static_cast<std::size_t>(std::ceil(t0 * fs));
  const auto span = static_cast<std::size_t>(std::ceil(8 * tau * fs));
  for (std::size_t i = start; i < out.size() && i < start + span; ++i) {
    const double dt = static_cast<double>(i) / fs - t0;
    out[i] += amplitude * std::exp(-dt / tau) * std::sin(kTwoPi * freq * dt);
  }
}

std::vector<double> pink_noise(std::size_t n, double fs, double gamma, double low_cut_hz, Rng& rng) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  std::vector<std::complex<double>> x(m);
  for (auto& v : x) v = rng.normal();
  FftPlan plan(m);
  plan.forward(x);
  x[0] = 0;
  for (std::size_t k = 1; k < m; ++k) {
    const double f = static_cast<double>(std::min(k, m - k)) * fs / static_cast<double>(m);
    x[k] *= std::pow(std::max(f, low_cut_hz), -gamma / 2.0);
  }
  plan.inverse(x);
  std::vector<double> out(n);
  double energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[i].real();
    energy += out[i] * out[i];
  }
  const double rms = std::sqrt(energy / static_cast<double>(n));
  if (rms > 0)
    for (auto& v : out) v /= rms;
  return out;
}

std::vector<double> resonant_noise(std::size_t n, double fs, const Resonance& r, Rng& rng) {
  // RBJ band-pass biquad, 0 dB peak gain.
  const double w0 = kTwoPi * r.center_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * r.q);
  const double a0 = 1 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2 * std::cos(w0) / a0, a2 = (1 - alpha) / a0;
  std::vector<double> out(n);
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0, energy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    const double y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    out[i] = y;
    energy += y * y;
  }
  const double rms = std::sqrt(energy / static_cast<double>(std::max<std::size_t>(n, 1)));
  if (rms > 0)
    for (auto& v : out) v *= r.amplitude / rms;
  return out;
}

}  // namespace synth_detail

}  // namespace afci
