// Parametric waveform recipes for every operating category. Each recipe
// shapes three per-sample channels: a multiplier on the DC level, a
// multiplier on the switching harmonics, and an additive transient term.
// Sub-condition indices select variants within a category.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "afci/signal.hpp"

namespace afci::synth_detail {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Relay and contactor clicks are short one-sided pulses with broadband content.
constexpr double kClickTau = 30e-6;

double event_or(const ScenarioSpec& s, std::size_t i, double fraction) {
  return i < s.event_times.size() ? s.event_times[i] : fraction * s.duration;
}

// Linear ramp of `values` from `from` to `to` over [t0, t0 + len]; held at `to` afterwards.
void ramp(std::vector<double>& values, double fs, double t0, double len, double from, double to) {
  const auto start = static_cast<std::size_t>(std::max(0.0, std::ceil(t0 * fs)));
  for (std::size_t i = start; i < values.size(); ++i) {
    const double u = len > 0 ? std::min(1.0, (static_cast<double>(i) / fs - t0) / len) : 1.0;
    values[i] = from + (to - from) * u;
  }
}

void fill_from(std::vector<double>& values, double fs, double t0, double v) {
  const auto start = static_cast<std::size_t>(std::max(0.0, std::ceil(t0 * fs)));
  for (std::size_t i = start; i < values.size(); ++i) values[i] = v;
}

void add_sine(std::vector<double>& out, double fs, double t0, double amp, double freq, double phase = 0.0) {
  const auto start = static_cast<std::size_t>(std::max(0.0, std::ceil(t0 * fs)));
  for (std::size_t i = start; i < out.size(); ++i)
    out[i] += amp * std::sin(kTwoPi * freq * static_cast<double>(i) / fs + phase);
}

// Inverter start: string open until t0, contactor click, DC and switching
// ramp up, then a widened MPPT scan.
void startup(Waveform& w, const ScenarioSpec& s, double fs, Rng& rng) {
  static constexpr double kRamp[] = {0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4};
  const double t0 = event_or(s, 0, 0.1);
  const double len = kRamp[s.sub_condition % 7] * s.duration;
  fill_from(w.dc_envelope, fs, 0.0, 0.0);
  fill_from(w.harmonic_gain, fs, 0.0, 0.0);
  ramp(w.dc_envelope, fs, t0, len, 0.0, 1.0);
  ramp(w.harmonic_gain, fs, t0, len * 0.5, 0.0, 1.0);
  add_exp_pulse(w.additive, fs, t0, 0.4 * (1.0 + s.sub_condition / 7.0), kClickTau);
  // MPPT scan: slow sweep after the ramp.
  const double scan_start = t0 + len;
  const auto start = static_cast<std::size_t>(std::ceil(scan_start * fs));
  const double scan_rate = rng.uniform(3.0, 8.0);
  for (std::size_t i = start; i < w.dc_envelope.size(); ++i)
    w.dc_envelope[i] *= 1.0 + 0.05 * std::sin(kTwoPi * scan_rate * (static_cast<double>(i) / fs - scan_start));
}

// A further string joins the bus: DC step with an inrush overshoot.
void parallel_strings(Waveform& w, const ScenarioSpec& s, double fs, Rng& rng) {
  static constexpr double kStep[] = {0.3, 0.5, 0.8};
  const double te = event_or(s, 0, rng.uniform(0.3, 0.6));
  const double step = kStep[s.sub_condition % 3];
  ramp(w.dc_envelope, fs, te, 2e-3, 1.0, 1.0 + step);
  std::vector<double> inrush(w.dc_envelope.size(), 0.0);
  add_exp_pulse(inrush, fs, te, 0.2 * step, 5e-3);
  for (std::size_t i = 0; i < inrush.size(); ++i) w.dc_envelope[i] += inrush[i];
  add_exp_pulse(w.additive, fs, te, 0.3, kClickTau);
}

// Direct-connection / bypass modes: different operating current and ripple
// level, with a mode switch midway.
void direct_connection(Waveform& w, const ScenarioSpec& s, double fs, Rng&) {
  static constexpr double kDc[] = {0.3, 0.5, 0.7, 0.9, 1.1, 1.3};
  static constexpr double kHarm[] = {0.2, 0.5, 1.5, 0.8, 1.2, 2.0};
  const int j = s.sub_condition % 6;
  const double te = event_or(s, 0, 0.5);
  std::fill(w.dc_envelope.begin(), w.dc_envelope.end(), kDc[j]);
  ramp(w.harmonic_gain, fs, te, 5e-3, 1.0, kHarm[j]);
  add_exp_pulse(w.additive, fs, te, 0.25, kClickTau);
}

// Breaker opens then recloses; contacts bounce on both transitions.
void breaker_operation(Waveform& w, const ScenarioSpec& s, double fs, Rng& rng) {
  const int bounces = 1 + s.sub_condition % 4;
  const double t_open = event_or(s, 0, 0.3);
  const double t_close = event_or(s, 1, 0.6);
  for (int b = 0; b < bounces; ++b) {
    const double sign = b % 2 == 0 ? -1.0 : 1.0;
    add_exp_pulse(w.additive, fs, t_open + b * 0.5e-3, sign * 0.5 * rng.uniform(0.6, 1.0), kClickTau);
    add_exp_pulse(w.additive, fs, t_close + b * 0.5e-3, -sign * 0.5 * rng.uniform(0.6, 1.0), kClickTau);
  }
  ramp(w.dc_envelope, fs, t_open, 1e-3, 1.0, 0.0);
  ramp(w.harmonic_gain, fs, t_open, 1e-3, 1.0, 0.0);
  ramp(w.dc_envelope, fs, t_close, 20e-3, 0.0, 1.0);
  ramp(w.harmonic_gain, fs, t_close, 10e-3, 0.0, 1.0);
}

// Irradiance changes: passing cloud, periodic shading, fast flicker.
void variable_input(Waveform& w, const ScenarioSpec& s, double fs, Rng& rng) {
  const std::size_t n = w.dc_envelope.size();
  switch (s.sub_condition % 3) {
    case 0: {
      const double t0 = event_or(s, 0, 0.2), t1 = event_or(s, 1, 0.6);
      ramp(w.dc_envelope, fs, t0, 0.15 * s.duration, 1.0, 0.6);
      ramp(w.dc_envelope, fs, t1, 0.15 * s.duration, 0.6, 1.0);
      break;
    }
    case 1:
      for (std::size_t i = 0; i < n; ++i)
        w.dc_envelope[i] = 1.0 - 0.3 * 0.5 * (1 - std::cos(kTwoPi * 2.0 * static_cast<double>(i) / fs));
      break;
    default: {
      double level = 1.0;
      for (double t = 0.0; t < s.duration; t += 0.05) {
        level = std::clamp(level + rng.uniform(-0.1, 0.1), 0.7, 1.1);
        ramp(w.dc_envelope, fs, t, 5e-3, w.dc_envelope[std::min(n - 1, static_cast<std::size_t>(t * fs))], level);
      }
    }
  }
}

// Export limiting forces repeated stop/start cycles.
void start_stop(Waveform& w, const ScenarioSpec& s, double fs, Rng&) {
  static constexpr double kPeriod[] = {0.2, 0.35};
  const double period = kPeriod[s.sub_condition % 2];
  for (double t = 0.0; t < s.duration; t += period) {
    const double off = t + 0.6 * period;
    ramp(w.dc_envelope, fs, t, 20e-3, 0.05, 1.0);
    ramp(w.harmonic_gain, fs, t, 10e-3, 0.0, 1.0);
    ramp(w.dc_envelope, fs, off, 5e-3, 1.0, 0.05);
    ramp(w.harmonic_gain, fs, off, 2e-3, 1.0, 0.0);
    add_exp_pulse(w.additive, fs, t, 0.3, kClickTau);
    add_exp_pulse(w.additive, fs, off, -0.3, kClickTau);
  }
}

// Grid relay closes (or opens): click, LC ringing, and a DC transition.
void grid_connection(Waveform& w, const ScenarioSpec& s, double fs, Rng& rng) {
  static constexpr double kRing[] = {2e3, 3e3, 5e3, 8e3};
  const int j = s.sub_condition % 4;
  const double te = event_or(s, 0, rng.uniform(0.3, 0.6));
  const bool connect = j % 2 == 0;
  ramp(w.dc_envelope, fs, 0.0, 0.0, connect ? 0.2 : 1.0, connect ? 0.2 : 1.0);
  ramp(w.dc_envelope, fs, te, 30e-3, connect ? 0.2 : 1.0, connect ? 1.0 : 0.2);
  add_exp_pulse(w.additive, fs, te, 0.4, kClickTau);
  add_ringing(w.additive, fs, te, 0.4, kRing[j], 3e-3);
}

// AC-side load steps reflected on the DC bus, with changing 2x-line ripple.
void load_switching(Waveform& w, const ScenarioSpec& s, double fs, Rng& rng) {
  const double step = 0.1 * (1 + s.sub_condition % 4);
  double level = 1.0;
  for (int k = 0; k < 4; ++k) {
    const double te = event_or(s, static_cast<std::size_t>(k), 0.15 + 0.2 * k);
    const double next = k % 2 == 0 ? 1.0 - step : 1.0;
    ramp(w.dc_envelope, fs, te, 2e-3, level, next);
    level = next;
    add_ringing(w.additive, fs, te, 0.15 * rng.uniform(0.8, 1.2), 1.5e3, 2e-3);
  }
  add_sine(w.additive, fs, 0.0, 0.05 + 0.05 * (s.sub_condition % 4), 100.0);
}

// Distorted grid: 3rd/5th/7th line harmonics plus 2x-line ripple.
void harmonic_grid(Waveform& w, const ScenarioSpec& s, double fs, Rng& rng) {
  const double line = s.sub_condition % 2 == 0 ? 50.0 : 60.0;
  add_sine(w.additive, fs, 0.0, 0.2, 2 * line, rng.uniform(0, kTwoPi));
  add_sine(w.additive, fs, 0.0, 0.3, 3 * line, rng.uniform(0, kTwoPi));
  add_sine(w.additive, fs, 0.0, 0.2, 5 * line, rng.uniform(0, kTwoPi));
  add_sine(w.additive, fs, 0.0, 0.1, 7 * line, rng.uniform(0, kTwoPi));
}

// Steady operation at one of four operating currents (sub-condition 0 is nominal).
void steady(Waveform& w, const ScenarioSpec& s, double, Rng&) {
  static constexpr double kDc[] = {1.0, 0.6, 0.8, 1.2};
  std::fill(w.dc_envelope.begin(), w.dc_envelope.end(), kDc[s.sub_condition % 4]);
}

}  // namespace

Waveform build_waveform(const ScenarioSpec& scenario, const HardwareProfile& profile, std::size_t n, Rng& rng) {
  Waveform w{std::vector<double>(n, 1.0), std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
  const double fs = profile.sample_rate;
  switch (scenario.category) {
    case Category::startup: startup(w, scenario, fs, rng); break;
    case Category::parallel_strings: parallel_strings(w, scenario, fs, rng); break;
    case Category::direct_connection: direct_connection(w, scenario, fs, rng); break;
    case Category::breaker_operation: breaker_operation(w, scenario, fs, rng); break;
    case Category::variable_input: variable_input(w, scenario, fs, rng); break;
    case Category::start_stop: start_stop(w, scenario, fs, rng); break;
    case Category::grid_connection: grid_connection(w, scenario, fs, rng); break;
    case Category::load_switching: load_switching(w, scenario, fs, rng); break;
    case Category::harmonic_grid: harmonic_grid(w, scenario, fs, rng); break;
    case Category::steady:
    case Category::arc: steady(w, scenario, fs, rng); break;
  }
  return w;
}

}  // namespace afci::synth_detail
