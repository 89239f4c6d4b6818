#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afci/signal.hpp"

namespace afci {

// How adjacent bins are combined into bands. sum_db adds the per-bin dB
// values; db_of_sum adds linear magnitudes first and takes dB of the sum
// (non-default, kept for comparison runs).
enum class BandMode { sum_db, db_of_sum };

struct FeatureConfig {
  std::size_t frame_len = 1024;
  std::size_t aggregation = 2;
  double db_floor = 1e-12;
  BandMode band_mode = BandMode::sum_db;

  void validate() const;
  std::size_t dim() const { return frame_len / (2 * aggregation); }
};

using FrameView = std::span<const float>;
using Spectrum = std::vector<std::complex<double>>;
using SpectralVector = std::vector<float>;

// Non-overlapping frames; the trailing remainder is dropped.
std::vector<FrameView> segment(std::span<const float> samples, const FeatureConfig& config);
std::vector<FrameView> segment(const SignalTrace& trace, const FeatureConfig& config);

std::vector<double> hanning(std::size_t length);

// Radix-2 decimation-in-time transform with precomputed twiddles.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);
  std::size_t size() const { return n_; }
  void forward(std::span<std::complex<double>> data) const;
  void inverse(std::span<std::complex<double>> data) const;

 private:
  void transform(std::span<std::complex<double>> data, bool invert) const;
  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddle_;
};

bool is_power_of_two(std::size_t n);

// X[k] = sum_n x[n] e^{-j 2 pi k n / L}, computed by FFT.
Spectrum dft(std::span<const double> frame);
Spectrum dft(FrameView frame);

// Zeroes bin 0, then B[k] = 10 log10(max(|X[k]|, floor) / L) for k < L/2.
std::vector<double> to_db(const Spectrum& spectrum, const FeatureConfig& config);

// B_s[m] = sum_{k=mS}^{(m+1)S-1} B[k].
std::vector<double> aggregate(std::span<const double> per_bin, const FeatureConfig& config);

// Window -> DFT -> dB -> aggregate. Holds the window and FFT plan so batch
// featurization does not rebuild them per frame.
class Featurizer {
 public:
  explicit Featurizer(FeatureConfig config = {});
  const FeatureConfig& config() const { return config_; }
  SpectralVector operator()(FrameView frame) const;

 private:
  FeatureConfig config_;
  std::vector<double> window_;
  FftPlan plan_;
};

SpectralVector featurize(FrameView frame, const FeatureConfig& config);

// Row-major feature matrix plus 8-bit labels (0 normal, 1 arc).
struct FeatureDataset {
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  void push(std::span<const float> row, std::uint8_t label);
  void append(const FeatureDataset& other);
  FeatureDataset subset(std::span<const std::size_t> indices) const;
  std::size_t count(std::uint8_t label) const;
};

// Featurizes every frame of a trace, labels taken from the trace.
void append_trace_features(FeatureDataset& out, const SignalTrace& trace, const Featurizer& featurizer);

// Binary "AFCF" file plus a JSON sidecar (<path>.json) with the config.
std::vector<std::uint8_t> encode_feature_dataset(const FeatureDataset& dataset);
FeatureDataset decode_feature_dataset(std::span<const std::uint8_t> bytes);
void save_feature_dataset(const std::filesystem::path& path, const FeatureDataset& dataset,
                          const FeatureConfig& config);
FeatureDataset load_feature_dataset(const std::filesystem::path& path);

}  // namespace afci
