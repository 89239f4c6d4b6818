#include "afci/features.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

#include "afci/binary_io.hpp"

namespace afci {

namespace {
constexpr std::uint16_t kFeatureFormatVersion = 1;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void FeatureConfig::validate() const {
  if (!is_power_of_two(frame_len) || frame_len < 4)
    throw std::invalid_argument("frame_len must be a power of two >= 4");
  if (aggregation == 0 || (frame_len / 2) % aggregation != 0)
    throw std::invalid_argument("aggregation must divide frame_len/2");
  if (!(db_floor > 0.0)) throw std::invalid_argument("db_floor must be positive");
}

std::vector<FrameView> segment(std::span<const float> samples, const FeatureConfig& config) {
  const std::size_t len = config.frame_len;
  if (samples.size() < len) throw std::invalid_argument("trace shorter than one frame");
  std::vector<FrameView> frames;
  frames.reserve(samples.size() / len);
  for (std::size_t i = 0; (i + 1) * len <= samples.size(); ++i) frames.push_back(samples.subspan(i * len, len));
  return frames;
}

std::vector<FrameView> segment(const SignalTrace& trace, const FeatureConfig& config) {
  return segment(std::span<const float>(trace.samples), config);
}

std::vector<double> hanning(std::size_t length) {
  if (length < 2) throw std::invalid_argument("hanning window needs at least 2 points");
  std::vector<double> w(length);
  const double denom = static_cast<double>(length - 1);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / denom));
  // cos(2*pi) is not exactly 1 in floating point.
  w[length - 1] = 0.0;
  return w;
}

FftPlan::FftPlan(std::size_t n) : n_(n), bitrev_(n), twiddle_(n / 2) {
  if (!is_power_of_two(n)) throw std::invalid_argument("FFT size must be a power of two");
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b)
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
    bitrev_[i] = r;
  }
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddle_[k] = {std::cos(angle), std::sin(angle)};
  }
}

void FftPlan::transform(std::span<std::complex<double>> data, bool invert) const {
  if (data.size() != n_) throw std::invalid_argument("FFT input size does not match plan");
  for (std::size_t i = 0; i < n_; ++i)
    if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      for (std::size_t j = 0; j < half; ++j) {
        auto w = twiddle_[j * step];
        if (invert) w = std::conj(w);
        const auto u = data[start + j];
        const auto v = data[start + j + half] * w;
        data[start + j] = u + v;
        data[start + j + half] = u - v;
      }
    }
  }
  if (invert)
    for (auto& x : data) x /= static_cast<double>(n_);
}

void FftPlan::forward(std::span<std::complex<double>> data) const { transform(data, false); }
void FftPlan::inverse(std::span<std::complex<double>> data) const { transform(data, true); }

Spectrum dft(std::span<const double> frame) {
  FftPlan plan(frame.size());
  Spectrum x(frame.begin(), frame.end());
  plan.forward(x);
  return x;
}

Spectrum dft(FrameView frame) {
  std::vector<double> d(frame.begin(), frame.end());
  return dft(std::span<const double>(d));
}

std::vector<double> to_db(const Spectrum& spectrum, const FeatureConfig& config) {
  const std::size_t len = spectrum.size();
  std::vector<double> out(len / 2);
  for (std::size_t k = 0; k < len / 2; ++k) {
    const double mag = k == 0 ? 0.0 : std::abs(spectrum[k]);
    out[k] = 10.0 * std::log10(std::max(mag, config.db_floor) / static_cast<double>(len));
  }
  return out;
}

std::vector<double> aggregate(std::span<const double> per_bin, const FeatureConfig& config) {
  const std::size_t s = config.aggregation;
  if (s == 0 || per_bin.size() % s != 0) throw std::invalid_argument("bin count not divisible by aggregation");
  std::vector<double> out(per_bin.size() / s, 0.0);
  for (std::size_t m = 0; m < out.size(); ++m)
    for (std::size_t k = m * s; k < (m + 1) * s; ++k) out[m] += per_bin[k];
  return out;
}

Featurizer::Featurizer(FeatureConfig config)
    : config_(config), window_((config.validate(), hanning(config.frame_len))), plan_(config.frame_len) {}

SpectralVector Featurizer::operator()(FrameView frame) const {
  const std::size_t len = config_.frame_len;
  if (frame.size() != len) throw std::invalid_argument("frame length does not match feature config");
  Spectrum x(len);
  for (std::size_t n = 0; n < len; ++n) x[n] = static_cast<double>(frame[n]) * window_[n];
  plan_.forward(x);

  SpectralVector out(config_.dim());
  if (config_.band_mode == BandMode::sum_db) {
    const auto bands = aggregate(to_db(x, config_), config_);
    for (std::size_t m = 0; m < bands.size(); ++m) out[m] = static_cast<float>(bands[m]);
  } else {
    const std::size_t s = config_.aggregation;
    for (std::size_t m = 0; m < out.size(); ++m) {
      double sum = 0.0;
      for (std::size_t k = m * s; k < (m + 1) * s; ++k) sum += k == 0 ? 0.0 : std::abs(x[k]);
      out[m] = static_cast<float>(10.0 * std::log10(std::max(sum, config_.db_floor) / static_cast<double>(len)));
    }
  }
  return out;
}

SpectralVector featurize(FrameView frame, const FeatureConfig& config) { return Featurizer(config)(frame); }

void FeatureDataset::push(std::span<const float> r, std::uint8_t label) {
  if (dim == 0) dim = r.size();
  if (r.size() != dim) throw std::invalid_argument("feature row has wrong dimension");
  values.insert(values.end(), r.begin(), r.end());
  labels.push_back(label);
}

void FeatureDataset::append(const FeatureDataset& other) {
  if (other.empty()) return;
  if (dim == 0) dim = other.dim;
  if (other.dim != dim) throw std::invalid_argument("dataset dimensions differ");
  values.insert(values.end(), other.values.begin(), other.values.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

FeatureDataset FeatureDataset::subset(std::span<const std::size_t> indices) const {
  FeatureDataset out;
  out.dim = dim;
  out.values.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.push(row(i), labels.at(i));
  return out;
}

std::size_t FeatureDataset::count(std::uint8_t label) const {
  std::size_t n = 0;
  for (auto l : labels) n += l == label;
  return n;
}

void append_trace_features(FeatureDataset& out, const SignalTrace& trace, const Featurizer& featurizer) {
  const auto frames = segment(trace, featurizer.config());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto v = featurizer(frames[i]);
    out.push(v, static_cast<std::uint8_t>(trace.frame_labels.at(i)));
  }
}

std::vector<std::uint8_t> encode_feature_dataset(const FeatureDataset& dataset) {
  ByteWriter w;
  w.raw("AFCF");
  w.u16(kFeatureFormatVersion);
  w.u32(static_cast<std::uint32_t>(dataset.dim));
  w.u64(dataset.size());
  w.f32s(dataset.values);
  w.bytes(dataset.labels);
  return std::move(w).take();
}

FeatureDataset decode_feature_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("AFCF");
  if (r.u16() != kFeatureFormatVersion) throw FormatError(FormatErrorKind::bad_version, "unsupported AFCF version");
  FeatureDataset ds;
  ds.dim = r.u32();
  const std::uint64_t count = r.u64();
  if (ds.dim == 0 || count > r.remaining() / (4 * ds.dim + 1))
    throw FormatError(FormatErrorKind::truncated, "AFCF payload shorter than header claims");
  ds.values = r.f32s(count * ds.dim);
  const auto labels = r.bytes(count);
  ds.labels.assign(labels.begin(), labels.end());
  for (auto l : ds.labels)
    if (l > 1) throw FormatError(FormatErrorKind::malformed, "AFCF label outside {0,1}");
  if (!r.at_end()) throw FormatError(FormatErrorKind::malformed, "trailing bytes after AFCF payload");
  return ds;
}

void save_feature_dataset(const std::filesystem::path& path, const FeatureDataset& dataset,
                          const FeatureConfig& config) {
  write_file(path, encode_feature_dataset(dataset));
  nlohmann::json side = {{"format", "AFCF"},
                         {"version", kFeatureFormatVersion},
                         {"dim", dataset.dim},
                         {"count", dataset.size()},
                         {"arc_rows", dataset.count(1)},
                         {"normal_rows", dataset.count(0)},
                         {"feature_config",
                          {{"frame_len", config.frame_len},
                           {"aggregation", config.aggregation},
                           {"db_floor", config.db_floor},
                           {"band_mode", config.band_mode == BandMode::sum_db ? "sum_db" : "db_of_sum"}}}};
  write_text(path.string() + ".json", side.dump(2) + "\n");
}

FeatureDataset load_feature_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_feature_dataset(bytes);
}

}  // namespace afci
