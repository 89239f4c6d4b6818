#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "afci/rng.hpp"

namespace afci::nn {

struct ConvBlock {
  int kernel = 3;
  int channels = 8;
  int pool = 2;
  bool operator==(const ConvBlock&) const = default;
};

// Conv blocks (same-padded conv -> batch norm -> ReLU -> dropout -> max-pool),
// then flatten -> fc_hidden (ReLU) -> linear head with num_classes outputs.
struct ArchSpec {
  std::vector<ConvBlock> blocks;
  double dropout = 0.2;
  int fc_hidden = 64;
  int num_classes = 2;
  int input_dim = 256;

  // (7, 8, 2), (5, 16, 2), (3, 32, 2); dropout 0.2; fc 64; 2 classes.
  static ArchSpec ld_spec();

  void validate() const;
  // Sequence length entering each block, plus the final pooled length.
  std::vector<int> lengths() const;
  int flattened_dim() const;
  bool operator==(const ArchSpec&) const = default;
};

nlohmann::json to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const nlohmann::json& j);

enum class Role : std::uint8_t { backbone, head, running_stat };

template <class Real>
struct NamedTensor {
  std::string name;
  Role role = Role::backbone;
  std::vector<std::size_t> shape;
  std::vector<Real> values;
};

template <class Real>
struct ParamSet {
  std::vector<NamedTensor<Real>> tensors;
  std::string version;

  NamedTensor<Real>& get(std::string_view name);
  const NamedTensor<Real>& get(std::string_view name) const;
  const NamedTensor<Real>* find(std::string_view name) const;
  std::size_t trainable_count() const;

  template <class To>
  ParamSet<To> cast() const {
    ParamSet<To> out;
    out.version = version;
    for (const auto& t : tensors)
      out.tensors.push_back({t.name, t.role, t.shape, std::vector<To>(t.values.begin(), t.values.end())});
    return out;
  }
};

using ModelParams = ParamSet<float>;
// Same names and order as ModelParams, running statistics excluded.
using Gradients = ParamSet<float>;

template <class Real>
ParamSet<Real> zero_gradients(const ParamSet<Real>& params);

ModelParams init_params(const ArchSpec& arch, std::uint64_t seed);
bool all_finite(const ModelParams& params);

enum class Mode { train, infer };


template <class Real>
struct Cache {
  struct Block {
    std::vector<Real> input;     // B x Cin x L
    std::vector<Real> xhat;      // normalized conv output, B x C x L
    std::vector<Real> inv_std;   // per channel
    std::vector<Real> batch_mean;
    std::vector<Real> batch_var;
    std::vector<Real> act;       // after ReLU (pre-dropout)
    std::vector<Real> drop_mask; // scale per element; empty in infer mode
    std::vector<std::uint32_t> argmax;  // per pooled element, index into the pre-pool tensor
  };
  Mode mode = Mode::infer;
  std::size_t batch = 0;
  std::vector<Block> blocks;
  std::vector<Real> fc_in;   // B x F
  std::vector<Real> fc_pre;  // B x H
  std::vector<Real> fc_act;  // B x H
  std::vector<Real> logits;  // B x K
};

template <class Real>
struct ForwardResult {
  std::vector<Real> logits;
  Cache<Real> cache;
};

// Inputs are row-major (batch x input_dim). Train mode needs an rng for the
// dropout masks and normalizes with batch statistics.
template <class Real>
ForwardResult<Real> forward(const ArchSpec& arch, const ParamSet<Real>& params, std::span<const Real> inputs,
                            std::size_t batch, Mode mode, Rng* rng = nullptr);

template <class Real>
struct BackwardResult {
  double loss = 0.0;
  ParamSet<Real> grads;
};

// Weighted softmax cross-entropy sum_i w_i * CE_i; empty weights mean 1/B each.
template <class Real>
BackwardResult<Real> backward(const ArchSpec& arch, const ParamSet<Real>& params, const Cache<Real>& cache,
                              std::span<const int> labels, std::span<const double> sample_weights = {});

template <class Real>
double cross_entropy(std::span<const Real> logits, std::size_t num_classes, std::span<const int> labels,
                     std::span<const double> sample_weights = {});

// Exponential moving average of the batch statistics held in a train-mode cache.
void update_running_stats(const ArchSpec& arch, ModelParams& params, const Cache<float>& cache,
                          double momentum = 0.1);

// P(arc) per row, infer mode.
std::vector<float> predict_proba(const ArchSpec& arch, const ModelParams& params, std::span<const float> inputs,
                                 std::size_t batch);

// ---- Optimization --------------------------------------------------------

using LrMap = std::map<std::string, double, std::less<>>;

// Head tensors get head_lr, everything else trainable gets head_lr * backbone_ratio.
LrMap layerwise_lr(const ModelParams& params, double head_lr, double backbone_ratio);
LrMap uniform_lr(const ModelParams& params, double lr);

struct SgdState {
  double momentum = 0.9;
  std::map<std::string, std::vector<float>, std::less<>> velocity;
};

// v = momentum * v + g + weight_decay * w;  w -= lr * v.  Running statistics
// are never touched.
void apply_update(ModelParams& params, const Gradients& grads, const LrMap& lr, double weight_decay,
                  SgdState& state);

template <class Real>
struct PenaltyResult {
  double penalty = 0.0;
  ParamSet<Real> grads;
};

// sum over trainable w of ||w - w0||^2 and its gradient 2 (w - w0).
template <class Real>
PenaltyResult<Real> l2_sp(const ParamSet<Real>& params, const ParamSet<Real>& anchor);

template <class Real>
void add_scaled(ParamSet<Real>& into, const ParamSet<Real>& from, double scale);

// ---- Cost ------------------------------------------------------------------

struct LayerFlops {
  std::string name;
  std::uint64_t macs = 0;         // multiply-accumulates
  std::uint64_t elementwise = 0;  // batch norm, ReLU and pooling, one per element
  std::uint64_t total() const { return macs + elementwise; }
};

struct FlopsCount {
  std::vector<LayerFlops> layers;
  std::uint64_t total = 0;
};

FlopsCount flops(const ArchSpec& arch);

// ---- Model + file format ----------------------------------------------------

// Per-feature affine map applied to raw feature rows before the network:
// x' = (x - mean) * scale. Empty means identity.
struct InputNorm {
  std::vector<float> mean;
  std::vector<float> scale;

  bool empty() const { return mean.empty(); }
  void apply(std::span<const float> rows, std::vector<float>& out) const;
  // Fitted to per-feature mean and 1/std (std floored at 1e-3).
  static InputNorm fit(std::span<const float> rows, std::size_t dim);
  bool operator==(const InputNorm&) const = default;
};

struct Model {
  ArchSpec arch;
  ModelParams params;
  InputNorm norm;

  // P(arc) for raw feature rows.
  std::vector<float> predict(std::span<const float> rows) const;
};

Model make_model(const ArchSpec& arch, std::uint64_t seed);

// "AFCM" | u16 version | u32 header length | JSON header (arch, version tag,
// input norm, tensor index) | little-endian f32 payload.
std::vector<std::uint8_t> encode_model(const Model& model);
Model decode_model(std::span<const std::uint8_t> bytes);

}  // namespace afci::nn
