#include "afci/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "afci/binary_io.hpp"

namespace afci::nn {

namespace {

constexpr double kBnEps = 1e-5;
constexpr std::uint16_t kModelFormatVersion = 1;

// Positions of a block's tensors inside ParamSet (full) and Gradients.
constexpr std::size_t kParamsPerBlock = 6;
constexpr std::size_t kGradsPerBlock = 4;

std::string block_name(std::size_t i, std::string_view leaf) { return "block" + std::to_string(i) + "." + std::string(leaf); }

template <class Real>
void check_shapes(const ArchSpec& arch, const ParamSet<Real>& params) {
  const std::size_t nb = arch.blocks.size();
  if (params.tensors.size() != nb * kParamsPerBlock + 4)
    throw std::invalid_argument("parameter count does not match architecture");
  int cin = 1;
  auto expect = [&](std::size_t pos, std::size_t count) {
    if (params.tensors[pos].values.size() != count)
      throw std::invalid_argument("shape mismatch for " + params.tensors[pos].name);
  };
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& blk = arch.blocks[b];
    const std::size_t base = b * kParamsPerBlock;
    expect(base, static_cast<std::size_t>(blk.channels * cin * blk.kernel));
    for (std::size_t k = 1; k < kParamsPerBlock; ++k) expect(base + k, static_cast<std::size_t>(blk.channels));
    cin = blk.channels;
  }
  const std::size_t fc = nb * kParamsPerBlock;
  expect(fc, static_cast<std::size_t>(arch.fc_hidden * arch.flattened_dim()));
  expect(fc + 1, static_cast<std::size_t>(arch.fc_hidden));
  expect(fc + 2, static_cast<std::size_t>(arch.num_classes * arch.fc_hidden));
  expect(fc + 3, static_cast<std::size_t>(arch.num_classes));
}

template <class Real>
void softmax_row(const Real* logits, std::size_t k, double* out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) sum += out[j] = std::exp(static_cast<double>(logits[j]) - mx);
  for (std::size_t j = 0; j < k; ++j) out[j] /= sum;
}

}  // namespace

// ---- ArchSpec ------------------------------------------------------------------

ArchSpec ArchSpec::ld_spec() {
  ArchSpec a;
  a.blocks = {{7, 8, 2}, {5, 16, 2}, {3, 32, 2}};
  a.dropout = 0.2;
  a.fc_hidden = 64;
  a.num_classes = 2;
  a.input_dim = 256;
  return a;
}

void ArchSpec::validate() const {
  if (blocks.empty()) throw std::invalid_argument("arch needs at least one conv block");
  if (input_dim < 1) throw std::invalid_argument("arch.input_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("arch.dropout must lie in [0, 1)");
  if (fc_hidden < 1) throw std::invalid_argument("arch.fc_hidden must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("arch.num_classes must be >= 2");
  int len = input_dim;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.kernel < 1 || b.kernel % 2 == 0) throw std::invalid_argument("conv kernels must be odd and >= 1");
    if (b.channels < 1 || b.pool < 1) throw std::invalid_argument("conv channels and pool must be >= 1");
    if (i > 0 && b.kernel > blocks[i - 1].kernel)
      throw std::invalid_argument("kernel sizes must be non-increasing across blocks");
    if (len < b.pool) throw std::invalid_argument("pooling chain shrinks the sequence below one element");
    len /= b.pool;
  }
}

std::vector<int> ArchSpec::lengths() const {
  std::vector<int> out{input_dim};
  for (const auto& b : blocks) out.push_back(out.back() / b.pool);
  return out;
}

int ArchSpec::flattened_dim() const { return lengths().back() * blocks.back().channels; }

nlohmann::json to_json(const ArchSpec& arch) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : arch.blocks) blocks.push_back({{"kernel", b.kernel}, {"channels", b.channels}, {"pool", b.pool}});
  return {{"blocks", blocks},
          {"dropout", arch.dropout},
          {"fc_hidden", arch.fc_hidden},
          {"num_classes", arch.num_classes},
          {"input_dim", arch.input_dim}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"blocks", "dropout", "fc_hidden", "num_classes", "input_dim"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("unknown arch key '" + k + "'");
  ArchSpec a = ArchSpec::ld_spec();
  if (j.contains("blocks")) {
    a.blocks.clear();
    for (const auto& b : j.at("blocks")) {
      for (const auto& [k, v] : b.items())
        if (k != "kernel" && k != "channels" && k != "pool") throw std::invalid_argument("unknown block key '" + k + "'");
      a.blocks.push_back({b.at("kernel").get<int>(), b.at("channels").get<int>(), b.value("pool", 2)});
    }
  }
  a.dropout = j.value("dropout", a.dropout);
  a.fc_hidden = j.value("fc_hidden", a.fc_hidden);
  a.num_classes = j.value("num_classes", a.num_classes);
  a.input_dim = j.value("input_dim", a.input_dim);
  a.validate();
  return a;
}

// ---- ParamSet ------------------------------------------------------------------

template <class Real>
NamedTensor<Real>& ParamSet<Real>::get(std::string_view name) {
  for (auto& t : tensors)
    if (t.name == name) return t;
  throw std::out_of_range("no tensor named " + std::string(name));
}

template <class Real>
const NamedTensor<Real>& ParamSet<Real>::get(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw std::out_of_range("no tensor named " + std::string(name));
}

template <class Real>
const NamedTensor<Real>* ParamSet<Real>::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

template <class Real>
std::size_t ParamSet<Real>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors)
    if (t.role != Role::running_stat) n += t.values.size();
  return n;
}

template <class Real>
ParamSet<Real> zero_gradients(const ParamSet<Real>& params) {
  ParamSet<Real> g;
  g.version = params.version;
  for (const auto& t : params.tensors)
    if (t.role != Role::running_stat) g.tensors.push_back({t.name, t.role, t.shape, std::vector<Real>(t.values.size(), Real(0))});
  return g;
}

ModelParams init_params(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed, 77);
  ModelParams p;
  p.version = "init-" + std::to_string(seed);
  auto uniform = [&](std::size_t n, double bound) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    return v;
  };
  auto constant = [](std::size_t n, float c) { return std::vector<float>(n, c); };
  std::size_t cin = 1;
  for (std::size_t b = 0; b < arch.blocks.size(); ++b) {
    const auto c = static_cast<std::size_t>(arch.blocks[b].channels);
    const auto k = static_cast<std::size_t>(arch.blocks[b].kernel);
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * k));
    p.tensors.push_back({block_name(b, "conv.weight"), Role::backbone, {c, cin, k}, uniform(c * cin * k, bound)});
    p.tensors.push_back({block_name(b, "conv.bias"), Role::backbone, {c}, constant(c, 0.f)});
    p.tensors.push_back({block_name(b, "bn.gamma"), Role::backbone, {c}, constant(c, 1.f)});
    p.tensors.push_back({block_name(b, "bn.beta"), Role::backbone, {c}, constant(c, 0.f)});
    p.tensors.push_back({block_name(b, "bn.running_mean"), Role::running_stat, {c}, constant(c, 0.f)});
    p.tensors.push_back({block_name(b, "bn.running_var"), Role::running_stat, {c}, constant(c, 1.f)});
    cin = c;
  }
  const auto f = static_cast<std::size_t>(arch.flattened_dim());
  const auto h = static_cast<std::size_t>(arch.fc_hidden);
  const auto k = static_cast<std::size_t>(arch.num_classes);
  p.tensors.push_back({"fc.weight", Role::backbone, {h, f}, uniform(h * f, std::sqrt(6.0 / static_cast<double>(f)))});
  p.tensors.push_back({"fc.bias", Role::backbone, {h}, constant(h, 0.f)});
  p.tensors.push_back({"head.weight", Role::head, {k, h}, uniform(k * h, std::sqrt(1.0 / static_cast<double>(h)))});
  p.tensors.push_back({"head.bias", Role::head, {k}, constant(k, 0.f)});
  return p;
}

bool all_finite(const ModelParams& params) {
  for (const auto& t : params.tensors)
    for (float v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

// ---- Forward -------------------------------------------------------------------

template <class Real>
ForwardResult<Real> forward(const ArchSpec& arch, const ParamSet<Real>& params, std::span<const Real> inputs,
                            std::size_t batch, Mode mode, Rng* rng) {
  arch.validate();
  check_shapes(arch, params);
  if (batch == 0) throw std::invalid_argument("forward needs a non-empty batch");
  if (inputs.size() != batch * static_cast<std::size_t>(arch.input_dim))
    throw std::invalid_argument("input size does not match batch x input_dim");
  const bool train = mode == Mode::train;
  if (train && arch.dropout > 0 && rng == nullptr) throw std::invalid_argument("train mode needs an rng for dropout");

  ForwardResult<Real> out;
  auto& c = out.cache;
  c.mode = mode;
  c.batch = batch;
  const std::size_t B = batch;

  std::vector<Real> x(inputs.begin(), inputs.end());
  std::size_t cin = 1, len = static_cast<std::size_t>(arch.input_dim);

  for (std::size_t bi = 0; bi < arch.blocks.size(); ++bi) {
    const auto& spec = arch.blocks[bi];
    const std::size_t C = static_cast<std::size_t>(spec.channels);
    const std::size_t K = static_cast<std::size_t>(spec.kernel);
    const std::size_t P = static_cast<std::size_t>(spec.pool);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
    const std::size_t base = bi * kParamsPerBlock;
    const Real* w = params.tensors[base].values.data();
    const Real* bias = params.tensors[base + 1].values.data();
    const Real* gamma = params.tensors[base + 2].values.data();
    const Real* beta = params.tensors[base + 3].values.data();
    const Real* rmean = params.tensors[base + 4].values.data();
    const Real* rvar = params.tensors[base + 5].values.data();

    auto& blk = c.blocks.emplace_back();
    blk.input = std::move(x);
    const Real* in = blk.input.data();

    // Same-padded convolution, stride 1.
    std::vector<Real> z(B * C * len);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t oc = 0; oc < C; ++oc) {
        Real* zo = z.data() + (b * C + oc) * len;
        std::fill(zo, zo + len, bias[oc]);
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const Real* xi = in + (b * cin + ic) * len;
          const Real* wk = w + (oc * cin + ic) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pad;
            const std::ptrdiff_t slen = static_cast<std::ptrdiff_t>(len);
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
            const std::ptrdiff_t hi = std::min(slen, slen - off);
            const Real wv = wk[k];
            for (std::ptrdiff_t t = lo; t < hi; ++t) zo[t] += wv * xi[t + off];
          }
        }
      }
    }

    // Batch norm over (batch, position) per channel.
    blk.batch_mean.assign(C, Real(0));
    blk.batch_var.assign(C, Real(0));
    blk.inv_std.assign(C, Real(0));
    const double m = static_cast<double>(B * len);
    for (std::size_t ch = 0; ch < C; ++ch) {
      double mean, var;
      if (train) {
        double s = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          const Real* zo = z.data() + (b * C + ch) * len;
          for (std::size_t t = 0; t < len; ++t) s += zo[t];
        }
        mean = s / m;
        double sq = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          const Real* zo = z.data() + (b * C + ch) * len;
          for (std::size_t t = 0; t < len; ++t) {
            const double d = zo[t] - mean;
            sq += d * d;
          }
        }
        var = sq / m;
      } else {
        mean = rmean[ch];
        var = rvar[ch];
      }
      blk.batch_mean[ch] = static_cast<Real>(mean);
      blk.batch_var[ch] = static_cast<Real>(var);
      blk.inv_std[ch] = static_cast<Real>(1.0 / std::sqrt(var + kBnEps));
    }
    blk.xhat.resize(z.size());
    blk.act.resize(z.size());
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t ch = 0; ch < C; ++ch) {
        const std::size_t o = (b * C + ch) * len;
        const Real mu = blk.batch_mean[ch], is = blk.inv_std[ch], g = gamma[ch], be = beta[ch];
        for (std::size_t t = 0; t < len; ++t) {
          const Real xh = (z[o + t] - mu) * is;
          blk.xhat[o + t] = xh;
          const Real y = g * xh + be;
          blk.act[o + t] = y > Real(0) ? y : Real(0);
        }
      }
    }

    // Inverted dropout.
    const Real* pre_pool = blk.act.data();
    std::vector<Real> dropped;
    if (train && arch.dropout > 0) {
      const Real keep_scale = static_cast<Real>(1.0 / (1.0 - arch.dropout));
      blk.drop_mask.resize(blk.act.size());
      dropped.resize(blk.act.size());
      for (std::size_t i = 0; i < blk.act.size(); ++i) {
        blk.drop_mask[i] = rng->bernoulli(arch.dropout) ? Real(0) : keep_scale;
        dropped[i] = blk.act[i] * blk.drop_mask[i];
      }
      pre_pool = dropped.data();
    }

    // Max-pool, window P, stride P; the trailing remainder is dropped.
    const std::size_t out_len = len / P;
    std::vector<Real> pooled(B * C * out_len);
    blk.argmax.resize(pooled.size());
    for (std::size_t row = 0; row < B * C; ++row) {
      for (std::size_t j = 0; j < out_len; ++j) {
        std::size_t best = row * len + j * P;
        for (std::size_t q = 1; q < P; ++q) {
          const std::size_t idx = row * len + j * P + q;
          if (pre_pool[idx] > pre_pool[best]) best = idx;
        }
        pooled[row * out_len + j] = pre_pool[best];
        blk.argmax[row * out_len + j] = static_cast<std::uint32_t>(best);
      }
    }
    x = std::move(pooled);
    cin = C;
    len = out_len;
  }

  const std::size_t F = cin * len;
  const std::size_t H = static_cast<std::size_t>(arch.fc_hidden);
  const std::size_t Kc = static_cast<std::size_t>(arch.num_classes);
  const std::size_t fc = arch.blocks.size() * kParamsPerBlock;
  const Real* fw = params.tensors[fc].values.data();
  const Real* fb = params.tensors[fc + 1].values.data();
  const Real* hw = params.tensors[fc + 2].values.data();
  const Real* hb = params.tensors[fc + 3].values.data();

  c.fc_in = std::move(x);
  c.fc_pre.resize(B * H);
  c.fc_act.resize(B * H);
  for (std::size_t b = 0; b < B; ++b) {
    const Real* xi = c.fc_in.data() + b * F;
    for (std::size_t h = 0; h < H; ++h) {
      const Real* wr = fw + h * F;
      Real s = fb[h];
      for (std::size_t f = 0; f < F; ++f) s += wr[f] * xi[f];
      c.fc_pre[b * H + h] = s;
      c.fc_act[b * H + h] = s > Real(0) ? s : Real(0);
    }
  }
  c.logits.resize(B * Kc);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < Kc; ++k) {
      Real s = hb[k];
      for (std::size_t h = 0; h < H; ++h) s += hw[k * H + h] * c.fc_act[b * H + h];
      c.logits[b * Kc + k] = s;
    }
  out.logits = c.logits;
  return out;
}

template <class Real>
double cross_entropy(std::span<const Real> logits, std::size_t num_classes, std::span<const int> labels,
                     std::span<const double> sample_weights) {
  const std::size_t B = labels.size();
  if (logits.size() != B * num_classes) throw std::invalid_argument("logit/label count mismatch");
  std::vector<double> p(num_classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw std::invalid_argument("label outside the class range");
    const Real* row = logits.data() + i * num_classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < num_classes; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double sum = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) sum += std::exp(static_cast<double>(row[k]) - mx);
    const double ce = mx + std::log(sum) - static_cast<double>(row[labels[i]]);
    const double wgt = sample_weights.empty() ? 1.0 / static_cast<double>(B) : sample_weights[i];
    loss += wgt * ce;
  }
  return loss;
}

// ---- Backward ------------------------------------------------------------------

template <class Real>
BackwardResult<Real> backward(const ArchSpec& arch, const ParamSet<Real>& params, const Cache<Real>& c,
                              std::span<const int> labels, std::span<const double> sample_weights) {
  check_shapes(arch, params);
  const std::size_t B = c.batch;
  if (labels.size() != B) throw std::invalid_argument("label count does not match batch");
  if (!sample_weights.empty() && sample_weights.size() != B)
    throw std::invalid_argument("sample weight count does not match batch");
  const std::size_t Kc = static_cast<std::size_t>(arch.num_classes);
  const std::size_t H = static_cast<std::size_t>(arch.fc_hidden);
  const std::size_t F = c.fc_in.size() / B;

  BackwardResult<Real> res;
  res.loss = cross_entropy<Real>(c.logits, Kc, labels, sample_weights);
  res.grads = zero_gradients(params);
  auto& g = res.grads.tensors;

  std::vector<Real> dlogits(B * Kc);
  std::vector<double> prob(Kc);
  for (std::size_t i = 0; i < B; ++i) {
    softmax_row(c.logits.data() + i * Kc, Kc, prob.data());
    const double wgt = sample_weights.empty() ? 1.0 / static_cast<double>(B) : sample_weights[i];
    for (std::size_t k = 0; k < Kc; ++k)
      dlogits[i * Kc + k] = static_cast<Real>(wgt * (prob[k] - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0)));
  }

  const std::size_t nb = arch.blocks.size();
  const std::size_t pfc = nb * kParamsPerBlock, gfc = nb * kGradsPerBlock;
  const Real* fw = params.tensors[pfc].values.data();
  const Real* hw = params.tensors[pfc + 2].values.data();
  Real* gfw = g[gfc].values.data();
  Real* gfb = g[gfc + 1].values.data();
  Real* ghw = g[gfc + 2].values.data();
  Real* ghb = g[gfc + 3].values.data();

  std::vector<Real> dpre(B * H, Real(0));
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t k = 0; k < Kc; ++k) {
      const Real d = dlogits[i * Kc + k];
      ghb[k] += d;
      for (std::size_t h = 0; h < H; ++h) {
        ghw[k * H + h] += d * c.fc_act[i * H + h];
        dpre[i * H + h] += d * hw[k * H + h];
      }
    }
    for (std::size_t h = 0; h < H; ++h)
      if (!(c.fc_pre[i * H + h] > Real(0))) dpre[i * H + h] = Real(0);
  }

  std::vector<Real> dx(B * F, Real(0));
  for (std::size_t i = 0; i < B; ++i) {
    const Real* xi = c.fc_in.data() + i * F;
    Real* dxi = dx.data() + i * F;
    for (std::size_t h = 0; h < H; ++h) {
      const Real d = dpre[i * H + h];
      if (d == Real(0)) continue;
      gfb[h] += d;
      Real* gw = gfw + h * F;
      const Real* wr = fw + h * F;
      for (std::size_t f = 0; f < F; ++f) {
        gw[f] += d * xi[f];
        dxi[f] += d * wr[f];
      }
    }
  }

  const auto lengths = arch.lengths();
  for (std::size_t bi = nb; bi-- > 0;) {
    const auto& spec = arch.blocks[bi];
    const auto& blk = c.blocks[bi];
    const std::size_t C = static_cast<std::size_t>(spec.channels);
    const std::size_t K = static_cast<std::size_t>(spec.kernel);
    const std::size_t len = static_cast<std::size_t>(lengths[bi]);
    const std::size_t cin = bi == 0 ? 1 : static_cast<std::size_t>(arch.blocks[bi - 1].channels);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
    const std::size_t pb = bi * kParamsPerBlock, gb = bi * kGradsPerBlock;
    const Real* w = params.tensors[pb].values.data();
    const Real* gamma = params.tensors[pb + 2].values.data();
    Real* gw = g[gb].values.data();
    Real* gbias = g[gb + 1].values.data();
    Real* ggamma = g[gb + 2].values.data();
    Real* gbeta = g[gb + 3].values.data();

    // Un-pool, then dropout and ReLU masks.
    std::vector<Real> dy(B * C * len, Real(0));
    for (std::size_t j = 0; j < blk.argmax.size(); ++j) dy[blk.argmax[j]] += dx[j];
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (!blk.drop_mask.empty()) dy[i] *= blk.drop_mask[i];
      if (!(blk.act[i] > Real(0))) dy[i] = Real(0);
    }

    // Batch norm.
    std::vector<Real> dz(dy.size());
    const double m = static_cast<double>(B * len);
    for (std::size_t ch = 0; ch < C; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t o = (b * C + ch) * len;
        for (std::size_t t = 0; t < len; ++t) {
          sum_dy += dy[o + t];
          sum_dy_xhat += static_cast<double>(dy[o + t]) * blk.xhat[o + t];
        }
      }
      ggamma[ch] += static_cast<Real>(sum_dy_xhat);
      gbeta[ch] += static_cast<Real>(sum_dy);
      const double scale = static_cast<double>(gamma[ch]) * blk.inv_std[ch];
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t o = (b * C + ch) * len;
        for (std::size_t t = 0; t < len; ++t) {
          if (c.mode == Mode::train)
            dz[o + t] = static_cast<Real>(scale / m * (m * dy[o + t] - sum_dy - blk.xhat[o + t] * sum_dy_xhat));
          else
            dz[o + t] = static_cast<Real>(scale * dy[o + t]);
        }
      }
    }

    // Convolution.
    std::vector<Real> dinput(bi > 0 ? B * cin * len : 0, Real(0));
    const Real* in = blk.input.data();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t oc = 0; oc < C; ++oc) {
        const Real* d = dz.data() + (b * C + oc) * len;
        Real s = 0;
        for (std::size_t t = 0; t < len; ++t) s += d[t];
        gbias[oc] += s;
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const Real* xi = in + (b * cin + ic) * len;
          Real* gwk = gw + (oc * cin + ic) * K;
          const Real* wk = w + (oc * cin + ic) * K;
          Real* dxi = bi > 0 ? dinput.data() + (b * cin + ic) * len : nullptr;
          for (std::size_t k = 0; k < K; ++k) {
            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pad;
            const std::ptrdiff_t slen = static_cast<std::ptrdiff_t>(len);
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
            const std::ptrdiff_t hi = std::min(slen, slen - off);
            Real acc = 0;
            for (std::ptrdiff_t t = lo; t < hi; ++t) acc += d[t] * xi[t + off];
            gwk[k] += acc;
            if (dxi) {
              const Real wv = wk[k];
              for (std::ptrdiff_t t = lo; t < hi; ++t) dxi[t + off] += wv * d[t];
            }
          }
        }
      }
    }
    dx = std::move(dinput);
  }
  return res;
}

void update_running_stats(const ArchSpec& arch, ModelParams& params, const Cache<float>& cache, double momentum) {
  if (cache.mode != Mode::train) return;
  const auto lengths = arch.lengths();
  for (std::size_t bi = 0; bi < arch.blocks.size(); ++bi) {
    auto& mean = params.tensors[bi * kParamsPerBlock + 4].values;
    auto& var = params.tensors[bi * kParamsPerBlock + 5].values;
    const double m = static_cast<double>(cache.batch) * lengths[bi];
    const double unbias = m > 1 ? m / (m - 1) : 1.0;
    for (std::size_t ch = 0; ch < mean.size(); ++ch) {
      mean[ch] = static_cast<float>((1 - momentum) * mean[ch] + momentum * cache.blocks[bi].batch_mean[ch]);
      var[ch] = static_cast<float>((1 - momentum) * var[ch] + momentum * cache.blocks[bi].batch_var[ch] * unbias);
    }
  }
}

std::vector<float> predict_proba(const ArchSpec& arch, const ModelParams& params, std::span<const float> inputs,
                                 std::size_t batch) {
  const std::size_t dim = static_cast<std::size_t>(arch.input_dim);
  const std::size_t K = static_cast<std::size_t>(arch.num_classes);
  std::vector<float> out;
  out.reserve(batch);
  constexpr std::size_t kChunk = 256;
  std::vector<double> p(K);
  for (std::size_t start = 0; start < batch; start += kChunk) {
    const std::size_t n = std::min(kChunk, batch - start);
    auto res = forward<float>(arch, params, inputs.subspan(start * dim, n * dim), n, Mode::infer);
    for (std::size_t i = 0; i < n; ++i) {
      softmax_row(res.logits.data() + i * K, K, p.data());
      out.push_back(static_cast<float>(p[1]));
    }
  }
  return out;
}

// ---- Optimization ----------------------------------------------------------------

LrMap layerwise_lr(const ModelParams& params, double head_lr, double backbone_ratio) {
  LrMap lr;
  for (const auto& t : params.tensors) {
    if (t.role == Role::head) lr[t.name] = head_lr;
    else if (t.role == Role::backbone) lr[t.name] = head_lr * backbone_ratio;
  }
  return lr;
}

LrMap uniform_lr(const ModelParams& params, double value) { return layerwise_lr(params, value, 1.0); }

void apply_update(ModelParams& params, const Gradients& grads, const LrMap& lr, double weight_decay, SgdState& state) {
  for (const auto& g : grads.tensors) {
    const auto it = lr.find(g.name);
    if (it == lr.end()) throw std::invalid_argument("no learning rate for tensor " + g.name);
    auto& p = params.get(g.name);
    if (p.role == Role::running_stat) throw std::invalid_argument("running statistics are not optimizer targets");
    if (p.values.size() != g.values.size()) throw std::invalid_argument("gradient shape mismatch for " + g.name);
    auto& v = state.velocity[g.name];
    if (v.size() != g.values.size()) v.assign(g.values.size(), 0.0f);
    const double rate = it->second;
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<float>(state.momentum * v[i] + g.values[i] + weight_decay * p.values[i]);
      p.values[i] = static_cast<float>(p.values[i] - rate * v[i]);
    }
  }
}

template <class Real>
PenaltyResult<Real> l2_sp(const ParamSet<Real>& params, const ParamSet<Real>& anchor) {
  PenaltyResult<Real> res;
  res.grads = zero_gradients(params);
  for (auto& g : res.grads.tensors) {
    const auto& w = params.get(g.name).values;
    const auto* a = anchor.find(g.name);
    if (a == nullptr || a->values.size() != w.size()) throw std::invalid_argument("anchor does not match " + g.name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = static_cast<double>(w[i]) - static_cast<double>(a->values[i]);
      res.penalty += d * d;
      g.values[i] = static_cast<Real>(2.0 * d);
    }
  }
  return res;
}

template <class Real>
void add_scaled(ParamSet<Real>& into, const ParamSet<Real>& from, double scale) {
  if (into.tensors.size() != from.tensors.size()) throw std::invalid_argument("gradient sets differ in layout");
  for (std::size_t t = 0; t < into.tensors.size(); ++t) {
    auto& a = into.tensors[t].values;
    const auto& b = from.tensors[t].values;
    if (a.size() != b.size() || into.tensors[t].name != from.tensors[t].name)
      throw std::invalid_argument("gradient sets differ in layout");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += static_cast<Real>(scale * b[i]);
  }
}

// ---- FLOPs -------------------------------------------------------------------------

FlopsCount flops(const ArchSpec& arch) {
  arch.validate();
  FlopsCount out;
  const auto lengths = arch.lengths();
  std::uint64_t cin = 1;
  for (std::size_t b = 0; b < arch.blocks.size(); ++b) {
    const auto& blk = arch.blocks[b];
    const std::uint64_t len = static_cast<std::uint64_t>(lengths[b]);
    const std::uint64_t ch = static_cast<std::uint64_t>(blk.channels);
    LayerFlops l{"block" + std::to_string(b), len * ch * cin * static_cast<std::uint64_t>(blk.kernel), 3 * len * ch};
    out.layers.push_back(l);
    cin = ch;
  }
  const auto f = static_cast<std::uint64_t>(arch.flattened_dim());
  const auto h = static_cast<std::uint64_t>(arch.fc_hidden);
  const auto k = static_cast<std::uint64_t>(arch.num_classes);
  out.layers.push_back({"fc", f * h, h});
  out.layers.push_back({"head", h * k, 0});
  for (const auto& l : out.layers) out.total += l.total();
  return out;
}

// ---- Model file ----------------------------------------------------------------------

void InputNorm::apply(std::span<const float> rows, std::vector<float>& out) const {
  out.assign(rows.begin(), rows.end());
  if (empty()) return;
  const std::size_t dim = mean.size();
  if (rows.size() % dim != 0) throw std::invalid_argument("rows do not match the normalizer width");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % dim]) * scale[i % dim];
}

InputNorm InputNorm::fit(std::span<const float> rows, std::size_t dim) {
  if (dim == 0 || rows.empty() || rows.size() % dim != 0) throw std::invalid_argument("cannot fit normalizer");
  const std::size_t n = rows.size() / dim;
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) sum[i % dim] += rows[i];
  for (std::size_t j = 0; j < dim; ++j) sum[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double d = rows[i] - sum[i % dim];
    sq[i % dim] += d * d;
  }
  InputNorm norm;
  for (std::size_t j = 0; j < dim; ++j) {
    norm.mean.push_back(static_cast<float>(sum[j]));
    norm.scale.push_back(static_cast<float>(1.0 / std::max(1e-3, std::sqrt(sq[j] / static_cast<double>(n)))));
  }
  return norm;
}

std::vector<float> Model::predict(std::span<const float> rows) const {
  const auto dim = static_cast<std::size_t>(arch.input_dim);
  if (rows.empty()) return {};
  std::vector<float> x;
  norm.apply(rows, x);
  return predict_proba(arch, params, x, x.size() / dim);
}

Model make_model(const ArchSpec& arch, std::uint64_t seed) { return {arch, init_params(arch, seed), {}}; }

std::vector<std::uint8_t> encode_model(const Model& model) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : model.params.tensors) {
    const char* role = t.role == Role::head ? "head" : t.role == Role::backbone ? "backbone" : "running_stat";
    index.push_back({{"name", t.name}, {"role", role}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    offset += t.values.size();
  }
  nlohmann::json header = {{"arch", to_json(model.arch)}, {"version", model.params.version}, {"tensors", index}};
  if (!model.norm.empty()) header["input_norm"] = {{"mean", model.norm.mean}, {"scale", model.norm.scale}};
  const std::string text = header.dump();
  ByteWriter w;
  w.raw("AFCM");
  w.u16(kModelFormatVersion);
  w.str(text);
  for (const auto& t : model.params.tensors) w.f32s(t.values);
  return std::move(w).take();
}

Model decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("AFCM");
  if (r.u16() != kModelFormatVersion) throw FormatError(FormatErrorKind::bad_version, "unsupported AFCM version");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("model header is not JSON: ") + e.what());
  }
  Model m;
  try {
    m.arch = arch_from_json(header.at("arch"));
    m.params.version = header.at("version").get<std::string>();
    if (header.contains("input_norm")) {
      m.norm.mean = header["input_norm"].at("mean").get<std::vector<float>>();
      m.norm.scale = header["input_norm"].at("scale").get<std::vector<float>>();
      if (m.norm.mean.size() != static_cast<std::size_t>(m.arch.input_dim) || m.norm.scale.size() != m.norm.mean.size())
        throw FormatError(FormatErrorKind::malformed, "input_norm width does not match input_dim");
    }
    const std::size_t payload_start = r.position();
    for (const auto& e : header.at("tensors")) {
      NamedTensor<float> t;
      t.name = e.at("name").get<std::string>();
      const auto role = e.at("role").get<std::string>();
      t.role = role == "head" ? Role::head : role == "backbone" ? Role::backbone : Role::running_stat;
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto count = e.at("count").get<std::uint64_t>();
      if (r.position() != payload_start + 4 * e.at("offset").get<std::uint64_t>())
        throw FormatError(FormatErrorKind::malformed, "tensor index offsets are not contiguous");
      if (count > r.remaining() / 4) throw FormatError(FormatErrorKind::truncated, "model payload truncated");
      t.values = r.f32s(count);
      m.params.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("bad model header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("bad model header: ") + e.what());
  }
  if (!r.at_end()) throw FormatError(FormatErrorKind::malformed, "trailing bytes after model payload");
  try {
    check_shapes(m.arch, m.params);
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::malformed, e.what());
  }
  return m;
}

// ---- Instantiations -------------------------------------------------------------------

template struct ParamSet<float>;
template struct ParamSet<double>;
template ParamSet<float> zero_gradients(const ParamSet<float>&);
template ParamSet<double> zero_gradients(const ParamSet<double>&);
template ForwardResult<float> forward(const ArchSpec&, const ParamSet<float>&, std::span<const float>, std::size_t,
                                      Mode, Rng*);
template ForwardResult<double> forward(const ArchSpec&, const ParamSet<double>&, std::span<const double>,
                                       std::size_t, Mode, Rng*);
template BackwardResult<float> backward(const ArchSpec&, const ParamSet<float>&, const Cache<float>&,
                                        std::span<const int>, std::span<const double>);
template BackwardResult<double> backward(const ArchSpec&, const ParamSet<double>&, const Cache<double>&,
                                         std::span<const int>, std::span<const double>);
template double cross_entropy(std::span<const float>, std::size_t, std::span<const int>, std::span<const double>);
template double cross_entropy(std::span<const double>, std::size_t, std::span<const int>, std::span<const double>);
template PenaltyResult<float> l2_sp(const ParamSet<float>&, const ParamSet<float>&);
template PenaltyResult<double> l2_sp(const ParamSet<double>&, const ParamSet<double>&);
template void add_scaled(ParamSet<float>&, const ParamSet<float>&, double);
template void add_scaled(ParamSet<double>&, const ParamSet<double>&, double);

}  // namespace afci::nn
