#pragma once

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "core.hpp"
#include "integrators.hpp"
#include "rng.hpp"

namespace exfm {

enum class Activation { relu, selu };

inline constexpr double kSeluLambda = 1.0507009873554804934;
inline constexpr double kSeluAlpha = 1.6732632423543772848;

inline double activate(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? x : 0.0;
  return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * (std::exp(x) - 1.0);
}

inline double activate_deriv(Activation a, double x) {
  if (a == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
  return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
}

// Fully connected v_theta(x, t): input_dim = d + 1 (t appended to x),
// output_dim = d. Parameters live in one flat vector, layer by layer
// (W row-major, then b).
struct MlpSpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t output_dim = 1;
  Activation act = Activation::relu;

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s;
    s.push_back(input_dim);
    for (auto h : hidden) s.push_back(h);
    s.push_back(output_dim);
    return s;
  }

  std::size_t param_count() const {
    auto s = layer_sizes();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < s.size(); ++l) n += s[l] * s[l + 1] + s[l + 1];
    return n;
  }
};

// Uniform fan-in init: bound sqrt(6/fan_in) for relu (He-style), sqrt(3/fan_in)
// for selu (LeCun-style); biases zero.
inline Vec init_params(const MlpSpec& spec, std::uint64_t seed) {
  Vec p(spec.param_count(), 0.0);
  CounterRng rng(seed, 0x6d6c70);
  auto sizes = spec.layer_sizes();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    double gain = spec.act == Activation::relu ? 6.0 : 3.0;
    double bound = std::sqrt(gain / static_cast<double>(sizes[l]));
    for (std::size_t i = 0; i < sizes[l] * sizes[l + 1]; ++i)
      p[off + i] = rng.uniform(-bound, bound);
    off += sizes[l] * sizes[l + 1] + sizes[l + 1];
  }
  return p;
}

// Forward over a batch of rows; inputs already carry t in the last column.
inline Matrix mlp_forward_batch(const MlpSpec& spec, const Vec& params, const Matrix& inputs) {
  if (inputs.cols != spec.input_dim)
    throw std::invalid_argument("mlp_forward_batch: input width mismatch");
  auto sizes = spec.layer_sizes();
  Matrix cur = inputs;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double* W = params.data() + off;
    const double* b = W + in * out;
    Matrix next(cur.rows, out);
    for (std::size_t r = 0; r < cur.rows; ++r) {
      const double* xr = cur[r];
      double* nr = next[r];
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = W + o * in;
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * xr[i];
        nr[o] = (l + 2 < sizes.size()) ? activate(spec.act, acc) : acc;
      }
    }
    cur = std::move(next);
    off += in * out + out;
  }
  return cur;
}

inline Vec mlp_forward(const MlpSpec& spec, const Vec& params, const Vec& input) {
  Matrix m(1, input.size());
  m.set_row(0, input);
  return mlp_forward_batch(spec, params, m).row(0);
}

// Mean over rows of the squared residual norm; gradient by reverse accumulation.
inline double mlp_loss_and_grad(const MlpSpec& spec, const Vec& params, const Matrix& inputs,
                                const Matrix& targets, Vec& grad) {
  if (inputs.rows != targets.rows || targets.cols != spec.output_dim)
    throw std::invalid_argument("mlp_loss_and_grad: shape mismatch");
  const std::size_t B = inputs.rows;
  auto sizes = spec.layer_sizes();
  const std::size_t L = sizes.size() - 1;

  // forward, keeping pre-activations
  std::vector<Matrix> acts(L + 1);  // acts[0] = inputs, acts[l] = activated output of layer l
  std::vector<Matrix> pre(L);
  acts[0] = inputs;
  std::size_t off = 0;
  std::vector<std::size_t> offsets(L);
  for (std::size_t l = 0; l < L; ++l) {
    offsets[l] = off;
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double* W = params.data() + off;
    const double* b = W + in * out;
    pre[l] = Matrix(B, out);
    acts[l + 1] = Matrix(B, out);
    for (std::size_t r = 0; r < B; ++r) {
      const double* xr = acts[l][r];
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = W + o * in;
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * xr[i];
        pre[l][r][o] = acc;
        acts[l + 1][r][o] = (l + 1 < L) ? activate(spec.act, acc) : acc;
      }
    }
    off += in * out + out;
  }

  double loss = 0.0;
  Matrix delta(B, spec.output_dim);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t o = 0; o < spec.output_dim; ++o) {
      double res = acts[L][r][o] - targets[r][o];
      loss += res * res;
      delta[r][o] = 2.0 * res / static_cast<double>(B);
    }
  loss /= static_cast<double>(B);

  grad.assign(params.size(), 0.0);
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double* W = params.data() + offsets[l];
    double* gW = grad.data() + offsets[l];
    double* gb = gW + in * out;
    Matrix prev_delta(B, in, 0.0);
    for (std::size_t r = 0; r < B; ++r) {
      const double* xr = acts[l][r];
      double* pd = prev_delta[r];
      for (std::size_t o = 0; o < out; ++o) {
        double dl = delta[r][o];
        if (dl == 0.0) continue;
        double* gw = gW + o * in;
        const double* w = W + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          gw[i] += dl * xr[i];
          pd[i] += dl * w[i];
        }
        gb[o] += dl;
      }
    }
    if (l > 0) {
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t i = 0; i < in; ++i)
          prev_delta[r][i] *= activate_deriv(spec.act, pre[l - 1][r][i]);
      delta = std::move(prev_delta);
    }
  }
  return loss;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when nonzero
};

struct AdamState {
  Vec m, v;
  std::size_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(Vec& params, const Vec& grad, AdamState& st, const AdamConfig& cfg) {
  if (st.m.size() != params.size()) st = AdamState(params.size());
  ++st.step;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grad[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    double mh = st.m[i] / bc1;
    double vh = st.v[i] / bc2;
    params[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * params[i]);
  }
}

// shadow <- rate * shadow + (1 - rate) * params
inline void ema_update(Vec& shadow, const Vec& params, double rate) {
  if (shadow.size() != params.size()) shadow = params;
  for (std::size_t i = 0; i < params.size(); ++i)
    shadow[i] = rate * shadow[i] + (1.0 - rate) * params[i];
}

inline VectorField mlp_field(const MlpSpec& spec, Vec params) {
  return [spec, params = std::move(params)](const Vec& x, double t) {
    Vec in(x.size() + 1);
    std::copy(x.begin(), x.end(), in.begin());
    in.back() = t;
    return mlp_forward(spec, params, in);
  };
}

struct Checkpoint {
  MlpSpec spec;
  Vec params;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

inline constexpr char kCheckpointMagic[8] = {'E', 'X', 'F', 'M', 'C', 'K', 'P', 'T'};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json h;
  h["format"] = 1;
  h["input_dim"] = ck.spec.input_dim;
  h["hidden"] = ck.spec.hidden;
  h["output_dim"] = ck.spec.output_dim;
  h["activation"] = ck.spec.act == Activation::relu ? "relu" : "selu";
  h["param_count"] = ck.params.size();
  h["step"] = ck.step;
  h["seed"] = ck.seed;
  std::string hs = h.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kCheckpointMagic, 8);
  std::uint64_t len = hs.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  f.write(reinterpret_cast<const char*>(ck.params.data()),
          static_cast<std::streamsize>(ck.params.size() * sizeof(double)));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  if (!f || len > (1u << 20)) throw std::runtime_error(path + ": corrupt header");
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  auto h = nlohmann::json::parse(hs);
  Checkpoint ck;
  ck.spec.input_dim = h.at("input_dim").get<std::size_t>();
  ck.spec.hidden = h.at("hidden").get<std::vector<std::size_t>>();
  ck.spec.output_dim = h.at("output_dim").get<std::size_t>();
  ck.spec.act = h.at("activation").get<std::string>() == "selu" ? Activation::selu
                                                                : Activation::relu;
  ck.step = h.at("step").get<std::uint64_t>();
  ck.seed = h.at("seed").get<std::uint64_t>();
  std::size_t n = h.at("param_count").get<std::size_t>();
  if (n != ck.spec.param_count()) throw std::runtime_error(path + ": parameter count mismatch");
  ck.params.resize(n);
  f.read(reinterpret_cast<char*>(ck.params.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw std::runtime_error(path + ": truncated parameter block");
  return ck;
}

}  // namespace exfm
