#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "datasets.hpp"
#include "densities.hpp"
#include "estimators.hpp"
#include "flow_maps.hpp"
#include "metrics.hpp"
#include "nn.hpp"

namespace exfm {

// Training never evaluates the linear-map weight at t = 1 (it is singular
// there), and the bridge is singular at both endpoints; the regularized map is
// the only one safe on all of [0, 1).
inline constexpr double kTrainTimeClip = 1e-6;

// rng stream allocation for a run; step indices are added to the batch/sample
// bases, so everything below 2^32 is reserved for fixed purposes.
inline constexpr std::uint64_t kStreamBatch = 0x100000000ull;
inline constexpr std::uint64_t kStreamSample = 0x200000000ull;
inline constexpr std::uint64_t kStreamEval = 0x4556414cull;

// Where target samples come from: an analytic density, or a finite point set
// drawn with replacement.
struct TargetSource {
  std::optional<Density> density;
  std::optional<EmpiricalSet> points;

  static TargetSource from_density(Density d) { return {std::move(d), std::nullopt}; }
  static TargetSource from_points(EmpiricalSet s) { return {std::nullopt, std::move(s)}; }

  std::size_t dim() const { return density ? exfm::dim(*density) : points->dim(); }

  Vec draw_one(CounterRng& rng) const {
    if (density) return sample(*density, rng);
    std::size_t r = static_cast<std::size_t>(rng.uniform_index(points->size()));
    const double* p = points->points[r];
    return Vec(p, p + points->dim());
  }

  Matrix draw(std::size_t n, CounterRng& rng) const {
    Matrix out(n, dim());
    for (std::size_t i = 0; i < n; ++i) out.set_row(i, draw_one(rng));
    return out;
  }
};

struct TrainConfig {
  // [objective]
  std::string objective = "exfm";  // cfm | exfm | exfm_s
  std::size_t bank = 512;          // N target samples per step (exfm, exfm_s)
  // [map]
  MapKind map = MapKind::linear;
  double sigma_s = 0.1;  // regularized_linear width
  double sigma_e = 1.0;  // bridge width (brownian_bridge map and exfm_s)
  // [model]
  std::vector<std::size_t> hidden = {64, 64};
  Activation activation = Activation::selu;
  // [data]: exactly one of toy / csv / target_density
  std::string toy;
  std::string csv;
  bool standardize = false;
  std::size_t data_n = 20000;  // generator size for toy datasets
  // [run]
  std::size_t steps = 2000;
  std::size_t batch = 128;  // n pairs per minibatch; one t per pair
  double lr = 1e-3;
  double weight_decay = 0.0;
  double ema_rate = 0.9;
  std::uint64_t seed = 0;
  std::size_t metric_every = 500;
  std::size_t metric_samples = 512;
  std::size_t sample_steps = 100;  // Euler steps when sampling for metrics
  // analytic targets for harnesses and tests; not reachable from config files
  std::optional<Density> target_density;
  std::optional<Density> source_density;
};

inline ConditionalMap conditional_map(const TrainConfig& cfg) {
  switch (cfg.map) {
    case MapKind::linear: return ConditionalMap::linear();
    case MapKind::regularized_linear: return ConditionalMap::regularized_linear(cfg.sigma_s);
    case MapKind::ve: return ConditionalMap::ve();
    case MapKind::vp: return ConditionalMap::vp();
    case MapKind::brownian_bridge: return ConditionalMap::brownian_bridge(cfg.sigma_e);
  }
  throw std::invalid_argument("unknown map kind");
}

// Collects every problem instead of stopping at the first; keys are named as
// they appear in config files.
inline std::vector<std::string> validate(const TrainConfig& cfg) {
  std::vector<std::string> errs;
  auto bad = [&](const std::string& m) { errs.push_back(m); };
  if (cfg.objective != "cfm" && cfg.objective != "exfm" && cfg.objective != "exfm_s")
    bad("objective.kind: must be cfm, exfm or exfm_s (got '" + cfg.objective + "')");
  if (cfg.batch < 1) bad("run.batch: must be >= 1");
  if (cfg.steps < 1) bad("run.steps: must be >= 1");
  if (cfg.objective != "cfm" && cfg.bank < cfg.batch)
    bad("objective.bank: must be >= run.batch for " + cfg.objective);
  if (!(cfg.lr > 0.0)) bad("run.lr: must be positive");
  if (cfg.weight_decay < 0.0) bad("run.weight_decay: must be >= 0");
  if (!(cfg.ema_rate >= 0.0 && cfg.ema_rate < 1.0)) bad("run.ema: must lie in [0, 1)");
  if (cfg.metric_every < 1) bad("run.metric_every: must be >= 1");
  if (cfg.metric_samples < 2) bad("run.metric_samples: must be >= 2");
  if (cfg.sample_steps < 1) bad("run.sample_steps: must be >= 1");
  if (cfg.map == MapKind::regularized_linear && !(cfg.sigma_s > 0.0))
    bad("map.sigma_s: must be positive for the regularized map");
  if (!(cfg.sigma_e > 0.0) &&
      (cfg.map == MapKind::brownian_bridge || cfg.objective == "exfm_s"))
    bad("map.sigma_e: must be positive");
  if (cfg.hidden.empty()) bad("model.hidden: need at least one hidden layer");
  for (std::size_t h : cfg.hidden)
    if (h < 1) {
      bad("model.hidden: layer sizes must be >= 1");
      break;
    }
  int sources = (!cfg.toy.empty()) + (!cfg.csv.empty()) + cfg.target_density.has_value();
  if (sources != 1) bad("data: set exactly one of toy or csv");
  if (!cfg.toy.empty()) {
    try {
      toy_from_string(cfg.toy);
    } catch (const std::exception&) {
      bad("data.toy: unknown dataset '" + cfg.toy + "'");
    }
    if (cfg.data_n < 1) bad("data.n: must be >= 1");
  }
  return errs;
}

inline double draw_time(const ConditionalMap& map, CounterRng& rng) {
  double u = rng.uniform();
  switch (map.kind) {
    case MapKind::regularized_linear: return u;
    case MapKind::brownian_bridge:
      return kTrainTimeClip + u * (1.0 - 2.0 * kTrainTimeClip);
    default: return u * (1.0 - kTrainTimeClip);
  }
}

struct Batch {
  Matrix inputs;   // n x (d+1); last column is t
  Matrix targets;  // n x d
};

namespace detail {

// Shared minibatch prefix: per element the draw order is x0, x1, t, bridge
// noise. Keeping it identical across objectives makes cfm and exfm coincide
// under shared randomness when the bank adds nothing (N = n).
struct MinibatchDraw {
  Matrix x0, x1, x;
  Vec t;
};

inline MinibatchDraw draw_minibatch(const ConditionalMap& map, const Density& rho0,
                                    const TargetSource& tgt, std::size_t n, CounterRng& rng) {
  const std::size_t d = tgt.dim();
  MinibatchDraw mb{Matrix(n, d), Matrix(n, d), Matrix(n, d), Vec(n)};
  for (std::size_t i = 0; i < n; ++i) {
    Vec x0 = sample(rho0, rng);
    Vec x1 = tgt.draw_one(rng);
    double t = draw_time(map, rng);
    Vec x = map.deterministic() ? forward(map, t, x0, x1) : forward(map, t, x0, x1, rng);
    mb.x0.set_row(i, x0);
    mb.x1.set_row(i, x1);
    mb.x.set_row(i, x);
    mb.t[i] = t;
  }
  return mb;
}

inline Matrix with_time(const Matrix& x, const Vec& t) {
  Matrix in(x.rows, x.cols + 1);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) in[i][j] = x[i][j];
    in[i][x.cols] = t[i];
  }
  return in;
}

}  // namespace detail

inline Batch make_cfm_batch(const ConditionalMap& map, const Density& rho0,
                            const TargetSource& tgt, std::size_t n, CounterRng& rng) {
  if (n < 1) throw std::invalid_argument("make_cfm_batch: empty minibatch");
  auto mb = detail::draw_minibatch(map, rho0, tgt, n, rng);
  Batch b{detail::with_time(mb.x, mb.t), Matrix(n, tgt.dim())};
  for (std::size_t i = 0; i < n; ++i)
    b.targets.set_row(i, pair_velocity(map, mb.t[i], mb.x0.row(i), mb.x1.row(i), mb.x.row(i)));
  return b;
}

// The bank holds the minibatch's own x1 rows (rows 0..n-1) topped up with
// fresh draws to size N; every element's importance estimate sees its paired
// sample plus N-1 entries that are independent of it, which is what makes the
// expected gradient match cfm exactly.
inline Batch make_exfm_batch(const ConditionalMap& map, const Density& rho0,
                             const TargetSource& tgt, std::size_t n, std::size_t bank_n,
                             CounterRng& rng) {
  if (n < 1) throw std::invalid_argument("make_exfm_batch: empty minibatch");
  if (bank_n < n) throw std::invalid_argument("make_exfm_batch: bank smaller than minibatch");
  auto mb = detail::draw_minibatch(map, rho0, tgt, n, rng);
  const std::size_t d = tgt.dim();
  Matrix bank(bank_n, d);
  for (std::size_t i = 0; i < n; ++i) bank.set_row(i, mb.x1.row(i));
  for (std::size_t k = n; k < bank_n; ++k) bank.set_row(k, tgt.draw_one(rng));
  TargetBank tb{std::move(bank), true};

  Batch b{detail::with_time(mb.x, mb.t), Matrix(n, d)};
  parallel_for(n, [&](std::size_t i) {
    auto est = snis_target(mb.x.row(i), mb.t[i], tb, map, rho0);
    b.targets.set_row(i, est.value);
  });
  return b;
}

struct SdeBatch {
  Matrix inputs;
  Matrix field_targets;
  Matrix score_targets;
};

// Sample-only variant: both endpoint banks are the minibatch rows topped up
// with fresh draws, and targets come from the double-sum pair estimator.
inline SdeBatch make_exfm_s_batch(const Density& rho0, const TargetSource& tgt, double sigma_e,
                                  std::size_t n, std::size_t bank_n, CounterRng& rng) {
  if (n < 1) throw std::invalid_argument("make_exfm_s_batch: empty minibatch");
  if (bank_n < n) throw std::invalid_argument("make_exfm_s_batch: bank smaller than minibatch");
  ConditionalMap map = ConditionalMap::brownian_bridge(sigma_e);
  auto mb = detail::draw_minibatch(map, rho0, tgt, n, rng);
  const std::size_t d = tgt.dim();
  Matrix src(bank_n, d), dst(bank_n, d);
  for (std::size_t i = 0; i < n; ++i) {
    src.set_row(i, mb.x0.row(i));
    dst.set_row(i, mb.x1.row(i));
  }
  for (std::size_t k = n; k < bank_n; ++k) src.set_row(k, sample(rho0, rng));
  for (std::size_t k = n; k < bank_n; ++k) dst.set_row(k, tgt.draw_one(rng));

  SdeBatch b{detail::with_time(mb.x, mb.t), Matrix(n, d), Matrix(n, d)};
  parallel_for(n, [&](std::size_t i) {
    auto est = sde_pair_targets(mb.x.row(i), mb.t[i], src, dst, sigma_e);
    b.field_targets.set_row(i, est.field);
    b.score_targets.set_row(i, est.score);
  });
  return b;
}

struct TrainState {
  MlpSpec spec;
  Vec params, ema;
  AdamState opt;
  // second head for exfm_s
  MlpSpec score_spec;
  Vec score_params, score_ema;
  AdamState score_opt;
  std::size_t step = 0;
};

inline TrainState init_train_state(const TrainConfig& cfg, std::size_t d) {
  TrainState st;
  st.spec = MlpSpec{d + 1, cfg.hidden, d, cfg.activation};
  st.params = init_params(st.spec, cfg.seed);
  st.ema = st.params;
  if (cfg.objective == "exfm_s") {
    st.score_spec = st.spec;
    st.score_params = init_params(st.score_spec, cfg.seed + 1);
    st.score_ema = st.score_params;
  }
  return st;
}

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  double score_loss = 0.0;  // exfm_s only
};

namespace detail {

inline double apply_batch(const MlpSpec& spec, Vec& params, Vec& ema, AdamState& opt,
                          const AdamConfig& adam, double ema_rate, const Matrix& inputs,
                          const Matrix& targets, std::size_t step, const char* who,
                          double* grad_norm) {
  Vec grad;
  double loss = mlp_loss_and_grad(spec, params, inputs, targets, grad);
  if (!std::isfinite(loss))
    throw numerical_error(std::string(who) + ": non-finite loss at step " +
                          std::to_string(step));
  adam_step(params, grad, opt, adam);
  ema_update(ema, params, ema_rate);
  if (grad_norm) *grad_norm = std::sqrt(dot(grad, grad));
  return loss;
}

inline AdamConfig adam_config(const TrainConfig& cfg) {
  AdamConfig a;
  a.lr = cfg.lr;
  a.weight_decay = cfg.weight_decay;
  return a;
}

}  // namespace detail

inline StepResult cfm_step(TrainState& st, const TrainConfig& cfg, const Density& rho0,
                           const TargetSource& tgt, CounterRng& rng) {
  Batch b = make_cfm_batch(conditional_map(cfg), rho0, tgt, cfg.batch, rng);
  StepResult r;
  r.loss = detail::apply_batch(st.spec, st.params, st.ema, st.opt, detail::adam_config(cfg),
                               cfg.ema_rate, b.inputs, b.targets, st.step + 1, "cfm_step",
                               &r.grad_norm);
  ++st.step;
  return r;
}

inline StepResult exfm_step(TrainState& st, const TrainConfig& cfg, const Density& rho0,
                            const TargetSource& tgt, CounterRng& rng) {
  Batch b = make_exfm_batch(conditional_map(cfg), rho0, tgt, cfg.batch, cfg.bank, rng);
  StepResult r;
  r.loss = detail::apply_batch(st.spec, st.params, st.ema, st.opt, detail::adam_config(cfg),
                               cfg.ema_rate, b.inputs, b.targets, st.step + 1, "exfm_step",
                               &r.grad_norm);
  ++st.step;
  return r;
}

inline StepResult exfm_s_step(TrainState& st, const TrainConfig& cfg, const Density& rho0,
                              const TargetSource& tgt, CounterRng& rng) {
  SdeBatch b = make_exfm_s_batch(rho0, tgt, cfg.sigma_e, cfg.batch, cfg.bank, rng);
  StepResult r;
  AdamConfig adam = detail::adam_config(cfg);
  r.loss = detail::apply_batch(st.spec, st.params, st.ema, st.opt, adam, cfg.ema_rate,
                               b.inputs, b.field_targets, st.step + 1, "exfm_s_step",
                               &r.grad_norm);
  r.score_loss = detail::apply_batch(st.score_spec, st.score_params, st.score_ema,
                                     st.score_opt, adam, cfg.ema_rate, b.inputs,
                                     b.score_targets, st.step + 1, "exfm_s_step(score)",
                                     nullptr);
  ++st.step;
  return r;
}

// ---- gradient equality harness -------------------------------------------

struct GradientEqualityReport {
  std::size_t coords = 0;
  std::size_t within = 0;    // |mean diff| <= 3 pooled standard errors
  double max_sigma = 0.0;    // worst |mean diff| / SE
  double pass_fraction() const {
    return coords ? static_cast<double>(within) / static_cast<double>(coords) : 1.0;
  }
  bool pass() const { return pass_fraction() >= 0.99; }
};

// Averages cfm and exfm minibatch gradients at frozen parameters over
// independent minibatch streams and compares them coordinate by coordinate.
// With exact weights and the paired sample in the bank, the exfm target is the
// conditional expectation of the cfm target given the query point and the bank
// set, so both losses share one expected gradient at any bank size.
inline GradientEqualityReport gradient_equality_check(const MlpSpec& spec, const Vec& params,
                                                      const TrainConfig& cfg,
                                                      const Density& rho0, const Density& rho1,
                                                      std::size_t trials, std::uint64_t seed) {
  if (trials < 2) throw std::invalid_argument("gradient_equality_check: need trials >= 2");
  const std::size_t P = spec.param_count();
  const ConditionalMap map = conditional_map(cfg);
  const TargetSource tgt = TargetSource::from_density(rho1);

  // fixed chunking keeps the reduction order independent of the thread count
  const std::size_t chunks = std::min<std::size_t>(64, trials);
  struct Acc {
    Vec sum_c, sq_c, sum_e, sq_e;
  };
  std::vector<Acc> acc(chunks, Acc{Vec(P, 0.0), Vec(P, 0.0), Vec(P, 0.0), Vec(P, 0.0)});

  parallel_for(chunks, [&](std::size_t c) {
    std::size_t lo = trials * c / chunks, hi = trials * (c + 1) / chunks;
    Vec grad;
    for (std::size_t i = lo; i < hi; ++i) {
      CounterRng rng_c(seed, 2 * i);
      Batch bc = make_cfm_batch(map, rho0, tgt, cfg.batch, rng_c);
      mlp_loss_and_grad(spec, params, bc.inputs, bc.targets, grad);
      for (std::size_t p = 0; p < P; ++p) {
        acc[c].sum_c[p] += grad[p];
        acc[c].sq_c[p] += sq(grad[p]);
      }
      CounterRng rng_e(seed, 2 * i + 1);
      Batch be = make_exfm_batch(map, rho0, tgt, cfg.batch, cfg.bank, rng_e);
      mlp_loss_and_grad(spec, params, be.inputs, be.targets, grad);
      for (std::size_t p = 0; p < P; ++p) {
        acc[c].sum_e[p] += grad[p];
        acc[c].sq_e[p] += sq(grad[p]);
      }
    }
  });

  Vec sum_c(P, 0.0), sq_c(P, 0.0), sum_e(P, 0.0), sq_e(P, 0.0);
  for (const auto& a : acc)
    for (std::size_t p = 0; p < P; ++p) {
      sum_c[p] += a.sum_c[p];
      sq_c[p] += a.sq_c[p];
      sum_e[p] += a.sum_e[p];
      sq_e[p] += a.sq_e[p];
    }

  GradientEqualityReport rep;
  rep.coords = P;
  const double T = static_cast<double>(trials);
  for (std::size_t p = 0; p < P; ++p) {
    double mc = sum_c[p] / T, me = sum_e[p] / T;
    double vc = std::max(0.0, (sq_c[p] - T * sq(mc)) / (T - 1.0));
    double ve = std::max(0.0, (sq_e[p] - T * sq(me)) / (T - 1.0));
    double se = std::sqrt((vc + ve) / T);
    double diff = std::abs(mc - me);
    if (se == 0.0) {
      if (diff == 0.0) ++rep.within;
      continue;
    }
    rep.max_sigma = std::max(rep.max_sigma, diff / se);
    if (diff <= 3.0 * se) ++rep.within;
  }
  return rep;
}

// ---- experiment driver -----------------------------------------------------

struct RunRecord {
  std::size_t step = 0;
  std::optional<double> loss;
  std::optional<double> grad_norm;
  std::optional<double> score_loss;
  std::vector<std::pair<std::string, double>> metrics;  // empty between snapshots
};

struct RunResult {
  std::vector<RunRecord> records;
  TrainState state;
  std::vector<std::pair<std::string, double>> final_metrics;
  double wall_time_s = 0.0;
};

// Batched Euler transport of source draws through the learned field; the
// sampler the toy experiments evaluate with.
inline Matrix sample_from_model(const MlpSpec& spec, const Vec& params, const Density& rho0,
                                std::size_t count, std::size_t steps, std::uint64_t seed,
                                std::uint64_t stream = 0) {
  if (steps < 1) throw std::invalid_argument("sample_from_model: steps must be >= 1");
  CounterRng rng(seed, stream);
  Matrix x = sample_matrix(rho0, count, rng);
  const std::size_t d = x.cols;
  const double h = 1.0 / static_cast<double>(steps);
  Matrix in(count, d + 1);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = h * static_cast<double>(k);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = 0; j < d; ++j) in[i][j] = x[i][j];
      in[i][d] = t;
    }
    Matrix v = mlp_forward_batch(spec, params, in);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i][j] += h * v[i][j];
  }
  for (double v : x.data)
    if (!std::isfinite(v)) throw numerical_error("sample_from_model: non-finite sample");
  return x;
}

namespace detail {

struct ResolvedData {
  Density rho0;
  TargetSource target;
  Matrix eval_points;  // held out for metric snapshots
};

inline ResolvedData resolve_data(const TrainConfig& cfg) {
  ResolvedData rd;
  if (!cfg.toy.empty()) {
    rd.target = TargetSource::from_points(
        EmpiricalSet(make_toy(cfg.toy, cfg.data_n, cfg.seed), "toy:" + cfg.toy));
    // fresh generator draws, disjoint from the training set by seed offset
    rd.eval_points = make_toy(cfg.toy, cfg.metric_samples, cfg.seed ^ kStreamEval);
  } else if (!cfg.csv.empty()) {
    LoadOptions opts;
    opts.standardize = cfg.standardize;
    rd.target = TargetSource::from_points(load_dataset_csv(cfg.csv, opts).set);
    CounterRng rng(cfg.seed, kStreamEval);
    rd.eval_points = rd.target.points->sample_rows(cfg.metric_samples, rng);
  } else if (cfg.target_density) {
    rd.target = TargetSource::from_density(*cfg.target_density);
    CounterRng rng(cfg.seed, kStreamEval);
    rd.eval_points = sample_matrix(*cfg.target_density, cfg.metric_samples, rng);
  } else {
    throw std::invalid_argument("resolve_data: no target configured");
  }
  rd.rho0 = cfg.source_density ? *cfg.source_density : Density(standard_gaussian(rd.target.dim()));
  if (dim(rd.rho0) != rd.target.dim())
    throw std::invalid_argument("resolve_data: source/target dimension mismatch");
  return rd;
}

inline std::vector<std::pair<std::string, double>> snapshot_metrics(
    const TrainConfig& cfg, const TrainState& st, const ResolvedData& rd, std::size_t step) {
  Matrix model = sample_from_model(st.spec, st.ema, rd.rho0, cfg.metric_samples,
                                   cfg.sample_steps, cfg.seed, kStreamSample + step);
  return {{"energy_distance", energy_distance(model, rd.eval_points)},
          {"w2", wasserstein2(model, rd.eval_points, cfg.seed)}};
}

}  // namespace detail

// Runs the configured objective for cfg.steps optimizer steps, emitting one
// record per step plus metric snapshots (on EMA weights) at step 0, every
// metric_every steps, and at the end. steps = 0 is allowed here and yields the
// initial snapshot only.
inline RunResult run_experiment(const TrainConfig& cfg,
                                const std::function<void(const RunRecord&)>& sink = {}) {
  {
    TrainConfig chk = cfg;
    if (chk.steps == 0) chk.steps = 1;  // a zero-step run is a valid degenerate case here
    auto errs = validate(chk);
    if (!errs.empty()) {
      std::string joined;
      for (const auto& e : errs) joined += (joined.empty() ? "" : "; ") + e;
      throw std::invalid_argument("invalid config: " + joined);
    }
  }
  auto t_start = std::chrono::steady_clock::now();
  detail::ResolvedData rd = detail::resolve_data(cfg);
  RunResult out;
  out.state = init_train_state(cfg, rd.target.dim());

  auto emit = [&](RunRecord r) {
    if (sink) sink(r);
    out.records.push_back(std::move(r));
  };

  RunRecord initial;
  initial.step = 0;
  initial.metrics = detail::snapshot_metrics(cfg, out.state, rd, 0);
  out.final_metrics = initial.metrics;
  emit(std::move(initial));

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    CounterRng rng(cfg.seed, kStreamBatch + step);
    StepResult sr;
    if (cfg.objective == "cfm")
      sr = cfm_step(out.state, cfg, rd.rho0, rd.target, rng);
    else if (cfg.objective == "exfm")
      sr = exfm_step(out.state, cfg, rd.rho0, rd.target, rng);
    else
      sr = exfm_s_step(out.state, cfg, rd.rho0, rd.target, rng);

    RunRecord rec;
    rec.step = step;
    rec.loss = sr.loss;
    rec.grad_norm = sr.grad_norm;
    if (cfg.objective == "exfm_s") rec.score_loss = sr.score_loss;
    if (step % cfg.metric_every == 0 || step == cfg.steps) {
      rec.metrics = detail::snapshot_metrics(cfg, out.state, rd, step);
      out.final_metrics = rec.metrics;
    }
    emit(std::move(rec));
  }

  out.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

// Fixed key order so record streams are byte-identical across reruns.
inline std::string record_to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  if (r.loss) j["loss"] = *r.loss;
  if (r.grad_norm) j["grad_norm"] = *r.grad_norm;
  if (r.score_loss) j["score_loss"] = *r.score_loss;
  j["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.metrics) j["metrics"][k] = v;
  return j.dump();
}

}  // namespace exfm
