// exfm: command-line driver for the flow-matching laboratory.
//
// Exit codes: 0 success, 2 usage/config errors, 3 numerical failures.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include <exfm/config.hpp>
#include <exfm/dispersion.hpp>
#include <exfm/estimators.hpp>
#include <exfm/exact_fields.hpp>
#include <exfm/integrators.hpp>
#include <exfm/metrics.hpp>
#include <exfm/training.hpp>

namespace fs = std::filesystem;
using namespace exfm;

namespace {

// "a:b:n" -> n evenly spaced values from a to b
Vec parse_grid_axis(const std::string& s) {
  auto c1 = s.find(':');
  auto c2 = s.find(':', c1 == std::string::npos ? c1 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw CLI::ValidationError("grid", "expected lo:hi:count, got '" + s + "'");
  double lo = std::stod(s.substr(0, c1));
  double hi = std::stod(s.substr(c1 + 1, c2 - c1 - 1));
  int n = std::stoi(s.substr(c2 + 1));
  if (n < 1) throw CLI::ValidationError("grid", "count must be >= 1");
  return linspace(lo, hi, static_cast<std::size_t>(n));
}

std::pair<Vec, Vec> parse_grid(const std::string& s) {
  auto comma = s.find(',');
  if (comma == std::string::npos)
    throw CLI::ValidationError("grid", "expected t-axis,x-axis (two lo:hi:count specs)");
  return {parse_grid_axis(s.substr(0, comma)), parse_grid_axis(s.substr(comma + 1))};
}

void write_json(const nlohmann::ordered_json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + out);
  f << j.dump(2) << "\n";
}

// ---- exact-field ------------------------------------------------------------

struct FieldArgs {
  std::string kase = "gauss";
  std::string grid = "0.05:0.95:10,-4:4:41";
  std::string out;
  bool with_oracle = false;
  double mu0 = 0.0, sigma0 = 1.0;
  double mu1 = 2.0, sigma1 = 3.0;
  double sigma_e = 1.0;
  double ot_sigma = 2.0;
  double gm_mu = 2.0, gm_sigma = 0.5;
};

int run_exact_field(const FieldArgs& a) {
  auto [ts, xs] = parse_grid(a.grid);
  Gaussian rho0(a.mu0, a.sigma0), rho1(a.mu1, a.sigma1);
  GaussianMixture gm({0.5, 0.5}, {Gaussian(-a.gm_mu, a.gm_sigma), Gaussian(a.gm_mu, a.gm_sigma)});
  SdeGaussParams sde{{a.mu1}, {a.sigma1}, a.sigma_e};
  OtDiagParams ot{{a.mu1}, {a.ot_sigma}};

  const bool has_score = a.kase == "sde";
  const bool oracle = a.with_oracle && (a.kase == "gauss" || a.kase == "gm");
  std::vector<std::string> header{"t", "x", "v"};
  if (has_score) header.push_back("score");
  if (oracle) header.push_back("v_quad");

  Matrix table(ts.size() * xs.size(), header.size());
  std::size_t r = 0;
  for (double t : ts) {
    for (double xv : xs) {
      Vec x{xv};
      double v = 0.0;
      if (a.kase == "gauss") v = gauss_to_gauss_field(rho0, rho1, x, t)[0];
      else if (a.kase == "gm") v = gauss_to_gm_field(gm, x, t)[0];
      else if (a.kase == "sde") v = sde_gauss_field(sde, x, t)[0];
      else if (a.kase == "ot") v = ot_diag_field(ot, x, t)[0];
      else throw std::runtime_error("unknown case '" + a.kase + "' (gauss, gm, sde, ot)");
      table[r][0] = t;
      table[r][1] = xv;
      table[r][2] = v;
      std::size_t col = 3;
      if (has_score) table[r][col++] = sde_gauss_score(sde, x, t)[0];
      if (oracle)
        table[r][col++] = a.kase == "gauss" ? quadrature_field(Density(rho0), Density(rho1), xv, t)
                                            : quadrature_field(Density(standard_gaussian(1)),
                                                               Density(gm), xv, t);
      ++r;
    }
  }
  write_csv(a.out, header, table, {"case = " + a.kase});
  return 0;
}

// ---- trajectories -----------------------------------------------------------

struct TrajArgs {
  std::string kase = "gauss";
  std::string out;
  std::size_t n = 9;
  std::size_t steps = 101;
  double mu0 = 0.0, sigma0 = 1.0;
  double mu1 = 2.0, sigma1 = 3.0;
  double sigma_e = 1.0;
  double ot_sigma = 2.0;
};

int run_trajectories(const TrajArgs& a) {
  Gaussian rho0(a.mu0, a.sigma0), rho1(a.mu1, a.sigma1);
  SdeGaussParams sde{{a.mu1}, {a.sigma1}, a.sigma_e};
  OtDiagParams ot{{a.mu1}, {a.ot_sigma}};
  Vec starts = a.n == 1 ? Vec{a.mu0}
                        : linspace(a.mu0 - 2.5 * a.sigma0, a.mu0 + 2.5 * a.sigma0, a.n);
  Vec ts = linspace(0.0, 1.0, a.steps);

  Matrix table(a.n * ts.size(), 3);
  std::size_t r = 0;
  for (std::size_t p = 0; p < starts.size(); ++p) {
    Vec x0{starts[p]};
    for (double t : ts) {
      double xt = 0.0;
      if (a.kase == "gauss") xt = gauss_to_gauss_trajectory(rho0, rho1, x0, t)[0];
      else if (a.kase == "sde") xt = sde_gauss_trajectory(sde, x0, t)[0];
      else if (a.kase == "ot") xt = ot_diag_trajectory(ot, x0, t)[0];
      else throw std::runtime_error("unknown case '" + a.kase + "' (gauss, sde, ot)");
      table[r][0] = static_cast<double>(p);
      table[r][1] = t;
      table[r][2] = xt;
      ++r;
    }
  }
  write_csv(a.out, {"path_id", "t", "x"}, table, {"case = " + a.kase});
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string objective;  // optional override
  std::int64_t seed = -1;
  std::int64_t steps = -1;
};

int run_train(const TrainArgs& a) {
  std::vector<std::string> errors;
  TrainConfig cfg = load_train_config(a.config, errors);
  if (!a.objective.empty()) cfg.objective = a.objective;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.steps >= 0) cfg.steps = static_cast<std::size_t>(a.steps);
  if (!a.objective.empty() || a.seed >= 0 || a.steps >= 0) {
    errors.clear();
    TrainConfig chk = cfg;
    if (chk.steps == 0) chk.steps = 1;  // --steps 0 earns the initial snapshot only
    for (const auto& e : validate(chk)) errors.push_back(e);
  }
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "config error: " << e << "\n";
    return 2;
  }
  if (!cfg.csv.empty() && !fs::exists(cfg.csv)) {
    std::cerr << "config error: data.csv: no such file '" << cfg.csv << "'\n";
    return 2;
  }

  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "run.jsonl", std::ios::binary);
  if (!log) throw std::runtime_error("cannot open run log in " + a.out);

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::vector<double> tail_losses;
  RunResult res = run_experiment(cfg, [&](const RunRecord& rec) {
    log << record_to_json(rec) << "\n";
    if (rec.loss) {
      loss_sum += *rec.loss;
      ++loss_count;
      tail_losses.push_back(*rec.loss);
      if (tail_losses.size() > 100) tail_losses.erase(tail_losses.begin());
    }
  });
  log.close();

  Checkpoint ck{res.state.spec, res.state.params, res.state.step, cfg.seed};
  save_checkpoint((fs::path(a.out) / "model.ckpt").string(), ck);
  ck.params = res.state.ema;
  save_checkpoint((fs::path(a.out) / "model_ema.ckpt").string(), ck);
  if (cfg.objective == "exfm_s") {
    Checkpoint sk{res.state.score_spec, res.state.score_params, res.state.step, cfg.seed};
    save_checkpoint((fs::path(a.out) / "score.ckpt").string(), sk);
    sk.params = res.state.score_ema;
    save_checkpoint((fs::path(a.out) / "score_ema.ckpt").string(), sk);
  }

  nlohmann::ordered_json summary;
  summary["objective"] = cfg.objective;
  summary["seed"] = cfg.seed;
  summary["steps"] = res.state.step;
  for (const auto& [k, v] : res.final_metrics) summary["final_" + k] = v;
  if (loss_count > 0) {
    summary["mean_loss"] = loss_sum / static_cast<double>(loss_count);
    double tail = 0.0;
    for (double l : tail_losses) tail += l;
    summary["final_loss"] = tail / static_cast<double>(tail_losses.size());
  }
  summary["wall_time_s"] = res.wall_time_s;
  write_json(summary, (fs::path(a.out) / "summary.json").string());
  return 0;
}

// ---- estimate ---------------------------------------------------------------

struct EstimateArgs {
  double t = 0.5;
  double x = 0.0;
  std::size_t bank = 1000;
  std::uint64_t seed = 0;
  double sigma_s = 0.0;  // 0 = plain linear map
  double mu1 = 2.0, sigma1 = 3.0;
  bool convergence = false;
  std::size_t reps = 16;
  std::string out;
};

int run_estimate(const EstimateArgs& a) {
  Gaussian g0(0.0, 1.0), g1(a.mu1, a.sigma1);
  Density rho0 = g0, rho1 = g1;
  ConditionalMap map = a.sigma_s > 0.0 ? ConditionalMap::regularized_linear(a.sigma_s)
                                       : ConditionalMap::linear();
  const Vec x{a.x};
  const double exact = gauss_to_gauss_field(g0, g1, x, a.t)[0];

  if (!a.convergence) {
    CounterRng rng(a.seed);
    auto est = snis_target(x, a.t, draw_bank(rho1, a.bank, rng), map, rho0);
    nlohmann::ordered_json j;
    j["t"] = a.t;
    j["x"] = a.x;
    j["bank"] = a.bank;
    j["estimate"] = est.value[0];
    j["exact"] = exact;
    j["abs_error"] = std::abs(est.value[0] - exact);
    j["ess"] = est.ess;
    write_json(j, a.out);
    return 0;
  }

  const std::vector<std::size_t> sizes{100, 1000, 10000};
  Matrix table(sizes.size(), 2);
  for (std::size_t row = 0; row < sizes.size(); ++row) {
    double acc = 0.0;
    for (std::size_t r = 0; r < a.reps; ++r) {
      CounterRng rng(a.seed, row * 100000 + r);
      auto est = snis_target(x, a.t, draw_bank(rho1, sizes[row], rng), map, rho0);
      acc += sq(est.value[0] - exact);
    }
    table[row][0] = static_cast<double>(sizes[row]);
    table[row][1] = std::sqrt(acc / static_cast<double>(a.reps));
  }
  // least-squares slope in log-log; the Monte Carlo rate prediction is -1/2
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t r = 0; r < sizes.size(); ++r) {
    double lx = std::log(table[r][0]), ly = std::log(table[r][1]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double n = static_cast<double>(sizes.size());
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  write_csv(a.out, {"N", "rmse"}, table,
            {"loglog_slope = " + format_double(slope), "t = " + format_double(a.t),
             "x = " + format_double(a.x)});
  return 0;
}

// ---- dispersion ---------------------------------------------------------------

struct DispersionArgs {
  bool sweep = false;
  double t = 0.5;
  double mu = 2.0, sigma = 3.0, gamma = 1.0;
  std::size_t d = 1;
  std::size_t M = 20000;
  std::size_t N = 128;
  std::uint64_t seed = 0;
  std::string out;
};

int run_dispersion(const DispersionArgs& a) {
  DispersionSweepConfig cfg;
  cfg.pair = GaussPairParams{Vec(a.d, a.mu), Vec(a.d, a.sigma), a.gamma};
  cfg.M = a.M;
  cfg.N = a.N;
  cfg.seed = a.seed;
  if (!a.sweep) cfg.t_grid = Vec{a.t};
  SweepResult res = run_dispersion_sweep(cfg);
  write_sweep_csv(res, a.out);
  return 0;
}

// ---- metrics ------------------------------------------------------------------

struct MetricsArgs {
  std::string x, y;
  std::string checkpoint;
  bool with_nll = false;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  std::string out;
};

Matrix subsample_rows(const Matrix& m, std::size_t k, CounterRng& rng) {
  std::vector<std::size_t> idx(m.rows);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  Matrix out(k, m.cols);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t c = 0; c < m.cols; ++c) out[i][c] = m[idx[i]][c];
  return out;
}

int run_metrics(const MetricsArgs& a) {
  Matrix X = load_empirical_csv(a.x).points;
  Matrix Y = load_empirical_csv(a.y).points;
  nlohmann::ordered_json j;
  j["energy_distance"] = energy_distance(X, Y);
  // the exact transport metric needs equal counts; the larger set is
  // subsampled deterministically under --seed
  Matrix Xw = X, Yw = Y;
  if (X.rows != Y.rows) {
    std::size_t k = std::min(X.rows, Y.rows);
    CounterRng rng(a.seed, 0x77320);
    if (X.rows > k) Xw = subsample_rows(X, k, rng);
    if (Y.rows > k) Yw = subsample_rows(Y, k, rng);
  }
  j["w2"] = wasserstein2(Xw, Yw, a.seed);
  if (a.with_nll) {
    if (a.checkpoint.empty()) throw std::runtime_error("--nll needs --checkpoint");
    Checkpoint ck = load_checkpoint(a.checkpoint);
    j["nll"] = nll(mlp_field(ck.spec, ck.params), Y, a.tol);
  }
  write_json(j, a.out);
  return 0;
}

// ---- sample -------------------------------------------------------------------

struct SampleArgs {
  std::string from;
  std::size_t n = 1000;
  std::size_t steps = 100;
  std::string method = "euler";
  double tol = 1e-6;
  std::uint64_t seed = 0;
  std::string out;
};

int run_sample(const SampleArgs& a) {
  Checkpoint ck = load_checkpoint(a.from);
  const std::size_t d = ck.spec.output_dim;
  Density rho0 = standard_gaussian(d);

  Matrix pts(a.n, d);
  if (a.method == "euler") {
    pts = sample_from_model(ck.spec, ck.params, rho0, a.n, a.steps, a.seed);
  } else {
    OdeMethod method = a.method == "rk4" ? OdeMethod::rk4 : OdeMethod::adaptive;
    if (a.method != "rk4" && a.method != "adaptive")
      throw std::runtime_error("unknown method '" + a.method + "' (euler, rk4, adaptive)");
    VectorField f = mlp_field(ck.spec, ck.params);
    OdeOptions opts;
    opts.steps = a.steps;
    opts.tol = a.tol;
    CounterRng rng(a.seed);
    Matrix x0 = sample_matrix(rho0, a.n, rng);
    parallel_for(a.n, [&](std::size_t i) {
      auto path = integrate_ode(f, x0.row(i), 0.0, 1.0, method, opts);
      pts.set_row(i, path.terminal());
    });
  }
  std::vector<std::string> header(d);
  for (std::size_t c = 0; c < d; ++c) header[c] = "x" + std::to_string(c);
  write_csv(a.out, header, pts);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"explicit flow matching laboratory"};
  app.require_subcommand(1);

  FieldArgs fa;
  auto* field = app.add_subcommand("exact-field", "closed-form vector fields on a (t, x) grid");
  field->add_option("--case", fa.kase, "gauss | gm | sde | ot")->capture_default_str();
  field->add_option("--grid", fa.grid, "tlo:thi:nt,xlo:xhi:nx")->capture_default_str();
  field->add_option("--out", fa.out, "output CSV")->required();
  field->add_flag("--with-oracle", fa.with_oracle, "add a quadrature column (gauss, gm)");
  field->add_option("--mu0", fa.mu0)->capture_default_str();
  field->add_option("--sigma0", fa.sigma0)->capture_default_str();
  field->add_option("--mu1", fa.mu1)->capture_default_str();
  field->add_option("--sigma1", fa.sigma1)->capture_default_str();
  field->add_option("--sigma-e", fa.sigma_e)->capture_default_str();
  field->add_option("--sigma", fa.ot_sigma, "ot case scale")->capture_default_str();
  field->add_option("--gm-mu", fa.gm_mu, "gm case component offset")->capture_default_str();
  field->add_option("--gm-sigma", fa.gm_sigma, "gm case component scale")->capture_default_str();

  TrajArgs ta;
  auto* traj = app.add_subcommand("trajectories", "closed-form flow trajectories");
  traj->add_option("--case", ta.kase, "gauss | sde | ot")->capture_default_str();
  traj->add_option("--out", ta.out, "output CSV")->required();
  traj->add_option("--n", ta.n, "number of start points")->capture_default_str();
  traj->add_option("--steps", ta.steps, "time grid size")->capture_default_str();
  traj->add_option("--mu0", ta.mu0)->capture_default_str();
  traj->add_option("--sigma0", ta.sigma0)->capture_default_str();
  traj->add_option("--mu1", ta.mu1)->capture_default_str();
  traj->add_option("--sigma1", ta.sigma1)->capture_default_str();
  traj->add_option("--sigma-e", ta.sigma_e)->capture_default_str();
  traj->add_option("--sigma", ta.ot_sigma, "ot case scale")->capture_default_str();

  TrainArgs tra;
  auto* train = app.add_subcommand("train", "run a training experiment from a TOML config");
  train->add_option("--config", tra.config, "TOML config path")->required();
  train->add_option("--out", tra.out, "output directory")->required();
  train->add_option("--objective", tra.objective, "override objective.kind");
  train->add_option("--seed", tra.seed, "override run.seed");
  train->add_option("--steps", tra.steps, "override run.steps");

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "importance-sampling estimates of the exact field");
  est->add_option("--t", ea.t)->capture_default_str();
  est->add_option("--x", ea.x)->capture_default_str();
  est->add_option("--bank", ea.bank, "bank size N")->capture_default_str();
  est->add_option("--seed", ea.seed)->capture_default_str();
  est->add_option("--sigma-s", ea.sigma_s, "regularized map width (0 = linear)")
      ->capture_default_str();
  est->add_option("--mu1", ea.mu1)->capture_default_str();
  est->add_option("--sigma1", ea.sigma1)->capture_default_str();
  est->add_flag("--convergence", ea.convergence, "write an N vs RMSE table");
  est->add_option("--reps", ea.reps, "repeats per N in convergence mode")->capture_default_str();
  est->add_option("--out", ea.out, "output file (JSON, or CSV with --convergence)");

  DispersionArgs da;
  auto* disp = app.add_subcommand("dispersion", "CFM vs ExFM update dispersion");
  disp->add_flag("--sweep", da.sweep, "full t grid instead of a single --t");
  disp->add_option("--t", da.t)->capture_default_str();
  disp->add_option("--mu", da.mu)->capture_default_str();
  disp->add_option("--sigma", da.sigma)->capture_default_str();
  disp->add_option("--gamma", da.gamma)->capture_default_str();
  disp->add_option("--d", da.d, "dimension")->capture_default_str();
  disp->add_option("--M", da.M, "evaluation points")->capture_default_str();
  disp->add_option("--N", da.N, "bank size")->capture_default_str();
  disp->add_option("--seed", da.seed)->capture_default_str();
  disp->add_option("--out", da.out, "output CSV")->required();

  MetricsArgs ma;
  auto* met = app.add_subcommand("metrics", "two-sample metrics between CSV point sets");
  met->add_option("--x", ma.x, "first CSV")->required();
  met->add_option("--y", ma.y, "second CSV")->required();
  met->add_flag("--nll", ma.with_nll, "reverse-ODE NLL of --y under --checkpoint");
  met->add_option("--checkpoint", ma.checkpoint, "model checkpoint for --nll");
  met->add_option("--tol", ma.tol, "reverse-ODE tolerance")->capture_default_str();
  met->add_option("--seed", ma.seed)->capture_default_str();
  met->add_option("--out", ma.out, "output JSON (stdout when omitted)");

  SampleArgs sa;
  auto* smp = app.add_subcommand("sample", "draw samples by integrating a trained field");
  smp->add_option("--from", sa.from, "checkpoint path")->required();
  smp->add_option("--n", sa.n)->capture_default_str();
  smp->add_option("--steps", sa.steps)->capture_default_str();
  smp->add_option("--method", sa.method, "euler | rk4 | adaptive")->capture_default_str();
  smp->add_option("--tol", sa.tol, "adaptive tolerance")->capture_default_str();
  smp->add_option("--seed", sa.seed)->capture_default_str();
  smp->add_option("--out", sa.out, "output CSV")->required();

  try {
    app.parse(argc, argv);
    if (field->parsed()) return run_exact_field(fa);
    if (traj->parsed()) return run_trajectories(ta);
    if (train->parsed()) return run_train(tra);
    if (est->parsed()) return run_estimate(ea);
    if (disp->parsed()) return run_dispersion(da);
    if (met->parsed()) return run_metrics(ma);
    if (smp->parsed()) return run_sample(sa);
    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const numerical_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
