#pragma once

#include "core.hpp"
#include "densities.hpp"
#include "flow_maps.hpp"

namespace exfm {

// Logit spread beyond which exp() underflows to an exact one-hot anyway.
inline constexpr double kLogitSpreadLimit = 700.0;

// Bank of candidate target samples; when has_paired is set, row 0 is the draw
// that generated the query point and must stay in the bank.
struct TargetBank {
  Matrix samples;
  bool has_paired = false;

  std::size_t size() const { return samples.rows; }
  std::size_t dim() const { return samples.cols; }
};

inline TargetBank draw_bank(const Density& rho1, std::size_t n, CounterRng& rng) {
  return {sample_matrix(rho1, n, rng), false};
}

// Max-shifted softmax. A spread above kLogitSpreadLimit collapses to the exact
// one-hot limit; all-(-inf) logits are an error.
inline Vec softmax(const Vec& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  double mx = -std::numeric_limits<double>::infinity();
  double second = mx;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (std::isnan(logits[i])) throw numerical_error("softmax: NaN logit");
    if (logits[i] > mx) {
      second = mx;
      mx = logits[i];
      arg = i;
    } else {
      second = std::max(second, logits[i]);
    }
  }
  if (!std::isfinite(mx)) throw numerical_error("softmax: all logits are -inf");
  Vec w(logits.size(), 0.0);
  if (second < mx - kLogitSpreadLimit) {
    // everything else underflows against the max: the exact limit is one-hot
    w[arg] = 1.0;
    return w;
  }
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(logits[i] - mx);
    z += w[i];
  }
  for (auto& v : w) v /= z;
  return w;
}

inline double effective_sample_size(const Vec& weights) {
  double s2 = 0.0;
  for (double w : weights) s2 += w * w;
  return 1.0 / s2;
}

struct FieldEstimate {
  Vec value;
  Vec log_weights;
  double ess = 0.0;
};

// Self-normalized importance estimate of the marginal velocity at (x, t):
// softmax of the conditional log weights over the bank, applied to the
// conditional velocities.
inline FieldEstimate snis_target(const Vec& x, double t, const TargetBank& bank,
                                 const ConditionalMap& map, const Density& rho0) {
  if (bank.size() == 0) throw std::invalid_argument("snis_target: empty bank");
  if (bank.dim() != x.size()) throw std::invalid_argument("snis_target: dimension mismatch");
  FieldEstimate est;
  est.log_weights.resize(bank.size());
  for (std::size_t k = 0; k < bank.size(); ++k)
    est.log_weights[k] = conditional_log_weight(map, t, x, bank.samples.row(k), rho0);
  Vec w = softmax(est.log_weights);
  est.ess = effective_sample_size(w);
  est.value.assign(x.size(), 0.0);
  for (std::size_t k = 0; k < bank.size(); ++k) {
    if (w[k] == 0.0) continue;
    Vec vel = conditional_velocity(map, t, bank.samples.row(k), x);
    for (std::size_t i = 0; i < x.size(); ++i) est.value[i] += w[k] * vel[i];
  }
  return est;
}

inline FieldEstimate snis_target_regularized(const Vec& x, double t, const TargetBank& bank,
                                             double sigma_s, const Density& rho0) {
  return snis_target(x, t, bank, ConditionalMap::regularized_linear(sigma_s), rho0);
}

struct RejectionEstimate {
  Vec value;
  std::size_t accepted = 0;
  double log_envelope = 0.0;  // log C
};

// Envelope log C = sup over x1 of the transition weight: the mode density of rho0
// (for mixtures, the safe bound sum_c w_c * mode_c).
inline double log_weight_envelope(const Density& rho0) {
  if (const auto* g = std::get_if<Gaussian>(&rho0)) return log_density(*g, g->mean);
  const auto& m = std::get<GaussianMixture>(rho0);
  double acc = 0.0;
  for (std::size_t c = 0; c < m.weights.size(); ++c)
    acc += m.weights[c] * std::exp(log_density(m.components[c], m.components[c].mean));
  return std::log(acc);
}

// Rejection alternative to the softmax weighting: keep bank entry k when
// weight(k) >= C * xi_k, then average the conditional velocities of the kept
// entries without weights. The paired row (index 0) is admitted unconditionally
// by default so the accepted set cannot come back empty.
inline RejectionEstimate rejection_target(const Vec& x, double t, const TargetBank& bank,
                                          const ConditionalMap& map, const Density& rho0,
                                          CounterRng& rng, bool admit_paired = true) {
  if (bank.size() == 0) throw std::invalid_argument("rejection_target: empty bank");
  RejectionEstimate est;
  est.log_envelope = log_weight_envelope(rho0);
  est.value.assign(x.size(), 0.0);
  for (std::size_t k = 0; k < bank.size(); ++k) {
    double lw = conditional_log_weight(map, t, x, bank.samples.row(k), rho0);
    bool keep;
    if (k == 0 && bank.has_paired && admit_paired) {
      rng.uniform();  // keep the draw sequence aligned with the tested entries
      keep = true;
    } else {
      keep = lw >= est.log_envelope + std::log(rng.uniform_pos());
    }
    if (!keep) continue;
    ++est.accepted;
    Vec vel = conditional_velocity(map, t, bank.samples.row(k), x);
    for (std::size_t i = 0; i < x.size(); ++i) est.value[i] += vel[i];
  }
  if (est.accepted == 0)
    throw numerical_error("rejection_target: empty acceptance set (paired sample excluded)");
  for (auto& v : est.value) v /= static_cast<double>(est.accepted);
  return est;
}

struct PairTargets {
  Vec field;
  Vec score;
  double ess = 0.0;
};

// Double-sum estimator over source x target banks for the diffusion-path
// objective: softmax over pair transition densities of the pair velocity and the
// pair score.
inline PairTargets sde_pair_targets(const Vec& x, double t, const Matrix& source_bank,
                                    const Matrix& target_bank, double sigma_e) {
  if (!(t > 0.0 && t < 1.0))
    throw std::invalid_argument("sde_pair_targets: t must lie in (0, 1)");
  if (source_bank.rows == 0 || target_bank.rows == 0)
    throw std::invalid_argument("sde_pair_targets: empty bank");
  if (source_bank.cols != x.size() || target_bank.cols != x.size())
    throw std::invalid_argument("sde_pair_targets: dimension mismatch");
  const std::size_t n0 = source_bank.rows, n1 = target_bank.rows, d = x.size();
  const double var = sq(sigma_e) * t * (1.0 - t);
  const double vel_coef = (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t));

  Vec logits(n0 * n1);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n0; ++i) {
    const double* x0 = source_bank[i];
    for (std::size_t j = 0; j < n1; ++j) {
      const double* x1 = target_bank[j];
      double q = 0.0;
      for (std::size_t c = 0; c < d; ++c)
        q += sq(x[c] - (1.0 - t) * x0[c] - t * x1[c]);
      double l = -0.5 * q / var;
      logits[i * n1 + j] = l;
      mx = std::max(mx, l);
    }
  }
  if (!std::isfinite(mx)) throw numerical_error("sde_pair_targets: all weights underflow");

  PairTargets out;
  out.field.assign(d, 0.0);
  out.score.assign(d, 0.0);
  double z = 0.0, z2 = 0.0;
  for (std::size_t i = 0; i < n0; ++i) {
    const double* x0 = source_bank[i];
    for (std::size_t j = 0; j < n1; ++j) {
      double w = std::exp(logits[i * n1 + j] - mx);
      if (w == 0.0) continue;
      z += w;
      z2 += w * w;
      const double* x1 = target_bank[j];
      for (std::size_t c = 0; c < d; ++c) {
        double mean = (1.0 - t) * x0[c] + t * x1[c];
        out.field[c] += w * (vel_coef * (x[c] - mean) + (x1[c] - x0[c]));
        out.score[c] += w * ((mean - x[c]) / var);
      }
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    out.field[c] /= z;
    out.score[c] /= z;
  }
  out.ess = z * z / z2;
  return out;
}

}  // namespace exfm
