#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "popsize/data.hpp"
#include "popsize/state.hpp"

namespace popsize {

inline double logit(double p) {
  return std::log(p) - std::log1p(-p);
}

inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double normal_logpdf(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * r * r / var;
}

inline double inv_gamma_logpdf(double x, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - scale / x;
}

// log N(M_ijt ; log(pi_it R_it) + theta + delta_i + gamma_j, sigma2_eps/G)
inline double multiplier_loglik(const MultiplierRecord& rec,
                                const ParameterState& state, double R_it) {
  const double mean = std::log(state.pi_at(rec.city, rec.year) * R_it) +
                      state.theta + state.delta[rec.city] +
                      state.gamma[rec.subgroup];
  return normal_logpdf(rec.log_estimate, mean,
                       state.sigma2_eps / rec.sample_size);
}

// log N(log N_it ; log(pi_it R_it) - theta, v_it). The NSUM bias is -theta
// by the identifiability constraint.
inline double nsum_loglik(const NsumRecord& rec, const ParameterState& state,
                          double R_it) {
  const double mean =
      std::log(state.pi_at(rec.city, rec.year) * R_it) + state.nsum_bias();
  return normal_logpdf(std::log(rec.estimate), mean, rec.log_variance);
}

// Random-walk layer on the logit scale: the initial-year normals plus the
// drift transitions. Normal kernels only; the change-of-variables term for
// the pi parameterization lives in logit_jacobian().
inline double dynamic_logprior(const ParameterState& state) {
  double total = 0;
  const int T = state.n_years - 1;
  for (int i = 0; i < state.n_cities; ++i) {
    total += normal_logpdf(logit(state.pi_at(i, 0)), state.mu0, state.sigma2_0);
    for (int t = 1; t <= T; ++t) {
      total += normal_logpdf(logit(state.pi_at(i, t)),
                             logit(state.pi_at(i, t - 1)) + state.phi_at(t),
                             state.sigma2_pi);
    }
  }
  return total;
}

// d logit(pi) / d pi = 1/(pi (1-pi)); makes exp(log_joint) a density over
// the stored pi values rather than over their logits.
inline double logit_jacobian(const ParameterState& state) {
  double total = 0;
  for (double p : state.pi) total -= std::log(p) + std::log1p(-p);
  return total;
}

inline double hyperprior_logdensity(const ParameterState& state,
                                    const PriorConfig& priors) {
  double total = normal_logpdf(state.theta, 0.0, priors.theta_prior_var) +
                 normal_logpdf(state.mu0, 0.0, priors.mu0_prior_var);
  for (double d : state.delta)
    total += normal_logpdf(d, 0.0, state.sigma2_delta);
  for (double g : state.gamma)
    total += normal_logpdf(g, 0.0, state.sigma2_gamma);
  for (double f : state.phi) total += normal_logpdf(f, 0.0, state.sigma2_phi);
  total += inv_gamma_logpdf(state.sigma2_pi, priors.sigma2_pi.shape,
                            priors.sigma2_pi.scale);
  total += inv_gamma_logpdf(state.sigma2_phi, priors.sigma2_phi.shape,
                            priors.sigma2_phi.scale);
  total += inv_gamma_logpdf(state.sigma2_gamma, priors.sigma2_gamma.shape,
                            priors.sigma2_gamma.scale);
  total += inv_gamma_logpdf(state.sigma2_delta, priors.sigma2_delta.shape,
                            priors.sigma2_delta.scale);
  total += inv_gamma_logpdf(state.sigma2_eps, priors.sigma2_eps.shape,
                            priors.sigma2_eps.scale);
  total += inv_gamma_logpdf(state.sigma2_0, priors.sigma2_0.shape,
                            priors.sigma2_0.scale);
  return total;
}

// Joint log density over (pi, mu0, theta, delta, gamma, phi, variances).
// Returns -inf for any pi outside (0,1), which is what the MH step leans on.
inline double log_joint_density(const ParameterState& state,
                                const ObservedDataset& data,
                                const PriorConfig& priors) {
  for (double p : state.pi)
    if (!(p > 0) || !(p < 1))
      return -std::numeric_limits<double>::infinity();

  double total = 0;
  for (const auto& rec : data.multiplier_records)
    total += multiplier_loglik(rec, state, data.reference(rec.city, rec.year));
  for (const auto& rec : data.nsum_records)
    total += nsum_loglik(rec, state, data.reference(rec.city, rec.year));
  total += dynamic_logprior(state);
  total += logit_jacobian(state);
  total += hyperprior_logdensity(state, priors);
  return total;
}

}  // namespace popsize
