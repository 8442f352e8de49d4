#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "popsize/data.hpp"
#include "popsize/density.hpp"
#include "popsize/rng.hpp"
#include "popsize/state.hpp"

namespace popsize {

enum class InitMode { PriorDraw, DataInformed };

struct SamplerConfig {
  long n_iter = 50000;
  long burn_in = 10000;
  long thin = 10;
  double proposal_sd = 0.4;
  std::uint64_t seed = 1;
  int n_chains = 4;
  InitMode init_mode = InitMode::DataInformed;

  void validate() const {
    if (n_iter < 1 || burn_in < 0 || burn_in >= n_iter)
      throw std::invalid_argument("require 0 <= burn_in < n_iter");
    if (thin < 1) throw std::invalid_argument("thin must be >= 1");
    if (!(proposal_sd > 0))
      throw std::invalid_argument("proposal_sd must be positive");
    if (n_chains < 1) throw std::invalid_argument("n_chains must be >= 1");
  }

  long retained_per_chain() const { return (n_iter - burn_in) / thin; }
};

struct Chain {
  std::vector<ParameterState> draws;
  std::vector<double> pi_accept_rate;  // per (i,t), row-major
};

struct PosteriorSamples {
  int n_cities = 0;
  int n_subgroups = 0;
  int n_years = 0;
  std::vector<Chain> chains;

  long total_draws() const {
    long n = 0;
    for (const auto& c : chains) n += static_cast<long>(c.draws.size());
    return n;
  }
};

// ---------------------------------------------------------------------------
// Initialization

inline ParameterState init_state(const ObservedDataset& data,
                                 const PriorConfig& priors,
                                 const SamplerConfig& config, Rng& rng) {
  const int I = data.n_cities();
  const int J = data.n_subgroups();
  const int ny = data.n_years();
  const int T = ny - 1;
  ParameterState s = ParameterState::zeros(I, J, ny);

  InitMode mode = config.init_mode;
  if (mode == InitMode::DataInformed && data.multiplier_records.empty() &&
      data.nsum_records.empty())
    mode = InitMode::PriorDraw;

  if (mode == InitMode::PriorDraw) {
    s.sigma2_pi = rng.inv_gamma(priors.sigma2_pi.shape, priors.sigma2_pi.scale);
    s.sigma2_phi =
        rng.inv_gamma(priors.sigma2_phi.shape, priors.sigma2_phi.scale);
    s.sigma2_gamma =
        rng.inv_gamma(priors.sigma2_gamma.shape, priors.sigma2_gamma.scale);
    s.sigma2_delta =
        rng.inv_gamma(priors.sigma2_delta.shape, priors.sigma2_delta.scale);
    s.sigma2_eps =
        rng.inv_gamma(priors.sigma2_eps.shape, priors.sigma2_eps.scale);
    s.sigma2_0 = rng.inv_gamma(priors.sigma2_0.shape, priors.sigma2_0.scale);
    s.mu0 = rng.normal(0.0, std::sqrt(priors.mu0_prior_var));
    s.theta = rng.normal(0.0, std::sqrt(priors.theta_prior_var));
    for (auto& d : s.delta) d = rng.normal(0.0, std::sqrt(s.sigma2_delta));
    for (auto& g : s.gamma) g = rng.normal(0.0, std::sqrt(s.sigma2_gamma));
    for (auto& f : s.phi) f = rng.normal(0.0, std::sqrt(s.sigma2_phi));
    // clamp logits so pi stays strictly inside (0,1) in double precision
    auto clamp_logit = [](double x) { return std::clamp(x, -30.0, 30.0); };
    for (int i = 0; i < I; ++i) {
      double x = clamp_logit(rng.normal(s.mu0, std::sqrt(s.sigma2_0)));
      s.pi_at(i, 0) = inv_logit(x);
      for (int t = 1; t <= T; ++t) {
        x = clamp_logit(x + s.phi_at(t) +
                        rng.normal(0.0, std::sqrt(s.sigma2_pi)));
        s.pi_at(i, t) = inv_logit(x);
      }
    }
  } else {
    // crude pooled prevalence: median of per-record raw estimates / R
    std::vector<double> prevs;
    for (const auto& r : data.multiplier_records)
      prevs.push_back((r.count / r.proportion) /
                      data.reference(r.city, r.year));
    for (const auto& r : data.nsum_records)
      prevs.push_back(r.estimate / data.reference(r.city, r.year));
    std::sort(prevs.begin(), prevs.end());
    double med = prevs[prevs.size() / 2];
    if (prevs.size() % 2 == 0)
      med = 0.5 * (med + prevs[prevs.size() / 2 - 1]);
    med = std::clamp(med, 1e-4, 0.5);
    for (auto& p : s.pi) p = med;
    s.mu0 = logit(med);
    s.sigma2_pi = s.sigma2_phi = s.sigma2_gamma = s.sigma2_delta = 0.25;
    s.sigma2_0 = 0.25;
    s.sigma2_eps = 200.0;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Conjugate Gibbs draws (Appendix-style full conditionals, generalized to
// the configured prior shapes/scales)

inline double draw_mu0(const ParameterState& state, const PriorConfig& priors,
                       Rng& rng) {
  double sum = 0;
  for (int i = 0; i < state.n_cities; ++i) sum += logit(state.pi_at(i, 0));
  const double prec = 1.0 / priors.mu0_prior_var +
                      state.n_cities / state.sigma2_0;
  const double var = 1.0 / prec;
  const double mean = var * sum / state.sigma2_0;
  return rng.normal(mean, std::sqrt(var));
}

// The NSUM residual enters with a negative sign because the NSUM mean is
// log(n_it) - theta.
inline double draw_theta(const ObservedDataset& data,
                         const ParameterState& state,
                         const PriorConfig& priors, Rng& rng) {
  double prec = 1.0 / priors.theta_prior_var;
  double wsum = 0;
  for (const auto& r : data.nsum_records) {
    const double log_n = std::log(state.pi_at(r.city, r.year) *
                                  data.reference(r.city, r.year));
    prec += 1.0 / r.log_variance;
    wsum += -(std::log(r.estimate) - log_n) / r.log_variance;
  }
  for (const auto& r : data.multiplier_records) {
    const double log_n = std::log(state.pi_at(r.city, r.year) *
                                  data.reference(r.city, r.year));
    const double w = r.sample_size / state.sigma2_eps;
    prec += w;
    wsum += w * (r.log_estimate - log_n - state.delta[r.city] -
                 state.gamma[r.subgroup]);
  }
  const double var = 1.0 / prec;
  return rng.normal(var * wsum, std::sqrt(var));
}

inline double draw_delta(int i, const ObservedDataset& data,
                         const ParameterState& state, Rng& rng) {
  double prec = 1.0 / state.sigma2_delta;
  double wsum = 0;
  for (int k : data.multiplier_for_city(i)) {
    const auto& r = data.multiplier_records[k];
    const double log_n = std::log(state.pi_at(r.city, r.year) *
                                  data.reference(r.city, r.year));
    const double w = r.sample_size / state.sigma2_eps;
    prec += w;
    wsum += w * (r.log_estimate - log_n - state.theta -
                 state.gamma[r.subgroup]);
  }
  const double var = 1.0 / prec;
  return rng.normal(var * wsum, std::sqrt(var));
}

inline double draw_gamma(int j, const ObservedDataset& data,
                         const ParameterState& state, Rng& rng) {
  double prec = 1.0 / state.sigma2_gamma;
  double wsum = 0;
  for (int k : data.multiplier_for_subgroup(j)) {
    const auto& r = data.multiplier_records[k];
    const double log_n = std::log(state.pi_at(r.city, r.year) *
                                  data.reference(r.city, r.year));
    const double w = r.sample_size / state.sigma2_eps;
    prec += w;
    wsum +=
        w * (r.log_estimate - log_n - state.theta - state.delta[r.city]);
  }
  const double var = 1.0 / prec;
  return rng.normal(var * wsum, std::sqrt(var));
}

inline double draw_phi(int t, const ParameterState& state, Rng& rng) {
  double sum = 0;
  for (int i = 0; i < state.n_cities; ++i)
    sum += logit(state.pi_at(i, t)) - logit(state.pi_at(i, t - 1));
  const double prec = 1.0 / state.sigma2_phi +
                      state.n_cities / state.sigma2_pi;
  const double var = 1.0 / prec;
  return rng.normal(var * sum / state.sigma2_pi, std::sqrt(var));
}

inline double draw_sigma2_pi(const ParameterState& state,
                             const PriorConfig& priors, Rng& rng) {
  const int T = state.n_years - 1;
  double ss = 0;
  for (int i = 0; i < state.n_cities; ++i)
    for (int t = 1; t <= T; ++t) {
      const double r = logit(state.pi_at(i, t)) -
                       logit(state.pi_at(i, t - 1)) - state.phi_at(t);
      ss += r * r;
    }
  return rng.inv_gamma(priors.sigma2_pi.shape + 0.5 * state.n_cities * T,
                       priors.sigma2_pi.scale + 0.5 * ss);
}

inline double draw_sigma2_phi(const ParameterState& state,
                              const PriorConfig& priors, Rng& rng) {
  double ss = 0;
  for (double f : state.phi) ss += f * f;
  return rng.inv_gamma(priors.sigma2_phi.shape + 0.5 * state.phi.size(),
                       priors.sigma2_phi.scale + 0.5 * ss);
}

inline double draw_sigma2_gamma(const ParameterState& state,
                                const PriorConfig& priors, Rng& rng) {
  double ss = 0;
  for (double g : state.gamma) ss += g * g;
  return rng.inv_gamma(priors.sigma2_gamma.shape + 0.5 * state.gamma.size(),
                       priors.sigma2_gamma.scale + 0.5 * ss);
}

inline double draw_sigma2_delta(const ParameterState& state,
                                const PriorConfig& priors, Rng& rng) {
  double ss = 0;
  for (double d : state.delta) ss += d * d;
  return rng.inv_gamma(priors.sigma2_delta.shape + 0.5 * state.delta.size(),
                       priors.sigma2_delta.scale + 0.5 * ss);
}

inline double draw_sigma2_eps(const ObservedDataset& data,
                              const ParameterState& state,
                              const PriorConfig& priors, Rng& rng) {
  // each record is one observation with variance sigma2_eps / G, so the
  // shape grows by half the record count while G only scales the residual
  double ss = 0;
  for (const auto& r : data.multiplier_records) {
    const double log_n = std::log(state.pi_at(r.city, r.year) *
                                  data.reference(r.city, r.year));
    const double resid = r.log_estimate - log_n - state.theta -
                         state.delta[r.city] - state.gamma[r.subgroup];
    ss += r.sample_size * resid * resid;
  }
  return rng.inv_gamma(
      priors.sigma2_eps.shape + 0.5 * data.multiplier_records.size(),
      priors.sigma2_eps.scale + 0.5 * ss);
}

inline double draw_sigma2_0(const ParameterState& state,
                            const PriorConfig& priors, Rng& rng) {
  double ss = 0;
  for (int i = 0; i < state.n_cities; ++i) {
    const double r = logit(state.pi_at(i, 0)) - state.mu0;
    ss += r * r;
  }
  return rng.inv_gamma(priors.sigma2_0.shape + 0.5 * state.n_cities,
                       priors.sigma2_0.scale + 0.5 * ss);
}

// ---------------------------------------------------------------------------
// Metropolis update for a single prevalence

// All joint factors containing pi_it, as a function of a candidate value.
// Includes the measure term so that exp() is a density over pi itself.
inline double pi_local_logdensity(int i, int t, double value,
                                  const ObservedDataset& data,
                                  const ParameterState& state) {
  const int T = state.n_years - 1;
  const double x = logit(value);
  double total = -std::log(value) - std::log1p(-value);
  if (t == 0)
    total += normal_logpdf(x, state.mu0, state.sigma2_0);
  else
    total += normal_logpdf(x, logit(state.pi_at(i, t - 1)) + state.phi_at(t),
                           state.sigma2_pi);
  if (t < T)
    total += normal_logpdf(logit(state.pi_at(i, t + 1)), x + state.phi_at(t + 1),
                           state.sigma2_pi);

  const double log_n = std::log(value * data.reference(i, t));
  for (int k : data.multiplier_at(i, t)) {
    const auto& r = data.multiplier_records[k];
    total += normal_logpdf(
        r.log_estimate,
        log_n + state.theta + state.delta[i] + state.gamma[r.subgroup],
        state.sigma2_eps / r.sample_size);
  }
  const int kn = data.nsum_at(i, t);
  if (kn >= 0) {
    const auto& r = data.nsum_records[kn];
    total += normal_logpdf(std::log(r.estimate), log_n + state.nsum_bias(),
                           r.log_variance);
  }
  return total;
}

// Random-walk proposal on log(pi); the Hastings factor for the
// multiplicative proposal is pi'/pi. Proposals at or above 1 (or that
// underflow to 0) are rejected outright.
inline std::pair<double, bool> mh_update_pi(int i, int t,
                                            const ObservedDataset& data,
                                            const ParameterState& state,
                                            const SamplerConfig& config,
                                            Rng& rng) {
  const double cur = state.pi_at(i, t);
  const double log_cur = std::log(cur);
  const double log_prop = log_cur + rng.normal(0.0, config.proposal_sd);
  const double prop = std::exp(log_prop);
  if (!(prop > 0) || prop >= 1.0) return {cur, false};

  const double log_alpha = pi_local_logdensity(i, t, prop, data, state) -
                           pi_local_logdensity(i, t, cur, data, state) +
                           (log_prop - log_cur);
  if (log_alpha >= 0 || std::log(rng.uniform()) < log_alpha)
    return {prop, true};
  return {cur, false};
}

// ---------------------------------------------------------------------------
// Sweep and chain orchestration

// One full scan in fixed order: all pi (MH), then the location parameters,
// then the six variances. accept_count, when given, is incremented per
// accepted pi update, row-major by (i,t).
inline void sweep(ParameterState& state, const ObservedDataset& data,
                  const PriorConfig& priors, const SamplerConfig& config,
                  Rng& rng, std::vector<long>* accept_count = nullptr) {
  const int I = state.n_cities;
  const int ny = state.n_years;
  for (int i = 0; i < I; ++i)
    for (int t = 0; t < ny; ++t) {
      auto [value, accepted] = mh_update_pi(i, t, data, state, config, rng);
      state.pi_at(i, t) = value;
      if (accepted && accept_count)
        ++(*accept_count)[static_cast<std::size_t>(i) * ny + t];
    }
  state.mu0 = draw_mu0(state, priors, rng);
  state.theta = draw_theta(data, state, priors, rng);
  for (int i = 0; i < I; ++i) state.delta[i] = draw_delta(i, data, state, rng);
  for (std::size_t j = 0; j < state.gamma.size(); ++j)
    state.gamma[j] = draw_gamma(static_cast<int>(j), data, state, rng);
  for (int t = 1; t < ny; ++t) state.phi[t - 1] = draw_phi(t, state, rng);
  state.sigma2_pi = draw_sigma2_pi(state, priors, rng);
  state.sigma2_phi = draw_sigma2_phi(state, priors, rng);
  state.sigma2_gamma = draw_sigma2_gamma(state, priors, rng);
  state.sigma2_delta = draw_sigma2_delta(state, priors, rng);
  state.sigma2_eps = draw_sigma2_eps(data, state, priors, rng);
  state.sigma2_0 = draw_sigma2_0(state, priors, rng);
}

inline Chain run_single_chain(const ObservedDataset& data,
                              const PriorConfig& priors,
                              const SamplerConfig& config,
                              std::uint64_t chain_seed) {
  Rng rng(chain_seed);
  ParameterState state = init_state(data, priors, config, rng);
  Chain chain;
  chain.draws.reserve(config.retained_per_chain());
  std::vector<long> accepted(state.pi.size(), 0);
  for (long m = 1; m <= config.n_iter; ++m) {
    sweep(state, data, priors, config, rng, &accepted);
    const long k = m - config.burn_in;
    if (k >= 1 && k % config.thin == 0) chain.draws.push_back(state);
  }
  chain.pi_accept_rate.resize(accepted.size());
  for (std::size_t c = 0; c < accepted.size(); ++c)
    chain.pi_accept_rate[c] =
        static_cast<double>(accepted[c]) / static_cast<double>(config.n_iter);
  return chain;
}

// Runs n_chains independent chains with deterministically derived seeds.
inline PosteriorSamples run_chain(const ObservedDataset& data,
                                  const PriorConfig& priors,
                                  const SamplerConfig& config) {
  if (!data.finalized())
    throw std::invalid_argument("dataset must be finalized before sampling");
  config.validate();
  priors.validate();

  PosteriorSamples out;
  out.n_cities = data.n_cities();
  out.n_subgroups = data.n_subgroups();
  out.n_years = data.n_years();
  out.chains.resize(config.n_chains);

  std::vector<std::thread> workers;
  for (int c = 0; c < config.n_chains; ++c)
    workers.emplace_back([&, c] {
      out.chains[c] =
          run_single_chain(data, priors, config, derive_seed(config.seed, c));
    });
  for (auto& w : workers) w.join();
  return out;
}

}  // namespace popsize
