#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "popsize/data.hpp"
#include "popsize/sampler.hpp"

namespace popsize {

// Linear interpolation between order statistics (type-7): h = (n-1)p.
inline double quantile_type7(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 0) throw std::invalid_argument("quantile of empty sample");
  if (n == 1) return sorted[0];
  const double h = (n - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = h - lo;
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct ScalarSummary {
  std::string name;
  double mean = 0;
  double sd = 0;
  double q2_5 = 0;
  double q50 = 0;
  double q97_5 = 0;
  double rhat = 1;
  double ess = 0;
};

struct CellSummary {
  int city = 0;
  int year = 0;  // zero-based index
  double mean = 0;
  double sd = 0;
  double q2_5 = 0;
  double q50 = 0;
  double q97_5 = 0;
};

struct PosteriorSummary {
  std::vector<ScalarSummary> scalars;  // mu0, theta, delta, gamma, phi, variances
  std::vector<CellSummary> prevalence;  // pi_it
  std::vector<CellSummary> size;        // n_it = pi_it * R_it
  int n_cities = 0;
  int n_years = 0;

  const ScalarSummary& scalar(const std::string& name) const {
    for (const auto& s : scalars)
      if (s.name == name) return s;
    throw std::out_of_range("no such scalar summary: " + name);
  }
  const CellSummary& prevalence_at(int i, int t) const {
    return prevalence[static_cast<std::size_t>(i) * n_years + t];
  }
  const CellSummary& size_at(int i, int t) const {
    return size[static_cast<std::size_t>(i) * n_years + t];
  }
};

namespace detail {

inline void mean_sd(const std::vector<double>& x, double& mean, double& sd) {
  double s = 0;
  for (double v : x) s += v;
  mean = s / x.size();
  double ss = 0;
  for (double v : x) ss += (v - mean) * (v - mean);
  sd = x.size() > 1 ? std::sqrt(ss / (x.size() - 1)) : 0.0;
}

// Splits each chain in half and returns the resulting sequences, truncated
// to a common even length.
inline std::vector<std::vector<double>> split_halves(
    const std::vector<std::vector<double>>& chains) {
  std::size_t len = chains.empty() ? 0 : chains[0].size();
  for (const auto& c : chains) len = std::min(len, c.size());
  len -= len % 2;
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    halves.emplace_back(c.begin(), c.begin() + len / 2);
    halves.emplace_back(c.begin() + len / 2, c.begin() + len);
  }
  return halves;
}

}  // namespace detail

// Split R-hat over one or more chains of equal length.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  auto seqs = detail::split_halves(chains);
  const std::size_t m = seqs.size();
  const std::size_t n = seqs.empty() ? 0 : seqs[0].size();
  if (m < 2 || n < 2) return 1.0;

  std::vector<double> means(m);
  double w = 0;
  for (std::size_t k = 0; k < m; ++k) {
    double sd;
    detail::mean_sd(seqs[k], means[k], sd);
    w += sd * sd;
  }
  w /= m;
  double grand, msd;
  detail::mean_sd(means, grand, msd);
  const double b = n * msd * msd;  // between-sequence variance * n
  if (w == 0) return 1.0;          // constant chains
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

// Effective sample size across split chains (variogram estimator, paired
// truncation of the autocorrelation sum).
inline double effective_sample_size(
    const std::vector<std::vector<double>>& chains) {
  auto seqs = detail::split_halves(chains);
  const std::size_t m = seqs.size();
  const std::size_t n = seqs.empty() ? 0 : seqs[0].size();
  if (m < 1 || n < 4) return static_cast<double>(m * n);

  std::vector<double> means(m);
  double w = 0;
  for (std::size_t k = 0; k < m; ++k) {
    double sd;
    detail::mean_sd(seqs[k], means[k], sd);
    w += sd * sd;
  }
  w /= m;
  double grand, msd;
  detail::mean_sd(means, grand, msd);
  const double var_plus = (n - 1.0) / n * w + msd * msd;
  if (var_plus == 0) return static_cast<double>(m * n);

  double rho_sum = 0;
  double prev_pair = 0;
  for (std::size_t t = 1; t + 1 < n; t += 2) {
    double pair = 0;
    for (std::size_t lag : {t, t + 1}) {
      double acov = 0;
      for (const auto& s : seqs)
        for (std::size_t k = 0; k + lag < n; ++k)
          acov += (s[k] - grand) * (s[k + lag] - grand);
      acov /= m * (n - lag);
      pair += 1.0 - (w - acov) / var_plus;
    }
    if (t > 1 && pair < 0) break;
    if (t > 1) pair = std::min(pair, prev_pair);  // monotone damping
    rho_sum += pair;
    prev_pair = pair;
  }
  const double ess = m * n / (1.0 + 2.0 * rho_sum);
  return std::clamp(ess, 1.0, static_cast<double>(m * n));
}

namespace detail {

inline ScalarSummary summarize_scalar(
    const std::string& name, const std::vector<std::vector<double>>& chains) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  ScalarSummary s;
  s.name = name;
  mean_sd(all, s.mean, s.sd);
  std::sort(all.begin(), all.end());
  s.q2_5 = quantile_type7(all, 0.025);
  s.q50 = quantile_type7(all, 0.50);
  s.q97_5 = quantile_type7(all, 0.975);
  s.rhat = split_rhat(chains);
  s.ess = effective_sample_size(chains);
  return s;
}

}  // namespace detail

inline PosteriorSummary summarize(const PosteriorSamples& samples,
                                  const ObservedDataset& data) {
  for (const auto& c : samples.chains)
    if (c.draws.size() < 2)
      throw std::invalid_argument("need at least 2 retained draws per chain");

  PosteriorSummary out;
  out.n_cities = samples.n_cities;
  out.n_years = samples.n_years;

  auto extract = [&](const std::function<double(const ParameterState&)>& f) {
    std::vector<std::vector<double>> chains;
    for (const auto& c : samples.chains) {
      std::vector<double> vals;
      vals.reserve(c.draws.size());
      for (const auto& d : c.draws) vals.push_back(f(d));
      chains.push_back(std::move(vals));
    }
    return chains;
  };

  auto add = [&](const std::string& name,
                 const std::function<double(const ParameterState&)>& f) {
    out.scalars.push_back(detail::summarize_scalar(name, extract(f)));
  };

  add("mu0", [](const ParameterState& s) { return s.mu0; });
  add("theta", [](const ParameterState& s) { return s.theta; });
  for (int i = 0; i < samples.n_cities; ++i)
    add("delta[" + std::to_string(i) + "]",
        [i](const ParameterState& s) { return s.delta[i]; });
  for (int j = 0; j < samples.n_subgroups; ++j)
    add("gamma[" + std::to_string(j) + "]",
        [j](const ParameterState& s) { return s.gamma[j]; });
  for (int t = 1; t < samples.n_years; ++t)
    add("phi[" + std::to_string(t) + "]",
        [t](const ParameterState& s) { return s.phi_at(t); });
  add("sigma2_pi", [](const ParameterState& s) { return s.sigma2_pi; });
  add("sigma2_phi", [](const ParameterState& s) { return s.sigma2_phi; });
  add("sigma2_gamma", [](const ParameterState& s) { return s.sigma2_gamma; });
  add("sigma2_delta", [](const ParameterState& s) { return s.sigma2_delta; });
  add("sigma2_eps", [](const ParameterState& s) { return s.sigma2_eps; });
  add("sigma2_0", [](const ParameterState& s) { return s.sigma2_0; });

  for (int i = 0; i < samples.n_cities; ++i)
    for (int t = 0; t < samples.n_years; ++t) {
      std::vector<double> pis;
      for (const auto& c : samples.chains)
        for (const auto& d : c.draws) pis.push_back(d.pi_at(i, t));
      const double R = data.reference(i, t);

      CellSummary pc, nc;
      pc.city = nc.city = i;
      pc.year = nc.year = t;
      detail::mean_sd(pis, pc.mean, pc.sd);
      nc.mean = pc.mean * R;
      nc.sd = pc.sd * R;
      std::sort(pis.begin(), pis.end());
      pc.q2_5 = quantile_type7(pis, 0.025);
      pc.q50 = quantile_type7(pis, 0.50);
      pc.q97_5 = quantile_type7(pis, 0.975);
      nc.q2_5 = pc.q2_5 * R;
      nc.q50 = pc.q50 * R;
      nc.q97_5 = pc.q97_5 * R;
      out.prevalence.push_back(pc);
      out.size.push_back(nc);
    }
  return out;
}

}  // namespace popsize
