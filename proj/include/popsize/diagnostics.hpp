#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <stdexcept>
#include <string>
#include <vector>

#include "popsize/data.hpp"
#include "popsize/density.hpp"
#include "popsize/sampler.hpp"
#include "popsize/simulate.hpp"
#include "popsize/summary.hpp"

namespace popsize {

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

// Anderson-Darling statistic against a fully specified standard normal.
// The 1% critical value for this case is 3.857.
inline double anderson_darling_statistic(std::vector<double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("need at least 2 residuals");
  std::sort(x.begin(), x.end());
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double lo = normal_cdf(x[i]);
    double hi = normal_cdf(x[n - 1 - i]);
    lo = std::clamp(lo, 1e-300, 1.0 - 1e-16);
    hi = std::clamp(hi, 0.0, 1.0 - 1e-16);
    sum += (2.0 * i + 1.0) * (std::log(lo) + std::log1p(-hi));
  }
  return -static_cast<double>(n) - sum / n;
}

constexpr double kAndersonDarlingCrit1pct = 3.857;

struct MultiplierResidual {
  int city = 0;
  int subgroup = 0;
  int year = 0;
  double sample_size = 0;
  double fitted = 0;    // fitted value of M at posterior means
  double residual = 0;  // scaled so the reference law is standard normal
};

struct NsumResidual {
  int city = 0;
  int year = 0;
  double fitted = 0;
  double residual = 0;
};

// sqrt(G) [M - log(n) - theta - delta - gamma] / sigma_eps at posterior means
inline std::vector<MultiplierResidual> multiplier_residuals(
    const PosteriorSummary& summary, const ObservedDataset& data) {
  const double theta = summary.scalar("theta").mean;
  const double sigma_eps = std::sqrt(summary.scalar("sigma2_eps").mean);
  std::vector<MultiplierResidual> out;
  out.reserve(data.multiplier_records.size());
  for (const auto& r : data.multiplier_records) {
    // the median commutes with the log; the mean would shift every
    // residual down by half the posterior log-scale variance
    const double log_n = std::log(summary.size_at(r.city, r.year).q50);
    const double fitted =
        log_n + theta +
        summary.scalar("delta[" + std::to_string(r.city) + "]").mean +
        summary.scalar("gamma[" + std::to_string(r.subgroup) + "]").mean;
    MultiplierResidual e;
    e.city = r.city;
    e.subgroup = r.subgroup;
    e.year = r.year;
    e.sample_size = r.sample_size;
    e.fitted = fitted;
    e.residual =
        std::sqrt(r.sample_size) * (r.log_estimate - fitted) / sigma_eps;
    out.push_back(e);
  }
  return out;
}

// [log N - log(n) - mu] / sqrt(v) at posterior means, with mu = -theta
inline std::vector<NsumResidual> nsum_residuals(const PosteriorSummary& summary,
                                                const ObservedDataset& data) {
  const double mu = -summary.scalar("theta").mean;
  std::vector<NsumResidual> out;
  out.reserve(data.nsum_records.size());
  for (const auto& r : data.nsum_records) {
    const double fitted = std::log(summary.size_at(r.city, r.year).q50) + mu;
    NsumResidual e;
    e.city = r.city;
    e.year = r.year;
    e.fitted = fitted;
    e.residual = (std::log(r.estimate) - fitted) / std::sqrt(r.log_variance);
    out.push_back(e);
  }
  return out;
}

struct YearResidualRow {
  int year = 0;
  int count = 0;
  double mean = 0;
  double sd = 0;
};

struct SiteYearResidualRow {
  int city = 0;
  int year = 0;
  int count = 0;
  double mean = 0;
};

struct YearResidualSummary {
  std::vector<YearResidualRow> per_year;
  std::vector<SiteYearResidualRow> per_site_year;
};

inline YearResidualSummary year_residual_summary(
    const std::vector<MultiplierResidual>& residuals) {
  if (residuals.empty())
    throw std::invalid_argument("no residuals to summarize");
  YearResidualSummary out;
  int max_year = 0, max_city = 0;
  for (const auto& r : residuals) {
    max_year = std::max(max_year, r.year);
    max_city = std::max(max_city, r.city);
  }
  for (int t = 0; t <= max_year; ++t) {
    std::vector<double> vals;
    for (const auto& r : residuals)
      if (r.year == t) vals.push_back(r.residual);
    if (vals.empty()) continue;
    YearResidualRow row;
    row.year = t;
    row.count = static_cast<int>(vals.size());
    detail::mean_sd(vals, row.mean, row.sd);
    out.per_year.push_back(row);
  }
  for (int i = 0; i <= max_city; ++i)
    for (int t = 0; t <= max_year; ++t) {
      double sum = 0;
      int n = 0;
      for (const auto& r : residuals)
        if (r.city == i && r.year == t) {
          sum += r.residual;
          ++n;
        }
      if (n > 0)
        out.per_site_year.push_back({i, t, n, sum / n});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Leave-one-city-out cross validation

struct LooPrediction {
  bool is_multiplier = true;
  int city = 0;
  int subgroup = -1;
  int year = 0;
  double observed = 0;   // log scale
  double pred_mean = 0;  // log scale
  double pred_lo = 0;    // 2.5%
  double pred_hi = 0;    // 97.5%
};

struct LooReport {
  std::vector<LooPrediction> predictions;
  double multiplier_coverage = 0;
  double nsum_coverage = 0;
  double multiplier_correlation = 0;
  double nsum_correlation = 0;
};

namespace detail {

inline ObservedDataset remove_city(const ObservedDataset& data, int drop) {
  ObservedDataset out;
  for (int i = 0; i < data.n_cities(); ++i)
    if (i != drop) out.city_ids.push_back(data.city_ids[i]);
  out.subgroup_ids = data.subgroup_ids;
  out.year_min = data.year_min;
  out.year_max = data.year_max;
  const int ny = data.n_years();
  for (int i = 0; i < data.n_cities(); ++i) {
    if (i == drop) continue;
    for (int t = 0; t < ny; ++t)
      out.reference_population.push_back(data.reference(i, t));
  }
  auto shift = [drop](int i) { return i > drop ? i - 1 : i; };
  for (const auto& r : data.multiplier_records)
    if (r.city != drop) {
      auto r2 = r;
      r2.city = shift(r.city);
      out.multiplier_records.push_back(r2);
    }
  for (const auto& r : data.nsum_records)
    if (r.city != drop) {
      auto r2 = r;
      r2.city = shift(r.city);
      out.nsum_records.push_back(r2);
    }
  out.finalize();
  return out;
}

inline double correlation(const std::vector<double>& a,
                          const std::vector<double>& b) {
  double ma, sa, mb, sb;
  mean_sd(a, ma, sa);
  mean_sd(b, mb, sb);
  if (sa == 0 || sb == 0) return 0;
  double cov = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    cov += (a[k] - ma) * (b[k] - mb);
  cov /= a.size() - 1;
  return cov / (sa * sb);
}

}  // namespace detail

// For each held-out city, fits on the rest and forms the posterior
// predictive law of that city's records: city bias redrawn from its
// population distribution, a fresh prevalence trajectory from the dynamic
// layer, subgroup biases retained.
inline LooReport loo_cv(const ObservedDataset& data, const PriorConfig& priors,
                        const SamplerConfig& sampler_cfg) {
  const int I = data.n_cities();
  if (I < 2)
    throw std::invalid_argument("leave-one-city-out needs at least 2 cities");
  const int ny = data.n_years();

  LooReport report;
  std::vector<std::vector<LooPrediction>> per_city(I);

  auto run_city = [&](int drop) {
    ObservedDataset reduced = detail::remove_city(data, drop);
    if (static_cast<int>(reduced.city_ids.size()) != I - 1)
      throw std::logic_error("reduced dataset retains the held-out city");
    PosteriorSamples samples = run_chain(reduced, priors, sampler_cfg);
    Rng rng(derive_seed(sampler_cfg.seed, 0x100 + drop));

    std::vector<int> mult_idx;
    for (std::size_t k = 0; k < data.multiplier_records.size(); ++k)
      if (data.multiplier_records[k].city == drop)
        mult_idx.push_back(static_cast<int>(k));
    std::vector<int> nsum_idx;
    for (std::size_t k = 0; k < data.nsum_records.size(); ++k)
      if (data.nsum_records[k].city == drop)
        nsum_idx.push_back(static_cast<int>(k));
    if (mult_idx.empty() && nsum_idx.empty()) return;

    std::vector<std::vector<double>> mult_draws(mult_idx.size());
    std::vector<std::vector<double>> nsum_draws(nsum_idx.size());
    for (const auto& chain : samples.chains)
      for (const auto& s : chain.draws) {
        const double delta_star =
            rng.normal(0.0, std::sqrt(s.sigma2_delta));
        std::vector<double> x(ny);
        x[0] = rng.normal(s.mu0, std::sqrt(s.sigma2_0));
        for (int t = 1; t < ny; ++t)
          x[t] = x[t - 1] + s.phi_at(t) +
                 rng.normal(0.0, std::sqrt(s.sigma2_pi));
        for (std::size_t k = 0; k < mult_idx.size(); ++k) {
          const auto& r = data.multiplier_records[mult_idx[k]];
          const double log_n = std::log(inv_logit(x[r.year]) *
                                        data.reference(drop, r.year));
          mult_draws[k].push_back(
              log_n + s.theta + delta_star + s.gamma[r.subgroup] +
              rng.normal(0.0, std::sqrt(s.sigma2_eps / r.sample_size)));
        }
        for (std::size_t k = 0; k < nsum_idx.size(); ++k) {
          const auto& r = data.nsum_records[nsum_idx[k]];
          const double log_n = std::log(inv_logit(x[r.year]) *
                                        data.reference(drop, r.year));
          nsum_draws[k].push_back(log_n + s.nsum_bias() +
                                  rng.normal(0.0, std::sqrt(r.log_variance)));
        }
      }

    auto finish = [&](std::vector<double>& draws, LooPrediction p) {
      double sd;
      detail::mean_sd(draws, p.pred_mean, sd);
      std::sort(draws.begin(), draws.end());
      p.pred_lo = quantile_type7(draws, 0.025);
      p.pred_hi = quantile_type7(draws, 0.975);
      per_city[drop].push_back(p);
    };
    for (std::size_t k = 0; k < mult_idx.size(); ++k) {
      const auto& r = data.multiplier_records[mult_idx[k]];
      LooPrediction p;
      p.is_multiplier = true;
      p.city = drop;
      p.subgroup = r.subgroup;
      p.year = r.year;
      p.observed = r.log_estimate;
      finish(mult_draws[k], p);
    }
    for (std::size_t k = 0; k < nsum_idx.size(); ++k) {
      const auto& r = data.nsum_records[nsum_idx[k]];
      LooPrediction p;
      p.is_multiplier = false;
      p.city = drop;
      p.year = r.year;
      p.observed = std::log(r.estimate);
      finish(nsum_draws[k], p);
    }
  };

  {
    int max_parallel = static_cast<int>(std::thread::hardware_concurrency());
    if (max_parallel <= 0) max_parallel = 4;
    std::vector<std::future<void>> pending;
    for (int drop = 0; drop < I; ++drop) {
      pending.push_back(std::async(std::launch::async, run_city, drop));
      if (static_cast<int>(pending.size()) >= max_parallel) {
        for (auto& f : pending) f.get();
        pending.clear();
      }
    }
    for (auto& f : pending) f.get();
  }

  for (auto& v : per_city)
    report.predictions.insert(report.predictions.end(), v.begin(), v.end());

  std::vector<double> mobs, mpred, nobs, npred;
  long mcov = 0, mtot = 0, ncov = 0, ntot = 0;
  for (const auto& p : report.predictions) {
    const bool inside = p.observed >= p.pred_lo && p.observed <= p.pred_hi;
    if (p.is_multiplier) {
      mobs.push_back(p.observed);
      mpred.push_back(p.pred_mean);
      ++mtot;
      if (inside) ++mcov;
    } else {
      nobs.push_back(p.observed);
      npred.push_back(p.pred_mean);
      ++ntot;
      if (inside) ++ncov;
    }
  }
  report.multiplier_coverage = mtot ? double(mcov) / mtot : 0;
  report.nsum_coverage = ntot ? double(ncov) / ntot : 0;
  report.multiplier_correlation =
      mobs.size() > 1 ? detail::correlation(mobs, mpred) : 0;
  report.nsum_correlation =
      nobs.size() > 1 ? detail::correlation(nobs, npred) : 0;
  return report;
}

// ---------------------------------------------------------------------------
// Posterior predictive checks

struct PpcStat {
  std::string source;  // subgroup id or "nsum"
  double observed = 0;
  double tail_prob = 0;  // P(replicate <= observed)
  std::vector<double> replicated;
};

struct PpcReport {
  std::vector<PpcStat> stats;
};

// Replicates every observed record from the model per retained draw and
// compares, per source, the cross-city mean size estimate.
inline PpcReport posterior_predictive_check(const PosteriorSamples& samples,
                                            const ObservedDataset& data,
                                            std::uint64_t seed = 0x9bc) {
  Rng rng(seed);
  PpcReport report;
  const int J = data.n_subgroups();

  std::vector<std::vector<int>> by_subgroup(J);
  for (std::size_t k = 0; k < data.multiplier_records.size(); ++k)
    by_subgroup[data.multiplier_records[k].subgroup].push_back(
        static_cast<int>(k));

  std::vector<PpcStat> stats;
  for (int j = 0; j < J; ++j) {
    if (by_subgroup[j].empty()) continue;
    PpcStat s;
    s.source = data.subgroup_ids[j];
    double sum = 0;
    for (int k : by_subgroup[j]) {
      const auto& r = data.multiplier_records[k];
      sum += r.count / r.proportion;
    }
    s.observed = sum / by_subgroup[j].size();
    stats.push_back(std::move(s));
  }
  PpcStat nsum_stat;
  if (!data.nsum_records.empty()) {
    nsum_stat.source = "nsum";
    double sum = 0;
    for (const auto& r : data.nsum_records) sum += r.estimate;
    nsum_stat.observed = sum / data.nsum_records.size();
  }

  for (const auto& chain : samples.chains)
    for (const auto& st : chain.draws) {
      std::size_t si = 0;
      for (int j = 0; j < J; ++j) {
        if (by_subgroup[j].empty()) continue;
        double sum = 0;
        for (int k : by_subgroup[j]) {
          const auto& r = data.multiplier_records[k];
          const double log_n = std::log(st.pi_at(r.city, r.year) *
                                        data.reference(r.city, r.year));
          const double M =
              log_n + st.theta + st.delta[r.city] + st.gamma[j] +
              rng.normal(0.0, std::sqrt(st.sigma2_eps / r.sample_size));
          sum += std::exp(M);
        }
        stats[si++].replicated.push_back(sum / by_subgroup[j].size());
      }
      if (!data.nsum_records.empty()) {
        double sum = 0;
        for (const auto& r : data.nsum_records) {
          const double log_n = std::log(st.pi_at(r.city, r.year) *
                                        data.reference(r.city, r.year));
          sum += std::exp(log_n + st.nsum_bias() +
                          rng.normal(0.0, std::sqrt(r.log_variance)));
        }
        nsum_stat.replicated.push_back(sum / data.nsum_records.size());
      }
    }

  if (!data.nsum_records.empty()) stats.push_back(std::move(nsum_stat));
  for (auto& s : stats) {
    long below = 0;
    for (double v : s.replicated)
      if (v <= s.observed) ++below;
    s.tail_prob = s.replicated.empty()
                      ? 0
                      : static_cast<double>(below) / s.replicated.size();
  }
  report.stats = std::move(stats);
  return report;
}

// ---------------------------------------------------------------------------
// Data-source contribution

struct ContributionRow {
  std::string removed;  // "(none)", subgroup id, or "nsum"
  int year = 0;
  double mean_prevalence = 0;  // cross-city mean of posterior mean pi
  double mean_ci_width = 0;    // cross-city mean 95% CI width of pi
};

struct ContributionReport {
  std::vector<ContributionRow> rows;
  std::vector<std::string> skipped;  // removals that would empty the dataset
};

namespace detail {

inline ObservedDataset remove_source(const ObservedDataset& data,
                                     const std::string& source) {
  ObservedDataset out;
  out.city_ids = data.city_ids;
  out.subgroup_ids = data.subgroup_ids;
  out.year_min = data.year_min;
  out.year_max = data.year_max;
  out.reference_population = data.reference_population;
  if (source == "nsum") {
    out.multiplier_records = data.multiplier_records;
  } else {
    for (const auto& r : data.multiplier_records)
      if (data.subgroup_ids[r.subgroup] != source)
        out.multiplier_records.push_back(r);
    out.nsum_records = data.nsum_records;
  }
  out.finalize();
  return out;
}

inline void contribution_rows(const std::string& label,
                              const PosteriorSummary& summary,
                              std::vector<ContributionRow>& rows) {
  for (int t = 0; t < summary.n_years; ++t) {
    ContributionRow row;
    row.removed = label;
    row.year = t;
    double msum = 0, wsum = 0;
    for (int i = 0; i < summary.n_cities; ++i) {
      const auto& c = summary.prevalence_at(i, t);
      msum += c.mean;
      wsum += c.q97_5 - c.q2_5;
    }
    row.mean_prevalence = msum / summary.n_cities;
    row.mean_ci_width = wsum / summary.n_cities;
    rows.push_back(row);
  }
}

}  // namespace detail

// Refits once per removable source (each subgroup, then the NSUM block),
// reusing the identical sampler seed so differences are attributable to the
// removal alone.
inline ContributionReport source_contribution(const ObservedDataset& data,
                                              const PriorConfig& priors,
                                              const SamplerConfig& sampler_cfg) {
  std::vector<std::string> sources;
  for (int j = 0; j < data.n_subgroups(); ++j)
    sources.push_back(data.subgroup_ids[j]);
  sources.push_back("nsum");
  if (sources.size() < 2)
    throw std::invalid_argument("need at least 2 sources");

  ContributionReport report;
  PosteriorSamples full = run_chain(data, priors, sampler_cfg);
  detail::contribution_rows("(none)", summarize(full, data), report.rows);

  for (const auto& src : sources) {
    ObservedDataset reduced = detail::remove_source(data, src);
    if (reduced.multiplier_records.empty() && reduced.nsum_records.empty()) {
      report.skipped.push_back(src);
      continue;
    }
    PosteriorSamples samples = run_chain(reduced, priors, sampler_cfg);
    detail::contribution_rows(src, summarize(samples, reduced), report.rows);
  }
  return report;
}

struct DiagnosticsReport {
  std::vector<MultiplierResidual> multiplier;
  std::vector<NsumResidual> nsum;
  YearResidualSummary year_summary;
  double multiplier_ad_stat = 0;
  double nsum_ad_stat = 0;
  bool has_loo = false;
  LooReport loo;
  bool has_ppc = false;
  PpcReport ppc;
  bool has_contribution = false;
  ContributionReport contribution;
};

}  // namespace popsize
