#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "popsize/data.hpp"
#include "popsize/density.hpp"
#include "popsize/rng.hpp"
#include "popsize/sampler.hpp"
#include "popsize/state.hpp"
#include "popsize/summary.hpp"

namespace popsize {

enum class ViolationMode { None, YearBias, CitySubgroupInteraction };

// Which years carry NSUM vs multiplier data. Default mirrors the study
// layout: second year NSUM only, the other three multiplier only.
struct StudyLayout {
  std::vector<int> nsum_years{1};
  std::vector<int> multiplier_years{0, 2, 3};
};

struct SimulationConfig {
  int n_cities = 20;
  int n_years = 4;
  int n_subgroups = 4;
  std::pair<double, double> reference_range{20000, 400000};
  double mu0_mean = logit(0.1);
  double mu0_sd = std::sqrt(0.5);
  std::pair<double, double> variance_range{0, 1};  // sigma2 pi/phi/gamma/delta/0
  std::pair<double, double> sigma2_eps_range{200, 500};
  double sigma_c = 0;
  ViolationMode violation_mode = ViolationMode::None;
  StudyLayout layout;
  std::pair<double, double> sample_size_range{100, 1000};  // G
  std::pair<double, double> proportion_range{0.05, 0.3};   // P
  std::pair<double, double> nsum_logvar_range{0.01, 0.05};  // v
  bool integer_counts = true;  // round Y to an integer (>= 1)
  std::uint64_t seed = 1;

  void validate() const {
    auto ordered = [](const std::pair<double, double>& r) {
      return r.first <= r.second;
    };
    if (n_cities < 1 || n_years < 1 || n_subgroups < 1)
      throw std::invalid_argument("dimensions must be positive");
    if (!ordered(reference_range) || !ordered(variance_range) ||
        !ordered(sigma2_eps_range) || !ordered(sample_size_range) ||
        !ordered(proportion_range) || !ordered(nsum_logvar_range))
      throw std::invalid_argument("ranges must be ordered");
    if (sigma_c < 0) throw std::invalid_argument("sigma_c must be >= 0");
    for (int y : layout.nsum_years)
      if (y < 0 || y >= n_years)
        throw std::invalid_argument("layout NSUM year outside range");
    for (int y : layout.multiplier_years)
      if (y < 0 || y >= n_years)
        throw std::invalid_argument("layout multiplier year outside range");
  }
};

struct SimulatedTruth {
  ParameterState state;
  std::vector<double> year_bias;             // c_t, per year
  std::vector<double> interaction_bias;      // c_ij, row-major [i*J + j]
  std::vector<double> true_size;             // n_it, row-major
  double theta_true = 0;

  double size_at(int i, int t, int n_years) const {
    return true_size[static_cast<std::size_t>(i) * n_years + t];
  }
};

inline std::pair<ObservedDataset, SimulatedTruth> simulate_dataset(
    const SimulationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const int I = cfg.n_cities;
  const int J = cfg.n_subgroups;
  const int ny = cfg.n_years;
  const int T = ny - 1;

  SimulatedTruth truth;
  ParameterState& s = truth.state;
  s = ParameterState::zeros(I, J, ny);
  s.sigma2_pi = rng.uniform(cfg.variance_range.first, cfg.variance_range.second);
  s.sigma2_phi =
      rng.uniform(cfg.variance_range.first, cfg.variance_range.second);
  s.sigma2_gamma =
      rng.uniform(cfg.variance_range.first, cfg.variance_range.second);
  s.sigma2_delta =
      rng.uniform(cfg.variance_range.first, cfg.variance_range.second);
  s.sigma2_0 = rng.uniform(cfg.variance_range.first, cfg.variance_range.second);
  s.sigma2_eps =
      rng.uniform(cfg.sigma2_eps_range.first, cfg.sigma2_eps_range.second);
  s.mu0 = rng.normal(cfg.mu0_mean, cfg.mu0_sd);
  s.theta = rng.normal(0.0, 1.0);
  truth.theta_true = s.theta;
  for (auto& d : s.delta) d = rng.normal(0.0, std::sqrt(s.sigma2_delta));
  for (auto& g : s.gamma) g = rng.normal(0.0, std::sqrt(s.sigma2_gamma));
  for (auto& f : s.phi) f = rng.normal(0.0, std::sqrt(s.sigma2_phi));

  for (int i = 0; i < I; ++i) {
    double x = rng.normal(s.mu0, std::sqrt(s.sigma2_0));
    x = std::clamp(x, -30.0, 30.0);
    s.pi_at(i, 0) = inv_logit(x);
    for (int t = 1; t <= T; ++t) {
      x = std::clamp(
          x + s.phi_at(t) + rng.normal(0.0, std::sqrt(s.sigma2_pi)), -30.0,
          30.0);
      s.pi_at(i, t) = inv_logit(x);
    }
  }

  truth.year_bias.assign(ny, 0.0);
  truth.interaction_bias.assign(static_cast<std::size_t>(I) * J, 0.0);
  if (cfg.violation_mode == ViolationMode::YearBias)
    for (auto& c : truth.year_bias) c = rng.normal(0.0, cfg.sigma_c);
  else if (cfg.violation_mode == ViolationMode::CitySubgroupInteraction)
    for (auto& c : truth.interaction_bias) c = rng.normal(0.0, cfg.sigma_c);

  ObservedDataset data;
  for (int i = 0; i < I; ++i) data.city_ids.push_back("city" + std::to_string(i));
  for (int j = 0; j < J; ++j)
    data.subgroup_ids.push_back("group" + std::to_string(j));
  data.year_min = 0;
  data.year_max = T;
  data.reference_population.resize(static_cast<std::size_t>(I) * ny);
  truth.true_size.resize(static_cast<std::size_t>(I) * ny);
  for (int i = 0; i < I; ++i) {
    // reference population held constant per city across years
    const double R = std::round(
        rng.uniform(cfg.reference_range.first, cfg.reference_range.second));
    for (int t = 0; t < ny; ++t) {
      data.reference_population[static_cast<std::size_t>(i) * ny + t] = R;
      truth.true_size[static_cast<std::size_t>(i) * ny + t] =
          s.pi_at(i, t) * R;
    }
  }

  for (int t : cfg.layout.multiplier_years)
    for (int i = 0; i < I; ++i)
      for (int j = 0; j < J; ++j) {
        const double G = std::round(rng.uniform(cfg.sample_size_range.first,
                                                cfg.sample_size_range.second));
        const double P = rng.uniform(cfg.proportion_range.first,
                                     cfg.proportion_range.second);
        double viol = 0;
        if (cfg.violation_mode == ViolationMode::YearBias)
          viol = truth.year_bias[t];
        else if (cfg.violation_mode == ViolationMode::CitySubgroupInteraction)
          viol = truth.interaction_bias[static_cast<std::size_t>(i) * J + j];
        const double noise_sd =
            s.sigma2_eps > 0 ? std::sqrt(s.sigma2_eps / G) : 0.0;
        const double M = std::log(truth.true_size[data.cell(i, t)]) + s.theta +
                         viol + s.delta[i] + s.gamma[j] +
                         (noise_sd > 0 ? rng.normal(0.0, noise_sd) : 0.0);
        double Y = P * std::exp(M);
        if (cfg.integer_counts) Y = std::max(1.0, std::round(Y));
        data.multiplier_records.push_back(
            MultiplierRecord::make(i, j, t, Y, P, G));
      }

  for (int t : cfg.layout.nsum_years)
    for (int i = 0; i < I; ++i) {
      const double v = rng.uniform(cfg.nsum_logvar_range.first,
                                   cfg.nsum_logvar_range.second);
      const double logN = std::log(truth.true_size[data.cell(i, t)]) -
                          s.theta + rng.normal(0.0, std::sqrt(v));
      const double N = std::exp(logN);
      data.nsum_records.push_back(NsumRecord::make(i, t, N, N * std::sqrt(v)));
    }

  data.finalize();
  return {std::move(data), std::move(truth)};
}

// Redraws every observation from the likelihood given the current state,
// keeping the design quantities (G, P, v, R) fixed. Used by the
// joint-distribution sampler test.
inline void resimulate_observations(ObservedDataset& data,
                                    const ParameterState& state, Rng& rng) {
  for (auto& r : data.multiplier_records) {
    const double log_n = std::log(state.pi_at(r.city, r.year) *
                                  data.reference(r.city, r.year));
    const double M = log_n + state.theta + state.delta[r.city] +
                     state.gamma[r.subgroup] +
                     rng.normal(0.0, std::sqrt(state.sigma2_eps / r.sample_size));
    r.log_estimate = M;
    r.count = r.proportion * std::exp(M);
  }
  for (auto& r : data.nsum_records) {
    const double log_n = std::log(state.pi_at(r.city, r.year) *
                                  data.reference(r.city, r.year));
    const double v = r.log_variance;
    const double N =
        std::exp(log_n + state.nsum_bias() + rng.normal(0.0, std::sqrt(v)));
    r.estimate = N;
    r.std_error = N * std::sqrt(v);
  }
}

struct StudyRow {
  double sigma_c = 0;
  int n_datasets = 0;
  double mean_error = 0;     // mean log10(n_hat) - log10(n_true) over cells
  double mean_error_se = 0;  // MC standard error over per-dataset means
  double err_q25 = 0, err_q75 = 0, err_q2_5 = 0, err_q97_5 = 0;
  double mean_rmse = 0;      // mean per-dataset RMSE of log10 errors
  double mean_rmse_se = 0;   // MC standard error of mean_rmse
  double rmse_q25 = 0, rmse_q75 = 0, rmse_q2_5 = 0, rmse_q97_5 = 0;
};

struct StudySummary {
  std::vector<StudyRow> rows;
};

struct DatasetFitResult {
  std::vector<double> cell_errors;  // log10 errors, all (i,t)
  double rmse = 0;
  bool theta_covered = false;       // theta_true inside its 95% CI
  double size_ci_coverage = 0;      // fraction of n_it inside 95% CI
};

// Simulates one dataset, fits the standard model, and scores the fit
// against the generating truth.
inline DatasetFitResult fit_simulated_dataset(const SimulationConfig& cfg,
                                              std::uint64_t dataset_seed,
                                              const SamplerConfig& sampler_cfg) {
  auto [data, truth] = simulate_dataset(cfg, dataset_seed);
  SamplerConfig fit_cfg = sampler_cfg;
  fit_cfg.seed = derive_seed(dataset_seed, 0x5eedf17);
  PosteriorSamples samples = run_chain(data, PriorConfig{}, fit_cfg);
  PosteriorSummary summary = summarize(samples, data);

  DatasetFitResult res;
  double ss = 0;
  int covered = 0;
  const int ny = cfg.n_years;
  for (int i = 0; i < cfg.n_cities; ++i)
    for (int t = 0; t < ny; ++t) {
      const auto& cell = summary.size_at(i, t);
      const double truth_n = truth.size_at(i, t, ny);
      // the posterior median commutes with the log, so log10 errors are
      // free of the Jensen offset the mean would carry on this scale
      const double err = std::log10(cell.q50) - std::log10(truth_n);
      res.cell_errors.push_back(err);
      ss += err * err;
      if (truth_n >= cell.q2_5 && truth_n <= cell.q97_5) ++covered;
    }
  res.rmse = std::sqrt(ss / res.cell_errors.size());
  res.size_ci_coverage =
      static_cast<double>(covered) / res.cell_errors.size();
  const auto& th = summary.scalar("theta");
  res.theta_covered =
      truth.theta_true >= th.q2_5 && truth.theta_true <= th.q97_5;
  return res;
}

// Runs the violation study over a grid of sigma_c values. Datasets are fit
// independently and concurrently; aggregation order is fixed by
// (grid point, dataset index).
inline StudySummary run_bias_study(const SimulationConfig& cfg_base,
                                   const std::vector<double>& sigma_c_grid,
                                   int n_datasets,
                                   const SamplerConfig& sampler_cfg,
                                   int max_parallel = 0) {
  if (sigma_c_grid.empty())
    throw std::invalid_argument("sigma_c grid must be non-empty");
  if (n_datasets < 1) throw std::invalid_argument("n_datasets must be >= 1");
  if (max_parallel <= 0) {
    max_parallel = static_cast<int>(std::thread::hardware_concurrency());
    if (max_parallel <= 0) max_parallel = 4;
  }

  StudySummary out;
  for (std::size_t g = 0; g < sigma_c_grid.size(); ++g) {
    SimulationConfig cfg = cfg_base;
    cfg.sigma_c = sigma_c_grid[g];

    std::vector<DatasetFitResult> results(n_datasets);
    std::vector<std::future<void>> pending;
    for (int d = 0; d < n_datasets; ++d) {
      const std::uint64_t dseed =
          derive_seed(cfg_base.seed, (g << 20) + static_cast<std::uint64_t>(d));
      pending.push_back(std::async(std::launch::async, [&, d, dseed, cfg] {
        try {
          results[d] = fit_simulated_dataset(cfg, dseed, sampler_cfg);
        } catch (const std::exception& e) {
          throw std::runtime_error("dataset seed " + std::to_string(dseed) +
                                   ": " + e.what());
        }
      }));
      if (static_cast<int>(pending.size()) >= max_parallel) {
        for (auto& f : pending) f.get();
        pending.clear();
      }
    }
    for (auto& f : pending) f.get();

    StudyRow row;
    row.sigma_c = cfg.sigma_c;
    row.n_datasets = n_datasets;
    std::vector<double> all_errors;
    std::vector<double> rmses;
    std::vector<double> dataset_means;
    for (const auto& r : results) {
      double m = 0;
      for (double e : r.cell_errors) m += e;
      dataset_means.push_back(m / r.cell_errors.size());
      all_errors.insert(all_errors.end(), r.cell_errors.begin(),
                        r.cell_errors.end());
      rmses.push_back(r.rmse);
    }
    double sd_means;
    detail::mean_sd(dataset_means, row.mean_error, sd_means);
    row.mean_error_se = sd_means / std::sqrt(double(n_datasets));
    std::sort(all_errors.begin(), all_errors.end());
    row.err_q25 = quantile_type7(all_errors, 0.25);
    row.err_q75 = quantile_type7(all_errors, 0.75);
    row.err_q2_5 = quantile_type7(all_errors, 0.025);
    row.err_q97_5 = quantile_type7(all_errors, 0.975);
    double rmse_sd;
    detail::mean_sd(rmses, row.mean_rmse, rmse_sd);
    row.mean_rmse_se = rmse_sd / std::sqrt(double(n_datasets));
    std::sort(rmses.begin(), rmses.end());
    row.rmse_q25 = quantile_type7(rmses, 0.25);
    row.rmse_q75 = quantile_type7(rmses, 0.75);
    row.rmse_q2_5 = quantile_type7(rmses, 0.025);
    row.rmse_q97_5 = quantile_type7(rmses, 0.975);
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace popsize
