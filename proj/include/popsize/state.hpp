#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace popsize {

struct IgPrior {
  double shape = 0.5;
  double scale = 0.5;
};

// Hyper-prior settings. The inverse-gamma defaults follow the shapes the
// Gibbs updates imply: (0.5, 0.5) for the prevalence-layer variances and
// (1, 0.001) for the bias/residual variances.
struct PriorConfig {
  double theta_prior_var = 1.0;
  double mu0_prior_var = 10.0;
  IgPrior sigma2_pi{0.5, 0.5};
  IgPrior sigma2_phi{0.5, 0.5};
  IgPrior sigma2_0{0.5, 0.5};
  IgPrior sigma2_gamma{1.0, 0.001};
  IgPrior sigma2_delta{1.0, 0.001};
  IgPrior sigma2_eps{1.0, 0.001};

  void validate() const {
    auto pos = [](double x) { return x > 0 && std::isfinite(x); };
    for (const IgPrior* p :
         {&sigma2_pi, &sigma2_phi, &sigma2_0, &sigma2_gamma, &sigma2_delta,
          &sigma2_eps})
      if (!pos(p->shape) || !pos(p->scale))
        throw std::invalid_argument("inverse-gamma prior must be positive");
    if (!pos(theta_prior_var) || !pos(mu0_prior_var))
      throw std::invalid_argument("prior variances must be positive");
  }
};

// One point in the posterior. The NSUM bias mu is never stored: it is
// always -theta by the identifiability constraint.
struct ParameterState {
  int n_cities = 0;  // I
  int n_years = 0;   // T + 1
  std::vector<double> pi;     // prevalences, row-major [i * n_years + t]
  double mu0 = 0;
  double theta = 0;
  std::vector<double> delta;  // city biases, length I
  std::vector<double> gamma;  // subgroup biases, length J
  std::vector<double> phi;    // drifts for t = 1..T, stored at [t-1]
  double sigma2_pi = 1;
  double sigma2_phi = 1;
  double sigma2_gamma = 1;
  double sigma2_delta = 1;
  double sigma2_eps = 1;
  double sigma2_0 = 1;

  double& pi_at(int i, int t) { return pi[static_cast<std::size_t>(i) * n_years + t]; }
  double pi_at(int i, int t) const {
    return pi[static_cast<std::size_t>(i) * n_years + t];
  }
  double phi_at(int t) const { return phi[t - 1]; }  // t in 1..T
  double nsum_bias() const { return -theta; }

  bool valid() const {
    for (double p : pi)
      if (!(p > 0) || !(p < 1)) return false;
    for (double v : {sigma2_pi, sigma2_phi, sigma2_gamma, sigma2_delta,
                     sigma2_eps, sigma2_0})
      if (!(v > 0) || !std::isfinite(v)) return false;
    return true;
  }

  static ParameterState zeros(int n_cities, int n_subgroups, int n_years) {
    ParameterState s;
    s.n_cities = n_cities;
    s.n_years = n_years;
    s.pi.assign(static_cast<std::size_t>(n_cities) * n_years, 0.5);
    s.delta.assign(n_cities, 0.0);
    s.gamma.assign(n_subgroups, 0.0);
    s.phi.assign(n_years > 0 ? n_years - 1 : 0, 0.0);
    return s;
  }
};

}  // namespace popsize
