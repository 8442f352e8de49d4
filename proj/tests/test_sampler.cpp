#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "popsize/data.hpp"
#include "popsize/density.hpp"
#include "popsize/rng.hpp"
#include "popsize/sampler.hpp"
#include "popsize/state.hpp"
#include "test_util.hpp"

using namespace popsize;

namespace {

ObservedDataset empty_data(int I, int J, int T, double R = 50000) {
  ObservedDataset d;
  for (int i = 0; i < I; ++i) d.city_ids.push_back("c" + std::to_string(i));
  for (int j = 0; j < J; ++j) d.subgroup_ids.push_back("g" + std::to_string(j));
  d.year_min = 0;
  d.year_max = T;
  d.reference_population.assign(static_cast<std::size_t>(I) * (T + 1), R);
  d.finalize();
  return d;
}

testutil::TinyInstance tiny_with_years(Rng& rng, int min_T) {
  for (;;) {
    auto inst = testutil::make_tiny_instance(rng);
    if (inst.data.max_year_index() >= min_T) return inst;
  }
}

// quadrature of the joint over one coordinate, via a mutate-and-evaluate hook
testutil::Moments joint_moments(
    const ObservedDataset& data, const ParameterState& base,
    const PriorConfig& priors,
    const std::function<void(ParameterState&, double)>& set, double center,
    double sd) {
  auto logf = [&](double x) {
    ParameterState s = base;
    set(s, x);
    return log_joint_density(s, data, priors);
  };
  return testutil::grid_moments(logf, center - 10 * sd, center + 10 * sd);
}

}  // namespace

TEST_CASE("draw_mu0 conditional") {
  PriorConfig priors;

  SECTION("single city at logit zero with prior-matched variance") {
    ParameterState s = ParameterState::zeros(1, 1, 1);
    s.pi_at(0, 0) = 0.5;
    s.sigma2_0 = 10.0;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_mu0(s, priors, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THAT(p.sd * p.sd, Catch::Matchers::WithinRel(5.0, 1e-12));
  }

  SECTION("no-information limit recovers the prior") {
    ParameterState s = ParameterState::zeros(1, 1, 1);
    s.pi_at(0, 0) = 0.2;
    s.sigma2_0 = 1e12;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_mu0(s, priors, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinAbs(0.0, 1e-9));
    CHECK_THAT(p.sd * p.sd, Catch::Matchers::WithinRel(10.0, 1e-9));
  }

  SECTION("three cities match grid quadrature of the joint") {
    ObservedDataset data = empty_data(3, 1, 0);
    ParameterState s = ParameterState::zeros(3, 1, 1);
    s.pi_at(0, 0) = inv_logit(-2.0);
    s.pi_at(1, 0) = inv_logit(-2.5);
    s.pi_at(2, 0) = inv_logit(-1.5);
    s.sigma2_0 = 0.5;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_mu0(s, priors, r); });
    auto q = joint_moments(
        data, s, priors, [](ParameterState& st, double x) { st.mu0 = x; },
        p.mean, p.sd);
    CHECK_THAT(q.mean,
               Catch::Matchers::WithinAbs(p.mean, 1e-5 * (1 + std::abs(p.mean))));
    CHECK_THAT(q.var, Catch::Matchers::WithinRel(p.sd * p.sd, 1e-4));
  }
}

TEST_CASE("draw_theta conditional") {
  PriorConfig priors;

  SECTION("no data recovers the prior") {
    ObservedDataset data = empty_data(1, 1, 0);
    ParameterState s = ParameterState::zeros(1, 1, 1);
    s.pi_at(0, 0) = 0.1;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_theta(data, s, priors, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THAT(p.sd * p.sd, Catch::Matchers::WithinRel(1.0, 1e-12));
  }

  SECTION("one unit-precision record with residual 2") {
    ObservedDataset data = empty_data(1, 1, 0);
    ParameterState s = ParameterState::zeros(1, 1, 1);
    s.pi_at(0, 0) = 0.1;
    s.sigma2_eps = 4.0;  // G / sigma2_eps = 1
    const double log_n = std::log(0.1 * data.reference(0, 0));
    const double P = 0.25;
    data.multiplier_records.push_back(
        MultiplierRecord::make(0, 0, 0, P * std::exp(log_n + 2.0), P, 4));
    data.finalize();
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_theta(data, s, priors, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinRel(1.0, 1e-9));
    CHECK_THAT(p.sd * p.sd, Catch::Matchers::WithinRel(0.5, 1e-12));
  }

  SECTION("mixed records match grid quadrature of the joint") {
    Rng rng(41);
    for (int rep = 0; rep < 5; ++rep) {
      auto inst = testutil::make_tiny_instance(rng);
      auto p = testutil::extract_normal([&](Rng& r) {
        return draw_theta(inst.data, inst.state, priors, r);
      });
      auto q = joint_moments(
          inst.data, inst.state, priors,
          [](ParameterState& st, double x) { st.theta = x; }, p.mean, p.sd);
      CHECK_THAT(q.mean, Catch::Matchers::WithinAbs(
                             p.mean, 1e-5 * (1 + std::abs(p.mean))));
      CHECK_THAT(q.var, Catch::Matchers::WithinRel(p.sd * p.sd, 1e-4));
    }
  }
}

TEST_CASE("draw_delta conditional") {
  PriorConfig priors;

  SECTION("city without records recovers N(0, sigma2_delta)") {
    ObservedDataset data = empty_data(2, 1, 0);
    ParameterState s = ParameterState::zeros(2, 1, 1);
    s.pi_at(0, 0) = s.pi_at(1, 0) = 0.1;
    s.sigma2_delta = 0.7;
    const double log_n = std::log(0.1 * data.reference(0, 0));
    data.multiplier_records.push_back(
        MultiplierRecord::make(0, 0, 0, 0.3 * std::exp(log_n), 0.3, 5));
    data.finalize();
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_delta(1, data, s, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THAT(p.sd * p.sd, Catch::Matchers::WithinRel(0.7, 1e-12));
  }

  SECTION("equal precision shrinks the residual by half") {
    ObservedDataset data = empty_data(1, 1, 0);
    ParameterState s = ParameterState::zeros(1, 1, 1);
    s.pi_at(0, 0) = 0.1;
    s.sigma2_delta = 0.5;
    s.sigma2_eps = 5.0;  // sigma2_eps / G = sigma2_delta with G = 10
    const double log_n = std::log(0.1 * data.reference(0, 0));
    const double resid = -1.3;  // M - log n - theta - gamma
    data.multiplier_records.push_back(
        MultiplierRecord::make(0, 0, 0, 0.2 * std::exp(log_n + resid), 0.2,
                               10));
    data.finalize();
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_delta(0, data, s, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinRel(resid / 2, 1e-9));
  }

  SECTION("random instance matches grid quadrature") {
    Rng rng(43);
    auto inst = testutil::make_tiny_instance(rng);
    const int i = 0;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_delta(i, inst.data, inst.state, r); });
    auto q = joint_moments(
        inst.data, inst.state, priors,
        [i](ParameterState& st, double x) { st.delta[i] = x; }, p.mean, p.sd);
    CHECK_THAT(q.mean,
               Catch::Matchers::WithinAbs(p.mean, 1e-5 * (1 + std::abs(p.mean))));
    CHECK_THAT(q.var, Catch::Matchers::WithinRel(p.sd * p.sd, 1e-4));
  }
}

TEST_CASE("draw_gamma conditional") {
  PriorConfig priors;

  SECTION("subgroup without records recovers N(0, sigma2_gamma)") {
    ObservedDataset data = empty_data(1, 2, 0);
    ParameterState s = ParameterState::zeros(1, 2, 1);
    s.pi_at(0, 0) = 0.1;
    s.sigma2_gamma = 0.3;
    const double log_n = std::log(0.1 * data.reference(0, 0));
    data.multiplier_records.push_back(
        MultiplierRecord::make(0, 0, 0, 0.3 * std::exp(log_n), 0.3, 5));
    data.finalize();
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_gamma(1, data, s, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THAT(p.sd * p.sd, Catch::Matchers::WithinRel(0.3, 1e-12));
  }

  SECTION("random instance matches grid quadrature") {
    Rng rng(44);
    auto inst = testutil::make_tiny_instance(rng);
    const int j = inst.data.n_subgroups() - 1;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_gamma(j, inst.data, inst.state, r); });
    auto q = joint_moments(
        inst.data, inst.state, priors,
        [j](ParameterState& st, double x) { st.gamma[j] = x; }, p.mean, p.sd);
    CHECK_THAT(q.mean,
               Catch::Matchers::WithinAbs(p.mean, 1e-5 * (1 + std::abs(p.mean))));
    CHECK_THAT(q.var, Catch::Matchers::WithinRel(p.sd * p.sd, 1e-4));
  }
}

TEST_CASE("draw_phi conditional") {
  PriorConfig priors;

  SECTION("zero transitions give zero mean") {
    ParameterState s = ParameterState::zeros(3, 1, 2);
    for (auto& p : s.pi) p = 0.1;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_phi(1, s, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinAbs(0.0, 1e-12));
  }

  SECTION("flat-prior limit averages the transitions") {
    ParameterState s = ParameterState::zeros(2, 1, 2);
    s.pi_at(0, 0) = inv_logit(-2.0);
    s.pi_at(0, 1) = inv_logit(-1.6);
    s.pi_at(1, 0) = inv_logit(-2.2);
    s.pi_at(1, 1) = inv_logit(-2.0);
    s.sigma2_phi = 1e12;
    s.sigma2_pi = 0.5;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_phi(1, s, r); });
    CHECK_THAT(p.mean, Catch::Matchers::WithinRel(0.3, 1e-6));
    CHECK_THAT(p.sd * p.sd, Catch::Matchers::WithinRel(0.25, 1e-6));
  }

  SECTION("random instance matches grid quadrature") {
    Rng rng(45);
    auto inst = tiny_with_years(rng, 1);
    const int t = 1;
    auto p = testutil::extract_normal(
        [&](Rng& r) { return draw_phi(t, inst.state, r); });
    auto q = joint_moments(
        inst.data, inst.state, priors,
        [t](ParameterState& st, double x) { st.phi[t - 1] = x; }, p.mean,
        p.sd);
    CHECK_THAT(q.mean,
               Catch::Matchers::WithinAbs(p.mean, 1e-5 * (1 + std::abs(p.mean))));
    CHECK_THAT(q.var, Catch::Matchers::WithinRel(p.sd * p.sd, 1e-4));
  }
}

namespace {

// shape/scale oracle formulas for the variance conditionals
struct IgParams {
  double shape = 0;
  double scale = 0;
};

double ig_draw(std::uint64_t seed, double shape, double scale) {
  Rng r(seed);
  return r.inv_gamma(shape, scale);
}

void check_variance_conditional(
    const ObservedDataset& data, const ParameterState& base,
    const PriorConfig& priors, IgParams expect,
    const std::function<double(const ParameterState&, Rng&)>& draw,
    const std::function<void(ParameterState&, double)>& set) {
  // the library draw must be exactly an inverse-gamma draw with the
  // expected parameters
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    Rng r(seed);
    CHECK(draw(base, r) == ig_draw(seed, expect.shape, expect.scale));
  }
  // and those parameters must match quadrature of the joint
  auto fit = testutil::grid_precision_fit(
      [&](double v) {
        ParameterState s = base;
        set(s, v);
        return log_joint_density(s, data, priors);
      },
      expect.shape, expect.scale);
  CHECK_THAT(fit.shape, Catch::Matchers::WithinRel(expect.shape, 1e-3));
  CHECK_THAT(fit.rate, Catch::Matchers::WithinRel(expect.scale, 1e-3));
}

}  // namespace

TEST_CASE("variance conditionals") {
  PriorConfig priors;

  SECTION("sigma2_pi with zero residuals keeps the prior scale") {
    ParameterState s = ParameterState::zeros(1, 1, 2);
    for (auto& p : s.pi) p = 0.1;
    for (std::uint64_t seed : {1u, 2u}) {
      Rng r(seed);
      CHECK(draw_sigma2_pi(s, priors, r) == ig_draw(seed, 1.0, 0.5));
    }
  }

  SECTION("sigma2_pi with one residual of 2") {
    ParameterState s = ParameterState::zeros(1, 1, 2);
    s.pi_at(0, 0) = inv_logit(-2.0);
    s.pi_at(0, 1) = inv_logit(0.0);  // transition residual 2 with phi = 0
    for (std::uint64_t seed : {1u, 2u}) {
      Rng r(seed);
      CHECK(draw_sigma2_pi(s, priors, r) == ig_draw(seed, 1.0, 2.5));
    }
  }

  SECTION("sigma2_gamma with zero biases, J = 2") {
    ParameterState s = ParameterState::zeros(1, 2, 1);
    for (std::uint64_t seed : {1u, 2u}) {
      Rng r(seed);
      CHECK(draw_sigma2_gamma(s, priors, r) == ig_draw(seed, 2.0, 0.001));
    }
  }

  SECTION("sigma2_0 with symmetric logits") {
    ParameterState s = ParameterState::zeros(2, 1, 1);
    s.pi_at(0, 0) = inv_logit(1.0);
    s.pi_at(1, 0) = inv_logit(-1.0);
    s.mu0 = 0;
    for (std::uint64_t seed : {1u, 2u}) {
      Rng r(seed);
      CHECK(draw_sigma2_0(s, priors, r) == ig_draw(seed, 1.5, 1.5));
    }
  }

  SECTION("draws follow the analytic inverse-gamma law") {
    ParameterState s = ParameterState::zeros(2, 1, 3);
    Rng init(9);
    for (auto& p : s.pi) p = init.uniform(0.05, 0.3);
    // oracle shape/scale computed independently
    double ss = 0;
    for (int i = 0; i < 2; ++i)
      for (int t = 1; t <= 2; ++t) {
        const double r = logit(s.pi_at(i, t)) - logit(s.pi_at(i, t - 1));
        ss += r * r;
      }
    const double shape = 0.5 + 0.5 * 4, scale = 0.5 + 0.5 * ss;
    Rng r(77);
    std::vector<double> lib(20000), oracle(20000);
    std::mt19937_64 eng(123456);
    std::gamma_distribution<double> g(shape, 1.0 / scale);
    for (auto& x : lib) x = draw_sigma2_pi(s, priors, r);
    for (auto& x : oracle) x = 1.0 / g(eng);
    CHECK(testutil::ks_two_sample(lib, oracle) < 0.025);
  }

  SECTION("all six match quadrature on a random instance") {
    Rng rng(46);
    auto inst = tiny_with_years(rng, 1);
    const auto& d = inst.data;
    const auto& s = inst.state;
    const int I = s.n_cities;
    const int T = s.n_years - 1;

    double ss_pi = 0;
    for (int i = 0; i < I; ++i)
      for (int t = 1; t <= T; ++t) {
        const double r =
            logit(s.pi_at(i, t)) - logit(s.pi_at(i, t - 1)) - s.phi_at(t);
        ss_pi += r * r;
      }
    check_variance_conditional(
        d, s, priors, {0.5 + 0.5 * I * T, 0.5 + 0.5 * ss_pi},
        [&](const ParameterState& st, Rng& r) {
          return draw_sigma2_pi(st, priors, r);
        },
        [](ParameterState& st, double v) { st.sigma2_pi = v; });

    double ss_phi = 0;
    for (double f : s.phi) ss_phi += f * f;
    check_variance_conditional(
        d, s, priors, {0.5 + 0.5 * T, 0.5 + 0.5 * ss_phi},
        [&](const ParameterState& st, Rng& r) {
          return draw_sigma2_phi(st, priors, r);
        },
        [](ParameterState& st, double v) { st.sigma2_phi = v; });

    double ss_gamma = 0;
    for (double g : s.gamma) ss_gamma += g * g;
    check_variance_conditional(
        d, s, priors,
        {1.0 + 0.5 * s.gamma.size(), 0.001 + 0.5 * ss_gamma},
        [&](const ParameterState& st, Rng& r) {
          return draw_sigma2_gamma(st, priors, r);
        },
        [](ParameterState& st, double v) { st.sigma2_gamma = v; });

    double ss_delta = 0;
    for (double x : s.delta) ss_delta += x * x;
    check_variance_conditional(
        d, s, priors, {1.0 + 0.5 * I, 0.001 + 0.5 * ss_delta},
        [&](const ParameterState& st, Rng& r) {
          return draw_sigma2_delta(st, priors, r);
        },
        [](ParameterState& st, double v) { st.sigma2_delta = v; });

    double ss_eps = 0;
    for (const auto& rec : d.multiplier_records) {
      const double log_n =
          std::log(s.pi_at(rec.city, rec.year) * d.reference(rec.city, rec.year));
      const double resid = rec.log_estimate - log_n - s.theta -
                           s.delta[rec.city] - s.gamma[rec.subgroup];
      ss_eps += rec.sample_size * resid * resid;
    }
    check_variance_conditional(
        d, s, priors,
        {1.0 + 0.5 * d.multiplier_records.size(), 0.001 + 0.5 * ss_eps},
        [&](const ParameterState& st, Rng& r) {
          return draw_sigma2_eps(d, st, priors, r);
        },
        [](ParameterState& st, double v) { st.sigma2_eps = v; });

    double ss_0 = 0;
    for (int i = 0; i < I; ++i) {
      const double r = logit(s.pi_at(i, 0)) - s.mu0;
      ss_0 += r * r;
    }
    check_variance_conditional(
        d, s, priors, {0.5 + 0.5 * I, 0.5 + 0.5 * ss_0},
        [&](const ParameterState& st, Rng& r) {
          return draw_sigma2_0(st, priors, r);
        },
        [](ParameterState& st, double v) { st.sigma2_0 = v; });
  }
}

TEST_CASE("metropolis prevalence update") {
  SamplerConfig config;

  SECTION("proposals at or above one are rejected") {
    ObservedDataset data = empty_data(1, 1, 0);
    ParameterState s = ParameterState::zeros(1, 1, 1);
    s.pi_at(0, 0) = 0.5;
    config.proposal_sd = 2.0;
    int n_big = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng probe(seed);
      const double prop = 0.5 * std::exp(probe.normal(0.0, 2.0));
      if (prop < 1.0) continue;
      ++n_big;
      Rng r(seed);
      auto [value, accepted] = mh_update_pi(0, 0, data, s, config, r);
      CHECK(value == 0.5);
      CHECK_FALSE(accepted);
    }
    CHECK(n_big > 10);
  }

  SECTION("vanishing proposal sd accepts everything") {
    Rng rng(48);
    auto inst = testutil::make_tiny_instance(rng);
    config.proposal_sd = 1e-12;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng r(seed);
      auto [value, accepted] =
          mh_update_pi(0, 0, inst.data, inst.state, config, r);
      CHECK(accepted);
    }
  }

  SECTION("long-run histogram matches the grid conditional") {
    ObservedDataset data = empty_data(1, 1, 0, 40000);
    ParameterState s = ParameterState::zeros(1, 1, 1);
    s.pi_at(0, 0) = 0.05;
    s.mu0 = logit(0.05);
    s.sigma2_0 = 0.8;
    s.sigma2_eps = 4.0;
    const double log_n = std::log(0.05 * 40000);
    data.multiplier_records.push_back(
        MultiplierRecord::make(0, 0, 0, 0.3 * std::exp(log_n + 0.4), 0.3, 8));
    data.finalize();

    // grid cdf of the conditional
    const int n = 20001;
    std::vector<double> xs(n), lw(n);
    double lmax = -1e300;
    for (int k = 0; k < n; ++k) {
      xs[k] = 1e-5 + (0.999 - 1e-5) * k / (n - 1);
      lw[k] = pi_local_logdensity(0, 0, xs[k], data, s);
      lmax = std::max(lmax, lw[k]);
    }
    std::vector<double> cum(n);
    double total = 0;
    for (int k = 0; k < n; ++k) {
      total += std::exp(lw[k] - lmax);
      cum[k] = total;
    }
    auto cdf = [&](double x) {
      const auto it = std::lower_bound(xs.begin(), xs.end(), x);
      if (it == xs.begin()) return 0.0;
      return cum[it - xs.begin() - 1] / total;
    };

    Rng r(99);
    std::vector<double> draws;
    draws.reserve(40000);
    for (int m = 0; m < 41000; ++m) {
      auto [value, accepted] = mh_update_pi(0, 0, data, s, config, r);
      s.pi_at(0, 0) = value;
      if (m >= 1000) draws.push_back(value);
    }
    CHECK(testutil::ks_against_cdf(draws, cdf) < 0.05);
  }
}

TEST_CASE("sweep") {
  Rng rng(50);
  auto inst = testutil::make_tiny_instance(rng);
  PriorConfig priors;
  SamplerConfig config;

  SECTION("same seed, same result") {
    ParameterState a = inst.state, b = inst.state;
    Rng r1(7), r2(7);
    sweep(a, inst.data, priors, config, r1);
    sweep(b, inst.data, priors, config, r2);
    CHECK(a.pi == b.pi);
    CHECK(a.mu0 == b.mu0);
    CHECK(a.theta == b.theta);
    CHECK(a.delta == b.delta);
    CHECK(a.gamma == b.gamma);
    CHECK(a.phi == b.phi);
    CHECK(a.sigma2_eps == b.sigma2_eps);
  }

  SECTION("joint stays finite across sweeps") {
    ParameterState s = inst.state;
    Rng r(8);
    for (int m = 0; m < 50; ++m) {
      sweep(s, inst.data, priors, config, r);
      REQUIRE(std::isfinite(log_joint_density(s, inst.data, priors)));
      REQUIRE(s.valid());
    }
  }
}

TEST_CASE("init_state") {
  PriorConfig priors;
  SamplerConfig config;

  SECTION("prior draw is reproducible") {
    ObservedDataset data = empty_data(3, 2, 2);
    config.init_mode = InitMode::PriorDraw;
    Rng r1(5), r2(5);
    auto a = init_state(data, priors, config, r1);
    auto b = init_state(data, priors, config, r2);
    CHECK(a.pi == b.pi);
    CHECK(a.theta == b.theta);
    CHECK(a.sigma2_eps == b.sigma2_eps);
    CHECK(a.valid());
  }

  SECTION("data-informed single record pins the pooled prevalence") {
    ObservedDataset data = empty_data(1, 1, 0, 50000);
    data.multiplier_records.push_back(
        MultiplierRecord::make(0, 0, 0, 0.2 * 2500.0, 0.2, 10));
    data.finalize();
    Rng r(5);
    auto s = init_state(data, priors, config, r);
    CHECK_THAT(s.pi_at(0, 0), Catch::Matchers::WithinRel(0.05, 1e-12));
    CHECK_THAT(s.mu0, Catch::Matchers::WithinRel(logit(0.05), 1e-12));
    CHECK(s.delta[0] == 0.0);
    CHECK(s.gamma[0] == 0.0);
  }

  SECTION("data-informed clamps extreme prevalence to one half") {
    ObservedDataset data = empty_data(1, 1, 0, 1000);
    data.multiplier_records.push_back(
        MultiplierRecord::make(0, 0, 0, 0.5 * 900.0, 0.5, 10));
    data.finalize();
    Rng r(5);
    auto s = init_state(data, priors, config, r);
    CHECK(s.pi_at(0, 0) == 0.5);
  }

  SECTION("data-informed with no records falls back to prior draw") {
    ObservedDataset data = empty_data(2, 1, 1);
    Rng r1(5), r2(5);
    config.init_mode = InitMode::DataInformed;
    auto a = init_state(data, priors, config, r1);
    config.init_mode = InitMode::PriorDraw;
    auto b = init_state(data, priors, config, r2);
    CHECK(a.pi == b.pi);
    CHECK(a.sigma2_eps == b.sigma2_eps);
  }
}

TEST_CASE("run_chain") {
  PriorConfig priors;

  SECTION("retained count and reproducibility") {
    Rng rng(51);
    auto inst = testutil::make_tiny_instance(rng);
    SamplerConfig config;
    config.n_iter = 300;
    config.burn_in = 100;
    config.thin = 7;
    config.n_chains = 3;
    config.seed = 42;
    auto a = run_chain(inst.data, priors, config);
    auto b = run_chain(inst.data, priors, config);
    REQUIRE(a.chains.size() == 3);
    CHECK(a.total_draws() == 3 * ((300 - 100) / 7));
    for (int c = 0; c < 3; ++c) {
      REQUIRE(a.chains[c].draws.size() == b.chains[c].draws.size());
      for (std::size_t k = 0; k < a.chains[c].draws.size(); ++k) {
        CHECK(a.chains[c].draws[k].pi == b.chains[c].draws[k].pi);
        CHECK(a.chains[c].draws[k].theta == b.chains[c].draws[k].theta);
      }
      CHECK(a.chains[c].pi_accept_rate == b.chains[c].pi_accept_rate);
    }
    // chains differ from each other
    CHECK(a.chains[0].draws.back().theta != a.chains[1].draws.back().theta);
  }

  SECTION("rejects invalid configs") {
    Rng rng(52);
    auto inst = testutil::make_tiny_instance(rng);
    SamplerConfig config;
    config.burn_in = config.n_iter;
    CHECK_THROWS_AS(run_chain(inst.data, priors, config),
                    std::invalid_argument);
  }

  SECTION("prior-only input leaves theta at its prior") {
    ObservedDataset data = empty_data(2, 1, 1);
    SamplerConfig config;
    config.n_iter = 4000;
    config.burn_in = 500;
    config.thin = 5;
    config.n_chains = 2;
    config.seed = 9;
    auto s = run_chain(data, priors, config);
    std::vector<double> thetas;
    for (const auto& c : s.chains)
      for (const auto& d : c.draws) thetas.push_back(d.theta);
    double m = 0, v = 0;
    for (double t : thetas) m += t;
    m /= thetas.size();
    for (double t : thetas) v += (t - m) * (t - m);
    v /= thetas.size() - 1;
    CHECK_THAT(m, Catch::Matchers::WithinAbs(0.0, 0.12));
    CHECK_THAT(v, Catch::Matchers::WithinAbs(1.0, 0.15));
  }
}
