// Command-line driver: fit, simulate, study, loo, ppc, contribution,
// validate. Every flag overrides its counterpart in the optional JSON
// config file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "popsize/diagnostics.hpp"
#include "popsize/io.hpp"
#include "popsize/sampler.hpp"
#include "popsize/simulate.hpp"
#include "popsize/summary.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string multiplier_csv;
  std::string nsum_csv;
  std::string population_csv;
  std::string out_dir = "out";
  popsize::SamplerConfig sampler;
  popsize::PriorConfig priors;
  std::vector<double> sigma_c_grid{0, 0.2, 0.4, 0.6, 0.8};
  int n_datasets = 50;
  std::string mode = "year-bias";
  std::vector<std::string> remove_sources;
  popsize::SimulationConfig sim;
};

void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j = json::parse(in);
  rc.multiplier_csv = j.value("multiplier_csv", rc.multiplier_csv);
  rc.nsum_csv = j.value("nsum_csv", rc.nsum_csv);
  rc.population_csv = j.value("population_csv", rc.population_csv);
  rc.out_dir = j.value("out", rc.out_dir);
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    rc.sampler.n_iter = s.value("iters", rc.sampler.n_iter);
    rc.sampler.burn_in = s.value("burn_in", rc.sampler.burn_in);
    rc.sampler.thin = s.value("thin", rc.sampler.thin);
    rc.sampler.n_chains = s.value("chains", rc.sampler.n_chains);
    rc.sampler.proposal_sd = s.value("proposal_sd", rc.sampler.proposal_sd);
    rc.sampler.seed = s.value("seed", rc.sampler.seed);
  }
  if (j.contains("priors")) {
    const auto& p = j["priors"];
    rc.priors.theta_prior_var =
        p.value("theta_prior_var", rc.priors.theta_prior_var);
    rc.priors.mu0_prior_var = p.value("mu0_prior_var", rc.priors.mu0_prior_var);
    auto ig = [&](const char* key, popsize::IgPrior& prior) {
      if (p.contains(key)) {
        prior.shape = p[key].value("shape", prior.shape);
        prior.scale = p[key].value("scale", prior.scale);
      }
    };
    ig("sigma2_pi", rc.priors.sigma2_pi);
    ig("sigma2_phi", rc.priors.sigma2_phi);
    ig("sigma2_0", rc.priors.sigma2_0);
    ig("sigma2_gamma", rc.priors.sigma2_gamma);
    ig("sigma2_delta", rc.priors.sigma2_delta);
    ig("sigma2_eps", rc.priors.sigma2_eps);
  }
  if (j.contains("study")) {
    const auto& s = j["study"];
    if (s.contains("sigma_c"))
      rc.sigma_c_grid = s["sigma_c"].get<std::vector<double>>();
    rc.n_datasets = s.value("datasets", rc.n_datasets);
    rc.mode = s.value("mode", rc.mode);
  }
}

json config_echo(const RunConfig& rc) {
  json j;
  j["multiplier_csv"] = rc.multiplier_csv;
  j["nsum_csv"] = rc.nsum_csv;
  j["population_csv"] = rc.population_csv;
  j["out"] = rc.out_dir;
  j["sampler"] = {{"iters", rc.sampler.n_iter},
                  {"burn_in", rc.sampler.burn_in},
                  {"thin", rc.sampler.thin},
                  {"chains", rc.sampler.n_chains},
                  {"proposal_sd", rc.sampler.proposal_sd},
                  {"seed", rc.sampler.seed}};
  return j;
}

popsize::ViolationMode parse_mode(const std::string& mode) {
  if (mode == "year-bias") return popsize::ViolationMode::YearBias;
  if (mode == "interaction")
    return popsize::ViolationMode::CitySubgroupInteraction;
  if (mode == "none") return popsize::ViolationMode::None;
  throw CLI::ValidationError("--mode must be year-bias, interaction, or none");
}

popsize::ObservedDataset load(const RunConfig& rc) {
  return popsize::load_dataset(rc.multiplier_csv, rc.nsum_csv,
                               rc.population_csv);
}

void write_residual_csvs(const popsize::DiagnosticsReport& report,
                         const popsize::ObservedDataset& data,
                         const fs::path& dir) {
  std::string m = "city,subgroup,year,G,fitted,residual\n";
  for (const auto& r : report.multiplier)
    m += data.city_ids[r.city] + "," + data.subgroup_ids[r.subgroup] + "," +
         std::to_string(data.year_min + r.year) + "," +
         popsize::detail::fmt(r.sample_size) + "," +
         popsize::detail::fmt(r.fitted) + "," +
         popsize::detail::fmt(r.residual) + "\n";
  popsize::detail::atomic_write(dir / "residuals_multiplier.csv", m);

  std::string n = "city,year,fitted,residual\n";
  for (const auto& r : report.nsum)
    n += data.city_ids[r.city] + "," + std::to_string(data.year_min + r.year) +
         "," + popsize::detail::fmt(r.fitted) + "," +
         popsize::detail::fmt(r.residual) + "\n";
  popsize::detail::atomic_write(dir / "residuals_nsum.csv", n);
}

popsize::DiagnosticsReport residual_report(
    const popsize::PosteriorSummary& summary,
    const popsize::ObservedDataset& data) {
  popsize::DiagnosticsReport report;
  report.multiplier = popsize::multiplier_residuals(summary, data);
  report.nsum = popsize::nsum_residuals(summary, data);
  if (!report.multiplier.empty()) {
    report.year_summary = popsize::year_residual_summary(report.multiplier);
    std::vector<double> vals;
    for (const auto& r : report.multiplier) vals.push_back(r.residual);
    if (vals.size() >= 2)
      report.multiplier_ad_stat = popsize::anderson_darling_statistic(vals);
  }
  if (report.nsum.size() >= 2) {
    std::vector<double> vals;
    for (const auto& r : report.nsum) vals.push_back(r.residual);
    report.nsum_ad_stat = popsize::anderson_darling_statistic(vals);
  }
  return report;
}

int run(int argc, char** argv) {
  CLI::App app{"Population size estimation from combined multiplier and "
               "network scale-up estimates"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file");

  auto add_io = [&](CLI::App* cmd) {
    cmd->add_option("--multiplier", rc.multiplier_csv, "multiplier.csv path");
    cmd->add_option("--nsum", rc.nsum_csv, "nsum.csv path");
    cmd->add_option("--population", rc.population_csv, "population.csv path");
  };
  auto add_sampler = [&](CLI::App* cmd) {
    cmd->add_option("--seed", rc.sampler.seed, "RNG seed");
    cmd->add_option("--iters", rc.sampler.n_iter, "iterations per chain");
    cmd->add_option("--burn-in", rc.sampler.burn_in, "burn-in iterations");
    cmd->add_option("--thin", rc.sampler.thin, "thinning interval");
    cmd->add_option("--chains", rc.sampler.n_chains, "number of chains");
    cmd->add_option("--proposal-sd", rc.sampler.proposal_sd,
                    "prevalence MH proposal sd");
  };
  auto add_out = [&](CLI::App* cmd) {
    cmd->add_option("--out", rc.out_dir, "output directory");
  };

  auto* fit = app.add_subcommand("fit", "fit the model and write summaries");
  add_io(fit);
  add_sampler(fit);
  add_out(fit);

  auto* validate = app.add_subcommand("validate", "schema-check input files");
  add_io(validate);

  auto* simulate =
      app.add_subcommand("simulate", "emit one synthetic dataset with truth");
  add_out(simulate);
  std::string sim_mode = "none";
  simulate->add_option("--seed", rc.sim.seed, "simulation seed");
  simulate->add_option("--cities", rc.sim.n_cities, "number of cities");
  simulate->add_option("--years", rc.sim.n_years, "number of years");
  simulate->add_option("--subgroups", rc.sim.n_subgroups,
                       "number of subgroups");
  simulate->add_option("--sigma-c-value", rc.sim.sigma_c,
                       "violation magnitude");
  simulate->add_option("--mode", sim_mode,
                       "violation mode: none, year-bias, interaction");

  auto* study = app.add_subcommand("study", "run the bias simulation study");
  add_sampler(study);
  add_out(study);
  study->add_option("--sigma-c", rc.sigma_c_grid, "sigma_c grid")
      ->delimiter(',');
  study->add_option("--datasets", rc.n_datasets, "datasets per grid point");
  study->add_option("--mode", rc.mode, "year-bias or interaction");
  study->add_option("--cities", rc.sim.n_cities, "number of cities");
  study->add_option("--years", rc.sim.n_years, "number of years");
  study->add_option("--subgroups", rc.sim.n_subgroups,
                    "number of subgroups");

  auto* loo = app.add_subcommand("loo", "leave-one-city-out cross validation");
  add_io(loo);
  add_sampler(loo);
  add_out(loo);

  auto* ppc = app.add_subcommand("ppc", "posterior predictive checks");
  add_io(ppc);
  add_sampler(ppc);
  add_out(ppc);

  auto* contribution =
      app.add_subcommand("contribution", "data-source contribution analysis");
  add_io(contribution);
  add_sampler(contribution);
  add_out(contribution);
  contribution->add_option("--remove", rc.remove_sources,
                           "sources to remove (default: all)");

  argv = app.ensure_utf8(argv);
  // config file values are applied before parsing so flags override them;
  // the path has to come from a pre-scan since parsing happens in one pass
  for (int a = 1; a < argc; ++a) {
    const std::string_view arg = argv[a];
    if (arg == "--config" && a + 1 < argc)
      config_path = argv[a + 1];
    else if (arg.rfind("--config=", 0) == 0)
      config_path = std::string(arg.substr(9));
  }
  if (!config_path.empty()) apply_config_file(rc, config_path);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the error and usage text
    return 1;
  }

  if (*validate) {
    popsize::ObservedDataset data = load(rc);
    std::cout << "ok: " << data.n_cities() << " cities, " << data.n_subgroups()
              << " subgroups, years " << data.year_min << "-" << data.year_max
              << ", " << data.multiplier_records.size()
              << " multiplier records, " << data.nsum_records.size()
              << " NSUM records\n";
    return 0;
  }

  if (*fit) {
    popsize::ObservedDataset data = load(rc);
    auto samples = popsize::run_chain(data, rc.priors, rc.sampler);
    auto summary = popsize::summarize(samples, data);
    auto report = residual_report(summary, data);
    const bool have_resid = !report.multiplier.empty() || !report.nsum.empty();
    auto files = popsize::write_summary(
        summary, have_resid ? &report : nullptr, data, config_echo(rc),
        rc.out_dir);
    if (have_resid) write_residual_csvs(report, data, rc.out_dir);
    std::cout << "wrote " << files.size() << " files to " << rc.out_dir
              << "\n";
    return 0;
  }

  if (*simulate) {
    rc.sim.violation_mode = parse_mode(sim_mode);
    if (rc.sim.n_years != 4)
      rc.sim.layout = popsize::StudyLayout{
          {1}, [&] {
            std::vector<int> ys;
            for (int t = 0; t < rc.sim.n_years; ++t)
              if (t != 1) ys.push_back(t);
            return ys;
          }()};
    auto [data, truth] = popsize::simulate_dataset(rc.sim, rc.sim.seed);
    popsize::write_dataset(data, rc.out_dir);
    json t;
    t["theta"] = truth.theta_true;
    t["true_size"] = truth.true_size;
    t["year_bias"] = truth.year_bias;
    t["interaction_bias"] = truth.interaction_bias;
    popsize::detail::atomic_write(fs::path(rc.out_dir) / "truth.json",
                                  t.dump(2) + "\n");
    std::cout << "wrote synthetic dataset to " << rc.out_dir << "\n";
    return 0;
  }

  if (*study) {
    popsize::SimulationConfig cfg = rc.sim;
    cfg.violation_mode = parse_mode(rc.mode);
    cfg.seed = rc.sampler.seed;
    auto summary = popsize::run_bias_study(cfg, rc.sigma_c_grid, rc.n_datasets,
                                           rc.sampler);
    fs::create_directories(rc.out_dir);
    popsize::write_study(summary, fs::path(rc.out_dir) / "study.csv");
    std::cout << "wrote " << summary.rows.size() << " grid rows to "
              << (fs::path(rc.out_dir) / "study.csv").string() << "\n";
    return 0;
  }

  if (*loo) {
    popsize::ObservedDataset data = load(rc);
    auto loo_report = popsize::loo_cv(data, rc.priors, rc.sampler);
    popsize::DiagnosticsReport report;
    report.has_loo = true;
    report.loo = loo_report;
    fs::create_directories(rc.out_dir);
    popsize::detail::atomic_write(
        fs::path(rc.out_dir) / "diagnostics.json",
        popsize::diagnostics_to_json(report).dump(2) + "\n");
    std::string csv =
        "method,city,subgroup,year,observed,pred_mean,pred_lo,pred_hi\n";
    for (const auto& p : loo_report.predictions)
      csv += std::string(p.is_multiplier ? "multiplier" : "nsum") + "," +
             data.city_ids[p.city] + "," +
             (p.subgroup >= 0 ? data.subgroup_ids[p.subgroup] : "") + "," +
             std::to_string(data.year_min + p.year) + "," +
             popsize::detail::fmt(p.observed) + "," +
             popsize::detail::fmt(p.pred_mean) + "," +
             popsize::detail::fmt(p.pred_lo) + "," +
             popsize::detail::fmt(p.pred_hi) + "\n";
    popsize::detail::atomic_write(fs::path(rc.out_dir) / "loo_predictions.csv",
                                  csv);
    std::cout << "multiplier coverage " << loo_report.multiplier_coverage
              << ", correlation " << loo_report.multiplier_correlation
              << "; nsum coverage " << loo_report.nsum_coverage
              << ", correlation " << loo_report.nsum_correlation << "\n";
    return 0;
  }

  if (*ppc) {
    popsize::ObservedDataset data = load(rc);
    auto samples = popsize::run_chain(data, rc.priors, rc.sampler);
    auto ppc_report = popsize::posterior_predictive_check(samples, data);
    popsize::DiagnosticsReport report;
    report.has_ppc = true;
    report.ppc = ppc_report;
    fs::create_directories(rc.out_dir);
    popsize::detail::atomic_write(
        fs::path(rc.out_dir) / "diagnostics.json",
        popsize::diagnostics_to_json(report).dump(2) + "\n");
    std::string csv = "source,observed,tail_prob,replicate\n";
    for (const auto& s : ppc_report.stats)
      for (double v : s.replicated)
        csv += s.source + "," + popsize::detail::fmt(s.observed) + "," +
               popsize::detail::fmt(s.tail_prob) + "," +
               popsize::detail::fmt(v) + "\n";
    popsize::detail::atomic_write(
        fs::path(rc.out_dir) / "ppc_replications.csv", csv);
    std::cout << "ppc statistics: " << ppc_report.stats.size() << "\n";
    return 0;
  }

  if (*contribution) {
    popsize::ObservedDataset data = load(rc);
    auto contrib = popsize::source_contribution(data, rc.priors, rc.sampler);
    if (!rc.remove_sources.empty()) {
      // keep only the requested removals (plus the full fit)
      std::vector<popsize::ContributionRow> rows;
      for (const auto& r : contrib.rows)
        if (r.removed == "(none)" ||
            std::find(rc.remove_sources.begin(), rc.remove_sources.end(),
                      r.removed) != rc.remove_sources.end())
          rows.push_back(r);
      contrib.rows = std::move(rows);
    }
    fs::create_directories(rc.out_dir);
    std::string csv = "removed,year,mean_prevalence,mean_ci_width\n";
    for (const auto& r : contrib.rows)
      csv += r.removed + "," + std::to_string(data.year_min + r.year) + "," +
             popsize::detail::fmt(r.mean_prevalence) + "," +
             popsize::detail::fmt(r.mean_ci_width) + "\n";
    popsize::detail::atomic_write(fs::path(rc.out_dir) / "contribution.csv",
                                  csv);
    for (const auto& s : contrib.skipped)
      std::cerr << "warning: skipped removal of '" << s
                << "' (would leave an empty dataset)\n";
    std::cout << "wrote contribution grid (" << contrib.rows.size()
              << " rows) to " << rc.out_dir << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const popsize::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
