#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "popsize/data.hpp"
#include "popsize/diagnostics.hpp"
#include "popsize/simulate.hpp"
#include "popsize/summary.hpp"

namespace popsize {

inline constexpr const char* kVersion = "0.1.0";

struct ParseError : std::runtime_error {
  ParseError(const std::string& file, long line, const std::string& field,
             const std::string& message)
      : std::runtime_error(file + ":" + std::to_string(line) + ": field '" +
                           field + "': " + message) {}
};

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' '))
      cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    cells.push_back(cell.substr(start));
  }
  return cells;
}

struct Table {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::pair<long, std::vector<std::string>>> rows;  // line, cells
};

inline Table read_table(const std::string& path,
                        const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "file", "cannot open file");
  Table t;
  t.file = path;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (lineno == 1) {
      if (cells != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += h + ",";
        throw ParseError(path, 1, "header",
                         "expected header " + want.substr(0, want.size() - 1));
      }
      t.header = cells;
      continue;
    }
    if (cells.size() != expected_header.size())
      throw ParseError(path, lineno, "row",
                       "expected " + std::to_string(expected_header.size()) +
                           " columns, got " + std::to_string(cells.size()));
    t.rows.emplace_back(lineno, std::move(cells));
  }
  if (t.header.empty())
    throw ParseError(path, 1, "header", "file is empty");
  return t;
}

inline double parse_double(const Table& t, long line, const std::string& field,
                           const std::string& text) {
  try {
    std::size_t pos = 0;
    double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(t.file, line, field, "not a number: '" + text + "'");
  }
}

inline long parse_long(const Table& t, long line, const std::string& field,
                       const std::string& text) {
  try {
    std::size_t pos = 0;
    long v = std::stol(text, &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(t.file, line, field, "not an integer: '" + text + "'");
  }
}

}  // namespace csv

// Loads and validates the three input files. Schemas:
//   multiplier.csv: city,subgroup,year,Y,P,G
//   nsum.csv:       city,year,N,S
//   population.csv: city,year,R
inline ObservedDataset load_dataset(const std::string& multiplier_csv,
                                    const std::string& nsum_csv,
                                    const std::string& population_csv) {
  auto pop = csv::read_table(population_csv, {"city", "year", "R"});
  auto mult =
      csv::read_table(multiplier_csv, {"city", "subgroup", "year", "Y", "P", "G"});
  auto nsum = csv::read_table(nsum_csv, {"city", "year", "N", "S"});

  ObservedDataset data;
  std::map<std::string, int> city_index;
  std::map<std::pair<int, long>, double> pop_cells;  // (city, calendar year)
  long pop_ymin = 0, pop_ymax = 0;
  bool pop_years_seen = false;
  for (const auto& [line, cells] : pop.rows) {
    const std::string& city = cells[0];
    if (!city_index.count(city)) {
      city_index[city] = static_cast<int>(data.city_ids.size());
      data.city_ids.push_back(city);
    }
    const long year = csv::parse_long(pop, line, "year", cells[1]);
    const double R = csv::parse_double(pop, line, "R", cells[2]);
    if (!(R > 0))
      throw ParseError(pop.file, line, "R", "must be positive");
    pop_cells[{city_index[city], year}] = R;
    if (!pop_years_seen) {
      pop_ymin = pop_ymax = year;
      pop_years_seen = true;
    } else {
      pop_ymin = std::min(pop_ymin, year);
      pop_ymax = std::max(pop_ymax, year);
    }
  }
  if (data.city_ids.empty())
    throw ParseError(pop.file, 1, "city", "no cities defined");

  std::map<std::string, int> subgroup_index;
  struct RawMult {
    long line;
    int city, subgroup;
    long year;
    double Y, P, G;
  };
  struct RawNsum {
    long line;
    int city;
    long year;
    double N, S;
  };
  std::vector<RawMult> raw_mult;
  std::vector<RawNsum> raw_nsum;
  long ymin = 0, ymax = 0;
  bool years_seen = false;
  auto note_year = [&](long y) {
    if (!years_seen) {
      ymin = ymax = y;
      years_seen = true;
    } else {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  };

  for (const auto& [line, cells] : mult.rows) {
    RawMult r;
    r.line = line;
    if (!city_index.count(cells[0]))
      throw ParseError(mult.file, line, "city",
                       "unknown city '" + cells[0] + "'");
    r.city = city_index[cells[0]];
    if (!subgroup_index.count(cells[1])) {
      subgroup_index[cells[1]] = static_cast<int>(data.subgroup_ids.size());
      data.subgroup_ids.push_back(cells[1]);
    }
    r.subgroup = subgroup_index[cells[1]];
    r.year = csv::parse_long(mult, line, "year", cells[2]);
    r.Y = csv::parse_double(mult, line, "Y", cells[3]);
    r.P = csv::parse_double(mult, line, "P", cells[4]);
    r.G = csv::parse_double(mult, line, "G", cells[5]);
    if (!(r.Y > 0))
      throw ParseError(mult.file, line, "Y", "must be positive");
    if (!(r.P > 0 && r.P < 1))
      throw ParseError(mult.file, line, "P", "must be inside (0,1)");
    if (!(r.G >= 1))
      throw ParseError(mult.file, line, "G", "must be >= 1");
    note_year(r.year);
    raw_mult.push_back(r);
  }
  for (const auto& [line, cells] : nsum.rows) {
    RawNsum r;
    r.line = line;
    if (!city_index.count(cells[0]))
      throw ParseError(nsum.file, line, "city",
                       "unknown city '" + cells[0] + "'");
    r.city = city_index[cells[0]];
    r.year = csv::parse_long(nsum, line, "year", cells[1]);
    r.N = csv::parse_double(nsum, line, "N", cells[2]);
    r.S = csv::parse_double(nsum, line, "S", cells[3]);
    if (!(r.N > 0))
      throw ParseError(nsum.file, line, "N", "must be positive");
    if (!(r.S > 0))
      throw ParseError(nsum.file, line, "S", "must be positive");
    note_year(r.year);
    raw_nsum.push_back(r);
  }
  if (!years_seen) {
    // no records at all; fall back to the population file's span
    ymin = pop_ymin;
    ymax = pop_ymax;
  }

  data.year_min = static_cast<int>(ymin);
  data.year_max = static_cast<int>(ymax);
  const int ny = data.n_years();
  data.reference_population.resize(
      static_cast<std::size_t>(data.city_ids.size()) * ny);
  for (std::size_t i = 0; i < data.city_ids.size(); ++i)
    for (int t = 0; t < ny; ++t) {
      auto it = pop_cells.find({static_cast<int>(i), ymin + t});
      if (it == pop_cells.end())
        throw ParseError(pop.file, 1, "R",
                         "missing reference population for city '" +
                             data.city_ids[i] + "' year " +
                             std::to_string(ymin + t));
      data.reference_population[i * ny + t] = it->second;
    }

  std::map<std::tuple<int, int, long>, long> mult_keys;
  for (const auto& r : raw_mult) {
    auto key = std::make_tuple(r.city, r.subgroup, r.year);
    if (mult_keys.count(key))
      throw ParseError(mult.file, r.line, "city",
                       "duplicate (city, subgroup, year) key, first at line " +
                           std::to_string(mult_keys[key]));
    mult_keys[key] = r.line;
    data.multiplier_records.push_back(MultiplierRecord::make(
        r.city, r.subgroup, static_cast<int>(r.year - ymin), r.Y, r.P, r.G));
  }
  std::map<std::pair<int, long>, long> nsum_keys;
  for (const auto& r : raw_nsum) {
    auto key = std::make_pair(r.city, r.year);
    if (nsum_keys.count(key))
      throw ParseError(nsum.file, r.line, "city",
                       "duplicate (city, year) key, first at line " +
                           std::to_string(nsum_keys[key]));
    nsum_keys[key] = r.line;
    data.nsum_records.push_back(
        NsumRecord::make(r.city, static_cast<int>(r.year - ymin), r.N, r.S));
  }
  data.finalize();
  return data;
}

// ---------------------------------------------------------------------------
// Writers

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// write-temp-then-rename so partially written files never appear
inline void atomic_write(const std::filesystem::path& path,
                         const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void write_dataset(const ObservedDataset& data,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string mult = "city,subgroup,year,Y,P,G\n";
  for (const auto& r : data.multiplier_records)
    mult += data.city_ids[r.city] + "," + data.subgroup_ids[r.subgroup] + "," +
            std::to_string(data.year_min + r.year) + "," +
            detail::fmt(r.count) + "," + detail::fmt(r.proportion) + "," +
            detail::fmt(r.sample_size) + "\n";
  detail::atomic_write(dir / "multiplier.csv", mult);

  std::string nsum = "city,year,N,S\n";
  for (const auto& r : data.nsum_records)
    nsum += data.city_ids[r.city] + "," +
            std::to_string(data.year_min + r.year) + "," +
            detail::fmt(r.estimate) + "," + detail::fmt(r.std_error) + "\n";
  detail::atomic_write(dir / "nsum.csv", nsum);

  std::string pop = "city,year,R\n";
  for (int i = 0; i < data.n_cities(); ++i)
    for (int t = 0; t < data.n_years(); ++t)
      pop += data.city_ids[i] + "," + std::to_string(data.year_min + t) + "," +
             detail::fmt(data.reference(i, t)) + "\n";
  detail::atomic_write(dir / "population.csv", pop);
}

inline nlohmann::json diagnostics_to_json(const DiagnosticsReport& report) {
  nlohmann::json j;
  j["multiplier_residuals"] = nlohmann::json::array();
  for (const auto& r : report.multiplier)
    j["multiplier_residuals"].push_back({{"city", r.city},
                                         {"subgroup", r.subgroup},
                                         {"year", r.year},
                                         {"G", r.sample_size},
                                         {"fitted", r.fitted},
                                         {"residual", r.residual}});
  j["nsum_residuals"] = nlohmann::json::array();
  for (const auto& r : report.nsum)
    j["nsum_residuals"].push_back({{"city", r.city},
                                   {"year", r.year},
                                   {"fitted", r.fitted},
                                   {"residual", r.residual}});
  j["year_means"] = nlohmann::json::array();
  for (const auto& r : report.year_summary.per_year)
    j["year_means"].push_back({{"year", r.year},
                               {"count", r.count},
                               {"mean", r.mean},
                               {"sd", r.sd}});
  j["anderson_darling"] = {{"multiplier", report.multiplier_ad_stat},
                           {"nsum", report.nsum_ad_stat}};
  if (report.has_loo) {
    nlohmann::json loo;
    loo["multiplier_coverage"] = report.loo.multiplier_coverage;
    loo["nsum_coverage"] = report.loo.nsum_coverage;
    loo["multiplier_correlation"] = report.loo.multiplier_correlation;
    loo["nsum_correlation"] = report.loo.nsum_correlation;
    loo["predictions"] = nlohmann::json::array();
    for (const auto& p : report.loo.predictions)
      loo["predictions"].push_back({{"method", p.is_multiplier ? "multiplier"
                                                               : "nsum"},
                                    {"city", p.city},
                                    {"subgroup", p.subgroup},
                                    {"year", p.year},
                                    {"observed", p.observed},
                                    {"pred_mean", p.pred_mean},
                                    {"pred_lo", p.pred_lo},
                                    {"pred_hi", p.pred_hi}});
    j["loo"] = loo;
  }
  if (report.has_ppc) {
    nlohmann::json ppc = nlohmann::json::array();
    for (const auto& s : report.ppc.stats)
      ppc.push_back({{"source", s.source},
                     {"observed", s.observed},
                     {"tail_prob", s.tail_prob},
                     {"replicated", s.replicated}});
    j["ppc"] = ppc;
  }
  if (report.has_contribution) {
    nlohmann::json c;
    c["rows"] = nlohmann::json::array();
    for (const auto& r : report.contribution.rows)
      c["rows"].push_back({{"removed", r.removed},
                           {"year", r.year},
                           {"mean_prevalence", r.mean_prevalence},
                           {"mean_ci_width", r.mean_ci_width}});
    c["skipped"] = report.contribution.skipped;
    j["contribution"] = c;
  }
  return j;
}

// Writes the fit output file set. The diagnostics file is omitted (and the
// omission noted in the manifest) when no report is supplied.
inline std::vector<std::string> write_summary(
    const PosteriorSummary& summary, const DiagnosticsReport* report,
    const ObservedDataset& data, const nlohmann::json& config_echo,
    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;

  auto cell_csv = [&](const std::vector<CellSummary>& cells) {
    std::string s = "city,year,mean,sd,q2.5,q50,q97.5\n";
    for (const auto& c : cells)
      s += data.city_ids[c.city] + "," +
           std::to_string(data.year_min + c.year) + "," +
           detail::fmt(c.mean) + "," + detail::fmt(c.sd) + "," +
           detail::fmt(c.q2_5) + "," + detail::fmt(c.q50) + "," +
           detail::fmt(c.q97_5) + "\n";
    return s;
  };
  detail::atomic_write(out_dir / "prevalence.csv", cell_csv(summary.prevalence));
  written.push_back("prevalence.csv");
  detail::atomic_write(out_dir / "size.csv", cell_csv(summary.size));
  written.push_back("size.csv");

  std::string bias = "param,index,mean,sd,q2.5,q97.5\n";
  for (const auto& s : summary.scalars) {
    std::string param = s.name;
    std::string index;
    auto br = param.find('[');
    if (br != std::string::npos) {
      int idx = std::stoi(param.substr(br + 1));
      if (param.compare(0, 5, "delta") == 0)
        index = data.city_ids[idx];
      else if (param.compare(0, 5, "gamma") == 0)
        index = data.subgroup_ids[idx];
      else
        index = std::to_string(data.year_min + idx);
      param = param.substr(0, br);
    }
    bias += param + "," + index + "," + detail::fmt(s.mean) + "," +
            detail::fmt(s.sd) + "," + detail::fmt(s.q2_5) + "," +
            detail::fmt(s.q97_5) + "\n";
  }
  detail::atomic_write(out_dir / "bias.csv", bias);
  written.push_back("bias.csv");

  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = config_echo;
  if (report) {
    detail::atomic_write(out_dir / "diagnostics.json",
                         diagnostics_to_json(*report).dump(2) + "\n");
    written.push_back("diagnostics.json");
  } else {
    manifest["omitted"] = {"diagnostics.json"};
  }
  manifest["files"] = written;
  detail::atomic_write(out_dir / "manifest.json", manifest.dump(2) + "\n");
  written.push_back("manifest.json");
  return written;
}

inline void write_study(const StudySummary& study,
                        const std::filesystem::path& path) {
  std::string s =
      "sigma_c,n_datasets,mean_error,mean_error_se,err_q2.5,err_q25,err_q75,"
      "err_q97.5,mean_rmse,mean_rmse_se,rmse_q2.5,rmse_q25,rmse_q75,"
      "rmse_q97.5\n";
  for (const auto& r : study.rows)
    s += detail::fmt(r.sigma_c) + "," + std::to_string(r.n_datasets) + "," +
         detail::fmt(r.mean_error) + "," + detail::fmt(r.mean_error_se) + "," +
         detail::fmt(r.err_q2_5) + "," + detail::fmt(r.err_q25) + "," +
         detail::fmt(r.err_q75) + "," + detail::fmt(r.err_q97_5) + "," +
         detail::fmt(r.mean_rmse) + "," + detail::fmt(r.mean_rmse_se) + "," +
         detail::fmt(r.rmse_q2_5) + "," +
         detail::fmt(r.rmse_q25) + "," + detail::fmt(r.rmse_q75) + "," +
         detail::fmt(r.rmse_q97_5) + "\n";
  std::filesystem::create_directories(path.parent_path());
  detail::atomic_write(path, s);
}

}  // namespace popsize
