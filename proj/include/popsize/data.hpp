#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace popsize {

// One multiplier-method observation: a subgroup count Y together with the
// surveyed membership proportion P (sample size G). The model only ever
// consumes M = log(Y/P).
struct MultiplierRecord {
  int city = 0;      // i
  int subgroup = 0;  // j
  int year = 0;      // t, zero-based within the dataset's year range
  double count = 0;          // Y > 0
  double proportion = 0;     // P in (0,1)
  double sample_size = 0;    // G >= 1
  double log_estimate = 0;   // M = log(Y/P), derived

  static MultiplierRecord make(int city, int subgroup, int year, double count,
                               double proportion, double sample_size) {
    MultiplierRecord r;
    r.city = city;
    r.subgroup = subgroup;
    r.year = year;
    r.count = count;
    r.proportion = proportion;
    r.sample_size = sample_size;
    r.log_estimate = std::log(count / proportion);
    return r;
  }
};

// One network-scale-up observation: size estimate N with standard error S.
// The log-scale variance v = S^2/N^2 is treated as known.
struct NsumRecord {
  int city = 0;  // i
  int year = 0;  // t
  double estimate = 0;      // N > 0
  double std_error = 0;     // S > 0
  double log_variance = 0;  // v = S^2/N^2, derived

  static NsumRecord make(int city, int year, double estimate,
                         double std_error) {
    NsumRecord r;
    r.city = city;
    r.year = year;
    r.estimate = estimate;
    r.std_error = std_error;
    r.log_variance = (std_error * std_error) / (estimate * estimate);
    return r;
  }
};

// Panel of observations over cities x subgroups x years. Call finalize()
// after filling the fields; it validates every invariant and builds the
// per-cell lookup indexes the sampler relies on.
class ObservedDataset {
 public:
  std::vector<std::string> city_ids;
  std::vector<std::string> subgroup_ids;
  int year_min = 0;
  int year_max = 0;
  // R_it, row-major [i * (T+1) + t], one positive count per cell
  std::vector<double> reference_population;
  std::vector<MultiplierRecord> multiplier_records;
  std::vector<NsumRecord> nsum_records;

  int n_cities() const { return static_cast<int>(city_ids.size()); }
  int n_subgroups() const { return static_cast<int>(subgroup_ids.size()); }
  int n_years() const { return year_max - year_min + 1; }  // T + 1
  int max_year_index() const { return year_max - year_min; }  // T

  std::size_t cell(int i, int t) const {
    return static_cast<std::size_t>(i) * n_years() + t;
  }

  double reference(int i, int t) const {
    return reference_population[cell(i, t)];
  }

  // multiplier record indexes for cell (i,t)
  const std::vector<int>& multiplier_at(int i, int t) const {
    return mult_by_cell_[cell(i, t)];
  }
  // -1 when the cell has no NSUM record
  int nsum_at(int i, int t) const { return nsum_by_cell_[cell(i, t)]; }

  const std::vector<int>& multiplier_for_city(int i) const {
    return mult_by_city_[i];
  }
  const std::vector<int>& multiplier_for_subgroup(int j) const {
    return mult_by_subgroup_[j];
  }

  void finalize() {
    const int I = n_cities();
    const int J = n_subgroups();
    if (I < 1) throw std::invalid_argument("dataset has no cities");
    if (year_max < year_min)
      throw std::invalid_argument("empty year range");
    const int ny = n_years();
    if (reference_population.size() != static_cast<std::size_t>(I) * ny)
      throw std::invalid_argument(
          "reference_population must cover all I x (T+1) cells");
    for (double r : reference_population)
      if (!(r > 0) || !std::isfinite(r))
        throw std::invalid_argument("reference population must be positive");

    mult_by_cell_.assign(static_cast<std::size_t>(I) * ny, {});
    nsum_by_cell_.assign(static_cast<std::size_t>(I) * ny, -1);
    mult_by_city_.assign(I, {});
    mult_by_subgroup_.assign(std::max(J, 0), {});

    std::vector<bool> seen(static_cast<std::size_t>(I) * std::max(J, 1) * ny,
                           false);
    for (std::size_t k = 0; k < multiplier_records.size(); ++k) {
      const auto& r = multiplier_records[k];
      if (r.city < 0 || r.city >= I || r.subgroup < 0 || r.subgroup >= J ||
          r.year < 0 || r.year >= ny)
        throw std::invalid_argument("multiplier record index out of range");
      if (!(r.count > 0) || !(r.proportion > 0) || !(r.proportion < 1) ||
          !(r.sample_size >= 1) || !std::isfinite(r.log_estimate))
        throw std::invalid_argument("invalid multiplier record values");
      std::size_t key =
          (static_cast<std::size_t>(r.city) * J + r.subgroup) * ny + r.year;
      if (seen[key])
        throw std::invalid_argument(
            "duplicate multiplier record for (city, subgroup, year)");
      seen[key] = true;
      mult_by_cell_[cell(r.city, r.year)].push_back(static_cast<int>(k));
      mult_by_city_[r.city].push_back(static_cast<int>(k));
      mult_by_subgroup_[r.subgroup].push_back(static_cast<int>(k));
    }

    for (std::size_t k = 0; k < nsum_records.size(); ++k) {
      const auto& r = nsum_records[k];
      if (r.city < 0 || r.city >= I || r.year < 0 || r.year >= ny)
        throw std::invalid_argument("NSUM record index out of range");
      if (!(r.estimate > 0) || !(r.std_error > 0) ||
          !std::isfinite(r.log_variance) || !(r.log_variance > 0))
        throw std::invalid_argument("invalid NSUM record values");
      if (nsum_by_cell_[cell(r.city, r.year)] != -1)
        throw std::invalid_argument("duplicate NSUM record for (city, year)");
      nsum_by_cell_[cell(r.city, r.year)] = static_cast<int>(k);
    }
    finalized_ = true;
  }

  bool finalized() const { return finalized_; }

 private:
  std::vector<std::vector<int>> mult_by_cell_;
  std::vector<int> nsum_by_cell_;
  std::vector<std::vector<int>> mult_by_city_;
  std::vector<std::vector<int>> mult_by_subgroup_;
  bool finalized_ = false;
};

}  // namespace popsize
