#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ssdid/errors.hpp"

namespace ssdid {

// Adoption times are integers in 1..T; never-treated units carry a maximal
// sentinel so "controls for cohort a" is the single comparison adoption > a
// and never-treated rows always sort last.
using AdoptionTime = std::int64_t;
inline constexpr AdoptionTime kNeverTreated = std::numeric_limits<AdoptionTime>::max();

inline bool is_never_treated(AdoptionTime a) { return a == kNeverTreated; }

std::string adoption_to_string(AdoptionTime a);

// One unit-period observation in long format.
struct PanelRecord {
  std::string unit;
  int period = 0;  // 1..T
  double outcome = 0.0;
  AdoptionTime adoption = kNeverTreated;
  double weight = 1.0;  // aggregation weight, e.g. baseline population
  std::string group;    // optional discrete covariate label
};

// Column-compressed per-unit view produced by validate().
struct UnitSeries {
  std::string id;
  AdoptionTime adoption = kNeverTreated;
  double weight = 1.0;
  std::string group;
  std::vector<double> outcome;  // index t-1, length T
};

class ValidatedPanel {
 public:
  ValidatedPanel() = default;
  ValidatedPanel(int T, std::vector<UnitSeries> units);

  int T() const { return T_; }
  int n_units() const { return static_cast<int>(units_.size()); }
  const std::vector<UnitSeries>& units() const { return units_; }

  // adoption time -> unit count, never-treated last.
  const std::map<AdoptionTime, int>& cohort_census() const { return census_; }

  bool has_groups() const { return has_groups_; }

 private:
  int T_ = 0;
  std::vector<UnitSeries> units_;  // sorted by (adoption, id)
  std::map<AdoptionTime, int> census_;
  bool has_groups_ = false;
};

enum class CovariateMode { none, hybrid, grouped };

struct CovariateScheme {
  CovariateMode mode = CovariateMode::none;
  // Hybrid only: keep each never-treated covariate cell as its own control
  // series instead of pooling them into a single never-treated row.
  bool never_treated_split = false;
};

struct CohortRow {
  AdoptionTime adoption = kNeverTreated;
  std::string label;      // cohort number, group name, or "inf[:group]"
  double share = 0.0;     // pi: weight share of the full panel
  double weight_sum = 0;  // sum of aggregation weights in the row
  int n_units = 0;
};

// Aggregated panel: one outcome series per row, rows sorted by adoption
// (never-treated last). This is the object every estimator consumes.
struct CohortPanel {
  int T = 0;
  long n_units = 0;
  std::vector<CohortRow> rows;
  Eigen::MatrixXd Y;  // rows.size() x T, Y(r, t-1)

  int n_rows() const { return static_cast<int>(rows.size()); }

  std::vector<AdoptionTime> cohorts() const;

  // Indices of rows with adoption strictly greater than a.
  std::vector<int> controls_after(AdoptionTime a) const;

  std::vector<int> rows_with_adoption(AdoptionTime a) const;
  int row_by_label(const std::string& label) const;  // -1 if absent

  // Enforces the structural invariants (share sum, ordering, finite cells).
  void check_invariants() const;
};

ValidatedPanel validate(const std::vector<PanelRecord>& records);

CohortPanel aggregate(const ValidatedPanel& panel, const CovariateScheme& scheme = {});

// One row per unit (pre-aggregated mode: units such as states are already
// the series of interest); shares are weight shares, labels are unit ids.
CohortPanel unit_rows(const ValidatedPanel& panel);

// Backdates every finite adoption by P periods (never-treated unchanged).
ValidatedPanel shift_adoption(const ValidatedPanel& panel, int P);

// Row-relabelling counterpart for pre-aggregated data.
CohortPanel shift_adoption(const CohortPanel& panel, int P);

}  // namespace ssdid
