#include "ssdid/panel.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

namespace ssdid {

std::string adoption_to_string(AdoptionTime a) {
  if (is_never_treated(a)) return "inf";
  return std::to_string(a);
}

ValidatedPanel::ValidatedPanel(int T, std::vector<UnitSeries> units)
    : T_(T), units_(std::move(units)) {
  std::sort(units_.begin(), units_.end(), [](const UnitSeries& a, const UnitSeries& b) {
    if (a.adoption != b.adoption) return a.adoption < b.adoption;
    return a.id < b.id;
  });
  for (const auto& u : units_) {
    census_[u.adoption] += 1;
    if (!u.group.empty()) has_groups_ = true;
  }
}

ValidatedPanel validate(const std::vector<PanelRecord>& records) {
  if (records.empty()) fail(errc::empty_panel, "panel has no records");

  int T = 0;
  for (const auto& r : records) {
    if (r.period < 1) {
      fail(errc::invalid_record,
           "unit '" + r.unit + "' has period " + std::to_string(r.period) + " < 1");
    }
    T = std::max(T, r.period);
  }

  struct Builder {
    AdoptionTime adoption = kNeverTreated;
    double weight = 1.0;
    std::string group;
    std::vector<char> seen;
    std::vector<double> outcome;
    bool first = true;
  };
  std::unordered_map<std::string, Builder> by_unit;
  by_unit.reserve(records.size() / std::max(1, T));

  for (const auto& r : records) {
    if (!std::isfinite(r.outcome)) {
      fail(errc::invalid_record, "unit '" + r.unit + "' has non-finite outcome at period " +
                                     std::to_string(r.period));
    }
    if (!(r.weight >= 0.0) || !std::isfinite(r.weight)) {
      fail(errc::invalid_record, "unit '" + r.unit + "' has negative or non-finite weight");
    }
    if (!is_never_treated(r.adoption) && (r.adoption < 1 || r.adoption > T)) {
      fail(errc::invalid_record, "unit '" + r.unit + "' has adoption " +
                                     std::to_string(r.adoption) + " outside 1.." +
                                     std::to_string(T));
    }

    auto& b = by_unit[r.unit];
    if (b.first) {
      b.adoption = r.adoption;
      b.weight = r.weight;
      b.group = r.group;
      b.seen.assign(static_cast<size_t>(T), 0);
      b.outcome.assign(static_cast<size_t>(T), 0.0);
      b.first = false;
    } else {
      if (b.adoption != r.adoption) {
        fail(errc::inconsistent_adoption,
             "unit '" + r.unit + "' reports adoption " + adoption_to_string(b.adoption) +
                 " and " + adoption_to_string(r.adoption));
      }
      if (b.weight != r.weight) {
        fail(errc::invalid_record, "unit '" + r.unit + "' reports two aggregation weights");
      }
      if (b.group != r.group) {
        fail(errc::invalid_record, "unit '" + r.unit + "' reports two covariate groups");
      }
    }
    auto idx = static_cast<size_t>(r.period - 1);
    if (b.seen[idx]) {
      fail(errc::duplicate_cell,
           "duplicate cell (" + r.unit + ", " + std::to_string(r.period) + ")");
    }
    b.seen[idx] = 1;
    b.outcome[idx] = r.outcome;
  }

  std::vector<UnitSeries> units;
  units.reserve(by_unit.size());
  for (auto& [id, b] : by_unit) {
    for (int t = 0; t < T; ++t) {
      if (!b.seen[static_cast<size_t>(t)]) {
        fail(errc::unbalanced_panel,
             "unit '" + id + "' is missing period " + std::to_string(t + 1));
      }
    }
    units.push_back(UnitSeries{id, b.adoption, b.weight, std::move(b.group), std::move(b.outcome)});
  }
  return ValidatedPanel(T, std::move(units));
}

std::vector<AdoptionTime> CohortPanel::cohorts() const {
  std::vector<AdoptionTime> out;
  for (const auto& r : rows) {
    if (out.empty() || out.back() != r.adoption) out.push_back(r.adoption);
  }
  return out;
}

std::vector<int> CohortPanel::controls_after(AdoptionTime a) const {
  std::vector<int> out;
  for (int i = 0; i < n_rows(); ++i) {
    if (rows[static_cast<size_t>(i)].adoption > a) out.push_back(i);
  }
  return out;
}

std::vector<int> CohortPanel::rows_with_adoption(AdoptionTime a) const {
  std::vector<int> out;
  for (int i = 0; i < n_rows(); ++i) {
    if (rows[static_cast<size_t>(i)].adoption == a) out.push_back(i);
  }
  return out;
}

int CohortPanel::row_by_label(const std::string& label) const {
  for (int i = 0; i < n_rows(); ++i) {
    if (rows[static_cast<size_t>(i)].label == label) return i;
  }
  return -1;
}

void CohortPanel::check_invariants() const {
  if (rows.empty()) fail(errc::empty_panel, "cohort panel has no rows");
  if (Y.rows() != n_rows() || Y.cols() != T) {
    fail(errc::invalid_record, "cohort panel matrix shape mismatch");
  }
  double share_sum = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    share_sum += rows[i].share;
    if (i > 0 && rows[i].adoption < rows[i - 1].adoption) {
      fail(errc::invalid_record, "cohort rows are not sorted by adoption");
    }
  }
  if (std::abs(share_sum - 1.0) > 1e-12) {
    fail(errc::invalid_record, "cohort shares sum to " + std::to_string(share_sum));
  }
  if (!Y.allFinite()) fail(errc::invalid_record, "cohort panel has non-finite cells");
}

namespace {

struct RowAccumulator {
  AdoptionTime adoption;
  std::string label;
  double weight_sum = 0.0;
  int n_units = 0;
  Eigen::VectorXd weighted;  // sum of w_i * y_i per period
};

CohortPanel finish_rows(std::vector<RowAccumulator> accs, int T, long n_units) {
  std::sort(accs.begin(), accs.end(), [](const RowAccumulator& a, const RowAccumulator& b) {
    if (a.adoption != b.adoption) return a.adoption < b.adoption;
    return a.label < b.label;
  });

  double total_weight = 0.0;
  for (const auto& acc : accs) total_weight += acc.weight_sum;
  if (!(total_weight > 0.0)) {
    fail(errc::invalid_record, "panel has zero total aggregation weight");
  }

  CohortPanel out;
  out.T = T;
  out.n_units = n_units;
  out.Y.resize(static_cast<Eigen::Index>(accs.size()), T);
  for (size_t i = 0; i < accs.size(); ++i) {
    auto& acc = accs[i];
    if (!(acc.weight_sum > 0.0)) {
      fail(errc::invalid_record,
           "series '" + acc.label + "' has zero total aggregation weight");
    }
    out.rows.push_back(CohortRow{acc.adoption, acc.label, acc.weight_sum / total_weight,
                                 acc.weight_sum, acc.n_units});
    out.Y.row(static_cast<Eigen::Index>(i)) = acc.weighted.transpose() / acc.weight_sum;
  }
  out.check_invariants();
  return out;
}

}  // namespace

CohortPanel aggregate(const ValidatedPanel& panel, const CovariateScheme& scheme) {
  const int T = panel.T();
  std::map<std::pair<AdoptionTime, std::string>, RowAccumulator> acc_by_key;

  auto accumulate = [&](const UnitSeries& u, const std::string& label) {
    auto key = std::make_pair(u.adoption, label);
    auto it = acc_by_key.find(key);
    if (it == acc_by_key.end()) {
      RowAccumulator acc;
      acc.adoption = u.adoption;
      acc.label = label;
      acc.weighted = Eigen::VectorXd::Zero(T);
      it = acc_by_key.emplace(key, std::move(acc)).first;
    }
    auto& acc = it->second;
    acc.weight_sum += u.weight;
    acc.n_units += 1;
    for (int t = 0; t < T; ++t) {
      acc.weighted(t) += u.weight * u.outcome[static_cast<size_t>(t)];
    }
  };

  switch (scheme.mode) {
    case CovariateMode::none:
    case CovariateMode::hybrid:
      for (const auto& u : panel.units()) {
        bool split = scheme.mode == CovariateMode::hybrid && scheme.never_treated_split &&
                     is_never_treated(u.adoption) && !u.group.empty();
        std::string label = adoption_to_string(u.adoption);
        if (split) label += ":" + u.group;
        accumulate(u, label);
      }
      break;
    case CovariateMode::grouped: {
      // Strategy for group-level assignment: rows are covariate-group means,
      // which requires adoption to be constant within each group.
      std::map<std::string, AdoptionTime> group_adoption;
      for (const auto& u : panel.units()) {
        const std::string& g = u.group;
        auto [it, inserted] = group_adoption.emplace(g, u.adoption);
        if (!inserted && it->second != u.adoption) {
          fail(errc::group_adoption_mismatch,
               "group '" + g + "' mixes adoption " + adoption_to_string(it->second) + " and " +
                   adoption_to_string(u.adoption));
        }
        accumulate(u, g.empty() ? adoption_to_string(u.adoption) : g);
      }
      break;
    }
  }

  std::vector<RowAccumulator> accs;
  accs.reserve(acc_by_key.size());
  for (auto& [key, acc] : acc_by_key) accs.push_back(std::move(acc));
  return finish_rows(std::move(accs), T, panel.n_units());
}

CohortPanel unit_rows(const ValidatedPanel& panel) {
  const int T = panel.T();
  double total_weight = 0.0;
  for (const auto& u : panel.units()) total_weight += u.weight;
  if (!(total_weight > 0.0)) {
    fail(errc::invalid_record, "panel has zero total aggregation weight");
  }
  CohortPanel out;
  out.T = T;
  out.n_units = panel.n_units();
  out.Y.resize(panel.n_units(), T);
  for (int i = 0; i < panel.n_units(); ++i) {
    const auto& u = panel.units()[static_cast<size_t>(i)];
    out.rows.push_back(CohortRow{u.adoption, u.id, u.weight / total_weight, u.weight, 1});
    for (int t = 0; t < T; ++t) out.Y(i, t) = u.outcome[static_cast<size_t>(t)];
  }
  out.check_invariants();
  return out;
}

ValidatedPanel shift_adoption(const ValidatedPanel& panel, int P) {
  if (P < 1) fail(errc::shift_out_of_range, "shift must be >= 1, got " + std::to_string(P));
  std::vector<UnitSeries> units = panel.units();
  for (auto& u : units) {
    if (is_never_treated(u.adoption)) continue;
    AdoptionTime shifted = u.adoption - P;
    if (shifted < 2) {
      fail(errc::shift_out_of_range,
           "shifting unit '" + u.id + "' (adoption " + std::to_string(u.adoption) + ") by " +
               std::to_string(P) + " leaves no pre-period");
    }
    u.adoption = shifted;
  }
  return ValidatedPanel(panel.T(), std::move(units));
}

CohortPanel shift_adoption(const CohortPanel& panel, int P) {
  if (P < 1) fail(errc::shift_out_of_range, "shift must be >= 1, got " + std::to_string(P));
  CohortPanel out = panel;
  for (auto& r : out.rows) {
    if (is_never_treated(r.adoption)) continue;
    AdoptionTime shifted = r.adoption - P;
    if (shifted < 2) {
      fail(errc::shift_out_of_range, "shifting series '" + r.label + "' (adoption " +
                                         std::to_string(r.adoption) + ") by " +
                                         std::to_string(P) + " leaves no pre-period");
    }
    r.adoption = shifted;
  }
  return out;
}

}  // namespace ssdid
