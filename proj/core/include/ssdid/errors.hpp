#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ssdid {

// All library failures are reported through this type. `code()` is a stable
// machine-readable identifier (e.g. "panel.duplicate_cell") so callers such as
// the CLI can translate failures without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

namespace errc {

// panel
inline constexpr const char* empty_panel = "panel.empty";
inline constexpr const char* duplicate_cell = "panel.duplicate_cell";
inline constexpr const char* unbalanced_panel = "panel.unbalanced";
inline constexpr const char* inconsistent_adoption = "panel.inconsistent_adoption";
inline constexpr const char* invalid_record = "panel.invalid_record";
inline constexpr const char* group_adoption_mismatch = "panel.group_adoption_mismatch";
inline constexpr const char* shift_out_of_range = "panel.shift_out_of_range";

// balancing
inline constexpr const char* non_finite_input = "balance.non_finite_input";
inline constexpr const char* singular_system = "balance.singular_system";
inline constexpr const char* infeasible_constraints = "balance.infeasible_constraints";

// estimator
inline constexpr const char* bad_config = "ssdid.bad_config";
inline constexpr const char* no_controls = "ssdid.no_controls";
inline constexpr const char* horizon_overflow = "ssdid.horizon_overflow";
inline constexpr const char* no_untreated_cells = "ssdid.no_untreated_cells";
inline constexpr const char* weight_sum_violation = "ssdid.weight_sum_violation";

// inference
inline constexpr const char* degenerate_cohort = "inference.degenerate_cohort";
inline constexpr const char* zero_se = "inference.zero_se";
inline constexpr const char* bad_bootstrap_config = "inference.bad_config";

// dgp
inline constexpr const char* infeasible_spec = "dgp.infeasible_spec";

// io
inline constexpr const char* io_not_found = "io.not_found";
inline constexpr const char* io_parse = "io.parse";
inline constexpr const char* io_write = "io.write";

}  // namespace errc

[[noreturn]] inline void fail(const char* code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace ssdid
