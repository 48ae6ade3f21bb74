// Command-line front end: estimate | placebo | simulate | montecarlo |
// oracle-check. Every run writes CSV outputs plus a run.json that pins the
// resolved configuration and seed, so reruns are byte-identical.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "ssdid/csv.hpp"
#include "ssdid/dgp.hpp"
#include "ssdid/errors.hpp"
#include "ssdid/estimator.hpp"
#include "ssdid/inference.hpp"
#include "ssdid/oracle.hpp"
#include "ssdid/placebo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct CommonIo {
  std::string input;
  std::string output_dir = ".";
};

struct EstimatorFlags {
  std::int64_t a_min = 0;  // 0 = derive from the data
  std::int64_t a_max = 0;
  int k_max = 0;
  std::string eta = "auto";
  std::string mu = "shares";
  std::string covariates = "auto";  // auto|none|hybrid|grouped
};

struct BootstrapFlags {
  int B = 0;
  double alpha = 0.05;
  std::string interval = "wald";
  std::string granularity = "unit";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  std::string dump_replicates;
};

void add_estimator_flags(CLI::App* cmd, EstimatorFlags& f) {
  cmd->add_option("--a-min", f.a_min, "Earliest cohort to estimate (default: first estimable)");
  cmd->add_option("--a-max", f.a_max, "Latest cohort to estimate (default: last estimable)");
  cmd->add_option("--k-max", f.k_max, "Maximum horizon K")->check(CLI::NonNegativeNumber);
  cmd->add_option("--eta", f.eta, "Regularization: auto, inf, or a positive value");
  cmd->add_option("--mu", f.mu, "Horizon weights: 'shares' or a CSV file a,mu");
  cmd->add_option("--covariates", f.covariates, "auto|none|hybrid|grouped");
}

void add_bootstrap_flags(CLI::App* cmd, BootstrapFlags& f, int default_B) {
  f.B = default_B;
  cmd->add_option("--bootstrap", f.B, "Bayesian-bootstrap replicates");
  cmd->add_option("--alpha", f.alpha, "CI level (default 0.05)");
  cmd->add_option("--interval", f.interval, "wald|percentile");
  cmd->add_option("--granularity", f.granularity, "unit|row");
  cmd->add_option("--seed", f.seed, "RNG seed (required for bootstrap draws)")
      ->each([&f](const std::string&) { f.seed_set = true; });
  cmd->add_option("--threads", f.threads, "Worker threads for replicates");
  cmd->add_option("--dump-replicates", f.dump_replicates,
                  "Write replicate,target,estimate CSV to this path");
}

ssdid::CovariateScheme resolve_scheme(const std::string& flag, const ssdid::ValidatedPanel& panel) {
  if (flag == "none") return {ssdid::CovariateMode::none, false};
  if (flag == "hybrid") return {ssdid::CovariateMode::hybrid, true};
  if (flag == "grouped") return {ssdid::CovariateMode::grouped, false};
  if (flag == "auto") {
    if (panel.has_groups()) return {ssdid::CovariateMode::hybrid, true};
    return {ssdid::CovariateMode::none, false};
  }
  throw CLI::ValidationError("--covariates", "expected auto|none|hybrid|grouped");
}

ssdid::EtaSpec parse_eta(const std::string& s) {
  if (s == "auto") return ssdid::EtaSpec::auto_rule();
  if (s == "inf") return ssdid::EtaSpec::inf();
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size() || !(v > 0.0)) throw std::invalid_argument(s);
    return ssdid::EtaSpec::fixed(v);
  } catch (const std::exception&) {
    throw CLI::ValidationError("--eta", "expected auto, inf, or a positive number");
  }
}

std::map<ssdid::AdoptionTime, double> parse_mu(const std::string& flag) {
  if (flag == "shares") return {};
  std::ifstream in(flag);
  if (!in) ssdid::fail(ssdid::errc::io_not_found, "mu file not found: " + flag);
  std::map<ssdid::AdoptionTime, double> mu;
  std::string line;
  bool first = true;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (first && line.find("a,") == 0) {
      first = false;
      continue;
    }
    first = false;
    auto comma = line.find(',');
    if (comma == std::string::npos) {
      ssdid::fail(ssdid::errc::io_parse, flag + ":" + std::to_string(line_no) + ": expected a,mu");
    }
    mu[std::stoll(line.substr(0, comma))] = std::stod(line.substr(comma + 1));
  }
  return mu;
}

// Derive [a_min, a_max] when not given: estimable cohorts with a pre-period,
// a later control series, and room for K horizons.
void resolve_bounds(const ssdid::CohortPanel& panel, int k_max, std::int64_t& a_min,
                    std::int64_t& a_max) {
  std::vector<ssdid::AdoptionTime> finite;
  for (auto a : panel.cohorts()) {
    if (!ssdid::is_never_treated(a)) finite.push_back(a);
  }
  if (finite.empty()) ssdid::fail(ssdid::errc::bad_config, "panel has no treated cohort");
  if (a_min == 0) {
    for (auto a : finite) {
      if (a >= 2) {
        a_min = a;
        break;
      }
    }
    if (a_min == 0) ssdid::fail(ssdid::errc::bad_config, "no cohort has a pre-period");
  }
  if (a_max == 0) {
    for (auto it = finite.rbegin(); it != finite.rend(); ++it) {
      if (*it + k_max <= panel.T && !panel.controls_after(*it).empty() && *it >= a_min) {
        a_max = *it;
        break;
      }
    }
    if (a_max == 0) {
      ssdid::fail(ssdid::errc::bad_config,
                  "no cohort satisfies a + K <= T with a later control series");
    }
  }
}

ssdid::BootstrapConfig make_bootstrap_config(const BootstrapFlags& f) {
  ssdid::BootstrapConfig cfg;
  cfg.B = f.B;
  cfg.alpha = f.alpha;
  cfg.seed = f.seed;
  cfg.threads = f.threads;
  if (f.interval == "wald") {
    cfg.interval = ssdid::IntervalKind::wald;
  } else if (f.interval == "percentile") {
    cfg.interval = ssdid::IntervalKind::percentile;
  } else {
    throw CLI::ValidationError("--interval", "expected wald|percentile");
  }
  if (f.granularity == "unit") {
    cfg.granularity = ssdid::Granularity::unit;
  } else if (f.granularity == "row") {
    cfg.granularity = ssdid::Granularity::cohort_row;
  } else {
    throw CLI::ValidationError("--granularity", "expected unit|row");
  }
  return cfg;
}

void require_seed(const BootstrapFlags& f, bool needed) {
  if (needed && !f.seed_set) {
    throw CLI::ValidationError("--seed", "a seed is required for reproducible draws");
  }
}

void write_json_atomic(const std::string& path, const json& j) {
  ssdid::write_text_atomic(path, j.dump(2) + "\n");
}

json eta_json(const ssdid::EtaSpec& spec, const ssdid::Eta& used) {
  json j;
  j["mode"] = spec.mode == ssdid::EtaSpec::Mode::automatic ? "auto"
              : spec.mode == ssdid::EtaSpec::Mode::infinite ? "inf"
                                                            : "fixed";
  if (used.is_inf) {
    j["used"] = "inf";
  } else {
    j["used"] = used.val;
  }
  return j;
}

json bootstrap_json(const BootstrapFlags& f) {
  return json{{"B", f.B},          {"alpha", f.alpha},       {"interval", f.interval},
              {"granularity", f.granularity}, {"seed", f.seed}, {"threads", f.threads}};
}

void dump_replicates_csv(const std::string& path, const ssdid::BootstrapResult& boot) {
  std::ostringstream out;
  out << "replicate,target,estimate\n";
  for (int b = 0; b < boot.cell_replicates.rows(); ++b) {
    for (size_t c = 0; c < boot.cell_keys.size(); ++c) {
      const auto& key = boot.cell_keys[c];
      out << b << ",a=" << key.label << ";k=" << key.horizon << ','
          << fmt(boot.cell_replicates(b, static_cast<Eigen::Index>(c))) << '\n';
    }
    for (int k = 0; k < boot.horizon_replicates.cols(); ++k) {
      out << b << ",k=" << k << ',' << fmt(boot.horizon_replicates(b, k)) << '\n';
    }
  }
  ssdid::write_text_atomic(path, out.str());
}

// ---------------------------------------------------------------------------
// design-spec files: flat "key = value" lines, '#' comments.
// ---------------------------------------------------------------------------

ssdid::DgpSpec parse_design_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) ssdid::fail(ssdid::errc::io_not_found, "design spec not found: " + path);
  ssdid::DgpSpec spec;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r\n") != std::string::npos) {
        ssdid::fail(ssdid::errc::io_parse,
                    path + ":" + std::to_string(line_no) + ": expected key = value");
      }
      continue;
    }
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r\n");
      if (b == std::string::npos) return std::string();
      size_t e = s.find_last_not_of(" \t\r\n");
      return s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto bad = [&](const std::string& why) {
      ssdid::fail(ssdid::errc::io_parse,
                  path + ":" + std::to_string(line_no) + ": " + why + " for key '" + key + "'");
    };
    try {
      if (key == "n_units") spec.n_units = std::stol(value);
      else if (key == "T" || key == "periods") spec.T = std::stoi(value);
      else if (key == "r") spec.r = std::stoi(value);
      else if (key == "signal") spec.signal = std::stod(value);
      else if (key == "factor_trend") spec.factor_trend = std::stod(value);
      else if (key == "never_groups") spec.never_groups = std::stoi(value);
      else if (key == "tau_constant") spec.tau.constant = std::stod(value);
      else if (key == "noise") {
        if (value == "iid") spec.noise.kind = ssdid::NoiseSpec::Kind::iid;
        else if (value == "ar2") spec.noise.kind = ssdid::NoiseSpec::Kind::ar2;
        else bad("expected iid|ar2");
      } else if (key == "noise_sd") spec.noise.sd = std::stod(value);
      else if (key == "ar_rho1") spec.noise.rho1 = std::stod(value);
      else if (key == "ar_rho2") spec.noise.rho2 = std::stod(value);
      else if (key == "ar_innovation_sd") spec.noise.innovation_sd = std::stod(value);
      else if (key == "assignment") {
        if (value == "independent") spec.assignment.kind = ssdid::AssignmentSpec::Kind::independent;
        else if (value == "confounded") spec.assignment.kind = ssdid::AssignmentSpec::Kind::confounded;
        else bad("expected independent|confounded");
      } else if (key == "adopt_start") spec.assignment.adopt_start = std::stoi(value);
      else if (key == "adopt_end") spec.assignment.adopt_end = std::stoi(value);
      else if (key == "never_share") spec.assignment.never_share = std::stod(value);
      else if (key == "slope") spec.assignment.slope = std::stod(value);
      else if (key == "date_sd") spec.assignment.date_sd = std::stod(value);
      else if (key == "loading_shift") spec.assignment.loading_shift = std::stod(value);
      else if (key == "alpha_sd") spec.alpha_sd = std::stod(value);
      else if (key == "beta_sd") spec.beta_sd = std::stod(value);
      else if (key == "seed") spec.seed = std::stoull(value);
      else bad("unknown key");
    } catch (const ssdid::Error&) {
      throw;
    } catch (const std::exception&) {
      bad("bad value '" + value + "'");
    }
  }
  return spec;
}

json design_spec_json(const ssdid::DgpSpec& spec) {
  json j;
  j["n_units"] = spec.n_units;
  j["T"] = spec.T;
  j["r"] = spec.r;
  j["signal"] = spec.signal;
  j["factor_trend"] = spec.factor_trend;
  j["never_groups"] = spec.never_groups;
  j["tau_constant"] = spec.tau.constant;
  j["noise"] = spec.noise.kind == ssdid::NoiseSpec::Kind::iid ? "iid" : "ar2";
  j["noise_sd"] = spec.noise.sd;
  j["ar_rho1"] = spec.noise.rho1;
  j["ar_rho2"] = spec.noise.rho2;
  j["ar_innovation_sd"] = spec.noise.innovation_sd;
  j["assignment"] = spec.assignment.kind == ssdid::AssignmentSpec::Kind::independent
                        ? "independent"
                        : "confounded";
  j["adopt_start"] = spec.assignment.adopt_start;
  j["adopt_end"] = spec.assignment.adopt_end;
  j["never_share"] = spec.assignment.never_share;
  j["slope"] = spec.assignment.slope;
  j["date_sd"] = spec.assignment.date_sd;
  j["loading_shift"] = spec.assignment.loading_shift;
  j["alpha_sd"] = spec.alpha_sd;
  j["beta_sd"] = spec.beta_sd;
  j["seed"] = spec.seed;
  return j;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_estimate(const CommonIo& io, const EstimatorFlags& ef, const BootstrapFlags& bf) {
  auto records = ssdid::read_panel_csv(io.input);
  ssdid::ValidatedPanel panel = ssdid::validate(records);
  ssdid::CovariateScheme scheme = resolve_scheme(ef.covariates, panel);
  ssdid::CohortPanel cohort = ssdid::aggregate(panel, scheme);

  ssdid::SsdidConfig config;
  config.k_max = ef.k_max;
  std::int64_t a_min = ef.a_min, a_max = ef.a_max;
  resolve_bounds(cohort, ef.k_max, a_min, a_max);
  config.a_min = a_min;
  config.a_max = a_max;
  config.mu = parse_mu(ef.mu);

  ssdid::EtaSpec eta_spec = parse_eta(ef.eta);
  json auto_eta;
  if (eta_spec.mode == ssdid::EtaSpec::Mode::automatic) {
    ssdid::EtaEstimate est = ssdid::default_eta(panel);
    auto_eta = json{{"sigma_sq", est.sigma_sq}, {"n_cells", est.n_cells},
                    {"floored", est.floored}};
    config.eta = ssdid::EtaSpec::fixed(est.eta);
  } else {
    config.eta = eta_spec;
  }

  fs::create_directories(io.output_dir);
  auto out_path = [&](const char* name) { return (fs::path(io.output_dir) / name).string(); };

  ssdid::EstimateGrid grid;
  std::optional<ssdid::BootstrapResult> boot;
  if (bf.B > 0) {
    require_seed(bf, true);
    ssdid::BootstrapConfig bcfg = make_bootstrap_config(bf);
    ssdid::PanelSource src = bcfg.granularity == ssdid::Granularity::unit
                                 ? ssdid::PanelSource::from_units(panel, scheme)
                                 : ssdid::PanelSource::from_rows(cohort);
    ssdid::SsdidConfig run_cfg = config;
    boot = ssdid::bootstrap(
        src, [run_cfg](const ssdid::CohortPanel& p) { return ssdid::run_sequential(p, run_cfg); },
        bcfg);
    grid = boot->point;
  } else {
    grid = ssdid::run_sequential(cohort, config);
  }

  {
    std::ostringstream est;
    est << "a,k,tau_hat\n";
    for (size_t c = 0; c < grid.cells.size(); ++c) {
      const auto& cell = grid.cells[c];
      auto pos = std::find(grid.grid_rows.begin(), grid.grid_rows.end(), cell.row);
      est << grid.row_labels[static_cast<size_t>(pos - grid.grid_rows.begin())] << ','
          << cell.horizon << ',' << fmt(cell.tau_hat) << '\n';
    }
    ssdid::write_text_atomic(out_path("estimates.csv"), est.str());
  }
  {
    std::ostringstream hor;
    hor << "k,tau_k,se,ci_lo,ci_hi\n";
    for (int k = 0; k < grid.tau_by_horizon.size(); ++k) {
      hor << k << ',' << fmt(grid.tau_by_horizon(k));
      if (boot) {
        const auto& st = boot->horizon_stats[static_cast<size_t>(k)];
        hor << ',' << fmt(st.se) << ',' << fmt(st.ci_lo) << ',' << fmt(st.ci_hi);
      } else {
        hor << ",,,";
      }
      hor << '\n';
    }
    ssdid::write_text_atomic(out_path("horizon.csv"), hor.str());
  }
  if (boot && !bf.dump_replicates.empty()) dump_replicates_csv(bf.dump_replicates, *boot);

  json run;
  run["command"] = "estimate";
  run["versions"] = {{"ssdid", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)}};
  run["input"] = io.input;
  run["config"] = {{"a_min", config.a_min}, {"a_max", config.a_max}, {"k_max", config.k_max},
                   {"mu", ef.mu},           {"covariates", ef.covariates}};
  run["config"]["eta"] = eta_json(eta_spec, grid.eta_used);
  if (!auto_eta.is_null()) run["config"]["eta"]["auto_fit"] = auto_eta;
  run["estimator_kind"] = ssdid::estimator_kind_name(grid.kind);
  if (bf.B > 0) run["bootstrap"] = bootstrap_json(bf);
  run["panel"] = {{"T", cohort.T}, {"n_units", cohort.n_units}, {"rows", cohort.n_rows()}};
  write_json_atomic(out_path("run.json"), run);
  return 0;
}

int cmd_placebo(const CommonIo& io, const EstimatorFlags& ef, const BootstrapFlags& bf, int P,
                bool anticipation, double z_threshold) {
  auto records = ssdid::read_panel_csv(io.input);
  ssdid::ValidatedPanel panel = ssdid::validate(records);
  ssdid::CovariateScheme scheme = resolve_scheme(ef.covariates, panel);
  ssdid::CohortPanel cohort = ssdid::aggregate(panel, scheme);

  ssdid::SsdidConfig config;
  config.k_max = anticipation ? ef.k_max : P - 1;
  // Bounds refer to the unshifted adoption dates; run_placebo shifts them, so
  // derive defaults on the shifted panel and map back.
  std::int64_t a_min = ef.a_min == 0 ? 0 : ef.a_min - P;
  std::int64_t a_max = ef.a_max == 0 ? 0 : ef.a_max - P;
  resolve_bounds(ssdid::shift_adoption(cohort, P), config.k_max, a_min, a_max);
  config.a_min = a_min + P;
  config.a_max = a_max + P;
  config.eta = parse_eta(ef.eta);
  config.mu = parse_mu(ef.mu);

  require_seed(bf, true);
  ssdid::BootstrapConfig bcfg = make_bootstrap_config(bf);
  if (bcfg.B < 2) throw CLI::ValidationError("--bootstrap", "placebo needs B >= 2");

  ssdid::PanelSource src = bcfg.granularity == ssdid::Granularity::unit
                               ? ssdid::PanelSource::from_units(panel, scheme)
                               : ssdid::PanelSource::from_rows(cohort);
  ssdid::PlaceboConfig pcfg;
  pcfg.P = P;
  pcfg.anticipation = anticipation;
  pcfg.z_threshold = z_threshold;
  ssdid::PlaceboReport report = ssdid::run_placebo(src, config, bcfg, pcfg);

  fs::create_directories(io.output_dir);
  auto out_path = [&](const char* name) { return (fs::path(io.output_dir) / name).string(); };
  std::ostringstream csv;
  csv << "horizon,estimate,se,z\n";
  for (size_t k = 0; k < report.result.horizon_stats.size(); ++k) {
    const auto& st = report.result.horizon_stats[k];
    csv << k << ',' << fmt(st.point) << ',' << fmt(st.se) << ',' << fmt(report.z_scores[k])
        << '\n';
  }
  ssdid::write_text_atomic(out_path("placebo.csv"), csv.str());

  json run;
  run["command"] = "placebo";
  run["version"] = kVersion;
  run["input"] = io.input;
  run["placebo"] = {{"P", P}, {"anticipation", anticipation}, {"z_threshold", z_threshold},
                    {"pass", report.pass}};
  run["config"] = {{"a_min", config.a_min}, {"a_max", config.a_max}, {"k_max", config.k_max},
                   {"eta", ef.eta},         {"covariates", ef.covariates}};
  run["bootstrap"] = bootstrap_json(bf);
  write_json_atomic(out_path("run.json"), run);
  return 0;
}

int cmd_simulate(const std::string& spec_path, const std::string& output_dir,
                 std::uint64_t seed, bool seed_set) {
  ssdid::DgpSpec spec = parse_design_spec(spec_path);
  if (seed_set) spec.seed = seed;
  ssdid::SimulatedPanel sim = ssdid::simulate(spec);

  fs::create_directories(output_dir);
  auto out_path = [&](const char* name) { return (fs::path(output_dir) / name).string(); };

  std::vector<ssdid::PanelRecord> records;
  for (const auto& u : sim.panel.units()) {
    for (int t = 0; t < sim.panel.T(); ++t) {
      records.push_back(ssdid::PanelRecord{u.id, t + 1, u.outcome[static_cast<size_t>(t)],
                                           u.adoption, u.weight, u.group});
    }
  }
  ssdid::write_panel_csv(out_path("panel.csv"), records);

  std::ostringstream truths;
  truths << "a,k,tau\n";
  for (auto a : sim.aggregated.cohorts()) {
    if (ssdid::is_never_treated(a)) continue;
    for (int k = 0; a + k <= sim.aggregated.T; ++k) {
      truths << a << ',' << k << ',' << fmt(sim.tau.at(a, k)) << '\n';
    }
  }
  ssdid::write_text_atomic(out_path("truths.csv"), truths.str());

  ssdid::write_factors_csv(out_path("factors.csv"), sim.factors, sim.aggregated);

  json run;
  run["command"] = "simulate";
  run["version"] = kVersion;
  run["design_spec"] = design_spec_json(spec);
  write_json_atomic(out_path("run.json"), run);
  return 0;
}

int cmd_montecarlo(const std::string& spec_path, const std::string& output_dir, int reps,
                   const EstimatorFlags& ef, const BootstrapFlags& bf, bool with_oracle,
                   std::uint64_t seed, bool seed_set, int threads, bool noise_only,
                   bool per_unit_rows) {
  ssdid::DgpSpec spec = parse_design_spec(spec_path);
  if (seed_set) spec.seed = seed;

  ssdid::SsdidConfig config;
  config.eta = parse_eta(ef.eta);
  config.a_min = ef.a_min != 0 ? ef.a_min : spec.assignment.adopt_start;
  std::int64_t adopt_end = spec.assignment.adopt_end != 0
                               ? spec.assignment.adopt_end
                               : (spec.assignment.kind == ssdid::AssignmentSpec::Kind::confounded
                                      ? std::min(spec.T, spec.assignment.adopt_start + 12)
                                      : spec.T);
  config.a_max = ef.a_max != 0 ? ef.a_max : adopt_end;
  config.k_max = ef.k_max != 0 ? ef.k_max : static_cast<int>(spec.T - config.a_max);

  ssdid::MonteCarloConfig mc;
  mc.reps = reps;
  mc.threads = threads;
  mc.bootstrap = make_bootstrap_config(bf);
  mc.redraw_noise_only = noise_only;
  mc.per_unit_rows = per_unit_rows;
  mc.estimators.push_back({"SSDID", ssdid::EstimatorKind::ssdid, config});
  mc.estimators.push_back({"DID", ssdid::EstimatorKind::seq_did, config});
  if (with_oracle) mc.estimators.push_back({"ORACLE", ssdid::EstimatorKind::seq_ols, config});

  ssdid::MonteCarloSummary summary = ssdid::monte_carlo(spec, mc);

  fs::create_directories(output_dir);
  auto out_path = [&](const char* name) { return (fs::path(output_dir) / name).string(); };

  std::ostringstream rmse, coverage, tstats;
  rmse << "lag,estimator,rmse\n";
  coverage << "lag,estimator,coverage\n";
  tstats << "rep,lag,estimator,t\n";
  for (const auto& table : summary.tables) {
    for (int k = 0; k < table.rmse.size(); ++k) {
      rmse << k << ',' << table.name << ',' << fmt(table.rmse(k)) << '\n';
      if (std::isfinite(table.coverage(k))) {
        coverage << k << ',' << table.name << ',' << fmt(table.coverage(k)) << '\n';
      }
    }
    for (int rep = 0; rep < table.t_stats.rows(); ++rep) {
      for (int k = 0; k < table.t_stats.cols(); ++k) {
        if (std::isfinite(table.t_stats(rep, k))) {
          tstats << rep << ',' << k << ',' << table.name << ',' << fmt(table.t_stats(rep, k))
                 << '\n';
        }
      }
    }
  }
  ssdid::write_text_atomic(out_path("rmse.csv"), rmse.str());
  ssdid::write_text_atomic(out_path("coverage.csv"), coverage.str());
  ssdid::write_text_atomic(out_path("tstats.csv"), tstats.str());

  json run;
  run["command"] = "montecarlo";
  run["version"] = kVersion;
  run["design_spec"] = design_spec_json(spec);
  run["reps"] = reps;
  run["with_oracle"] = with_oracle;
  run["noise_only"] = noise_only;
  run["per_unit_rows"] = per_unit_rows;
  run["threads"] = threads;
  run["config"] = {{"a_min", config.a_min}, {"a_max", config.a_max}, {"k_max", config.k_max},
                   {"eta", ef.eta}};
  run["bootstrap"] = bootstrap_json(bf);
  write_json_atomic(out_path("run.json"), run);
  return 0;
}

int cmd_oracle_check(const CommonIo& io, const std::string& factors_path, std::int64_t a_star,
                     int t_star, double tol) {
  auto records = ssdid::read_panel_csv(io.input);
  ssdid::ValidatedPanel panel = ssdid::validate(records);
  ssdid::CohortPanel cohort = ssdid::aggregate(panel);
  ssdid::FactorStructure factors = ssdid::read_factors_csv(factors_path, cohort);

  fs::create_directories(io.output_dir);
  auto out_path = [&](const char* name) { return (fs::path(io.output_dir) / name).string(); };

  ssdid::OracleConfig cfg;
  if (a_star != 0 && t_star != 0) {
    cfg = ssdid::OracleConfig{a_star, t_star};
  } else {
    auto bounds = ssdid::tightest_oracle_bounds(factors, cohort);
    if (!bounds) {
      // Classify the failure against the loosest conceivable bounds.
      ssdid::AdoptionTime fallback_a = 0;
      for (ssdid::AdoptionTime a = cohort.T; a >= 2; --a) {
        if (!cohort.controls_after(a).empty()) {
          fallback_a = a;
          break;
        }
      }
      std::string reason = "affine_hull.no_feasible_bounds";
      json hull_detail;
      if (fallback_a >= 2) {
        ssdid::AffineHullReport hull =
            ssdid::check_affine_hull(factors, cohort, ssdid::OracleConfig{fallback_a, 2});
        reason = !hull.loadings_ok ? "affine_hull.loadings_rank" : "affine_hull.factors_rank";
        hull_detail = {{"loadings_rank", hull.loadings_rank},
                       {"factors_rank", hull.factors_rank},
                       {"required_rank", hull.required_rank}};
      }
      json out = {{"pass", false}, {"reason", reason}, {"affine_hull", hull_detail}};
      write_json_atomic(out_path("oracle_check.json"), out);
      std::cerr << out.dump() << "\n";
      return 1;
    }
    cfg = *bounds;
  }

  ssdid::AffineHullReport hull = ssdid::check_affine_hull(factors, cohort, cfg);
  json hull_json = {{"ok", hull.ok},
                    {"required_rank", hull.required_rank},
                    {"loadings_rank", hull.loadings_rank},
                    {"factors_rank", hull.factors_rank},
                    {"loadings_min_sv", hull.loadings_min_sv},
                    {"factors_min_sv", hull.factors_min_sv},
                    {"a_star", cfg.a_star},
                    {"t_star", cfg.t_star}};
  if (!hull.ok) {
    json out = {{"pass", false},
                {"reason", !hull.loadings_ok ? "affine_hull.loadings_rank"
                                             : "affine_hull.factors_rank"},
                {"affine_hull", hull_json}};
    write_json_atomic(out_path("oracle_check.json"), out);
    std::cerr << out.dump() << "\n";
    return 1;
  }

  ssdid::EstimateGrid seq = ssdid::run_sequential_ols(cohort, factors, cfg);
  ssdid::EstimateGrid joint = ssdid::run_joint_ols(cohort, factors, cfg);

  double max_dev = 0.0;
  std::ostringstream cells;
  cells << "a,k,tau_sequential,tau_joint,abs_diff\n";
  for (const auto& cell : seq.cells) {
    const ssdid::CellEstimate* other = joint.find(cell.row, cell.horizon);
    if (!other) continue;
    double dev = std::abs(cell.tau_hat - other->tau_hat);
    max_dev = std::max(max_dev, dev);
    cells << cell.cohort << ',' << cell.horizon << ',' << fmt(cell.tau_hat) << ','
          << fmt(other->tau_hat) << ',' << fmt(dev) << '\n';
  }
  ssdid::write_text_atomic(out_path("oracle_cells.csv"), cells.str());

  bool pass = max_dev <= tol;
  json out = {{"pass", pass}, {"max_abs_diff", max_dev}, {"tolerance", tol},
              {"affine_hull", hull_json}};
  if (!pass) out["reason"] = "equivalence.max_deviation";
  write_json_atomic(out_path("oracle_check.json"), out);
  if (!pass) std::cerr << out.dump() << "\n";
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential synthetic difference-in-differences toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommonIo io;
  EstimatorFlags ef_est, ef_plac, ef_mc;
  BootstrapFlags bf_est, bf_plac, bf_mc;

  auto* estimate = app.add_subcommand("estimate", "Estimate event-study effects from a panel CSV");
  estimate->add_option("--input", io.input, "Panel CSV")->required();
  estimate->add_option("--output-dir", io.output_dir, "Output directory");
  add_estimator_flags(estimate, ef_est);
  add_bootstrap_flags(estimate, bf_est, 0);

  int placebo_P = 1;
  bool anticipation = false;
  double z_threshold = 1.959963984540054;
  auto* placebo = app.add_subcommand("placebo", "Backdate adoptions and test for zero effects");
  placebo->add_option("--input", io.input, "Panel CSV")->required();
  placebo->add_option("--output-dir", io.output_dir, "Output directory");
  placebo->add_option("--placebo-p", placebo_P, "Backdating shift P >= 1")->required();
  placebo->add_flag("--anticipation", anticipation,
                    "Keep --k-max horizons (targets true effects at k >= P)");
  placebo->add_option("--z-threshold", z_threshold, "Pass/fail |z| bound");
  add_estimator_flags(placebo, ef_plac);
  add_bootstrap_flags(placebo, bf_plac, 100);

  std::string spec_path;
  std::uint64_t sim_seed = 0;
  bool sim_seed_set = false;
  auto* simulate = app.add_subcommand("simulate", "Draw a synthetic panel from a design spec");
  simulate->add_option("--design-spec", spec_path, "Design-spec file")->required();
  simulate->add_option("--output-dir", io.output_dir, "Output directory");
  simulate->add_option("--seed", sim_seed, "RNG seed")
      ->required()
      ->each([&sim_seed_set](const std::string&) { sim_seed_set = true; });

  int reps = 0;
  bool with_oracle = false;
  bool noise_only = false;
  bool per_unit_rows = false;
  int mc_threads = 1;
  auto* montecarlo = app.add_subcommand("montecarlo", "Replicate a design and summarize RMSE/coverage");
  montecarlo->add_option("--design-spec", spec_path, "Design-spec file")->required();
  montecarlo->add_option("--output-dir", io.output_dir, "Output directory");
  montecarlo->add_option("--reps", reps, "Replications")->required()->check(CLI::PositiveNumber);
  montecarlo->add_flag("--with-oracle", with_oracle, "Also run the known-factor benchmark");
  montecarlo->add_flag("--noise-only", noise_only,
                       "Keep effects/loadings/adoption fixed; redraw only the shocks");
  montecarlo->add_flag("--per-unit-rows", per_unit_rows,
                       "Treat each unit as its own series with row-level bootstrap");
  montecarlo->add_option("--mc-threads", mc_threads, "Worker threads over replications");
  add_estimator_flags(montecarlo, ef_mc);
  add_bootstrap_flags(montecarlo, bf_mc, 100);

  std::string factors_path;
  std::int64_t a_star = 0;
  int t_star = 0;
  double oracle_tol = 1e-8;
  auto* oracle_check = app.add_subcommand("oracle-check",
                                          "Verify the two oracle paths agree on a factor panel");
  oracle_check->add_option("--input", io.input, "Panel CSV")->required();
  oracle_check->add_option("--factors", factors_path, "Factors CSV")->required();
  oracle_check->add_option("--output-dir", io.output_dir, "Output directory");
  oracle_check->add_option("--a-star", a_star, "Loadings bound (default: widest feasible)");
  oracle_check->add_option("--t-star", t_star, "Factors bound (default: widest feasible)");
  oracle_check->add_option("--tol", oracle_tol, "Equivalence tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return 2;
  }

  try {
    if (estimate->parsed()) return cmd_estimate(io, ef_est, bf_est);
    if (placebo->parsed()) {
      return cmd_placebo(io, ef_plac, bf_plac, placebo_P, anticipation, z_threshold);
    }
    if (simulate->parsed()) return cmd_simulate(spec_path, io.output_dir, sim_seed, sim_seed_set);
    if (montecarlo->parsed()) {
      require_seed(bf_mc, true);
      return cmd_montecarlo(spec_path, io.output_dir, reps, ef_mc, bf_mc, with_oracle, bf_mc.seed,
                            bf_mc.seed_set, mc_threads, noise_only, per_unit_rows);
    }
    if (oracle_check->parsed()) {
      return cmd_oracle_check(io, factors_path, a_star, t_star, oracle_tol);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << nlohmann::json{{"error", {{"code", "cli.flag_misuse"}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return 2;
  } catch (const ssdid::Error& e) {
    std::cerr << nlohmann::json{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  }
  return 2;
}
