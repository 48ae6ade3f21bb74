#pragma once

#include <vector>

#include "ssdid/inference.hpp"

namespace ssdid {

struct PlaceboConfig {
  int P = 1;                    // backdating shift
  double z_threshold = 1.959963984540054;  // |z| bound on horizon aggregates
  // Limited-anticipation reuse: keep k_max from the estimator config instead
  // of P-1, so horizons k >= P target true effects at the shifted dates.
  bool anticipation = false;
};

struct PlaceboReport {
  int P = 0;
  BootstrapResult result;        // grid with K = P-1 (or the caller's K)
  std::vector<double> z_scores;  // per horizon aggregate
  bool pass = false;
};

// Backdates every adoption by P, reruns the estimator at horizons 0..P-1, and
// bootstraps; under the model the placebo aggregates center at zero.
PlaceboReport run_placebo(const PanelSource& src, const SsdidConfig& estimator_cfg,
                          const BootstrapConfig& bcfg, const PlaceboConfig& pcfg);

}  // namespace ssdid
