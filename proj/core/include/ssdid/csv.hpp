#pragma once

#include <string>
#include <vector>

#include "ssdid/oracle.hpp"
#include "ssdid/panel.hpp"

namespace ssdid {

// Long-format panel file. Header: unit,period,outcome,adoption[,weight][,group].
// `adoption` empty or "inf" marks never-treated units.
std::vector<PanelRecord> read_panel_csv(const std::string& path);
void write_panel_csv(const std::string& path, const std::vector<PanelRecord>& records);

// Factor file rows: kind,key,v1..vr with kind "cohort" (key = row label) or
// "period" (key = 1..T). Row order must cover every cohort row and period of
// the companion panel.
FactorStructure read_factors_csv(const std::string& path, const CohortPanel& panel);
void write_factors_csv(const std::string& path, const FactorStructure& factors,
                       const CohortPanel& panel);

// Writes via a temp file + rename so partially written outputs never appear.
void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace ssdid
