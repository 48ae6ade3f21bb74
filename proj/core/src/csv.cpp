#include "ssdid/csv.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ssdid {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

double parse_double(const std::string& s, const std::string& path, size_t line_no,
                    const char* what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(errc::io_parse, path + ":" + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

long parse_long(const std::string& s, const std::string& path, size_t line_no, const char* what) {
  try {
    size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(errc::io_parse, path + ":" + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

AdoptionTime parse_adoption(const std::string& raw, const std::string& path, size_t line_no) {
  std::string s = lower(trim(raw));
  if (s.empty() || s == "inf" || s == "infinity" || s == "never") return kNeverTreated;
  return parse_long(s, path, line_no, "adoption");
}

std::ifstream open_or_fail(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    fail(errc::io_not_found, "file not found: " + path);
  }
  std::ifstream in(path);
  if (!in) fail(errc::io_not_found, "cannot open: " + path);
  return in;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<PanelRecord> read_panel_csv(const std::string& path) {
  std::ifstream in = open_or_fail(path);
  std::string line;
  if (!std::getline(in, line)) fail(errc::io_parse, path + ": empty file");

  auto header = split_line(line);
  int c_unit = -1, c_period = -1, c_outcome = -1, c_adoption = -1, c_weight = -1, c_group = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    std::string h = lower(trim(header[i]));
    int idx = static_cast<int>(i);
    if (h == "unit") c_unit = idx;
    else if (h == "period") c_period = idx;
    else if (h == "outcome") c_outcome = idx;
    else if (h == "adoption") c_adoption = idx;
    else if (h == "weight") c_weight = idx;
    else if (h == "group") c_group = idx;
  }
  if (c_unit < 0 || c_period < 0 || c_outcome < 0 || c_adoption < 0) {
    fail(errc::io_parse, path + ": header must contain unit,period,outcome,adoption");
  }

  std::vector<PanelRecord> records;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    auto get = [&](int c) -> std::string {
      if (c < 0 || static_cast<size_t>(c) >= fields.size()) return "";
      return trim(fields[static_cast<size_t>(c)]);
    };
    PanelRecord r;
    r.unit = get(c_unit);
    if (r.unit.empty()) fail(errc::io_parse, path + ":" + std::to_string(line_no) + ": empty unit id");
    r.period = static_cast<int>(parse_long(get(c_period), path, line_no, "period"));
    r.outcome = parse_double(get(c_outcome), path, line_no, "outcome");
    r.adoption = parse_adoption(get(c_adoption), path, line_no);
    if (c_weight >= 0) {
      std::string w = get(c_weight);
      r.weight = w.empty() ? 1.0 : parse_double(w, path, line_no, "weight");
    }
    if (c_group >= 0) r.group = get(c_group);
    records.push_back(std::move(r));
  }
  return records;
}

void write_panel_csv(const std::string& path, const std::vector<PanelRecord>& records) {
  std::ostringstream out;
  out << "unit,period,outcome,adoption,weight,group\n";
  for (const auto& r : records) {
    out << r.unit << ',' << r.period << ',' << format_double(r.outcome) << ','
        << adoption_to_string(r.adoption) << ',' << format_double(r.weight) << ',' << r.group
        << '\n';
  }
  write_text_atomic(path, out.str());
}

FactorStructure read_factors_csv(const std::string& path, const CohortPanel& panel) {
  std::ifstream in = open_or_fail(path);
  std::string line;
  if (!std::getline(in, line)) fail(errc::io_parse, path + ": empty file");
  auto header = split_line(line);
  if (header.size() < 2 || lower(trim(header[0])) != "kind" || lower(trim(header[1])) != "key") {
    fail(errc::io_parse, path + ": header must start with kind,key");
  }
  const int r = static_cast<int>(header.size()) - 2;

  FactorStructure f;
  f.r = r;
  f.theta = Eigen::MatrixXd::Zero(panel.n_rows(), r);
  f.psi = Eigen::MatrixXd::Zero(panel.T, r);
  std::vector<char> seen_row(static_cast<size_t>(panel.n_rows()), 0);
  std::vector<char> seen_period(static_cast<size_t>(panel.T), 0);

  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != static_cast<size_t>(r) + 2) {
      fail(errc::io_parse, path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(r + 2) + " fields");
    }
    std::string kind = lower(trim(fields[0]));
    std::string key = trim(fields[1]);
    if (kind == "cohort") {
      int row = panel.row_by_label(key);
      if (row < 0) {
        fail(errc::io_parse,
             path + ":" + std::to_string(line_no) + ": no panel series labelled '" + key + "'");
      }
      for (int m = 0; m < r; ++m) {
        f.theta(row, m) = parse_double(trim(fields[static_cast<size_t>(m) + 2]), path, line_no,
                                       "loading");
      }
      seen_row[static_cast<size_t>(row)] = 1;
    } else if (kind == "period") {
      long t = parse_long(key, path, line_no, "period");
      if (t < 1 || t > panel.T) {
        fail(errc::io_parse, path + ":" + std::to_string(line_no) + ": period out of range");
      }
      for (int m = 0; m < r; ++m) {
        f.psi(t - 1, m) = parse_double(trim(fields[static_cast<size_t>(m) + 2]), path, line_no,
                                       "factor");
      }
      seen_period[static_cast<size_t>(t - 1)] = 1;
    } else {
      fail(errc::io_parse, path + ":" + std::to_string(line_no) + ": kind must be cohort|period");
    }
  }

  if (r > 0) {
    for (int i = 0; i < panel.n_rows(); ++i) {
      if (!seen_row[static_cast<size_t>(i)]) {
        fail(errc::io_parse, path + ": missing loadings for series '" +
                                 panel.rows[static_cast<size_t>(i)].label + "'");
      }
    }
    for (int t = 0; t < panel.T; ++t) {
      if (!seen_period[static_cast<size_t>(t)]) {
        fail(errc::io_parse, path + ": missing factors for period " + std::to_string(t + 1));
      }
    }
  }
  return f;
}

void write_factors_csv(const std::string& path, const FactorStructure& factors,
                       const CohortPanel& panel) {
  std::ostringstream out;
  out << "kind,key";
  for (int m = 0; m < factors.r; ++m) out << ",v" << (m + 1);
  out << '\n';
  for (int i = 0; i < panel.n_rows(); ++i) {
    out << "cohort," << panel.rows[static_cast<size_t>(i)].label;
    for (int m = 0; m < factors.r; ++m) out << ',' << format_double(factors.theta(i, m));
    out << '\n';
  }
  for (int t = 0; t < panel.T; ++t) {
    out << "period," << (t + 1);
    for (int m = 0; m < factors.r; ++m) out << ',' << format_double(factors.psi(t, m));
    out << '\n';
  }
  write_text_atomic(path, out.str());
}

void write_text_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail(errc::io_write, "cannot write: " + tmp.string());
    out << content;
    if (!out.good()) fail(errc::io_write, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) fail(errc::io_write, "rename failed: " + target.string() + " (" + ec.message() + ")");
}

}  // namespace ssdid
