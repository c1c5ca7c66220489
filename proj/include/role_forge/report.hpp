// SPDX-License-Identifier: Apache-2.0
//
// Metrics and role CSV export, plus standalone SVG plots rendered from
// those CSV files.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "role_forge/trainer.hpp"

namespace role_forge {

inline const std::vector<std::string> kMetricsColumns{"update", "env_steps", "l_td", "l_i", "l_d", "total",
                                                      "eps", "eval_return", "eval_success", "between_d",
                                                      "within_d"};
inline const std::vector<std::string> kRoleColumns{"episode", "t",  "agent", "duty_label", "mu0",
                                                   "mu1",     "mu2", "s0",   "s1",         "s2"};

/// 17 significant digits, enough to round-trip every double.
std::string format_double(double v);

std::string metrics_header();
/// Missing optional fields are left empty.
std::string metrics_line(const MetricsRow& row);

/// Append-only metrics file. The header is written when the file is new or
/// empty; every row is flushed so a crash leaves a parseable prefix.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const MetricsRow& row);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

void write_roles_csv(const std::filesystem::path& path, const std::vector<RoleRecord>& roles);

/// Header plus rows of a comma-separated file; fields are kept as text.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Eval return and training loss against environment steps.
std::string learning_curve_svg(const CsvTable& metrics);
/// mu0 against mu1 of every exported role, coloured by duty label.
std::string role_scatter_svg(const CsvTable& roles);

}  // namespace role_forge
