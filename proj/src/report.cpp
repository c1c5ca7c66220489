// SPDX-License-Identifier: Apache-2.0

#include "role_forge/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace role_forge {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += ',';
    s += parts[i];
  }
  return s;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string metrics_header() { return join(kMetricsColumns); }

std::string metrics_line(const MetricsRow& row) {
  return join({std::to_string(row.update), std::to_string(row.env_steps), format_double(row.l_td),
               format_double(row.l_i), format_double(row.l_d), format_double(row.total), format_double(row.eps),
               opt(row.eval_return), opt(row.eval_success), opt(row.between_d), opt(row.within_d)});
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : path_(path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  if (fresh) {
    out_ << metrics_header() << '\n';
    out_.flush();
  }
}

void MetricsWriter::write(const MetricsRow& row) {
  out_ << metrics_line(row) << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("write failed for " + path_.string());
}

void write_roles_csv(const std::filesystem::path& path, const std::vector<RoleRecord>& roles) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << join(kRoleColumns) << '\n';
  for (const auto& r : roles) {
    std::vector<std::string> f{std::to_string(r.episode), std::to_string(r.t), std::to_string(r.agent),
                               std::to_string(r.duty)};
    for (double m : r.dist.mu) f.push_back(format_double(m));
    for (double s : r.dist.sigma2) f.push_back(format_double(s));
    out << join(f) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("csv has no column '" + name + "'");
  return static_cast<int>(it - header.begin());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + " is empty");
  table.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != table.header.size())
      throw std::runtime_error(path.string() + ": row with " + std::to_string(row.size()) + " fields, expected " +
                               std::to_string(table.header.size()));
    table.rows.push_back(std::move(row));
  }
  return table;
}

namespace {

struct Series {
  std::vector<double> x, y;
  std::string colour;
  bool points = false;
};

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

// One framed panel at (ox, oy) of size w x h.
void panel(std::ostringstream& svg, double ox, double oy, double w, double h, const std::string& title,
           const std::string& xlabel, const std::vector<Series>& series) {
  Range rx, ry;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.x.size(); ++k) rx.add(s.x[k]), ry.add(s.y[k]);
  rx.settle();
  ry.settle();
  auto px = [&](double v) { return ox + (v - rx.lo) / (rx.hi - rx.lo) * w; };
  auto py = [&](double v) { return oy + h - (v - ry.lo) / (ry.hi - ry.lo) * h; };

  svg << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << w << "\" height=\"" << h
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  svg << "<text x=\"" << ox + w / 2 << "\" y=\"" << oy - 8 << "\" text-anchor=\"middle\">" << title << "</text>\n";
  svg << "<text x=\"" << ox + w / 2 << "\" y=\"" << oy + h + 32 << "\" text-anchor=\"middle\">" << xlabel
      << "</text>\n";
  svg << "<text x=\"" << ox << "\" y=\"" << oy + h + 16 << "\">" << format_double(rx.lo).substr(0, 8) << "</text>\n";
  svg << "<text x=\"" << ox + w << "\" y=\"" << oy + h + 16 << "\" text-anchor=\"end\">"
      << format_double(rx.hi).substr(0, 8) << "</text>\n";
  svg << "<text x=\"" << ox - 4 << "\" y=\"" << oy + h << "\" text-anchor=\"end\">" << format_double(ry.lo).substr(0, 8)
      << "</text>\n";
  svg << "<text x=\"" << ox - 4 << "\" y=\"" << oy + 10 << "\" text-anchor=\"end\">"
      << format_double(ry.hi).substr(0, 8) << "</text>\n";
  for (const auto& s : series) {
    if (s.points) {
      for (std::size_t k = 0; k < s.x.size(); ++k)
        svg << "<circle cx=\"" << px(s.x[k]) << "\" cy=\"" << py(s.y[k]) << "\" r=\"2\" fill=\"" << s.colour
            << "\" fill-opacity=\"0.6\"/>\n";
    } else if (!s.x.empty()) {
      svg << "<polyline fill=\"none\" stroke=\"" << s.colour << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t k = 0; k < s.x.size(); ++k) svg << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
      svg << "\"/>\n";
    }
  }
}

std::string open_svg(double w, double h) {
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return s.str();
}

}  // namespace

std::string learning_curve_svg(const CsvTable& metrics) {
  const int steps = metrics.column("env_steps");
  const int ret = metrics.column("eval_return");
  const int total = metrics.column("total");
  Series ev, loss;
  ev.colour = "#1f77b4";
  loss.colour = "#d62728";
  for (const auto& row : metrics.rows) {
    const double x = std::stod(row[static_cast<std::size_t>(steps)]);
    if (!row[static_cast<std::size_t>(ret)].empty()) {
      ev.x.push_back(x);
      ev.y.push_back(std::stod(row[static_cast<std::size_t>(ret)]));
    }
    loss.x.push_back(x);
    loss.y.push_back(std::stod(row[static_cast<std::size_t>(total)]));
  }
  std::ostringstream svg;
  svg << open_svg(900, 360);
  panel(svg, 70, 40, 340, 260, "greedy eval return", "env steps", {ev});
  panel(svg, 520, 40, 340, 260, "total loss", "env steps", {loss});
  svg << "</svg>\n";
  return svg.str();
}

std::string role_scatter_svg(const CsvTable& roles) {
  static const char* kColours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  const int duty = roles.column("duty_label");
  const int mu0 = roles.column("mu0");
  const int mu1 = roles.column("mu1");
  std::vector<Series> groups;
  for (const auto& row : roles.rows) {
    const int label = std::stoi(row[static_cast<std::size_t>(duty)]);
    if (label < 0) continue;
    if (static_cast<int>(groups.size()) <= label) groups.resize(static_cast<std::size_t>(label) + 1);
    auto& g = groups[static_cast<std::size_t>(label)];
    g.points = true;
    g.colour = kColours[label % 6];
    g.x.push_back(std::stod(row[static_cast<std::size_t>(mu0)]));
    g.y.push_back(std::stod(row[static_cast<std::size_t>(mu1)]));
  }
  std::ostringstream svg;
  svg << open_svg(480, 420);
  panel(svg, 70, 40, 360, 320, "role means by duty (mu0 vs mu1)", "mu0", groups);
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace role_forge
