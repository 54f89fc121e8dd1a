// Copyright 2026 The codkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "codkit/analysis.hpp"
#include "codkit/error.hpp"

namespace codkit {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// White to dark blue.
std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto ch = [&](double lo, double hi) { return static_cast<int>(std::lround(hi + (lo - hi) * t)); };
  std::ostringstream os;
  os << "rgb(" << ch(8, 255) << ',' << ch(48, 255) << ',' << ch(107, 255) << ')';
  return os.str();
}

}  // namespace

nlohmann::json to_json(const RpnRecallReport& r) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"gt_count", g.gt_count},
                      {"found", g.found},
                      {"found_fraction", g.found_fraction},
                      {"mean_objectness", g.mean_objectness}});
  }
  return {{"match_rule", "iou > 0.5"}, {"groups", groups}};
}

nlohmann::json to_json(const RoiPartition& r) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.groups) {
    groups.push_back({{"count", g.count},
                      {"correct", g.correct},
                      {"wrong_class", g.wrong_class},
                      {"background", g.background},
                      {"wrong_by_group", g.wrong_by_group}});
  }
  return {{"groups", groups}};
}

nlohmann::json to_json(const ConfusionMatrix& m) {
  return {{"absolute", m.absolute}, {"normalized", m.normalized}, {"gt_counts", m.gt_counts}};
}

nlohmann::json to_json(const CooccurrenceMatrix& m) {
  nlohmann::json values = nlohmann::json::array();
  for (std::size_t a = 0; a < m.values.size(); ++a) {
    values.push_back(m.row_defined[a] ? nlohmann::json(m.values[a]) : nlohmann::json(nullptr));
  }
  return {{"denominator", m.per_instance ? "row instances" : "images containing the row class"},
          {"values", values},
          {"denominators", m.denominators}};
}

void write_matrix_csv(const std::vector<std::vector<double>>& m, const std::vector<std::string>& labels,
                      const std::filesystem::path& path) {
  auto os = open_out(path);
  os << std::setprecision(10) << "class";
  for (const auto& l : labels) os << ',' << l;
  os << '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    os << (r < labels.size() ? labels[r] : std::to_string(r + 1));
    for (const double v : m[r]) os << ',' << v;
    os << '\n';
  }
}

void write_loss_study_csv(std::span<const LossStudyRow> rows, double l, double delta,
                          const std::filesystem::path& path) {
  auto os = open_out(path);
  os << std::setprecision(12);
  os << "# l=" << l << " delta=" << delta << " eps=1e-6\n"
     << "# ce: -log softmax of the second logit (the softmax probability itself is not a loss)\n"
     << "# mse, huber: mean over logits, so absolute scale differs from a summed loss by the logit count\n"
     << "alpha,l1_distance,ce,mse,huber\n";
  for (const auto& r : rows) os << r.alpha << ',' << r.l1 << ',' << r.ce << ',' << r.mse << ',' << r.huber << '\n';
}

void write_heatmap_svg(const std::vector<std::vector<double>>& m, const std::vector<std::string>& labels,
                       const std::string& title, const std::filesystem::path& path) {
  const int n = static_cast<int>(m.size());
  const int cell = 28, left = 110, top = 40;
  double hi = 0.0;
  for (const auto& row : m)
    for (const double v : row)
      if (std::isfinite(v)) hi = std::max(hi, v);
  if (hi <= 0.0) hi = 1.0;
  auto os = open_out(path);
  const int width = left + n * cell + 20, height = top + n * cell + 110;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"10\">\n"
     << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">" << xml_escape(title) << "</text>\n";
  for (int r = 0; r < n; ++r) {
    const std::string label = r < static_cast<int>(labels.size()) ? labels[r] : std::to_string(r + 1);
    os << "<text x=\"" << left - 4 << "\" y=\"" << top + r * cell + cell / 2 + 4 << "\" text-anchor=\"end\">"
       << xml_escape(label) << "</text>\n";
    os << "<text transform=\"translate(" << left + r * cell + cell / 2 + 4 << ',' << top + n * cell + 6
       << ") rotate(90)\">" << xml_escape(label) << "</text>\n";
    for (int c = 0; c < static_cast<int>(m[r].size()); ++c) {
      const double v = m[r][c];
      os << "<rect x=\"" << left + c * cell << "\" y=\"" << top + r * cell << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"" << heat_color(std::isfinite(v) ? v / hi : 0.0)
         << "\" stroke=\"#ddd\"><title>" << std::setprecision(4) << v << "</title></rect>\n";
    }
  }
  os << "</svg>\n";
}

void write_line_plot_svg(const std::vector<double>& x, const std::vector<PlotSeries>& series,
                         const std::string& x_label, const std::string& title, const std::filesystem::path& path) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const double w = 520, h = 340, left = 60, right = 130, top = 36, bottom = 46;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = 0.0, y1 = -x0;
  for (const double v : x) x0 = std::min(x0, v), x1 = std::max(x1, v);
  for (const auto& s : series)
    for (const double v : s.y)
      if (std::isfinite(v)) y1 = std::max(y1, v), y0 = std::min(y0, v);
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  const auto px = [&](double v) { return left + (v - x0) / (x1 - x0) * (w - left - right); };
  const auto py = [&](double v) { return h - bottom - (v - y0) / (y1 - y0) * (h - top - bottom); };
  auto os = open_out(path);
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">" << xml_escape(title) << "</text>\n"
     << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">"
     << xml_escape(x_label) << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n"
       << "<text x=\"" << px(xv) << "\" y=\"" << h - bottom + 14 << "\" text-anchor=\"middle\">" << xv
       << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < x.size() && i < series[s].y.size(); ++i) {
      if (std::isfinite(series[s].y[i])) os << px(x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    os << "\"/>\n<text x=\"" << w - right + 10 << "\" y=\"" << top + 16 * (s + 1) << "\" fill=\"" << color << "\">"
       << xml_escape(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace codkit
