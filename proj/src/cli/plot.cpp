// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "cli/plot.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cli/runner.h"
#include "core/errors.h"
#include "json.hpp"

namespace contsup {

using nlohmann::json;

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 440.0;
constexpr double kMarginLeft = 70.0;
constexpr double kMarginRight = 24.0;
constexpr double kMarginTop = 40.0;
constexpr double kMarginBottom = 56.0;

const char* kPalette[8] = {"#1f6fb4", "#d94a35", "#3f9947", "#8a57c4",
                           "#c78a1e", "#2aa6a1", "#b4457e", "#6b6b6b"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return std::string(buf);
}

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> ticks;
};

// Expands [lo, hi] to round bounds and places about `count` round ticks.
Axis nice_axis(double lo, double hi, int count) {
  if (!(hi > lo)) {
    hi = lo + 1.0;
    lo -= 1.0;
  }
  const double span = hi - lo;
  const double raw_step = span / std::max(count, 2);
  const double mag = std::pow(10.0, std::floor(std::log10(raw_step)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (mag * m >= raw_step) {
      step = mag * m;
      break;
    }
  }
  Axis axis;
  axis.lo = std::floor(lo / step) * step;
  axis.hi = std::ceil(hi / step) * step;
  for (double t = axis.lo; t <= axis.hi + step * 1e-9; t += step) {
    axis.ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
  }
  return axis;
}

struct Figure {
  std::ostringstream body;
  Axis x, y;

  double px(double v) const {
    return kMarginLeft +
           (v - x.lo) / (x.hi - x.lo) * (kWidth - kMarginLeft - kMarginRight);
  }
  double py(double v) const {
    return kHeight - kMarginBottom -
           (v - y.lo) / (y.hi - y.lo) *
               (kHeight - kMarginTop - kMarginBottom);
  }

  void frame(const std::string& title, const std::string& xlabel,
             const std::string& ylabel) {
    body << "<rect x='" << fmt(kMarginLeft) << "' y='" << fmt(kMarginTop)
         << "' width='" << fmt(kWidth - kMarginLeft - kMarginRight)
         << "' height='" << fmt(kHeight - kMarginTop - kMarginBottom)
         << "' fill='none' stroke='#888'/>\n";
    for (double t : x.ticks) {
      body << "<line x1='" << fmt(px(t)) << "' y1='"
           << fmt(kHeight - kMarginBottom) << "' x2='" << fmt(px(t))
           << "' y2='" << fmt(kHeight - kMarginBottom + 5)
           << "' stroke='#888'/>\n";
      body << "<text x='" << fmt(px(t)) << "' y='"
           << fmt(kHeight - kMarginBottom + 20)
           << "' font-size='12' text-anchor='middle'>" << fmt(t)
           << "</text>\n";
    }
    for (double t : y.ticks) {
      body << "<line x1='" << fmt(kMarginLeft - 5) << "' y1='" << fmt(py(t))
           << "' x2='" << fmt(kMarginLeft) << "' y2='" << fmt(py(t))
           << "' stroke='#888'/>\n";
      body << "<text x='" << fmt(kMarginLeft - 9) << "' y='"
           << fmt(py(t) + 4) << "' font-size='12' text-anchor='end'>"
           << fmt(t) << "</text>\n";
    }
    body << "<text x='" << fmt(kWidth / 2) << "' y='22' font-size='15' "
         << "text-anchor='middle' font-weight='bold'>" << title
         << "</text>\n";
    body << "<text x='" << fmt(kWidth / 2) << "' y='"
         << fmt(kHeight - 14) << "' font-size='13' text-anchor='middle'>"
         << xlabel << "</text>\n";
    body << "<text x='18' y='" << fmt(kHeight / 2)
         << "' font-size='13' text-anchor='middle' transform='rotate(-90 18 "
         << fmt(kHeight / 2) << ")'>" << ylabel << "</text>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts,
                const char* color) {
    body << "<polyline fill='none' stroke='" << color
         << "' stroke-width='2' points='";
    for (const auto& [vx, vy] : pts) {
      body << fmt(px(vx)) << "," << fmt(py(vy)) << " ";
    }
    body << "'/>\n";
    for (const auto& [vx, vy] : pts) {
      body << "<circle cx='" << fmt(px(vx)) << "' cy='" << fmt(py(vy))
           << "' r='3.5' fill='" << color << "'/>\n";
    }
  }

  void legend_entry(int slot, const std::string& label, const char* color) {
    const double lx = kMarginLeft + 12;
    const double ly = kMarginTop + 14 + 18.0 * slot;
    body << "<line x1='" << fmt(lx) << "' y1='" << fmt(ly) << "' x2='"
         << fmt(lx + 22) << "' y2='" << fmt(ly) << "' stroke='" << color
         << "' stroke-width='2'/>\n";
    body << "<text x='" << fmt(lx + 28) << "' y='" << fmt(ly + 4)
         << "' font-size='12'>" << label << "</text>\n";
  }

  std::string finish() const {
    std::string out =
        "<svg xmlns='http://www.w3.org/2000/svg' width='" + fmt(kWidth) +
        "' height='" + fmt(kHeight) + "' viewBox='0 0 " + fmt(kWidth) + " " +
        fmt(kHeight) + "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    out += body.str();
    out += "</svg>\n";
    return out;
  }
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("plot: cannot open " + path);
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IngestError("plot: invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

// Groups summaries by context mode; within a mode, averages the best final
// error over seeds sharing the same x value.
std::string render_grouped_error(const std::vector<std::string>& inputs,
                                 bool memory_axis) {
  // mode -> x -> (sum error, count)
  std::map<std::string, std::map<double, std::pair<double, int>>> groups;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const std::string& path : inputs) {
    const json s = read_json_file(path);
    const std::string mode =
        s.at("config").at("context").at("mode").get<std::string>();
    const double err = s.at("best_final_error").get<double>();
    const double xv =
        memory_axis
            ? s.at("memory").at("peak_training_bytes").get<double>() / 1.0e6
            : static_cast<double>(
                  s.at("config").at("partition").at("k").get<int>());
    auto& cell = groups[mode][xv];
    cell.first += err;
    cell.second += 1;
  }
  Figure fig;
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>
      lines;
  for (const auto& [mode, cells] : groups) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [xv, acc] : cells) {
      const double y = acc.first / acc.second;
      pts.emplace_back(xv, y);
      xmin = std::min(xmin, xv);
      xmax = std::max(xmax, xv);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
    lines.emplace_back(mode, pts);
  }
  if (lines.empty()) {
    throw IngestError("plot: no usable summaries");
  }
  fig.x = nice_axis(xmin, xmax, 6);
  fig.y = nice_axis(ymin, ymax, 6);
  fig.frame(memory_axis ? "Test error vs training memory"
                        : "Test error vs module count",
            memory_axis ? "peak training memory (MB)" : "modules K",
            "final test error");
  int slot = 0;
  for (const auto& [mode, pts] : lines) {
    const char* color = kPalette[slot % 8];
    fig.polyline(pts, color);
    fig.legend_entry(slot, mode, color);
    ++slot;
  }
  return fig.finish();
}

std::string render_info_curves(const std::vector<std::string>& inputs) {
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>
      curves;
  double xmin = 1e300, xmax = -1e300, ymax = -1e300;
  for (const std::string& path : inputs) {
    std::ifstream in(path);
    if (!in) {
      throw IngestError("plot: cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
      throw IngestError("plot: empty curve file " + path);
    }
    std::vector<std::pair<double, double>> pts;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      double module = 0.0, est = 0.0;
      if (std::sscanf(line.c_str(), "%lf,%lf", &module, &est) != 2) {
        throw IngestError("plot: malformed curve row in " + path);
      }
      pts.emplace_back(module, est);
      xmin = std::min(xmin, module);
      xmax = std::max(xmax, module);
      ymax = std::max(ymax, est);
    }
    if (pts.empty()) {
      throw IngestError("plot: no data rows in " + path);
    }
    // Label by the containing run directory.
    std::string label = path;
    const size_t slash = label.find_last_of('/');
    if (slash != std::string::npos) {
      const size_t prev = label.find_last_of('/', slash - 1);
      label = label.substr(prev == std::string::npos ? 0 : prev + 1,
                           slash - (prev == std::string::npos ? 0 : prev + 1));
    }
    curves.emplace_back(label, pts);
  }
  Figure fig;
  fig.x = nice_axis(xmin, xmax, 6);
  fig.y = nice_axis(0.0, std::max(ymax, 0.1), 6);
  fig.frame("Task-relevant information by module depth", "module",
            "estimated information (nats)");
  int slot = 0;
  for (const auto& [label, pts] : curves) {
    const char* color = kPalette[slot % 8];
    fig.polyline(pts, color);
    fig.legend_entry(slot, label, color);
    ++slot;
  }
  return fig.finish();
}

std::string render_heatmap(const std::string& input) {
  const json s = read_json_file(input);
  const auto matrix =
      s.at("adapter_weight_heatmap").get<std::vector<std::vector<double>>>();
  if (matrix.empty()) {
    throw IngestError("plot: summary has an empty adapter weight matrix");
  }
  const int rows = static_cast<int>(matrix.size());
  const int cols = static_cast<int>(matrix.front().size());
  double vmax = 0.0;
  for (const auto& row : matrix) {
    for (double v : row) vmax = std::max(vmax, v);
  }
  if (vmax <= 0.0) vmax = 1.0;

  const double cell = std::min(420.0 / std::max(rows, cols), 40.0);
  const double gx = 90.0, gy = 60.0;
  std::ostringstream body;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double t = matrix[r][c] / vmax;
      // White to deep blue ramp.
      const int red = static_cast<int>(std::lround(255 - 215 * t));
      const int green = static_cast<int>(std::lround(255 - 175 * t));
      const int blue = static_cast<int>(std::lround(255 - 75 * t));
      char color[8];
      std::snprintf(color, sizeof(color), "#%02x%02x%02x", red, green, blue);
      body << "<rect x='" << fmt(gx + c * cell) << "' y='"
           << fmt(gy + r * cell) << "' width='" << fmt(cell) << "' height='"
           << fmt(cell) << "' fill='" << color
           << "' stroke='#ccc' stroke-width='0.5'/>\n";
    }
  }
  for (int r = 0; r < rows; ++r) {
    body << "<text x='" << fmt(gx - 8) << "' y='"
         << fmt(gy + r * cell + cell / 2 + 4)
         << "' font-size='11' text-anchor='end'>"
         << (r == 0 ? std::string("input") : "h" + std::to_string(r))
         << "</text>\n";
  }
  for (int c = 0; c < cols; ++c) {
    body << "<text x='" << fmt(gx + c * cell + cell / 2) << "' y='"
         << fmt(gy - 8) << "' font-size='11' text-anchor='middle'>m"
         << c + 1 << "</text>\n";
  }
  const double w = gx + cols * cell + 40;
  const double h = gy + rows * cell + 40;
  std::string out = "<svg xmlns='http://www.w3.org/2000/svg' width='" +
                    fmt(w) + "' height='" + fmt(h) + "' viewBox='0 0 " +
                    fmt(w) + " " + fmt(h) +
                    "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  out += "<text x='" + fmt(w / 2) +
         "' y='24' font-size='15' text-anchor='middle' font-weight='bold'>"
         "Mean normalized adapter weight by source and destination</text>\n";
  out += body.str();
  out += "</svg>\n";
  return out;
}

}  // namespace

void render_plot(const std::string& kind,
                 const std::vector<std::string>& inputs,
                 const std::string& output_path) {
  if (inputs.empty()) {
    throw ConfigError("plot: at least one input file is required");
  }
  std::string svg;
  if (kind == "error_vs_K") {
    svg = render_grouped_error(inputs, false);
  } else if (kind == "error_vs_memory") {
    svg = render_grouped_error(inputs, true);
  } else if (kind == "info_curve") {
    svg = render_info_curves(inputs);
  } else if (kind == "adapter_weight_heatmap") {
    svg = render_heatmap(inputs.front());
  } else {
    throw ConfigError("plot: unknown kind '" + kind + "'");
  }
  write_text_atomic(output_path, svg);
}

}  // namespace contsup
