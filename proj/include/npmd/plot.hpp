#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace npmd {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  double log_floor = 1e-12;  ///< values below this are drawn at the floor on a log axis
};

/// Static SVG line chart, one polyline per series.
void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                     const PlotOptions& options);

}  // namespace npmd
