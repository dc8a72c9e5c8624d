#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace gc {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct PlotAxes {
  std::string title, x_label, y_label;
  double x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
};

/// Polylines with axes, ticks and a legend.
std::string lineChartSvg(const PlotAxes& axes, const std::vector<PlotSeries>& series);

struct HistogramPanel {
  std::string title;
  double lo = 0.0, hi = 1.0;
  std::vector<std::int64_t> counts;
};

/// Panels laid out in one row.
std::string histogramSvg(const std::vector<HistogramPanel>& panels);

}  // namespace gc
