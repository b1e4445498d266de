#pragma once

#include <string>
#include <vector>

namespace nica {

struct SvgSeries {
  std::string label;
  std::vector<double> x, y;
  std::string color = "#1f6feb";
  bool markers = false;
};

/// Minimal static line chart: axes, ticks, polylines, and a legend, emitted
/// as a self-contained SVG document.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<SvgSeries>& series);

}  // namespace nica
