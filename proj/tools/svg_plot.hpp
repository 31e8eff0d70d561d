// Static SVG figures: log-log curves with error bars, likelihood heat maps and
// bar charts. Output is deterministic for identical input.

#pragma once

#include <string>
#include <vector>

namespace clustat::plot {

struct Series {
  std::string label;
  std::vector<double> x, y, err;  // err may be empty
};

// Non-positive y values are drawn at |y| with hollow markers; NaNs are skipped.
std::string loglog_svg(const std::vector<Series>& series, const std::string& x_label, const std::string& y_label,
                       const std::string& title);

// z indexed [i * ys.size() + j] for xs[i], ys[j]; optional marked point.
std::string heatmap_svg(const std::vector<double>& xs, const std::vector<double>& ys, const std::vector<double>& z,
                        const std::string& x_label, const std::string& y_label, const std::string& title,
                        const double* mark_x = nullptr, const double* mark_y = nullptr);

std::string bar_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                    const std::string& y_label, const std::string& title);

void write_svg(const std::string& path, const std::string& svg);

}  // namespace clustat::plot
