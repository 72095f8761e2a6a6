#pragma once

// Minimal static SVG charts for the sweep and long-tail reports.

#include <filesystem>
#include <string>
#include <vector>

namespace retrodiff {

struct LineSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional, same length as y
};

struct BarSeries {
  std::string name;
  std::vector<double> values;  // one per category; NaN leaves a gap
};

void write_line_svg(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<LineSeries>& series);

void write_bar_svg(const std::filesystem::path& path, const std::string& title, const std::vector<std::string>& categories,
                   const std::string& y_label, const std::vector<BarSeries>& series);

}  // namespace retrodiff
