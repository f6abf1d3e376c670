#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace riskgen {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line plot with axes, ticks, and a legend, written as a PNG. Deterministic
/// rasterization; identical inputs give identical bytes.
void write_line_plot(const std::filesystem::path& png_path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series);

struct BarSeries {
  std::string label;
  std::vector<double> values;  // one per group
  std::vector<double> sd;      // optional, empty or one per group
};

/// Grouped bar chart; groups on the x axis, one bar per series within each
/// group, with optional plus/minus one-sd whiskers.
void write_bar_chart(const std::filesystem::path& png_path, const std::string& title,
                     const std::string& y_label, const std::vector<std::string>& group_labels,
                     const std::vector<BarSeries>& series);

}  // namespace riskgen
