#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cwhar::eval {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  // Optional categorical tick labels placed at x = 0, 1, 2, ...
  std::vector<std::string> x_categories;
  std::optional<double> y_min;
  std::optional<double> y_max;
  nlohmann::json metadata = nlohmann::json::object();
};

struct Bar {
  std::string label;
  double value = 0.0;
  double error = 0.0;  // half-height of the whisker, 0 for none
};

struct BarChart {
  std::string title;
  std::string y_label;
  std::vector<Bar> bars;
  std::optional<double> y_max;
  nlohmann::json metadata = nlohmann::json::object();
};

/// Standalone SVG documents. Output depends only on the inputs; numbers are
/// printed with fixed precision so regenerated files are byte-identical.
std::string render_svg(const LineChart& chart);
std::string render_svg(const BarChart& chart);

}  // namespace cwhar::eval
