#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace idpf::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct Axes {
  std::string title, xlabel, ylabel;
  int width = 640, height = 480;
};

/// Line chart with markers and a legend, written as PNG.
void line_plot(const std::filesystem::path& path, const Axes& axes, const std::vector<Series>& series);

}  // namespace idpf::plot
