#pragma once

#include <string>
#include <utility>
#include <vector>

namespace et::svg {

// Heatmap with a linear blue-white-red ramp over [lo,hi]; one rect per
// cell, cell_px pixels each. Self-contained SVG, no external assets.
void write_heatmap(const std::string& path, const std::vector<double>& values,
                   std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0,
                   std::size_t cell_px = 16);

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

void write_line_chart(const std::string& path, const std::vector<Series>& series,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label, std::size_t width = 720,
                      std::size_t height = 480);

} // namespace et::svg
