#pragma once

#include <string>
#include <vector>

#include "l2s/core/view.hpp"

namespace l2s::harness {

struct Series {
    std::string label;
    std::vector<double> x, y;
    float rgb[3] = {0.2f, 0.4f, 0.8f};
};

// Minimal line chart (axes, ticks, legend swatches) written as a PNG.
void plot_lines(const std::string& path, const std::vector<Series>& series,
                const std::string& title = "", int width = 720, int height = 480);

}  // namespace l2s::harness
