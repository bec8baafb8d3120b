#pragma once

#include <string>
#include <utility>
#include <vector>

namespace ccam {

struct SvgSeries {
    std::string label;
    std::string color;  // CSS color
    std::vector<double> x;
    std::vector<double> y;
};

// Static line plot with axes, tick labels and a legend.
void write_svg_lines(const std::string& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<SvgSeries>& series);

// Horizontal bar chart; values may be negative.
void write_svg_bars(const std::string& path, const std::string& title,
                    const std::vector<std::pair<std::string, double>>& bars);

}  // namespace ccam
