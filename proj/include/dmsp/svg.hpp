#pragma once

#include <string>
#include <vector>

#include "dmsp/geometry.hpp"

namespace dmsp {

// Minimal self-contained SVG emission for the plot subcommand. No rendering
// dependencies; output diffs cleanly in tests.
namespace svg {

struct XY {
    double x, y;
};

std::string scatter_plot(const std::vector<XY>& points, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         bool with_diagonal);

std::string bar_chart(const std::vector<double>& values, const std::vector<std::string>& labels,
                      const std::string& title);

// values laid out row-major on a size x size lattice
std::string heat_map(const std::vector<double>& values, int size, const std::string& title);

}  // namespace svg
}  // namespace dmsp
