#pragma once

#include <string>

#include "fbsde/common.hpp"

namespace fbsde {

/// Minimal path-based line plot: axes, decade ticks on log scales, one
/// polyline. Points that cannot live on a log axis (<= 0, non-finite) are
/// dropped.
void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& xlabel, const std::string& ylabel, const Vec& x,
                         const Vec& y, bool logx, bool logy);

} // namespace fbsde
