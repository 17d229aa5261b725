#ifndef ELOK_PLOT_HPP
#define ELOK_PLOT_HPP

#include <string>
#include <vector>

#include "elok/ecg.hpp"
#include "elok/evaluation.hpp"

namespace elok {

// Shared canvas geometry. Fixed constants keep every chart byte-reproducible
// and let callers invert the data-to-pixel mapping.
inline constexpr double kSvgWidth = 800.0;
inline constexpr double kSvgHeight = 520.0;
inline constexpr double kSvgMarginLeft = 70.0;
inline constexpr double kSvgMarginRight = 30.0;
inline constexpr double kSvgMarginTop = 40.0;
inline constexpr double kSvgMarginBottom = 60.0;

// Linear data-to-pixel transform (y grows upward in data space, downward in
// pixel space). Degenerate ranges are widened symmetrically so the map is
// always invertible.
struct AxisMap {
    double x0 = 0.0, x1 = 1.0;  // data range mapped onto the plot area
    double y0 = 0.0, y1 = 1.0;

    double px(double x) const;
    double py(double y) const;
    double inv_px(double px) const;
    double inv_py(double py) const;
};
AxisMap axis_map(double x0, double x1, double y0, double y1);

// One box glyph per electrode in canonical order: whiskers span min..max,
// the box spans q1..q3, a tick marks the median. Each glyph is a
// `<g class="box" data-name="...">` group.
std::string svg_boxplot(const std::vector<ElectrodeStats>& stats, const std::string& title);

// Scatter of (x, y) points plus the least-squares line drawn across the
// full x range as `<line class="fit" .../>`; `fit` comes from correlate().
std::string svg_scatter(const std::vector<double>& x, const std::vector<double>& y,
                        const CorrelationReport& fit, const std::string& x_label,
                        const std::string& y_label, const std::string& title);

// Eight stacked lead panels (I, II, V1..V6). Trace `a` renders as
// `<polyline class="trace-a">`; when `b` is non-null it overlays each panel
// as `<polyline class="trace-b">` on the same axes.
std::string svg_ecg_overlay(const EcgTrace& a, const EcgTrace* b, const std::string& title);

}  // namespace elok

#endif
