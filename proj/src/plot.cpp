#include "elok/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "elok/common.hpp"

namespace elok {

namespace {

std::string esc(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) { return format_g(v, 10); }

void check_finite_range(double lo, double hi, const char* what) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo)
        throw UsageError(std::string("plot: invalid ") + what + " range");
}

std::string svg_open(const std::string& title) {
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kSvgWidth) +
         "\" height=\"" + num(kSvgHeight) + "\" viewBox=\"0 0 " + num(kSvgWidth) + " " +
         num(kSvgHeight) + "\">\n";
    s += "<rect width=\"" + num(kSvgWidth) + "\" height=\"" + num(kSvgHeight) +
         "\" fill=\"white\"/>\n";
    if (!title.empty())
        s += "<text class=\"title\" x=\"" + num(kSvgWidth / 2) +
             "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
             "font-size=\"16\">" +
             esc(title) + "</text>\n";
    return s;
}

std::string axes_frame(const AxisMap& m, const std::string& x_label,
                       const std::string& y_label) {
    std::string s;
    double left = kSvgMarginLeft, right = kSvgWidth - kSvgMarginRight;
    double top = kSvgMarginTop, bottom = kSvgHeight - kSvgMarginBottom;
    s += "<rect class=\"frame\" x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" +
         num(right - left) + "\" height=\"" + num(bottom - top) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    // four ticks per axis with value labels
    for (int i = 0; i <= 3; ++i) {
        double fx = static_cast<double>(i) / 3.0;
        double xv = m.x0 + fx * (m.x1 - m.x0);
        double yv = m.y0 + fx * (m.y1 - m.y0);
        s += "<text class=\"xtick\" x=\"" + num(m.px(xv)) + "\" y=\"" + num(bottom + 18) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
             esc(format_g(xv, 4)) + "</text>\n";
        s += "<text class=\"ytick\" x=\"" + num(left - 8) + "\" y=\"" + num(m.py(yv) + 4) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
             esc(format_g(yv, 4)) + "</text>\n";
    }
    if (!x_label.empty())
        s += "<text class=\"xlabel\" x=\"" + num((left + right) / 2) + "\" y=\"" +
             num(kSvgHeight - 14) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
             esc(x_label) + "</text>\n";
    if (!y_label.empty())
        s += "<text class=\"ylabel\" x=\"18\" y=\"" + num((top + bottom) / 2) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
             "transform=\"rotate(-90 18 " +
             num((top + bottom) / 2) + ")\">" + esc(y_label) + "</text>\n";
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Axis mapping
// ---------------------------------------------------------------------------

AxisMap axis_map(double x0, double x1, double y0, double y1) {
    check_finite_range(x0, x1, "x");
    check_finite_range(y0, y1, "y");
    AxisMap m;
    m.x0 = x0;
    m.x1 = x1;
    m.y0 = y0;
    m.y1 = y1;
    if (m.x1 == m.x0) {
        double pad = m.x0 == 0.0 ? 0.5 : std::fabs(m.x0) * 0.5;
        m.x0 -= pad;
        m.x1 += pad;
    }
    if (m.y1 == m.y0) {
        double pad = m.y0 == 0.0 ? 0.5 : std::fabs(m.y0) * 0.5;
        m.y0 -= pad;
        m.y1 += pad;
    }
    return m;
}

double AxisMap::px(double x) const {
    double w = kSvgWidth - kSvgMarginLeft - kSvgMarginRight;
    return kSvgMarginLeft + (x - x0) / (x1 - x0) * w;
}

double AxisMap::py(double y) const {
    double h = kSvgHeight - kSvgMarginTop - kSvgMarginBottom;
    return kSvgHeight - kSvgMarginBottom - (y - y0) / (y1 - y0) * h;
}

double AxisMap::inv_px(double p) const {
    double w = kSvgWidth - kSvgMarginLeft - kSvgMarginRight;
    return x0 + (p - kSvgMarginLeft) / w * (x1 - x0);
}

double AxisMap::inv_py(double p) const {
    double h = kSvgHeight - kSvgMarginTop - kSvgMarginBottom;
    return y0 + (kSvgHeight - kSvgMarginBottom - p) / h * (y1 - y0);
}

// ---------------------------------------------------------------------------
// Boxplot
// ---------------------------------------------------------------------------

std::string svg_boxplot(const std::vector<ElectrodeStats>& stats, const std::string& title) {
    if (stats.empty()) throw DataError("plot: no electrode stats to draw");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const ElectrodeStats& s : stats) {
        lo = std::min(lo, s.min);
        hi = std::max(hi, s.max);
    }
    if (!std::isfinite(lo) || !std::isfinite(hi))
        throw DataError("plot: non-finite electrode stats");
    double pad = (hi - lo) == 0.0 ? 0.5 : 0.05 * (hi - lo);
    AxisMap m = axis_map(0.0, static_cast<double>(stats.size()), lo - pad, hi + pad);

    std::string s = svg_open(title);
    s += axes_frame(m, "electrode", "error (cm)");
    double slot = (kSvgWidth - kSvgMarginLeft - kSvgMarginRight) /
                  static_cast<double>(stats.size());
    double half_box = slot * 0.28;
    double half_cap = slot * 0.16;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const ElectrodeStats& e = stats[i];
        double cx = m.px(static_cast<double>(i) + 0.5);
        s += "<g class=\"box\" data-name=\"" + esc(e.name) + "\">\n";
        // whisker with end caps
        s += "  <line x1=\"" + num(cx) + "\" y1=\"" + num(m.py(e.min)) + "\" x2=\"" + num(cx) +
             "\" y2=\"" + num(m.py(e.max)) + "\" stroke=\"black\"/>\n";
        for (double v : {e.min, e.max})
            s += "  <line x1=\"" + num(cx - half_cap) + "\" y1=\"" + num(m.py(v)) + "\" x2=\"" +
                 num(cx + half_cap) + "\" y2=\"" + num(m.py(v)) + "\" stroke=\"black\"/>\n";
        // interquartile box and median tick
        s += "  <rect x=\"" + num(cx - half_box) + "\" y=\"" + num(m.py(e.q3)) + "\" width=\"" +
             num(2 * half_box) + "\" height=\"" + num(m.py(e.q1) - m.py(e.q3)) +
             "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
        s += "  <line class=\"median\" x1=\"" + num(cx - half_box) + "\" y1=\"" +
             num(m.py(e.median)) + "\" x2=\"" + num(cx + half_box) + "\" y2=\"" +
             num(m.py(e.median)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        s += "  <text x=\"" + num(cx) + "\" y=\"" + num(kSvgHeight - kSvgMarginBottom + 18) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
             esc(e.name) + "</text>\n";
        s += "</g>\n";
    }
    s += "</svg>\n";
    return s;
}

// ---------------------------------------------------------------------------
// Scatter with regression line
// ---------------------------------------------------------------------------

std::string svg_scatter(const std::vector<double>& x, const std::vector<double>& y,
                        const CorrelationReport& fit, const std::string& x_label,
                        const std::string& y_label, const std::string& title) {
    if (x.size() != y.size()) throw DataError("plot: x/y length mismatch");
    if (x.empty()) throw DataError("plot: no points to draw");
    double xlo = x[0], xhi = x[0], ylo = y[0], yhi = y[0];
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
            throw DataError("plot: non-finite point");
        xlo = std::min(xlo, x[i]);
        xhi = std::max(xhi, x[i]);
        ylo = std::min(ylo, y[i]);
        yhi = std::max(yhi, y[i]);
    }
    // include the fit line's endpoints so it never leaves the plot area
    for (double xe : {xlo, xhi}) {
        double ye = fit.slope * xe + fit.intercept;
        ylo = std::min(ylo, ye);
        yhi = std::max(yhi, ye);
    }
    AxisMap m = axis_map(xlo, xhi, ylo, yhi);

    std::string s = svg_open(title);
    s += axes_frame(m, x_label, y_label);
    for (std::size_t i = 0; i < x.size(); ++i)
        s += "<circle class=\"pt\" cx=\"" + num(m.px(x[i])) + "\" cy=\"" + num(m.py(y[i])) +
             "\" r=\"3\" fill=\"#3182bd\" fill-opacity=\"0.7\"/>\n";
    s += "<line class=\"fit\" x1=\"" + num(m.px(m.x0)) + "\" y1=\"" +
         num(m.py(fit.slope * m.x0 + fit.intercept)) + "\" x2=\"" + num(m.px(m.x1)) +
         "\" y2=\"" + num(m.py(fit.slope * m.x1 + fit.intercept)) +
         "\" stroke=\"#e6550d\" stroke-width=\"2\"/>\n";
    s += "<text class=\"fitlabel\" x=\"" + num(kSvgWidth - kSvgMarginRight - 8) + "\" y=\"" +
         num(kSvgMarginTop + 16) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">r=" +
         esc(format_g(fit.pearson_r, 4)) + " slope=" + esc(format_g(fit.slope, 4)) +
         "</text>\n";
    s += "</svg>\n";
    return s;
}

// ---------------------------------------------------------------------------
// ECG overlay
// ---------------------------------------------------------------------------

std::string svg_ecg_overlay(const EcgTrace& a, const EcgTrace* b, const std::string& title) {
    a.validate();
    if (b != nullptr) b->validate();
    if (a.samples() < 2 || (b != nullptr && b->samples() < 2))
        throw DataError("plot: traces need at least two samples");

    double t_end = a.dt_ms * static_cast<double>(a.samples() - 1);
    if (b != nullptr) t_end = std::max(t_end, b->dt_ms * static_cast<double>(b->samples() - 1));

    std::string s = svg_open(title);
    double top = kSvgMarginTop, bottom = kSvgHeight - kSvgMarginBottom;
    double panel_h = (bottom - top) / 8.0;
    for (std::size_t lead = 0; lead < 8; ++lead) {
        double lo = a.leads[lead][0], hi = lo;
        for (double v : a.leads[lead]) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (b != nullptr)
            for (double v : b->leads[lead]) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        double pad = (hi - lo) == 0.0 ? 0.5 : 0.08 * (hi - lo);
        lo -= pad;
        hi += pad;
        double py0 = top + static_cast<double>(lead) * panel_h;
        auto to_px = [&](double t) {
            return kSvgMarginLeft +
                   t / t_end * (kSvgWidth - kSvgMarginLeft - kSvgMarginRight);
        };
        auto to_py = [&](double v) { return py0 + panel_h - (v - lo) / (hi - lo) * panel_h; };
        auto polyline = [&](const EcgTrace& tr, const char* cls, const char* color,
                            const char* dash) {
            std::string p = "<polyline class=\"";
            p += cls;
            p += "\" fill=\"none\" stroke=\"";
            p += color;
            p += "\"";
            if (dash[0] != '\0') p += std::string(" stroke-dasharray=\"") + dash + "\"";
            p += " points=\"";
            for (std::size_t i = 0; i < tr.samples(); ++i) {
                if (i) p += ' ';
                p += num(to_px(tr.dt_ms * static_cast<double>(i)));
                p += ',';
                p += num(to_py(tr.leads[lead][i]));
            }
            p += "\"/>\n";
            return p;
        };
        s += "<g class=\"panel\" data-lead=\"" + std::string(kLeadNames[lead]) + "\">\n";
        s += "<rect x=\"" + num(kSvgMarginLeft) + "\" y=\"" + num(py0) + "\" width=\"" +
             num(kSvgWidth - kSvgMarginLeft - kSvgMarginRight) + "\" height=\"" + num(panel_h) +
             "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
        s += "<text x=\"" + num(kSvgMarginLeft - 8) + "\" y=\"" + num(py0 + panel_h / 2 + 4) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
             std::string(kLeadNames[lead]) + "</text>\n";
        s += polyline(a, "trace-a", "#3182bd", "");
        if (b != nullptr) s += polyline(*b, "trace-b", "#e6550d", "4 3");
        s += "</g>\n";
    }
    s += "<text x=\"" + num((kSvgMarginLeft + kSvgWidth - kSvgMarginRight) / 2) + "\" y=\"" +
         num(kSvgHeight - 14) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">time (ms)"
         "</text>\n";
    s += "</svg>\n";
    return s;
}

}  // namespace elok
