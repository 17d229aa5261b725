#include "elok/contours.hpp"

#include <algorithm>
#include <cmath>

namespace elok {

const char* view_label_name(ViewLabel v) {
    switch (v) {
        case ViewLabel::Sax: return "SAX";
        case ViewLabel::Lax2ch: return "LAX-2ch";
        case ViewLabel::Lax3ch: return "LAX-3ch";
        case ViewLabel::Lax4ch: return "LAX-4ch";
        case ViewLabel::LocSagittal: return "LOC-SAG";
        case ViewLabel::LocCoronal: return "LOC-COR";
        case ViewLabel::LocAxial: return "LOC-AX";
    }
    return "?";
}

ViewLabel view_label_from_name(const std::string& name) {
    for (ViewLabel v : {ViewLabel::Sax, ViewLabel::Lax2ch, ViewLabel::Lax3ch, ViewLabel::Lax4ch,
                        ViewLabel::LocSagittal, ViewLabel::LocCoronal, ViewLabel::LocAxial}) {
        if (name == view_label_name(v)) return v;
    }
    throw DataError("unknown view label '" + name + "'");
}

void PlanePose::validate() const {
    if (!origin.finite() || !axis_u.finite() || !axis_v.finite())
        throw DataError("plane pose has non-finite components");
    if (std::abs(axis_u.norm() - 1.0) > kOrthoTol || std::abs(axis_v.norm() - 1.0) > kOrthoTol ||
        std::abs(axis_u.dot(axis_v)) > kOrthoTol)
        throw DataError("plane axes are not orthonormal");
}

double Contour::arc_length() const {
    double len = 0.0;
    for (std::size_t i = 1; i < polyline.size(); ++i) {
        double du = polyline[i].u - polyline[i - 1].u;
        double dv = polyline[i].v - polyline[i - 1].v;
        len += std::hypot(du, dv);
    }
    if (closed && polyline.size() > 1) {
        double du = polyline.front().u - polyline.back().u;
        double dv = polyline.front().v - polyline.back().v;
        len += std::hypot(du, dv);
    }
    return len;
}

double ContourSet::total_arc_length() const {
    double len = 0.0;
    for (const auto& c : contours) len += c.arc_length();
    return len;
}

void ContourSet::validate() const {
    for (const auto& c : contours) {
        c.plane.validate();
        if (c.polyline.size() < 3) throw DataError("contour polyline has fewer than 3 points");
    }
}

PointCloud ContourSet::all_points() const {
    PointCloud out;
    for (const auto& c : contours)
        for (const auto& p : c.polyline) out.points.push_back(c.lift(p));
    return out;
}

namespace {

// Flattened segment table over all contours for arc-length addressed lookup.
struct SegmentTable {
    struct Segment {
        const Contour* contour;
        std::size_t i0, i1;  // polyline indices
        double cum_end;      // cumulative length up to and including this segment
        double length;
    };
    std::vector<Segment> segments;
    double total = 0.0;

    explicit SegmentTable(const ContourSet& cs) {
        for (const auto& c : cs.contours) {
            std::size_t n = c.polyline.size();
            std::size_t nseg = c.closed ? n : (n > 0 ? n - 1 : 0);
            for (std::size_t s = 0; s < nseg; ++s) {
                std::size_t i0 = s;
                std::size_t i1 = (s + 1) % n;
                double du = c.polyline[i1].u - c.polyline[i0].u;
                double dv = c.polyline[i1].v - c.polyline[i0].v;
                double len = std::hypot(du, dv);
                if (len <= 0.0) continue;
                total += len;
                segments.push_back({&c, i0, i1, total, len});
            }
        }
    }

    Vec3 at_arc_length(double s) const {
        // binary search for the first segment whose cum_end exceeds s
        std::size_t lo = 0, hi = segments.size() - 1;
        while (lo < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (segments[mid].cum_end < s)
                lo = mid + 1;
            else
                hi = mid;
        }
        const Segment& seg = segments[lo];
        double begin = seg.cum_end - seg.length;
        double t = std::clamp((s - begin) / seg.length, 0.0, 1.0);
        const Contour& c = *seg.contour;
        const Vec2& p0 = c.polyline[seg.i0];
        const Vec2& p1 = c.polyline[seg.i1];
        return c.lift({p0.u + t * (p1.u - p0.u), p0.v + t * (p1.v - p0.v)});
    }
};

}  // namespace

PointCloud resample_contours(const ContourSet& contours, std::size_t n, std::uint64_t rng_seed,
                             ResampleMode mode) {
    if (contours.empty()) throw DataError("resample_contours: empty contour set");
    if (n < 1) throw DataError("resample_contours: n must be >= 1");
    SegmentTable table(contours);
    if (table.segments.empty() || table.total <= 0.0)
        throw DataError("resample_contours: total arc length is zero");

    PointCloud out;
    out.points.reserve(n);
    if (mode == ResampleMode::Stratified) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * table.total;
            out.points.push_back(table.at_arc_length(s));
        }
    } else {
        RandomStream rng(rng_seed);
        for (std::size_t i = 0; i < n; ++i)
            out.points.push_back(table.at_arc_length(rng.uniform() * table.total));
    }
    return out;
}

}  // namespace elok
