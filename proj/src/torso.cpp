#include "elok/torso.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <utility>

#include "elok/common.hpp"

namespace elok {

namespace {

constexpr double kPi = 3.14159265358979323846;

double deg2rad(double d) { return d * kPi / 180.0; }

double signed_pow(double c, double e) {
    if (c == 0.0) return 0.0;
    return (c < 0.0 ? -1.0 : 1.0) * std::pow(std::fabs(c), e);
}

Vec3 rot_x(const Vec3& v, double ang) {
    double c = std::cos(ang), s = std::sin(ang);
    return {v.x, c * v.y - s * v.z, s * v.y + c * v.z};
}

Vec3 rot_z(const Vec3& v, double ang) {
    double c = std::cos(ang), s = std::sin(ang);
    return {c * v.x - s * v.y, s * v.x + c * v.y, v.z};
}

// Cumulative arc-length table of one cross-section, for arc-uniform
// placement of points in theta.
class RingArcTable {
public:
    RingArcTable(const TorsoSurface& surface, double z, int steps = 720) : steps_(steps) {
        cum_.resize(static_cast<std::size_t>(steps) + 1, 0.0);
        Vec3 prev = surface.point_at(z, 0.0);
        for (int i = 1; i <= steps; ++i) {
            double th = 2.0 * kPi * static_cast<double>(i) / steps;
            Vec3 cur = surface.point_at(z, th);
            cum_[static_cast<std::size_t>(i)] =
                cum_[static_cast<std::size_t>(i - 1)] + (cur - prev).norm();
            prev = cur;
        }
    }

    double length() const { return cum_.back(); }

    // theta whose arc position equals s (s wrapped into [0, length))
    double theta_at_arc(double s) const {
        double total = length();
        s = std::fmod(s, total);
        if (s < 0) s += total;
        auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
        std::size_t hi = static_cast<std::size_t>(it - cum_.begin());
        if (hi == 0) hi = 1;
        if (hi >= cum_.size()) hi = cum_.size() - 1;
        double s0 = cum_[hi - 1], s1 = cum_[hi];
        double t = (s1 > s0) ? (s - s0) / (s1 - s0) : 0.0;
        return 2.0 * kPi * (static_cast<double>(hi - 1) + t) / steps_;
    }

private:
    int steps_;
    std::vector<double> cum_;
};

}  // namespace

void TorsoSpec::validate() const {
    if (!(height > 0.0) || !std::isfinite(height)) throw DataError("torso: height must be positive");
    if (levels.size() < 2) throw DataError("torso: need at least two control levels");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const TorsoLevel& l = levels[i];
        if (!(l.a > 0.0) || !(l.b > 0.0)) throw DataError("torso: half-axes must be positive");
        if (!(l.p >= 1.5 && l.p <= 4.0)) throw DataError("torso: exponent out of range [1.5, 4]");
        if (i > 0 && !(l.frac > levels[i - 1].frac))
            throw DataError("torso: level fractions must be strictly increasing");
    }
    if (levels.front().frac != 0.0 || levels.back().frac != 1.0)
        throw DataError("torso: levels must span fractions 0 to 1");
    if (!(bmi_scale > 0.0)) throw DataError("torso: bmi_scale must be positive");
}

TorsoSurface::TorsoSurface(TorsoSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    dense_ = sample_surface(4096, mix_seed(spec_.seed, 0x5f4ce));
}

void TorsoSurface::cross_section(double z, double& a, double& b, double& p) const {
    double f = z / spec_.height;
    f = std::clamp(f, 0.0, 1.0);
    const auto& lv = spec_.levels;
    std::size_t hi = 1;
    while (hi + 1 < lv.size() && lv[hi].frac < f) ++hi;
    const TorsoLevel& l0 = lv[hi - 1];
    const TorsoLevel& l1 = lv[hi];
    double t = (f - l0.frac) / (l1.frac - l0.frac);
    t = std::clamp(t, 0.0, 1.0);
    a = l0.a + t * (l1.a - l0.a);
    b = l0.b + t * (l1.b - l0.b);
    p = l0.p + t * (l1.p - l0.p);
}

Vec3 TorsoSurface::point_at(double z, double theta) const {
    double a, b, p;
    cross_section(z, a, b, p);
    double e = 2.0 / p;
    // Snap near-axis trig values to exact zeros: the fractional power below
    // amplifies sin/cos rounding residue (e.g. sin(pi) ~ 1e-16) to ~1e-8,
    // which would break the exact mirror symmetry of axis-aligned stations.
    double c = std::cos(theta), s = std::sin(theta);
    if (std::fabs(c) < 1e-12) c = 0.0;
    if (std::fabs(s) < 1e-12) s = 0.0;
    return {a * signed_pow(c, e), b * signed_pow(s, e), z};
}

double TorsoSurface::implicit(const Vec3& pt) const {
    double a, b, p;
    cross_section(pt.z, a, b, p);
    return std::pow(std::fabs(pt.x / a), p) + std::pow(std::fabs(pt.y / b), p) - 1.0;
}

double TorsoSurface::radial_surface_distance(const Vec3& pt) const {
    double a, b, p;
    cross_section(pt.z, a, b, p);
    double s = std::pow(std::fabs(pt.x / a), p) + std::pow(std::fabs(pt.y / b), p);
    double r = std::hypot(pt.x, pt.y);
    if (s <= 0.0 || r < 1e-12) return std::min(a, b);
    double lambda = std::pow(s, -1.0 / p);  // scales pt radially onto the ring
    return std::fabs(1.0 - lambda) * r;
}

PointCloud TorsoSurface::sample_surface(std::size_t n, std::uint64_t seed) const {
    if (n == 0) throw DataError("sample_surface: n must be positive");
    PointCloud out;
    out.points.reserve(n);
    std::size_t rings = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n) / 2.0))), 4, 128);
    rings = std::min(rings, n);
    RandomStream rng(seed);
    std::size_t base = n / rings, extra = n % rings;
    for (std::size_t i = 0; i < rings; ++i) {
        std::size_t cnt = base + (i < extra ? 1 : 0);
        if (cnt == 0) continue;
        double zf = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(rings);
        double z = std::clamp(zf, 1e-4, 1.0 - 1e-4) * spec_.height;
        RingArcTable table(*this, z);
        double phase = rng.uniform();
        for (std::size_t k = 0; k < cnt; ++k) {
            double s = (static_cast<double>(k) + phase) / static_cast<double>(cnt) * table.length();
            out.points.push_back(point_at(z, table.theta_at_arc(s)));
        }
    }
    return out;
}

double TorsoSurface::max_radius() const {
    double m = 0.0;
    for (const TorsoLevel& l : spec_.levels) m = std::max(m, std::max(l.a, l.b));
    return m;
}

std::pair<TorsoSpec, TorsoSurface> sample_torso(std::uint64_t seed) {
    RandomStream rng(mix_seed(seed, 0x7043));
    TorsoSpec spec;
    spec.seed = seed;
    spec.height = rng.uniform(50.0, 70.0);
    spec.bmi_scale = rng.uniform(0.85, 1.20);
    double base_a = rng.uniform(13.5, 18.5);
    double aspect = rng.uniform(0.60, 0.72);

    // Height-profile multipliers: hips, waist pinch, chest, shoulders, neck.
    static constexpr double kFrac[] = {0.00, 0.15, 0.30, 0.45, 0.60, 0.75, 0.90, 1.00};
    static constexpr double kProfA[] = {1.00, 0.97, 0.93, 0.96, 1.00, 1.00, 1.05, 0.96};
    static constexpr double kProfB[] = {1.00, 0.98, 0.94, 0.97, 1.00, 0.99, 0.95, 0.90};
    // Dense control levels over the anatomical profile, with strong per-level
    // jitter: each subject carries local girth and squareness detail that is
    // not a smooth function of a few global shape parameters, mirroring the
    // idiosyncratic surface variation of real torsos.
    static constexpr std::size_t kLevels = 20;
    auto interp_profile = [&](double frac, const double* prof) {
        std::size_t hi = 1;
        while (hi < 7 && kFrac[hi] < frac) ++hi;
        double t = (frac - kFrac[hi - 1]) / (kFrac[hi] - kFrac[hi - 1]);
        return prof[hi - 1] + t * (prof[hi] - prof[hi - 1]);
    };
    for (std::size_t i = 0; i < kLevels; ++i) {
        double frac = static_cast<double>(i) / static_cast<double>(kLevels - 1);
        TorsoLevel lv;
        lv.frac = frac;
        lv.a = base_a * spec.bmi_scale * interp_profile(frac, kProfA) * rng.uniform(0.91, 1.09);
        lv.b = base_a * aspect * spec.bmi_scale * interp_profile(frac, kProfB) *
               rng.uniform(0.91, 1.09);
        lv.p = rng.uniform(1.8, 3.6);
        spec.levels.push_back(lv);
    }
    TorsoSurface surface(spec);
    return {std::move(spec), std::move(surface)};
}

namespace {

struct Station {
    double level;      // fraction of torso height
    double theta_deg;  // superellipse parameter angle
};

// Slot order matches kElectrodeNames: LA RA LL RL V1..V6. Angles measured
// from the left mid-axillary line (+x = subject's left, +y anterior).
constexpr Station kStations[10] = {
    {0.93, 25.0},   // LA: left shoulder
    {0.93, 155.0},  // RA: right shoulder
    {0.10, 48.0},   // LL: left lower abdomen
    {0.10, 132.0},  // RL: right lower abdomen
    {0.60, 103.0},  // V1: right sternal border
    {0.60, 77.0},   // V2: left sternal border
    {0.565, 64.0},  // V3: midway V2-V4
    {0.53, 51.0},   // V4: left mid-clavicular
    {0.53, 26.0},   // V5: left anterior axillary
    {0.53, 0.0},    // V6: left mid-axillary
};

}  // namespace

ElectrodeSet place_electrodes(const TorsoSpec& spec, const TorsoSurface& surface, bool mirrored) {
    spec.validate();
    ElectrodeSet es;
    for (std::size_t i = 0; i < 10; ++i) {
        double theta = kStations[i].theta_deg;
        if (mirrored) theta = 180.0 - theta;
        es.positions[i] = surface.point_at(kStations[i].level * spec.height, deg2rad(theta));
    }
    return es;
}

void SliceProtocol::validate() const {
    if (sax_count < 0 || lax_count < 0 || loc_sagittal < 0 || loc_coronal < 0 || loc_axial < 0)
        throw DataError("protocol: plane counts must be non-negative");
    if (sax_count + lax_count + loc_sagittal + loc_coronal + loc_axial <= 0)
        throw DataError("protocol: at least one plane required");
    for (double d : {drop_sax, drop_lax, drop_loc, gap_prob_mid, gap_prob_extreme})
        if (!(d >= 0.0 && d <= 1.0)) throw DataError("protocol: probabilities must be in [0,1]");
    if (!(gap_frac_min >= 0.0 && gap_frac_max < 1.0 && gap_frac_min <= gap_frac_max))
        throw DataError("protocol: gap fractions must satisfy 0 <= min <= max < 1");
    if (!(grid_step > 0.0)) throw DataError("protocol: grid_step must be positive");
    for (double f : {sax_fov_half, lax_fov_half, loc_fov_half})
        if (!(f > 0.0)) throw DataError("protocol: FOV extents must be positive");
    if (gap_arc_fractions.empty()) throw DataError("protocol: need at least one gap anchor");
}

Vec3 heart_center(const TorsoSurface& surface) {
    double z = 0.60 * surface.height();
    double a, b, p;
    surface.cross_section(z, a, b, p);
    return {0.12 * a, 0.15 * b, z};
}

// ---------------------------------------------------------------------------
// Plane/surface intersection: marching squares over the in-plane grid with
// bisection refinement of every edge crossing.
// ---------------------------------------------------------------------------

std::vector<Contour> slice_plane(const TorsoSurface& surface, const PlaneSpec& plane,
                                 double grid_step) {
    plane.pose.validate();
    if (!(grid_step > 0.0)) throw DataError("slice_plane: grid_step must be positive");
    if (!(plane.u1 > plane.u0 && plane.v1 > plane.v0))
        throw DataError("slice_plane: empty field of view");

    const double H = surface.height();
    const std::size_t nu =
        std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil((plane.u1 - plane.u0) / grid_step)));
    const std::size_t nv =
        std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil((plane.v1 - plane.v0) / grid_step)));
    const double du = (plane.u1 - plane.u0) / static_cast<double>(nu);
    const double dv = (plane.v1 - plane.v0) / static_cast<double>(nv);

    auto node_u = [&](std::size_t i) { return plane.u0 + du * static_cast<double>(i); };
    auto node_v = [&](std::size_t j) { return plane.v0 + dv * static_cast<double>(j); };

    const std::size_t stride = nu + 1;
    std::vector<double> value((nu + 1) * (nv + 1), 1.0);
    std::vector<char> valid((nu + 1) * (nv + 1), 0);
    for (std::size_t j = 0; j <= nv; ++j) {
        for (std::size_t i = 0; i <= nu; ++i) {
            Vec3 p = plane.pose.lift(node_u(i), node_v(j));
            if (p.z >= 0.0 && p.z <= H) {
                valid[j * stride + i] = 1;
                value[j * stride + i] = surface.implicit(p);
            }
        }
    }

    // Refined crossing points, keyed by grid edge. Horizontal edge from node
    // (i,j) to (i+1,j) has key 2*(j*stride+i); the vertical one to (i,j+1)
    // has key 2*(j*stride+i)+1.
    std::map<std::uint64_t, std::size_t> edge_point;
    std::vector<Vec2> points;
    auto crossing = [&](std::size_t i, std::size_t j, bool verticalEdge) -> std::uint64_t {
        std::uint64_t key = 2 * (static_cast<std::uint64_t>(j) * stride + i) + (verticalEdge ? 1 : 0);
        auto it = edge_point.find(key);
        if (it != edge_point.end()) return key;
        double ua = node_u(i), va = node_v(j);
        double ub = verticalEdge ? ua : node_u(i + 1);
        double vb = verticalEdge ? node_v(j + 1) : va;
        double fa = value[j * stride + i];
        double lo = 0.0, hi = 1.0;
        bool lo_inside = fa < 0.0;
        for (int it2 = 0; it2 < 48; ++it2) {
            double mid = 0.5 * (lo + hi);
            Vec3 p = plane.pose.lift(ua + (ub - ua) * mid, va + (vb - va) * mid);
            bool inside = surface.implicit(p) < 0.0;
            if (inside == lo_inside)
                lo = mid;
            else
                hi = mid;
        }
        double t = 0.5 * (lo + hi);
        points.push_back({ua + (ub - ua) * t, va + (vb - va) * t});
        edge_point.emplace(key, points.size() - 1);
        return key;
    };

    // Per-cell segments between edge crossings (standard case table; the two
    // ambiguous saddles are resolved with the cell-centre value).
    std::vector<std::pair<std::uint64_t, std::uint64_t>> segments;
    for (std::size_t j = 0; j < nv; ++j) {
        for (std::size_t i = 0; i < nu; ++i) {
            std::size_t n00 = j * stride + i, n10 = n00 + 1;
            std::size_t n01 = n00 + stride, n11 = n01 + 1;
            if (!valid[n00] || !valid[n10] || !valid[n01] || !valid[n11]) continue;
            int mask = (value[n00] < 0.0 ? 1 : 0) | (value[n10] < 0.0 ? 2 : 0) |
                       (value[n11] < 0.0 ? 4 : 0) | (value[n01] < 0.0 ? 8 : 0);
            if (mask == 0 || mask == 15) continue;
            auto bottom = [&] { return crossing(i, j, false); };
            auto right = [&] { return crossing(i + 1, j, true); };
            auto top = [&] { return crossing(i, j + 1, false); };
            auto left = [&] { return crossing(i, j, true); };
            auto add = [&](std::uint64_t a, std::uint64_t b) { segments.emplace_back(a, b); };
            switch (mask) {
                case 1: case 14: add(left(), bottom()); break;
                case 2: case 13: add(bottom(), right()); break;
                case 3: case 12: add(left(), right()); break;
                case 4: case 11: add(right(), top()); break;
                case 6: case 9: add(bottom(), top()); break;
                case 7: case 8: add(top(), left()); break;
                case 5: case 10: {
                    Vec3 c = plane.pose.lift(node_u(i) + 0.5 * du, node_v(j) + 0.5 * dv);
                    bool center_inside = (c.z >= 0.0 && c.z <= H) && surface.implicit(c) < 0.0;
                    bool diag_connected = (mask == 5) == center_inside;
                    if (diag_connected) {
                        // inside corners join through the centre
                        if (mask == 5) { add(bottom(), right()); add(top(), left()); }
                        else { add(left(), bottom()); add(right(), top()); }
                    } else {
                        if (mask == 5) { add(left(), bottom()); add(right(), top()); }
                        else { add(bottom(), right()); add(top(), left()); }
                    }
                    break;
                }
                default: break;
            }
        }
    }

    // Chain segments into polylines: open chains first (from degree-1 edges,
    // smallest key first), then remaining cycles.
    std::map<std::uint64_t, std::vector<std::pair<std::size_t, std::uint64_t>>> adj;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        adj[segments[s].first].push_back({s, segments[s].second});
        adj[segments[s].second].push_back({s, segments[s].first});
    }
    std::vector<char> used(segments.size(), 0);
    std::vector<Contour> out;
    auto walk = [&](std::uint64_t start, bool closed) {
        std::vector<std::uint64_t> chain{start};
        std::uint64_t cur = start;
        for (;;) {
            std::size_t next_seg = segments.size();
            std::uint64_t next_key = 0;
            for (const auto& [s, other] : adj[cur]) {
                if (!used[s] && (next_seg == segments.size() || s < next_seg)) {
                    next_seg = s;
                    next_key = other;
                }
            }
            if (next_seg == segments.size()) break;
            used[next_seg] = 1;
            if (closed && next_key == start) break;
            chain.push_back(next_key);
            cur = next_key;
        }
        Contour c;
        c.plane = plane.pose;
        c.view = plane.view;
        c.closed = closed;
        c.polyline.reserve(chain.size());
        for (std::uint64_t k : chain) c.polyline.push_back(points[edge_point.at(k)]);
        if (c.polyline.size() >= 3 && c.arc_length() >= 1.0) out.push_back(std::move(c));
    };
    for (const auto& [key, links] : adj) {
        bool has_unused = false;
        for (const auto& [s, other] : links)
            if (!used[s]) has_unused = true;
        if (links.size() == 1 && has_unused) walk(key, false);
    }
    for (const auto& [key, links] : adj) {
        for (const auto& [s, other] : links) {
            if (!used[s]) {
                walk(key, true);
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Acquisition emulation
// ---------------------------------------------------------------------------

namespace {

// Removes the arc window [anchor, anchor + frac) (fractions of total length)
// from a contour; may split an open contour in two.
std::vector<Contour> apply_gap(const Contour& c, double frac, double anchor) {
    double total = c.arc_length();
    std::size_t n = c.polyline.size();
    std::vector<double> pos(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        const Vec2& a = c.polyline[i - 1];
        const Vec2& b = c.polyline[i];
        pos[i] = pos[i - 1] + std::hypot(b.u - a.u, b.v - a.v);
    }
    anchor = anchor - std::floor(anchor);
    double s0 = anchor * total;
    double s1 = s0 + frac * total;
    std::vector<Contour> out;
    auto emit = [&](std::vector<Vec2> poly) {
        if (poly.size() < 3) return;
        Contour piece;
        piece.plane = c.plane;
        piece.view = c.view;
        piece.closed = false;
        piece.polyline = std::move(poly);
        if (piece.arc_length() >= 1.0) out.push_back(std::move(piece));
    };
    if (c.closed) {
        // keep vertices outside the (modular) window, starting just past it
        double w0 = std::fmod(s0, total);
        double w1 = std::fmod(s1, total);
        std::size_t start = 0;
        while (start < n && pos[start] < w1) ++start;
        if (start == n) start = 0;
        std::vector<Vec2> poly;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t i = (start + k) % n;
            double s = pos[i];
            bool in_window = (w0 <= w1) ? (s >= w0 && s < w1) : (s >= w0 || s < w1);
            if (!in_window) poly.push_back(c.polyline[i]);
        }
        emit(std::move(poly));
    } else {
        s0 = std::min(s0, total);
        s1 = std::min(s1, total);
        std::vector<Vec2> before, after;
        for (std::size_t i = 0; i < n; ++i) {
            if (pos[i] < s0)
                before.push_back(c.polyline[i]);
            else if (pos[i] >= s1)
                after.push_back(c.polyline[i]);
        }
        emit(std::move(before));
        emit(std::move(after));
    }
    return out;
}

}  // namespace

SliceResult slice_contours(const TorsoSurface& surface, const SliceProtocol& protocol,
                           std::uint64_t seed) {
    protocol.validate();
    const double H = surface.height();
    const Vec3 heart = heart_center(surface);

    // Cardiac basis: SAX normal is the heart long axis.
    Vec3 lax = rot_z(rot_x({0.0, 0.0, 1.0}, deg2rad(protocol.sax_tilt_x_deg)),
                     deg2rad(protocol.sax_tilt_z_deg));
    Vec3 su = Vec3{0.0, 0.0, 1.0}.cross(lax);
    if (su.norm() < 1e-9) su = {1.0, 0.0, 0.0};
    su = su * (1.0 / su.norm());
    Vec3 sv = lax.cross(su);
    sv = sv * (1.0 / sv.norm());

    enum Group { kSax, kLax, kLoc };
    std::vector<PlaneSpec> planes;
    std::vector<int> group;
    auto push = [&](PlaneSpec ps, int g) {
        planes.push_back(std::move(ps));
        group.push_back(g);
    };
    for (int k = 0; k < protocol.sax_count; ++k) {
        double off = (static_cast<double>(k) - 0.5 * (protocol.sax_count - 1)) * protocol.sax_spacing;
        PlaneSpec ps;
        ps.pose = {heart + lax * off, su, sv};
        ps.u0 = -protocol.sax_fov_half; ps.u1 = protocol.sax_fov_half;
        ps.v0 = -protocol.sax_fov_half; ps.v1 = protocol.sax_fov_half;
        ps.view = ViewLabel::Sax;
        push(ps, kSax);
    }
    static constexpr ViewLabel kLaxViews[3] = {ViewLabel::Lax2ch, ViewLabel::Lax3ch,
                                               ViewLabel::Lax4ch};
    for (int m = 0; m < protocol.lax_count; ++m) {
        double phi = kPi * static_cast<double>(m) / std::max(1, protocol.lax_count);
        Vec3 normal = su * std::cos(phi) + sv * std::sin(phi);
        Vec3 au = normal.cross(lax);
        au = au * (1.0 / au.norm());
        PlaneSpec ps;
        ps.pose = {heart, au, lax};
        ps.u0 = -protocol.lax_fov_half; ps.u1 = protocol.lax_fov_half;
        ps.v0 = -protocol.lax_fov_half; ps.v1 = protocol.lax_fov_half;
        ps.view = kLaxViews[m % 3];
        push(ps, kLax);
    }
    for (int k = 0; k < protocol.loc_sagittal; ++k) {
        double off = (static_cast<double>(k) - 0.5 * (protocol.loc_sagittal - 1)) *
                     protocol.loc_sagittal_spacing;
        PlaneSpec ps;
        ps.pose = {{off, 0.0, 0.5 * H}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
        ps.u0 = -protocol.loc_fov_half; ps.u1 = protocol.loc_fov_half;
        ps.v0 = -(0.5 * H + 2.0); ps.v1 = 0.5 * H + 2.0;
        ps.view = ViewLabel::LocSagittal;
        push(ps, kLoc);
    }
    for (int k = 0; k < protocol.loc_coronal; ++k) {
        double off = (static_cast<double>(k) - 0.5 * (protocol.loc_coronal - 1)) *
                     protocol.loc_coronal_spacing;
        PlaneSpec ps;
        ps.pose = {{0.0, off, 0.5 * H}, {1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}};
        ps.u0 = -protocol.loc_fov_half; ps.u1 = protocol.loc_fov_half;
        ps.v0 = -(0.5 * H + 2.0); ps.v1 = 0.5 * H + 2.0;
        ps.view = ViewLabel::LocCoronal;
        push(ps, kLoc);
    }
    for (int k = 0; k < protocol.loc_axial; ++k) {
        double off =
            (static_cast<double>(k) - 0.5 * (protocol.loc_axial - 1)) * protocol.loc_axial_spacing;
        PlaneSpec ps;
        ps.pose = {{0.0, 0.0, 0.5 * H + off}, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
        ps.u0 = -protocol.loc_fov_half; ps.u1 = protocol.loc_fov_half;
        ps.v0 = -protocol.loc_fov_half; ps.v1 = protocol.loc_fov_half;
        ps.view = ViewLabel::LocAxial;
        push(ps, kLoc);
    }

    // Dropout: the SAX stack drops as a whole, other planes independently.
    RandomStream drop_rng(mix_seed(seed, 0xd209));
    std::vector<char> keep(planes.size(), 1);
    bool sax_dropped = drop_rng.uniform() < protocol.drop_sax;
    for (std::size_t i = 0; i < planes.size(); ++i) {
        if (group[i] == kSax) {
            keep[i] = sax_dropped ? 0 : 1;
        } else {
            double p = (group[i] == kLax) ? protocol.drop_lax : protocol.drop_loc;
            keep[i] = drop_rng.uniform() < p ? 0 : 1;
        }
    }
    SliceResult result;
    if (std::find(keep.begin(), keep.end(), 1) == keep.end()) {
        // everything dropped: force one localizer back on
        std::size_t pick = 0;
        for (std::size_t i = 0; i < planes.size(); ++i)
            if (planes[i].view == ViewLabel::LocAxial) { pick = i; break; }
        keep[pick] = 1;
        result.fallback_used = true;
    }

    std::vector<Contour> raw;
    for (std::size_t i = 0; i < planes.size(); ++i) {
        if (!keep[i]) continue;
        std::vector<Contour> cs = slice_plane(surface, planes[i], protocol.grid_step);
        for (Contour& c : cs) raw.push_back(std::move(c));
    }

    // Arc gaps, biased toward contours near the shoulders and waist.
    RandomStream gap_rng(mix_seed(seed, 0x9a9));
    std::vector<Contour> final_contours;
    for (const Contour& c : raw) {
        double mean_z = 0.0;
        for (const Vec2& p : c.polyline) mean_z += c.lift(p).z;
        mean_z /= static_cast<double>(c.polyline.size());
        bool extreme = std::fabs(mean_z - 0.5 * H) > 0.30 * H;
        double p_gap = extreme ? protocol.gap_prob_extreme : protocol.gap_prob_mid;
        double roll = gap_rng.uniform();
        double frac = gap_rng.uniform(protocol.gap_frac_min, protocol.gap_frac_max);
        double anchor = protocol.gap_arc_fractions[gap_rng.index(protocol.gap_arc_fractions.size())] +
                        0.1 * (gap_rng.uniform() - 0.5);
        if (roll < p_gap) {
            for (Contour& piece : apply_gap(c, frac, anchor)) final_contours.push_back(std::move(piece));
        } else {
            final_contours.push_back(c);
        }
    }
    if (final_contours.empty()) final_contours = std::move(raw);
    if (final_contours.empty())
        throw NumericError("slice_contours: produced no contours; check protocol FOV");
    result.contours.contours = std::move(final_contours);
    result.contours.validate();
    return result;
}

}  // namespace elok
