#include "elok/ecg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>
#include <utility>

namespace elok {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct Offset {
    int di, dj, dk;
};

std::vector<Offset> neighbor_offsets_26() {
    std::vector<Offset> out;
    for (int dk = -1; dk <= 1; ++dk)
        for (int dj = -1; dj <= 1; ++dj)
            for (int di = -1; di <= 1; ++di)
                if (di != 0 || dj != 0 || dk != 0) out.push_back({di, dj, dk});
    return out;
}

// Per-axis conduction speed for the diagonal anisotropy model.
std::array<double, 3> axis_speeds(const HeartPhantom& p, double v) {
    std::array<double, 3> s = {v, v, v};
    if (p.fiber_axis >= 0) s[static_cast<std::size_t>(p.fiber_axis)] *= p.fiber_speedup;
    return s;
}

// Straight-line travel time across displacement (di,dj,dk)*spacing at the
// speeds of voxel `from`, under the diagonal metric.
double edge_time(const HeartPhantom& p, std::size_t from, const Offset& o) {
    std::array<double, 3> s = axis_speeds(p, p.velocity[from]);
    double dx = o.di * p.spacing / s[0];
    double dy = o.dj * p.spacing / s[1];
    double dz = o.dk * p.spacing / s[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

bool in_shell(const EllipsoidShell& shell, const Vec3& p) {
    // Membership is tie-tolerant: voxel grids and shell radii are typically
    // round decimals, so voxel centers can land exactly on a shell in real
    // arithmetic. Without the margin, which side such a voxel falls on would
    // be decided by rounding noise that varies under rigid translation.
    constexpr double kTie = 1e-12;
    Vec3 d = p - shell.center;
    double q_out = (d.x / shell.outer.x) * (d.x / shell.outer.x) +
                   (d.y / shell.outer.y) * (d.y / shell.outer.y) +
                   (d.z / shell.outer.z) * (d.z / shell.outer.z);
    if (q_out > 1.0 + kTie) return false;
    if (shell.inner.x <= 0.0 || shell.inner.y <= 0.0 || shell.inner.z <= 0.0) return true;
    double q_in = (d.x / shell.inner.x) * (d.x / shell.inner.x) +
                  (d.y / shell.inner.y) * (d.y / shell.inner.y) +
                  (d.z / shell.inner.z) * (d.z / shell.inner.z);
    return q_in >= 1.0 - kTie;
}

// Largest 6-connected component of the mask; everything else is cleared.
void keep_largest_component(HeartPhantom& p) {
    std::vector<std::int32_t> label(p.size(), -1);
    std::int32_t n_labels = 0;
    std::vector<std::size_t> best_component;
    std::vector<std::size_t> stack, current;
    for (std::size_t start = 0; start < p.size(); ++start) {
        if (!p.mask[start] || label[start] >= 0) continue;
        stack.assign(1, start);
        current.clear();
        label[start] = n_labels;
        while (!stack.empty()) {
            std::size_t v = stack.back();
            stack.pop_back();
            current.push_back(v);
            std::size_t i = v % p.nx, j = (v / p.nx) % p.ny, k = v / (p.nx * p.ny);
            const std::array<std::array<long, 3>, 6> steps = {
                {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
            for (const auto& st : steps) {
                long ni = static_cast<long>(i) + st[0];
                long nj = static_cast<long>(j) + st[1];
                long nk = static_cast<long>(k) + st[2];
                if (ni < 0 || nj < 0 || nk < 0 || ni >= static_cast<long>(p.nx) ||
                    nj >= static_cast<long>(p.ny) || nk >= static_cast<long>(p.nz))
                    continue;
                std::size_t n = p.index(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj),
                                        static_cast<std::size_t>(nk));
                if (p.mask[n] && label[n] < 0) {
                    label[n] = n_labels;
                    stack.push_back(n);
                }
            }
        }
        if (current.size() > best_component.size()) best_component = current;
        ++n_labels;
    }
    std::fill(p.mask.begin(), p.mask.end(), std::uint8_t{0});
    for (std::size_t v : best_component) p.mask[v] = 1;
}

std::size_t nearest_mask_voxel(const HeartPhantom& p, const Vec3& target) {
    // Two voxels can be exactly equidistant from the target (round-decimal
    // grids make this common); break such ties by voxel index so the pick
    // does not depend on rounding noise, which varies under rigid motion.
    constexpr double kTie = 1e-9;
    double best = kInf;
    std::size_t best_idx = p.size();
    for (std::size_t k = 0; k < p.nz; ++k)
        for (std::size_t j = 0; j < p.ny; ++j)
            for (std::size_t i = 0; i < p.nx; ++i) {
                std::size_t v = p.index(i, j, k);
                if (!p.mask[v]) continue;
                double d = (p.voxel_center(i, j, k) - target).norm2();
                if (d < best - kTie || (d <= best + kTie && v < best_idx)) {
                    best = std::min(best, d);
                    best_idx = v;
                }
            }
    return best_idx == p.size() ? 0 : best_idx;
}

Vec3 parse_vec3(const std::string& key, const std::string& value) {
    std::vector<std::string> parts = split_ws(value);
    if (parts.size() != 3)
        throw UsageError("phantom spec: key '" + key + "' needs three numbers");
    try {
        return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
    } catch (const std::exception&) {
        throw UsageError("phantom spec: key '" + key + "' has a malformed number");
    }
}

double parse_num(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw UsageError("phantom spec: key '" + key + "' has a malformed number");
    }
}

std::string vec3_text(const Vec3& v) {
    return format_g(v.x, 17) + " " + format_g(v.y, 17) + " " + format_g(v.z, 17);
}

// Mean and population standard deviation, used by the z-normalization.
std::pair<double, double> mean_psd(const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / static_cast<double>(x.size()))};
}

// Pearson correlation; NaN when either series has zero variance.
double pearson_or_nan(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return kNan;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Phantom construction
// ---------------------------------------------------------------------------

void PhantomSpec::validate() const {
    if (nx < 3 || ny < 3 || nz < 3) throw UsageError("phantom spec: grid must be at least 3^3");
    if (nx > 512 || ny > 512 || nz > 512) throw UsageError("phantom spec: grid too large");
    if (!(spacing > 0.0)) throw UsageError("phantom spec: spacing must be positive");
    if (!(velocity > 0.0)) throw UsageError("phantom spec: velocity must be positive");
    if (fiber_axis < -1 || fiber_axis > 2) throw UsageError("phantom spec: bad fiber axis");
    if (!(fiber_speedup > 0.0)) throw UsageError("phantom spec: fiber speedup must be positive");
    for (const EllipsoidShell* shell : {&lv, &rv}) {
        if (!(shell->outer.x > 0.0) || !(shell->outer.y > 0.0) || !(shell->outer.z > 0.0))
            throw UsageError("phantom spec: ellipsoid semi-axes must be positive");
        if (shell->inner.x >= shell->outer.x || shell->inner.y >= shell->outer.y ||
            shell->inner.z >= shell->outer.z)
            throw UsageError("phantom spec: inner cavity must be strictly inside the wall");
        if (shell->inner.x < 0.0 || shell->inner.y < 0.0 || shell->inner.z < 0.0)
            throw UsageError("phantom spec: inner semi-axes must be non-negative");
    }
    for (const auto& r : roots)
        if (r[0] >= nx || r[1] >= ny || r[2] >= nz)
            throw UsageError("phantom spec: root voxel outside the grid");
}

PhantomSpec default_phantom_spec(const Vec3& center) {
    PhantomSpec s;
    s.nx = s.ny = s.nz = 25;
    s.spacing = 0.2;
    s.origin = center - Vec3{12 * s.spacing, 12 * s.spacing, 12 * s.spacing};
    s.lv.center = center + Vec3{-0.55, 0.0, -0.10};
    s.lv.outer = {1.50, 1.50, 1.90};
    s.lv.inner = {0.95, 0.95, 1.35};
    s.rv.center = center + Vec3{0.95, 0.35, 0.00};
    s.rv.outer = {1.35, 1.15, 1.55};
    s.rv.inner = {0.95, 0.78, 1.18};
    s.base_z = center.z + 1.1;
    s.velocity = 0.07;
    return s;
}

std::string phantom_spec_to_text(const PhantomSpec& spec) {
    spec.validate();
    KeyValues kv;
    kv["nx"] = std::to_string(spec.nx);
    kv["ny"] = std::to_string(spec.ny);
    kv["nz"] = std::to_string(spec.nz);
    kv["spacing"] = format_g(spec.spacing, 17);
    kv["origin"] = vec3_text(spec.origin);
    kv["lv_center"] = vec3_text(spec.lv.center);
    kv["lv_outer"] = vec3_text(spec.lv.outer);
    kv["lv_inner"] = vec3_text(spec.lv.inner);
    kv["rv_center"] = vec3_text(spec.rv.center);
    kv["rv_outer"] = vec3_text(spec.rv.outer);
    kv["rv_inner"] = vec3_text(spec.rv.inner);
    kv["base_z"] = format_g(spec.base_z, 17);
    kv["velocity"] = format_g(spec.velocity, 17);
    const std::array<const char*, 4> axis_names = {"none", "x", "y", "z"};
    kv["fiber_axis"] = axis_names[static_cast<std::size_t>(spec.fiber_axis + 1)];
    kv["fiber_speedup"] = format_g(spec.fiber_speedup, 17);
    if (!spec.roots.empty()) {
        std::string r;
        for (const auto& v : spec.roots) {
            if (!r.empty()) r += ' ';
            r += std::to_string(v[0]) + ',' + std::to_string(v[1]) + ',' + std::to_string(v[2]);
        }
        kv["roots"] = r;
    }
    return canonical_key_values(kv);
}

PhantomSpec phantom_spec_from_text(const std::string& text) {
    KeyValues kv = parse_key_values(text);
    PhantomSpec spec;
    spec.roots.clear();
    for (const auto& [key, value] : kv) {
        if (key == "nx" || key == "ny" || key == "nz") {
            double v = parse_num(key, value);
            if (v < 1 || v != std::floor(v)) throw UsageError("phantom spec: bad grid size");
            (key == "nx" ? spec.nx : key == "ny" ? spec.ny : spec.nz) =
                static_cast<std::size_t>(v);
        } else if (key == "spacing") {
            spec.spacing = parse_num(key, value);
        } else if (key == "origin") {
            spec.origin = parse_vec3(key, value);
        } else if (key == "lv_center") {
            spec.lv.center = parse_vec3(key, value);
        } else if (key == "lv_outer") {
            spec.lv.outer = parse_vec3(key, value);
        } else if (key == "lv_inner") {
            spec.lv.inner = parse_vec3(key, value);
        } else if (key == "rv_center") {
            spec.rv.center = parse_vec3(key, value);
        } else if (key == "rv_outer") {
            spec.rv.outer = parse_vec3(key, value);
        } else if (key == "rv_inner") {
            spec.rv.inner = parse_vec3(key, value);
        } else if (key == "base_z") {
            spec.base_z = parse_num(key, value);
        } else if (key == "velocity") {
            spec.velocity = parse_num(key, value);
        } else if (key == "fiber_axis") {
            if (value == "none")
                spec.fiber_axis = -1;
            else if (value == "x")
                spec.fiber_axis = 0;
            else if (value == "y")
                spec.fiber_axis = 1;
            else if (value == "z")
                spec.fiber_axis = 2;
            else
                throw UsageError("phantom spec: fiber_axis must be none, x, y, or z");
        } else if (key == "fiber_speedup") {
            spec.fiber_speedup = parse_num(key, value);
        } else if (key == "roots") {
            for (const std::string& triple : split_ws(value)) {
                std::vector<std::string> parts = split_char(triple, ',');
                if (parts.size() != 3)
                    throw UsageError("phantom spec: roots entries must be i,j,k triples");
                std::array<std::size_t, 3> r{};
                for (std::size_t d = 0; d < 3; ++d) {
                    double v = parse_num(key, parts[d]);
                    if (v < 0 || v != std::floor(v))
                        throw UsageError("phantom spec: bad root coordinate");
                    r[d] = static_cast<std::size_t>(v);
                }
                spec.roots.push_back(r);
            }
        } else {
            throw UsageError("phantom spec: unknown key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

Vec3 HeartPhantom::voxel_center(std::size_t i, std::size_t j, std::size_t k) const {
    return origin + Vec3{static_cast<double>(i) * spacing, static_cast<double>(j) * spacing,
                         static_cast<double>(k) * spacing};
}

void HeartPhantom::validate() const {
    if (nx < 3 || ny < 3 || nz < 3 || !(spacing > 0.0)) throw DataError("phantom: bad grid");
    if (mask.size() != size() || velocity.size() != size())
        throw DataError("phantom: field sizes do not match the grid");
    std::size_t n_mask = 0;
    for (std::size_t v = 0; v < size(); ++v) {
        if (!mask[v]) continue;
        ++n_mask;
        if (!(velocity[v] > 0.0)) throw DataError("phantom: non-positive conduction velocity");
    }
    if (n_mask == 0) throw DataError("phantom: empty myocardium mask");
    if (roots.empty()) throw DataError("phantom: no root nodes");
    for (std::size_t r : roots)
        if (r >= size() || !mask[r]) throw DataError("phantom: root node outside the myocardium");
    if (fiber_axis < -1 || fiber_axis > 2 || !(fiber_speedup > 0.0))
        throw DataError("phantom: bad fiber model");
    // 6-connectivity of the mask
    std::size_t start = 0;
    while (!mask[start]) ++start;
    std::vector<std::uint8_t> seen(size(), 0);
    std::vector<std::size_t> stack = {start};
    seen[start] = 1;
    std::size_t visited = 0;
    while (!stack.empty()) {
        std::size_t v = stack.back();
        stack.pop_back();
        ++visited;
        std::size_t i = v % nx, j = (v / nx) % ny, k = v / (nx * ny);
        const std::array<std::array<long, 3>, 6> steps = {
            {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
        for (const auto& st : steps) {
            long ni = static_cast<long>(i) + st[0];
            long nj = static_cast<long>(j) + st[1];
            long nk = static_cast<long>(k) + st[2];
            if (ni < 0 || nj < 0 || nk < 0 || ni >= static_cast<long>(nx) ||
                nj >= static_cast<long>(ny) || nk >= static_cast<long>(nz))
                continue;
            std::size_t n = index(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj),
                                  static_cast<std::size_t>(nk));
            if (mask[n] && !seen[n]) {
                seen[n] = 1;
                stack.push_back(n);
            }
        }
    }
    if (visited != n_mask) throw DataError("phantom: myocardium mask is not 6-connected");
}

HeartPhantom build_phantom(const PhantomSpec& spec) {
    spec.validate();
    HeartPhantom p;
    p.nx = spec.nx;
    p.ny = spec.ny;
    p.nz = spec.nz;
    p.spacing = spec.spacing;
    p.origin = spec.origin;
    p.fiber_axis = spec.fiber_axis;
    p.fiber_speedup = spec.fiber_speedup;
    p.mask.assign(p.size(), 0);
    p.velocity.assign(p.size(), spec.velocity);
    for (std::size_t k = 0; k < p.nz; ++k)
        for (std::size_t j = 0; j < p.ny; ++j)
            for (std::size_t i = 0; i < p.nx; ++i) {
                Vec3 c = p.voxel_center(i, j, k);
                if (c.z > spec.base_z + 1e-12) continue;
                if (in_shell(spec.lv, c) || in_shell(spec.rv, c)) p.mask[p.index(i, j, k)] = 1;
            }
    keep_largest_component(p);
    bool any = false;
    for (std::uint8_t m : p.mask) any = any || m != 0;
    if (!any) throw DataError("phantom: the spec produces an empty myocardium mask");

    if (!spec.roots.empty()) {
        for (const auto& r : spec.roots) {
            std::size_t v = p.index(r[0], r[1], r[2]);
            if (!p.mask[v]) throw DataError("phantom: requested root voxel is not myocardium");
            p.roots.push_back(v);
        }
    } else {
        // septal midpoint, LV free wall, LV apex
        Vec3 septal = (spec.lv.center + spec.rv.center) * 0.5;
        double wall_x = 0.5 * (spec.lv.outer.x + spec.lv.inner.x);
        Vec3 free_wall = spec.lv.center - Vec3{wall_x, 0.0, 0.0};
        double wall_z = 0.5 * (spec.lv.outer.z + spec.lv.inner.z);
        Vec3 apex = spec.lv.center - Vec3{0.0, 0.0, wall_z};
        for (const Vec3& site : {septal, free_wall, apex})
            p.roots.push_back(nearest_mask_voxel(p, site));
    }
    std::sort(p.roots.begin(), p.roots.end());
    p.roots.erase(std::unique(p.roots.begin(), p.roots.end()), p.roots.end());
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Eikonal solve
// ---------------------------------------------------------------------------

ActivationMap solve_eikonal(const HeartPhantom& phantom) {
    phantom.validate();
    const std::size_t n = phantom.size();
    const std::vector<Offset> offsets = neighbor_offsets_26();

    ActivationMap out;
    out.tau.assign(n, kInf);
    std::vector<std::uint8_t> accepted(n, 0);

    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> heap;
    // Analytic initialization in a small ball around each root: first-order
    // fast marching otherwise seeds a point-source error that never decays.
    // The ball has a fixed physical radius (at least three voxels) so that
    // refining the grid still refines the overall solution. Initialized
    // voxels stay relaxable, so every value can still be lowered by a
    // cheaper path found during the sweep.
    const long init_radius =
        std::max<long>(3, static_cast<long>(std::ceil(0.9 / phantom.spacing)));
    // The straight path from the root must stay inside the myocardium, so the
    // activation cannot tunnel across a cavity. The ray is sampled in grid
    // index space: mapping interpolated world points back through the origin
    // would let last-ulp noise in absolute coordinates flip samples that land
    // exactly between voxels, making the result translation-dependent.
    auto visible = [&](long ri, long rj, long rk, long ci, long cj, long ck) {
        const double di = static_cast<double>(ci - ri);
        const double dj = static_cast<double>(cj - rj);
        const double dk = static_cast<double>(ck - rk);
        double length = std::sqrt(di * di + dj * dj + dk * dk);
        std::size_t steps = static_cast<std::size_t>(std::ceil(length / 0.5));
        for (std::size_t s = 1; s < steps; ++s) {
            double t = static_cast<double>(s) / static_cast<double>(steps);
            long i = std::lround(static_cast<double>(ri) + di * t);
            long j = std::lround(static_cast<double>(rj) + dj * t);
            long k = std::lround(static_cast<double>(rk) + dk * t);
            if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(phantom.nx) ||
                j >= static_cast<long>(phantom.ny) || k >= static_cast<long>(phantom.nz))
                return false;
            if (!phantom.mask[phantom.index(static_cast<std::size_t>(i),
                                            static_cast<std::size_t>(j),
                                            static_cast<std::size_t>(k))])
                return false;
        }
        return true;
    };
    for (std::size_t r : phantom.roots) {
        std::array<double, 3> speeds = axis_speeds(phantom, phantom.velocity[r]);
        long ri = static_cast<long>(r % phantom.nx);
        long rj = static_cast<long>((r / phantom.nx) % phantom.ny);
        long rk = static_cast<long>(r / (phantom.nx * phantom.ny));
        for (long dk = -init_radius; dk <= init_radius; ++dk)
            for (long dj = -init_radius; dj <= init_radius; ++dj)
                for (long di = -init_radius; di <= init_radius; ++di) {
                    long i = ri + di, j = rj + dj, k = rk + dk;
                    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(phantom.nx) ||
                        j >= static_cast<long>(phantom.ny) || k >= static_cast<long>(phantom.nz))
                        continue;
                    std::size_t v =
                        phantom.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                      static_cast<std::size_t>(k));
                    if (!phantom.mask[v]) continue;
                    double dx = di * phantom.spacing / speeds[0];
                    double dy = dj * phantom.spacing / speeds[1];
                    double dz = dk * phantom.spacing / speeds[2];
                    double t = std::sqrt(dx * dx + dy * dy + dz * dz);
                    if (t < out.tau[v] && visible(ri, rj, rk, i, j, k)) {
                        out.tau[v] = t;
                        heap.push({t, v});
                    }
                }
    }

    auto coords = [&](std::size_t v, std::size_t& i, std::size_t& j, std::size_t& k) {
        i = v % phantom.nx;
        j = (v / phantom.nx) % phantom.ny;
        k = v / (phantom.nx * phantom.ny);
    };
    auto neighbor_of = [&](std::size_t v, const Offset& o, std::size_t& nbr) {
        std::size_t i, j, k;
        coords(v, i, j, k);
        long ni = static_cast<long>(i) + o.di;
        long nj = static_cast<long>(j) + o.dj;
        long nk = static_cast<long>(k) + o.dk;
        if (ni < 0 || nj < 0 || nk < 0 || ni >= static_cast<long>(phantom.nx) ||
            nj >= static_cast<long>(phantom.ny) || nk >= static_cast<long>(phantom.nz))
            return false;
        nbr = phantom.index(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj),
                            static_cast<std::size_t>(nk));
        return true;
    };

    // Candidate value at voxel v from accepted neighbors: the minimum of the
    // 26 direct edge arrivals and the axis upwind quadratic.
    auto candidate = [&](std::size_t v) {
        double best = kInf;
        std::array<double, 3> upwind = {kInf, kInf, kInf};
        for (const Offset& o : offsets) {
            std::size_t nbr;
            if (!neighbor_of(v, o, nbr)) continue;
            if (!phantom.mask[nbr] || !accepted[nbr]) continue;
            best = std::min(best, out.tau[nbr] + edge_time(phantom, nbr, o));
            int axis_hits = std::abs(o.di) + std::abs(o.dj) + std::abs(o.dk);
            if (axis_hits == 1) {
                std::size_t d = o.di != 0 ? 0 : (o.dj != 0 ? 1 : 2);
                upwind[d] = std::min(upwind[d], out.tau[nbr]);
            }
        }
        // upwind quadratic: sum_d ((tau - a_d) * v_d / h)^2 = 1 over the axes
        // with a_d < tau
        std::array<double, 3> speeds = axis_speeds(phantom, phantom.velocity[v]);
        std::vector<std::pair<double, double>> terms;  // (a_d, w_d)
        for (std::size_t d = 0; d < 3; ++d)
            if (std::isfinite(upwind[d]))
                terms.push_back({upwind[d], (speeds[d] / phantom.spacing) *
                                                (speeds[d] / phantom.spacing)});
        std::sort(terms.begin(), terms.end());
        while (!terms.empty()) {
            double a_sum = 0.0, b_sum = 0.0, c_sum = -1.0;
            for (const auto& [a, w] : terms) {
                a_sum += w;
                b_sum += w * a;
                c_sum += w * a * a;
            }
            double disc = b_sum * b_sum - a_sum * c_sum;
            if (disc >= 0.0) {
                double tau = (b_sum + std::sqrt(disc)) / a_sum;
                if (tau + 1e-15 >= terms.back().first) {
                    best = std::min(best, tau);
                    break;
                }
            }
            terms.pop_back();
        }
        return best;
    };

    while (!heap.empty()) {
        auto [t, v] = heap.top();
        heap.pop();
        if (accepted[v] || t > out.tau[v]) continue;
        accepted[v] = 1;
        for (const Offset& o : offsets) {
            std::size_t nbr;
            if (!neighbor_of(v, o, nbr)) continue;
            if (!phantom.mask[nbr] || accepted[nbr]) continue;
            double cand = candidate(nbr);
            if (cand < out.tau[nbr]) {
                out.tau[nbr] = cand;
                heap.push({cand, nbr});
            }
        }
    }

    for (std::size_t v = 0; v < n; ++v)
        if (phantom.mask[v] && !std::isfinite(out.tau[v])) out.unreachable.push_back(v);
    return out;
}

double max_finite_tau(const ActivationMap& activation) {
    double m = 0.0;
    for (double t : activation.tau)
        if (std::isfinite(t)) m = std::max(m, t);
    return m;
}

// ---------------------------------------------------------------------------
// Transmembrane voltage and pseudo-ECG
// ---------------------------------------------------------------------------

std::vector<double> transmembrane(const HeartPhantom& phantom, const ActivationMap& activation,
                                  double t_ms, double upstroke_ms) {
    if (!(upstroke_ms > 0.0)) throw UsageError("transmembrane: upstroke must be positive");
    if (activation.tau.size() != phantom.size())
        throw DataError("transmembrane: activation map does not match the grid");
    std::vector<double> vm(phantom.size(), 0.0);
    for (std::size_t v = 0; v < phantom.size(); ++v) {
        if (!phantom.mask[v]) continue;
        double s = (t_ms - activation.tau[v]) / upstroke_ms;
        if (s <= 0.0) continue;
        s = std::min(s, 1.0);
        vm[v] = s * s * (3.0 - 2.0 * s);
    }
    return vm;
}

namespace {

void check_electrode_outside(const HeartPhantom& p, const Vec3& e) {
    double ri = (e.x - p.origin.x) / p.spacing;
    double rj = (e.y - p.origin.y) / p.spacing;
    double rk = (e.z - p.origin.z) / p.spacing;
    long i = std::lround(ri), j = std::lround(rj), k = std::lround(rk);
    if (i >= 0 && j >= 0 && k >= 0 && i < static_cast<long>(p.nx) && j < static_cast<long>(p.ny) &&
        k < static_cast<long>(p.nz) &&
        p.mask[p.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                       static_cast<std::size_t>(k))])
        throw DataError("pseudo_ecg: electrode lies inside the myocardium");
}

// Voxels whose central-difference gradient can be nonzero: the mask dilated
// by one voxel along each axis.
std::vector<std::size_t> active_voxels(const HeartPhantom& p) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < p.nz; ++k)
        for (std::size_t j = 0; j < p.ny; ++j)
            for (std::size_t i = 0; i < p.nx; ++i) {
                bool near = false;
                for (long dd = -1; dd <= 1 && !near; ++dd) {
                    long ii = std::clamp<long>(static_cast<long>(i) + dd, 0,
                                               static_cast<long>(p.nx) - 1);
                    long jj = std::clamp<long>(static_cast<long>(j) + dd, 0,
                                               static_cast<long>(p.ny) - 1);
                    long kk = std::clamp<long>(static_cast<long>(k) + dd, 0,
                                               static_cast<long>(p.nz) - 1);
                    near = p.mask[p.index(static_cast<std::size_t>(ii), j, k)] ||
                           p.mask[p.index(i, static_cast<std::size_t>(jj), k)] ||
                           p.mask[p.index(i, j, static_cast<std::size_t>(kk))];
                }
                if (near) out.push_back(p.index(i, j, k));
            }
    return out;
}

// grad(1 / |x - e|) = -(x - e) / |x - e|^3
Vec3 lead_field(const Vec3& x, const Vec3& e) {
    Vec3 d = x - e;
    double r = d.norm();
    if (r < 1e-12) throw DataError("pseudo_ecg: electrode coincides with a voxel center");
    return d * (-1.0 / (r * r * r));
}

// Index-clamped central difference of vm along each axis at voxel v.
Vec3 vm_gradient(const HeartPhantom& p, const std::vector<double>& vm, std::size_t v) {
    std::size_t i = v % p.nx, j = (v / p.nx) % p.ny, k = v / (p.nx * p.ny);
    auto diff = [&](long lo_i, long lo_j, long lo_k, long hi_i, long hi_j, long hi_k, long span) {
        if (span == 0) return 0.0;
        double hi = vm[p.index(static_cast<std::size_t>(hi_i), static_cast<std::size_t>(hi_j),
                               static_cast<std::size_t>(hi_k))];
        double lo = vm[p.index(static_cast<std::size_t>(lo_i), static_cast<std::size_t>(lo_j),
                               static_cast<std::size_t>(lo_k))];
        return (hi - lo) / (static_cast<double>(span) * p.spacing);
    };
    long xi = static_cast<long>(i), yj = static_cast<long>(j), zk = static_cast<long>(k);
    long xm = std::max<long>(xi - 1, 0), xp = std::min<long>(xi + 1, static_cast<long>(p.nx) - 1);
    long ym = std::max<long>(yj - 1, 0), yp = std::min<long>(yj + 1, static_cast<long>(p.ny) - 1);
    long zm = std::max<long>(zk - 1, 0), zp = std::min<long>(zk + 1, static_cast<long>(p.nz) - 1);
    return {diff(xm, yj, zk, xp, yj, zk, xp - xm), diff(xi, ym, zk, xi, yp, zk, yp - ym),
            diff(xi, yj, zm, xi, yj, zp, zp - zm)};
}

// Shared inner sum so pseudo_ecg and simulate_ecg produce identical values.
double potential_sum(const HeartPhantom& p, const std::vector<double>& vm,
                     const std::vector<std::size_t>& active, const std::vector<Vec3>& field) {
    double phi = 0.0;
    for (std::size_t a = 0; a < active.size(); ++a)
        phi += vm_gradient(p, vm, active[a]).dot(field[a]);
    return phi * p.spacing * p.spacing * p.spacing;
}

std::vector<Vec3> electrode_field(const HeartPhantom& p, const std::vector<std::size_t>& active,
                                  const Vec3& e) {
    check_electrode_outside(p, e);
    std::vector<Vec3> field(active.size());
    for (std::size_t a = 0; a < active.size(); ++a) {
        std::size_t v = active[a];
        field[a] = lead_field(
            p.voxel_center(v % p.nx, (v / p.nx) % p.ny, v / (p.nx * p.ny)), e);
    }
    return field;
}

}  // namespace

double pseudo_potential(const HeartPhantom& phantom, const std::vector<double>& vm,
                        const Vec3& electrode) {
    if (vm.size() != phantom.size())
        throw DataError("pseudo_potential: field does not match the grid");
    std::vector<std::size_t> active = active_voxels(phantom);
    std::vector<Vec3> field = electrode_field(phantom, active, electrode);
    return potential_sum(phantom, vm, active, field);
}

std::vector<double> pseudo_ecg(const HeartPhantom& phantom, const ActivationMap& activation,
                               const Vec3& electrode, const std::vector<double>& times_ms,
                               double upstroke_ms) {
    std::vector<std::size_t> active = active_voxels(phantom);
    std::vector<Vec3> field = electrode_field(phantom, active, electrode);
    std::vector<double> phi(times_ms.size(), 0.0);
    for (std::size_t t = 0; t < times_ms.size(); ++t) {
        std::vector<double> vm = transmembrane(phantom, activation, times_ms[t], upstroke_ms);
        phi[t] = potential_sum(phantom, vm, active, field);
    }
    return phi;
}

// ---------------------------------------------------------------------------
// Leads
// ---------------------------------------------------------------------------

void EcgTrace::validate() const {
    if (!(dt_ms > 0.0)) throw DataError("ecg trace: non-positive sample period");
    for (const auto& lead : leads) {
        if (lead.size() != leads[0].size()) throw DataError("ecg trace: unequal lead lengths");
        for (double v : lead)
            if (!std::isfinite(v)) throw DataError("ecg trace: non-finite sample");
    }
}

std::vector<double> EcgTrace::lead_iii() const {
    std::vector<double> out(samples());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = leads[1][i] - leads[0][i];
    return out;
}

std::vector<double> EcgTrace::lead_avr() const {
    std::vector<double> out(samples());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -(leads[0][i] + leads[1][i]) / 2.0;
    return out;
}

std::vector<double> EcgTrace::lead_avl() const {
    std::vector<double> out(samples());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = leads[0][i] - leads[1][i] / 2.0;
    return out;
}

std::vector<double> EcgTrace::lead_avf() const {
    std::vector<double> out(samples());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = leads[1][i] - leads[0][i] / 2.0;
    return out;
}

EcgTrace derive_leads(const std::array<std::vector<double>, 9>& phi, double dt_ms) {
    for (const auto& channel : phi)
        if (channel.size() != phi[0].size())
            throw DataError("derive_leads: potential channels have unequal lengths");
    const std::vector<double>& la = phi[0];
    const std::vector<double>& ra = phi[1];
    const std::vector<double>& ll = phi[2];
    EcgTrace trace;
    trace.dt_ms = dt_ms;
    for (auto& lead : trace.leads) lead.resize(la.size());
    for (std::size_t i = 0; i < la.size(); ++i) {
        double wct = (la[i] + ra[i] + ll[i]) / 3.0;
        trace.leads[0][i] = la[i] - ra[i];
        trace.leads[1][i] = ll[i] - ra[i];
        for (std::size_t v = 0; v < 6; ++v) trace.leads[2 + v][i] = phi[3 + v][i] - wct;
    }
    trace.validate();
    return trace;
}

EcgTrace simulate_ecg(const HeartPhantom& phantom, const ElectrodeSet& electrodes,
                      const SimulationOptions& options) {
    if (!(options.upstroke_ms > 0.0) || !(options.dt_ms > 0.0))
        throw UsageError("simulate_ecg: upstroke and sample period must be positive");
    ActivationMap activation = solve_eikonal(phantom);
    double t_end = options.t_end_ms >= 0.0
                       ? options.t_end_ms
                       : max_finite_tau(activation) + options.upstroke_ms + 2.0;
    std::size_t n_samples = static_cast<std::size_t>(std::floor(t_end / options.dt_ms)) + 1;

    std::vector<std::size_t> active = active_voxels(phantom);
    std::array<std::vector<Vec3>, 9> fields;
    for (std::size_t e = 0; e < 9; ++e)
        fields[e] = electrode_field(phantom, active, electrodes.at(kPotentialChannels[e]));

    std::array<std::vector<double>, 9> phi;
    for (auto& channel : phi) channel.resize(n_samples);
    parallel_for(n_samples, options.threads, [&](std::size_t t) {
        double time = static_cast<double>(t) * options.dt_ms;
        std::vector<double> vm = transmembrane(phantom, activation, time, options.upstroke_ms);
        for (std::size_t e = 0; e < 9; ++e)
            phi[e][t] = potential_sum(phantom, vm, active, fields[e]);
    });
    return derive_leads(phi, options.dt_ms);
}

std::string ecg_to_csv(const EcgTrace& trace) {
    trace.validate();
    std::string out = "t_ms,I,II,V1,V2,V3,V4,V5,V6\n";
    for (std::size_t i = 0; i < trace.samples(); ++i) {
        out += format_g(static_cast<double>(i) * trace.dt_ms, 17);
        for (const auto& lead : trace.leads) {
            out += ',';
            out += format_g(lead[i], 17);
        }
        out += '\n';
    }
    return out;
}

EcgTrace ecg_from_csv(const std::string& text) {
    std::vector<std::string> lines = split_char(text, '\n');
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty() || lines[0] != "t_ms,I,II,V1,V2,V3,V4,V5,V6")
        throw DataError("ecg csv: missing or unexpected header");
    if (lines.size() < 3) throw DataError("ecg csv: need at least two samples");
    EcgTrace trace;
    std::vector<double> t_values;
    for (std::size_t row = 1; row < lines.size(); ++row) {
        std::vector<std::string> cells = split_char(lines[row], ',');
        if (cells.size() != 9) throw DataError("ecg csv: row with wrong column count");
        try {
            t_values.push_back(std::stod(cells[0]));
            for (std::size_t lead = 0; lead < 8; ++lead)
                trace.leads[lead].push_back(std::stod(cells[1 + lead]));
        } catch (const std::exception&) {
            throw DataError("ecg csv: malformed number");
        }
    }
    trace.dt_ms = t_values[1] - t_values[0];
    trace.validate();
    return trace;
}

// ---------------------------------------------------------------------------
// Waveform comparison
// ---------------------------------------------------------------------------

DtwResult dtw(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw DataError("dtw: empty series");
    DtwResult result;
    auto normalize = [&result](const std::vector<double>& x) {
        auto [m, sd] = mean_psd(x);
        std::vector<double> out(x.size());
        if (sd == 0.0) {
            result.degenerate = true;
            out = x;
        } else {
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - m) / sd;
        }
        return out;
    };
    std::vector<double> na = normalize(a), nb = normalize(b);

    // DP over (total cost, path length), minimized lexicographically; the
    // shortest-path tiebreak makes the result symmetric in (a, b).
    const std::size_t n = na.size(), m = nb.size();
    using Cell = std::pair<double, std::size_t>;
    std::vector<Cell> prev(m), cur(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double cost = std::fabs(na[i] - nb[j]);
            Cell best;
            if (i == 0 && j == 0) {
                best = {0.0, 0};
            } else {
                best = {kInf, 0};
                if (i > 0 && j > 0) best = std::min(best, prev[j - 1]);
                if (i > 0) best = std::min(best, prev[j]);
                if (j > 0) best = std::min(best, cur[j - 1]);
            }
            cur[j] = {best.first + cost, best.second + 1};
        }
        std::swap(prev, cur);
    }
    result.path_length = prev[m - 1].second;
    result.distance = prev[m - 1].first / static_cast<double>(result.path_length);
    return result;
}

double qrs_duration_ms(const EcgTrace& trace, double deriv_frac) {
    trace.validate();
    if (!(deriv_frac > 0.0) || deriv_frac >= 1.0)
        throw UsageError("qrs_duration: derivative fraction must be in (0, 1)");
    if (trace.samples() < 2) return 0.0;
    std::size_t first = trace.samples(), last = 0;
    bool any = false;
    for (const auto& lead : trace.leads) {
        double max_abs = 0.0;
        for (std::size_t i = 0; i + 1 < lead.size(); ++i)
            max_abs = std::max(max_abs, std::fabs(lead[i + 1] - lead[i]));
        if (max_abs == 0.0) continue;
        double threshold = deriv_frac * max_abs;
        for (std::size_t i = 0; i + 1 < lead.size(); ++i) {
            if (std::fabs(lead[i + 1] - lead[i]) > threshold) {
                first = std::min(first, i);
                last = std::max(last, i);
                any = true;
            }
        }
    }
    if (!any) return 0.0;
    return static_cast<double>(last - first) * trace.dt_ms;
}

double rs_ratio(const std::vector<double>& lead) {
    if (lead.empty()) throw DataError("rs_ratio: empty lead");
    double r = 0.0, s = 0.0;
    for (double v : lead) {
        r = std::max(r, v);
        s = std::max(s, -v);
    }
    if (s == 0.0) return kNan;
    return r / s;
}

EcgComparison compare_ecgs(const EcgTrace& pred, const EcgTrace& gt, double deriv_frac) {
    pred.validate();
    gt.validate();
    if (pred.samples() != gt.samples() || std::fabs(pred.dt_ms - gt.dt_ms) > 1e-12)
        throw DataError("compare_ecgs: traces must share sample count and period");

    EcgComparison cmp;
    double dtw_sum = 0.0, pearson_sum = 0.0, rs_sum = 0.0;
    std::size_t pearson_n = 0, rs_n = 0;
    for (std::size_t lead = 0; lead < 8; ++lead) {
        LeadComparison lc;
        lc.lead = kLeadNames[lead];
        DtwResult d = dtw(pred.leads[lead], gt.leads[lead]);
        lc.dtw = d.distance;
        lc.dtw_degenerate = d.degenerate;
        lc.pearson = pearson_or_nan(pred.leads[lead], gt.leads[lead]);
        lc.rs_pred = rs_ratio(pred.leads[lead]);
        lc.rs_gt = rs_ratio(gt.leads[lead]);
        dtw_sum += lc.dtw;
        if (std::isfinite(lc.pearson)) {
            pearson_sum += lc.pearson;
            ++pearson_n;
        }
        if (std::isfinite(lc.rs_pred) && std::isfinite(lc.rs_gt)) {
            rs_sum += std::fabs(lc.rs_pred - lc.rs_gt);
            ++rs_n;
        }
        cmp.leads.push_back(lc);
    }
    cmp.mean_dtw = dtw_sum / 8.0;
    cmp.mean_pearson = pearson_n ? pearson_sum / static_cast<double>(pearson_n) : kNan;
    cmp.qrs_pred_ms = qrs_duration_ms(pred, deriv_frac);
    cmp.qrs_gt_ms = qrs_duration_ms(gt, deriv_frac);
    cmp.qrs_diff_ms = std::fabs(cmp.qrs_pred_ms - cmp.qrs_gt_ms);
    cmp.rs_diff = rs_n ? rs_sum / static_cast<double>(rs_n) : kNan;
    return cmp;
}

}  // namespace elok
