#include "elok/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "elok/spatial_index.hpp"

namespace elok {

double Vec3::norm() const { return std::sqrt(norm2()); }

Vec3 Vec3::normalized() const {
    double n = norm();
    if (n == 0.0) throw NumericError("cannot normalize zero vector");
    return *this / n;
}

bool Vec3::finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

double dist(const Vec3& a, const Vec3& b) { return (a - b).norm(); }
double dist2(const Vec3& a, const Vec3& b) { return (a - b).norm2(); }

void PointCloud::check_features() const {
    if (feature_width == 0) {
        if (!features.empty()) throw DataError("features present but feature_width is 0");
        return;
    }
    if (features.size() != feature_width * points.size())
        throw DataError("feature array size does not match feature_width * n_points");
}

PointCloud NormTransform::apply(const PointCloud& c) const {
    PointCloud out = c;
    for (auto& p : out.points) p = apply(p);
    return out;
}

PointCloud NormTransform::invert(const PointCloud& c) const {
    PointCloud out = c;
    for (auto& p : out.points) p = invert(p);
    return out;
}

std::vector<std::size_t> fps_indices(const PointCloud& cloud, std::size_t k,
                                     std::size_t seed_index) {
    const std::size_t n = cloud.size();
    if (n == 0) throw DataError("fps: empty cloud");
    if (k < 1 || k > n) throw DataError("fps: k out of range (k=" + std::to_string(k) +
                                        ", n=" + std::to_string(n) + ")");
    if (seed_index >= n) throw DataError("fps: seed index out of range");

    std::vector<std::size_t> selected;
    selected.reserve(k);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());

    std::size_t last = seed_index;
    selected.push_back(last);
    for (std::size_t round = 1; round < k; ++round) {
        double best = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double d2 = dist2(cloud[i], cloud[last]);
            if (d2 < min_d2[i]) min_d2[i] = d2;
            if (min_d2[i] > best) {
                best = min_d2[i];
                best_idx = i;
            }
        }
        last = best_idx;
        selected.push_back(last);
        min_d2[last] = 0.0;
    }
    return selected;
}

PointCloud fps(const PointCloud& cloud, std::size_t k, std::size_t seed_index) {
    PointCloud out;
    for (std::size_t i : fps_indices(cloud, k, seed_index)) out.points.push_back(cloud[i]);
    return out;
}

namespace {

// Directed mean nearest-neighbour term of the Chamfer distance.
double directed_mean(const PointCloud& from, const SpatialIndex& to_index, bool squared) {
    double acc = 0.0;
    for (const Vec3& p : from.points) {
        double d2 = to_index.nearest(p).distance2;
        acc += squared ? d2 : std::sqrt(d2);
    }
    return acc / static_cast<double>(from.size());
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw DataError("chamfer: empty cloud");
    SpatialIndex ia(a), ib(b);
    return directed_mean(a, ib, false) + directed_mean(b, ia, false);
}

double chamfer_squared(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw DataError("chamfer: empty cloud");
    SpatialIndex ia(a), ib(b);
    return directed_mean(a, ib, true) + directed_mean(b, ia, true);
}

ChamferPairs chamfer_pairs(const PointCloud& a, const PointCloud& b, bool squared) {
    if (a.empty() || b.empty()) throw DataError("chamfer: empty cloud");
    SpatialIndex ia(a), ib(b);
    ChamferPairs out;
    out.nn_ab.resize(a.size());
    out.nn_ba.resize(b.size());
    double acc_a = 0.0, acc_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto hit = ib.nearest(a[i]);
        out.nn_ab[i] = hit.index;
        acc_a += squared ? hit.distance2 : std::sqrt(hit.distance2);
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
        auto hit = ia.nearest(b[j]);
        out.nn_ba[j] = hit.index;
        acc_b += squared ? hit.distance2 : std::sqrt(hit.distance2);
    }
    out.value = acc_a / static_cast<double>(a.size()) + acc_b / static_cast<double>(b.size());
    return out;
}

double mae_points(const PointCloud& pred, const PointCloud& gt) {
    if (pred.size() != gt.size())
        throw DataError("mae_points: size mismatch (" + std::to_string(pred.size()) + " vs " +
                        std::to_string(gt.size()) + ")");
    if (pred.empty()) throw DataError("mae_points: empty cloud");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        Vec3 d = pred[i] - gt[i];
        acc += std::abs(d.x) + std::abs(d.y) + std::abs(d.z);
    }
    return acc / (3.0 * static_cast<double>(pred.size()));
}

std::pair<PointCloud, NormTransform> normalize_cloud(const PointCloud& cloud) {
    if (cloud.empty()) throw DataError("normalize_cloud: empty cloud");
    NormTransform t;
    Vec3 c{0, 0, 0};
    for (const Vec3& p : cloud.points) c += p;
    t.centroid = c / static_cast<double>(cloud.size());
    double max_r = 0.0;
    for (const Vec3& p : cloud.points) max_r = std::max(max_r, (p - t.centroid).norm());
    if (max_r == 0.0) {
        t.scale = 1.0;
        t.degenerate = true;
    } else {
        t.scale = max_r;
    }
    return {t.apply(cloud), t};
}

}  // namespace elok
