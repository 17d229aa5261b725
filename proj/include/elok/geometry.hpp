#ifndef ELOK_GEOMETRY_HPP
#define ELOK_GEOMETRY_HPP

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "elok/common.hpp"

namespace elok {

// All lengths are in centimetres.
struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3& operator-=(const Vec3& o) {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm2() const { return x * x + y * y + z * z; }
    double norm() const;
    Vec3 normalized() const;
    bool finite() const;
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

double dist(const Vec3& a, const Vec3& b);
double dist2(const Vec3& a, const Vec3& b);

// Ordered list of 3D points with optional fixed-width per-point features.
struct PointCloud {
    std::vector<Vec3> points;
    std::size_t feature_width = 0;
    std::vector<double> features;  // row-major, feature_width per point

    PointCloud() = default;
    explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    const Vec3& operator[](std::size_t i) const { return points[i]; }
    Vec3& operator[](std::size_t i) { return points[i]; }

    void check_features() const;
};

// Invertible centroid/scale transform produced by normalize_cloud.
struct NormTransform {
    Vec3 centroid;
    double scale = 1.0;     // max radius of the centred cloud
    bool degenerate = false;  // all points coincided; scale forced to 1

    Vec3 apply(const Vec3& p) const { return (p - centroid) / scale; }
    Vec3 invert(const Vec3& p) const { return p * scale + centroid; }
    PointCloud apply(const PointCloud& c) const;
    PointCloud invert(const PointCloud& c) const;
};

// Farthest point sampling: greedily picks the point with the largest
// min-distance to the already selected set, starting at seed_index.
PointCloud fps(const PointCloud& cloud, std::size_t k, std::size_t seed_index = 0);
std::vector<std::size_t> fps_indices(const PointCloud& cloud, std::size_t k,
                                     std::size_t seed_index = 0);

// Symmetric Chamfer distance: mean nearest-neighbour distance in both
// directions. Unsquared terms keep the value in cm.
double chamfer(const PointCloud& a, const PointCloud& b);
// Squared-distance variant used by the training loss.
double chamfer_squared(const PointCloud& a, const PointCloud& b);

// Chamfer evaluation that also reports the nearest-neighbour pairing,
// needed by backpropagation through the loss.
struct ChamferPairs {
    double value = 0.0;
    std::vector<std::size_t> nn_ab;  // for each a[i], index of nearest b
    std::vector<std::size_t> nn_ba;  // for each b[j], index of nearest a
};
ChamferPairs chamfer_pairs(const PointCloud& a, const PointCloud& b, bool squared);

// Mean absolute per-coordinate error between index-matched clouds.
double mae_points(const PointCloud& pred, const PointCloud& gt);

// Zero-centroid, unit-max-radius normalization.
std::pair<PointCloud, NormTransform> normalize_cloud(const PointCloud& cloud);

}  // namespace elok

#endif
