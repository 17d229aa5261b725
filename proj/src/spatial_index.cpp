#include "elok/spatial_index.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace elok {

namespace {

double coord(const Vec3& p, int axis) { return axis == 0 ? p.x : axis == 1 ? p.y : p.z; }

}  // namespace

SpatialIndex::SpatialIndex(const PointCloud& cloud) : pts_(cloud.points) {
    if (pts_.empty()) throw DataError("SpatialIndex: empty cloud");
    order_.resize(pts_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * pts_.size() / kLeafSize + 4);
    root_ = build(0, pts_.size());
}

int SpatialIndex::build(std::size_t begin, std::size_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin <= kLeafSize) {
        nodes_.push_back(node);
        return static_cast<int>(nodes_.size() - 1);
    }

    // split along the widest axis at the median
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};
    for (std::size_t i = begin; i < end; ++i) {
        const Vec3& p = pts_[order_[i]];
        lo.x = std::min(lo.x, p.x);
        lo.y = std::min(lo.y, p.y);
        lo.z = std::min(lo.z, p.z);
        hi.x = std::max(hi.x, p.x);
        hi.y = std::max(hi.y, p.y);
        hi.z = std::max(hi.z, p.z);
    }
    Vec3 ext = hi - lo;
    int axis = 0;
    if (ext.y > ext.x) axis = 1;
    if (coord(ext, 2) > coord(ext, axis)) axis = 2;
    if (coord(ext, axis) == 0.0) {  // all points identical: make a leaf
        nodes_.push_back(node);
        return static_cast<int>(nodes_.size() - 1);
    }

    std::size_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                         double ca = coord(pts_[a], axis), cb = coord(pts_[b], axis);
                         if (ca != cb) return ca < cb;
                         return a < b;
                     });
    node.axis = axis;
    node.split = coord(pts_[order_[mid]], axis);

    int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    int left = build(begin, mid);
    int right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
}

SpatialIndex::Hit SpatialIndex::nearest(const Vec3& query) const {
    Hit best;
    best.index = pts_.size();
    best.distance2 = std::numeric_limits<double>::infinity();
    search(root_, query, best);
    return best;
}

void SpatialIndex::search(int node_id, const Vec3& q, Hit& best) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
        for (std::size_t i = node.begin; i < node.end; ++i) {
            std::size_t idx = order_[i];
            double d2 = dist2(pts_[idx], q);
            // match brute force tie behaviour: lowest index wins
            if (d2 < best.distance2 || (d2 == best.distance2 && idx < best.index)) {
                best.distance2 = d2;
                best.index = idx;
            }
        }
        return;
    }
    double dq = coord(q, node.axis) - node.split;
    int near = dq < 0.0 ? node.left : node.right;
    int far = dq < 0.0 ? node.right : node.left;
    search(near, q, best);
    // equal plane distance may still hide an equal-distance lower index
    if (dq * dq <= best.distance2) search(far, q, best);
}

}  // namespace elok
