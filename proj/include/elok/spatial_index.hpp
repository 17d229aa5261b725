#ifndef ELOK_SPATIAL_INDEX_HPP
#define ELOK_SPATIAL_INDEX_HPP

#include <cstddef>
#include <vector>

#include "elok/geometry.hpp"

namespace elok {

// Immutable kd-tree over a point cloud. Queries return exactly the
// brute-force nearest neighbour, including the same lowest-index winner
// on distance ties, so the index can transparently replace linear scans.
class SpatialIndex {
public:
    explicit SpatialIndex(const PointCloud& cloud);

    struct Hit {
        std::size_t index = 0;
        double distance2 = 0.0;
    };

    Hit nearest(const Vec3& query) const;
    std::size_t size() const { return pts_.size(); }

private:
    struct Node {
        int left = -1, right = -1;
        std::size_t begin = 0, end = 0;  // leaf range into order_
        int axis = -1;
        double split = 0.0;
    };

    int build(std::size_t begin, std::size_t end);
    void search(int node, const Vec3& q, Hit& best) const;

    std::vector<Vec3> pts_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
    static constexpr std::size_t kLeafSize = 16;
};

}  // namespace elok

#endif
