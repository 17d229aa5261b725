#include "elok/electrodes.hpp"

#include <cmath>

namespace elok {

std::size_t electrode_index(const std::string& name) {
    for (std::size_t i = 0; i < kNumElectrodes; ++i)
        if (name == kElectrodeNames[i]) return i;
    throw DataError("unknown electrode name '" + name + "'");
}

PointCloud ElectrodeSet::as_cloud() const {
    PointCloud c;
    c.points.assign(positions.begin(), positions.end());
    return c;
}

ElectrodeSet ElectrodeSet::from_cloud(const PointCloud& c) {
    if (c.size() != kNumElectrodes)
        throw DataError("electrode cloud must have exactly 10 points, got " +
                        std::to_string(c.size()));
    ElectrodeSet e;
    for (std::size_t i = 0; i < kNumElectrodes; ++i) e.positions[i] = c[i];
    return e;
}

ElectrodeError euclidean_error(const ElectrodeSet& pred, const ElectrodeSet& gt) {
    ElectrodeError err;
    double acc = 0.0;
    for (std::size_t i = 0; i < kNumElectrodes; ++i) {
        err.per_electrode[i] = dist(pred[i], gt[i]);
        acc += err.per_electrode[i];
    }
    err.mean = acc / static_cast<double>(kNumElectrodes);
    return err;
}

}  // namespace elok
