#ifndef ELOK_ELECTRODES_HPP
#define ELOK_ELECTRODES_HPP

#include <array>
#include <string>

#include "elok/geometry.hpp"

namespace elok {

inline constexpr std::size_t kNumElectrodes = 10;

// Canonical order; never permuted anywhere in the pipeline.
inline constexpr std::array<const char*, kNumElectrodes> kElectrodeNames = {
    "LA", "RA", "LL", "RL", "V1", "V2", "V3", "V4", "V5", "V6"};

std::size_t electrode_index(const std::string& name);

// The 10 named electrode positions of a 12-lead ECG, in canonical order.
struct ElectrodeSet {
    std::array<Vec3, kNumElectrodes> positions;

    Vec3& operator[](std::size_t i) { return positions[i]; }
    const Vec3& operator[](std::size_t i) const { return positions[i]; }
    Vec3& at(const std::string& name) { return positions[electrode_index(name)]; }
    const Vec3& at(const std::string& name) const { return positions[electrode_index(name)]; }

    PointCloud as_cloud() const;
    static ElectrodeSet from_cloud(const PointCloud& c);
};

struct ElectrodeError {
    std::array<double, kNumElectrodes> per_electrode{};
    double mean = 0.0;
};

// Per-electrode Euclidean distances and their mean (cm).
ElectrodeError euclidean_error(const ElectrodeSet& pred, const ElectrodeSet& gt);

}  // namespace elok

#endif
