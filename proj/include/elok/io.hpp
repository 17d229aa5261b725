#ifndef ELOK_IO_HPP
#define ELOK_IO_HPP

#include <string>

#include "elok/contours.hpp"
#include "elok/electrodes.hpp"
#include "elok/geometry.hpp"

namespace elok {

// Point cloud text format: one `x y z [features...]` per line, '#' comments.
// A `# features=W` header line declares W trailing feature columns.
std::string point_cloud_to_text(const PointCloud& c);
PointCloud point_cloud_from_text(const std::string& text);
void write_point_cloud(const std::string& path, const PointCloud& c);
PointCloud read_point_cloud(const std::string& path);

// Contour set document: per-contour plane pose and in-plane polyline.
std::string contour_set_to_text(const ContourSet& cs);
ContourSet contour_set_from_text(const std::string& text);
void write_contour_set(const std::string& path, const ContourSet& cs);
ContourSet read_contour_set(const std::string& path);

// Electrode file: ten `NAME x y z` rows in canonical order.
std::string electrodes_to_text(const ElectrodeSet& e);
ElectrodeSet electrodes_from_text(const std::string& text);
void write_electrodes(const std::string& path, const ElectrodeSet& e);
ElectrodeSet read_electrodes(const std::string& path);

}  // namespace elok

#endif
