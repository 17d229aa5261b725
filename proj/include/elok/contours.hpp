#ifndef ELOK_CONTOURS_HPP
#define ELOK_CONTOURS_HPP

#include <string>
#include <vector>

#include "elok/geometry.hpp"

namespace elok {

enum class ViewLabel {
    Sax,
    Lax2ch,
    Lax3ch,
    Lax4ch,
    LocSagittal,
    LocCoronal,
    LocAxial,
};

const char* view_label_name(ViewLabel v);
ViewLabel view_label_from_name(const std::string& name);

// Oriented slice plane: origin plus two orthonormal in-plane axes (cm).
struct PlanePose {
    Vec3 origin;
    Vec3 axis_u;
    Vec3 axis_v;

    Vec3 lift(double u, double v) const { return origin + axis_u * u + axis_v * v; }
    // |u.v|, |u|-1, |v|-1 must all be below this for a valid pose
    static constexpr double kOrthoTol = 1e-9;
    void validate() const;
};

struct Vec2 {
    double u = 0.0, v = 0.0;
};

// One slice contour: an ordered in-plane polyline (open or closed).
struct Contour {
    PlanePose plane;
    std::vector<Vec2> polyline;
    bool closed = false;
    ViewLabel view = ViewLabel::LocAxial;

    double arc_length() const;
    Vec3 lift(const Vec2& p) const { return plane.lift(p.u, p.v); }
};

struct ContourSet {
    std::vector<Contour> contours;

    bool empty() const { return contours.empty(); }
    double total_arc_length() const;
    void validate() const;
    // every polyline vertex lifted to 3D
    PointCloud all_points() const;
};

enum class ResampleMode {
    Random,      // n independent draws, uniform by arc length
    Stratified,  // n equally spaced stations (segment midpoint offsets)
};

// Draws n points across the union of all contours, uniformly by arc length,
// lifting each into 3D through its plane pose. Deterministic per seed.
PointCloud resample_contours(const ContourSet& contours, std::size_t n, std::uint64_t rng_seed,
                             ResampleMode mode = ResampleMode::Random);

}  // namespace elok

#endif
