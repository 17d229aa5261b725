#ifndef ELOK_TORSO_HPP
#define ELOK_TORSO_HPP

#include <cstdint>
#include <vector>

#include "elok/contours.hpp"
#include "elok/electrodes.hpp"
#include "elok/geometry.hpp"

namespace elok {

// One torso control level: superellipse half-axes and squareness exponent.
// |x/a|^p + |y/b|^p = 1, with +x the subject's left and +y anterior.
struct TorsoLevel {
    double frac = 0.0;  // height fraction in [0,1]
    double a = 1.0;     // half-width, cm
    double b = 1.0;     // half-depth, cm
    double p = 2.5;     // squareness in [1.5, 4]
};

struct TorsoSpec {
    double height = 60.0;  // cm, z in [0, height]
    std::vector<TorsoLevel> levels;  // ascending frac, covering 0 and 1
    double bmi_scale = 1.0;          // dimensionless girth factor
    std::uint64_t seed = 0;

    void validate() const;
};

// Analytic torso surface with cached dense samples. Cross-section
// parameters interpolate linearly between control levels (C0 surface).
class TorsoSurface {
public:
    explicit TorsoSurface(TorsoSpec spec);

    const TorsoSpec& spec() const { return spec_; }
    double height() const { return spec_.height; }

    // Parameters of the cross-section at height z.
    void cross_section(double z, double& a, double& b, double& p) const;

    // Surface point at height z and superellipse parameter angle theta
    // (theta = 0 is the left mid-axillary line, pi/2 the sternum line).
    Vec3 point_at(double z, double theta) const;

    // Level-set value of the cross-section through p (negative inside).
    // Only meaningful for z within [0, height].
    double implicit(const Vec3& p) const;

    // Distance from p to the surface along the in-plane radial ray;
    // an upper bound on the true surface distance.
    double radial_surface_distance(const Vec3& p) const;

    // Stratified-ring sampling of the surface, arc-uniform within rings.
    PointCloud sample_surface(std::size_t n, std::uint64_t seed) const;

    const PointCloud& dense_samples() const { return dense_; }
    double max_radius() const;

private:
    TorsoSpec spec_;
    PointCloud dense_;
};

// Deterministic parametric torso family; half-axes vary by more than
// +-20 percent across seeds.
std::pair<TorsoSpec, TorsoSurface> sample_torso(std::uint64_t seed);

// Places the 10 electrodes at fixed parametric stations on the surface:
// chest leads on the anterior/left band (V4-V6 sharing one level), limb
// leads near the shoulders and lower abdomen. The station table is an
// artifact convention. `mirrored` flips handedness (stations reflect
// about the sternum line).
ElectrodeSet place_electrodes(const TorsoSpec& spec, const TorsoSurface& surface,
                              bool mirrored = false);

// Acquisition emulation: which planes are sliced, their fields of view,
// per-view dropout, and the contour-gap model.
struct SliceProtocol {
    int sax_count = 8;
    double sax_spacing = 1.0;
    double sax_tilt_x_deg = 35.0;
    double sax_tilt_z_deg = 25.0;
    double sax_fov_half = 14.0;

    int lax_count = 3;  // rotations about the long axis
    double lax_fov_half = 14.0;

    int loc_sagittal = 1;
    double loc_sagittal_spacing = 6.0;
    int loc_coronal = 1;
    double loc_coronal_spacing = 6.0;
    int loc_axial = 2;
    double loc_axial_spacing = 12.0;
    double loc_fov_half = 18.0;

    double drop_sax = 0.10;   // whole SAX stack
    double drop_lax = 0.15;   // each LAX plane
    double drop_loc = 0.20;   // each localizer plane

    double gap_prob_mid = 0.45;      // contours near mid-torso
    double gap_prob_extreme = 0.80;  // contours near shoulders/waist
    double gap_frac_min = 0.15;      // removed arc fraction bounds
    double gap_frac_max = 0.35;
    std::vector<double> gap_arc_fractions = {0.25, 0.75};  // window anchors

    double grid_step = 0.25;  // contour extraction resolution, cm

    void validate() const;
};

struct PlaneSpec {
    PlanePose pose;
    double u0 = 0, u1 = 0, v0 = 0, v1 = 0;  // in-plane field of view
    ViewLabel view = ViewLabel::LocAxial;
};

// Intersects one plane with the torso within its field of view. Every
// polyline vertex lies on the analytic surface (radial distance < 1e-6).
std::vector<Contour> slice_plane(const TorsoSurface& surface, const PlaneSpec& plane,
                                 double grid_step);

struct SliceResult {
    ContourSet contours;
    bool fallback_used = false;  // dropout removed everything; one axial localizer forced
};

SliceResult slice_contours(const TorsoSurface& surface, const SliceProtocol& protocol,
                           std::uint64_t seed);

// Heart centre used to anchor the cardiac planes (and the ECG phantom),
// as fixed fractions of the torso dimensions.
Vec3 heart_center(const TorsoSurface& surface);

}  // namespace elok

#endif
