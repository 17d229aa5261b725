#pragma once
// In-silico evaluation: Eikonal activation on a biventricular voxel phantom,
// pseudo-ECG potentials at electrode positions, standard 12-lead derivation,
// and waveform comparison (DTW, Pearson, QRS features).

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "elok/common.hpp"
#include "elok/electrodes.hpp"
#include "elok/geometry.hpp"

namespace elok {

// Axis-aligned ellipsoid shell: the volume inside `outer` but outside the
// nested `inner` cavity, both centered at `center`. Semi-axes are in cm; an
// all-zero `inner` means a solid ellipsoid.
struct EllipsoidShell {
    Vec3 center{};
    Vec3 outer{};
    Vec3 inner{};
};

// Textual phantom description: voxel grid geometry, two ventricle shells
// truncated at a basal plane, conduction velocity, and root voxels.
struct PhantomSpec {
    std::size_t nx = 25, ny = 25, nz = 25;
    double spacing = 0.2;        // cm, isotropic voxel edge
    Vec3 origin{};               // world position of the center of voxel (0,0,0)
    EllipsoidShell lv, rv;
    double base_z = 0.0;         // keep voxels with z <= base_z (basal truncation)
    double velocity = 0.07;      // cm/ms, uniform conduction velocity
    int fiber_axis = -1;         // -1 isotropic, else 0/1/2 = x/y/z
    double fiber_speedup = 1.0;  // velocity multiplier along fiber_axis
    std::vector<std::array<std::size_t, 3>> roots;  // voxel coords; empty -> defaults

    void validate() const;
};

// Two overlapping ventricle shells centered on `center`, sized so a full
// simulation runs in seconds at the default 0.2 cm spacing.
PhantomSpec default_phantom_spec(const Vec3& center = Vec3{});

std::string phantom_spec_to_text(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_text(const std::string& text);

struct HeartPhantom {
    std::size_t nx = 0, ny = 0, nz = 0;
    double spacing = 0.0;
    Vec3 origin{};
    std::vector<std::uint8_t> mask;  // 1 = myocardium
    std::vector<double> velocity;    // cm/ms per voxel
    int fiber_axis = -1;
    double fiber_speedup = 1.0;
    std::vector<std::size_t> roots;  // linear voxel indices

    std::size_t size() const { return nx * ny * nz; }
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return (k * ny + j) * nx + i;
    }
    Vec3 voxel_center(std::size_t i, std::size_t j, std::size_t k) const;
    // mask nonempty and 6-connected, roots inside the mask, velocities > 0
    void validate() const;
};

// Voxelizes the spec, keeps the largest 6-connected myocardium component, and
// snaps three default root sites (septal, LV free wall, apex) onto the mask
// when the spec lists no roots.
HeartPhantom build_phantom(const PhantomSpec& spec);

struct ActivationMap {
    std::vector<double> tau;               // ms; +inf outside the myocardium or unreachable
    std::vector<std::size_t> unreachable;  // mask voxels never reached from the roots
};

// First-arrival times from the root voxels. Fast marching with the axis
// upwind quadratic plus direct 26-neighbor edge candidates, so tau never
// exceeds the 26-neighbor graph distance while still converging to the
// continuous solution under grid refinement.
ActivationMap solve_eikonal(const HeartPhantom& phantom);

double max_finite_tau(const ActivationMap& activation);

// Per-voxel transmembrane voltage at time t: cubic smoothstep rising 0 -> 1
// over [tau, tau + upstroke_ms]; 0 outside the myocardium.
std::vector<double> transmembrane(const HeartPhantom& phantom, const ActivationMap& activation,
                                  double t_ms, double upstroke_ms);

// Single-time pseudo-ECG sum for an explicit transmembrane field:
//   phi = sum_x grad Vm(x) . grad(1 / |x - e|) dV
// with grad Vm by index-clamped central differences and the lead field taken
// analytically. Linear in Vm. The electrode must lie outside the myocardium.
double pseudo_potential(const HeartPhantom& phantom, const std::vector<double>& vm,
                        const Vec3& electrode);

// Potential time series at one electrode for the smoothstep activation
// sequence induced by `activation`.
std::vector<double> pseudo_ecg(const HeartPhantom& phantom, const ActivationMap& activation,
                               const Vec3& electrode, const std::vector<double>& times_ms,
                               double upstroke_ms);

inline constexpr std::array<const char*, 8> kLeadNames = {"I", "II", "V1", "V2",
                                                          "V3", "V4", "V5", "V6"};

// Channel order for raw electrode potentials; RL is the reference electrode
// and carries no channel of its own.
inline constexpr std::array<const char*, 9> kPotentialChannels = {"LA", "RA", "LL", "V1", "V2",
                                                                  "V3", "V4", "V5", "V6"};

struct EcgTrace {
    double dt_ms = 1.0;
    std::array<std::vector<double>, 8> leads;  // kLeadNames order

    std::size_t samples() const { return leads[0].size(); }
    void validate() const;  // equal lengths, finite samples, dt > 0

    // On-demand linear combinations of the stored independent leads.
    std::vector<double> lead_iii() const;  // II - I
    std::vector<double> lead_avr() const;  // -(I + II) / 2
    std::vector<double> lead_avl() const;  // I - II / 2
    std::vector<double> lead_avf() const;  // II - I / 2
};

// I = LA - RA, II = LL - RA, Vi = phi_Vi - (LA + RA + LL) / 3.
EcgTrace derive_leads(const std::array<std::vector<double>, 9>& phi, double dt_ms);

struct SimulationOptions {
    double upstroke_ms = 10.0;
    double dt_ms = 1.0;
    double t_end_ms = -1.0;  // < 0: max finite tau + upstroke + 2 ms
    std::size_t threads = 1;
};

// Full subject-level forward model: Eikonal solve, pseudo-ECG at the nine
// signal electrodes, lead derivation. Deterministic for any thread count.
EcgTrace simulate_ecg(const HeartPhantom& phantom, const ElectrodeSet& electrodes,
                      const SimulationOptions& options);

std::string ecg_to_csv(const EcgTrace& trace);
EcgTrace ecg_from_csv(const std::string& text);

struct DtwResult {
    double distance = 0.0;     // optimal alignment cost / warping-path length
    std::size_t path_length = 0;
    bool degenerate = false;   // a zero-variance series skipped z-normalization
};

// Classic dynamic-time-warping alignment of z-normalized series with
// absolute-difference local cost; ties between equal-cost alignments resolve
// to the shortest warping path, which keeps dtw(a, b) == dtw(b, a).
DtwResult dtw(const std::vector<double>& a, const std::vector<double>& b);

struct LeadComparison {
    std::string lead;
    double dtw = 0.0;
    bool dtw_degenerate = false;
    double pearson = 1.0;  // NaN when either side has zero variance
    double rs_pred = 0.0;  // R/S amplitude ratio; NaN when the lead has no S wave
    double rs_gt = 0.0;
};

struct EcgComparison {
    std::vector<LeadComparison> leads;  // kLeadNames order
    double mean_dtw = 0.0;
    double mean_pearson = 0.0;  // over leads with finite Pearson
    double qrs_pred_ms = 0.0;
    double qrs_gt_ms = 0.0;
    double qrs_diff_ms = 0.0;   // |pred - gt|
    double rs_diff = 0.0;       // mean |rs_pred - rs_gt| over leads where both are finite
};

// QRS duration: first-to-last time any lead's |d/dt| exceeds `deriv_frac` of
// that lead's own maximum |d/dt|.
double qrs_duration_ms(const EcgTrace& trace, double deriv_frac = 0.05);

// R = maximum positive deflection, S = maximum negative deflection magnitude.
double rs_ratio(const std::vector<double>& lead);

EcgComparison compare_ecgs(const EcgTrace& pred, const EcgTrace& gt, double deriv_frac = 0.05);

}  // namespace elok
