#ifndef ELOK_MODEL_HPP
#define ELOK_MODEL_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "elok/geometry.hpp"

namespace elok {

// All model computation runs in normalized coordinates (unit max radius).
// Points are stored as 3xN column matrices internally.

struct ModelConfig {
    std::size_t n_in = 2048;  // resampled input size

    // encoder widths: per-point 3 -> enc_h1 -> enc_f1, then
    // [per-point, pooled] -> enc_h2 -> enc_f2 (= F_l width)
    std::size_t enc_h1 = 128;
    std::size_t enc_f1 = 256;
    std::size_t enc_h2 = 512;
    std::size_t enc_f2 = 1024;

    std::size_t n_kp = 64;           // first 10 keypoints are the electrodes
    std::size_t head_hidden = 512;   // keypoint offset MLP hidden width
    std::size_t direct_h1 = 512;     // direct-regression head (ablation)
    std::size_t direct_h2 = 256;

    std::size_t n_coarse = 1024;
    std::size_t coarse_hidden = 1024;

    std::size_t n_dense = 4096;
    std::size_t refine_hidden = 64;
    double grid_extent = 0.05;  // half-step of the 2x2 folding grid

    std::size_t skeleton_links = 3;    // nearest-keypoint links per keypoint
    std::size_t skeleton_density = 8;  // samples per skeleton element
    double skeleton_alpha = 0.5;       // blend toward nearest coarse point

    bool use_keypoint_head = true;   // false: direct 3-FC electrode head
    bool use_skeleton = true;        // false: dense seeds are coarse only
    bool use_reconstruction = true;  // false: no coarse/dense branch at all

    void validate() const;
};

// Named-tensor parameter container. Biases are single-column matrices.
// Iteration order (std::map) is the canonical tensor order everywhere:
// optimizer state, checkpoints, and gradient checks.
struct Params {
    ModelConfig config;
    std::map<std::string, Eigen::MatrixXd> tensors;

    static Params init(const ModelConfig& config, std::uint64_t seed);
    static Params zeros_like(const Params& other);

    Eigen::MatrixXd& at(const std::string& name);
    const Eigen::MatrixXd& at(const std::string& name) const;
    std::size_t total_size() const;
    void set_zero();
    bool all_finite() const;
};

struct SurfaceSkeleton {
    struct Sample {
        // convex combination over this element's keypoints
        std::vector<std::pair<std::size_t, double>> weights;
        std::size_t coarse_nn = 0;  // projection target in the coarse cloud
        Vec3 raw;                   // pure keypoint interpolation
        Vec3 position;              // (1-alpha)*raw + alpha*coarse[coarse_nn]
    };

    std::vector<std::pair<std::size_t, std::size_t>> segments;
    std::vector<std::array<std::size_t, 3>> triangles;
    std::vector<Sample> samples;
    std::size_t skipped_elements = 0;  // degenerate (coincident keypoints)

    PointCloud as_cloud() const;
};

struct ModelOutput {
    Eigen::MatrixXd f_local;   // enc_f2 x N
    Eigen::VectorXd f_global;  // enc_f2
    std::vector<std::size_t> anchors;  // feature-FPS picks in canonical slot order
    PointCloud keypoints;      // n_kp points (or 10 for the direct head)
    PointCloud electrodes;     // first 10 keypoints, canonical slot order
    PointCloud coarse;
    SurfaceSkeleton skeleton;
    PointCloud dense;
};

struct LossWeights {
    double beta = 5.0;             // dense-vs-coarse balance
    double lambda_keypoint = 0.05;
    double lambda_rec = 0.05;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double electrode = 0.0;
    double keypoint = 0.0;
    double coarse = 0.0;
    double dense = 0.0;
};

// Ground truth in the same normalized frame as the input cloud.
struct Targets {
    PointCloud electrodes;  // exactly 10, canonical order
    PointCloud topology;    // keypoint-loss target
    PointCloud coarse;
    PointCloud dense;
};

// --- Stage-level entry points (each is a thin view over the forward pass) ---

// (F_l, F_g); F_g is permutation-invariant, F_l permutes with the input.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> encode(const PointCloud& cloud, const Params& params);

// Farthest-first traversal in feature space. The start anchor and all tie
// breaks are canonical (feature vector, then position), never input order,
// so the selection is permutation-invariant.
std::vector<std::size_t> feature_fps(const Eigen::MatrixXd& f_local, const Eigen::VectorXd& f_global,
                                     const PointCloud& cloud, std::size_t k);

// Anchors chosen by feature_fps, put into a canonical slot order (template
// matching over the (azimuth, height) chart of the anchor set, so that
// comparable anatomy lands in comparable slots across subjects), plus
// offsets regressed from F_g.
PointCloud predict_keypoints(const Eigen::MatrixXd& f_local, const Eigen::VectorXd& f_global,
                             const PointCloud& cloud, const Params& params,
                             std::vector<std::size_t>* anchors_out = nullptr);

PointCloud decode_coarse(const Eigen::VectorXd& f_global, const Params& params);

SurfaceSkeleton build_skeleton(const PointCloud& keypoints, const PointCloud& coarse,
                               const ModelConfig& config);

PointCloud refine_dense(const SurfaceSkeleton& skeleton, const PointCloud& coarse,
                        const Params& params);

// Full forward pass per the configuration flags.
ModelOutput model_forward(const PointCloud& cloud, const Params& params);

// L = L_electrode + lambda_kp * L_keypoint + lambda_rec * (L_coarse + beta * L_dense)
// Training Chamfer terms use squared distances.
LossBreakdown loss_total(const ModelOutput& out, const Targets& gt, const LossWeights& w,
                         const ModelConfig& config);

// Reverse-mode gradients of loss_total for every parameter, accumulated
// into `grads` (callers zero or average over a batch). Selection steps
// (max-pool, Chamfer pairings, anchor choice, skeleton projections) use
// fixed argmin/argmax subgradients.
LossBreakdown model_backward(const PointCloud& cloud, const Params& params, const Targets& gt,
                             const LossWeights& w, Params& grads, ModelOutput* out = nullptr);

}  // namespace elok

#endif
