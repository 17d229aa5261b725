#include "elok/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "elok/common.hpp"
#include "elok/electrodes.hpp"
#include "elok/spatial_index.hpp"

namespace elok {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd to_matrix(const PointCloud& c) {
    MatrixXd m(3, static_cast<Eigen::Index>(c.size()));
    for (std::size_t i = 0; i < c.size(); ++i) {
        m(0, static_cast<Eigen::Index>(i)) = c[i].x;
        m(1, static_cast<Eigen::Index>(i)) = c[i].y;
        m(2, static_cast<Eigen::Index>(i)) = c[i].z;
    }
    return m;
}

PointCloud to_cloud(const MatrixXd& m) {
    PointCloud c;
    c.points.resize(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.cols(); ++i)
        c.points[static_cast<std::size_t>(i)] = {m(0, i), m(1, i), m(2, i)};
    return c;
}

MatrixXd affine(const MatrixXd& W, const MatrixXd& b, const MatrixXd& X) {
    return (W * X).colwise() + b.col(0);
}

MatrixXd relu(const MatrixXd& z) { return z.cwiseMax(0.0); }

// derivative mask; exactly-zero pre-activations get subgradient 0
MatrixXd relu_mask(const MatrixXd& z) {
    return (z.array() > 0.0).cast<double>().matrix();
}

void check_finite(const MatrixXd& m, const char* stage) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + stage);
}

// Electrode predictions are the leading keypoint slots. Production configs
// keep n_kp >= 10; toy gradient-check configs may run with fewer slots.
std::size_t electrode_slots(const ModelConfig& cfg) {
    return cfg.use_keypoint_head ? std::min<std::size_t>(kNumElectrodes, cfg.n_kp)
                                 : kNumElectrodes;
}

PointCloud slice_cloud(const PointCloud& c, std::size_t n) {
    PointCloud out;
    out.points.assign(c.points.begin(), c.points.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

// row-wise max over columns plus the winning column (lowest index on ties)
void maxpool(const MatrixXd& f, VectorXd& pooled, std::vector<Eigen::Index>& arg) {
    pooled.resize(f.rows());
    arg.assign(static_cast<std::size_t>(f.rows()), 0);
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
        Eigen::Index best = 0;
        double v = f(r, 0);
        for (Eigen::Index c = 1; c < f.cols(); ++c) {
            if (f(r, c) > v) {
                v = f(r, c);
                best = c;
            }
        }
        pooled[r] = v;
        arg[static_cast<std::size_t>(r)] = best;
    }
}

// grid-major folding offsets of the 2x2 grid
void grid_offset(std::size_t g, double extent, double& u, double& v) {
    u = (g < 2 ? -1.0 : 1.0) * extent;
    v = (g % 2 == 0 ? -1.0 : 1.0) * extent;
}

// Canonical slot order for the selected anchors: a golden-angle spiral over
// the (azimuth, height) chart of the anchor set, each template slot greedily
// capturing the closest remaining anchor in chart coordinates. Farthest-first
// traversal visits near-tied candidates in a shape-dependent order, so the
// raw selection sequence does not put comparable anatomy into comparable
// output slots; matching the unordered selection against a fixed template
// does, which is what lets one learned offset per slot act consistently
// across subjects. Ties break on coordinates, keeping the order a function
// of the point positions alone.
std::vector<std::size_t> order_anchors(std::vector<std::size_t> anchors, const PointCloud& cloud) {
    constexpr double kPi = 3.14159265358979323846;
    const std::size_t n = anchors.size();
    if (n < 2) return anchors;
    double zmin = cloud[anchors[0]].z, zmax = zmin, rbar = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        const Vec3& p = cloud[anchors[a]];
        zmin = std::min(zmin, p.z);
        zmax = std::max(zmax, p.z);
        rbar += std::hypot(p.x, p.y);
    }
    rbar /= static_cast<double>(n);
    const double span = zmax > zmin ? zmax - zmin : 1.0;
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    auto pos_less = [](const Vec3& a, const Vec3& b) {
        if (a.x != b.x) return a.x < b.x;
        if (a.y != b.y) return a.y < b.y;
        return a.z < b.z;
    };
    std::vector<char> used(n, 0);
    std::vector<std::size_t> out(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double tz = zmax - span * (static_cast<double>(j) + 0.5) / static_cast<double>(n);
        const double tth = golden * static_cast<double>(j);
        std::size_t best = n;
        double best_cost = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (used[a]) continue;
            const Vec3& p = cloud[anchors[a]];
            const double dth = std::remainder(std::atan2(p.y, p.x) - tth, 2.0 * kPi);
            const double cost = (p.z - tz) * (p.z - tz) + rbar * dth * rbar * dth;
            if (best == n || cost < best_cost ||
                (cost == best_cost && pos_less(p, cloud[anchors[best]]))) {
                best = a;
                best_cost = cost;
            }
        }
        out[j] = anchors[best];
        used[best] = 1;
    }
    return out;
}

struct Cache {
    MatrixXd X;                        // 3 x N
    MatrixXd Z1, A1, F1;               // stage 1
    VectorXd g1;
    std::vector<Eigen::Index> arg1;
    MatrixXd C, Z2, A2, FL;            // stage 2
    VectorXd fg;
    std::vector<Eigen::Index> arg2;
    // keypoint head
    VectorXd kp_z1, kp_h1, kp_off;
    // direct head
    VectorXd dir_z1, dir_h1, dir_z2, dir_h2, dir_out;
    // coarse decoder
    VectorXd co_z1, co_h1, co_z2, co_h2, co_out;
    // dense refinement
    MatrixXd seeds;                    // 3 x n_seeds
    MatrixXd r_in;                     // 5 x n_dense
    MatrixXd r_z1, r_h1, r_out;        // refinement MLP
    std::vector<std::size_t> seed_of;  // dense index -> seed column
    std::size_t n_skeleton = 0;        // leading seed columns from skeleton
};

void encoder_forward(const PointCloud& cloud, const Params& p, Cache& c) {
    const ModelConfig& cfg = p.config;
    if (cloud.size() != cfg.n_in)
        throw DataError("encode: expected " + std::to_string(cfg.n_in) + " points, got " +
                        std::to_string(cloud.size()));
    c.X = to_matrix(cloud);
    check_finite(c.X, "encoder input");
    c.Z1 = affine(p.at("enc.w1"), p.at("enc.b1"), c.X);
    c.A1 = relu(c.Z1);
    c.F1 = affine(p.at("enc.w2"), p.at("enc.b2"), c.A1);
    check_finite(c.F1, "encoder stage 1");
    maxpool(c.F1, c.g1, c.arg1);
    c.C.resize(c.F1.rows() * 2, c.F1.cols());
    c.C.topRows(c.F1.rows()) = c.F1;
    c.C.bottomRows(c.F1.rows()) = c.g1.replicate(1, c.F1.cols());
    c.Z2 = affine(p.at("enc.w3"), p.at("enc.b3"), c.C);
    c.A2 = relu(c.Z2);
    c.FL = affine(p.at("enc.w4"), p.at("enc.b4"), c.A2);
    check_finite(c.FL, "encoder stage 2");
    maxpool(c.FL, c.fg, c.arg2);
}

void keypoint_forward(const Params& p, Cache& c) {
    c.kp_z1 = p.at("kp.w1") * c.fg + p.at("kp.b1").col(0);
    c.kp_h1 = c.kp_z1.cwiseMax(0.0);
    c.kp_off = p.at("kp.w2") * c.kp_h1 + p.at("kp.b2").col(0);
    check_finite(c.kp_off, "keypoint head");
}

void direct_forward(const Params& p, Cache& c) {
    c.dir_z1 = p.at("dir.w1") * c.fg + p.at("dir.b1").col(0);
    c.dir_h1 = c.dir_z1.cwiseMax(0.0);
    c.dir_z2 = p.at("dir.w2") * c.dir_h1 + p.at("dir.b2").col(0);
    c.dir_h2 = c.dir_z2.cwiseMax(0.0);
    c.dir_out = p.at("dir.w3") * c.dir_h2 + p.at("dir.b3").col(0);
    check_finite(c.dir_out, "direct head");
}

void coarse_forward(const Params& p, Cache& c) {
    c.co_z1 = p.at("coarse.w1") * c.fg + p.at("coarse.b1").col(0);
    c.co_h1 = c.co_z1.cwiseMax(0.0);
    c.co_z2 = p.at("coarse.w2") * c.co_h1 + p.at("coarse.b2").col(0);
    c.co_h2 = c.co_z2.cwiseMax(0.0);
    c.co_out = p.at("coarse.w3") * c.co_h2 + p.at("coarse.b3").col(0);
    check_finite(c.co_out, "coarse decoder");
}

void refine_forward(const SurfaceSkeleton& skeleton, const MatrixXd& coarse, const Params& p,
                    Cache& c) {
    const ModelConfig& cfg = p.config;
    const std::size_t n_skel = skeleton.samples.size();
    const std::size_t n_seeds = n_skel + static_cast<std::size_t>(coarse.cols());
    if (n_seeds == 0) throw DataError("refine_dense: no seed points");
    if (4 * n_seeds < cfg.n_dense)
        throw DataError("refine_dense: folding grid cannot reach n_dense points");
    c.n_skeleton = n_skel;
    c.seeds.resize(3, static_cast<Eigen::Index>(n_seeds));
    for (std::size_t i = 0; i < n_skel; ++i) {
        const Vec3& s = skeleton.samples[i].position;
        c.seeds.col(static_cast<Eigen::Index>(i)) << s.x, s.y, s.z;
    }
    c.seeds.rightCols(coarse.cols()) = coarse;

    c.r_in.resize(5, static_cast<Eigen::Index>(cfg.n_dense));
    c.seed_of.resize(cfg.n_dense);
    for (std::size_t j = 0; j < cfg.n_dense; ++j) {
        std::size_t g = j / n_seeds;  // grid-major
        std::size_t s = j % n_seeds;
        double u, v;
        grid_offset(g, cfg.grid_extent, u, v);
        c.seed_of[j] = s;
        c.r_in.col(static_cast<Eigen::Index>(j)) << c.seeds(0, static_cast<Eigen::Index>(s)),
            c.seeds(1, static_cast<Eigen::Index>(s)), c.seeds(2, static_cast<Eigen::Index>(s)), u,
            v;
    }
    c.r_z1 = affine(p.at("refine.w1"), p.at("refine.b1"), c.r_in);
    c.r_h1 = relu(c.r_z1);
    c.r_out = affine(p.at("refine.w2"), p.at("refine.b2"), c.r_h1);
    check_finite(c.r_out, "refinement");
}

MatrixXd dense_from_cache(const Cache& c, const ModelConfig& cfg) {
    MatrixXd dense(3, static_cast<Eigen::Index>(cfg.n_dense));
    for (std::size_t j = 0; j < cfg.n_dense; ++j) {
        Eigen::Index jj = static_cast<Eigen::Index>(j);
        dense.col(jj) = c.seeds.col(static_cast<Eigen::Index>(c.seed_of[j])) + c.r_out.col(jj);
        dense(0, jj) += c.r_in(3, jj);
        dense(1, jj) += c.r_in(4, jj);
    }
    return dense;
}

ModelOutput forward_impl(const PointCloud& cloud, const Params& p, Cache& c) {
    const ModelConfig& cfg = p.config;
    cfg.validate();
    encoder_forward(cloud, p, c);

    ModelOutput out;
    out.f_local = c.FL;
    out.f_global = c.fg;

    if (cfg.use_keypoint_head) {
        out.anchors = order_anchors(feature_fps(c.FL, c.fg, cloud, cfg.n_kp), cloud);
        keypoint_forward(p, c);
        MatrixXd K(3, static_cast<Eigen::Index>(cfg.n_kp));
        for (std::size_t k = 0; k < cfg.n_kp; ++k) {
            Eigen::Index kk = static_cast<Eigen::Index>(k);
            K.col(kk) = c.X.col(static_cast<Eigen::Index>(out.anchors[k])) +
                        c.kp_off.segment(3 * kk, 3);
        }
        out.keypoints = to_cloud(K);
    } else {
        direct_forward(p, c);
        MatrixXd K = Eigen::Map<const MatrixXd>(c.dir_out.data(), 3, 10);
        out.keypoints = to_cloud(K);
    }
    out.electrodes = slice_cloud(out.keypoints, electrode_slots(cfg));

    if (cfg.use_reconstruction) {
        coarse_forward(p, c);
        MatrixXd C = Eigen::Map<const MatrixXd>(c.co_out.data(), 3,
                                                static_cast<Eigen::Index>(cfg.n_coarse));
        out.coarse = to_cloud(C);
        if (cfg.use_skeleton) out.skeleton = build_skeleton(out.keypoints, out.coarse, cfg);
        refine_forward(out.skeleton, C, p, c);
        out.dense = to_cloud(dense_from_cache(c, cfg));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw DataError(std::string("model config: ") + name + " must be positive");
    };
    positive(n_in, "n_in");
    positive(enc_h1, "enc_h1");
    positive(enc_f1, "enc_f1");
    positive(enc_h2, "enc_h2");
    positive(enc_f2, "enc_f2");
    positive(head_hidden, "head_hidden");
    positive(direct_h1, "direct_h1");
    positive(direct_h2, "direct_h2");
    positive(n_kp, "n_kp");
    if (use_skeleton && !use_keypoint_head)
        throw DataError("model config: skeleton requires the keypoint head");
    if (use_skeleton) {
        positive(skeleton_links, "skeleton_links");
        positive(skeleton_density, "skeleton_density");
        if (!(skeleton_alpha >= 0.0 && skeleton_alpha <= 1.0))
            throw DataError("model config: skeleton_alpha must be in [0,1]");
    }
    if (use_reconstruction) {
        positive(n_coarse, "n_coarse");
        positive(coarse_hidden, "coarse_hidden");
        positive(n_dense, "n_dense");
        positive(refine_hidden, "refine_hidden");
        if (!(grid_extent > 0.0)) throw DataError("model config: grid_extent must be positive");
        if (n_dense > 4 * n_coarse)
            throw DataError("model config: n_dense must not exceed 4*n_coarse");
    }
}

void LossWeights::validate() const {
    if (!(beta >= 0.0 && lambda_keypoint >= 0.0 && lambda_rec >= 0.0))
        throw DataError("loss weights must be non-negative");
}

// Output layers start near zero so that initial predictions sit at their
// structural references — keypoints at their anchors, direct and coarse
// outputs at the origin of the normalized frame, dense points on their
// folding seeds — instead of at random offsets of order one.
constexpr double kOutputInitScale = 0.01;

Params Params::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Params p;
    p.config = config;
    auto add = [&](const std::string& name, std::size_t rows, std::size_t cols, bool weight,
                   double scale = 1.0) {
        MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        if (weight) {
            RandomStream rng(mix_seed(seed, fnv1a64(name)));
            double sd = scale * std::sqrt(2.0 / static_cast<double>(cols));
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
        } else {
            m.setZero();
        }
        p.tensors.emplace(name, std::move(m));
    };
    const ModelConfig& c = config;
    add("enc.w1", c.enc_h1, 3, true);
    add("enc.b1", c.enc_h1, 1, false);
    add("enc.w2", c.enc_f1, c.enc_h1, true);
    add("enc.b2", c.enc_f1, 1, false);
    add("enc.w3", c.enc_h2, 2 * c.enc_f1, true);
    add("enc.b3", c.enc_h2, 1, false);
    add("enc.w4", c.enc_f2, c.enc_h2, true);
    add("enc.b4", c.enc_f2, 1, false);
    if (c.use_keypoint_head) {
        add("kp.w1", c.head_hidden, c.enc_f2, true);
        add("kp.b1", c.head_hidden, 1, false);
        add("kp.w2", 3 * c.n_kp, c.head_hidden, true, kOutputInitScale);
        add("kp.b2", 3 * c.n_kp, 1, false);
    } else {
        add("dir.w1", c.direct_h1, c.enc_f2, true);
        add("dir.b1", c.direct_h1, 1, false);
        add("dir.w2", c.direct_h2, c.direct_h1, true);
        add("dir.b2", c.direct_h2, 1, false);
        add("dir.w3", 30, c.direct_h2, true, kOutputInitScale);
        add("dir.b3", 30, 1, false);
    }
    if (c.use_reconstruction) {
        add("coarse.w1", c.coarse_hidden, c.enc_f2, true);
        add("coarse.b1", c.coarse_hidden, 1, false);
        add("coarse.w2", c.coarse_hidden, c.coarse_hidden, true);
        add("coarse.b2", c.coarse_hidden, 1, false);
        add("coarse.w3", 3 * c.n_coarse, c.coarse_hidden, true, kOutputInitScale);
        add("coarse.b3", 3 * c.n_coarse, 1, false);
        add("refine.w1", c.refine_hidden, 5, true);
        add("refine.b1", c.refine_hidden, 1, false);
        add("refine.w2", 3, c.refine_hidden, true, kOutputInitScale);
        add("refine.b2", 3, 1, false);
    }
    return p;
}

Params Params::zeros_like(const Params& other) {
    Params p;
    p.config = other.config;
    for (const auto& [name, m] : other.tensors)
        p.tensors.emplace(name, MatrixXd::Zero(m.rows(), m.cols()));
    return p;
}

Eigen::MatrixXd& Params::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("params: missing tensor '" + name + "'");
    return it->second;
}

const Eigen::MatrixXd& Params::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("params: missing tensor '" + name + "'");
    return it->second;
}

std::size_t Params::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, m] : tensors) n += static_cast<std::size_t>(m.size());
    return n;
}

void Params::set_zero() {
    for (auto& [name, m] : tensors) m.setZero();
}

bool Params::all_finite() const {
    for (const auto& [name, m] : tensors)
        if (!m.allFinite()) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Stage entry points
// ---------------------------------------------------------------------------

std::pair<MatrixXd, VectorXd> encode(const PointCloud& cloud, const Params& params) {
    Cache c;
    encoder_forward(cloud, params, c);
    return {c.FL, c.fg};
}

std::vector<std::size_t> feature_fps(const MatrixXd& f_local, const VectorXd& f_global,
                                     const PointCloud& cloud, std::size_t k) {
    const std::size_t n = static_cast<std::size_t>(f_local.cols());
    if (cloud.size() != n) throw DataError("feature_fps: cloud/feature size mismatch");
    if (k == 0) throw DataError("feature_fps: k must be positive");
    if (k > n) throw DataError("feature_fps: k exceeds input size");

    // canonical value-based tie break: feature vector, then position
    auto lex_less = [&](std::size_t i, std::size_t j) {
        for (Eigen::Index r = 0; r < f_local.rows(); ++r) {
            double a = f_local(r, static_cast<Eigen::Index>(i));
            double b = f_local(r, static_cast<Eigen::Index>(j));
            if (a != b) return a < b;
        }
        const Vec3& pi = cloud[i];
        const Vec3& pj = cloud[j];
        if (pi.x != pj.x) return pi.x < pj.x;
        if (pi.y != pj.y) return pi.y < pj.y;
        return pi.z < pj.z;
    };

    std::vector<char> picked(n, 0);
    std::vector<double> dist(n);
    std::vector<std::size_t> sel;
    sel.reserve(k);

    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
        double d = (f_local.col(static_cast<Eigen::Index>(i)) - f_global).squaredNorm();
        dist[i] = d;  // reused as the seed score
        if (best == n || d > dist[best] || (d == dist[best] && lex_less(i, best))) best = i;
    }
    sel.push_back(best);
    picked[best] = 1;
    for (std::size_t i = 0; i < n; ++i)
        dist[i] =
            (f_local.col(static_cast<Eigen::Index>(i)) - f_local.col(static_cast<Eigen::Index>(best)))
                .squaredNorm();

    while (sel.size() < k) {
        std::size_t next = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (picked[i]) continue;
            if (next == n || dist[i] > dist[next] || (dist[i] == dist[next] && lex_less(i, next)))
                next = i;
        }
        sel.push_back(next);
        picked[next] = 1;
        for (std::size_t i = 0; i < n; ++i) {
            double d = (f_local.col(static_cast<Eigen::Index>(i)) -
                        f_local.col(static_cast<Eigen::Index>(next)))
                           .squaredNorm();
            if (d < dist[i]) dist[i] = d;
        }
    }
    return sel;
}

PointCloud predict_keypoints(const MatrixXd& f_local, const VectorXd& f_global,
                             const PointCloud& cloud, const Params& params,
                             std::vector<std::size_t>* anchors_out) {
    const ModelConfig& cfg = params.config;
    if (!cfg.use_keypoint_head)
        throw UsageError("predict_keypoints: model configured with the direct head");
    std::vector<std::size_t> anchors =
        order_anchors(feature_fps(f_local, f_global, cloud, cfg.n_kp), cloud);
    Cache c;
    c.fg = f_global;
    keypoint_forward(params, c);
    PointCloud out;
    out.points.resize(cfg.n_kp);
    for (std::size_t k = 0; k < cfg.n_kp; ++k) {
        Eigen::Index kk = static_cast<Eigen::Index>(k);
        out.points[k] = cloud[anchors[k]] +
                        Vec3{c.kp_off[3 * kk], c.kp_off[3 * kk + 1], c.kp_off[3 * kk + 2]};
    }
    if (anchors_out) *anchors_out = std::move(anchors);
    return out;
}

PointCloud decode_coarse(const VectorXd& f_global, const Params& params) {
    if (!params.config.use_reconstruction)
        throw UsageError("decode_coarse: reconstruction branch disabled");
    Cache c;
    c.fg = f_global;
    coarse_forward(params, c);
    return to_cloud(Eigen::Map<const MatrixXd>(c.co_out.data(), 3,
                                               static_cast<Eigen::Index>(params.config.n_coarse)));
}

SurfaceSkeleton build_skeleton(const PointCloud& keypoints, const PointCloud& coarse,
                               const ModelConfig& config) {
    if (keypoints.size() < 4) throw DataError("build_skeleton: need at least 4 keypoints");
    if (coarse.empty()) throw DataError("build_skeleton: empty coarse cloud");
    const std::size_t n = keypoints.size();
    const std::size_t links = std::min(config.skeleton_links, n - 1);

    // nearest-keypoint links (ties to the lowest index), then mutual cliques
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> order;
        order.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order.push_back({dist2(keypoints[i], keypoints[j]), j});
        std::sort(order.begin(), order.end());
        for (std::size_t k = 0; k < links; ++k)
            edges.insert({std::min(i, order[k].second), std::max(i, order[k].second)});
    }

    SurfaceSkeleton skel;
    skel.segments.assign(edges.begin(), edges.end());
    for (auto [i, j] : edges) {
        for (std::size_t m = j + 1; m < n; ++m)
            if (edges.count({i, m}) && edges.count({j, m})) skel.triangles.push_back({i, j, m});
    }

    SpatialIndex index(coarse);
    const double alpha = config.skeleton_alpha;
    const std::size_t density = config.skeleton_density;
    auto add_sample = [&](std::vector<std::pair<std::size_t, double>> weights) {
        Vec3 raw{0, 0, 0};
        for (const auto& [idx, w] : weights) raw += keypoints[idx] * w;
        SurfaceSkeleton::Sample s;
        s.weights = std::move(weights);
        s.raw = raw;
        s.coarse_nn = index.nearest(raw).index;
        s.position = raw * (1.0 - alpha) + coarse[s.coarse_nn] * alpha;
        skel.samples.push_back(std::move(s));
    };

    constexpr double kDegenerate2 = 1e-24;  // squared coincidence threshold
    for (auto [i, j] : skel.segments) {
        if (dist2(keypoints[i], keypoints[j]) < kDegenerate2) {
            ++skel.skipped_elements;
            continue;
        }
        for (std::size_t s = 0; s < density; ++s) {
            double t = static_cast<double>(s + 1) / static_cast<double>(density + 1);
            add_sample({{i, 1.0 - t}, {j, t}});
        }
    }
    // deterministic low-discrepancy barycentric pattern (R2 sequence)
    constexpr double kA1 = 0.7548776662466927;  // 1/plastic
    constexpr double kA2 = 0.5698402909980532;  // 1/plastic^2
    for (const auto& tri : skel.triangles) {
        double d01 = dist2(keypoints[tri[0]], keypoints[tri[1]]);
        double d02 = dist2(keypoints[tri[0]], keypoints[tri[2]]);
        double d12 = dist2(keypoints[tri[1]], keypoints[tri[2]]);
        if (d01 < kDegenerate2 || d02 < kDegenerate2 || d12 < kDegenerate2) {
            ++skel.skipped_elements;
            continue;
        }
        for (std::size_t s = 0; s < density; ++s) {
            double u = std::fmod(0.5 + kA1 * static_cast<double>(s + 1), 1.0);
            double v = std::fmod(0.5 + kA2 * static_cast<double>(s + 1), 1.0);
            if (u + v > 1.0) {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            add_sample({{tri[0], 1.0 - u - v}, {tri[1], u}, {tri[2], v}});
        }
    }
    return skel;
}

PointCloud SurfaceSkeleton::as_cloud() const {
    PointCloud c;
    c.points.reserve(samples.size());
    for (const Sample& s : samples) c.points.push_back(s.position);
    return c;
}

PointCloud refine_dense(const SurfaceSkeleton& skeleton, const PointCloud& coarse,
                        const Params& params) {
    if (!params.config.use_reconstruction)
        throw UsageError("refine_dense: reconstruction branch disabled");
    Cache c;
    refine_forward(skeleton, to_matrix(coarse), params, c);
    return to_cloud(dense_from_cache(c, params.config));
}

ModelOutput model_forward(const PointCloud& cloud, const Params& params) {
    Cache c;
    return forward_impl(cloud, params, c);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

LossBreakdown loss_total(const ModelOutput& out, const Targets& gt, const LossWeights& w,
                         const ModelConfig& config) {
    w.validate();
    if (gt.electrodes.size() < out.electrodes.size())
        throw UsageError("loss_total: not enough ground-truth electrodes");
    if (w.lambda_keypoint > 0.0 && !config.use_keypoint_head)
        throw UsageError("loss_total: keypoint loss requires the keypoint head");
    if (w.lambda_keypoint > 0.0 && config.use_keypoint_head && gt.topology.empty())
        throw UsageError("loss_total: missing topology target");
    if (w.lambda_rec > 0.0 && !config.use_reconstruction)
        throw UsageError("loss_total: reconstruction loss requires the reconstruction branch");
    if (w.lambda_rec > 0.0 && (gt.coarse.empty() || gt.dense.empty()))
        throw UsageError("loss_total: missing coarse/dense ground truth");

    LossBreakdown b;
    b.electrode = mae_points(out.electrodes, slice_cloud(gt.electrodes, out.electrodes.size()));
    if (config.use_keypoint_head && w.lambda_keypoint > 0.0)
        b.keypoint = chamfer_squared(out.keypoints, gt.topology);
    if (config.use_reconstruction && w.lambda_rec > 0.0) {
        b.coarse = chamfer_squared(out.coarse, gt.coarse);
        b.dense = chamfer_squared(out.dense, gt.dense);
    }
    b.total = b.electrode + w.lambda_keypoint * b.keypoint + w.lambda_rec * (b.coarse + w.beta * b.dense);
    if (!std::isfinite(b.total)) throw NumericError("loss_total: non-finite loss");
    return b;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

// d/dA of squared-Chamfer(A, B) with frozen pairings, scaled by weight
void chamfer_sq_backward(const PointCloud& a, const PointCloud& b, const ChamferPairs& pairs,
                         double weight, MatrixXd& grad_a) {
    const double wa = weight * 2.0 / static_cast<double>(a.size());
    const double wb = weight * 2.0 / static_cast<double>(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        Vec3 d = a[i] - b[pairs.nn_ab[i]];
        grad_a(0, static_cast<Eigen::Index>(i)) += wa * d.x;
        grad_a(1, static_cast<Eigen::Index>(i)) += wa * d.y;
        grad_a(2, static_cast<Eigen::Index>(i)) += wa * d.z;
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
        std::size_t i = pairs.nn_ba[j];
        Vec3 d = a[i] - b[j];
        grad_a(0, static_cast<Eigen::Index>(i)) += wb * d.x;
        grad_a(1, static_cast<Eigen::Index>(i)) += wb * d.y;
        grad_a(2, static_cast<Eigen::Index>(i)) += wb * d.z;
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

LossBreakdown model_backward(const PointCloud& cloud, const Params& params, const Targets& gt,
                             const LossWeights& w, Params& grads, ModelOutput* out_opt) {
    const ModelConfig& cfg = params.config;
    Cache c;
    ModelOutput out = forward_impl(cloud, params, c);

    // ---- loss (with pairings frozen for the backward pass) ----
    w.validate();
    const std::size_t n_el = out.electrodes.size();
    if (gt.electrodes.size() < n_el)
        throw UsageError("model_backward: not enough ground-truth electrodes");
    LossBreakdown b;
    b.electrode = mae_points(out.electrodes, slice_cloud(gt.electrodes, n_el));
    ChamferPairs kp_pairs, co_pairs, de_pairs;
    const bool with_kp_loss = cfg.use_keypoint_head && w.lambda_keypoint > 0.0;
    const bool with_rec_loss = cfg.use_reconstruction && w.lambda_rec > 0.0;
    if (w.lambda_keypoint > 0.0 && !cfg.use_keypoint_head)
        throw UsageError("model_backward: keypoint loss requires the keypoint head");
    if (w.lambda_rec > 0.0 && !cfg.use_reconstruction)
        throw UsageError("model_backward: reconstruction loss requires the reconstruction branch");
    if (with_kp_loss) {
        if (gt.topology.empty()) throw UsageError("model_backward: missing topology target");
        kp_pairs = chamfer_pairs(out.keypoints, gt.topology, true);
        b.keypoint = kp_pairs.value;
    }
    if (with_rec_loss) {
        if (gt.coarse.empty() || gt.dense.empty())
            throw UsageError("model_backward: missing coarse/dense ground truth");
        co_pairs = chamfer_pairs(out.coarse, gt.coarse, true);
        de_pairs = chamfer_pairs(out.dense, gt.dense, true);
        b.coarse = co_pairs.value;
        b.dense = de_pairs.value;
    }
    b.total =
        b.electrode + w.lambda_keypoint * b.keypoint + w.lambda_rec * (b.coarse + w.beta * b.dense);
    if (!std::isfinite(b.total)) throw NumericError("model_backward: non-finite loss");

    // ---- gradient w.r.t. keypoints ----
    const std::size_t n_kp_out = out.keypoints.size();
    MatrixXd gK = MatrixXd::Zero(3, static_cast<Eigen::Index>(n_kp_out));
    const double mae_w = 1.0 / (3.0 * static_cast<double>(n_el));
    for (std::size_t i = 0; i < n_el; ++i) {
        Vec3 d = out.electrodes[i] - gt.electrodes[i];
        gK(0, static_cast<Eigen::Index>(i)) += mae_w * sign(d.x);
        gK(1, static_cast<Eigen::Index>(i)) += mae_w * sign(d.y);
        gK(2, static_cast<Eigen::Index>(i)) += mae_w * sign(d.z);
    }
    if (with_kp_loss) chamfer_sq_backward(out.keypoints, gt.topology, kp_pairs, w.lambda_keypoint, gK);

    // ---- reconstruction branch backward ----
    MatrixXd gCoarse;
    VectorXd gfg = VectorXd::Zero(c.fg.size());
    if (cfg.use_reconstruction) {
        gCoarse = MatrixXd::Zero(3, static_cast<Eigen::Index>(cfg.n_coarse));
        MatrixXd gDense = MatrixXd::Zero(3, static_cast<Eigen::Index>(cfg.n_dense));
        if (with_rec_loss) {
            chamfer_sq_backward(out.dense, gt.dense, de_pairs, w.lambda_rec * w.beta, gDense);
            chamfer_sq_backward(out.coarse, gt.coarse, co_pairs, w.lambda_rec, gCoarse);
        }

        // dense = seed + grid + MLP([seed,u,v]) : identity and MLP paths
        MatrixXd gSeeds = MatrixXd::Zero(3, c.seeds.cols());
        for (std::size_t j = 0; j < cfg.n_dense; ++j)
            gSeeds.col(static_cast<Eigen::Index>(c.seed_of[j])) +=
                gDense.col(static_cast<Eigen::Index>(j));

        MatrixXd gR1 = (params.at("refine.w2").transpose() * gDense).cwiseProduct(relu_mask(c.r_z1));
        grads.at("refine.w2") += gDense * c.r_h1.transpose();
        grads.at("refine.b2").col(0) += gDense.rowwise().sum();
        grads.at("refine.w1") += gR1 * c.r_in.transpose();
        grads.at("refine.b1").col(0) += gR1.rowwise().sum();
        MatrixXd gRin = params.at("refine.w1").transpose() * gR1;  // 5 x n_dense
        for (std::size_t j = 0; j < cfg.n_dense; ++j)
            gSeeds.col(static_cast<Eigen::Index>(c.seed_of[j])) +=
                gRin.block(0, static_cast<Eigen::Index>(j), 3, 1);

        // split seeds into skeleton samples and coarse columns
        const std::size_t n_skel = c.n_skeleton;
        for (std::size_t t = 0; t < n_skel; ++t) {
            const SurfaceSkeleton::Sample& s = out.skeleton.samples[t];
            Eigen::Vector3d g = gSeeds.col(static_cast<Eigen::Index>(t));
            for (const auto& [ki, wt] : s.weights) {
                gK.col(static_cast<Eigen::Index>(ki)) += (1.0 - cfg.skeleton_alpha) * wt * g;
            }
            gCoarse.col(static_cast<Eigen::Index>(s.coarse_nn)) += cfg.skeleton_alpha * g;
        }
        gCoarse += gSeeds.rightCols(static_cast<Eigen::Index>(cfg.n_coarse));

        // coarse decoder backward
        VectorXd gco = Eigen::Map<const VectorXd>(gCoarse.data(), gCoarse.size());
        grads.at("coarse.w3") += gco * c.co_h2.transpose();
        grads.at("coarse.b3").col(0) += gco;
        VectorXd gC2 = (params.at("coarse.w3").transpose() * gco)
                           .cwiseProduct(relu_mask(c.co_z2).col(0));
        grads.at("coarse.w2") += gC2 * c.co_h1.transpose();
        grads.at("coarse.b2").col(0) += gC2;
        VectorXd gC1 = (params.at("coarse.w2").transpose() * gC2)
                           .cwiseProduct(relu_mask(c.co_z1).col(0));
        grads.at("coarse.w1") += gC1 * c.fg.transpose();
        grads.at("coarse.b1").col(0) += gC1;
        gfg += params.at("coarse.w1").transpose() * gC1;
    }

    // ---- head backward ----
    if (cfg.use_keypoint_head) {
        // anchors are frozen; gradient reaches the offsets only
        VectorXd goff = Eigen::Map<const VectorXd>(gK.data(), gK.size());
        grads.at("kp.w2") += goff * c.kp_h1.transpose();
        grads.at("kp.b2").col(0) += goff;
        VectorXd gH = (params.at("kp.w2").transpose() * goff)
                          .cwiseProduct(relu_mask(c.kp_z1).col(0));
        grads.at("kp.w1") += gH * c.fg.transpose();
        grads.at("kp.b1").col(0) += gH;
        gfg += params.at("kp.w1").transpose() * gH;
    } else {
        VectorXd gout = Eigen::Map<const VectorXd>(gK.data(), gK.size());
        grads.at("dir.w3") += gout * c.dir_h2.transpose();
        grads.at("dir.b3").col(0) += gout;
        VectorXd gH2 = (params.at("dir.w3").transpose() * gout)
                           .cwiseProduct(relu_mask(c.dir_z2).col(0));
        grads.at("dir.w2") += gH2 * c.dir_h1.transpose();
        grads.at("dir.b2").col(0) += gH2;
        VectorXd gH1 = (params.at("dir.w2").transpose() * gH2)
                           .cwiseProduct(relu_mask(c.dir_z1).col(0));
        grads.at("dir.w1") += gH1 * c.fg.transpose();
        grads.at("dir.b1").col(0) += gH1;
        gfg += params.at("dir.w1").transpose() * gH1;
    }

    // ---- encoder backward ----
    MatrixXd gFL = MatrixXd::Zero(c.FL.rows(), c.FL.cols());
    for (Eigen::Index r = 0; r < c.FL.rows(); ++r)
        gFL(r, c.arg2[static_cast<std::size_t>(r)]) += gfg[r];

    grads.at("enc.w4") += gFL * c.A2.transpose();
    grads.at("enc.b4").col(0) += gFL.rowwise().sum();
    MatrixXd gA2 = (params.at("enc.w4").transpose() * gFL).cwiseProduct(relu_mask(c.Z2));
    grads.at("enc.w3") += gA2 * c.C.transpose();
    grads.at("enc.b3").col(0) += gA2.rowwise().sum();
    MatrixXd gC = params.at("enc.w3").transpose() * gA2;

    const Eigen::Index f1 = c.F1.rows();
    MatrixXd gF1 = gC.topRows(f1);
    VectorXd gg1 = gC.bottomRows(f1).rowwise().sum();
    for (Eigen::Index r = 0; r < f1; ++r) gF1(r, c.arg1[static_cast<std::size_t>(r)]) += gg1[r];

    grads.at("enc.w2") += gF1 * c.A1.transpose();
    grads.at("enc.b2").col(0) += gF1.rowwise().sum();
    MatrixXd gA1 = (params.at("enc.w2").transpose() * gF1).cwiseProduct(relu_mask(c.Z1));
    grads.at("enc.w1") += gA1 * c.X.transpose();
    grads.at("enc.b1").col(0) += gA1.rowwise().sum();

    if (!grads.all_finite()) throw NumericError("model_backward: non-finite gradients");
    if (out_opt) *out_opt = std::move(out);
    return b;
}

}  // namespace elok
