#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "elok/model.hpp"

using namespace elok;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

PointCloud random_cloud(RandomStream& rng, std::size_t n, double extent = 1.0) {
    PointCloud c;
    c.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        c.points.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                            rng.uniform(-extent, extent)});
    return c;
}

// small-but-complete configuration used by most tests
ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_in = 16;
    cfg.enc_h1 = 6;
    cfg.enc_f1 = 8;
    cfg.enc_h2 = 10;
    cfg.enc_f2 = 12;
    cfg.n_kp = 4;
    cfg.head_hidden = 8;
    cfg.direct_h1 = 8;
    cfg.direct_h2 = 6;
    cfg.n_coarse = 8;
    cfg.coarse_hidden = 8;
    cfg.n_dense = 16;
    cfg.refine_hidden = 5;
    cfg.skeleton_density = 3;
    return cfg;
}

Targets random_targets(RandomStream& rng, std::size_t topo = 12, std::size_t coarse = 10,
                       std::size_t dense = 14) {
    Targets gt;
    gt.electrodes = random_cloud(rng, 10);
    gt.topology = random_cloud(rng, topo);
    gt.coarse = random_cloud(rng, coarse);
    gt.dense = random_cloud(rng, dense);
    return gt;
}

// independent squared Chamfer oracle
double chamfer_sq_oracle(const PointCloud& a, const PointCloud& b) {
    double sab = 0.0, sba = 0.0;
    for (const Vec3& p : a.points) {
        double best = 1e300;
        for (const Vec3& q : b.points) best = std::min(best, (p - q).norm2());
        sab += best;
    }
    for (const Vec3& q : b.points) {
        double best = 1e300;
        for (const Vec3& p : a.points) best = std::min(best, (p - q).norm2());
        sba += best;
    }
    return sab / static_cast<double>(a.size()) + sba / static_cast<double>(b.size());
}

// brute-force feature-FPS with the same canonical tie rules
std::vector<std::size_t> feature_fps_oracle(const MatrixXd& fl, const VectorXd& fg,
                                            const PointCloud& cloud, std::size_t k) {
    const std::size_t n = static_cast<std::size_t>(fl.cols());
    auto lex_less = [&](std::size_t i, std::size_t j) {
        for (Eigen::Index r = 0; r < fl.rows(); ++r)
            if (fl(r, static_cast<Eigen::Index>(i)) != fl(r, static_cast<Eigen::Index>(j)))
                return fl(r, static_cast<Eigen::Index>(i)) < fl(r, static_cast<Eigen::Index>(j));
        if (cloud[i].x != cloud[j].x) return cloud[i].x < cloud[j].x;
        if (cloud[i].y != cloud[j].y) return cloud[i].y < cloud[j].y;
        return cloud[i].z < cloud[j].z;
    };
    std::vector<std::size_t> sel;
    std::vector<char> used(n, 0);
    while (sel.size() < k) {
        std::size_t best = n;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            double d;
            if (sel.empty()) {
                d = (fl.col(static_cast<Eigen::Index>(i)) - fg).squaredNorm();
            } else {
                d = 1e300;
                for (std::size_t s : sel)
                    d = std::min(d, (fl.col(static_cast<Eigen::Index>(i)) -
                                     fl.col(static_cast<Eigen::Index>(s)))
                                        .squaredNorm());
            }
            if (best == n || d > best_d || (d == best_d && lex_less(i, best))) {
                best = i;
                best_d = d;
            }
        }
        sel.push_back(best);
        used[best] = 1;
    }
    return sel;
}

bool bitwise_equal(const PointCloud& a, const PointCloud& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].x != b[i].x || a[i].y != b[i].y || a[i].z != b[i].z) return false;
    return true;
}

}  // namespace

TEST_CASE("encoder: permutation invariance of F_g, equivariance of F_l (bitwise)") {
    ModelConfig cfg = tiny_config();
    Params params = Params::init(cfg, 7);
    RandomStream rng(11);
    PointCloud cloud = random_cloud(rng, cfg.n_in);
    // include duplicated points so max-pool ties are exercised
    cloud.points[5] = cloud.points[2];
    auto [fl, fg] = encode(cloud, params);

    std::vector<std::size_t> perm(cfg.n_in);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(perm);
        PointCloud shuffled;
        shuffled.points.resize(cfg.n_in);
        for (std::size_t i = 0; i < cfg.n_in; ++i) shuffled.points[i] = cloud[perm[i]];
        auto [fl2, fg2] = encode(shuffled, params);
        for (Eigen::Index r = 0; r < fg.size(); ++r) CHECK(fg2[r] == fg[r]);
        for (std::size_t i = 0; i < cfg.n_in; ++i)
            for (Eigen::Index r = 0; r < fl.rows(); ++r)
                CHECK(fl2(r, static_cast<Eigen::Index>(i)) ==
                      fl(r, static_cast<Eigen::Index>(perm[i])));
    }
}

TEST_CASE("encoder: all-zero parameters give an input-independent bias image") {
    ModelConfig cfg = tiny_config();
    Params params = Params::init(cfg, 7);
    for (auto& [name, m] : params.tensors)
        if (name.rfind("enc.", 0) == 0) m.setZero();
    params.at("enc.b4").col(0).setConstant(0.75);
    RandomStream rng(3);
    auto [fl1, fg1] = encode(random_cloud(rng, cfg.n_in), params);
    auto [fl2, fg2] = encode(random_cloud(rng, cfg.n_in), params);
    for (Eigen::Index r = 0; r < fg1.size(); ++r) {
        CHECK(fg1[r] == 0.75);
        CHECK(fg2[r] == fg1[r]);
    }
}

TEST_CASE("encoder: two points, single hidden unit, hand-computed pooled value") {
    ModelConfig cfg;
    cfg.n_in = 2;
    cfg.enc_h1 = 1;
    cfg.enc_f1 = 1;
    cfg.enc_h2 = 1;
    cfg.enc_f2 = 1;
    cfg.use_keypoint_head = true;
    cfg.n_kp = 1;
    cfg.head_hidden = 1;
    cfg.use_skeleton = false;
    cfg.use_reconstruction = false;
    Params params = Params::init(cfg, 1);
    params.at("enc.w1") << 1.0, 2.0, 3.0;
    params.at("enc.b1") << 0.5;
    params.at("enc.w2") << 2.0;
    params.at("enc.b2") << -0.25;
    params.at("enc.w3") << 1.0, -1.0;
    params.at("enc.b3") << 0.1;
    params.at("enc.w4") << 3.0;
    params.at("enc.b4") << -0.2;

    PointCloud cloud;
    cloud.points = {{0.1, 0.2, 0.3}, {-0.4, 0.1, 0.5}};
    auto [fl, fg] = encode(cloud, params);
    // point 1: relu(0.1+0.4+0.9+0.5)=1.9 -> 2*1.9-0.25=3.55; point 2: 1.8 -> 3.35
    // pooled g1 = 3.55; stage 2: relu(f-g+0.1) -> 0.1 / 0, FL = 3*a-0.2
    CHECK(fl(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(fl(0, 1) == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(fg[0] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("encoder rejects the wrong point count") {
    ModelConfig cfg = tiny_config();
    Params params = Params::init(cfg, 7);
    RandomStream rng(2);
    PointCloud c = random_cloud(rng, cfg.n_in + 1);
    CHECK_THROWS_AS(encode(c, params), DataError);
}

TEST_CASE("feature-FPS follows the hand-worked 1-D traversal") {
    MatrixXd fl(1, 5);
    fl << 0.3, 0.9, 0.1, 0.55, 0.0;
    VectorXd fg(1);
    fg << 0.9;
    PointCloud cloud;
    for (int i = 0; i < 5; ++i) cloud.points.push_back({double(i), 0, 0});
    std::vector<std::size_t> sel = feature_fps(fl, fg, cloud, 5);
    // seed: farthest from fg=0.9 is 0.0 (idx 4); then 0.9, 0.55, 0.3, 0.1
    CHECK(sel == std::vector<std::size_t>{4, 1, 3, 0, 2});
    CHECK_THROWS_AS(feature_fps(fl, fg, cloud, 6), DataError);
}

TEST_CASE("feature-FPS matches the brute-force oracle on random instances") {
    RandomStream rng(41);
    for (int trial = 0; trial < 25; ++trial) {
        std::size_t n = 5 + rng.index(20);
        std::size_t width = 1 + rng.index(4);
        std::size_t k = 1 + rng.index(n);
        MatrixXd fl(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < fl.size(); ++i) fl.data()[i] = rng.uniform(-1, 1);
        VectorXd fg(static_cast<Eigen::Index>(width));
        for (Eigen::Index i = 0; i < fg.size(); ++i) fg[i] = rng.uniform(-1, 1);
        PointCloud cloud = random_cloud(rng, n);
        CHECK(feature_fps(fl, fg, cloud, k) == feature_fps_oracle(fl, fg, cloud, k));
    }
}

TEST_CASE("keypoints: zero offsets anchor on input points") {
    ModelConfig cfg = tiny_config();
    cfg.use_reconstruction = false;
    cfg.use_skeleton = false;
    Params params = Params::init(cfg, 5);
    params.at("kp.w1").setZero();
    params.at("kp.b1").setZero();
    params.at("kp.w2").setZero();
    params.at("kp.b2").setZero();
    RandomStream rng(6);
    PointCloud cloud = random_cloud(rng, cfg.n_in);
    ModelOutput out = model_forward(cloud, params);
    REQUIRE(out.keypoints.size() == cfg.n_kp);
    for (std::size_t k = 0; k < cfg.n_kp; ++k) {
        bool found = false;
        for (const Vec3& p : cloud.points)
            if (p.x == out.keypoints[k].x && p.y == out.keypoints[k].y &&
                p.z == out.keypoints[k].z)
                found = true;
        CHECK(found);
    }

    SUBCASE("n_kp = n_in with zero offsets is a permutation of the cloud") {
        ModelConfig cfg2 = cfg;
        cfg2.n_kp = cfg2.n_in;
        Params p2 = Params::init(cfg2, 5);
        p2.at("kp.w2").setZero();
        p2.at("kp.b2").setZero();
        ModelOutput out2 = model_forward(cloud, p2);
        std::vector<std::size_t> anchors = out2.anchors;
        std::sort(anchors.begin(), anchors.end());
        for (std::size_t i = 0; i < anchors.size(); ++i) CHECK(anchors[i] == i);
        PointCloud sorted_kp = out2.keypoints, sorted_in = cloud;
        auto lt = [](const Vec3& a, const Vec3& b) {
            return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
        };
        std::sort(sorted_kp.points.begin(), sorted_kp.points.end(), lt);
        std::sort(sorted_in.points.begin(), sorted_in.points.end(), lt);
        CHECK(bitwise_equal(sorted_kp, sorted_in));
    }
}

TEST_CASE("electrodes are literally the first keypoint slots") {
    ModelConfig cfg = tiny_config();
    cfg.n_kp = 12;
    Params params = Params::init(cfg, 19);
    RandomStream rng(20);
    ModelOutput out = model_forward(random_cloud(rng, cfg.n_in), params);
    REQUIRE(out.electrodes.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(out.electrodes[i].x == out.keypoints[i].x);
        CHECK(out.electrodes[i].y == out.keypoints[i].y);
        CHECK(out.electrodes[i].z == out.keypoints[i].z);
    }
}

TEST_CASE("coarse decoder: determinism, size, and identity-weight oracle") {
    SUBCASE("fixed F_g is deterministic and default size is 1024") {
        ModelConfig cfg;  // default: n_coarse = 1024
        Params params = Params::init(cfg, 3);
        VectorXd fg = VectorXd::LinSpaced(static_cast<Eigen::Index>(cfg.enc_f2), -1.0, 1.0);
        PointCloud a = decode_coarse(fg, params);
        PointCloud b = decode_coarse(fg, params);
        CHECK(a.size() == 1024);
        CHECK(bitwise_equal(a, b));
    }
    SUBCASE("identity weights replicate F_g as a constant cloud") {
        ModelConfig cfg = tiny_config();
        cfg.enc_f2 = 3;
        cfg.coarse_hidden = 3;
        cfg.n_coarse = 4;
        cfg.n_dense = 16;
        Params params = Params::init(cfg, 3);
        params.at("coarse.w1") = MatrixXd::Identity(3, 3);
        params.at("coarse.b1").setZero();
        params.at("coarse.w2") = MatrixXd::Identity(3, 3);
        params.at("coarse.b2").setZero();
        MatrixXd w3 = MatrixXd::Zero(12, 3);
        for (int k = 0; k < 4; ++k) w3.block(3 * k, 0, 3, 3) = MatrixXd::Identity(3, 3);
        params.at("coarse.w3") = w3;
        params.at("coarse.b3").setZero();
        VectorXd fg(3);
        fg << 0.3, 0.5, 0.2;  // positive so relu is transparent
        PointCloud out = decode_coarse(fg, params);
        REQUIRE(out.size() == 4);
        for (const Vec3& p : out.points) {
            CHECK(p.x == doctest::Approx(0.3).epsilon(1e-15));
            CHECK(p.y == doctest::Approx(0.5).epsilon(1e-15));
            CHECK(p.z == doctest::Approx(0.2).epsilon(1e-15));
        }
    }
}

TEST_CASE("skeleton: segment sampling, projection, and barycentric weights") {
    ModelConfig cfg = tiny_config();
    cfg.skeleton_density = 3;

    PointCloud kp;
    kp.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {4, 4, 4}};
    PointCloud coarse;
    coarse.points = {{10, 10, 10}, {-10, -10, -10}, {0.5, 0.5, 0.5}};

    SUBCASE("alpha=0, density 3: three evenly spaced points on each segment") {
        cfg.skeleton_alpha = 0.0;
        SurfaceSkeleton skel = build_skeleton(kp, coarse, cfg);
        REQUIRE_FALSE(skel.segments.empty());
        // find the (0,1) segment samples: first segment in sorted order
        REQUIRE(skel.segments[0] == std::pair<std::size_t, std::size_t>{0, 1});
        for (int s = 0; s < 3; ++s) {
            const auto& sample = skel.samples[static_cast<std::size_t>(s)];
            double t = (s + 1) / 4.0;
            CHECK(sample.position.x == doctest::Approx(t).epsilon(1e-12));
            CHECK(sample.position.y == doctest::Approx(0.0).epsilon(1e-12));
            CHECK(sample.position.z == doctest::Approx(0.0).epsilon(1e-12));
            CHECK(sample.position.x == sample.raw.x);  // alpha=0: no projection
        }
        CHECK(skel.samples.size() ==
              cfg.skeleton_density * (skel.segments.size() + skel.triangles.size()));
    }

    SUBCASE("alpha=1: every sample coincides with some coarse point") {
        cfg.skeleton_alpha = 1.0;
        SurfaceSkeleton skel = build_skeleton(kp, coarse, cfg);
        for (const auto& s : skel.samples) {
            bool hit = false;
            for (const Vec3& c : coarse.points)
                if (s.position.x == c.x && s.position.y == c.y && s.position.z == c.z) hit = true;
            CHECK(hit);
        }
    }

    SUBCASE("triangle barycentric weights sum to 1 and reconstruct the raw point") {
        cfg.skeleton_alpha = 0.5;
        SurfaceSkeleton skel = build_skeleton(kp, coarse, cfg);
        REQUIRE_FALSE(skel.triangles.empty());
        for (const auto& s : skel.samples) {
            double wsum = 0.0;
            Vec3 recon{0, 0, 0};
            for (const auto& [idx, w] : s.weights) {
                CHECK(w >= 0.0);
                wsum += w;
                recon += kp[idx] * w;
            }
            CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
            CHECK((recon - s.raw).norm() < 1e-12);
        }
    }

    SUBCASE("coincident keypoints: degenerate elements skipped and flagged") {
        PointCloud bad = kp;
        bad.points.push_back(bad.points[0]);  // duplicate of keypoint 0
        SurfaceSkeleton skel = build_skeleton(bad, coarse, cfg);
        CHECK(skel.skipped_elements > 0);
    }

    SUBCASE("fewer than 4 keypoints rejected") {
        PointCloud three;
        three.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
        CHECK_THROWS_AS(build_skeleton(three, coarse, cfg), DataError);
    }
}

TEST_CASE("dense refinement: grid replication, size, and hand oracle") {
    SUBCASE("zero weights replicate seeds at the four grid offsets") {
        ModelConfig cfg = tiny_config();
        cfg.n_coarse = 4;
        cfg.n_dense = 16;
        cfg.grid_extent = 0.25;
        Params params = Params::init(cfg, 2);
        params.at("refine.w1").setZero();
        params.at("refine.b1").setZero();
        params.at("refine.w2").setZero();
        params.at("refine.b2").setZero();
        PointCloud coarse;
        coarse.points = {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
        SurfaceSkeleton empty_skel;
        PointCloud dense = refine_dense(empty_skel, coarse, params);
        REQUIRE(dense.size() == 16);
        // grid-major: first all seeds at offset (-d,-d), then (-d,+d), ...
        const double d = 0.25;
        const double us[4] = {-d, -d, d, d};
        const double vs[4] = {-d, d, -d, d};
        for (std::size_t j = 0; j < 16; ++j) {
            std::size_t g = j / 4, s = j % 4;
            CHECK(dense[j].x == doctest::Approx(coarse[s].x + us[g]).epsilon(1e-15));
            CHECK(dense[j].y == doctest::Approx(coarse[s].y + vs[g]).epsilon(1e-15));
            CHECK(dense[j].z == doctest::Approx(coarse[s].z).epsilon(1e-15));
        }
    }

    SUBCASE("default config emits exactly 4096 points") {
        ModelConfig cfg;  // defaults: n_coarse=1024, n_dense=4096
        cfg.use_skeleton = false;
        cfg.use_keypoint_head = false;
        Params params = Params::init(cfg, 4);
        RandomStream rng(9);
        PointCloud coarse = random_cloud(rng, cfg.n_coarse);
        PointCloud dense = refine_dense(SurfaceSkeleton{}, coarse, params);
        CHECK(dense.size() == 4096);
    }

    SUBCASE("single-hidden-unit refinement matches hand computation") {
        ModelConfig cfg = tiny_config();
        cfg.n_coarse = 2;
        cfg.n_dense = 8;
        cfg.refine_hidden = 1;
        cfg.grid_extent = 0.5;
        Params params = Params::init(cfg, 2);
        params.at("refine.w1") << 0.5, -0.2, 0.1, 1.0, 2.0;
        params.at("refine.b1") << 0.05;
        params.at("refine.w2") << 1.0, 2.0, -1.0;
        params.at("refine.b2") << 0.01, -0.02, 0.03;
        PointCloud coarse;
        coarse.points = {{0.2, 0.4, -0.1}, {-0.3, 0.1, 0.6}};
        PointCloud dense = refine_dense(SurfaceSkeleton{}, coarse, params);
        REQUIRE(dense.size() == 8);
        // j=3: g=1 -> (u,v)=(-0.5,+0.5), seed 1 = (-0.3,0.1,0.6)
        // z = 0.5*-0.3 -0.2*0.1 +0.1*0.6 +1.0*-0.5 +2.0*0.5 +0.05 = 0.44
        // h = 0.44; out = seed + (u,v,0) + (1*h+0.01, 2*h-0.02, -1*h+0.03)
        CHECK(dense[3].x == doctest::Approx(-0.3 - 0.5 + 0.45).epsilon(1e-12));
        CHECK(dense[3].y == doctest::Approx(0.1 + 0.5 + 0.86).epsilon(1e-12));
        CHECK(dense[3].z == doctest::Approx(0.6 + 0.0 - 0.41).epsilon(1e-12));
    }
}

TEST_CASE("loss: perfect prediction gives zero everywhere") {
    ModelConfig cfg = tiny_config();
    RandomStream rng(31);
    Targets gt = random_targets(rng);
    ModelOutput out;
    out.keypoints = gt.topology;  // any superset works; use the target itself
    out.electrodes.points.assign(gt.electrodes.points.begin(), gt.electrodes.points.end());
    out.coarse = gt.coarse;
    out.dense = gt.dense;
    // keypoints must cover the topology both ways: set them equal
    LossWeights w;
    LossBreakdown b = loss_total(out, gt, w, cfg);
    CHECK(b.electrode == 0.0);
    CHECK(b.keypoint == 0.0);
    CHECK(b.coarse == 0.0);
    CHECK(b.dense == 0.0);
    CHECK(b.total == 0.0);
}

TEST_CASE("loss: weight wiring and term-by-term oracle") {
    ModelConfig cfg = tiny_config();
    Params params = Params::init(cfg, 13);
    RandomStream rng(17);
    PointCloud cloud = random_cloud(rng, cfg.n_in);
    Targets gt = random_targets(rng);
    ModelOutput out = model_forward(cloud, params);

    SUBCASE("lambda_kp = lambda_rec = 0 reduces to the electrode term") {
        LossWeights w;
        w.lambda_keypoint = 0.0;
        w.lambda_rec = 0.0;
        LossBreakdown b = loss_total(out, gt, w, cfg);
        CHECK(b.total == b.electrode);
        CHECK(b.keypoint == 0.0);
        CHECK(b.coarse == 0.0);
        CHECK(b.dense == 0.0);
        CHECK(b.electrode > 0.0);
    }

    SUBCASE("breakdown matches independent kernel recomputation") {
        LossWeights w;
        w.beta = 5.0;
        w.lambda_keypoint = 0.05;
        w.lambda_rec = 0.05;
        LossBreakdown b = loss_total(out, gt, w, cfg);
        PointCloud el_gt;
        el_gt.points.assign(gt.electrodes.points.begin(),
                            gt.electrodes.points.begin() +
                                static_cast<std::ptrdiff_t>(out.electrodes.size()));
        double el = mae_points(out.electrodes, el_gt);
        double kpl = chamfer_sq_oracle(out.keypoints, gt.topology);
        double col = chamfer_sq_oracle(out.coarse, gt.coarse);
        double del = chamfer_sq_oracle(out.dense, gt.dense);
        CHECK(b.electrode == doctest::Approx(el).epsilon(1e-12));
        CHECK(b.keypoint == doctest::Approx(kpl).epsilon(1e-9));
        CHECK(b.coarse == doctest::Approx(col).epsilon(1e-9));
        CHECK(b.dense == doctest::Approx(del).epsilon(1e-9));
        CHECK(b.total == doctest::Approx(el + 0.05 * kpl + 0.05 * (col + 5.0 * del)).epsilon(1e-12));
        CHECK(b.total >= 0.0);
    }

    SUBCASE("missing ground truth is a configuration error") {
        LossWeights w;
        Targets incomplete = gt;
        incomplete.topology.points.clear();
        CHECK_THROWS_AS(loss_total(out, incomplete, w, cfg), UsageError);
        incomplete = gt;
        incomplete.dense.points.clear();
        CHECK_THROWS_AS(loss_total(out, incomplete, w, cfg), UsageError);
    }
}

TEST_CASE("full model and loss are bitwise permutation-invariant") {
    ModelConfig cfg = tiny_config();
    cfg.n_kp = 10;
    Params params = Params::init(cfg, 23);
    RandomStream rng(29);
    PointCloud cloud = random_cloud(rng, cfg.n_in);
    cloud.points[7] = cloud.points[1];  // duplicates exercise tie handling
    Targets gt = random_targets(rng);
    LossWeights w;

    ModelOutput base = model_forward(cloud, params);
    LossBreakdown base_loss = loss_total(base, gt, w, cfg);

    std::vector<std::size_t> perm(cfg.n_in);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(perm);
        PointCloud shuffled;
        shuffled.points.resize(cfg.n_in);
        for (std::size_t i = 0; i < cfg.n_in; ++i) shuffled.points[i] = cloud[perm[i]];
        ModelOutput out = model_forward(shuffled, params);
        for (Eigen::Index r = 0; r < base.f_global.size(); ++r)
            CHECK(out.f_global[r] == base.f_global[r]);
        CHECK(bitwise_equal(out.keypoints, base.keypoints));
        CHECK(bitwise_equal(out.coarse, base.coarse));
        CHECK(bitwise_equal(out.dense, base.dense));
        LossBreakdown l = loss_total(out, gt, w, cfg);
        CHECK(l.total == base_loss.total);
        CHECK(l.electrode == base_loss.electrode);
        CHECK(l.keypoint == base_loss.keypoint);
        CHECK(l.coarse == base_loss.coarse);
        CHECK(l.dense == base_loss.dense);
    }
}

TEST_CASE("gradients vanish at an exact prediction") {
    // direct-head model with zero weights outputs its bias image; set the
    // bias to the ground truth so the prediction is exact
    ModelConfig cfg = tiny_config();
    cfg.use_keypoint_head = false;
    cfg.use_skeleton = false;
    cfg.use_reconstruction = false;
    Params params = Params::init(cfg, 3);
    for (auto& [name, m] : params.tensors) m.setZero();
    RandomStream rng(37);
    Targets gt;
    gt.electrodes = random_cloud(rng, 10);
    for (std::size_t i = 0; i < 10; ++i) {
        params.at("dir.b3")(3 * static_cast<Eigen::Index>(i), 0) = gt.electrodes[i].x;
        params.at("dir.b3")(3 * static_cast<Eigen::Index>(i) + 1, 0) = gt.electrodes[i].y;
        params.at("dir.b3")(3 * static_cast<Eigen::Index>(i) + 2, 0) = gt.electrodes[i].z;
    }
    LossWeights w;
    w.lambda_keypoint = 0.0;
    w.lambda_rec = 0.0;
    Params grads = Params::zeros_like(params);
    PointCloud cloud = random_cloud(rng, cfg.n_in);
    LossBreakdown b = model_backward(cloud, params, gt, w, grads);
    CHECK(b.total == 0.0);
    for (const auto& [name, m] : grads.tensors) {
        INFO("tensor ", name);
        CHECK(m.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("gradient linearity in the loss weights") {
    ModelConfig cfg = tiny_config();
    Params params = Params::init(cfg, 43);
    RandomStream rng(47);
    PointCloud cloud = random_cloud(rng, cfg.n_in);
    Targets gt = random_targets(rng);

    LossWeights w_el;  // electrode term only
    w_el.lambda_keypoint = 0.0;
    w_el.lambda_rec = 0.0;
    LossWeights w1;
    w1.lambda_keypoint = 0.03;
    w1.lambda_rec = 0.02;
    LossWeights w2;
    w2.lambda_keypoint = 0.06;
    w2.lambda_rec = 0.04;

    Params g_el = Params::zeros_like(params);
    Params g1 = Params::zeros_like(params);
    Params g2 = Params::zeros_like(params);
    model_backward(cloud, params, gt, w_el, g_el);
    model_backward(cloud, params, gt, w1, g1);
    model_backward(cloud, params, gt, w2, g2);

    // grad(w2) = 2*grad(w1) - grad(el-only): the auxiliary terms scale linearly
    for (const auto& [name, m2] : g2.tensors) {
        const MatrixXd& m1 = g1.at(name);
        const MatrixXd& me = g_el.at(name);
        MatrixXd expect = 2.0 * m1 - me;
        INFO("tensor ", name);
        CHECK((m2 - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
}

namespace {

// central finite differences; retries with a smaller step before failing so
// argmin/argmax tie crossings near the evaluation point are excluded
void check_gradients(const ModelConfig& cfg, const LossWeights& w, std::uint64_t seed) {
    Params params = Params::init(cfg, seed);
    RandomStream rng(mix_seed(seed, 999));
    PointCloud cloud = random_cloud(rng, cfg.n_in);
    Targets gt = random_targets(rng, 12, 10, 14);

    Params grads = Params::zeros_like(params);
    model_backward(cloud, params, gt, w, grads);

    auto loss_at = [&](const Params& p) {
        ModelOutput out = model_forward(cloud, p);
        return loss_total(out, gt, w, cfg).total;
    };

    std::size_t checked = 0, tie_skipped = 0;
    std::string first_mismatch;
    Params probe = params;
    for (auto& [name, m] : probe.tensors) {
        const MatrixXd& g = grads.at(name);
        for (Eigen::Index idx = 0; idx < m.size(); ++idx) {
            double saved = m.data()[idx];
            bool ok = false;
            double fd = 0.0, an = g.data()[idx];
            for (double h : {1e-4, 1e-5}) {
                m.data()[idx] = saved + h;
                double lp = loss_at(probe);
                m.data()[idx] = saved - h;
                double lm = loss_at(probe);
                m.data()[idx] = saved;
                fd = (lp - lm) / (2.0 * h);
                double scale = std::max({std::fabs(an), std::fabs(fd), 1e-4});
                if (std::fabs(fd - an) <= 1e-3 * scale) {
                    ok = true;
                    break;
                }
            }
            if (!ok) {
                // a selection flip inside the FD stencil invalidates the
                // estimate; tolerate a small rate of such entries
                ++tie_skipped;
                if (first_mismatch.empty())
                    first_mismatch = name + "[" + std::to_string(idx) + "] analytic " +
                                     std::to_string(an) + " fd " + std::to_string(fd);
            }
            ++checked;
        }
    }
    CHECK(checked > 500);
    INFO("checked ", checked, " entries; ", tie_skipped, " outside tolerance; first: ",
         first_mismatch);
    CHECK(tie_skipped * 50 <= checked);
}

}  // namespace

TEST_CASE("finite-difference gradient check: full model") {
    ModelConfig cfg = tiny_config();
    LossWeights w;
    check_gradients(cfg, w, 61);
}

TEST_CASE("finite-difference gradient check: direct head (ablation wiring)") {
    ModelConfig cfg = tiny_config();
    cfg.use_keypoint_head = false;
    cfg.use_skeleton = false;
    LossWeights w;
    w.lambda_keypoint = 0.0;
    check_gradients(cfg, w, 67);
}

TEST_CASE("finite-difference gradient check: no reconstruction") {
    ModelConfig cfg = tiny_config();
    cfg.use_reconstruction = false;
    cfg.use_skeleton = false;
    LossWeights w;
    w.lambda_rec = 0.0;
    check_gradients(cfg, w, 71);
}

TEST_CASE("config validation catches inconsistent setups") {
    ModelConfig cfg = tiny_config();
    cfg.use_keypoint_head = false;
    cfg.use_skeleton = true;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = tiny_config();
    cfg.n_dense = 4 * cfg.n_coarse + 1;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = tiny_config();
    cfg.skeleton_alpha = 1.5;
    CHECK_THROWS_AS(cfg.validate(), DataError);
}
