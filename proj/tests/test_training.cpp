#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "elok/dataset.hpp"
#include "elok/torso.hpp"
#include "elok/training.hpp"

using namespace elok;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SliceProtocol tiny_protocol() {
    SliceProtocol p;
    p.sax_count = 2;
    p.lax_count = 1;
    p.loc_sagittal = 1;
    p.loc_coronal = 0;
    p.loc_axial = 1;
    p.grid_step = 0.8;
    return p;
}

Subject make_subject(std::uint64_t seed, const std::string& id) {
    auto [spec, surface] = sample_torso(seed);
    Subject s;
    s.id = id;
    s.contours = slice_contours(surface, tiny_protocol(), mix_seed(seed, 0x517)).contours;
    s.electrodes = place_electrodes(spec, surface);
    s.dense = surface.sample_surface(96, mix_seed(seed, 0xde));
    s.coarse = surface.sample_surface(48, mix_seed(seed, 0xc0));
    s.topology = fps(s.dense, 12, 0);
    return s;
}

// Small but fully wired model: keypoint head (12 slots > 10 electrodes),
// skeleton, and reconstruction.
TrainConfig tiny_train_config() {
    TrainConfig c;
    c.batch_size = 3;
    c.epochs = 2;
    c.n_rr = 2;
    c.seed = 11;
    c.model.n_in = 48;
    c.model.enc_h1 = 6;
    c.model.enc_f1 = 8;
    c.model.enc_h2 = 10;
    c.model.enc_f2 = 12;
    c.model.n_kp = 12;
    c.model.head_hidden = 8;
    c.model.direct_h1 = 8;
    c.model.direct_h2 = 6;
    c.model.n_coarse = 24;
    c.model.coarse_hidden = 16;
    c.model.n_dense = 48;
    c.model.refine_hidden = 5;
    c.model.skeleton_links = 2;
    c.model.skeleton_density = 2;
    return c;
}

bool params_equal(const Params& a, const Params& b) {
    if (a.tensors.size() != b.tensors.size()) return false;
    for (const auto& [name, m] : a.tensors) {
        auto it = b.tensors.find(name);
        if (it == b.tensors.end()) return false;
        const Eigen::MatrixXd& o = it->second;
        if (m.rows() != o.rows() || m.cols() != o.cols()) return false;
        for (Eigen::Index i = 0; i < m.size(); ++i)
            if (m.data()[i] != o.data()[i]) return false;
    }
    return true;
}

bool clouds_equal(const PointCloud& a, const PointCloud& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].x != b[i].x || a[i].y != b[i].y || a[i].z != b[i].z) return false;
    return true;
}

double dist_point_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
    Vec3 ab = b - a;
    double denom = ab.norm2();
    double t = denom > 0.0 ? std::clamp((p - a).dot(ab) / denom, 0.0, 1.0) : 0.0;
    return dist(p, a + ab * t);
}

double dist_to_contours(const Vec3& p, const ContourSet& cs) {
    double best = std::numeric_limits<double>::infinity();
    for (const Contour& c : cs.contours) {
        std::size_t n = c.polyline.size();
        for (std::size_t i = 0; i + 1 < n; ++i)
            best = std::min(best,
                            dist_point_segment(p, c.lift(c.polyline[i]), c.lift(c.polyline[i + 1])));
        if (c.closed && n >= 2)
            best = std::min(best,
                            dist_point_segment(p, c.lift(c.polyline[n - 1]), c.lift(c.polyline[0])));
    }
    return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST_CASE("train config defaults match the documented settings") {
    TrainConfig c;
    CHECK(c.batch_size == 6);
    CHECK(c.initial_lr == 1e-4);
    CHECK(c.lr_decay_factor == 0.5);
    CHECK(c.lr_decay_every == 9000);
    CHECK(c.weight_decay == 1e-3);
    CHECK(c.epochs == 120);
    CHECK(c.n_rr == 30);
    CHECK(c.model.n_kp == 64);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("train config round-trips through key values") {
    TrainConfig c;
    c.batch_size = 4;
    c.initial_lr = 3.5e-4;
    c.lr_decay_every = 123;
    c.weight_decay = 0.0;
    c.epochs = 7;
    c.n_rr = 5;
    c.seed = 424242;
    c.weights.beta = 2.5;
    c.weights.lambda_keypoint = 0.125;
    c.model.n_kp = 17;
    c.model.grid_extent = 0.0625;
    c.model.use_skeleton = false;

    TrainConfig back = TrainConfig::from_key_values(c.to_key_values());
    CHECK(back.hash() == c.hash());
    CHECK(back.batch_size == 4);
    CHECK(back.initial_lr == 3.5e-4);
    CHECK(back.seed == 424242);
    CHECK(back.weights.lambda_keypoint == 0.125);
    CHECK(back.model.n_kp == 17);
    CHECK(back.model.use_skeleton == false);

    // any edit changes the hash
    KeyValues kv = c.to_key_values();
    kv["batch_size"] = "5";
    CHECK(TrainConfig::from_key_values(kv).hash() != c.hash());
}

TEST_CASE("train config rejects unknown keys and bad values") {
    KeyValues kv;
    kv["batch_sise"] = "6";
    CHECK_THROWS_AS(TrainConfig::from_key_values(kv), UsageError);

    kv.clear();
    kv["batch_size"] = "six";
    CHECK_THROWS_AS(TrainConfig::from_key_values(kv), UsageError);

    kv.clear();
    kv["initial_lr"] = "fast";
    CHECK_THROWS_AS(TrainConfig::from_key_values(kv), UsageError);

    kv.clear();
    kv["use_skeleton"] = "maybe";
    CHECK_THROWS_AS(TrainConfig::from_key_values(kv), UsageError);

    TrainConfig c;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = TrainConfig();
    c.initial_lr = -1.0;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = TrainConfig();
    c.n_rr = 0;
    CHECK_THROWS_AS(c.validate(), DataError);
    c = TrainConfig();
    c.lr_decay_every = 0;
    CHECK_THROWS_AS(c.validate(), DataError);
}

TEST_CASE("variant presets wire branch flags and loss weights together") {
    TrainConfig base = tiny_train_config();

    TrainConfig tim = variant_config(base, "tim");
    CHECK(tim.model.use_keypoint_head);
    CHECK(tim.model.use_skeleton);
    CHECK(tim.model.use_reconstruction);
    CHECK(tim.weights.lambda_rec == base.weights.lambda_rec);

    TrainConfig no_recon = variant_config(base, "tim-no-recon");
    CHECK(no_recon.model.use_keypoint_head);
    CHECK_FALSE(no_recon.model.use_reconstruction);
    CHECK(no_recon.weights.lambda_rec == 0.0);
    CHECK_NOTHROW(no_recon.validate());

    TrainConfig no_kp = variant_config(base, "tim-no-kp");
    CHECK_FALSE(no_kp.model.use_keypoint_head);
    CHECK_FALSE(no_kp.model.use_skeleton);
    CHECK(no_kp.model.use_reconstruction);
    CHECK(no_kp.weights.lambda_keypoint == 0.0);
    CHECK_NOTHROW(no_kp.validate());

    TrainConfig pcn = variant_config(base, "pcn3fc");
    CHECK_FALSE(pcn.model.use_keypoint_head);
    CHECK_FALSE(pcn.model.use_reconstruction);
    CHECK(pcn.weights.lambda_keypoint == 0.0);
    CHECK(pcn.weights.lambda_rec == 0.0);
    CHECK_NOTHROW(pcn.validate());

    CHECK_THROWS_AS(variant_config(base, "resnet"), UsageError);
}

TEST_CASE("learning rate halves exactly every decay interval") {
    TrainConfig c;  // initial 1e-4, factor 0.5, every 9000
    CHECK(lr_at(c, 0) == 1e-4);
    CHECK(lr_at(c, 8999) == 1e-4);
    CHECK(lr_at(c, 9000) == 0.5 * lr_at(c, 8999));
    CHECK(lr_at(c, 17999) == 0.5e-4);
    CHECK(lr_at(c, 18000) == 0.25e-4);

    // deterministic step function of the iteration counter
    RandomStream rng(99);
    for (int i = 0; i < 200; ++i) {
        std::size_t it = rng.index(100000);
        double expect = c.initial_lr;
        for (std::size_t k = 0; k < it / c.lr_decay_every; ++k) expect *= c.lr_decay_factor;
        CHECK(lr_at(c, it) == expect);
        CHECK(lr_at(c, it + 1) <= lr_at(c, it));
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

TEST_CASE("adamw matches a hand-rolled reference on a quadratic") {
    // minimize sum_i a_i (x_i - c_i)^2 for 200 steps and compare every
    // parameter against an independently coded scalar Adam trajectory
    Params p;
    p.tensors["block_a"] = Eigen::MatrixXd(3, 2);
    p.tensors["block_b"] = Eigen::MatrixXd(4, 1);

    std::vector<double*> slots;
    for (auto& [name, m] : p.tensors)
        for (Eigen::Index i = 0; i < m.size(); ++i) slots.push_back(&m.data()[i]);
    const std::size_t n = slots.size();

    RandomStream rng(314);
    std::vector<double> ref(n), curvature(n), target(n);
    for (std::size_t i = 0; i < n; ++i) {
        ref[i] = rng.uniform(-1.0, 1.0);
        *slots[i] = ref[i];
        curvature[i] = rng.uniform(0.5, 3.0);
        target[i] = rng.uniform(-1.0, 1.0);
    }

    AdamW opt = AdamW::init(p);
    const double lr = 0.01;
    std::vector<double> m_ref(n, 0.0), v_ref(n, 0.0);
    double b1p = 1.0, b2p = 1.0;

    auto objective = [&](const std::vector<double>& x) {
        double f = 0.0;
        for (std::size_t i = 0; i < n; ++i) f += curvature[i] * (x[i] - target[i]) * (x[i] - target[i]);
        return f;
    };
    const double f0 = objective(ref);

    for (int step = 0; step < 200; ++step) {
        Params grads = Params::zeros_like(p);
        std::vector<double*> gslots;
        for (auto& [name, m] : grads.tensors)
            for (Eigen::Index i = 0; i < m.size(); ++i) gslots.push_back(&m.data()[i]);
        for (std::size_t i = 0; i < n; ++i)
            *gslots[i] = 2.0 * curvature[i] * (*slots[i] - target[i]);

        opt.step(p, grads, lr, 0.0);

        b1p *= 0.9;
        b2p *= 0.999;
        for (std::size_t i = 0; i < n; ++i) {
            double g = 2.0 * curvature[i] * (ref[i] - target[i]);
            m_ref[i] = 0.9 * m_ref[i] + 0.1 * g;
            v_ref[i] = 0.999 * v_ref[i] + 0.001 * g * g;
            double mhat = m_ref[i] / (1.0 - b1p);
            double vhat = v_ref[i] / (1.0 - b2p);
            ref[i] -= lr * mhat / (std::sqrt(vhat) + 1e-8);
        }
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::fabs(*slots[i] - ref[i]) <= 1e-8);
    }
    CHECK(opt.t == 200);

    std::vector<double> final_x(n);
    for (std::size_t i = 0; i < n; ++i) final_x[i] = *slots[i];
    CHECK(objective(final_x) < f0);  // it actually descends
}

TEST_CASE("adamw weight decay is decoupled from the moments") {
    Params p;
    p.tensors["w"] = Eigen::MatrixXd::Constant(1, 1, 2.0);
    Params g = Params::zeros_like(p);
    g.at("w")(0, 0) = 3.0;

    AdamW opt = AdamW::init(p);
    opt.step(p, g, 0.1, 0.5);

    // first step: mhat = g, vhat = g^2, decay applied straight to the weight
    double expected = 2.0 - 0.1 * (3.0 / (3.0 + 1e-8) + 0.5 * 2.0);
    CHECK(p.at("w")(0, 0) == doctest::Approx(expected).epsilon(1e-14));
    // the moments never saw the decay term
    CHECK(opt.m.at("w")(0, 0) == doctest::Approx(0.1 * 3.0).epsilon(1e-14));
    CHECK(opt.v.at("w")(0, 0) == doctest::Approx(0.001 * 9.0).epsilon(1e-14));
}

// ---------------------------------------------------------------------------
// Augmentation and samples
// ---------------------------------------------------------------------------

TEST_CASE("augment_resample yields distinct deterministic on-contour clouds") {
    Subject sub = make_subject(501, "s0501");

    std::vector<PointCloud> one = augment_resample(sub, 1, 64, 7);
    CHECK(one.size() == 1);
    CHECK(one[0].size() == 64);

    std::vector<PointCloud> clouds = augment_resample(sub, 30, 64, 7);
    CHECK(clouds.size() == 30);
    for (std::size_t i = 0; i < clouds.size(); ++i)
        for (std::size_t j = i + 1; j < clouds.size(); ++j)
            CHECK_FALSE(clouds_equal(clouds[i], clouds[j]));

    // repeat r is the same cloud regardless of how many repeats are drawn
    CHECK(clouds_equal(one[0], clouds[0]));

    std::vector<PointCloud> again = augment_resample(sub, 30, 64, 7);
    for (std::size_t i = 0; i < clouds.size(); ++i) CHECK(clouds_equal(clouds[i], again[i]));

    std::vector<PointCloud> other = augment_resample(sub, 30, 64, 8);
    CHECK_FALSE(clouds_equal(clouds[0], other[0]));

    // every resampled point sits on one of the subject's contour polylines
    for (std::size_t i = 0; i < 5; ++i)
        for (const Vec3& pt : clouds[i].points) CHECK(dist_to_contours(pt, sub.contours) <= 1e-9);

    CHECK_THROWS_AS(augment_resample(sub, 0, 64, 7), UsageError);
}

TEST_CASE("make_sample normalizes input and targets in one shared frame") {
    Subject sub = make_subject(502, "s0502");
    PointCloud cloud = augment_resample(sub, 1, 128, 3)[0];
    TrainSample s = make_sample(sub, cloud);

    CHECK(s.input.size() == 128);
    Vec3 centroid;
    double max_r = 0.0;
    for (const Vec3& p : s.input.points) centroid += p;
    centroid = centroid / static_cast<double>(s.input.size());
    for (const Vec3& p : s.input.points) max_r = std::max(max_r, (p - centroid).norm());
    CHECK(centroid.norm() < 1e-9);
    CHECK(max_r == doctest::Approx(1.0).epsilon(1e-9));

    // inverting the stored transform recovers the raw ground truth
    PointCloud gt = sub.electrodes.as_cloud();
    PointCloud recovered = s.transform.invert(s.targets.electrodes);
    REQUIRE(recovered.size() == gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) CHECK(dist(recovered[i], gt[i]) < 1e-12);
    CHECK(s.targets.topology.size() == sub.topology.size());
    CHECK(s.targets.coarse.size() == sub.coarse.size());
    CHECK(s.targets.dense.size() == sub.dense.size());
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint text round-trips the full state bit-exactly") {
    TrainConfig cfg = tiny_train_config();
    TrainState st;
    st.config = cfg;
    st.params = Params::init(cfg.model, 77);
    st.opt = AdamW::init(st.params);

    // make the optimizer state non-trivial
    RandomStream rng(5);
    for (auto& [name, m] : st.opt.m.tensors)
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    for (auto& [name, m] : st.opt.v.tensors)
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
    st.opt.t = 7;
    st.opt.beta1_pow = std::pow(0.9, 7);
    st.opt.beta2_pow = std::pow(0.999, 7);
    st.iteration = 42;
    st.epoch = 3;
    st.has_best = true;
    st.best_val_ed = 1.25e-3;
    st.best_epoch = 2;
    st.best_params = Params::init(cfg.model, 78);

    std::string text = checkpoint_to_text(st);
    TrainState back = checkpoint_from_text(text);

    CHECK(params_equal(back.params, st.params));
    CHECK(params_equal(back.opt.m, st.opt.m));
    CHECK(params_equal(back.opt.v, st.opt.v));
    CHECK(params_equal(back.best_params, st.best_params));
    CHECK(back.opt.t == 7);
    CHECK(back.opt.beta1_pow == st.opt.beta1_pow);
    CHECK(back.opt.beta2_pow == st.opt.beta2_pow);
    CHECK(back.iteration == 42);
    CHECK(back.epoch == 3);
    CHECK(back.has_best);
    CHECK(back.best_val_ed == 1.25e-3);
    CHECK(back.best_epoch == 2);
    CHECK(back.config.hash() == cfg.hash());

    // serialization is itself deterministic
    CHECK(checkpoint_to_text(back) == text);
}

TEST_CASE("checkpoint parsing rejects corruption") {
    TrainConfig cfg = tiny_train_config();
    TrainState st;
    st.config = cfg;
    st.params = Params::init(cfg.model, 1);
    st.opt = AdamW::init(st.params);
    std::string text = checkpoint_to_text(st);

    CHECK_THROWS_AS(checkpoint_from_text(text.substr(0, text.size() / 2)), DataError);
    CHECK_THROWS_AS(checkpoint_from_text("elok-checkpoint 9\n"), DataError);

    // tampering with a config value breaks the stored hash
    std::string tampered = text;
    std::size_t pos = tampered.find("batch_size 3");
    REQUIRE(pos != std::string::npos);
    tampered.replace(pos, 12, "batch_size 4");
    CHECK_THROWS_AS(checkpoint_from_text(tampered), DataError);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TEST_CASE("training is deterministic and thread-count independent") {
    std::vector<Subject> train_set = {make_subject(601, "s0601"), make_subject(602, "s0602"),
                                      make_subject(603, "s0603"), make_subject(604, "s0604")};
    std::vector<Subject> val_set = {make_subject(611, "s0611"), make_subject(612, "s0612")};

    TrainOptions opt;
    opt.config = tiny_train_config();

    TrainResult a = train(train_set, val_set, opt);
    TrainResult b = train(train_set, val_set, opt);
    opt.threads = 4;
    TrainResult c = train(train_set, val_set, opt);

    // 4 subjects x 2 repeats = 8 samples -> 3 batches/epoch x 2 epochs
    CHECK(a.metrics.size() == 6);
    CHECK(a.state.iteration == 6);
    CHECK(a.state.epoch == 2);
    CHECK(a.validation.size() == 2);
    for (const ValidationRow& row : a.validation) {
        CHECK(std::isfinite(row.ed));
        CHECK(std::isfinite(row.cd));
    }
    CHECK(a.state.has_best);
    double best = std::min(a.validation[0].ed, a.validation[1].ed);
    CHECK(a.state.best_val_ed == best);

    CHECK(metrics_to_csv(a.metrics) == metrics_to_csv(b.metrics));
    CHECK(params_equal(a.state.params, b.state.params));
    CHECK(metrics_to_csv(a.metrics) == metrics_to_csv(c.metrics));
    CHECK(params_equal(a.state.params, c.state.params));
    CHECK(params_equal(a.state.best_params, c.state.best_params));

    // a different seed trains a different model
    TrainOptions other = opt;
    other.config.seed = 12;
    TrainResult d = train(train_set, val_set, other);
    CHECK_FALSE(params_equal(a.state.params, d.state.params));

    // first logged row carries iteration 0, epoch 0, the initial lr
    CHECK(a.metrics[0].iter == 0);
    CHECK(a.metrics[0].epoch == 0);
    CHECK(a.metrics[0].lr == opt.config.initial_lr);
    CHECK(std::isfinite(a.metrics[0].loss.total));
    CHECK(a.metrics[0].loss.total > 0.0);
}

TEST_CASE("metrics logs use the documented csv layout") {
    CHECK(metrics_to_csv({}) == "iter,epoch,lr,L_total,L_electrode,L_keypoint,L_coarse,L_dense\n");
    CHECK(validation_to_csv({}) == "epoch,val_ed,val_cd\n");

    IterationRow row;
    row.iter = 3;
    row.epoch = 1;
    row.lr = 1e-4;
    row.loss = {1.5, 1.0, 0.25, 0.125, 0.0625};
    std::string csv = metrics_to_csv({row});
    CHECK(csv.find("3,1,0.0001,1.5,1,0.25,0.125,0.0625\n") != std::string::npos);
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run bit-exactly") {
    std::vector<Subject> train_set = {make_subject(621, "s0621"), make_subject(622, "s0622"),
                                      make_subject(623, "s0623")};
    std::vector<Subject> val_set = {make_subject(631, "s0631")};

    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 4;

    fs::path dir_a = fresh_dir("elok_train_a");
    TrainOptions opt_a;
    opt_a.config = cfg;
    opt_a.out_dir = dir_a.string();
    TrainResult full = train(train_set, val_set, opt_a);
    CHECK(full.state.epoch == 4);

    // interrupted run: stop after 2 epochs, then resume to 4
    fs::path dir_b = fresh_dir("elok_train_b");
    TrainConfig half = cfg;
    half.epochs = 2;
    TrainOptions opt_b;
    opt_b.config = half;
    opt_b.out_dir = dir_b.string();
    TrainResult first_half = train(train_set, val_set, opt_b);
    CHECK(first_half.state.epoch == 2);

    fs::path dir_c = fresh_dir("elok_train_c");
    TrainOptions opt_c;
    opt_c.config = cfg;  // epochs back to 4
    opt_c.out_dir = dir_c.string();
    opt_c.resume_checkpoint = (dir_b / "checkpoint_last.txt").string();
    TrainResult second_half = train(train_set, val_set, opt_c);
    CHECK(second_half.state.epoch == 4);

    // final states agree byte-for-byte, including optimizer moments and best
    CHECK(checkpoint_to_text(second_half.state) == checkpoint_to_text(full.state));

    // the resumed metrics are exactly the tail of the uninterrupted log
    std::vector<IterationRow> tail(full.metrics.begin() + static_cast<long>(first_half.metrics.size()),
                                   full.metrics.end());
    CHECK(metrics_to_csv(second_half.metrics) == metrics_to_csv(tail));

    // resuming with a genuinely different config is refused
    TrainOptions opt_bad = opt_c;
    opt_bad.config.initial_lr = 2e-4;
    CHECK_THROWS_AS(train(train_set, val_set, opt_bad), UsageError);

    // on-disk checkpoints load and match the in-memory states
    TrainState reloaded = load_checkpoint((dir_c / "checkpoint_last.txt").string());
    CHECK(params_equal(reloaded.params, full.state.params));
    TrainState best = load_checkpoint((dir_a / "checkpoint_best.txt").string());
    CHECK(params_equal(best.params, full.state.best_params));

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    fs::remove_all(dir_c);
}

TEST_CASE("non-finite losses abort and keep the last good state") {
    std::vector<Subject> train_set = {make_subject(641, "s0641"), make_subject(642, "s0642")};
    std::vector<Subject> val_set;

    TrainOptions opt;
    opt.config = tiny_train_config();
    opt.config.initial_lr = 1e80;  // guarantees overflow within a few steps
    opt.config.weight_decay = 0.0;
    fs::path dir = fresh_dir("elok_train_nan");
    opt.out_dir = dir.string();

    TrainResult r = train(train_set, val_set, opt);
    CHECK(r.aborted);
    CHECK_FALSE(r.abort_reason.empty());
    // the blow-up happens inside epoch 0, so the rollback target is the start
    CHECK(r.state.epoch == 0);
    CHECK(r.state.iteration == 0);
    CHECK(r.state.params.all_finite());
    CHECK(fs::exists(dir / "aborted.txt"));
    TrainState last = load_checkpoint((dir / "checkpoint_last.txt").string());
    CHECK(params_equal(last.params, r.state.params));
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

TEST_CASE("predict_subject denormalizes a full named electrode set") {
    Subject sub = make_subject(651, "s0651");
    TrainConfig cfg = tiny_train_config();
    Params params = Params::init(cfg.model, 9);

    SubjectPrediction p = predict_subject(params, sub, 123);
    SubjectPrediction q = predict_subject(params, sub, 123);
    CHECK(clouds_equal(p.electrodes.as_cloud(), q.electrodes.as_cloud()));
    CHECK(clouds_equal(p.dense, q.dense));

    CHECK(p.keypoints.size() == cfg.model.n_kp);
    CHECK(p.coarse.size() == cfg.model.n_coarse);
    CHECK(p.dense.size() == cfg.model.n_dense);
    for (const Vec3& v : p.electrodes.positions) CHECK(v.finite());

    SubjectScore s = score_subject(params, sub, 123);
    CHECK(std::isfinite(s.ed));
    CHECK(s.ed >= 0.0);
    CHECK(std::isfinite(s.cd));

    // without the reconstruction branch there is no chamfer score
    TrainConfig pcn = variant_config(cfg, "pcn3fc");
    Params pcn_params = Params::init(pcn.model, 9);
    SubjectScore s2 = score_subject(pcn_params, sub, 123);
    CHECK(std::isfinite(s2.ed));
    CHECK(std::isnan(s2.cd));

    // a 4-keypoint model cannot fill the 10 electrode slots
    TrainConfig toy = cfg;
    toy.model.n_kp = 4;
    Params toy_params = Params::init(toy.model, 9);
    CHECK_THROWS_AS(predict_subject(toy_params, sub, 123), UsageError);
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

TEST_CASE("sweep trains per value, records failures, and emits the table") {
    fs::path data_dir = fresh_dir("elok_sweep_data");
    MakeDatasetOptions mk;
    mk.n_subjects = 5;  // 3 train / 1 val / 1 test
    mk.seed = 9;
    mk.out_dir = data_dir.string();
    mk.protocol = tiny_protocol();
    mk.n_coarse = 48;
    mk.n_dense = 96;
    mk.n_topology = 12;
    make_dataset(mk);

    TrainConfig base = tiny_train_config();
    base.epochs = 1;
    base.n_rr = 1;

    fs::path out_dir = fresh_dir("elok_sweep_out");
    std::vector<SweepRow> rows =
        sweep(data_dir.string(), base, "N_kp", {0, 12}, out_dir.string(), 2);
    REQUIRE(rows.size() == 2);

    CHECK(rows[0].failed);  // n_kp = 0 fails validation; the sweep continues
    CHECK_FALSE(rows[0].error.empty());
    CHECK(std::isnan(rows[0].ed_mean));

    CHECK_FALSE(rows[1].failed);
    CHECK(rows[1].value == 12);
    CHECK(std::isfinite(rows[1].ed_mean));
    CHECK(std::isfinite(rows[1].cd_mean));
    CHECK(rows[1].ed_sd == 0.0);  // single test subject: sample sd is 0

    std::string csv = sweep_to_csv(rows);
    CHECK(csv.rfind("value,cd_mean,cd_sd,ed_mean,ed_sd,status\n", 0) == 0);
    CHECK(csv.find("\n12,") != std::string::npos);
    CHECK(fs::exists(out_dir / "sweep.csv"));
    CHECK(fs::exists(out_dir / "N_kp_12" / "checkpoint_last.txt"));

    CHECK_THROWS_AS(sweep(data_dir.string(), base, "N_fc", {1}, "", 1), UsageError);
    CHECK_THROWS_AS(sweep(data_dir.string(), base, "N_kp", {}, "", 1), UsageError);

    fs::remove_all(data_dir);
    fs::remove_all(out_dir);
}
