#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "elok/dataset.hpp"
#include "elok/io.hpp"
#include "elok/spatial_index.hpp"
#include "elok/torso.hpp"

using namespace elok;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

double sgn_pow(double c, double e) {
    if (c == 0.0) return 0.0;
    return (c < 0.0 ? -1.0 : 1.0) * std::pow(std::fabs(c), e);
}

// Cylinder of radius r: a degenerate member of the torso family.
TorsoSpec cylinder_spec(double r, double height) {
    TorsoSpec s;
    s.height = height;
    s.levels = {{0.0, r, r, 2.0}, {1.0, r, r, 2.0}};
    return s;
}

TorsoSpec two_band_spec() {
    TorsoSpec s;
    s.height = 60.0;
    s.levels = {{0.0, 16.0, 10.0, 2.2}, {0.30, 14.0, 9.0, 2.8}, {1.0, 17.0, 11.0, 2.4}};
    return s;
}

bool same_spec(const TorsoSpec& a, const TorsoSpec& b) {
    if (a.height != b.height || a.bmi_scale != b.bmi_scale || a.levels.size() != b.levels.size())
        return false;
    for (std::size_t i = 0; i < a.levels.size(); ++i) {
        if (a.levels[i].frac != b.levels[i].frac || a.levels[i].a != b.levels[i].a ||
            a.levels[i].b != b.levels[i].b || a.levels[i].p != b.levels[i].p)
            return false;
    }
    return true;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Cheap acquisition settings for dataset-level tests.
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

}  // namespace

TEST_CASE("sample_torso is deterministic per seed") {
    auto [s1, surf1] = sample_torso(77);
    auto [s2, surf2] = sample_torso(77);
    CHECK(same_spec(s1, s2));
    REQUIRE(surf1.dense_samples().size() == surf2.dense_samples().size());
    for (std::size_t i = 0; i < surf1.dense_samples().size(); ++i) {
        CHECK(surf1.dense_samples().points[i].x == surf2.dense_samples().points[i].x);
        CHECK(surf1.dense_samples().points[i].z == surf2.dense_samples().points[i].z);
    }
    auto [s3, surf3] = sample_torso(78);
    CHECK_FALSE(same_spec(s1, s3));
}

TEST_CASE("torso population satisfies invariants and spans wide half-axis variation") {
    double a_min = 1e30, a_max = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto [spec, surface] = sample_torso(seed);
        CHECK_NOTHROW(spec.validate());
        CHECK(spec.height >= 40.0);
        CHECK(spec.height <= 80.0);
        for (const TorsoLevel& l : spec.levels) {
            CHECK(l.a > 0.0);
            CHECK(l.b > 0.0);
            CHECK(l.p >= 1.5);
            CHECK(l.p <= 4.0);
        }
        double a_chest, b_chest, p_chest;
        surface.cross_section(0.6 * spec.height, a_chest, b_chest, p_chest);
        a_min = std::min(a_min, a_chest);
        a_max = std::max(a_max, a_chest);
    }
    double mid = 0.5 * (a_min + a_max);
    CHECK(a_max / mid > 1.20);  // spread wider than +-20 percent
    CHECK(a_min / mid < 0.80);
}

TEST_CASE("surface evaluator matches the closed-form superellipse at control levels") {
    TorsoSpec spec = two_band_spec();
    TorsoSurface surface(spec);
    // exactly at the middle control level: no interpolation involved
    double z = 0.30 * spec.height;
    for (double deg : {0.0, 30.0, 77.0, 145.0, 230.0, 333.0}) {
        double th = deg * kPi / 180.0;
        Vec3 p = surface.point_at(z, th);
        double e = 2.0 / 2.8;
        CHECK(p.x == doctest::Approx(14.0 * sgn_pow(std::cos(th), e)).epsilon(1e-12));
        CHECK(p.y == doctest::Approx(9.0 * sgn_pow(std::sin(th), e)).epsilon(1e-12));
        CHECK(p.z == z);
    }
    // halfway between levels 0 and 0.30: linear interpolation by hand
    double zm = 0.15 * spec.height;
    Vec3 pm = surface.point_at(zm, 0.0);
    CHECK(pm.x == doctest::Approx(0.5 * (16.0 + 14.0)).epsilon(1e-12));
    CHECK(pm.y == doctest::Approx(0.0).epsilon(1e-12));
    // the parametric form satisfies the level-set form everywhere
    RandomStream rng(5);
    for (int i = 0; i < 200; ++i) {
        Vec3 q = surface.point_at(rng.uniform(0.0, spec.height), rng.uniform(0.0, 2.0 * kPi));
        CHECK(std::fabs(surface.implicit(q)) < 1e-10);
        CHECK(surface.radial_surface_distance(q) < 1e-9);
    }
}

TEST_CASE("sampled surface points lie on the analytic surface within 1e-6 cm") {
    auto [spec, surface] = sample_torso(3);
    CHECK(surface.dense_samples().size() >= 4096);
    PointCloud cloud = surface.sample_surface(500, 99);
    REQUIRE(cloud.size() == 500);
    for (const Vec3& p : cloud.points) {
        CHECK(surface.radial_surface_distance(p) < 1e-6);
        CHECK(p.z >= 0.0);
        CHECK(p.z <= spec.height);
    }
}

TEST_CASE("torso spec validation rejects bad parameters") {
    TorsoSpec s = cylinder_spec(10, 60);
    s.height = -1;
    CHECK_THROWS_AS(s.validate(), DataError);
    s = cylinder_spec(10, 60);
    s.levels[0].p = 1.0;
    CHECK_THROWS_AS(s.validate(), DataError);
    s = cylinder_spec(10, 60);
    s.levels[1].frac = 0.5;  // must end at 1
    CHECK_THROWS_AS(s.validate(), DataError);
    s = cylinder_spec(10, 60);
    s.levels[0].a = 0.0;
    CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("electrode placement: stations, symmetry, and scaling") {
    auto [spec, surface] = sample_torso(11);
    ElectrodeSet es = place_electrodes(spec, surface);

    SUBCASE("all ten electrodes sit on the analytic surface") {
        for (std::size_t i = 0; i < kNumElectrodes; ++i) {
            double d = surface.radial_surface_distance(es[i]);
            CHECK(d < 0.1);   // chest bound from the contract
            CHECK(d < 1e-9);  // ground truth is exactly on-surface
        }
    }

    SUBCASE("V6 lies on the left mid-axillary line") {
        double a, b, p;
        surface.cross_section(es.at("V6").z, a, b, p);
        CHECK(es.at("V6").y == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(es.at("V6").x == doctest::Approx(a).epsilon(1e-12));
        CHECK(es.at("V6").x > 0.0);  // +x is the subject's left
    }

    SUBCASE("chest band ordering: V1 rightmost, V6 leftmost, V4-V6 share a level") {
        CHECK(es.at("V1").x < es.at("V2").x);
        CHECK(es.at("V2").x < es.at("V4").x);
        CHECK(es.at("V4").x < es.at("V6").x);
        CHECK(es.at("V4").z == doctest::Approx(es.at("V5").z).epsilon(1e-12));
        CHECK(es.at("V5").z == doctest::Approx(es.at("V6").z).epsilon(1e-12));
        CHECK(es.at("LA").z > es.at("V1").z);  // shoulders above chest band
        CHECK(es.at("LL").z < es.at("V6").z);  // abdomen below
        CHECK(es.at("LA").x > 0.0);
        CHECK(es.at("RA").x < 0.0);
    }

    SUBCASE("mirrored placement swaps limb leads and mirrors the V chain") {
        ElectrodeSet mir = place_electrodes(spec, surface, true);
        auto close = [](const Vec3& a, const Vec3& b) {
            return (a - b).norm() < 1e-9;
        };
        CHECK(close(mir.at("LA"), es.at("RA")));
        CHECK(close(mir.at("RA"), es.at("LA")));
        CHECK(close(mir.at("LL"), es.at("RL")));
        CHECK(close(mir.at("RL"), es.at("LL")));
        for (const char* v : {"V1", "V2", "V3", "V4", "V5", "V6"}) {
            Vec3 flipped{-es.at(v).x, es.at(v).y, es.at(v).z};
            CHECK(close(mir.at(v), flipped));
        }
    }

    SUBCASE("heights scale with the torso height factor") {
        TorsoSpec tall = spec;
        tall.height *= 1.25;
        TorsoSurface tall_surface(tall);
        ElectrodeSet es_tall = place_electrodes(tall, tall_surface);
        for (std::size_t i = 0; i < kNumElectrodes; ++i) {
            CHECK(es_tall[i].z == doctest::Approx(1.25 * es[i].z).epsilon(1e-9));
            CHECK(es_tall[i].x == doctest::Approx(es[i].x).epsilon(1e-9));
            CHECK(es_tall[i].y == doctest::Approx(es[i].y).epsilon(1e-9));
        }
    }
}

TEST_CASE("axial slice of a circular cylinder is one closed circle") {
    TorsoSurface surface(cylinder_spec(10.0, 60.0));
    PlaneSpec plane;
    plane.pose = {{0, 0, 30.0}, {1, 0, 0}, {0, 1, 0}};
    plane.u0 = plane.v0 = -15.0;
    plane.u1 = plane.v1 = 15.0;
    plane.view = ViewLabel::LocAxial;
    std::vector<Contour> cs = slice_plane(surface, plane, 0.25);
    REQUIRE(cs.size() == 1);
    const Contour& c = cs[0];
    CHECK(c.closed);
    CHECK(c.polyline.size() > 100);
    for (const Vec2& p : c.polyline)
        CHECK(std::hypot(p.u, p.v) == doctest::Approx(10.0).epsilon(1e-7));
    CHECK(c.arc_length() == doctest::Approx(2.0 * kPi * 10.0).epsilon(5e-3));
}

TEST_CASE("slice respects an asymmetric field of view (half plane)") {
    TorsoSurface surface(cylinder_spec(10.0, 60.0));
    PlaneSpec plane;
    plane.pose = {{0, 0, 30.0}, {1, 0, 0}, {0, 1, 0}};
    plane.u0 = 0.0;
    plane.u1 = 15.0;
    plane.v0 = -15.0;
    plane.v1 = 15.0;
    std::vector<Contour> cs = slice_plane(surface, plane, 0.25);
    REQUIRE(cs.size() == 1);
    CHECK_FALSE(cs[0].closed);
    for (const Vec2& p : cs[0].polyline) CHECK(p.u >= 0.0);
    // roughly half the circumference survives
    CHECK(cs[0].arc_length() > 0.45 * 2.0 * kPi * 10.0);
    CHECK(cs[0].arc_length() < 0.55 * 2.0 * kPi * 10.0);
}

TEST_CASE("tilted slices stay on the analytic surface within 1e-6 cm") {
    auto [spec, surface] = sample_torso(21);
    SliceResult sr = slice_contours(surface, SliceProtocol{}, 404);
    REQUIRE_FALSE(sr.contours.empty());
    std::size_t checked = 0;
    for (const Contour& c : sr.contours.contours) {
        for (const Vec2& p : c.polyline) {
            Vec3 q = c.lift(p);
            CHECK(surface.radial_surface_distance(q) < 1e-6);
            CHECK(q.z >= 0.0);
            CHECK(q.z <= spec.height);
            ++checked;
        }
    }
    CHECK(checked > 500);
}

TEST_CASE("slice_contours is deterministic per seed and varies across seeds") {
    auto [spec, surface] = sample_torso(33);
    SliceProtocol protocol;
    SliceResult a = slice_contours(surface, protocol, 1);
    SliceResult b = slice_contours(surface, protocol, 1);
    REQUIRE(a.contours.contours.size() == b.contours.contours.size());
    for (std::size_t i = 0; i < a.contours.contours.size(); ++i) {
        const Contour& ca = a.contours.contours[i];
        const Contour& cb = b.contours.contours[i];
        REQUIRE(ca.polyline.size() == cb.polyline.size());
        for (std::size_t k = 0; k < ca.polyline.size(); ++k) {
            CHECK(ca.polyline[k].u == cb.polyline[k].u);
            CHECK(ca.polyline[k].v == cb.polyline[k].v);
        }
    }
    SliceResult c = slice_contours(surface, protocol, 2);
    bool differs = a.contours.contours.size() != c.contours.contours.size();
    if (!differs) {
        for (std::size_t i = 0; i < a.contours.contours.size() && !differs; ++i)
            differs = a.contours.contours[i].polyline.size() !=
                      c.contours.contours[i].polyline.size();
    }
    CHECK(differs);
}

TEST_CASE("total dropout falls back to one localizer and flags it") {
    auto [spec, surface] = sample_torso(8);
    SliceProtocol protocol = tiny_protocol();
    protocol.drop_sax = protocol.drop_lax = protocol.drop_loc = 1.0;
    SliceResult sr = slice_contours(surface, protocol, 5);
    CHECK(sr.fallback_used);
    REQUIRE_FALSE(sr.contours.empty());
    for (const Contour& c : sr.contours.contours) CHECK(c.view == ViewLabel::LocAxial);
}

TEST_CASE("gap model removes the configured arc fraction") {
    auto [spec, surface] = sample_torso(14);
    SliceProtocol protocol;
    protocol.sax_count = 0;
    protocol.lax_count = 0;
    protocol.loc_sagittal = 0;
    protocol.loc_coronal = 0;
    protocol.loc_axial = 1;
    protocol.drop_sax = protocol.drop_lax = protocol.drop_loc = 0.0;
    protocol.loc_fov_half = 30.0;  // whole cross-section in view

    SliceProtocol no_gaps = protocol;
    no_gaps.gap_prob_mid = no_gaps.gap_prob_extreme = 0.0;
    SliceProtocol gaps = protocol;
    gaps.gap_prob_mid = gaps.gap_prob_extreme = 1.0;
    gaps.gap_frac_min = gaps.gap_frac_max = 0.2;

    double full = slice_contours(surface, no_gaps, 7).contours.total_arc_length();
    double cut = slice_contours(surface, gaps, 7).contours.total_arc_length();
    CHECK(cut < full);
    CHECK(cut == doctest::Approx(0.8 * full).epsilon(0.04));
}

TEST_CASE("default protocol leaves most of the surface uncovered") {
    // the incompleteness regime: < 40% of dense surface within 2 cm of any
    // contour point
    for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
        auto [spec, surface] = sample_torso(seed);
        SliceResult sr = slice_contours(surface, SliceProtocol{}, mix_seed(seed, 1));
        PointCloud contour_points = sr.contours.all_points();
        REQUIRE_FALSE(contour_points.empty());
        SpatialIndex index(contour_points);
        const PointCloud& dense = surface.dense_samples();
        std::size_t covered = 0;
        for (const Vec3& p : dense.points)
            if (index.nearest(p).distance2 <= 4.0) ++covered;  // within 2 cm
        double coverage = static_cast<double>(covered) / static_cast<double>(dense.size());
        INFO("seed ", seed, " coverage ", coverage);
        CHECK(coverage < 0.40);
        CHECK(coverage > 0.02);  // but not degenerate either
    }
}

TEST_CASE("manifest text round-trips") {
    DatasetManifest m;
    m.seed = 99;
    m.n_subjects = 3;
    m.subjects = {{"s0000", "train", 5}, {"s0001", "val", 6}, {"s0002", "test", 7}};
    DatasetManifest r = manifest_from_text(manifest_to_text(m));
    CHECK(r.seed == 99);
    REQUIRE(r.subjects.size() == 3);
    CHECK(r.subjects[1].id == "s0001");
    CHECK(r.subjects[1].split == "val");
    CHECK(r.subjects[2].seed == 7);
    CHECK(r.ids_for_split("train") == std::vector<std::string>{"s0000"});
    CHECK_THROWS_AS(r.record("nope"), DataError);
    CHECK_THROWS_AS(manifest_from_text("s0 bogus 1\n"), DataError);
}

TEST_CASE("dataset splits follow the 60/10/30 rule") {
    SUBCASE("n=200 gives 120/20/60") {
        MakeDatasetOptions opt;
        opt.n_subjects = 200;
        opt.seed = 1;
        opt.out_dir = fresh_dir("elok_ds200").string();
        opt.protocol = tiny_protocol();
        opt.n_coarse = 32;  // split logic only; keep files small
        opt.n_dense = 64;
        opt.n_topology = 16;
        opt.threads = 4;
        DatasetManifest m = make_dataset(opt);
        CHECK(m.ids_for_split("train").size() == 120);
        CHECK(m.ids_for_split("val").size() == 20);
        CHECK(m.ids_for_split("test").size() == 60);
        DatasetManifest reread = read_manifest(opt.out_dir);
        CHECK(manifest_to_text(reread) == manifest_to_text(m));
        fs::remove_all(opt.out_dir);
    }
    SUBCASE("n=10 gives 6/1/3") {
        MakeDatasetOptions opt;
        opt.n_subjects = 10;
        opt.seed = 2;
        opt.out_dir = fresh_dir("elok_ds10").string();
        opt.protocol = tiny_protocol();
        opt.n_coarse = 32;
        opt.n_dense = 64;
        opt.n_topology = 16;
        DatasetManifest m = make_dataset(opt);
        CHECK(m.ids_for_split("train").size() == 6);
        CHECK(m.ids_for_split("val").size() == 1);
        CHECK(m.ids_for_split("test").size() == 3);
        fs::remove_all(opt.out_dir);
    }
}

TEST_CASE("dataset artifacts: topology target, surface membership, round-trip") {
    MakeDatasetOptions opt;
    opt.n_subjects = 3;
    opt.seed = 9;
    opt.out_dir = fresh_dir("elok_ds3").string();
    opt.protocol = tiny_protocol();
    opt.n_coarse = 128;
    opt.n_dense = 512;
    opt.n_topology = 32;
    DatasetManifest m = make_dataset(opt);
    REQUIRE(m.subjects.size() == 3);

    Subject s = load_subject(opt.out_dir, "s0001");
    CHECK(s.coarse.size() == 128);
    CHECK(s.dense.size() == 512);
    CHECK(s.topology.size() == 32);
    REQUIRE_FALSE(s.contours.empty());

    // topology target is the FPS subset of the stored dense cloud
    PointCloud expect = fps(s.dense, 32, 0);
    for (std::size_t i = 0; i < 32; ++i) {
        CHECK(s.topology.points[i].x == expect.points[i].x);
        CHECK(s.topology.points[i].y == expect.points[i].y);
        CHECK(s.topology.points[i].z == expect.points[i].z);
    }

    // ground truth agrees with the regenerated analytic surface
    auto [spec, surface] = sample_torso(m.record("s0001").seed);
    for (const Vec3& p : s.dense.points) CHECK(surface.radial_surface_distance(p) < 1e-5);
    ElectrodeSet regenerated = place_electrodes(spec, surface);
    for (std::size_t i = 0; i < kNumElectrodes; ++i)
        CHECK((s.electrodes[i] - regenerated[i]).norm() < 1e-12);
    CHECK(s.meta.count("height") == 1);
    CHECK(s.meta.count("bmi_scale") == 1);
    fs::remove_all(opt.out_dir);
}

TEST_CASE("dataset regeneration is bit-identical, independent of threads") {
    MakeDatasetOptions opt;
    opt.n_subjects = 4;
    opt.seed = 31;
    opt.protocol = tiny_protocol();
    opt.n_coarse = 64;
    opt.n_dense = 256;
    opt.n_topology = 16;

    MakeDatasetOptions a = opt, b = opt;
    a.out_dir = fresh_dir("elok_dsa").string();
    a.threads = 1;
    b.out_dir = fresh_dir("elok_dsb").string();
    b.threads = 4;
    make_dataset(a);
    make_dataset(b);

    std::vector<fs::path> rels;
    for (const auto& e : fs::recursive_directory_iterator(a.out_dir))
        if (e.is_regular_file()) rels.push_back(fs::relative(e.path(), a.out_dir));
    std::sort(rels.begin(), rels.end());
    REQUIRE(rels.size() == 4 * 6 + 1);  // six files per subject + manifest
    for (const fs::path& rel : rels) {
        INFO("file ", rel.string());
        CHECK(slurp(fs::path(a.out_dir) / rel) == slurp(fs::path(b.out_dir) / rel));
    }
    fs::remove_all(a.out_dir);
    fs::remove_all(b.out_dir);
}
