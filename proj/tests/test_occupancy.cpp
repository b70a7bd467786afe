#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "sketchmass/alignment.hpp"
#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/occupancy.hpp"
#include "sketchmass/rng.hpp"
#include "test_util.hpp"

using namespace sketchmass;
using sketchmass::testing::TempDir;
using sketchmass::testing::unit_cube;

namespace {

std::vector<TriangleMesh> oracle_meshes() {
    std::vector<TriangleMesh> out;
    out.push_back(unit_cube());
    out.push_back(make_icosphere(0.45, 2));
    out.push_back(rotate_z(make_box(Vec3(-0.4, -0.1, -0.3), Vec3(0.4, 0.1, 0.3)), 0.7));
    const std::vector<Vec2> L{{-0.4, -0.4}, {0.4, -0.4}, {0.4, -0.1}, {-0.1, -0.1}, {-0.1, 0.4}, {-0.4, 0.4}};
    out.push_back(rotate_z(sketchmass::testing::fan_prism(L, -0.3, 0.35), 0.3));
    out.push_back(merge(make_box(Vec3(-0.45, -0.45, -0.45), Vec3(-0.05, 0.0, 0.1)),
                        make_icosphere(0.2, 1, Vec3(0.2, 0.2, 0.2))));
    return out;
}

}  // namespace

TEST_CASE("sample_points_uniform") {
    SUBCASE("single point, no padding") {
        for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
            const auto p = sample_points_uniform({1, 0.0, seed});
            REQUIRE(p.size() == 1);
            CHECK(p[0].cwiseAbs().maxCoeff() <= 0.5);
        }
    }
    SUBCASE("mean and bounds") {
        const auto p = sample_points_uniform({100000, 0.05, 42});
        Vec3 mean = Vec3::Zero();
        for (const auto& q : p) {
            CHECK_MESSAGE(q.cwiseAbs().maxCoeff() <= 0.55, "point outside padded cube");
            mean += q;
        }
        mean /= static_cast<double>(p.size());
        CHECK(mean.cwiseAbs().maxCoeff() < 0.01);
    }
    SUBCASE("deterministic per seed and shape") {
        const auto a = sample_points_uniform({1000, 0.05, 7}, "s1");
        CHECK(a == sample_points_uniform({1000, 0.05, 7}, "s1"));
        CHECK(a != sample_points_uniform({1000, 0.05, 7}, "s2"));
        CHECK(a != sample_points_uniform({1000, 0.05, 8}, "s1"));
        for (const auto& q : a) {
            for (int k = 0; k < 3; ++k) CHECK(static_cast<double>(static_cast<float>(q[k])) == q[k]);
        }
    }
    SUBCASE("config validation") { CHECK_THROWS_AS(sample_points_uniform({0, 0.05, 1}), ConfigError); }
}

TEST_CASE("occupancy_zray basics") {
    const auto cube = unit_cube();
    CHECK(occupancy_zray(cube, Vec3(0, 0, 0)));
    CHECK_FALSE(occupancy_zray(cube, Vec3(2, 0, 0)));
    CHECK_FALSE(occupancy_zray(cube, Vec3(0, 0, -0.9)));
    CHECK_FALSE(occupancy_zray(cube, Vec3(0, 0, 0.9)));

    SUBCASE("ray through a cap diagonal is disambiguated") {
        // The z caps are split along x == y; these rays hit the shared edge.
        CHECK(occupancy_zray(cube, Vec3(0.1, 0.1, 0.2)));
        CHECK(occupancy_zray(cube, Vec3(-0.3, -0.3, -0.2)));
        CHECK_FALSE(occupancy_zray(cube, Vec3(0.1, 0.1, -0.8)));
        CHECK(occupancy_zray(cube, Vec3(0.0, 0.0, 0.0)));
    }
    SUBCASE("ray through a vertex") {
        const auto sphere = make_icosphere(0.4, 1);
        const Vec3 v = sphere.vertex(0);
        CHECK(occupancy_zray(sphere, Vec3(v.x(), v.y(), v.z() - 0.05)) ==
              winding_number_oracle(sphere, Vec3(v.x(), v.y(), v.z() - 0.05)));
    }
}

TEST_CASE("winding number oracle") {
    const auto cube = unit_cube();
    CHECK(winding_number(cube, Vec3(0, 0, 0)) == doctest::Approx(1.0));
    CHECK(winding_number(cube, Vec3(2, 0, 0)) == doctest::Approx(0.0));
    CHECK(winding_number_oracle(cube, Vec3(0.1, 0.2, 0.3)));
    CHECK_FALSE(winding_number_oracle(cube, Vec3(2, 0, 0)));
}

TEST_CASE("point_triangle_distance regions") {
    const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
    CHECK(point_triangle_distance(Vec3(0.2, 0.2, 0.5), a, b, c) == doctest::Approx(0.5));
    CHECK(point_triangle_distance(Vec3(-1, -1, 0), a, b, c) == doctest::Approx(std::sqrt(2.0)));
    CHECK(point_triangle_distance(Vec3(0.5, -2, 0), a, b, c) == doctest::Approx(2.0));
    CHECK(point_triangle_distance(Vec3(1, 1, 0), a, b, c) == doctest::Approx(std::sqrt(0.5)));
    CHECK(point_triangle_distance(Vec3(2, 0, 0), a, b, c) == doctest::Approx(1.0));
}

TEST_CASE("parity agrees with the winding number") {
    const auto pts = sample_points_uniform({10000, 0.05, 3}, "oracle");
    for (const auto& mesh : oracle_meshes()) {
        REQUIRE(is_watertight(mesh));
        const ParityTester tester(mesh);
        std::size_t agree = 0, counted = 0;
        for (const auto& p : pts) {
            if (std::isfinite(tester.near_surface_distance(p))) continue;
            ++counted;
            agree += tester.inside(p) == winding_number_oracle(mesh, p) ? 1 : 0;
        }
        CHECK(static_cast<double>(agree) >= 0.999 * static_cast<double>(counted));
    }
}

TEST_CASE("label_points") {
    const auto cube = unit_cube();
    std::vector<Vec3> in_pts, out_pts;
    for (int i = 0; i < 8; ++i) {
        const Vec3 s(i & 1 ? 1 : -1, i & 2 ? 1 : -1, i & 4 ? 1 : -1);
        in_pts.push_back(0.25 * s);
        out_pts.push_back(0.75 * s);
    }
    const auto fin = label_points(cube, in_pts);
    const auto fout = label_points(cube, out_pts);
    for (int i = 0; i < 8; ++i) {
        CHECK(fin.labels[i] == 1);
        CHECK(fout.labels[i] == 0);
    }
    CHECK(fin.points == in_pts);

    SUBCASE("sphere inside fraction") {
        const auto sphere = make_icosphere(0.4, 4);
        const auto pts = sample_points_uniform({100000, 0.0, 17});
        const auto f = label_points(sphere, pts);
        const double frac = std::count(f.labels.begin(), f.labels.end(), 1) / 1e5;
        CHECK(std::abs(frac - 4.0 / 3.0 * std::numbers::pi * 0.064) < 0.01);
        CHECK(std::abs(frac - mesh_volume(sphere).volume) < 3 * std::sqrt(0.27 * 0.73 / 1e5));
    }
    SUBCASE("invariances") {
        const auto mesh = oracle_meshes()[3];
        const auto pts = sample_points_uniform({5000, 0.05, 5});
        const auto base = label_points(mesh, pts);

        auto faces = mesh.faces();
        std::mt19937_64 gen(1);
        std::shuffle(faces.begin(), faces.end(), gen);
        CHECK(label_points(TriangleMesh(mesh.vertices(), faces), pts).labels == base.labels);

        const Vec3 shift(0.3125, -0.25, 0.125);  // exact in binary
        std::vector<Vec3> moved;
        for (const auto& p : pts) moved.push_back(p + shift);
        const auto tmesh = mesh.transformed([&](const Vec3& p) { return Vec3(p + shift); });
        CHECK(label_points(tmesh, moved).labels == base.labels);

        CHECK(label_points(mesh, pts, {}, 4).labels == base.labels);

        ParityOptions vote;
        vote.three_axis_vote = true;
        CHECK(label_points(mesh, pts, vote).labels == base.labels);
    }
}

TEST_CASE("subsample") {
    OccupancyField field;
    field.shape_id = "shape";
    field.points = sample_points_uniform({100000, 0.05, 1}, "shape");
    for (std::size_t i = 0; i < field.points.size(); ++i) field.labels.push_back(field.points[i].x() > 0 ? 1 : 0);

    SUBCASE("k = N is a permutation") {
        OccupancyField small = subsample(field, 50, 9);
        const auto perm = subsample(small, 50, 3);
        auto a = small.points, b = perm.points;
        auto less = [](const Vec3& p, const Vec3& q) { return std::lexicographical_compare(p.data(), p.data() + 3, q.data(), q.data() + 3); };
        std::sort(a.begin(), a.end(), less);
        std::sort(b.begin(), b.end(), less);
        CHECK(a == b);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(subsample(field, 0, 1), DataError);
        CHECK(subsample(field, 0, 1, true).size() == 0);
        CHECK_THROWS_AS(subsample(field, 100001, 1), DataError);
    }
    SUBCASE("pairing and golden checksum") {
        const auto s = subsample(field, 2048, 1234);
        REQUIRE(s.size() == 2048);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.labels[i] == (s.points[i].x() > 0 ? 1 : 0));
        const auto idx = subsample_indices(100000, 2048, 1234, "shape");
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (auto i : idx) h = fnv1a64(std::to_string(i) + ",", h);
        CHECK(hex64(h) == "2a299f790e963e22");
        CHECK(subsample(field, 2048, 1234).points == s.points);
    }
}

TEST_CASE("OCC1 file format") {
    TempDir dir("occ");
    OccupancyField f;
    f.shape_id = "abc";
    f.points = sample_points_uniform({13, 0.05, 2});
    for (int i = 0; i < 13; ++i) f.labels.push_back(i % 3 == 0);
    write_occ1(dir / "field.occ1", f);
    const auto bytes = read_file(dir / "field.occ1");
    CHECK(bytes.size() == 4 + 4 + 13 * 12 + 2);
    CHECK(bytes.substr(0, 4) == "OCC1");
    CHECK(static_cast<unsigned char>(bytes[4]) == 13);
    // Labels 0, 3, 6 in the first byte and 9, 12 in the second, LSB first.
    CHECK(static_cast<unsigned char>(bytes[8 + 156]) == 0b01001001);
    CHECK(static_cast<unsigned char>(bytes[8 + 157]) == 0b00010010);

    const auto back = read_occ1(dir / "field.occ1");
    CHECK(back.points == f.points);
    CHECK(back.labels == f.labels);

    write_file(dir / "bad.occ1", bytes.substr(0, bytes.size() - 1));
    CHECK_THROWS_AS(read_occ1(dir / "bad.occ1"), DataError);
    write_file(dir / "magic.occ1", "OCC2" + bytes.substr(4));
    CHECK_THROWS_AS(read_occ1(dir / "magic.occ1"), DataError);

    write_occ1_sidecar(dir / "field.json", f);
    const auto side = read_file(dir / "field.json");
    CHECK(side.find("\"shape_id\": \"abc\"") != std::string::npos);
    CHECK(side.find("\"n\": 13") != std::string::npos);
}
