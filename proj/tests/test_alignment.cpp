#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "sketchmass/alignment.hpp"
#include "sketchmass/errors.hpp"
#include "test_util.hpp"

using namespace sketchmass;
using sketchmass::testing::fan_prism;

namespace {

constexpr double kPi = std::numbers::pi;

// Exhaustive oracle: evaluate every edge-aligned rectangle and apply the
// documented tie-break directly.
Obb2D brute_force_obb(const std::vector<Vec2>& hull) {
    double best_area = INFINITY;
    for (std::size_t i = 0; i < hull.size(); ++i) best_area = std::min(best_area, obb_for_edge(hull, i).area());
    Obb2D best;
    bool have = false;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Obb2D c = obb_for_edge(hull, i);
        if (c.area() > best_area * (1 + 1e-9)) continue;
        const double a = c.angle(), b = best.angle();
        if (!have || std::abs(a) < std::abs(b) - 1e-12 || (std::abs(std::abs(a) - std::abs(b)) <= 1e-12 && a > b)) {
            best = c;
            have = true;
        }
    }
    return best;
}

std::vector<Vec2> rect(double w, double h, double angle, const Vec2& c = Vec2::Zero()) {
    const Eigen::Rotation2Dd r(angle);
    std::vector<Vec2> pts;
    for (auto [x, y] : {std::pair{-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}}) {
        pts.push_back(c + r * Vec2(0.5 * w * x, 0.5 * h * y));
    }
    return pts;
}

double angle_mod_pi_error(double a, double b) {
    const double d = std::remainder(a - b, kPi);
    return std::abs(d);
}

TriangleMesh random_footprint_prism(std::mt19937_64& gen) {
    // Rectangle with one chamfered corner: aspect > 1.2 by construction.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double w = 1.0 + u(gen), h = w / (1.3 + u(gen));
    const double cut = 0.2 * h * u(gen) + 0.05 * h;
    std::vector<Vec2> poly{{0, 0}, {w, 0}, {w, h - cut}, {w - cut, h}, {0, h}};
    const double z1 = 0.5 + u(gen);
    return fan_prism(poly, 0.0, z1);
}

}  // namespace

TEST_CASE("wrap_half_pi maps into (-pi/2, pi/2]") {
    CHECK(wrap_half_pi(kPi / 2) == doctest::Approx(kPi / 2));
    CHECK(wrap_half_pi(-kPi / 2) == doctest::Approx(kPi / 2));
    CHECK(wrap_half_pi(kPi) == doctest::Approx(0.0));
    CHECK(wrap_half_pi(3.0) == doctest::Approx(3.0 - kPi));
}

TEST_CASE("xy_projection_hull") {
    SUBCASE("unit cube") {
        const auto hull = xy_projection_hull(sketchmass::testing::unit_cube());
        CHECK(hull.size() == 4);
    }
    SUBCASE("L footprint hull drops the reflex corner") {
        const std::vector<Vec2> L{{0, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 2}};
        const auto hull = xy_projection_hull(fan_prism(L, 0, 1));
        REQUIRE(hull.size() == 5);
        for (const auto& p : hull) CHECK((p - Vec2(1, 1)).norm() > 1e-9);
        // Counter-clockwise.
        double area2 = 0;
        for (std::size_t i = 0; i < hull.size(); ++i) {
            const auto& a = hull[i];
            const auto& b = hull[(i + 1) % hull.size()];
            area2 += a.x() * b.y() - a.y() * b.x();
        }
        CHECK(area2 / 2 == doctest::Approx(3.5));
    }
    SUBCASE("vertical line is collinear") {
        std::vector<Vec3> v{{0, 0, 0}, {0, 0, 1}, {0, 0, 2}};
        CHECK_THROWS_AS(xy_projection_hull(TriangleMesh(v, {{0, 1, 2}})), GeometryError);
    }
}

TEST_CASE("min_area_obb") {
    SUBCASE("axis aligned 2x1") {
        const auto box = min_area_obb(rect(2, 1, 0));
        CHECK((box.axis_u - Vec2(1, 0)).norm() < 1e-12);
        CHECK(box.half_extents.x() == doctest::Approx(1.0));
        CHECK(box.half_extents.y() == doctest::Approx(0.5));
    }
    SUBCASE("rotated by 30 degrees") {
        const auto hull = convex_hull_2d(rect(2, 1, kPi / 6));
        const auto box = min_area_obb(hull);
        CHECK(std::abs(box.angle() - kPi / 6) < 1e-9);
        CHECK(box.half_extents.x() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(box.half_extents.y() == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("square tie-break matches exhaustive enumeration") {
        for (double a : {0.0, 0.3, kPi / 4, -kPi / 4, 1.2, -0.7}) {
            const auto hull = convex_hull_2d(rect(1, 1, a));
            const auto box = min_area_obb(hull);
            const auto ref = brute_force_obb(hull);
            CHECK(std::abs(box.angle() - ref.angle()) < 1e-12);
            CHECK(std::abs(box.angle()) <= kPi / 4 + 1e-12);
        }
        CHECK(min_area_obb(convex_hull_2d(rect(1, 1, kPi / 4))).angle() == doctest::Approx(kPi / 4));
    }
    SUBCASE("calipers agree with exhaustive search on random hulls") {
        std::mt19937_64 gen(5);
        std::normal_distribution<double> n(0, 1);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<Vec2> pts;
            const int count = 3 + trial % 40;
            for (int i = 0; i < count; ++i) pts.emplace_back(2.0 * n(gen), 0.7 * n(gen));
            std::vector<Vec2> hull;
            try {
                hull = convex_hull_2d(pts);
            } catch (const GeometryError&) {
                continue;
            }
            const auto box = min_area_obb(hull);
            const auto ref = brute_force_obb(hull);
            CHECK(box.area() == doctest::Approx(ref.area()).epsilon(1e-9));
            CHECK(std::abs(box.axis_u.norm() - 1.0) < 1e-9);
            CHECK(box.half_extents.x() >= box.half_extents.y());
            CHECK(box.angle() > -kPi / 2);
            CHECK(box.angle() <= kPi / 2);
            // Every hull point is enclosed.
            const Vec2 v(-box.axis_u.y(), box.axis_u.x());
            for (const auto& p : hull) {
                CHECK(std::abs((p - box.center).dot(box.axis_u)) <= box.half_extents.x() + 1e-9);
                CHECK(std::abs((p - box.center).dot(v)) <= box.half_extents.y() + 1e-9);
            }
        }
    }
}

TEST_CASE("rotate_z") {
    const auto cube = sketchmass::testing::unit_cube();
    CHECK(rotate_z(cube, 0.0).vertices() == cube.vertices());
    const auto twice = rotate_z(rotate_z(cube, kPi), kPi);
    for (std::size_t i = 0; i < cube.num_vertices(); ++i) {
        const auto id = static_cast<std::uint32_t>(i);
        CHECK((twice.vertex(id) - cube.vertex(id)).norm() < 1e-12);
    }
    const auto r = rotate_z(cube, kPi / 4);
    // Corner 7 is (0.5, 0.5, 0.5).
    CHECK((r.vertex(7) - Vec3(0, std::sqrt(2.0) / 2, 0.5)).norm() < 1e-12);
    CHECK(r.faces() == cube.faces());
}

TEST_CASE("align_to_canonical") {
    const auto box = make_box(Vec3(-1, -0.5, -0.5), Vec3(1, 0.5, 0.5));
    SUBCASE("axis aligned box is unchanged") {
        const auto res = align_to_canonical(box);
        CHECK(res.theta == doctest::Approx(0.0));
        for (std::size_t i = 0; i < box.num_vertices(); ++i) {
            const auto id = static_cast<std::uint32_t>(i);
            CHECK((res.aligned_mesh.vertex(id) - box.vertex(id)).norm() < 1e-12);
        }
    }
    SUBCASE("yawed box recovers the yaw") {
        const auto yawed = rotate_z(box, 0.6);
        const auto res = align_to_canonical(yawed);
        CHECK(std::abs(res.theta - 0.6) < 1e-6);
        for (std::size_t i = 0; i < box.num_vertices(); ++i) {
            const auto id = static_cast<std::uint32_t>(i);
            CHECK((res.aligned_mesh.vertex(id) - box.vertex(id)).norm() < 1e-9);
        }
        CHECK(std::abs(res.rotation.determinant() - 1.0) < 1e-9);
        CHECK((res.rotation.transpose() * res.rotation - Mat3::Identity()).norm() < 1e-9);
        const auto back = rotate_z(res.aligned_mesh, res.theta, res.pivot);
        for (std::size_t i = 0; i < box.num_vertices(); ++i) {
            const auto id = static_cast<std::uint32_t>(i);
            CHECK((back.vertex(id) - yawed.vertex(id)).norm() < 1e-9);
        }
    }
    SUBCASE("square tower is deterministic") {
        const auto tower = make_box(Vec3(-0.5, -0.5, 0), Vec3(0.5, 0.5, 3));
        for (double yaw : {0.0, 0.2, kPi / 4, 1.0, -1.3}) {
            const auto a = align_to_canonical(rotate_z(tower, yaw));
            const auto b = align_to_canonical(rotate_z(tower, yaw));
            CHECK(a.theta == b.theta);
            CHECK(std::abs(a.theta) <= kPi / 4 + 1e-9);
            CHECK(angle_mod_pi_error(2 * a.theta, 2 * yaw) < 1e-6);  // modulo pi/2
        }
    }
}

TEST_CASE("alignment properties on random footprints") {
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> yaw(-4.0, 4.0);
    for (int trial = 0; trial < 60; ++trial) {
        const auto mesh = rotate_z(random_footprint_prism(gen), yaw(gen));
        const auto first = align_to_canonical(mesh);
        CHECK(first.theta > -kPi / 2);
        CHECK(first.theta <= kPi / 2);

        const auto second = align_to_canonical(first.aligned_mesh);
        CHECK(std::abs(second.theta) < 1e-6);

        const double phi = yaw(gen);
        const auto turned = align_to_canonical(rotate_z(first.aligned_mesh, phi));
        CHECK(angle_mod_pi_error(turned.theta, phi) < 1e-5);

        const double v0 = mesh_volume(mesh).volume, v1 = mesh_volume(first.aligned_mesh).volume;
        CHECK(std::abs(v1 - v0) / v0 < 1e-9);
        const double a0 = surface_area(mesh), a1 = surface_area(first.aligned_mesh);
        CHECK(std::abs(a1 - a0) / a0 < 1e-9);
        const auto b0 = bounding_box(mesh), b1 = bounding_box(first.aligned_mesh);
        CHECK(std::abs(b1.extent().z() - b0.extent().z()) < 1e-12);
    }
}
