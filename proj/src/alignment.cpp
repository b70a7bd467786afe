#include "sketchmass/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sketchmass/errors.hpp"

namespace sketchmass {

namespace {

constexpr double kHullEps = 1e-9;
constexpr double kAreaTieRel = 1e-9;

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Among equal-area candidates: smaller |angle| wins, then the positive one.
bool preferred_angle(double a, double b) {
    const double da = std::abs(a), db = std::abs(b);
    if (std::abs(da - db) > 1e-12) return da < db;
    return a > b;
}

Obb2D canonical_rect(const Vec2& center, const Vec2& dir_e, double half_e, double half_n) {
    const Vec2 dir_n(-dir_e.y(), dir_e.x());
    Obb2D box;
    box.center = center;
    Vec2 axis;
    if (std::abs(half_e - half_n) <= kAreaTieRel * std::max(half_e, half_n)) {
        // Square: either side may serve as the long side.
        const double ae = wrap_half_pi(std::atan2(dir_e.y(), dir_e.x()));
        const double an = wrap_half_pi(std::atan2(dir_n.y(), dir_n.x()));
        const double pick = preferred_angle(ae, an) ? ae : an;
        axis = Vec2(std::cos(pick), std::sin(pick));
        box.half_extents = Vec2(std::max(half_e, half_n), std::min(half_e, half_n));
    } else if (half_e > half_n) {
        axis = dir_e;
        box.half_extents = Vec2(half_e, half_n);
    } else {
        axis = dir_n;
        box.half_extents = Vec2(half_n, half_e);
    }
    const double a = wrap_half_pi(std::atan2(axis.y(), axis.x()));
    box.axis_u = Vec2(std::cos(a), std::sin(a));
    return box;
}

}  // namespace

double Obb2D::angle() const { return std::atan2(axis_u.y(), axis_u.x()); }

double wrap_half_pi(double angle) {
    constexpr double pi = std::numbers::pi;
    double a = std::remainder(angle, pi);  // [-pi/2, pi/2]
    if (a <= -pi / 2) a += pi;
    return a;
}

std::vector<Vec2> convex_hull_2d(std::span<const Vec2> input) {
    std::vector<Vec2> pts(input.begin(), input.end());
    std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Vec2& a, const Vec2& b) { return (a - b).norm() <= kHullEps; }),
              pts.end());
    if (pts.size() < 3) throw GeometryError("projection is collinear");

    // Andrew's monotone chain; the tolerance drops collinear points.
    std::vector<Vec2> hull(2 * pts.size());
    std::size_t k = 0;
    for (const Vec2& p : pts) {
        while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= kHullEps) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        const Vec2& p = pts[i];
        while (k >= lower && cross2(hull[k - 2], hull[k - 1], p) <= kHullEps) --k;
        hull[k++] = p;
    }
    hull.resize(k - 1);
    if (hull.size() < 3) throw GeometryError("projection is collinear");
    return hull;
}

std::vector<Vec2> xy_projection_hull(const TriangleMesh& mesh) {
    std::vector<Vec2> pts;
    pts.reserve(mesh.num_vertices());
    for (const Vec3& v : mesh.vertices()) pts.emplace_back(v.x(), v.y());
    return convex_hull_2d(pts);
}

Obb2D obb_for_edge(std::span<const Vec2> hull, std::size_t edge) {
    const std::size_t n = hull.size();
    const Vec2 e = (hull[(edge + 1) % n] - hull[edge]).normalized();
    const Vec2 nrm(-e.y(), e.x());
    double lo_e = INFINITY, hi_e = -INFINITY, lo_n = INFINITY, hi_n = -INFINITY;
    for (const Vec2& p : hull) {
        const double pe = p.dot(e), pn = p.dot(nrm);
        lo_e = std::min(lo_e, pe);
        hi_e = std::max(hi_e, pe);
        lo_n = std::min(lo_n, pn);
        hi_n = std::max(hi_n, pn);
    }
    const Vec2 center = 0.5 * (lo_e + hi_e) * e + 0.5 * (lo_n + hi_n) * nrm;
    return canonical_rect(center, e, 0.5 * (hi_e - lo_e), 0.5 * (hi_n - lo_n));
}

Obb2D min_area_obb(std::span<const Vec2> hull) {
    const std::size_t n = hull.size();
    if (n < 3) throw GeometryError("OBB needs at least 3 hull points");

    // Rotating calipers: for edge i the support points along +e, +n (inward
    // normal of a CCW hull) and -e advance monotonically.
    auto dir = [&](std::size_t i) { return Vec2((hull[(i + 1) % n] - hull[i]).normalized()); };
    std::size_t far_e = 0, far_n = 0, near_e = 0;
    const Vec2 e0 = dir(0);
    const Vec2 n0(-e0.y(), e0.x());
    for (std::size_t j = 0; j < n; ++j) {
        if (hull[j].dot(e0) > hull[far_e].dot(e0)) far_e = j;
        if (hull[j].dot(n0) > hull[far_n].dot(n0)) far_n = j;
        if (hull[j].dot(e0) < hull[near_e].dot(e0)) near_e = j;
    }

    Obb2D best;
    double best_area = INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 e = dir(i);
        const Vec2 nrm(-e.y(), e.x());
        auto advance = [&](std::size_t& k, const Vec2& axis, double sign) {
            for (std::size_t guard = 0; guard < n; ++guard) {
                const std::size_t next = (k + 1) % n;
                if (!(sign * hull[next].dot(axis) > sign * hull[k].dot(axis))) break;
                k = next;
            }
        };
        advance(far_e, e, 1.0);
        advance(far_n, nrm, 1.0);
        advance(near_e, e, -1.0);

        const double base_n = hull[i].dot(nrm);
        const double lo_e = hull[near_e].dot(e), hi_e = hull[far_e].dot(e);
        const double hi_n = hull[far_n].dot(nrm);
        const double half_e = 0.5 * (hi_e - lo_e), half_n = 0.5 * (hi_n - base_n);
        const double area = 4.0 * half_e * half_n;
        const Vec2 center = 0.5 * (lo_e + hi_e) * e + 0.5 * (base_n + hi_n) * nrm;
        const Obb2D cand = canonical_rect(center, e, half_e, half_n);

        const double tol = kAreaTieRel * std::max(area, best_area == INFINITY ? area : best_area);
        if (area < best_area - tol ||
            (std::abs(area - best_area) <= tol && preferred_angle(cand.angle(), best.angle()))) {
            best = cand;
            best_area = std::min(area, best_area);
        }
    }
    return best;
}

Mat3 z_rotation(double theta) {
    return Eigen::AngleAxisd(theta, Vec3::UnitZ()).toRotationMatrix();
}

TriangleMesh rotate_z(const TriangleMesh& mesh, double theta) {
    const Mat3 r = z_rotation(theta);
    return mesh.transformed([&](const Vec3& p) { return Vec3(r * p); });
}

TriangleMesh rotate_z(const TriangleMesh& mesh, double theta, const Vec2& pivot) {
    const Mat3 r = z_rotation(theta);
    const Vec3 c(pivot.x(), pivot.y(), 0.0);
    return mesh.transformed([&](const Vec3& p) { return Vec3(r * (p - c) + c); });
}

AlignmentResult align_to_canonical(const TriangleMesh& mesh) {
    const auto hull = xy_projection_hull(mesh);
    const Obb2D box = min_area_obb(hull);
    AlignmentResult r;
    r.theta = wrap_half_pi(box.angle());
    r.rotation = z_rotation(-r.theta);
    r.pivot = box.center;
    r.aligned_mesh = rotate_z(mesh, -r.theta, box.center);
    return r;
}

}  // namespace sketchmass
