#pragma once

#include <span>
#include <vector>

#include "sketchmass/geometry.hpp"

namespace sketchmass {

/// Oriented rectangle in the xy plane. After canonicalization
/// half_extents.x() >= half_extents.y() and axis_u points along the longer
/// side with its angle to +x in (-pi/2, pi/2].
struct Obb2D {
    Vec2 center = Vec2::Zero();
    Vec2 half_extents = Vec2::Zero();
    Vec2 axis_u = Vec2::UnitX();

    double area() const { return 4.0 * half_extents.x() * half_extents.y(); }
    double angle() const;
};

struct AlignmentResult {
    double theta = 0.0;     // yaw of the footprint's long side, (-pi/2, pi/2]
    Mat3 rotation;          // z rotation by -theta
    Vec2 pivot;             // rotation axis passes through (pivot, z)
    TriangleMesh aligned_mesh;
};

/// Wraps an angle into the half-open interval (-pi/2, pi/2].
double wrap_half_pi(double angle);

/// Convex hull of the vertices projected onto z = 0, counter-clockwise,
/// without duplicate or collinear points. Throws GeometryError when the
/// projection is degenerate.
std::vector<Vec2> xy_projection_hull(const TriangleMesh& mesh);
std::vector<Vec2> convex_hull_2d(std::span<const Vec2> points);

/// Minimum-area enclosing rectangle of a convex CCW polygon by rotating
/// calipers. Equal-area candidates resolve to the smallest |angle| of
/// axis_u, then to the positive angle.
Obb2D min_area_obb(std::span<const Vec2> hull);

/// Rectangle whose first axis is parallel to hull edge `edge`.
Obb2D obb_for_edge(std::span<const Vec2> hull, std::size_t edge);

/// Yaws the mesh so its footprint's long side lies along +x.
AlignmentResult align_to_canonical(const TriangleMesh& mesh);

/// Rotation about the z-axis through the origin.
TriangleMesh rotate_z(const TriangleMesh& mesh, double theta);
/// Rotation about the vertical line through `pivot`.
TriangleMesh rotate_z(const TriangleMesh& mesh, double theta, const Vec2& pivot);

Mat3 z_rotation(double theta);

}  // namespace sketchmass
