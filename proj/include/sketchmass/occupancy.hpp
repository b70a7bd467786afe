#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sketchmass/geometry.hpp"

namespace sketchmass {

struct SamplingConfig {
    std::size_t n_points = 100000;
    double padding = 0.05;
    std::uint64_t seed = 0;
};

void validate(const SamplingConfig& config);

/// Labeled sample points. labels[i] is 1 when points[i] is inside.
struct OccupancyField {
    std::vector<Vec3> points;
    std::vector<std::uint8_t> labels;
    std::string shape_id;
    std::uint64_t seed = 0;
    double padding = 0.05;

    std::size_t size() const noexcept { return points.size(); }
};

/// I.i.d. uniform points in [-(0.5+padding), 0.5+padding]^3, rounded to
/// float precision so that labels survive the OCC1 round trip.
std::vector<Vec3> sample_points_uniform(const SamplingConfig& config, std::string_view shape_id = {});

struct ParityOptions {
    bool three_axis_vote = false;  // majority of x, y and z rays
    double surface_guard = 1e-7;   // closer points use the winding number
    double graze_tol = 1e-12;      // barycentric distance to an edge
    double jitter = 1e-9;
    int max_retries = 8;
};

/// Ray-parity inside test with a uniform grid over the triangles' projection
/// along the ray axis. Build once per mesh, then query from any thread.
class ParityTester {
public:
    explicit ParityTester(const TriangleMesh& mesh, ParityOptions options = {});

    bool inside(const Vec3& p) const;

    /// Distance from p to the nearest triangle whose projection covers p,
    /// or +inf when none is within `guard`.
    double near_surface_distance(const Vec3& p) const;

private:
    struct AxisGrid {
        int axis = 2;  // ray direction
        Vec2 lo, hi;
        int nx = 1, ny = 1;
        std::vector<std::uint32_t> cell_start;
        std::vector<std::uint32_t> cell_tris;
    };

    enum class Cast { Inside, Outside, Grazing };

    AxisGrid build_grid(int axis) const;
    std::span<const std::uint32_t> cell(const AxisGrid& grid, const Vec3& p) const;
    Cast cast(const AxisGrid& grid, const Vec3& p) const;
    bool cast_robust(const AxisGrid& grid, const Vec3& p) const;

    const TriangleMesh* mesh_;
    ParityOptions options_;
    std::vector<AxisGrid> grids_;
};

/// Inside iff the +z ray from the point crosses an odd number of triangles.
bool occupancy_zray(const TriangleMesh& mesh, const Vec3& point);

/// Inside iff the generalized winding number exceeds 1/2.
bool winding_number_oracle(const TriangleMesh& mesh, const Vec3& point);
double winding_number(const TriangleMesh& mesh, const Vec3& point);

/// Euclidean distance from p to the closest point of the triangle abc.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

OccupancyField label_points(const TriangleMesh& mesh, std::span<const Vec3> points,
                            const ParityOptions& options = {}, unsigned workers = 1);

/// k rows without replacement; deterministic per (seed, shape id).
OccupancyField subsample(const OccupancyField& field, std::size_t k, std::uint64_t seed,
                         bool allow_empty = false);
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed,
                                           std::string_view shape_id);

void write_occ1(const std::filesystem::path& path, const OccupancyField& field);
OccupancyField read_occ1(const std::filesystem::path& path);
void write_occ1_sidecar(const std::filesystem::path& path, const OccupancyField& field);

}  // namespace sketchmass
