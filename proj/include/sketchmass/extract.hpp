#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sketchmass/geometry.hpp"
#include "sketchmass/metrics.hpp"
#include "sketchmass/model.hpp"

namespace sketchmass {

/// Values at voxel centres over [-(0.5+padding), 0.5+padding]^3, laid out
/// like VoxelGrid (i fastest).
struct ScalarGrid {
    int resolution = 0;
    double padding = 0.05;
    std::vector<double> values;

    ScalarGrid() = default;
    ScalarGrid(int resolution, double padding = 0.05);

    double half_extent() const { return 0.5 + padding; }
    double voxel_size() const { return 2.0 * half_extent() / resolution; }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * resolution + j) * resolution + i;
    }
    double at(int i, int j, int k) const { return values[index(i, j, k)]; }
    Vec3 center(int i, int j, int k) const;
    std::vector<Vec3> centers() const;
    void validate() const;
};

ScalarGrid to_scalar_grid(const VoxelGrid& grid);
/// Voxels whose value is at least `threshold`.
VoxelGrid threshold_grid(const ScalarGrid& grid, double threshold);

/// Writes one value per input point.
using FieldFunction = std::function<void(std::span<const Vec3> points, std::span<double> out)>;

constexpr std::size_t kMaxChunk = std::size_t{1} << 16;

/// Evaluates `field` at every voxel centre in chunks of at most `chunk`
/// points.
ScalarGrid eval_grid(const FieldFunction& field, int resolution, double padding = 0.05, std::size_t chunk = kMaxChunk,
                     unsigned workers = 1);
/// Occupancy probabilities of the decoder for conditioning `c` [1 x D].
ScalarGrid eval_grid(const OccupancyNetwork& net, const Tensor& c, int resolution, double padding = 0.05,
                     std::size_t chunk = kMaxChunk, unsigned workers = 1);

/// Triangles of one cube configuration as edge indices. Corner bit c is
/// set when corner c is inside; corner c sits at (c & 1, c >> 1 & 1,
/// c >> 2 & 1). Edge e joins kEdgeCorners[e].
struct CubeCase {
    std::vector<std::array<std::uint8_t, 3>> triangles;
};
extern const std::array<std::array<std::uint8_t, 2>, 12> kEdgeCorners;
/// The 256-case table. On faces with two diagonal inside corners the inside
/// corners are always separated, so neighbouring cells agree on every face
/// and the surface closes.
const std::array<CubeCase, 256>& marching_cubes_table();

struct MarchingCubesResult {
    TriangleMesh mesh;
    bool empty = true;
};

/// Iso-surface at `threshold` with normals pointing from high to low
/// values. The grid is padded with one layer of zeros, so the surface is
/// closed whenever the threshold is positive.
MarchingCubesResult marching_cubes(const ScalarGrid& grid, double threshold = 0.5, unsigned workers = 1);

std::string usda_string(const TriangleMesh& mesh);
void export_usda(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh parse_usda(const std::string& text, std::string id = {});
TriangleMesh import_usda(const std::filesystem::path& path);

struct StageTimes {
    double encoding_ms = 0.0;
    double point_evaluation_ms = 0.0;
    double mesh_reconstruction_ms = 0.0;
};

struct ReconstructOptions {
    int resolution = 32;
    double threshold = 0.5;
    double padding = 0.05;
    std::size_t chunk = kMaxChunk;
    unsigned workers = 1;
};

struct Reconstruction {
    TriangleMesh mesh;
    ScalarGrid grid;
    StageTimes times;
    bool empty = true;
    bool watertight = false;
};

/// encode_sketch, eval_grid and marching_cubes with per-stage wall times.
Reconstruction reconstruct(const OccupancyNetwork& net, const SketchImage& sketch,
                           const std::array<double, 4>& context = {0.0, 1.0, 0.0, 0.0},
                           const ReconstructOptions& options = {});

/// {stage_ms: {encoding, point_evaluation, mesh_reconstruction}, vertices,
/// faces, watertight, empty}
nlohmann::ordered_json reconstruction_report(const Reconstruction& r);

}  // namespace sketchmass
