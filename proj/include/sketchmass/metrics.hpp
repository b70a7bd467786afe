#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sketchmass/geometry.hpp"

namespace sketchmass {

/// Area-uniform samples on a mesh surface with the face normal at each one.
struct SurfaceSamples {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<std::uint32_t> faces;

    std::size_t size() const noexcept { return points.size(); }
};

SurfaceSamples sample_surface(const TriangleMesh& mesh, std::size_t m, std::uint64_t seed);

struct Neighbor {
    std::size_t index = 0;
    double dist2 = INFINITY;
};

/// Exact nearest-neighbor queries over a uniform grid of buckets.
class NearestNeighborIndex {
public:
    explicit NearestNeighborIndex(std::span<const Vec3> points, double points_per_cell = 2.0);

    Neighbor nearest(const Vec3& q) const;

private:
    std::array<int, 3> cell_of(const Vec3& q) const;

    std::vector<Vec3> points_;
    Vec3 lo_;
    double cell_ = 1.0;
    std::array<int, 3> dims_{1, 1, 1};
    std::vector<std::uint32_t> start_;
    std::vector<std::uint32_t> items_;
};

Neighbor brute_force_nearest(std::span<const Vec3> points, const Vec3& q);

/// Mean distance, mean squared distance and mean |n . n_nn| from each
/// point of `from` to its nearest neighbour in `to`.
struct OneSided {
    double mean_distance = 0.0;
    double mean_sq_distance = 0.0;
    double mean_normal_dot = 0.0;
};

OneSided one_sided(const SurfaceSamples& from, const SurfaceSamples& to);

double accuracy_distance(const SurfaceSamples& recon, const SurfaceSamples& gt);
double completeness_distance(const SurfaceSamples& recon, const SurfaceSamples& gt);

struct ChamferResult {
    double l1 = 0.0;
    double l2 = 0.0;
};

ChamferResult chamfer(const SurfaceSamples& recon, const SurfaceSamples& gt);

struct NormalConsistency {
    double accuracy_side = 0.0;      // recon -> gt
    double completeness_side = 0.0;  // gt -> recon
    double mean = 0.0;
};

NormalConsistency normal_consistency(const SurfaceSamples& recon, const SurfaceSamples& gt);

/// Occupancy of voxel centers over [-(0.5+padding), 0.5+padding]^3.
class VoxelGrid {
public:
    VoxelGrid(int resolution, double padding = 0.05);

    int resolution() const noexcept { return resolution_; }
    double padding() const noexcept { return padding_; }
    double half_extent() const noexcept { return 0.5 + padding_; }
    double voxel_size() const noexcept { return 2.0 * half_extent() / resolution_; }

    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * resolution_ + j) * resolution_ + i;
    }
    Vec3 center(int i, int j, int k) const;

    bool at(int i, int j, int k) const { return occupancy_[index(i, j, k)] != 0; }
    void set(int i, int j, int k, bool v) { occupancy_[index(i, j, k)] = v ? 1 : 0; }

    const std::vector<std::uint8_t>& occupancy() const noexcept { return occupancy_; }
    std::vector<std::uint8_t>& occupancy() noexcept { return occupancy_; }
    std::size_t count() const;

    /// Voxel centers in index order (i fastest).
    std::vector<Vec3> centers() const;

private:
    int resolution_;
    double padding_;
    std::vector<std::uint8_t> occupancy_;
};

/// Voxel occupied iff its center is inside the mesh per the parity test.
VoxelGrid voxelize(const TriangleMesh& mesh, int resolution, double padding = 0.05, unsigned workers = 1);

double iou_voxels(const VoxelGrid& a, const VoxelGrid& b);
double iou_points(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// One row of the reconstruction-quality table.
struct MetricsRow {
    std::string name;
    double accuracy = 0.0;
    double accuracy2 = 0.0;
    double completeness = 0.0;
    double completeness2 = 0.0;
    double chamfer_l1 = 0.0;
    double chamfer_l2 = 0.0;
    double iou_points = 0.0;
    double iou_voxels = 0.0;
    double normal_consistency = 0.0;
    double nc_accuracy = 0.0;
    double nc_completeness = 0.0;
    bool degenerate = false;
};

struct MetricsReport {
    MetricsRow aggregate;
    std::vector<MetricsRow> shapes;
};

/// Column order of the JSON rows and the CSV export.
const std::vector<std::string>& metrics_columns();

struct SurfaceMetricOptions {
    std::size_t samples = 10000;
    std::uint64_t seed = 0;
    double padding = 0.05;
};

/// Surface metrics between a reconstruction and the ground truth. An empty
/// reconstruction yields the domain diagonal as distance and is flagged.
MetricsRow surface_metrics(const TriangleMesh& recon, const TriangleMesh& gt, const SurfaceMetricOptions& options);

/// Mean of every numeric column; degenerate if any input row is.
MetricsRow average_rows(std::span<const MetricsRow> rows, std::string name);

nlohmann::json to_json(const MetricsRow& row);
MetricsRow metrics_row_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

/// CSV with a header line and one line per row, columns as metrics_columns().
std::string metrics_csv(std::span<const MetricsRow> rows);

enum class TimingStage { Encoding, PointEvaluation, MeshReconstruction };

std::string stage_name(TimingStage stage);

struct TimingResult {
    TimingStage stage = TimingStage::Encoding;
    std::vector<double> trials_ms;
    double mean_ms = 0.0;
    double std_ms = 0.0;
};

/// Wall-clock timing of registered inference stages, averaged over trials.
class TimingHarness {
public:
    static constexpr int kDefaultTrials = 10;

    void register_stage(TimingStage stage, std::function<void()> fn);
    bool has_stage(TimingStage stage) const { return stages_.count(stage) != 0; }
    TimingResult run(TimingStage stage, int trials = kDefaultTrials) const;
    std::vector<TimingResult> run_all(int trials = kDefaultTrials) const;

private:
    std::map<TimingStage, std::function<void()>> stages_;
};

TimingResult summarize_trials(TimingStage stage, std::vector<double> trials_ms);

struct ModelFootprint {
    std::size_t parameters = 0;
    std::size_t bytes = 0;
};

/// Table-shaped efficiency report; published reference rows are carried for
/// side-by-side display only.
nlohmann::json efficiency_report(const std::string& model_name, std::span<const TimingResult> results,
                                 const ModelFootprint& footprint);

}  // namespace sketchmass
