#include "sketchmass/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sketchmass/errors.hpp"
#include "sketchmass/occupancy.hpp"
#include "sketchmass/parallel.hpp"
#include "sketchmass/rng.hpp"

namespace sketchmass {

SurfaceSamples sample_surface(const TriangleMesh& mesh, std::size_t m, std::uint64_t seed) {
    std::vector<double> cdf;
    std::vector<std::uint32_t> face_ids;
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
        if (is_degenerate_face(mesh, f)) continue;
        total += face_area(mesh, f);
        cdf.push_back(total);
        face_ids.push_back(static_cast<std::uint32_t>(f));
    }
    if (!(total > 0.0)) throw GeometryError("cannot sample a mesh with zero surface area");

    const CounterRng rng(seed, mesh.id(), "surface");
    SurfaceSamples s;
    s.points.reserve(m);
    s.normals.reserve(m);
    s.faces.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double pick = rng.uniform(3 * i) * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
        if (it == cdf.end()) --it;
        const std::uint32_t f = face_ids[static_cast<std::size_t>(it - cdf.begin())];
        const double r1 = std::sqrt(rng.uniform(3 * i + 1)), r2 = rng.uniform(3 * i + 2);
        const auto [a, b, c] = mesh.triangle(f);
        s.points.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
        s.normals.push_back(face_normal(mesh, f));
        s.faces.push_back(f);
    }
    return s;
}

NearestNeighborIndex::NearestNeighborIndex(std::span<const Vec3> points, double points_per_cell)
    : points_(points.begin(), points.end()) {
    if (points_.empty()) throw DataError("nearest-neighbour index over an empty point set");
    lo_ = points_.front();
    Vec3 hi = lo_;
    for (const Vec3& p : points_) {
        lo_ = lo_.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 ext = (hi - lo_).cwiseMax(1e-9);
    // Cells sized for roughly `points_per_cell` points on a 2D surface
    // spread through the box.
    const double area_guess = 2.0 * (ext.x() * ext.y() + ext.y() * ext.z() + ext.x() * ext.z());
    cell_ = std::max(std::sqrt(area_guess * points_per_cell / static_cast<double>(points_.size())),
                     ext.maxCoeff() / 512.0);
    std::size_t total = 1;
    for (int k = 0; k < 3; ++k) {
        dims_[k] = std::clamp(static_cast<int>(std::floor(ext[k] / cell_)) + 1, 1, 1024);
        total *= static_cast<std::size_t>(dims_[k]);
    }
    std::vector<std::uint32_t> counts(total + 1, 0);
    std::vector<std::uint32_t> cell_index(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto c = cell_of(points_[i]);
        cell_index[i] = static_cast<std::uint32_t>((static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0]);
        ++counts[cell_index[i] + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    start_ = counts;
    items_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) items_[counts[cell_index[i]]++] = static_cast<std::uint32_t>(i);
}

std::array<int, 3> NearestNeighborIndex::cell_of(const Vec3& q) const {
    std::array<int, 3> c{};
    for (int k = 0; k < 3; ++k) {
        c[k] = std::clamp(static_cast<int>(std::floor((q[k] - lo_[k]) / cell_)), 0, dims_[k] - 1);
    }
    return c;
}

Neighbor NearestNeighborIndex::nearest(const Vec3& q) const {
    const auto c = cell_of(q);
    Neighbor best;
    const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    auto visit = [&](int x, int y, int z) {
        const std::size_t cell = (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
        for (std::uint32_t s = start_[cell]; s < start_[cell + 1]; ++s) {
            const std::uint32_t i = items_[s];
            const double d2 = (points_[i] - q).squaredNorm();
            if (d2 < best.dist2 || (d2 == best.dist2 && i < best.index)) best = {i, d2};
        }
    };
    for (int r = 0; r <= max_ring; ++r) {
        // Shell of cells at Chebyshev distance r from c.
        for (int z = c[2] - r; z <= c[2] + r; ++z) {
            if (z < 0 || z >= dims_[2]) continue;
            for (int y = c[1] - r; y <= c[1] + r; ++y) {
                if (y < 0 || y >= dims_[1]) continue;
                const bool face_zy = std::abs(z - c[2]) == r || std::abs(y - c[1]) == r;
                if (face_zy) {
                    for (int x = std::max(0, c[0] - r); x <= std::min(dims_[0] - 1, c[0] + r); ++x) visit(x, y, z);
                } else {
                    if (c[0] - r >= 0) visit(c[0] - r, y, z);
                    if (r > 0 && c[0] + r < dims_[0]) visit(c[0] + r, y, z);
                }
            }
        }
        // Anything in ring r+1 or beyond is at least r cells away.
        const double bound = r * cell_;
        if (best.dist2 <= bound * bound) break;
    }
    return best;
}

Neighbor brute_force_nearest(std::span<const Vec3> points, const Vec3& q) {
    Neighbor best;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d2 = (points[i] - q).squaredNorm();
        if (d2 < best.dist2) best = {i, d2};
    }
    return best;
}

OneSided one_sided(const SurfaceSamples& from, const SurfaceSamples& to) {
    if (from.size() == 0 || to.size() == 0) throw DataError("distance between empty sample sets");
    const NearestNeighborIndex index(to.points);
    std::vector<Neighbor> nn(from.size());
    parallel_for(from.size(), [&](std::size_t i) { nn[i] = index.nearest(from.points[i]); }, 1);
    OneSided r;
    for (std::size_t i = 0; i < from.size(); ++i) {
        r.mean_distance += std::sqrt(nn[i].dist2);
        r.mean_sq_distance += nn[i].dist2;
        if (!from.normals.empty() && !to.normals.empty()) {
            r.mean_normal_dot += std::abs(from.normals[i].dot(to.normals[nn[i].index]));
        }
    }
    const double n = static_cast<double>(from.size());
    r.mean_distance /= n;
    r.mean_sq_distance /= n;
    r.mean_normal_dot /= n;
    return r;
}

double accuracy_distance(const SurfaceSamples& recon, const SurfaceSamples& gt) {
    return one_sided(recon, gt).mean_distance;
}

double completeness_distance(const SurfaceSamples& recon, const SurfaceSamples& gt) {
    return one_sided(gt, recon).mean_distance;
}

ChamferResult chamfer(const SurfaceSamples& recon, const SurfaceSamples& gt) {
    const OneSided acc = one_sided(recon, gt), comp = one_sided(gt, recon);
    return {0.5 * (acc.mean_distance + comp.mean_distance), 0.5 * (acc.mean_sq_distance + comp.mean_sq_distance)};
}

NormalConsistency normal_consistency(const SurfaceSamples& recon, const SurfaceSamples& gt) {
    if (recon.normals.size() != recon.size() || gt.normals.size() != gt.size()) {
        throw DataError("normal consistency needs normals on both sample sets");
    }
    NormalConsistency nc;
    nc.accuracy_side = one_sided(recon, gt).mean_normal_dot;
    nc.completeness_side = one_sided(gt, recon).mean_normal_dot;
    nc.mean = 0.5 * (nc.accuracy_side + nc.completeness_side);
    return nc;
}

VoxelGrid::VoxelGrid(int resolution, double padding) : resolution_(resolution), padding_(padding) {
    if (resolution < 2) throw ConfigError("voxel resolution must be at least 2");
    if (!(padding >= 0.0)) throw ConfigError("voxel padding must be non-negative");
    occupancy_.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0);
}

Vec3 VoxelGrid::center(int i, int j, int k) const {
    const double h = half_extent(), s = voxel_size();
    return {-h + (i + 0.5) * s, -h + (j + 0.5) * s, -h + (k + 0.5) * s};
}

std::size_t VoxelGrid::count() const {
    return static_cast<std::size_t>(std::count(occupancy_.begin(), occupancy_.end(), std::uint8_t{1}));
}

std::vector<Vec3> VoxelGrid::centers() const {
    std::vector<Vec3> out;
    out.reserve(occupancy_.size());
    for (int k = 0; k < resolution_; ++k)
        for (int j = 0; j < resolution_; ++j)
            for (int i = 0; i < resolution_; ++i) out.push_back(center(i, j, k));
    return out;
}

VoxelGrid voxelize(const TriangleMesh& mesh, int resolution, double padding, unsigned workers) {
    VoxelGrid grid(resolution, padding);
    if (mesh.empty()) return grid;
    const auto centers = grid.centers();
    const auto field = label_points(mesh, centers, {}, workers);
    grid.occupancy() = field.labels;
    return grid;
}

double iou_voxels(const VoxelGrid& a, const VoxelGrid& b) {
    if (a.resolution() != b.resolution()) throw DataError("voxel grids differ in resolution");
    return iou_points(a.occupancy(), b.occupancy());
}

double iou_points(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size()) throw DataError("label vectors differ in length");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

const std::vector<std::string>& metrics_columns() {
    static const std::vector<std::string> cols{"accuracy",         "accuracy2",      "chamfer_l1",
                                               "chamfer_l2",       "completeness",   "completeness2",
                                               "iou_voxels",       "iou_points",     "normal_consistency",
                                               "nc_accuracy",      "nc_completeness"};
    return cols;
}

namespace {

std::vector<double*> row_fields(MetricsRow& r) {
    return {&r.accuracy,   &r.accuracy2,  &r.chamfer_l1,         &r.chamfer_l2,  &r.completeness,
            &r.completeness2, &r.iou_voxels, &r.iou_points, &r.normal_consistency, &r.nc_accuracy,
            &r.nc_completeness};
}

std::string fmt_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

MetricsRow surface_metrics(const TriangleMesh& recon, const TriangleMesh& gt, const SurfaceMetricOptions& options) {
    MetricsRow row;
    row.name = gt.id();
    bool recon_empty = recon.empty() || !(surface_area(recon) > 0.0);
    if (recon_empty) {
        const double diag = 2.0 * (0.5 + options.padding) * std::sqrt(3.0);
        row.accuracy = row.completeness = row.chamfer_l1 = diag;
        row.accuracy2 = row.completeness2 = row.chamfer_l2 = diag * diag;
        row.degenerate = true;
        return row;
    }
    const SurfaceSamples r = sample_surface(recon, options.samples, options.seed);
    const SurfaceSamples g = sample_surface(gt, options.samples, options.seed + 1);
    const OneSided acc = one_sided(r, g), comp = one_sided(g, r);
    row.accuracy = acc.mean_distance;
    row.accuracy2 = acc.mean_sq_distance;
    row.completeness = comp.mean_distance;
    row.completeness2 = comp.mean_sq_distance;
    row.chamfer_l1 = 0.5 * (acc.mean_distance + comp.mean_distance);
    row.chamfer_l2 = 0.5 * (acc.mean_sq_distance + comp.mean_sq_distance);
    row.nc_accuracy = acc.mean_normal_dot;
    row.nc_completeness = comp.mean_normal_dot;
    row.normal_consistency = 0.5 * (acc.mean_normal_dot + comp.mean_normal_dot);
    return row;
}

MetricsRow average_rows(std::span<const MetricsRow> rows, std::string name) {
    if (rows.empty()) throw DataError("cannot average zero metric rows");
    MetricsRow out;
    out.name = std::move(name);
    auto dst = row_fields(out);
    for (const MetricsRow& r : rows) {
        MetricsRow copy = r;
        auto src = row_fields(copy);
        for (std::size_t k = 0; k < dst.size(); ++k) *dst[k] += *src[k];
        out.degenerate = out.degenerate || r.degenerate;
    }
    for (double* v : dst) *v /= static_cast<double>(rows.size());
    return out;
}

nlohmann::json to_json(const MetricsRow& row) {
    MetricsRow copy = row;
    const auto fields = row_fields(copy);
    nlohmann::json j;
    j["name"] = row.name;
    for (std::size_t k = 0; k < fields.size(); ++k) j[metrics_columns()[k]] = *fields[k];
    j["degenerate"] = row.degenerate;
    return j;
}

MetricsRow metrics_row_from_json(const nlohmann::json& j) {
    MetricsRow row;
    try {
        row.name = j.at("name").get<std::string>();
        auto fields = row_fields(row);
        for (std::size_t k = 0; k < fields.size(); ++k) *fields[k] = j.at(metrics_columns()[k]).get<double>();
        row.degenerate = j.value("degenerate", false);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("metrics row schema mismatch: ") + e.what());
    }
    return row;
}

nlohmann::json to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["aggregate"] = to_json(report.aggregate);
    j["shapes"] = nlohmann::json::array();
    for (const auto& r : report.shapes) j["shapes"].push_back(to_json(r));
    return j;
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("aggregate")) throw DataError("metrics report schema mismatch");
    MetricsReport r;
    r.aggregate = metrics_row_from_json(j["aggregate"]);
    if (j.contains("shapes")) {
        for (const auto& s : j["shapes"]) r.shapes.push_back(metrics_row_from_json(s));
    }
    return r;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
    std::ostringstream out;
    out << "experiment";
    for (const auto& c : metrics_columns()) out << ',' << c;
    out << ",degenerate\n";
    for (const MetricsRow& r : rows) {
        MetricsRow copy = r;
        out << r.name;
        for (double* v : row_fields(copy)) out << ',' << fmt_value(*v);
        out << ',' << (r.degenerate ? 1 : 0) << '\n';
    }
    return out.str();
}

std::string stage_name(TimingStage stage) {
    switch (stage) {
        case TimingStage::Encoding: return "encoding";
        case TimingStage::PointEvaluation: return "point_evaluation";
        case TimingStage::MeshReconstruction: return "mesh_reconstruction";
    }
    return "unknown";
}

void TimingHarness::register_stage(TimingStage stage, std::function<void()> fn) { stages_[stage] = std::move(fn); }

TimingResult summarize_trials(TimingStage stage, std::vector<double> trials_ms) {
    TimingResult r;
    r.stage = stage;
    r.trials_ms = std::move(trials_ms);
    const double n = static_cast<double>(r.trials_ms.size());
    if (r.trials_ms.empty()) return r;
    r.mean_ms = std::accumulate(r.trials_ms.begin(), r.trials_ms.end(), 0.0) / n;
    double var = 0.0;
    for (double t : r.trials_ms) var += (t - r.mean_ms) * (t - r.mean_ms);
    r.std_ms = r.trials_ms.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    return r;
}

TimingResult TimingHarness::run(TimingStage stage, int trials) const {
    const auto it = stages_.find(stage);
    if (it == stages_.end()) throw ConfigError("no callable registered for stage " + stage_name(stage));
    std::vector<double> ms;
    for (int t = 0; t < trials; ++t) {
        const auto start = std::chrono::steady_clock::now();
        it->second();
        const auto stop = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    return summarize_trials(stage, std::move(ms));
}

std::vector<TimingResult> TimingHarness::run_all(int trials) const {
    std::vector<TimingResult> out;
    for (const auto& [stage, fn] : stages_) out.push_back(run(stage, trials));
    return out;
}

nlohmann::json efficiency_report(const std::string& model_name, std::span<const TimingResult> results,
                                 const ModelFootprint& footprint) {
    nlohmann::json row;
    row["model"] = model_name;
    for (const auto& r : results) {
        row[stage_name(r.stage)] = {{"mean_ms", r.mean_ms}, {"std_ms", r.std_ms}, {"trials", r.trials_ms.size()},
                                    {"trials_ms", r.trials_ms}};
    }
    row["model_parameters"] = footprint.parameters;
    row["model_bytes"] = footprint.bytes;

    // Published inference timings (seconds) for comparison display.
    auto ref = [](const char* name, nlohmann::json enc, nlohmann::json pts, double mesh, const char* params,
                  const char* size) {
        return nlohmann::json{{"model", name},
                              {"encoding_s", std::move(enc)},
                              {"point_evaluation_s", std::move(pts)},
                              {"mesh_reconstruction_s", mesh},
                              {"model_parameters", params},
                              {"model_size", size}};
    };
    nlohmann::json refs = nlohmann::json::array();
    refs.push_back(ref("ResNet101", 0.006, 0.28, 0.155, "26M", "314Mb"));
    refs.push_back(ref("ResNet18", 0.002, 0.34, 0.157, "13M", "161Mb"));
    refs.push_back(ref("MobileNetV3", 0.012, 0.12, 0.239, "4M", "52Mb"));
    refs.push_back(ref("NDC", nullptr, nullptr, 0.142, "0.17M", "0.7Mb"));

    return nlohmann::json{{"columns", {"encoding", "point_evaluation", "mesh_reconstruction", "model_parameters",
                                       "model_bytes"}},
                          {"trials_per_stage", results.empty() ? 0 : results.front().trials_ms.size()},
                          {"rows", nlohmann::json::array({row})},
                          {"published_reference", refs}};
}

}  // namespace sketchmass
