#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sketchmass/extract.hpp"
#include "sketchmass/geometry.hpp"
#include "sketchmass/metrics.hpp"
#include "sketchmass/occupancy.hpp"
#include "sketchmass/render.hpp"
#include "sketchmass/train.hpp"

namespace sketchmass {

struct EvalConfig {
    /// Sketch used per shape.
    int view = 0;
    /// Average the metrics over every view instead of using `view`.
    bool all_views = false;
    double threshold = 0.5;
    std::vector<double> sweep{0.3, 0.5, 0.7};
    std::size_t surface_samples = 10000;
    /// Labelled points per shape for IoU_points.
    std::size_t points = 10000;
    /// Random subset of this many shapes; 0 evaluates the whole split.
    std::size_t sample_n = 0;
};

/// Everything a run needs. Training keys (model, optimizer, steps, ...) sit
/// at the top level of the JSON next to the dataset keys.
struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path dataset_dir;
    /// Train/val/test as counts (all >= 1 and whole) or fractions summing to 1.
    std::array<double, 3> splits{60, 10, 20};
    bool align = true;
    SamplingConfig sampling;
    TrainConfig train;
    /// When positive, overrides train.steps with epochs over the train split.
    std::int64_t epochs = 0;
    int views_per_shape = 24;
    int voxel_res = 32;
    OrbitConfig orbit;
    EvalConfig eval;
    unsigned workers = 1;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};

SplitCounts split_counts(const std::array<double, 3>& splits, std::size_t n);

/// Training config with the run seed and epoch-derived step count applied.
TrainConfig training_config(const RunConfig& c, std::size_t train_shapes);

// Dataset preparation.

nlohmann::json to_json(const ContextMeta& m);
ContextMeta context_from_json(const nlohmann::json& j);

/// (sin theta, cos theta, lat/90, lon/180); missing coordinates are 0.
std::array<double, 4> context_vector(const ContextMeta& m);

/// One shape in both poses, at a common scale.
struct ShapeFrames {
    double theta = 0.0;
    /// Canonical pose: bounding box centred, scaled so the height is at most
    /// 1 and every vertex lies within 0.5 of the z axis.
    TriangleMesh aligned;
    /// The canonical mesh turned back by theta about the z axis.
    TriangleMesh native;
};

/// Both frames share one scale factor, so they are congruent and either
/// fits the unit cube whatever its yaw.
ShapeFrames shape_frames(const TriangleMesh& mesh);

struct PreparedShape {
    std::string id;
    ContextMeta context;
    double volume = 0.0;
};

struct PrepareResult {
    std::vector<PreparedShape> shapes;
    std::vector<std::string> reused;
    std::vector<std::pair<std::string, std::string>> skipped;
};

/// Builds <root>/<id>/{mesh.obj, field.occ1, cameras.json,
/// sketch_00..NN.pgm, context.json, checksums.json} for every manifest
/// entry plus <root>/dataset.json. Shapes whose outputs already verify
/// against their checksums are reused.
PrepareResult prepare(const RunConfig& config, const std::filesystem::path& manifest,
                      const std::filesystem::path& root);

std::string sketch_filename(int view);

struct DatasetShape {
    std::string id;
    ContextMeta context;
    double volume = 0.0;
};

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<DatasetShape> shapes;
    bool align = true;
    int views_per_shape = 24;
    double padding = 0.05;

    std::filesystem::path dir(const std::string& id) const { return root / id; }
    const DatasetShape& find(const std::string& id) const;
};

DatasetIndex load_dataset_index(const std::filesystem::path& root);

struct DatasetSplits {
    std::vector<std::string> train, val, test;

    const std::vector<std::string>& get(const std::string& name) const;
};

/// Seeded shuffle of the sorted ids, cut into train/val/test.
DatasetSplits split_dataset(const DatasetIndex& index, const std::array<double, 3>& splits, std::uint64_t seed);

TrainShape load_train_shape(const DatasetIndex& index, const std::string& id, int views);
TrainData load_train_data(const DatasetIndex& index, const DatasetSplits& splits, int views);

struct TrainRunOptions {
    bool resume = false;
};

/// Trains on `dataset` and writes best.vitp, last.vitp, train_log.jsonl and
/// run_config.json into `out`.
TrainResult run_training(const RunConfig& config, const std::filesystem::path& dataset, const std::filesystem::path& out,
                         const TrainRunOptions& options = {});

// Evaluation.

struct EvalShape {
    std::string id;
    TriangleMesh mesh;
    SketchImage sketch;
    int view = 0;
    std::array<double, 4> context{0.0, 1.0, 0.0, 0.0};
    OccupancyField points;
};

/// Occupancy probability field for one shape.
using Predictor = std::function<FieldFunction(const EvalShape&)>;

Predictor network_predictor(const OccupancyNetwork& net);
/// Exact occupancy of the ground-truth mesh; used to check the evaluation path.
Predictor oracle_predictor();

struct EvalOptions {
    std::string split = "test";
    EvalConfig eval;
    int voxel_res = 32;
    std::uint64_t seed = 0;
    unsigned workers = 1;
};

struct SweepRow {
    double threshold = 0.5;
    MetricsRow aggregate;
};

struct EvalReport {
    std::string split;
    int view = 0;
    bool all_views = false;
    double threshold = 0.5;
    int voxel_res = 32;
    MetricsReport metrics;
    std::vector<SweepRow> sweep;
};

std::vector<std::string> select_eval_ids(const std::vector<std::string>& ids, std::size_t sample_n, std::uint64_t seed);

EvalReport evaluate(const DatasetIndex& index, const std::vector<std::string>& ids, const Predictor& predictor,
                    const EvalOptions& options);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

// Orientation experiment.

/// Published reference rows (native: PFT, VT; aligned: PFTA, VTA).
nlohmann::json table3_reference();

/// Two-row comparison report with the reference rows for display.
nlohmann::json orientation_report(const MetricsRow& native, const MetricsRow& aligned, const nlohmann::json& meta);

/// Throws DataError unless `j` has exactly the metric columns and the rows
/// "native" and "aligned".
void validate_orientation_report(const nlohmann::json& j);

std::string orientation_csv(const nlohmann::json& report);

struct OrientationResult {
    EvalReport native;
    EvalReport aligned;
    nlohmann::json report;
};

/// Prepares <out>/data/{native,aligned} from `manifest`, trains one model per
/// arm under <out>/{native,aligned}, evaluates the test split and writes
/// <out>/orientation.{json,csv}.
OrientationResult run_experiment_orientation(const RunConfig& config, const std::filesystem::path& manifest,
                                             const std::filesystem::path& out);

// Reports.

struct ReportInput {
    std::string name;
    std::string content;
};

struct ReportOutput {
    std::string text;
    std::map<std::string, std::string> svgs;
};

/// Text tables and SVG plots from eval, orientation and efficiency JSON and
/// training logs (.jsonl). Pure in its inputs.
ReportOutput build_report(const std::vector<ReportInput>& inputs);
ReportOutput build_report_files(const std::vector<std::filesystem::path>& paths);
void write_report(const ReportOutput& report, const std::filesystem::path& dir);

// Efficiency.

struct BenchOptions {
    int trials = TimingHarness::kDefaultTrials;
    int resolution = 32;
    double threshold = 0.5;
    unsigned workers = 1;
};

/// Timed encoding, point evaluation and mesh reconstruction.
nlohmann::json run_bench(const OccupancyNetwork& net, const SketchImage& sketch, const std::array<double, 4>& context,
                         const std::string& model_name, const BenchOptions& options = {});

}  // namespace sketchmass
