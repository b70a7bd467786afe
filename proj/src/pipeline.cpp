#include "sketchmass/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "sketchmass/alignment.hpp"
#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/parallel.hpp"
#include "sketchmass/rng.hpp"

namespace sketchmass {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kDatasetFormat = 1;

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key ") + key + ": " + e.what());
    }
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(what + ": " + e.what());
    }
}

json read_json(const fs::path& path) { return parse_json(read_file(path), path.string()); }

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

bool is_counts(const std::array<double, 3>& s) { return s[0] > 1.0 || s[1] > 1.0 || s[2] > 1.0; }

}  // namespace

void RunConfig::validate() const {
    for (double s : splits)
        if (!(s >= 0.0)) throw ConfigError("split sizes must be non-negative");
    if (is_counts(splits)) {
        for (double s : splits)
            if (s != std::floor(s)) throw ConfigError("split counts must be whole numbers");
        if (splits[0] < 1) throw ConfigError("the train split needs at least one shape");
    } else if (std::abs(splits[0] + splits[1] + splits[2] - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1");
    } else if (!(splits[0] > 0.0)) {
        throw ConfigError("the train split fraction must be positive");
    }
    sketchmass::validate(sampling);
    train.validate();
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (views_per_shape < 1 || views_per_shape > 100) throw ConfigError("views_per_shape must be in [1, 100]");
    if (train.views_used > views_per_shape) throw ConfigError("views_used exceeds views_per_shape");
    if (voxel_res < 2 || voxel_res > 256) throw ConfigError("voxel_res must be in [2, 256]");
    if (!(orbit.radius > 1.0)) throw ConfigError("orbit radius must exceed 1");
    if (eval.view < 0 || eval.view >= views_per_shape) throw ConfigError("eval view out of range");
    if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) throw ConfigError("eval threshold must be in (0, 1)");
    for (double t : eval.sweep)
        if (!(t > 0.0 && t < 1.0)) throw ConfigError("sweep thresholds must be in (0, 1)");
    if (eval.surface_samples < 1 || eval.points < 1) throw ConfigError("eval sample counts must be positive");
    if (workers < 1) throw ConfigError("workers must be at least 1");
}

json to_json(const RunConfig& c) {
    json j = to_json(c.train);
    j.erase("seed");
    j["seed"] = c.seed;
    j["dataset_dir"] = c.dataset_dir.string();
    j["splits"] = {{"train", c.splits[0]}, {"val", c.splits[1]}, {"test", c.splits[2]}};
    j["align"] = c.align;
    j["sampling"] = {{"n_points", c.sampling.n_points}, {"padding", c.sampling.padding}};
    j["epochs"] = c.epochs;
    j["views_per_shape"] = c.views_per_shape;
    j["voxel_res"] = c.voxel_res;
    j["orbit"] = {{"elevation_deg", c.orbit.elevation_deg},
                  {"radius", c.orbit.radius},
                  {"start_azimuth_deg", c.orbit.start_azimuth_deg},
                  {"fill", c.orbit.fill}};
    j["eval"] = {{"view", c.eval.view},
                 {"all_views", c.eval.all_views},
                 {"threshold", c.eval.threshold},
                 {"sweep", c.eval.sweep},
                 {"surface_samples", c.eval.surface_samples},
                 {"points", c.eval.points},
                 {"sample_n", c.eval.sample_n}};
    j["workers"] = c.workers;
    return j;
}

RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known{
        "seed",        "dataset_dir",    "splits",   "align",          "sampling",         "epochs",
        "views_per_shape", "voxel_res",  "orbit",    "eval",           "workers",          "model",
        "optimizer",   "steps",          "kl_weight", "kl_warmup",     "views_used",       "validate_every",
        "patience",    "checkpoint_every", "val_points", "fixed_points"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");

    RunConfig c;
    c.train = train_config_from_json(j);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.train.seed = c.seed;
    c.dataset_dir = get_or<std::string>(j, "dataset_dir", "");
    if (j.contains("splits")) {
        const json& s = j["splits"];
        if (!s.is_object()) throw ConfigError("splits must be an object with train, val and test");
        c.splits = {get_or<double>(s, "train", c.splits[0]), get_or<double>(s, "val", c.splits[1]),
                    get_or<double>(s, "test", c.splits[2])};
    }
    c.align = get_or<bool>(j, "align", c.align);
    if (j.contains("sampling")) {
        c.sampling.n_points = get_or<std::size_t>(j["sampling"], "n_points", c.sampling.n_points);
        c.sampling.padding = get_or<double>(j["sampling"], "padding", c.sampling.padding);
    }
    c.epochs = get_or<std::int64_t>(j, "epochs", c.epochs);
    c.views_per_shape = get_or<int>(j, "views_per_shape", c.views_per_shape);
    c.voxel_res = get_or<int>(j, "voxel_res", c.voxel_res);
    if (j.contains("orbit")) {
        const json& o = j["orbit"];
        c.orbit.elevation_deg = get_or<double>(o, "elevation_deg", c.orbit.elevation_deg);
        c.orbit.radius = get_or<double>(o, "radius", c.orbit.radius);
        c.orbit.start_azimuth_deg = get_or<double>(o, "start_azimuth_deg", c.orbit.start_azimuth_deg);
        c.orbit.fill = get_or<double>(o, "fill", c.orbit.fill);
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        c.eval.view = get_or<int>(e, "view", c.eval.view);
        c.eval.all_views = get_or<bool>(e, "all_views", c.eval.all_views);
        c.eval.threshold = get_or<double>(e, "threshold", c.eval.threshold);
        c.eval.sweep = get_or<std::vector<double>>(e, "sweep", c.eval.sweep);
        c.eval.surface_samples = get_or<std::size_t>(e, "surface_samples", c.eval.surface_samples);
        c.eval.points = get_or<std::size_t>(e, "points", c.eval.points);
        c.eval.sample_n = get_or<std::size_t>(e, "sample_n", c.eval.sample_n);
    }
    c.workers = get_or<unsigned>(j, "workers", c.workers);
    c.orbit.count = c.views_per_shape;
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    try {
        return run_config_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

SplitCounts split_counts(const std::array<double, 3>& splits, std::size_t n) {
    SplitCounts s;
    if (is_counts(splits)) {
        s = {static_cast<std::size_t>(splits[0]), static_cast<std::size_t>(splits[1]),
             static_cast<std::size_t>(splits[2])};
        if (s.train + s.val + s.test > n)
            throw DataError("splits ask for " + std::to_string(s.train + s.val + s.test) + " shapes but the dataset has " +
                            std::to_string(n));
        return s;
    }
    s.train = static_cast<std::size_t>(std::llround(splits[0] * static_cast<double>(n)));
    s.val = static_cast<std::size_t>(std::llround(splits[1] * static_cast<double>(n)));
    s.train = std::min(s.train, n);
    s.val = std::min(s.val, n - s.train);
    s.test = n - s.train - s.val;
    if (s.train == 0) throw DataError("the train split is empty");
    return s;
}

TrainConfig training_config(const RunConfig& c, std::size_t train_shapes) {
    TrainConfig t = c.train;
    t.seed = c.seed;
    if (c.epochs > 0) {
        const auto b = static_cast<std::int64_t>(t.optimizer.batch_size);
        const auto per_epoch = (static_cast<std::int64_t>(train_shapes) + b - 1) / b;
        t.steps = c.epochs * std::max<std::int64_t>(1, per_epoch);
    }
    return t;
}

// Context metadata.

json to_json(const ContextMeta& m) {
    json j{{"orientation_theta", m.orientation_theta},
           {"native_orientation", m.native_orientation},
           {"latitude", nullptr},
           {"longitude", nullptr},
           {"source_filename", m.source_filename}};
    if (m.latitude) j["latitude"] = *m.latitude;
    if (m.longitude) j["longitude"] = *m.longitude;
    return j;
}

ContextMeta context_from_json(const json& j) {
    ContextMeta m;
    try {
        m.orientation_theta = j.at("orientation_theta").get<double>();
        m.native_orientation = j.at("native_orientation").get<bool>();
        if (j.contains("latitude") && !j["latitude"].is_null()) m.latitude = j["latitude"].get<double>();
        if (j.contains("longitude") && !j["longitude"].is_null()) m.longitude = j["longitude"].get<double>();
        m.source_filename = j.value("source_filename", "");
    } catch (const json::exception& e) {
        throw DataError(std::string("context metadata: ") + e.what());
    }
    validate(m);
    return m;
}

std::array<double, 4> context_vector(const ContextMeta& m) {
    return {std::sin(m.orientation_theta), std::cos(m.orientation_theta), m.latitude.value_or(0.0) / 90.0,
            m.longitude.value_or(0.0) / 180.0};
}

// Preparation.

ShapeFrames shape_frames(const TriangleMesh& mesh) {
    const AlignmentResult a = align_to_canonical(mesh);
    const Aabb box = bounding_box(a.aligned_mesh);
    const Vec3 center = 0.5 * (box.min + box.max);
    double radius = 0.0;
    for (const Vec3& v : a.aligned_mesh.vertices()) radius = std::max(radius, (v - center).head<2>().norm());
    const double height = box.max.z() - box.min.z();
    const double extent = std::max(height, 2.0 * radius);
    if (!(extent > 0.0)) throw GeometryError("mesh " + mesh.id() + " has zero extent");
    const double s = 1.0 / extent;
    ShapeFrames f;
    f.theta = a.theta;
    f.aligned = a.aligned_mesh.transformed([&](const Vec3& p) { return Vec3((p - center) * s); });
    f.native = rotate_z(f.aligned, a.theta);
    return f;
}

std::string sketch_filename(int view) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sketch_%02d.pgm", view);
    return buf;
}

namespace {

std::vector<std::string> shape_files(int views) {
    std::vector<std::string> names{"mesh.obj", "field.occ1", "cameras.json", "context.json"};
    for (int v = 0; v < views; ++v) names.push_back(sketch_filename(v));
    return names;
}

/// True when <dir>/checksums.json carries `fingerprint` and every listed
/// file still matches.
bool verify_shape(const fs::path& dir, const std::string& fingerprint, int views, json* record) {
    const fs::path sums = dir / "checksums.json";
    if (!fs::exists(sums)) return false;
    const json j = json::parse(read_file(sums), nullptr, false);
    if (j.is_discarded() || j.value("fingerprint", "") != fingerprint || !j.contains("files")) return false;
    for (const auto& name : shape_files(views)) {
        if (!j["files"].contains(name) || !fs::exists(dir / name)) return false;
        if (file_checksum(dir / name) != j["files"][name].get<std::string>()) return false;
    }
    *record = j;
    return true;
}

struct ShapeOutcome {
    enum class Kind { Built, Reused, Skipped } kind = Kind::Built;
    PreparedShape shape;
    std::string reason;
};

ShapeOutcome prepare_shape(const RunConfig& config, const ManifestEntry& entry, const fs::path& source,
                           const fs::path& root) {
    ShapeOutcome out;
    out.shape.id = entry.id;
    const TriangleMesh mesh = load_obj(source).with_id(entry.id);
    if (!is_watertight(mesh)) {
        out.kind = ShapeOutcome::Kind::Skipped;
        out.reason = "mesh is not watertight";
        return out;
    }
    const json params{{"format", kDatasetFormat},
                      {"align", config.align},
                      {"seed", config.seed},
                      {"n_points", config.sampling.n_points},
                      {"padding", config.sampling.padding},
                      {"views", config.views_per_shape},
                      {"elevation_deg", config.orbit.elevation_deg},
                      {"radius", config.orbit.radius},
                      {"start_azimuth_deg", config.orbit.start_azimuth_deg},
                      {"fill", config.orbit.fill},
                      {"lat", entry.lat ? json(*entry.lat) : json(nullptr)},
                      {"lon", entry.lon ? json(*entry.lon) : json(nullptr)},
                      {"source", file_checksum(source)}};
    const std::string fingerprint = hex64(fnv1a64(params.dump()));
    const fs::path dir = root / entry.id;

    json record;
    if (verify_shape(dir, fingerprint, config.views_per_shape, &record)) {
        out.kind = ShapeOutcome::Kind::Reused;
        out.shape.context = context_from_json(read_json(dir / "context.json"));
        out.shape.volume = record.at("volume").get<double>();
        return out;
    }

    fs::create_directories(dir);
    fs::remove(dir / "checksums.json");
    const ShapeFrames frames = shape_frames(mesh);
    const TriangleMesh& m = config.align ? frames.aligned : frames.native;

    ContextMeta ctx;
    ctx.orientation_theta = config.align ? frames.theta : 0.0;
    ctx.native_orientation = !config.align;
    ctx.latitude = entry.lat;
    ctx.longitude = entry.lon;
    ctx.source_filename = entry.path;
    validate(ctx);

    save_obj(dir / "mesh.obj", m);

    SamplingConfig sc = config.sampling;
    sc.seed = config.seed;
    const auto points = sample_points_uniform(sc, entry.id);
    OccupancyField field = label_points(m, points);
    field.shape_id = entry.id;
    field.seed = sc.seed;
    field.padding = sc.padding;
    write_occ1(dir / "field.occ1", field);

    const TriangleMesh sphere = normalize_unit_sphere(m).mesh;
    OrbitConfig oc = config.orbit;
    oc.count = config.views_per_shape;
    const auto cameras = orbit_cameras(oc);
    const auto views = render_views(sphere, cameras);
    for (int v = 0; v < config.views_per_shape; ++v) write_pgm(views[v], dir / sketch_filename(v));
    write_json(dir / "cameras.json", cameras_to_json(cameras));
    write_json(dir / "context.json", to_json(ctx));

    const double volume = mesh_volume(m).volume;
    json files = json::object();
    for (const auto& name : shape_files(config.views_per_shape)) files[name] = file_checksum(dir / name);
    write_json(dir / "checksums.json", {{"fingerprint", fingerprint}, {"volume", volume}, {"files", files}});

    out.shape.context = ctx;
    out.shape.volume = volume;
    return out;
}

}  // namespace

PrepareResult prepare(const RunConfig& config, const fs::path& manifest, const fs::path& root) {
    config.validate();
    const auto entries = load_manifest(manifest);
    if (entries.empty()) throw DataError("manifest " + manifest.string() + " is empty");
    std::set<std::string> ids;
    for (const auto& e : entries)
        if (!ids.insert(e.id).second) throw DataError("duplicate shape id " + e.id);
    fs::create_directories(root);

    std::vector<ShapeOutcome> outcomes(entries.size());
    parallel_for(
        entries.size(),
        [&](std::size_t i) {
            fs::path src = entries[i].path;
            if (src.is_relative()) src = manifest.parent_path() / src;
            outcomes[i] = prepare_shape(config, entries[i], src, root);
        },
        config.workers);

    PrepareResult result;
    json shapes = json::array(), skipped = json::array();
    for (const auto& o : outcomes) {
        if (o.kind == ShapeOutcome::Kind::Skipped) {
            std::cerr << "skipping " << o.shape.id << ": " << o.reason << "\n";
            result.skipped.emplace_back(o.shape.id, o.reason);
            skipped.push_back({{"id", o.shape.id}, {"reason", o.reason}});
            continue;
        }
        if (o.kind == ShapeOutcome::Kind::Reused) result.reused.push_back(o.shape.id);
        result.shapes.push_back(o.shape);
        shapes.push_back({{"id", o.shape.id}, {"volume", o.shape.volume}, {"context", to_json(o.shape.context)}});
    }
    write_json(root / "dataset.json", {{"format", kDatasetFormat},
                                       {"align", config.align},
                                       {"seed", config.seed},
                                       {"n_points", config.sampling.n_points},
                                       {"padding", config.sampling.padding},
                                       {"views_per_shape", config.views_per_shape},
                                       {"shapes", shapes},
                                       {"skipped", skipped}});
    return result;
}

// Dataset access.

const DatasetShape& DatasetIndex::find(const std::string& id) const {
    for (const auto& s : shapes)
        if (s.id == id) return s;
    throw DataError("shape " + id + " is not in dataset " + root.string());
}

DatasetIndex load_dataset_index(const fs::path& root) {
    const fs::path path = root / "dataset.json";
    if (!fs::exists(path)) throw DataError("no dataset.json in " + root.string());
    const json j = read_json(path);
    DatasetIndex index;
    index.root = root;
    try {
        if (j.at("format").get<int>() != kDatasetFormat) throw DataError("unsupported dataset format");
        index.align = j.at("align").get<bool>();
        index.views_per_shape = j.at("views_per_shape").get<int>();
        index.padding = j.at("padding").get<double>();
        for (const auto& s : j.at("shapes")) {
            DatasetShape d;
            d.id = s.at("id").get<std::string>();
            d.volume = s.at("volume").get<double>();
            d.context = context_from_json(s.at("context"));
            index.shapes.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return index;
}

const std::vector<std::string>& DatasetSplits::get(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "'");
}

DatasetSplits split_dataset(const DatasetIndex& index, const std::array<double, 3>& splits, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& s : index.shapes) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    const CounterRng rng(seed, "", "split");
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i, i)]);
    const SplitCounts n = split_counts(splits, ids.size());
    DatasetSplits out;
    out.train.assign(ids.begin(), ids.begin() + n.train);
    out.val.assign(ids.begin() + n.train, ids.begin() + n.train + n.val);
    out.test.assign(ids.begin() + n.train + n.val, ids.begin() + n.train + n.val + n.test);
    return out;
}

TrainShape load_train_shape(const DatasetIndex& index, const std::string& id, int views) {
    if (views > index.views_per_shape)
        throw DataError("dataset has " + std::to_string(index.views_per_shape) + " views per shape");
    const fs::path dir = index.dir(id);
    TrainShape s;
    s.id = id;
    s.field = read_occ1(dir / "field.occ1");
    s.field.shape_id = id;
    for (int v = 0; v < views; ++v) s.views.push_back(read_pgm(dir / sketch_filename(v)));
    s.context = context_vector(index.find(id).context);
    return s;
}

TrainData load_train_data(const DatasetIndex& index, const DatasetSplits& splits, int views) {
    TrainData d;
    for (const auto& id : splits.train) d.train.push_back(load_train_shape(index, id, views));
    for (const auto& id : splits.val) d.val.push_back(load_train_shape(index, id, views));
    return d;
}

TrainResult run_training(const RunConfig& config, const fs::path& dataset, const fs::path& out,
                         const TrainRunOptions& options) {
    config.validate();
    const DatasetIndex index = load_dataset_index(dataset);
    const DatasetSplits splits = split_dataset(index, config.splits, config.seed);
    const TrainData data = load_train_data(index, splits, config.train.views_used);
    const TrainConfig tc = training_config(config, data.train.size());
    fs::create_directories(out);
    RunConfig record = config;
    record.dataset_dir = dataset;
    write_json(out / "run_config.json", to_json(record));
    return train(data, tc, {out, out / "train_log.jsonl", options.resume});
}

// Evaluation.

Predictor network_predictor(const OccupancyNetwork& net) {
    return [&net](const EvalShape& shape) -> FieldFunction {
        const Tensor c = inference_condition(net, {&shape.sketch}, {shape.context});
        return [&net, c](std::span<const Vec3> points, std::span<double> out) {
            const auto logits = decode_points(net, c, points);
            for (std::size_t i = 0; i < points.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-logits[i]));
        };
    };
}

Predictor oracle_predictor() {
    return [](const EvalShape& shape) -> FieldFunction {
        auto tester = std::make_shared<ParityTester>(shape.mesh);
        return [tester](std::span<const Vec3> points, std::span<double> out) {
            for (std::size_t i = 0; i < points.size(); ++i) out[i] = tester->inside(points[i]) ? 1.0 : 0.0;
        };
    };
}

std::vector<std::string> select_eval_ids(const std::vector<std::string>& ids, std::size_t sample_n,
                                         std::uint64_t seed) {
    if (sample_n == 0 || sample_n >= ids.size()) return ids;
    std::vector<std::string> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    const CounterRng rng(seed, "", "eval-sample");
    for (std::size_t i = sorted.size(); i > 1; --i) std::swap(sorted[i - 1], sorted[rng.below(i, i)]);
    sorted.resize(sample_n);
    std::sort(sorted.begin(), sorted.end());
    return sorted;
}

namespace {

std::vector<double> eval_thresholds(const EvalConfig& e) {
    std::vector<double> t = e.sweep;
    t.push_back(e.threshold);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

/// Rows per threshold for one shape seen from one view.
std::vector<MetricsRow> evaluate_view(const EvalShape& shape, const VoxelGrid& gt_voxels, const Predictor& predictor,
                                      const std::vector<double>& thresholds, const EvalOptions& o,
                                      double padding) {
    const FieldFunction field = predictor(shape);
    const ScalarGrid grid = eval_grid(field, o.voxel_res, padding, kMaxChunk, o.workers);
    std::vector<double> probs(shape.points.size());
    field(shape.points.points, probs);

    SurfaceMetricOptions so;
    so.samples = o.eval.surface_samples;
    so.seed = fnv1a64(shape.id, o.seed);
    so.padding = padding;
    std::vector<MetricsRow> rows;
    for (double t : thresholds) {
        const MarchingCubesResult mc = marching_cubes(grid, t, o.workers);
        MetricsRow row = surface_metrics(mc.mesh, shape.mesh, so);
        row.name = shape.id;
        row.iou_voxels = iou_voxels(threshold_grid(grid, t), gt_voxels);
        std::vector<std::uint8_t> pred(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i) pred[i] = probs[i] >= t ? 1 : 0;
        row.iou_points = iou_points(pred, shape.points.labels);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

EvalReport evaluate(const DatasetIndex& index, const std::vector<std::string>& ids, const Predictor& predictor,
                    const EvalOptions& options) {
    if (ids.empty()) throw DataError("no shapes to evaluate in split '" + options.split + "'");
    if (options.voxel_res < 2 || options.voxel_res > 256) throw ConfigError("voxel_res must be in [2, 256]");
    const EvalConfig& e = options.eval;
    if (!(e.threshold > 0.0 && e.threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
    if (!e.all_views && (e.view < 0 || e.view >= index.views_per_shape)) throw ConfigError("eval view out of range");
    const auto thresholds = eval_thresholds(e);
    const std::size_t main_t =
        static_cast<std::size_t>(std::find(thresholds.begin(), thresholds.end(), e.threshold) - thresholds.begin());

    // per_threshold[t][shape]
    std::vector<std::vector<MetricsRow>> per_threshold(thresholds.size());
    for (const auto& id : ids) {
        const fs::path dir = index.dir(id);
        EvalShape shape;
        shape.id = id;
        shape.mesh = load_obj(dir / "mesh.obj").with_id(id);
        shape.context = context_vector(index.find(id).context);
        const OccupancyField field = read_occ1(dir / "field.occ1");
        const auto idx = subsample_indices(field.size(), std::min(e.points, field.size()), options.seed, id);
        for (std::size_t i : idx) {
            shape.points.points.push_back(field.points[i]);
            shape.points.labels.push_back(field.labels[i]);
        }
        const VoxelGrid gt = voxelize(shape.mesh, options.voxel_res, index.padding, options.workers);

        std::vector<int> views;
        if (e.all_views) {
            views.resize(static_cast<std::size_t>(index.views_per_shape));
            std::iota(views.begin(), views.end(), 0);
        } else {
            views.push_back(e.view);
        }
        std::vector<std::vector<MetricsRow>> by_view(thresholds.size());
        for (int v : views) {
            shape.view = v;
            shape.sketch = read_pgm(dir / sketch_filename(v));
            const auto rows = evaluate_view(shape, gt, predictor, thresholds, options, index.padding);
            for (std::size_t t = 0; t < thresholds.size(); ++t) by_view[t].push_back(rows[t]);
        }
        for (std::size_t t = 0; t < thresholds.size(); ++t)
            per_threshold[t].push_back(views.size() == 1 ? by_view[t][0] : average_rows(by_view[t], id));
    }

    EvalReport r;
    r.split = options.split;
    r.view = e.view;
    r.all_views = e.all_views;
    r.threshold = e.threshold;
    r.voxel_res = options.voxel_res;
    r.metrics.shapes = per_threshold[main_t];
    r.metrics.aggregate = average_rows(r.metrics.shapes, "aggregate");
    for (double s : e.sweep) {
        const auto t = static_cast<std::size_t>(std::find(thresholds.begin(), thresholds.end(), s) - thresholds.begin());
        r.sweep.push_back({s, average_rows(per_threshold[t], "aggregate")});
    }
    return r;
}

json to_json(const EvalReport& r) {
    json shapes = json::array();
    for (const auto& row : r.metrics.shapes) shapes.push_back(to_json(row));
    json sweep = json::array();
    for (const auto& s : r.sweep) sweep.push_back({{"threshold", s.threshold}, {"aggregate", to_json(s.aggregate)}});
    return {{"kind", "eval"},
            {"split", r.split},
            {"view", r.view},
            {"all_views", r.all_views},
            {"threshold", r.threshold},
            {"voxel_res", r.voxel_res},
            {"columns", metrics_columns()},
            {"aggregate", to_json(r.metrics.aggregate)},
            {"shapes", shapes},
            {"sweep", sweep}};
}

EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    try {
        if (j.at("kind").get<std::string>() != "eval") throw DataError("not an eval report");
        if (j.at("columns").get<std::vector<std::string>>() != metrics_columns())
            throw DataError("eval report columns do not match");
        r.split = j.at("split").get<std::string>();
        r.view = j.at("view").get<int>();
        r.all_views = j.at("all_views").get<bool>();
        r.threshold = j.at("threshold").get<double>();
        r.voxel_res = j.at("voxel_res").get<int>();
        r.metrics.aggregate = metrics_row_from_json(j.at("aggregate"));
        for (const auto& s : j.at("shapes")) r.metrics.shapes.push_back(metrics_row_from_json(s));
        for (const auto& s : j.at("sweep"))
            r.sweep.push_back({s.at("threshold").get<double>(), metrics_row_from_json(s.at("aggregate"))});
    } catch (const json::exception& e) {
        throw DataError(std::string("eval report schema mismatch: ") + e.what());
    }
    return r;
}

// Orientation experiment.

json table3_reference() {
    static const std::vector<std::string> cols{"accuracy",     "accuracy2",     "chamfer_l1", "chamfer_l2",
                                               "completeness", "completeness2", "iou",        "normal_consistency",
                                               "nc_accuracy",  "nc_completeness"};
    auto row = [&](const char* name, const char* arm, std::vector<double> v) {
        json j{{"name", name}, {"arm", arm}};
        for (std::size_t k = 0; k < cols.size(); ++k) j[cols[k]] = v[k];
        return j;
    };
    return {{"columns", cols},
            {"rows",
             {row("PFT", "native", {0.0401, 0.0049, 0.0362, 0.0040, 0.0324, 0.0030, 0.6396, 0.7788, 0.7726, 0.7850}),
              row("VT", "native", {0.0374, 0.0041, 0.0359, 0.0037, 0.0344, 0.0032, 0.6500, 0.7936, 0.7941, 0.7931}),
              row("PFTA", "aligned",
                  {0.0264, 0.0025, 0.0242, 0.0019, 0.0221, 0.0014, 0.7369, 0.8438, 0.84385, 0.8438}),
              row("VTA", "aligned",
                  {0.0289, 0.0029, 0.0268, 0.0024, 0.0247, 0.0018, 0.7223, 0.8427, 0.8464, 0.8391})}}};
}

json orientation_report(const MetricsRow& native, const MetricsRow& aligned, const json& meta) {
    MetricsRow n = native, a = aligned;
    n.name = "native";
    a.name = "aligned";
    return {{"kind", "orientation"},
            {"columns", metrics_columns()},
            {"rows", {to_json(n), to_json(a)}},
            {"meta", meta},
            {"paper_reference", table3_reference()}};
}

void validate_orientation_report(const json& j) {
    auto fail = [](const std::string& why) { throw DataError("orientation report: " + why); };
    if (!j.is_object() || j.value("kind", "") != "orientation") fail("kind must be \"orientation\"");
    if (!j.contains("columns") || !j["columns"].is_array()) fail("missing columns");
    std::vector<std::string> cols;
    for (const auto& c : j["columns"]) {
        if (!c.is_string()) fail("column names must be strings");
        cols.push_back(c.get<std::string>());
    }
    if (cols != metrics_columns()) fail("columns differ from the metric table");
    if (!j.contains("rows") || !j["rows"].is_array() || j["rows"].size() != 2) fail("expected two rows");
    const char* names[] = {"native", "aligned"};
    for (std::size_t r = 0; r < 2; ++r) {
        const json& row = j["rows"][r];
        if (!row.is_object() || row.value("name", "") != names[r]) fail(std::string("row ") + names[r] + " missing");
        std::set<std::string> keys;
        for (const auto& [k, v] : row.items()) keys.insert(k);
        std::set<std::string> expected(cols.begin(), cols.end());
        expected.insert("name");
        expected.insert("degenerate");
        if (keys != expected) fail(std::string("row ") + names[r] + " has unexpected keys");
        for (const auto& c : cols) {
            if (!row[c].is_number()) fail(c + " must be numeric");
            const double v = row[c].get<double>();
            if (!std::isfinite(v) || v < 0.0) fail(c + " out of range");
            if ((c.rfind("iou", 0) == 0 || c.rfind("n", 0) == 0) && v > 1.0 + 1e-12) fail(c + " above 1");
        }
    }
    if (!j.contains("paper_reference")) fail("missing paper_reference");
}

std::string orientation_csv(const json& report) {
    validate_orientation_report(report);
    std::vector<MetricsRow> rows;
    for (const auto& r : report["rows"]) rows.push_back(metrics_row_from_json(r));
    return metrics_csv(rows);
}

OrientationResult run_experiment_orientation(const RunConfig& config, const fs::path& manifest, const fs::path& out) {
    config.validate();
    fs::create_directories(out);
    const char* arms[] = {"native", "aligned"};
    DatasetIndex index[2];
    for (int a = 0; a < 2; ++a) {
        RunConfig c = config;
        c.align = a == 1;
        prepare(c, manifest, out / "data" / arms[a]);
        index[a] = load_dataset_index(out / "data" / arms[a]);
    }
    if (index[0].shapes.size() != index[1].shapes.size()) throw DataError("dataset variants hold different shapes");
    for (std::size_t i = 0; i < index[0].shapes.size(); ++i) {
        const auto& n = index[0].shapes[i];
        const auto& al = index[1].shapes[i];
        if (n.id != al.id) throw DataError("dataset variants hold different shapes");
        if (std::abs(n.volume - al.volume) > 1e-9)
            throw DataError("shape " + n.id + " differs in volume between variants");
    }

    EvalReport reports[2];
    for (int a = 0; a < 2; ++a) {
        RunConfig c = config;
        c.align = a == 1;
        const fs::path arm_dir = out / arms[a];
        run_training(c, out / "data" / arms[a], arm_dir);
        const OccupancyNetwork net = load_model(arm_dir / "best.vitp");
        const DatasetSplits splits = split_dataset(index[a], c.splits, c.seed);
        EvalOptions eo;
        eo.split = "test";
        eo.eval = c.eval;
        eo.voxel_res = c.voxel_res;
        eo.seed = c.seed;
        eo.workers = c.workers;
        const auto ids = select_eval_ids(splits.test, c.eval.sample_n, c.seed);
        reports[a] = evaluate(index[a], ids, network_predictor(net), eo);
        write_json(arm_dir / "eval.json", to_json(reports[a]));
        write_file(arm_dir / "eval.csv", metrics_csv(reports[a].metrics.shapes));
    }

    const TrainConfig tc = training_config(config, split_dataset(index[0], config.splits, config.seed).train.size());
    const SplitCounts counts = split_counts(config.splits, index[0].shapes.size());
    const json meta{{"seed", config.seed},
                    {"steps", tc.steps},
                    {"train_shapes", counts.train},
                    {"val_shapes", counts.val},
                    {"test_shapes", reports[0].metrics.shapes.size()},
                    {"voxel_res", config.voxel_res},
                    {"threshold", config.eval.threshold},
                    {"view", config.eval.view}};
    OrientationResult r;
    r.native = reports[0];
    r.aligned = reports[1];
    r.report = orientation_report(reports[0].metrics.aggregate, reports[1].metrics.aggregate, meta);
    validate_orientation_report(r.report);
    write_json(out / "orientation.json", r.report);
    write_file(out / "orientation.csv", orientation_csv(r.report));
    return r;
}

// Reports.

namespace {

std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

/// Shortest round-trip form padded to at least four decimals, so published
/// values show exactly as printed.
std::string reference_number(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    const auto dot = s.find('.');
    if (dot == std::string::npos) s += ".";
    const std::size_t decimals = s.size() - s.find('.') - 1;
    if (decimals < 4) s.append(4 - decimals, '0');
    return s;
}

std::string text_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    auto line = [&](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::size_t pad = width[c] - cells[c].size();
            if (c == 0) {
                s += cells[c] + std::string(pad, ' ');
            } else {
                s += "  " + std::string(pad, ' ') + cells[c];
            }
        }
        while (!s.empty() && s.back() == ' ') s.pop_back();
        return s + "\n";
    };
    std::string out = line(header);
    std::size_t total = 0;
    for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
    out += std::string(total, '-') + "\n";
    for (const auto& r : rows) out += line(r);
    return out;
}

std::vector<std::string> metric_cells(const MetricsRow& row) {
    const json j = to_json(row);
    std::vector<std::string> cells{row.name + (row.degenerate ? " *" : "")};
    for (const auto& c : metrics_columns()) cells.push_back(fixed4(j[c].get<double>()));
    return cells;
}

std::vector<std::string> metric_header(const std::string& first) {
    std::vector<std::string> h{first};
    for (const auto& c : metrics_columns()) h.push_back(c);
    return h;
}

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string short_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};

constexpr double kW = 720, kH = 400, kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;

std::string svg_open(const std::string& title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(kH) +
                    "\" viewBox=\"0 0 " + num(kW) + " " + num(kH) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kW / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + svg_escape(title) +
         "</text>\n";
    return s;
}

std::string svg_legend(const std::vector<std::string>& names) {
    std::string s;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double y = kTop + 10 + 20.0 * i;
        s += "<rect x=\"" + num(kW - kRight + 15) + "\" y=\"" + num(y - 10) + "\" width=\"12\" height=\"12\" fill=\"" +
             kPalette[i % 6] + "\"/>\n";
        s += "<text x=\"" + num(kW - kRight + 32) + "\" y=\"" + num(y) + "\">" + svg_escape(names[i]) + "</text>\n";
    }
    return s;
}

std::string svg_axes(double y_max, double y_min, const std::string& y_label) {
    const double plot_h = kH - kTop - kBottom;
    std::string s;
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
         num(kH - kBottom) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kH - kBottom) + "\" x2=\"" + num(kW - kRight) + "\" y2=\"" +
         num(kH - kBottom) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = y_min + (y_max - y_min) * t / 4.0;
        const double y = kH - kBottom - plot_h * t / 4.0;
        s += "<line x1=\"" + num(kLeft - 4) + "\" y1=\"" + num(y) + "\" x2=\"" + num(kLeft) + "\" y2=\"" + num(y) +
             "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + num(kLeft - 7) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + short_num(v) +
             "</text>\n";
    }
    s += "<text x=\"16\" y=\"" + num(kTop + plot_h / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(kTop + plot_h / 2) + ")\">" + svg_escape(y_label) + "</text>\n";
    return s;
}

/// Grouped bars: groups along x, one bar per series in each group.
std::string bar_chart(const std::string& title, const std::vector<std::string>& groups,
                      const std::vector<std::string>& series, const std::vector<std::vector<double>>& values,
                      const std::string& y_label) {
    double y_max = 0.0;
    for (const auto& row : values)
        for (double v : row) y_max = std::max(y_max, v);
    if (!(y_max > 0.0)) y_max = 1.0;
    y_max *= 1.1;
    const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
    std::string s = svg_open(title) + svg_axes(y_max, 0.0, y_label);
    const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(1, groups.size()));
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double x0 = kLeft + g * group_w + group_w * 0.1;
        for (std::size_t k = 0; k < series.size(); ++k) {
            const double v = values[k][g];
            const double h = plot_h * v / y_max;
            s += "<rect x=\"" + num(x0 + k * bar_w) + "\" y=\"" + num(kH - kBottom - h) + "\" width=\"" +
                 num(bar_w * 0.95) + "\" height=\"" + num(h) + "\" fill=\"" + kPalette[k % 6] + "\"><title>" +
                 svg_escape(series[k] + " " + groups[g] + " " + short_num(v)) + "</title></rect>\n";
        }
        s += "<text x=\"" + num(x0 + group_w * 0.4) + "\" y=\"" + num(kH - kBottom + 18) +
             "\" text-anchor=\"middle\">" + svg_escape(groups[g]) + "</text>\n";
    }
    return s + svg_legend(series) + "</svg>\n";
}

struct Curve {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

std::string line_chart(const std::string& title, const std::vector<Curve>& curves, const std::string& x_label,
                       const std::string& y_label) {
    double x_min = INFINITY, x_max = -INFINITY, y_min = INFINITY, y_max = -INFINITY;
    for (const auto& c : curves)
        for (auto [x, y] : c.points) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    if (!(x_max > x_min)) {
        x_min = std::isfinite(x_min) ? x_min - 1 : 0;
        x_max = x_min + 2;
    }
    if (!(y_max > y_min)) {
        y_min = std::isfinite(y_min) ? y_min - 0.5 : 0;
        y_max = y_min + 1;
    }
    y_min = std::min(y_min, 0.0);
    const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
    std::string s = svg_open(title) + svg_axes(y_max, y_min, y_label);
    s += "<text x=\"" + num(kLeft) + "\" y=\"" + num(kH - kBottom + 18) + "\" text-anchor=\"start\">" +
         short_num(x_min) + "</text>\n";
    s += "<text x=\"" + num(kW - kRight) + "\" y=\"" + num(kH - kBottom + 18) + "\" text-anchor=\"end\">" +
         short_num(x_max) + "</text>\n";
    s += "<text x=\"" + num(kLeft + plot_w / 2) + "\" y=\"" + num(kH - 18) + "\" text-anchor=\"middle\">" +
         svg_escape(x_label) + "</text>\n";
    std::vector<std::string> names;
    for (std::size_t k = 0; k < curves.size(); ++k) {
        names.push_back(curves[k].name);
        std::string pts;
        for (auto [x, y] : curves[k].points) {
            const double px = kLeft + plot_w * (x - x_min) / (x_max - x_min);
            const double py = kH - kBottom - plot_h * (y - y_min) / (y_max - y_min);
            pts += (pts.empty() ? "" : " ") + num(px) + "," + num(py);
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(kPalette[k % 6]) + "\" stroke-width=\"1.5\" points=\"" +
             pts + "\"/>\n";
    }
    return s + svg_legend(names) + "</svg>\n";
}

std::string file_stem(const std::string& name) {
    std::string s;
    for (char ch : name) s += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
    while (!s.empty() && s.front() == '_') s.erase(s.begin());
    return s.empty() ? "input" : s;
}

const std::vector<std::string> kChartMetrics{"chamfer_l1", "iou_voxels", "iou_points", "normal_consistency"};

std::vector<double> chart_values(const MetricsRow& row) {
    const json j = to_json(row);
    std::vector<double> v;
    for (const auto& m : kChartMetrics) v.push_back(j[m].get<double>());
    return v;
}

void report_orientation(const ReportInput& in, const json& j, ReportOutput& out) {
    validate_orientation_report(j);
    std::vector<std::vector<std::string>> rows;
    std::vector<MetricsRow> parsed;
    for (const auto& r : j["rows"]) {
        parsed.push_back(metrics_row_from_json(r));
        rows.push_back(metric_cells(parsed.back()));
    }
    out.text += "== orientation experiment: " + in.name + " ==\n";
    out.text += text_table(metric_header("arm"), rows);
    const json& ref = j["paper_reference"];
    std::vector<std::string> header{"paper reference", "arm"};
    for (const auto& c : ref.at("columns")) header.push_back(c.get<std::string>());
    std::vector<std::vector<std::string>> ref_rows;
    for (const auto& r : ref.at("rows")) {
        std::vector<std::string> cells{r.at("name").get<std::string>(), r.at("arm").get<std::string>()};
        for (const auto& c : ref.at("columns")) cells.push_back(reference_number(r.at(c.get<std::string>()).get<double>()));
        ref_rows.push_back(cells);
    }
    out.text += "\n" + text_table(header, ref_rows) + "\n";
    out.svgs[file_stem(in.name) + "_metrics.svg"] =
        bar_chart("Orientation experiment", kChartMetrics, {"native", "aligned"},
                  {chart_values(parsed[0]), chart_values(parsed[1])}, "value");
}

void report_eval(const ReportInput& in, const json& j, ReportOutput& out,
                 std::vector<std::pair<std::string, MetricsRow>>& aggregates) {
    const EvalReport r = eval_report_from_json(j);
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : r.metrics.shapes) rows.push_back(metric_cells(s));
    rows.push_back(metric_cells(r.metrics.aggregate));
    out.text += "== evaluation: " + in.name + " (split " + r.split + ", " +
                (r.all_views ? std::string("all views") : "view " + std::to_string(r.view)) + ", threshold " +
                reference_number(r.threshold) + ", res " + std::to_string(r.voxel_res) + ") ==\n";
    out.text += text_table(metric_header("shape"), rows);
    if (!r.sweep.empty()) {
        std::vector<std::vector<std::string>> sweep_rows;
        for (const auto& s : r.sweep) {
            MetricsRow row = s.aggregate;
            row.name = reference_number(s.threshold);
            sweep_rows.push_back(metric_cells(row));
        }
        out.text += "\n" + text_table(metric_header("threshold"), sweep_rows);
    }
    out.text += "\n";
    aggregates.emplace_back(in.name, r.metrics.aggregate);
}

void report_efficiency(const ReportInput& in, const json& j, ReportOutput& out) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> stages;
    std::vector<double> means;
    try {
        for (const auto& row : j.at("rows")) {
            for (const char* stage : {"encoding", "point_evaluation", "mesh_reconstruction"}) {
                const json& s = row.at(stage);
                rows.push_back({row.at("model").get<std::string>(), stage, fixed4(s.at("mean_ms").get<double>()),
                                fixed4(s.at("std_ms").get<double>()), std::to_string(s.at("trials").get<int>())});
                stages.push_back(stage);
                means.push_back(s.at("mean_ms").get<double>());
            }
            rows.push_back({row.at("model").get<std::string>(), "parameters",
                            std::to_string(row.at("model_parameters").get<std::size_t>()), "", ""});
        }
    } catch (const json::exception& e) {
        throw DataError(in.name + ": efficiency report schema mismatch: " + e.what());
    }
    out.text += "== efficiency: " + in.name + " ==\n";
    out.text += text_table({"model", "stage", "mean_ms", "std_ms", "trials"}, rows);
    if (j.contains("published_reference")) {
        std::vector<std::vector<std::string>> ref_rows;
        auto cell = [](const json& v) { return v.is_null() ? std::string("-") : reference_number(v.get<double>()); };
        for (const auto& r : j["published_reference"])
            ref_rows.push_back({r.at("model").get<std::string>(), cell(r.at("encoding_s")),
                                cell(r.at("point_evaluation_s")), cell(r.at("mesh_reconstruction_s")),
                                r.at("model_parameters").get<std::string>(), r.at("model_size").get<std::string>()});
        out.text += "\n" + text_table({"paper reference", "encoding_s", "point_evaluation_s", "mesh_reconstruction_s",
                                       "parameters", "size"},
                                      ref_rows);
    }
    out.text += "\n";
    out.svgs[file_stem(in.name) + "_timing.svg"] = bar_chart("Inference stages", stages, {"mean ms"}, {means}, "ms");
}

void report_log(const ReportInput& in, ReportOutput& out) {
    Curve loss{"loss", {}}, val{"val IoU", {}};
    std::istringstream lines(in.content);
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        ++n;
        if (line.empty()) continue;
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("step"))
            throw DataError(in.name + ": line " + std::to_string(n) + " is not a training log record");
        const double step = j["step"].get<double>();
        if (j.contains("loss")) {
            loss.points.emplace_back(step, j["loss"].get<double>());
        } else if (j.contains("val_iou_points")) {
            val.points.emplace_back(step, j["val_iou_points"].get<double>());
        } else {
            throw DataError(in.name + ": line " + std::to_string(n) + " has neither loss nor validation");
        }
    }
    if (loss.points.empty()) throw DataError(in.name + ": empty training log");
    out.text += "== training log: " + in.name + " ==\n";
    std::vector<std::vector<std::string>> rows{
        {"steps", std::to_string(loss.points.size())},
        {"first loss", fixed4(loss.points.front().second)},
        {"last loss", fixed4(loss.points.back().second)},
        {"min loss", fixed4(std::min_element(loss.points.begin(), loss.points.end(),
                                             [](auto a, auto b) { return a.second < b.second; })
                                ->second)}};
    if (!val.points.empty()) {
        double best = 0.0;
        for (auto [s, v] : val.points) best = std::max(best, v);
        rows.push_back({"validations", std::to_string(val.points.size())});
        rows.push_back({"best val IoU", fixed4(best)});
    }
    out.text += text_table({"quantity", "value"}, rows) + "\n";
    std::vector<Curve> curves{loss};
    if (!val.points.empty()) curves.push_back(val);
    out.svgs[file_stem(in.name) + "_loss.svg"] = line_chart("Training", curves, "step", "loss / IoU");
}

}  // namespace

ReportOutput build_report(const std::vector<ReportInput>& inputs) {
    if (inputs.empty()) throw ConfigError("report needs at least one input");
    ReportOutput out;
    std::vector<std::pair<std::string, MetricsRow>> aggregates;
    for (const auto& in : inputs) {
        if (in.name.size() >= 6 && in.name.compare(in.name.size() - 6, 6, ".jsonl") == 0) {
            report_log(in, out);
            continue;
        }
        const json j = parse_json(in.content, in.name);
        const std::string kind = j.is_object() ? j.value("kind", "") : "";
        if (kind == "orientation") {
            report_orientation(in, j, out);
        } else if (kind == "eval") {
            report_eval(in, j, out, aggregates);
        } else if (kind == "efficiency") {
            report_efficiency(in, j, out);
        } else {
            throw DataError(in.name + ": schema mismatch (unknown report kind)");
        }
    }
    if (!aggregates.empty()) {
        std::vector<std::string> series;
        std::vector<std::vector<double>> values;
        for (const auto& [name, row] : aggregates) {
            series.push_back(name);
            values.push_back(chart_values(row));
        }
        out.svgs["eval_comparison.svg"] = bar_chart("Reconstruction metrics", kChartMetrics, series, values, "value");
    }
    return out;
}

ReportOutput build_report_files(const std::vector<fs::path>& paths) {
    std::vector<ReportInput> inputs;
    for (const auto& p : paths) inputs.push_back({p.generic_string(), read_file(p)});
    return build_report(inputs);
}

void write_report(const ReportOutput& report, const fs::path& dir) {
    fs::create_directories(dir);
    write_file(dir / "report.txt", report.text);
    for (const auto& [name, svg] : report.svgs) write_file(dir / name, svg);
}

// Efficiency.

json run_bench(const OccupancyNetwork& net, const SketchImage& sketch, const std::array<double, 4>& context,
               const std::string& model_name, const BenchOptions& options) {
    if (options.trials < 1) throw ConfigError("bench needs at least one trial");
    Tensor c = inference_condition(net, {&sketch}, {context});
    ScalarGrid grid = eval_grid(net, c, options.resolution, 0.05, kMaxChunk, options.workers);
    TimingHarness harness;
    harness.register_stage(TimingStage::Encoding, [&] { c = inference_condition(net, {&sketch}, {context}); });
    harness.register_stage(TimingStage::PointEvaluation,
                           [&] { grid = eval_grid(net, c, options.resolution, 0.05, kMaxChunk, options.workers); });
    harness.register_stage(TimingStage::MeshReconstruction,
                           [&] { (void)marching_cubes(grid, options.threshold, options.workers); });
    const auto results = harness.run_all(options.trials);
    ModelFootprint fp;
    fp.parameters = net.params().count();
    fp.bytes = encode_checkpoint(model_records(net, nullptr, nullptr)).size();
    json j = efficiency_report(model_name, results, fp);
    j["kind"] = "efficiency";
    j["resolution"] = options.resolution;
    return j;
}

}  // namespace sketchmass
