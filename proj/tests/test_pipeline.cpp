#include <cmath>
#include <set>

#include "doctest.h"
#include "sketchmass/alignment.hpp"
#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/pipeline.hpp"
#include "sketchmass/toygen.hpp"
#include "test_util.hpp"

using namespace sketchmass;
namespace fs = std::filesystem;

namespace {

RunConfig small_run() {
    RunConfig c = run_config_from_json(nlohmann::json::parse(R"({
        "splits": {"train": 4, "val": 2, "test": 4},
        "sampling": {"n_points": 4000},
        "steps": 4,
        "optimizer": {"batch_size": 2, "points_per_shape": 128},
        "views_used": 2,
        "val_points": 128,
        "validate_every": 2,
        "eval": {"surface_samples": 2000, "points": 2000}
    })"));
    c.seed = 5;
    return c;
}

/// Ten toy shapes prepared once in both variants.
struct Fixture {
    sketchmass::testing::TempDir dir{"pipeline"};
    fs::path manifest;
    PrepareResult aligned, native;

    Fixture() {
        write_toy_dataset(dir / "toys", toygen(10, all_families(), 21));
        manifest = dir / "toys" / "manifest.json";
        RunConfig c = small_run();
        c.align = true;
        aligned = prepare(c, manifest, dir / "aligned");
        c.align = false;
        native = prepare(c, manifest, dir / "native");
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

}  // namespace

TEST_CASE("run config") {
    SUBCASE("defaults and round trip") {
        const RunConfig c = run_config_from_json(nlohmann::json::object());
        CHECK(c.splits == std::array<double, 3>{60, 10, 20});
        CHECK(c.views_per_shape == 24);
        CHECK(c.voxel_res == 32);
        CHECK(c.train.views_used == 8);
        CHECK(c.train.steps == 3000);
        CHECK(c.sampling.n_points == 100000);
        CHECK(c.eval.view == 0);
        const auto j = to_json(small_run());
        CHECK(to_json(run_config_from_json(j)) == j);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"stepz": 3})")), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"splits": {"train": 0.5, "val": 0.2, "test": 0.2}})")),
                        ConfigError);
        CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"splits": {"train": 2.5, "val": 1, "test": 1}})")),
                        ConfigError);
        CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"views_used": 30})")), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"eval": {"threshold": 1.0}})")), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"seed": "x"})")), ConfigError);
    }
    SUBCASE("split counts") {
        const auto f = split_counts({0.6, 0.1, 0.3}, 10);
        CHECK(f.train == 6);
        CHECK(f.val == 1);
        CHECK(f.test == 3);
        const auto c = split_counts({60, 10, 20}, 95);
        CHECK(c.train + c.val + c.test == 90);
        CHECK_THROWS_AS(split_counts({60, 10, 20}, 80), DataError);
    }
    SUBCASE("epochs set the step count") {
        RunConfig c = small_run();
        c.epochs = 3;
        CHECK(training_config(c, 5).steps == 9);
        CHECK(training_config(c, 5).seed == 5);
    }
}

TEST_CASE("shape frames") {
    for (std::uint64_t i = 0; i < 10; ++i) {
        const auto family = all_families()[i % all_families().size()];
        const ToyShapeSpec spec = random_toy_spec(family, 8, i);
        const ShapeFrames f = shape_frames(build_toy(spec));
        const double va = mesh_volume(f.aligned).volume, vn = mesh_volume(f.native).volume;
        CHECK(std::abs(va - vn) <= 1e-12);
        for (const TriangleMesh* m : {&f.aligned, &f.native}) {
            for (const Vec3& v : m->vertices()) {
                CHECK(v.head<2>().norm() <= 0.5 + 1e-12);
                CHECK(std::abs(v.z()) <= 0.5 + 1e-12);
            }
        }
        CHECK(std::abs(align_to_canonical(f.aligned).theta) < 1e-6);
        if (family != ToyFamily::LShape) {
            const double d = wrap_half_pi(f.theta - spec.yaw);
            CHECK(std::abs(d) < 1e-6);
        }
    }
}

TEST_CASE("prepare") {
    Fixture& fx = fixture();

    SUBCASE("layout") {
        CHECK(fx.aligned.shapes.size() == 10);
        CHECK(fx.aligned.skipped.empty());
        int occ = 0, pgm = 0;
        for (const auto& e : fs::recursive_directory_iterator(fx.dir / "aligned")) {
            if (e.path().extension() == ".occ1") ++occ;
            if (e.path().extension() == ".pgm") ++pgm;
        }
        CHECK(occ == 10);
        CHECK(pgm == 240);
        CHECK(fs::exists(fx.dir / "aligned" / "dataset.json"));
        const fs::path one = fx.dir / "aligned" / fx.aligned.shapes[0].id;
        for (const char* name : {"mesh.obj", "field.occ1", "cameras.json", "context.json", "sketch_00.pgm",
                                 "sketch_23.pgm", "checksums.json"})
            CHECK(fs::exists(one / name));
        CHECK(cameras_from_json(nlohmann::json::parse(read_file(one / "cameras.json"))).size() == 24);
        CHECK(read_occ1(one / "field.occ1").size() == 4000);
    }
    SUBCASE("orientation metadata") {
        for (const auto& s : fx.aligned.shapes) CHECK_FALSE(s.context.native_orientation);
        for (const auto& s : fx.native.shapes) {
            CHECK(s.context.native_orientation);
            CHECK(s.context.orientation_theta == 0.0);
        }
        std::size_t turned = 0;
        for (const auto& s : fx.aligned.shapes) turned += std::abs(s.context.orientation_theta) > 1e-3;
        CHECK(turned >= 8);
    }
    SUBCASE("variants are congruent") {
        REQUIRE(fx.aligned.shapes.size() == fx.native.shapes.size());
        for (std::size_t i = 0; i < fx.aligned.shapes.size(); ++i) {
            CHECK(fx.aligned.shapes[i].id == fx.native.shapes[i].id);
            CHECK(std::abs(fx.aligned.shapes[i].volume - fx.native.shapes[i].volume) <= 1e-9);
        }
    }
    SUBCASE("restart reuses verified shapes and rebuilds damaged ones") {
        sketchmass::testing::TempDir tmp("prepare_restart");
        const auto toys = toygen(3, all_families(), 4);
        write_toy_dataset(tmp / "toys", toys);
        RunConfig c = small_run();
        c.views_per_shape = 3;
        c.train.views_used = 2;
        const fs::path root = tmp / "data";
        prepare(c, tmp / "toys" / "manifest.json", root);
        const std::string occ = read_file(root / toys[1].id / "field.occ1");
        const std::string dataset = read_file(root / "dataset.json");

        const auto again = prepare(c, tmp / "toys" / "manifest.json", root);
        CHECK(again.reused.size() == 3);
        CHECK(read_file(root / "dataset.json") == dataset);

        write_file(root / toys[1].id / "field.occ1", occ.substr(0, occ.size() / 2));
        fs::remove(root / toys[2].id / "sketch_01.pgm");
        const auto fixed = prepare(c, tmp / "toys" / "manifest.json", root);
        CHECK(fixed.reused == std::vector<std::string>{toys[0].id});
        CHECK(read_file(root / toys[1].id / "field.occ1") == occ);
        CHECK(fs::exists(root / toys[2].id / "sketch_01.pgm"));

        c.seed = 6;
        CHECK(prepare(c, tmp / "toys" / "manifest.json", root).reused.empty());
    }
    SUBCASE("non-watertight meshes are skipped") {
        sketchmass::testing::TempDir tmp("prepare_skip");
        const auto toys = toygen(2, all_families(), 4);
        write_toy_dataset(tmp / "toys", toys);
        const TriangleMesh cube = sketchmass::testing::unit_cube();
        std::vector<Face> faces(cube.faces().begin(), cube.faces().end() - 1);
        save_obj(tmp / "toys" / "open.obj", TriangleMesh(cube.vertices(), faces));
        auto entries = load_manifest(tmp / "toys" / "manifest.json");
        entries.push_back({"open", "open.obj", std::nullopt, std::nullopt});
        save_manifest(tmp / "toys" / "manifest.json", entries);
        RunConfig c = small_run();
        c.views_per_shape = 2;
        const auto r = prepare(c, tmp / "toys" / "manifest.json", tmp / "data");
        CHECK(r.shapes.size() == 2);
        REQUIRE(r.skipped.size() == 1);
        CHECK(r.skipped[0].first == "open");
        CHECK_FALSE(fs::exists(tmp / "data" / "open"));
        CHECK(load_dataset_index(tmp / "data").shapes.size() == 2);
    }
    SUBCASE("lat/lon pass through") {
        sketchmass::testing::TempDir tmp("prepare_latlon");
        write_toy_dataset(tmp / "toys", toygen(1, all_families(), 4));
        auto entries = load_manifest(tmp / "toys" / "manifest.json");
        entries[0].lat = 47.37;
        entries[0].lon = 8.54;
        save_manifest(tmp / "toys" / "manifest.json", entries);
        RunConfig c = small_run();
        c.views_per_shape = 1;
        c.train.views_used = 1;
        const auto r = prepare(c, tmp / "toys" / "manifest.json", tmp / "data");
        CHECK(r.shapes[0].context.latitude == 47.37);
        CHECK(r.shapes[0].context.longitude == 8.54);
        const auto v = context_vector(r.shapes[0].context);
        CHECK(v[2] == doctest::Approx(47.37 / 90));
    }
    SUBCASE("bad manifests") {
        sketchmass::testing::TempDir tmp("prepare_bad");
        write_file(tmp / "m.json", R"([{"id": "a", "path": "missing.obj"}])");
        CHECK_THROWS_AS(prepare(small_run(), tmp / "m.json", tmp / "data"), DataError);
        write_file(tmp / "dup.json", R"([{"id": "a", "path": "x.obj"}, {"id": "a", "path": "y.obj"}])");
        CHECK_THROWS_AS(prepare(small_run(), tmp / "dup.json", tmp / "data"), DataError);
        CHECK_THROWS_AS(load_dataset_index(tmp / "nowhere"), DataError);
    }
}

TEST_CASE("dataset splits and loading") {
    Fixture& fx = fixture();
    const DatasetIndex a = load_dataset_index(fx.dir / "aligned");
    const DatasetIndex n = load_dataset_index(fx.dir / "native");
    const DatasetSplits sa = split_dataset(a, {4, 2, 4}, 5);
    const DatasetSplits sn = split_dataset(n, {4, 2, 4}, 5);
    CHECK(sa.train == sn.train);
    CHECK(sa.test == sn.test);
    std::set<std::string> all(sa.train.begin(), sa.train.end());
    all.insert(sa.val.begin(), sa.val.end());
    all.insert(sa.test.begin(), sa.test.end());
    CHECK(all.size() == 10);
    CHECK(split_dataset(a, {4, 2, 4}, 6).train != sa.train);
    CHECK_THROWS_AS(sa.get("holdout"), ConfigError);

    const TrainData d = load_train_data(a, sa, 2);
    CHECK(d.train.size() == 4);
    CHECK(d.val.size() == 2);
    CHECK(d.train[0].views.size() == 2);
    CHECK(d.train[0].field.size() == 4000);
    CHECK_THROWS_AS(load_train_shape(a, sa.train[0], 25), DataError);
}

TEST_CASE("evaluation") {
    Fixture& fx = fixture();
    const DatasetIndex index = load_dataset_index(fx.dir / "aligned");
    const DatasetSplits splits = split_dataset(index, {4, 2, 4}, 5);
    EvalOptions o;
    o.eval.surface_samples = 3000;
    o.eval.points = 2000;
    o.seed = 5;

    SUBCASE("oracle decoder scores perfectly") {
        const EvalReport r = evaluate(index, splits.test, oracle_predictor(), o);
        REQUIRE(r.metrics.shapes.size() == 4);
        for (const auto& row : r.metrics.shapes) {
            CHECK(row.iou_voxels == 1.0);
            CHECK(row.iou_points >= 0.999);
            // Marching cubes on a binary grid sits within half a voxel.
            CHECK(row.chamfer_l1 < 0.5 * 1.1 / 32 * std::sqrt(3.0));
            CHECK_FALSE(row.degenerate);
        }
        CHECK(r.sweep.size() == 3);
    }
    SUBCASE("aggregate is the mean of the shape rows") {
        const OccupancyNetwork net(small_run().train.model, 3);
        const EvalReport r = evaluate(index, splits.test, network_predictor(net), o);
        const auto j = to_json(r);
        for (const auto& col : metrics_columns()) {
            double sum = 0;
            for (const auto& row : j["shapes"]) sum += row[col].get<double>();
            CHECK(j["aggregate"][col].get<double>() == doctest::Approx(sum / 4).epsilon(1e-12));
        }
        const auto again = to_json(eval_report_from_json(j));
        CHECK(again == j);
        CHECK(to_json(evaluate(index, splits.test, network_predictor(net), o)).dump() == j.dump());
    }
    SUBCASE("sample-n picks the same subset every time") {
        std::vector<std::string> ids;
        for (int i = 0; i < 50; ++i) ids.push_back("s" + std::to_string(100 + i));
        const auto a = select_eval_ids(ids, 30, 9);
        CHECK(a.size() == 30);
        CHECK(select_eval_ids(ids, 30, 9) == a);
        CHECK(select_eval_ids(ids, 30, 10) != a);
        CHECK(std::set<std::string>(a.begin(), a.end()).size() == 30);
        CHECK(select_eval_ids(ids, 0, 9) == ids);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(evaluate(index, {}, oracle_predictor(), o), DataError);
        EvalOptions bad = o;
        bad.eval.view = 24;
        CHECK_THROWS_AS(evaluate(index, splits.test, oracle_predictor(), bad), ConfigError);
        CHECK_THROWS_AS(eval_report_from_json(nlohmann::json{{"kind", "eval"}}), DataError);
    }
}

TEST_CASE("training from a prepared dataset") {
    Fixture& fx = fixture();
    sketchmass::testing::TempDir tmp("pipeline_train");
    const RunConfig c = small_run();
    const auto r = run_training(c, fx.dir / "aligned", tmp / "run");
    CHECK(r.steps_run == 4);
    for (const char* name : {"best.vitp", "last.vitp", "train_log.jsonl", "run_config.json"})
        CHECK(fs::exists(tmp / "run" / name));
    run_training(c, fx.dir / "aligned", tmp / "again");
    CHECK(read_file(tmp / "run" / "last.vitp") == read_file(tmp / "again" / "last.vitp"));
}

namespace {

MetricsRow sample_row(double chamfer, double iou) {
    MetricsRow r;
    r.accuracy = r.completeness = r.chamfer_l1 = chamfer;
    r.accuracy2 = r.completeness2 = r.chamfer_l2 = chamfer * chamfer;
    r.iou_points = r.iou_voxels = iou;
    r.normal_consistency = r.nc_accuracy = r.nc_completeness = 0.8;
    return r;
}

}  // namespace

TEST_CASE("orientation report") {
    const auto report = orientation_report(sample_row(0.05, 0.6), sample_row(0.04, 0.7), {{"seed", 0}});
    SUBCASE("schema") {
        CHECK_NOTHROW(validate_orientation_report(report));
        CHECK(report["columns"].get<std::vector<std::string>>() == metrics_columns());
        CHECK(report["rows"][0]["name"] == "native");
        CHECK(report["rows"][1]["name"] == "aligned");
        for (const char* col : {"chamfer_l1", "iou_voxels", "iou_points", "normal_consistency", "accuracy",
                                "completeness", "chamfer_l2", "nc_accuracy", "nc_completeness"})
            CHECK(report["rows"][0].contains(col));
    }
    SUBCASE("published rows") {
        const auto ref = table3_reference();
        std::map<std::string, nlohmann::json> rows;
        for (const auto& r : ref["rows"]) rows[r["name"].get<std::string>()] = r;
        CHECK(rows["PFTA"]["chamfer_l1"].get<double>() == 0.0242);
        CHECK(rows["PFTA"]["iou"].get<double>() == 0.7369);
        CHECK(rows["PFTA"]["normal_consistency"].get<double>() == 0.8438);
        CHECK(rows["PFT"]["iou"].get<double>() == 0.6396);
        CHECK(rows["PFT"]["chamfer_l1"].get<double>() == 0.0362);
        CHECK(rows["VTA"]["iou"].get<double>() == 0.7223);
        CHECK(rows["VT"]["iou"].get<double>() == 0.6500);
    }
    SUBCASE("invalid reports") {
        auto broken = report;
        broken["rows"][1]["name"] = "rotated";
        CHECK_THROWS_AS(validate_orientation_report(broken), DataError);
        broken = report;
        broken["rows"][0].erase("iou_voxels");
        CHECK_THROWS_AS(validate_orientation_report(broken), DataError);
        broken = report;
        broken["rows"][0]["extra"] = 1.0;
        CHECK_THROWS_AS(validate_orientation_report(broken), DataError);
        broken = report;
        broken["rows"][0]["iou_voxels"] = 1.5;
        CHECK_THROWS_AS(validate_orientation_report(broken), DataError);
        broken = report;
        broken["columns"].erase(0);
        CHECK_THROWS_AS(validate_orientation_report(broken), DataError);
    }
    SUBCASE("csv") {
        const std::string csv = orientation_csv(report);
        CHECK(csv.find("native,") != std::string::npos);
        CHECK(csv.find("aligned,") != std::string::npos);
    }
}

TEST_CASE("report") {
    const auto orient = orientation_report(sample_row(0.05, 0.6), sample_row(0.04, 0.7), {});
    SUBCASE("orientation replay shows the published values") {
        const ReportOutput out = build_report({{"orientation.json", orient.dump()}});
        CHECK(out.text.find("paper reference") != std::string::npos);
        CHECK(out.text.find("0.0242") != std::string::npos);
        CHECK(out.text.find("0.7369") != std::string::npos);
        CHECK(out.text.find("0.84385") != std::string::npos);
        CHECK(out.text.find("native") != std::string::npos);
        REQUIRE(out.svgs.size() == 1);
        CHECK(out.svgs.begin()->second.rfind("<svg", 0) == 0);
    }
    SUBCASE("deterministic") {
        const std::string log = "{\"step\":1,\"loss\":0.7,\"bce\":0.7,\"kl\":0,\"lr\":1e-4,\"wall_ms\":3}\n"
                                "{\"step\":2,\"loss\":0.5,\"bce\":0.5,\"kl\":0,\"lr\":1e-4,\"wall_ms\":5}\n"
                                "{\"step\":2,\"epoch\":1,\"val_iou_points\":0.4,\"best\":true,\"wall_ms\":6}\n";
        const std::vector<ReportInput> in{{"a/orientation.json", orient.dump()}, {"train_log.jsonl", log}};
        const ReportOutput a = build_report(in), b = build_report(in);
        CHECK(a.text == b.text);
        CHECK(a.svgs == b.svgs);
        CHECK(a.svgs.size() == 2);
        CHECK(a.text.find("best val IoU") != std::string::npos);
    }
    SUBCASE("aligned columns") {
        const ReportOutput out = build_report({{"o.json", orient.dump()}});
        std::istringstream lines(out.text);
        std::string header, rule, native;
        std::getline(lines, header);
        std::getline(lines, header);
        std::getline(lines, rule);
        std::getline(lines, native);
        CHECK(header.size() == rule.size());
        CHECK(native.size() == rule.size());
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(build_report({}), ConfigError);
        CHECK_THROWS_AS(build_report({{"x.json", R"({"kind": "mystery"})"}}), DataError);
        CHECK_THROWS_AS(build_report({{"x.json", "not json"}}), DataError);
        CHECK_THROWS_AS(build_report({{"log.jsonl", "{\"epoch\": 1}\n"}}), DataError);
        auto bad = orient;
        bad["rows"][0].erase("chamfer_l1");
        CHECK_THROWS_AS(build_report({{"o.json", bad.dump()}}), DataError);
    }
}

TEST_CASE("bench") {
    ModelConfig mc;
    mc.c_dim = 32;
    mc.hidden = 16;
    mc.blocks = 1;
    mc.encoder_channels = {4, 4, 4, 4, 4};
    const OccupancyNetwork net(mc, 1);
    BenchOptions o;
    o.resolution = 8;
    const auto j = run_bench(net, SketchImage{}, {0.0, 1.0, 0.0, 0.0}, "tiny", o);
    CHECK(j["kind"] == "efficiency");
    CHECK(j["trials_per_stage"] == 10);
    const auto& row = j["rows"][0];
    for (const char* stage : {"encoding", "point_evaluation", "mesh_reconstruction"}) {
        const auto trials = row[stage]["trials_ms"].get<std::vector<double>>();
        REQUIRE(trials.size() == 10);
        double sum = 0;
        for (double t : trials) sum += t;
        CHECK(row[stage]["mean_ms"].get<double>() == doctest::Approx(sum / 10).epsilon(1e-12));
    }
    CHECK(row["model_parameters"] == net.params().count());
    CHECK_NOTHROW(build_report({{"eff.json", j.dump()}}));
}
