// Command-line front end: toygen, prepare, train, reconstruct, eval, report,
// experiment-orientation and bench.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sketchmass/errors.hpp"
#include "sketchmass/extract.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/pipeline.hpp"
#include "sketchmass/render.hpp"
#include "sketchmass/runtime.hpp"
#include "sketchmass/toygen.hpp"

namespace fs = std::filesystem;
using namespace sketchmass;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

RunConfig load_config(const Globals& g) {
    RunConfig c = g.config.empty() ? run_config_from_json(nlohmann::json::object()) : load_run_config(g.config);
    if (g.seed) {
        c.seed = *g.seed;
        c.train.seed = *g.seed;
    }
    return c;
}

fs::path out_or(const Globals& g, const fs::path& fallback) { return g.out.empty() ? fallback : fs::path(g.out); }

fs::path dataset_or(const std::string& flag, const RunConfig& c) {
    if (!flag.empty()) return flag;
    if (c.dataset_dir.empty()) throw ConfigError("no dataset given (use --dataset or dataset_dir in the config)");
    return c.dataset_dir;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file(path, j.dump(2) + "\n");
}

std::vector<ToyFamily> parse_families(const std::string& list) {
    if (list.empty()) return all_families();
    std::vector<ToyFamily> out;
    std::stringstream ss(list);
    std::string name;
    while (std::getline(ss, name, ',')) {
        try {
            out.push_back(parse_family(name));
        } catch (const Error&) {
            throw ConfigError("unknown family '" + name + "'");
        }
    }
    if (out.empty()) throw ConfigError("no families given");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Sketch-to-building-mass reconstruction with occupancy networks"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Run configuration (JSON)");
    app.add_option("--seed", g.seed, "Master seed, overrides the config");
    app.add_option("--out", g.out, "Output file or directory");

    // toygen
    auto* toy = app.add_subcommand("toygen", "Generate procedural building masses and a manifest");
    std::size_t toy_count = 90;
    std::string toy_families;
    toy->add_option("--count", toy_count, "Number of shapes")->capture_default_str();
    toy->add_option("--families", toy_families, "Comma-separated: box,l-shape,u-shape,tower-setback,courtyard");

    // prepare
    auto* prep = app.add_subcommand("prepare", "Align, normalize, label and render a manifest of meshes");
    std::string prep_manifest;
    bool prep_align = false, prep_native = false;
    prep->add_option("--manifest", prep_manifest, "Manifest JSON listing id and path per mesh")->required();
    prep->add_flag("--align", prep_align, "Rotate each shape into its canonical pose");
    prep->add_flag("--native", prep_native, "Keep the original orientation");

    // train
    auto* tr = app.add_subcommand("train", "Train the occupancy network on a prepared dataset");
    std::string tr_dataset;
    bool tr_resume = false;
    tr->add_option("--dataset", tr_dataset, "Prepared dataset directory");
    tr->add_flag("--resume", tr_resume, "Continue from last.vitp in the output directory");

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "Turn one sketch into a mesh");
    std::string rec_ckpt, rec_sketch;
    double rec_tau = 0.5, rec_theta = 0.0;
    int rec_res = 32;
    rec->add_option("--checkpoint", rec_ckpt, "Model checkpoint (.vitp)")->required();
    rec->add_option("--sketch", rec_sketch, "224x224 PGM sketch")->required();
    rec->add_option("--tau", rec_tau, "Iso-surface threshold")->capture_default_str();
    rec->add_option("--res", rec_res, "Grid resolution")->capture_default_str();
    rec->add_option("--theta", rec_theta, "Orientation angle for models trained with context");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string ev_ckpt, ev_dataset, ev_split = "test";
    std::optional<std::size_t> ev_sample;
    std::optional<int> ev_view;
    std::optional<double> ev_tau;
    bool ev_all_views = false, ev_oracle = false;
    ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint (.vitp)");
    ev->add_option("--dataset", ev_dataset, "Prepared dataset directory");
    ev->add_option("--split", ev_split, "train, val or test")->capture_default_str();
    ev->add_option("--sample-n", ev_sample, "Evaluate a seeded random subset of this many shapes");
    ev->add_option("--view", ev_view, "Sketch index per shape");
    ev->add_flag("--all-views", ev_all_views, "Average over every sketch of each shape");
    ev->add_option("--tau", ev_tau, "Iso-surface threshold");
    ev->add_flag("--oracle", ev_oracle, "Score the ground-truth occupancy instead of a model");

    // report
    auto* rep = app.add_subcommand("report", "Tables and plots from report JSON and training logs");
    std::vector<std::string> rep_inputs;
    rep->add_option("inputs", rep_inputs, "Eval, orientation or efficiency JSON; training .jsonl logs");

    // experiment-orientation
    auto* exp = app.add_subcommand("experiment-orientation", "Aligned vs native orientation comparison");
    std::string exp_manifest;
    exp->add_option("--manifest", exp_manifest, "Manifest of source meshes")->required();

    // bench
    auto* bench = app.add_subcommand("bench", "Time encoding, point evaluation and mesh reconstruction");
    std::string bench_ckpt, bench_sketch, bench_name = "conv-encoder";
    int bench_trials = TimingHarness::kDefaultTrials, bench_res = 32;
    bench->add_option("--checkpoint", bench_ckpt, "Model checkpoint; a freshly initialized model when omitted");
    bench->add_option("--sketch", bench_sketch, "PGM sketch; a rendered box when omitted");
    bench->add_option("--trials", bench_trials, "Trials per stage")->capture_default_str();
    bench->add_option("--res", bench_res, "Grid resolution")->capture_default_str();
    bench->add_option("--name", bench_name, "Model name in the report")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const RunConfig config = load_config(g);

        if (*toy) {
            if (toy_count < 1) throw ConfigError("--count must be at least 1");
            const auto shapes = toygen(toy_count, parse_families(toy_families), config.seed);
            const fs::path out = out_or(g, "toys");
            write_toy_dataset(out, shapes);
            std::cout << "wrote " << shapes.size() << " shapes to " << out.string() << "\n";
        } else if (*prep) {
            if (prep_align && prep_native) throw ConfigError("--align and --native are exclusive");
            RunConfig c = config;
            if (prep_align) c.align = true;
            if (prep_native) c.align = false;
            const fs::path out = g.out.empty() ? dataset_or("", c) : fs::path(g.out);
            const auto r = prepare(c, prep_manifest, out);
            std::cout << "prepared " << r.shapes.size() << " shapes (" << r.reused.size() << " reused, "
                      << r.skipped.size() << " skipped) in " << out.string() << "\n";
        } else if (*tr) {
            const fs::path out = out_or(g, "run");
            const auto r = run_training(config, dataset_or(tr_dataset, config), out, {tr_resume});
            std::cout << "trained " << r.steps_run << " steps, final loss " << r.final_loss;
            if (r.best_step >= 0) std::cout << ", best val IoU " << r.best_val << " at step " << r.best_step;
            std::cout << "\n";
        } else if (*rec) {
            const OccupancyNetwork net = load_model(rec_ckpt);
            const SketchImage sketch = read_pgm(rec_sketch);
            ReconstructOptions ro;
            ro.resolution = rec_res;
            ro.threshold = rec_tau;
            ro.workers = config.workers;
            ContextMeta ctx;
            ctx.orientation_theta = rec_theta;
            validate(ctx);
            const Reconstruction r = reconstruct(net, sketch, context_vector(ctx), ro);
            const fs::path out = out_or(g, "reconstruction");
            fs::create_directories(out);
            save_obj(out / "mesh.obj", r.mesh);
            export_usda(out / "mesh.usda", r.mesh);
            write_json(out / "reconstruction.json", reconstruction_report(r));
            std::cout << r.mesh.num_vertices() << " vertices, " << r.mesh.num_faces() << " faces"
                      << (r.empty ? " (empty reconstruction)" : "") << "\n";
        } else if (*ev) {
            const fs::path dataset = dataset_or(ev_dataset, config);
            const DatasetIndex index = load_dataset_index(dataset);
            const DatasetSplits splits = split_dataset(index, config.splits, config.seed);
            EvalOptions eo;
            eo.split = ev_split;
            eo.eval = config.eval;
            if (ev_sample) eo.eval.sample_n = *ev_sample;
            if (ev_view) eo.eval.view = *ev_view;
            if (ev_tau) eo.eval.threshold = *ev_tau;
            eo.eval.all_views = eo.eval.all_views || ev_all_views;
            eo.voxel_res = config.voxel_res;
            eo.seed = config.seed;
            eo.workers = config.workers;
            const auto ids = select_eval_ids(splits.get(ev_split), eo.eval.sample_n, config.seed);
            std::optional<OccupancyNetwork> net;
            Predictor predictor;
            if (ev_oracle) {
                predictor = oracle_predictor();
            } else {
                if (ev_ckpt.empty()) throw ConfigError("eval needs --checkpoint (or --oracle)");
                if (!fs::exists(ev_ckpt)) throw DataError("missing checkpoint " + ev_ckpt);
                net = load_model(ev_ckpt);
                predictor = network_predictor(*net);
            }
            const EvalReport r = evaluate(index, ids, predictor, eo);
            const fs::path out = out_or(g, "eval");
            write_json(out / "eval.json", to_json(r));
            std::vector<MetricsRow> rows = r.metrics.shapes;
            rows.push_back(r.metrics.aggregate);
            write_file(out / "eval.csv", metrics_csv(rows));
            const auto& a = r.metrics.aggregate;
            std::printf("%zu shapes: chamfer_l1 %.4f  iou_voxels %.4f  iou_points %.4f  normal_consistency %.4f\n",
                        r.metrics.shapes.size(), a.chamfer_l1, a.iou_voxels, a.iou_points, a.normal_consistency);
        } else if (*rep) {
            std::vector<fs::path> paths(rep_inputs.begin(), rep_inputs.end());
            const ReportOutput r = build_report_files(paths);
            const fs::path out = out_or(g, "report");
            write_report(r, out);
            std::cout << r.text;
        } else if (*exp) {
            const fs::path out = out_or(g, "orientation");
            const auto r = run_experiment_orientation(config, exp_manifest, out);
            std::cout << build_report({{(out / "orientation.json").generic_string(), r.report.dump()}}).text;
        } else if (*bench) {
            const OccupancyNetwork net =
                bench_ckpt.empty() ? OccupancyNetwork(config.train.model, config.seed) : load_model(bench_ckpt);
            SketchImage sketch;
            if (bench_sketch.empty()) {
                const TriangleMesh box = normalize_unit_sphere(make_box({-0.5, -0.3, 0.0}, {0.5, 0.3, 0.6})).mesh;
                OrbitConfig oc;
                oc.count = 1;
                const auto cam = orbit_cameras(oc).front();
                sketch = render_sketch(box, cam.intrinsics, cam.extrinsics);
            } else {
                sketch = read_pgm(bench_sketch);
            }
            BenchOptions bo;
            bo.trials = bench_trials;
            bo.resolution = bench_res;
            bo.workers = config.workers;
            const auto j = run_bench(net, sketch, {0.0, 1.0, 0.0, 0.0}, bench_name, bo);
            const fs::path out = out_or(g, "efficiency.json");
            write_json(out, j);
            std::cout << build_report({{out.generic_string(), j.dump()}}).text;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
