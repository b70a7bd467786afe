#include "sketchmass/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/metrics.hpp"
#include "sketchmass/rng.hpp"

namespace sketchmass {

namespace {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void check_shape(const TrainShape& s, int views_used) {
    if (s.field.size() == 0 || s.field.labels.size() != s.field.size())
        throw DataError("shape " + s.id + " has no occupancy samples");
    if (static_cast<int>(s.views.size()) < std::max(1, views_used))
        throw DataError("shape " + s.id + " has " + std::to_string(s.views.size()) + " views");
}

/// Drops log lines written after `step`, so a resumed run appends where the
/// checkpoint left off.
void truncate_log(const std::filesystem::path& path, std::int64_t step) {
    if (!std::filesystem::exists(path)) return;
    std::istringstream in(read_file(path));
    std::string kept, line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("step")) continue;
        if (j["step"].get<std::int64_t>() <= step) kept += line + "\n";
    }
    write_file(path, kept);
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    optimizer.validate();
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (!(kl_weight >= 0) || kl_warmup < 0) throw ConfigError("kl weight and warm-up must be non-negative");
    if (views_used < 1) throw ConfigError("views_used must be at least 1");
    if (validate_every < 0 || patience < 0 || checkpoint_every < 0) throw ConfigError("negative schedule value");
    if (val_points < 1) throw ConfigError("val_points must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"model", to_json(c.model)},
            {"optimizer", to_json(c.optimizer)},
            {"seed", c.seed},
            {"steps", c.steps},
            {"kl_weight", c.kl_weight},
            {"kl_warmup", c.kl_warmup},
            {"views_used", c.views_used},
            {"validate_every", c.validate_every},
            {"patience", c.patience},
            {"checkpoint_every", c.checkpoint_every},
            {"val_points", c.val_points},
            {"fixed_points", c.fixed_points}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        if (j.contains("model")) c.model = model_config_from_json(j["model"]);
        if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j["optimizer"]);
        c.seed = j.value("seed", c.seed);
        c.steps = j.value("steps", c.steps);
        c.kl_weight = j.value("kl_weight", c.kl_weight);
        c.kl_warmup = j.value("kl_warmup", c.kl_warmup);
        c.views_used = j.value("views_used", c.views_used);
        c.validate_every = j.value("validate_every", c.validate_every);
        c.patience = j.value("patience", c.patience);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.val_points = j.value("val_points", c.val_points);
        c.fixed_points = j.value("fixed_points", c.fixed_points);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid training config: ") + e.what());
    }
    c.validate();
    return c;
}

std::pair<double, double> sketch_statistics(const std::vector<TrainShape>& shapes, int views_used) {
    double sum = 0, sum2 = 0;
    std::size_t n = 0;
    for (const auto& s : shapes) {
        const int views = std::min<int>(views_used, static_cast<int>(s.views.size()));
        for (int v = 0; v < views; ++v) {
            for (std::uint8_t p : s.views[v].pixels) {
                const double x = p / 255.0;
                sum += x;
                sum2 += x * x;
            }
            n += s.views[v].pixels.size();
        }
    }
    if (n == 0) return {0.0, 1.0};
    const double mean = sum / n;
    const double var = std::max(0.0, sum2 / n - mean * mean);
    const double sd = std::sqrt(var);
    return {round_f32(mean), round_f32(sd > 1e-6 ? sd : 1.0)};
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
    const CounterRng rng = CounterRng(seed, "", "epoch").fork(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i, i)]);
    return perm;
}

Batch make_batch(const std::vector<TrainShape>& shapes, const TrainConfig& config, std::int64_t step) {
    if (shapes.empty()) throw DataError("no training shapes");
    const int b = config.optimizer.batch_size, k = config.optimizer.points_per_shape;
    const std::size_t n = shapes.size();
    const CounterRng rng = CounterRng(config.seed, "", "batch").fork(static_cast<std::uint64_t>(step));
    Batch batch;
    batch.b = b;
    batch.k = k;
    batch.points.reserve(static_cast<std::size_t>(b) * k * 3);
    batch.labels.reserve(static_cast<std::size_t>(b) * k);
    std::int64_t cached_epoch = -1;
    std::vector<std::size_t> perm;
    for (int j = 0; j < b; ++j) {
        const auto pos = static_cast<std::uint64_t>(step) * b + j;
        const auto epoch = static_cast<std::int64_t>(pos / n);
        if (epoch != cached_epoch) {
            perm = epoch_permutation(n, config.seed, epoch);
            cached_epoch = epoch;
        }
        const TrainShape& s = shapes[perm[pos % n]];
        const int views = std::min<int>(config.views_used, static_cast<int>(s.views.size()));
        batch.sketches.push_back(&s.views[rng.below(2 * j, static_cast<std::uint64_t>(views))]);
        batch.context.push_back(s.context);
        if (s.field.size() < static_cast<std::size_t>(k))
            throw DataError("shape " + s.id + " has fewer than " + std::to_string(k) + " points");
        const std::uint64_t point_seed =
            config.fixed_points ? CounterRng(config.seed, "", "fixed-points").bits(0) : rng.bits(2 * j + 1);
        for (std::size_t i : subsample_indices(s.field.size(), k, point_seed, s.id)) {
            const Vec3& p = s.field.points[i];
            batch.points.insert(batch.points.end(), {p.x(), p.y(), p.z()});
            batch.labels.push_back(s.field.labels[i]);
        }
    }
    return batch;
}

std::vector<double> predict_logits(const OccupancyNetwork& net, const SketchImage& sketch,
                                   const std::array<double, 4>& context, std::span<const Vec3> points) {
    return decode_points(net, inference_condition(net, {&sketch}, {context}), points);
}

double validation_iou(const OccupancyNetwork& net, const std::vector<TrainShape>& shapes, int points,
                      std::uint64_t seed) {
    if (shapes.empty()) return 0.0;
    double total = 0;
    for (const auto& s : shapes) {
        const auto k = std::min<std::size_t>(static_cast<std::size_t>(points), s.field.size());
        const auto idx = subsample_indices(s.field.size(), k, seed, s.id);
        std::vector<Vec3> pts;
        std::vector<std::uint8_t> gt, pred;
        for (std::size_t i : idx) {
            pts.push_back(s.field.points[i]);
            gt.push_back(s.field.labels[i]);
        }
        for (double l : predict_logits(net, s.views.at(0), s.context, pts)) pred.push_back(l > 0.0 ? 1 : 0);
        total += iou_points(pred, gt);
    }
    return total / static_cast<double>(shapes.size());
}

TrainResult train(const TrainData& data, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    if (data.train.empty()) throw DataError("training split is empty");
    for (const auto& s : data.train) check_shape(s, config.views_used);
    for (const auto& s : data.val) check_shape(s, 1);

    const bool persist = !options.checkpoint_dir.empty();
    if (persist) std::filesystem::create_directories(options.checkpoint_dir);
    const auto last_path = options.checkpoint_dir / "last.vitp";
    const auto best_path = options.checkpoint_dir / "best.vitp";

    OccupancyNetwork net;
    AdamState adam;
    TrainState state;
    TrainResult result;
    if (options.resume && persist && std::filesystem::exists(last_path)) {
        net = load_model(last_path, &adam, &state);
        if (to_json(net.config()) != to_json(config.model))
            throw ConfigError("checkpoint model config differs from the requested one");
        result.best = std::filesystem::exists(best_path) ? load_model(best_path) : load_model(last_path);
        if (!options.log_path.empty()) truncate_log(options.log_path, state.step);
    } else {
        net = OccupancyNetwork(config.model, config.seed);
        const auto [mean, sd] = sketch_statistics(data.train, config.views_used);
        net.input_mean = mean;
        net.input_std = sd;
        if (!options.log_path.empty()) write_file(options.log_path, "");
    }

    std::ofstream log;
    if (!options.log_path.empty()) {
        log.open(options.log_path, std::ios::app | std::ios::binary);
        if (!log) throw DataError("cannot open log " + options.log_path.string());
    }
    auto emit = [&](const nlohmann::ordered_json& line) {
        if (log) log << line.dump() << '\n' << std::flush;
    };
    auto snapshot = [](const OccupancyNetwork& n) { return model_from_records(model_records(n, nullptr, nullptr)); };
    auto save_last = [&] {
        if (persist) save_model(last_path, net, &adam, &state);
    };

    const std::int64_t per_epoch =
        (static_cast<std::int64_t>(data.train.size()) + config.optimizer.batch_size - 1) / config.optimizer.batch_size;
    const std::int64_t validate_every = config.validate_every > 0 ? config.validate_every : per_epoch;
    const std::uint64_t val_seed = mix64(config.seed ^ 0x76616cULL);
    const auto t0 = std::chrono::steady_clock::now();
    auto wall_ms = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    };

    while (state.step < config.steps) {
        const std::int64_t step = state.step;
        const Batch batch = make_batch(data.train, config, step);
        const double warm = config.kl_warmup > 0
                                ? std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(config.kl_warmup))
                                : 1.0;
        const auto running_before = net.running_stats();
        net.params().zero_grad();
        const std::uint64_t noise_seed = CounterRng(config.seed, "", "noise").bits(static_cast<std::uint64_t>(step));
        const LossParts loss = loss_total(net, batch, config.kl_weight * warm, noise_seed, true);
        const double value = loss.total.item();
        if (!std::isfinite(value)) {
            net.running_stats() = running_before;
            save_last();
            throw NumericError("non-finite loss at step " + std::to_string(step + 1));
        }
        ad::backward(loss.total);
        adam_step(net.params(), adam, config.optimizer);
        state.step = step + 1;
        result.final_loss = value;

        nlohmann::ordered_json line;
        line["step"] = state.step;
        line["loss"] = value;
        line["bce"] = loss.bce;
        line["kl"] = loss.kl;
        line["lr"] = config.optimizer.learning_rate;
        line["wall_ms"] = wall_ms();
        emit(line);

        bool stop = false;
        if (!data.val.empty() && state.step % validate_every == 0) {
            const double iou = round_f32(validation_iou(net, data.val, config.val_points, val_seed));
            const bool improved = iou > state.best_val;
            if (improved) {
                state.best_val = iou;
                state.best_step = state.step;
                state.bad_validations = 0;
                result.best = snapshot(net);
                if (persist) save_model(best_path, net);
            } else {
                state.bad_validations += 1;
            }
            nlohmann::ordered_json v;
            v["step"] = state.step;
            v["epoch"] = state.step / per_epoch;
            v["val_iou_points"] = iou;
            v["best"] = improved;
            v["wall_ms"] = wall_ms();
            emit(v);
            stop = config.patience > 0 && state.bad_validations >= config.patience;
        }
        if (stop) {
            result.stopped_early = true;
            break;
        }
        if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) save_last();
    }
    save_last();
    if (data.val.empty()) {
        result.best = snapshot(net);
        if (persist) save_model(best_path, net);
    } else if (state.best_step < 0) {
        result.best = snapshot(net);
    }
    result.last = std::move(net);
    result.steps_run = state.step;
    result.best_val = state.best_val;
    result.best_step = state.best_step;
    return result;
}

}  // namespace sketchmass
