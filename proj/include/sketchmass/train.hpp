#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sketchmass/model.hpp"
#include "sketchmass/occupancy.hpp"
#include "sketchmass/render.hpp"

namespace sketchmass {

/// One shape held in memory for training or validation.
struct TrainShape {
    std::string id;
    OccupancyField field;
    std::vector<SketchImage> views;
    std::array<double, 4> context{0.0, 1.0, 0.0, 0.0};
};

struct TrainData {
    std::vector<TrainShape> train;
    std::vector<TrainShape> val;
};

struct TrainConfig {
    ModelConfig model;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    std::int64_t steps = 3000;
    double kl_weight = 1.0;
    std::int64_t kl_warmup = 500;
    /// Leading views of each shape drawn from during training.
    int views_used = 8;
    /// Steps between validations; 0 validates once per epoch.
    std::int64_t validate_every = 0;
    /// Validations without improvement before stopping; 0 never stops.
    int patience = 20;
    std::int64_t checkpoint_every = 500;
    int val_points = 2048;
    /// Use one fixed point subset per shape instead of redrawing each step.
    bool fixed_points = false;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainOptions {
    /// best.vitp and last.vitp go here; empty keeps everything in memory.
    std::filesystem::path checkpoint_dir;
    /// JSON-lines log; empty disables.
    std::filesystem::path log_path;
    /// Continue from checkpoint_dir/last.vitp when it exists.
    bool resume = false;
};

struct TrainResult {
    OccupancyNetwork last;
    OccupancyNetwork best;
    std::int64_t steps_run = 0;
    double best_val = -1.0;
    std::int64_t best_step = -1;
    bool stopped_early = false;
    double final_loss = 0.0;
};

/// Mean and standard deviation of pixel/255 over the views used for
/// training, rounded to float.
std::pair<double, double> sketch_statistics(const std::vector<TrainShape>& shapes, int views_used);

/// Shape order for one epoch.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::int64_t epoch);

/// The batch drawn at `step`: deterministic in (seed, step).
Batch make_batch(const std::vector<TrainShape>& shapes, const TrainConfig& config, std::int64_t step);

/// Eval-mode occupancy logits for `points` of one shape seen through `sketch`.
std::vector<double> predict_logits(const OccupancyNetwork& net, const SketchImage& sketch,
                                   const std::array<double, 4>& context, std::span<const Vec3> points);

/// Mean IoU_points over shapes using view 0 and a fixed point subsample.
double validation_iou(const OccupancyNetwork& net, const std::vector<TrainShape>& shapes, int points,
                      std::uint64_t seed);

/// Single-threaded training loop with early stopping and checkpointing.
/// Throws NumericError on a non-finite loss after saving the last good state.
TrainResult train(const TrainData& data, const TrainConfig& config, const TrainOptions& options = {});

}  // namespace sketchmass
