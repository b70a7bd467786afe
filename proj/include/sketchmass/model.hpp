#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sketchmass/autodiff.hpp"
#include "sketchmass/render.hpp"

namespace sketchmass {

using ad::Tensor;

enum class ModelMode { Conditional, Variational };
enum class Activation { LeakyRelu, Softplus };

std::string mode_name(ModelMode mode);
ModelMode parse_mode(const std::string& name);

struct ModelConfig {
    int c_dim = 256;
    int hidden = 128;
    int blocks = 5;
    int latent_dim = 128;
    std::array<int, 5> encoder_channels{16, 32, 64, 128, 128};
    ModelMode mode = ModelMode::Conditional;
    /// Appends (sin theta, cos theta, lat/90, lon/180) to c.
    bool use_context = false;
    Activation activation = Activation::LeakyRelu;
    double leaky_slope = 0.2;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    double log_sigma_min = -20.0;
    double log_sigma_max = 5.0;

    int conditioning_dim() const { return c_dim + (use_context ? 4 : 0); }
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct OptimizerConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    int batch_size = 32;
    int points_per_shape = 2048;

    void validate() const;
};

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

/// Named trainable tensors in insertion order.
class ParameterStore {
public:
    Tensor& add(const std::string& name, ad::Shape shape, std::vector<double> value);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    /// Parameters whose name starts with `prefix`.
    std::vector<Tensor> group(const std::string& prefix) const;
    std::size_t count() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::map<std::string, std::size_t> index_;
};

/// Running per-channel statistics of one normalization layer.
struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
};

struct CbnParams {
    Tensor gamma_w, gamma_b, beta_w, beta_b;
};

/// Sketch encoder, CBN occupancy decoder and optional point-set encoder.
class OccupancyNetwork {
public:
    OccupancyNetwork() = default;
    OccupancyNetwork(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    std::vector<RunningStats>& running_stats() { return running_; }
    const std::vector<RunningStats>& running_stats() const { return running_; }

    double input_mean = 0.0;
    double input_std = 1.0;

    /// Sketches as [B x 1 x 224 x 224] after pixel/255 and input normalization.
    Tensor sketch_tensor(const std::vector<const SketchImage*>& images) const;
    /// [B x 1 x 224 x 224] -> [B x c_dim]
    Tensor encode(const Tensor& images) const;
    /// points [B*K x 3], c [B x conditioning_dim] -> logits [B*K]. Train mode
    /// normalizes with batch statistics and updates the running averages.
    Tensor decode(const Tensor& points, const Tensor& c, int k, bool train);
    /// Eval-mode decode; never touches running statistics.
    Tensor decode_eval(const Tensor& points, const Tensor& c, int k) const;
    /// points [B*K x 3], labels [B*K] -> (mu, log_sigma) each [B x L].
    std::pair<Tensor, Tensor> encode_pointset(const Tensor& points, std::span<const double> labels, int k) const;
    /// Adds the projected latent to c.
    Tensor inject_latent(const Tensor& c, const Tensor& z) const;

    CbnParams cbn_params(int layer) const;
    Tensor activate(const Tensor& x) const;

private:
    Tensor decode_impl(const Tensor& points, const Tensor& c, int k, bool train, std::vector<RunningStats>* update) const;

    ModelConfig config_;
    ParameterStore params_;
    std::vector<RunningStats> running_;
};

Tensor encode_sketch(const OccupancyNetwork& net, const SketchImage& image);

/// Rows per eval-mode decoder call in decode_points.
constexpr int kEvalTile = 256;

/// Eval-mode logits for points of one shape with conditioning c [1 x D].
/// Points go through the decoder in zero-padded tiles of kEvalTile rows, so
/// each logit is independent of how the caller splits the point set.
std::vector<double> decode_points(const OccupancyNetwork& net, const Tensor& c, std::span<const Vec3> points);

/// CBN over features [B*K x C] with conditioning c [B x D]. With `stats`
/// given, normalizes by those fixed statistics instead of the batch.
Tensor cbn(const Tensor& features, const Tensor& c, int k, const CbnParams& p, double eps,
           const RunningStats* fixed = nullptr, ad::BatchStats* batch_out = nullptr);

struct LatentSample {
    Tensor z, mu, log_sigma;
};

LatentSample reparameterize(const Tensor& mu, const Tensor& log_sigma, std::uint64_t noise_seed);

Tensor bce_loss(const Tensor& logits, std::span<const double> labels);
Tensor kl_gaussian(const Tensor& mu, const Tensor& log_sigma);

/// One training batch: B shapes with K labelled points and one sketch each.
struct Batch {
    int b = 0;
    int k = 0;
    std::vector<double> points;  // B*K*3
    std::vector<double> labels;  // B*K
    std::vector<const SketchImage*> sketches;
    std::vector<std::array<double, 4>> context;
};

struct LossParts {
    Tensor total;
    double bce = 0.0;
    double kl = 0.0;
};

LossParts loss_total(OccupancyNetwork& net, const Batch& batch, double kl_weight, std::uint64_t noise_seed,
                     bool train = true);

/// Conditioning vectors for a batch, context appended when enabled.
Tensor condition(const OccupancyNetwork& net, const Batch& batch);

/// Conditioning for inference: context appended when enabled and, in
/// variational mode, the prior mean z = 0 injected.
Tensor inference_condition(const OccupancyNetwork& net, const std::vector<const SketchImage*>& sketches,
                           const std::vector<std::array<double, 4>>& context = {});

struct AdamState {
    std::int64_t t = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

/// Adam with bias correction and decoupled weight decay. With `round_f32`
/// parameters and moments are kept exactly representable in float.
void adam_step(ParameterStore& params, AdamState& state, const OptimizerConfig& config, bool round_f32 = true);

struct GradCheckOptions {
    double h = 1e-4;
    int coordinates = 50;
    std::uint64_t seed = 0;
    /// Gradients below this magnitude are compared absolutely.
    double floor = 1e-6;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

using LossClosure = std::function<Tensor()>;

std::vector<std::vector<double>> analytic_gradients(std::vector<Tensor>& params, const LossClosure& loss);
GradCheckResult grad_check_against(std::vector<Tensor>& params, const LossClosure& loss,
                                   const std::vector<std::vector<double>>& analytic, const GradCheckOptions& options);
GradCheckResult grad_check(std::vector<Tensor>& params, const LossClosure& loss, const GradCheckOptions& options = {});

// Checkpoint files.

struct TensorRecord {
    std::string name;
    std::vector<std::uint32_t> extents;
    std::vector<float> data;
};

std::string encode_checkpoint(const std::vector<TensorRecord>& records);
std::vector<TensorRecord> decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> load_checkpoint(const std::filesystem::path& path);

/// Training progress carried alongside the weights.
struct TrainState {
    std::int64_t step = 0;
    double best_val = -1.0;
    std::int64_t best_step = -1;
    std::int64_t bad_validations = 0;
};

std::vector<TensorRecord> model_records(const OccupancyNetwork& net, const AdamState* adam, const TrainState* state);
OccupancyNetwork model_from_records(const std::vector<TensorRecord>& records, AdamState* adam = nullptr,
                                    TrainState* state = nullptr);
void save_model(const std::filesystem::path& path, const OccupancyNetwork& net, const AdamState* adam = nullptr,
                const TrainState* state = nullptr);
OccupancyNetwork load_model(const std::filesystem::path& path, AdamState* adam = nullptr, TrainState* state = nullptr);

}  // namespace sketchmass
