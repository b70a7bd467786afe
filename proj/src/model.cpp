#include "sketchmass/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sketchmass/binary_io.hpp"
#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/rng.hpp"

namespace sketchmass {

namespace {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::vector<double> kaiming(std::size_t n, int fan_in, double gain, const CounterRng& rng) {
    std::vector<double> out(n);
    const double s = gain * std::sqrt(1.0 / fan_in);
    for (std::size_t i = 0; i < n; ++i) out[i] = round_f32(s * rng.normal(i));
    return out;
}

std::string layer(const std::string& prefix, int i) { return prefix + std::to_string(i); }

}  // namespace

std::string mode_name(ModelMode mode) { return mode == ModelMode::Conditional ? "conditional" : "variational"; }

ModelMode parse_mode(const std::string& name) {
    if (name == "conditional") return ModelMode::Conditional;
    if (name == "variational") return ModelMode::Variational;
    throw ConfigError("unknown model mode '" + name + "'");
}

void ModelConfig::validate() const {
    if (c_dim <= 0 || hidden <= 0 || blocks <= 0 || latent_dim <= 0) throw ConfigError("model sizes must be positive");
    for (int ch : encoder_channels)
        if (ch <= 0) throw ConfigError("encoder channels must be positive");
    if (!(bn_eps > 0)) throw ConfigError("bn_eps must be positive");
    if (!(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("bn_momentum must lie in (0, 1]");
    if (!(log_sigma_min < log_sigma_max)) throw ConfigError("log-sigma bounds are inverted");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"c_dim", c.c_dim},
            {"hidden", c.hidden},
            {"blocks", c.blocks},
            {"latent_dim", c.latent_dim},
            {"encoder_channels", c.encoder_channels},
            {"mode", mode_name(c.mode)},
            {"use_context", c.use_context},
            {"activation", c.activation == Activation::LeakyRelu ? "leaky_relu" : "softplus"},
            {"leaky_slope", c.leaky_slope},
            {"bn_eps", c.bn_eps},
            {"bn_momentum", c.bn_momentum},
            {"log_sigma_min", c.log_sigma_min},
            {"log_sigma_max", c.log_sigma_max}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.c_dim = j.value("c_dim", c.c_dim);
        c.hidden = j.value("hidden", c.hidden);
        c.blocks = j.value("blocks", c.blocks);
        c.latent_dim = j.value("latent_dim", c.latent_dim);
        if (j.contains("encoder_channels")) c.encoder_channels = j.at("encoder_channels").get<std::array<int, 5>>();
        c.mode = parse_mode(j.value("mode", mode_name(c.mode)));
        c.use_context = j.value("use_context", c.use_context);
        const std::string act = j.value("activation", std::string("leaky_relu"));
        if (act == "leaky_relu") c.activation = Activation::LeakyRelu;
        else if (act == "softplus") c.activation = Activation::Softplus;
        else throw ConfigError("unknown activation '" + act + "'");
        c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
        c.bn_eps = j.value("bn_eps", c.bn_eps);
        c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
        c.log_sigma_min = j.value("log_sigma_min", c.log_sigma_min);
        c.log_sigma_max = j.value("log_sigma_max", c.log_sigma_max);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid model config: ") + e.what());
    }
    c.validate();
    return c;
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in (0, 1)");
    if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
    if (batch_size <= 0 || points_per_shape <= 0) throw ConfigError("batch size and points per shape must be positive");
}

nlohmann::json to_json(const OptimizerConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},
            {"beta2", c.beta2},                 {"epsilon", c.epsilon},
            {"weight_decay", c.weight_decay},   {"batch_size", c.batch_size},
            {"points_per_shape", c.points_per_shape}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
    OptimizerConfig c;
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.points_per_shape = j.value("points_per_shape", c.points_per_shape);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid optimizer config: ") + e.what());
    }
    c.validate();
    return c;
}

Tensor& ParameterStore::add(const std::string& name, ad::Shape shape, std::vector<double> value) {
    if (contains(name)) throw ConfigError("duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(value)));
    return items_.back().second;
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("missing parameter " + name);
    return items_[it->second].second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("missing parameter " + name);
    return items_[it->second].second;
}

std::vector<Tensor> ParameterStore::group(const std::string& prefix) const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : items_)
        if (name.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
}

std::size_t ParameterStore::count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

OccupancyNetwork::OccupancyNetwork(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const CounterRng root(seed, "model", "init");
    std::uint64_t stream = 0;
    auto weight = [&](const std::string& name, ad::Shape shape, int fan_in, double gain) {
        const std::size_t n = ad::shape_size(shape);
        params_.add(name, std::move(shape), kaiming(n, fan_in, gain, root.fork(stream++)));
    };
    auto constant = [&](const std::string& name, int n, double v) { params_.add(name, {n}, std::vector<double>(n, v)); };
    const double relu_gain = std::sqrt(2.0);

    int in_ch = 1;
    for (int i = 0; i < 5; ++i) {
        const int out_ch = config_.encoder_channels[i];
        weight(layer("enc.conv", i) + ".w", {out_ch, in_ch * 9}, in_ch * 9, relu_gain);
        constant(layer("enc.conv", i) + ".b", out_ch, 0.0);
        in_ch = out_ch;
    }
    weight("enc.fc.w", {in_ch, config_.c_dim}, in_ch, 1.0);
    constant("enc.fc.b", config_.c_dim, 0.0);

    const int h = config_.hidden, d = config_.conditioning_dim();
    weight("dec.fc_p.w", {3, h}, 3, 1.0);
    constant("dec.fc_p.b", h, 0.0);
    for (int i = 0; i <= config_.blocks; ++i) {
        const std::string p = layer("dec.cbn", i);
        params_.add(p + ".gamma_w", {d, h}, std::vector<double>(static_cast<std::size_t>(d) * h, 0.0));
        constant(p + ".gamma_b", h, 1.0);
        params_.add(p + ".beta_w", {d, h}, std::vector<double>(static_cast<std::size_t>(d) * h, 0.0));
        constant(p + ".beta_b", h, 0.0);
        running_.push_back({std::vector<double>(h, 0.0), std::vector<double>(h, 1.0)});
    }
    for (int i = 0; i < config_.blocks; ++i) {
        weight(layer("dec.block", i) + ".w", {h, h}, h, relu_gain);
        constant(layer("dec.block", i) + ".b", h, 0.0);
    }
    weight("dec.out.w", {h, 1}, h, 1.0);
    constant("dec.out.b", 1, 0.0);

    if (config_.mode == ModelMode::Variational) {
        const int l = config_.latent_dim;
        weight("set.fc0.w", {4, h}, 4, relu_gain);
        constant("set.fc0.b", h, 0.0);
        weight("set.fc1.w", {h, h}, h, relu_gain);
        constant("set.fc1.b", h, 0.0);
        weight("set.mu.w", {2 * h, l}, 2 * h, 0.1);
        constant("set.mu.b", l, 0.0);
        weight("set.log_sigma.w", {2 * h, l}, 2 * h, 0.1);
        constant("set.log_sigma.b", l, 0.0);
        weight("set.z_proj.w", {l, d}, l, 1.0);
        constant("set.z_proj.b", d, 0.0);
    }
}

Tensor OccupancyNetwork::activate(const Tensor& x) const {
    return config_.activation == Activation::LeakyRelu ? ad::leaky_relu(x, config_.leaky_slope) : ad::softplus(x);
}

Tensor OccupancyNetwork::sketch_tensor(const std::vector<const SketchImage*>& images) const {
    const int b = static_cast<int>(images.size());
    constexpr std::size_t pixels = static_cast<std::size_t>(kSketchSize) * kSketchSize;
    std::vector<double> v(b * pixels);
    const double inv_std = 1.0 / input_std;
    for (int i = 0; i < b; ++i) {
        const SketchImage& img = *images[i];
        if (img.width != kSketchSize || img.height != kSketchSize || img.pixels.size() != pixels)
            throw DataError("sketch must be 224x224");
        for (std::size_t p = 0; p < pixels; ++p) v[i * pixels + p] = (img.pixels[p] / 255.0 - input_mean) * inv_std;
    }
    return Tensor::constant({b, 1, kSketchSize, kSketchSize}, std::move(v));
}

Tensor OccupancyNetwork::encode(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != kSketchSize || images.dim(3) != kSketchSize)
        throw DataError("encoder expects [B x 1 x 224 x 224]");
    Tensor x = images;
    for (int i = 0; i < 5; ++i) {
        const std::string p = layer("enc.conv", i);
        x = activate(ad::conv3x3_s2(x, params_.at(p + ".w"), params_.at(p + ".b")));
    }
    return ad::linear(ad::global_avg_pool(x), params_.at("enc.fc.w"), params_.at("enc.fc.b"));
}

CbnParams OccupancyNetwork::cbn_params(int l) const {
    const std::string p = layer("dec.cbn", l);
    return {params_.at(p + ".gamma_w"), params_.at(p + ".gamma_b"), params_.at(p + ".beta_w"),
            params_.at(p + ".beta_b")};
}

Tensor cbn(const Tensor& features, const Tensor& c, int k, const CbnParams& p, double eps, const RunningStats* fixed,
           ad::BatchStats* batch_out) {
    if (features.rank() != 2 || c.rank() != 2 || features.dim(0) != c.dim(0) * k)
        throw DataError("cbn expects features [B*K x C] and c [B x D]");
    const Tensor gamma = ad::linear(c, p.gamma_w, p.gamma_b);
    const Tensor beta = ad::linear(c, p.beta_w, p.beta_b);
    const Tensor xhat = fixed ? ad::normalize_fixed(features, fixed->mean, fixed->var, eps)
                              : ad::batch_normalize(features, eps, batch_out);
    return ad::affine_rows(xhat, gamma, beta, k);
}

Tensor OccupancyNetwork::decode_impl(const Tensor& points, const Tensor& c, int k, bool train,
                                     std::vector<RunningStats>* update) const {
    if (points.rank() != 2 || points.dim(1) != 3) throw DataError("decoder expects points [B*K x 3]");
    if (c.rank() != 2 || c.dim(1) != config_.conditioning_dim()) throw DataError("conditioning vector has wrong size");
    if (k <= 0 || points.dim(0) != c.dim(0) * k) throw DataError("points and conditioning batch sizes disagree");
    const double eps = config_.bn_eps;
    auto norm = [&](const Tensor& h, int l) {
        if (!train) return cbn(h, c, k, cbn_params(l), eps, &running_[l]);
        ad::BatchStats stats;
        Tensor out = cbn(h, c, k, cbn_params(l), eps, nullptr, &stats);
        if (update) {
            RunningStats& r = (*update)[l];
            const double m = config_.bn_momentum;
            for (std::size_t j = 0; j < r.mean.size(); ++j) {
                r.mean[j] = round_f32((1 - m) * r.mean[j] + m * stats.mean[j]);
                r.var[j] = round_f32((1 - m) * r.var[j] + m * stats.var[j]);
            }
        }
        return out;
    };
    Tensor h = ad::linear(points, params_.at("dec.fc_p.w"), params_.at("dec.fc_p.b"));
    for (int i = 0; i < config_.blocks; ++i) {
        const std::string p = layer("dec.block", i);
        h = ad::add(h, ad::linear(activate(norm(h, i)), params_.at(p + ".w"), params_.at(p + ".b")));
    }
    const Tensor logits = ad::linear(activate(norm(h, config_.blocks)), params_.at("dec.out.w"), params_.at("dec.out.b"));
    return ad::reshape(logits, {points.dim(0)});
}

Tensor OccupancyNetwork::decode(const Tensor& points, const Tensor& c, int k, bool train) {
    return decode_impl(points, c, k, train, train ? &running_ : nullptr);
}

Tensor OccupancyNetwork::decode_eval(const Tensor& points, const Tensor& c, int k) const {
    return decode_impl(points, c, k, false, nullptr);
}

std::pair<Tensor, Tensor> OccupancyNetwork::encode_pointset(const Tensor& points, std::span<const double> labels,
                                                            int k) const {
    if (config_.mode != ModelMode::Variational) throw ConfigError("point-set encoder needs variational mode");
    if (points.rank() != 2 || points.dim(1) != 3 || k <= 0 || points.dim(0) % k != 0 ||
        labels.size() != static_cast<std::size_t>(points.dim(0)))
        throw DataError("point-set encoder expects points [B*K x 3] and B*K labels");
    const Tensor o = Tensor::constant({points.dim(0), 1}, std::vector<double>(labels.begin(), labels.end()));
    Tensor h = activate(ad::linear(ad::concat_cols(points, o), params_.at("set.fc0.w"), params_.at("set.fc0.b")));
    h = activate(ad::linear(h, params_.at("set.fc1.w"), params_.at("set.fc1.b")));
    const Tensor pooled = ad::concat_cols(ad::group_max(h, k), ad::group_mean(h, k));
    const Tensor mu = ad::linear(pooled, params_.at("set.mu.w"), params_.at("set.mu.b"));
    const Tensor ls = ad::clamp(ad::linear(pooled, params_.at("set.log_sigma.w"), params_.at("set.log_sigma.b")),
                                config_.log_sigma_min, config_.log_sigma_max);
    return {mu, ls};
}

Tensor OccupancyNetwork::inject_latent(const Tensor& c, const Tensor& z) const {
    return ad::add(c, ad::linear(z, params_.at("set.z_proj.w"), params_.at("set.z_proj.b")));
}

Tensor encode_sketch(const OccupancyNetwork& net, const SketchImage& image) {
    return net.encode(net.sketch_tensor({&image}));
}

LatentSample reparameterize(const Tensor& mu, const Tensor& log_sigma, std::uint64_t noise_seed) {
    if (mu.shape() != log_sigma.shape()) throw DataError("mu and log-sigma shapes differ");
    const CounterRng rng(noise_seed, "", "latent");
    std::vector<double> eps(mu.size());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal(i);
    const Tensor noise = Tensor::constant(mu.shape(), std::move(eps));
    return {ad::add(mu, ad::mul(ad::exp(log_sigma), noise)), mu, log_sigma};
}

Tensor bce_loss(const Tensor& logits, std::span<const double> labels) { return ad::bce_with_logits(logits, labels); }

Tensor kl_gaussian(const Tensor& mu, const Tensor& log_sigma) { return ad::kl_standard_normal(mu, log_sigma); }

Tensor condition(const OccupancyNetwork& net, const Batch& batch) {
    Tensor c = net.encode(net.sketch_tensor(batch.sketches));
    if (net.config().use_context) {
        if (batch.context.size() != static_cast<std::size_t>(batch.b)) throw DataError("batch is missing context");
        std::vector<double> ctx;
        for (const auto& row : batch.context) ctx.insert(ctx.end(), row.begin(), row.end());
        c = ad::concat_cols(c, Tensor::constant({batch.b, 4}, std::move(ctx)));
    }
    return c;
}

std::vector<double> decode_points(const OccupancyNetwork& net, const Tensor& c, std::span<const Vec3> points) {
    if (c.rank() != 2 || c.dim(0) != 1) throw DataError("decode_points expects a single conditioning row");
    std::vector<double> out;
    out.reserve(points.size());
    std::vector<double> flat(static_cast<std::size_t>(kEvalTile) * 3);
    for (std::size_t start = 0; start < points.size(); start += kEvalTile) {
        const std::size_t m = std::min<std::size_t>(kEvalTile, points.size() - start);
        std::fill(flat.begin(), flat.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (int a = 0; a < 3; ++a) flat[3 * i + a] = points[start + i][a];
        const Tensor logits = net.decode_eval(Tensor::constant({kEvalTile, 3}, flat), c, kEvalTile);
        out.insert(out.end(), logits.value().begin(), logits.value().begin() + static_cast<std::ptrdiff_t>(m));
    }
    return out;
}

Tensor inference_condition(const OccupancyNetwork& net, const std::vector<const SketchImage*>& sketches,
                           const std::vector<std::array<double, 4>>& context) {
    Batch b;
    b.b = static_cast<int>(sketches.size());
    b.sketches = sketches;
    b.context = context;
    Tensor c = condition(net, b);
    if (net.config().mode == ModelMode::Variational)
        c = net.inject_latent(c, Tensor::zeros({b.b, net.config().latent_dim}));
    return c;
}

LossParts loss_total(OccupancyNetwork& net, const Batch& batch, double kl_weight, std::uint64_t noise_seed,
                     bool train) {
    if (batch.b <= 0 || batch.k <= 0 || batch.points.size() != static_cast<std::size_t>(batch.b) * batch.k * 3 ||
        batch.labels.size() != static_cast<std::size_t>(batch.b) * batch.k ||
        batch.sketches.size() != static_cast<std::size_t>(batch.b))
        throw DataError("inconsistent batch");
    Tensor c = condition(net, batch);
    const Tensor pts = Tensor::constant({batch.b * batch.k, 3}, batch.points);
    LossParts out;
    Tensor kl;
    if (net.config().mode == ModelMode::Variational) {
        auto [mu, ls] = net.encode_pointset(pts, batch.labels, batch.k);
        const LatentSample s = reparameterize(mu, ls, noise_seed);
        c = net.inject_latent(c, s.z);
        kl = kl_gaussian(mu, ls);
        out.kl = kl.item();
    }
    const Tensor logits = train ? net.decode(pts, c, batch.k, true) : net.decode_eval(pts, c, batch.k);
    const Tensor bce = bce_loss(logits, batch.labels);
    out.bce = bce.item();
    out.total = kl.defined() ? ad::add(bce, ad::scale(kl, kl_weight)) : bce;
    return out;
}

void adam_step(ParameterStore& params, AdamState& state, const OptimizerConfig& config, bool round_f32_values) {
    state.t += 1;
    const double b1 = config.beta1, b2 = config.beta2, lr = config.learning_rate;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    auto r = [&](double v) { return round_f32_values ? round_f32(v) : v; };
    for (auto& [name, t] : params.items()) {
        auto& value = t.value();
        const auto& grad = t.node()->grad;
        auto& m = state.m[name];
        auto& v = state.v[name];
        m.resize(value.size(), 0.0);
        v.resize(value.size(), 0.0);
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            double theta = value[i] * (1.0 - lr * config.weight_decay);
            m[i] = r(b1 * m[i] + (1 - b1) * g);
            v[i] = r(b2 * v[i] + (1 - b2) * g * g);
            theta -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
            value[i] = r(theta);
        }
    }
}

std::vector<std::vector<double>> analytic_gradients(std::vector<Tensor>& params, const LossClosure& loss) {
    for (auto& p : params) p.zero_grad();
    ad::backward(loss());
    std::vector<std::vector<double>> out;
    for (auto& p : params) out.push_back(p.grad());
    return out;
}

GradCheckResult grad_check_against(std::vector<Tensor>& params, const LossClosure& loss,
                                   const std::vector<std::vector<double>>& analytic, const GradCheckOptions& options) {
    std::size_t total = 0;
    for (const auto& p : params) total += p.size();
    if (total == 0) return {};
    const CounterRng rng(options.seed, "", "grad_check");
    GradCheckResult res;
    const std::size_t n = std::min<std::size_t>(total, static_cast<std::size_t>(options.coordinates));
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t flat = n == total ? s : rng.below(s, total);
        std::size_t pi = 0;
        while (flat >= params[pi].size()) flat -= params[pi++].size();
        double& x = params[pi].value()[flat];
        const double saved = x;
        x = saved + options.h;
        const double up = loss().item();
        x = saved - options.h;
        const double down = loss().item();
        x = saved;
        const double numeric = (up - down) / (2 * options.h);
        const double err = std::abs(analytic[pi][flat] - numeric) / std::max(std::abs(numeric), options.floor);
        res.max_relative_error = std::max(res.max_relative_error, err);
        ++res.checked;
    }
    return res;
}

GradCheckResult grad_check(std::vector<Tensor>& params, const LossClosure& loss, const GradCheckOptions& options) {
    const auto analytic = analytic_gradients(params, loss);
    return grad_check_against(params, loss, analytic, options);
}

namespace {

constexpr char kMagic[4] = {'V', 'I', 'T', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;

TensorRecord record(const std::string& name, const std::vector<double>& v, std::vector<std::uint32_t> extents = {}) {
    TensorRecord r;
    r.name = name;
    r.extents = extents.empty() ? std::vector<std::uint32_t>{static_cast<std::uint32_t>(v.size())} : std::move(extents);
    r.data.assign(v.begin(), v.end());
    return r;
}

TensorRecord text_record(const std::string& name, const std::string& text) {
    std::vector<double> bytes(text.begin(), text.end());
    for (double& b : bytes) b = static_cast<unsigned char>(static_cast<char>(b));
    return record(name, bytes);
}

std::string record_text(const TensorRecord& r) {
    std::string s;
    for (float f : r.data) s.push_back(static_cast<char>(static_cast<unsigned char>(f)));
    return s;
}

}  // namespace

std::string encode_checkpoint(const std::vector<TensorRecord>& records) {
    std::string out(kMagic, 4);
    binio::put_u32(out, kVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        std::size_t n = 1;
        for (auto e : r.extents) n *= e;
        if (n != r.data.size()) throw DataError("record " + r.name + " has inconsistent extents");
        binio::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out += r.name;
        binio::put_u32(out, kDtypeF32);
        binio::put_u32(out, static_cast<std::uint32_t>(r.extents.size()));
        for (auto e : r.extents) binio::put_u32(out, e);
        for (float f : r.data) binio::put_f32(out, f);
    }
    return out;
}

std::vector<TensorRecord> decode_checkpoint(const std::string& bytes) {
    binio::Reader in(bytes, "checkpoint");
    if (in.bytes(4) != std::string_view(kMagic, 4)) throw DataError("not a checkpoint file (bad magic)");
    if (in.u32() != kVersion) throw DataError("unsupported checkpoint version");
    const std::uint32_t count = in.u32();
    std::vector<TensorRecord> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorRecord r;
        const std::uint32_t len = in.u32();
        r.name = std::string(in.bytes(len));
        if (in.u32() != kDtypeF32) throw DataError("unsupported dtype in record " + r.name);
        const std::uint32_t rank = in.u32();
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            r.extents.push_back(in.u32());
            n *= r.extents.back();
        }
        if (n * 4 > in.remaining()) throw DataError("checkpoint truncated");
        r.data.resize(n);
        for (auto& f : r.data) f = in.f32();
        out.push_back(std::move(r));
    }
    if (in.remaining() != 0) throw DataError("trailing bytes in checkpoint");
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<TensorRecord>& records) {
    // Write to a sibling file first so a crash never leaves a partial checkpoint.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    write_file(tmp, encode_checkpoint(records));
    std::filesystem::rename(tmp, path);
}

std::vector<TensorRecord> load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::vector<TensorRecord> model_records(const OccupancyNetwork& net, const AdamState* adam, const TrainState* state) {
    std::vector<TensorRecord> out;
    out.push_back(text_record("meta.config", to_json(net.config()).dump()));
    out.push_back(record("meta.input", {net.input_mean, net.input_std}));
    for (const auto& [name, t] : net.params().items()) {
        std::vector<std::uint32_t> ext(t.shape().begin(), t.shape().end());
        out.push_back(record(name, t.value(), ext));
    }
    for (std::size_t l = 0; l < net.running_stats().size(); ++l) {
        out.push_back(record("bn." + std::to_string(l) + ".mean", net.running_stats()[l].mean));
        out.push_back(record("bn." + std::to_string(l) + ".var", net.running_stats()[l].var));
    }
    if (adam) {
        out.push_back(record("adam.t", {static_cast<double>(adam->t)}));
        for (const auto& [name, t] : net.params().items()) {
            const auto m = adam->m.count(name) ? adam->m.at(name) : std::vector<double>(t.size(), 0.0);
            const auto v = adam->v.count(name) ? adam->v.at(name) : std::vector<double>(t.size(), 0.0);
            out.push_back(record("adam.m." + name, m));
            out.push_back(record("adam.v." + name, v));
        }
    }
    if (state) {
        out.push_back(record("train.state", {static_cast<double>(state->step), state->best_val,
                                             static_cast<double>(state->best_step),
                                             static_cast<double>(state->bad_validations)}));
    }
    return out;
}

OccupancyNetwork model_from_records(const std::vector<TensorRecord>& records, AdamState* adam, TrainState* state) {
    std::map<std::string, const TensorRecord*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    auto get = [&](const std::string& name) -> const TensorRecord& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint is missing record " + name);
        return *it->second;
    };
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(record_text(get("meta.config")));
    } catch (const nlohmann::json::exception&) {
        throw DataError("checkpoint config record is corrupt");
    }
    OccupancyNetwork net(model_config_from_json(cfg), 0);
    const auto& input = get("meta.input");
    if (input.data.size() != 2) throw DataError("bad meta.input record");
    net.input_mean = input.data[0];
    net.input_std = input.data[1];
    for (auto& [name, t] : net.params().items()) {
        const auto& r = get(name);
        if (!std::equal(r.extents.begin(), r.extents.end(), t.shape().begin(), t.shape().end()))
            throw DataError("shape mismatch for " + name);
        t.value().assign(r.data.begin(), r.data.end());
    }
    for (std::size_t l = 0; l < net.running_stats().size(); ++l) {
        auto& rs = net.running_stats()[l];
        const auto& m = get("bn." + std::to_string(l) + ".mean");
        const auto& v = get("bn." + std::to_string(l) + ".var");
        if (m.data.size() != rs.mean.size() || v.data.size() != rs.var.size())
            throw DataError("running statistics have wrong size");
        rs.mean.assign(m.data.begin(), m.data.end());
        rs.var.assign(v.data.begin(), v.data.end());
    }
    if (adam) {
        *adam = AdamState{};
        if (by_name.count("adam.t")) {
            adam->t = static_cast<std::int64_t>(get("adam.t").data.at(0));
            for (const auto& [name, t] : net.params().items()) {
                const auto& m = get("adam.m." + name);
                const auto& v = get("adam.v." + name);
                if (m.data.size() != t.size() || v.data.size() != t.size())
                    throw DataError("optimizer state has wrong size for " + name);
                adam->m[name].assign(m.data.begin(), m.data.end());
                adam->v[name].assign(v.data.begin(), v.data.end());
            }
        }
    }
    if (state) {
        *state = TrainState{};
        if (by_name.count("train.state")) {
            const auto& s = get("train.state").data;
            if (s.size() != 4) throw DataError("bad train.state record");
            state->step = static_cast<std::int64_t>(s[0]);
            state->best_val = s[1];
            state->best_step = static_cast<std::int64_t>(s[2]);
            state->bad_validations = static_cast<std::int64_t>(s[3]);
        }
    }
    return net;
}

void save_model(const std::filesystem::path& path, const OccupancyNetwork& net, const AdamState* adam,
                const TrainState* state) {
    save_checkpoint(path, model_records(net, adam, state));
}

OccupancyNetwork load_model(const std::filesystem::path& path, AdamState* adam, TrainState* state) {
    return model_from_records(load_checkpoint(path), adam, state);
}

}  // namespace sketchmass
