#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace sketchmass::ad {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on demand
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    bool requires_grad = false;

    std::vector<double>& ensure_grad();
};

/// Handle to a node of the dynamic computation graph. Values are dense,
/// row-major doubles.
class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> value);
    static Tensor parameter(Shape shape, std::vector<double> value);
    static Tensor zeros(Shape shape);
    static Tensor scalar(double v);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<double>& value() { return node_->value; }
    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& grad() { return node_->ensure_grad(); }
    const std::vector<double>& grad() const { return node_->ensure_grad(); }
    double item() const;

    void zero_grad();
    /// Drops graph history so the tensor becomes a leaf.
    void detach_inplace();

    const std::shared_ptr<Node>& node() const { return node_; }
    static Tensor from_node(std::shared_ptr<Node> n);

private:
    std::shared_ptr<Node> node_;
};

/// Reverse sweep from a scalar; accumulates into .grad of every leaf that
/// requires it.
void backward(const Tensor& loss);

// a [N x K] * b [K x M]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [N x K] * w [K x M] + bias [M]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// r [B x M] repeated `k` times per row into [B*k x M].
Tensor repeat_rows(const Tensor& r, int k);
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// x [B*k x M] * repeat(gamma) + repeat(beta) with gamma, beta [B x M].
Tensor affine_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, int k);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor reshape(const Tensor& x, Shape shape);

struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased
};

/// Per-column normalization of x [N x C] with its own statistics.
Tensor batch_normalize(const Tensor& x, double eps, BatchStats* stats_out = nullptr);
/// Per-column normalization with fixed statistics.
Tensor normalize_fixed(const Tensor& x, std::span<const double> mean, std::span<const double> var, double eps);

/// 3x3 convolution, stride 2, zero padding 1. x [B x C x H x W],
/// w [O x C*9], bias [O]; output [B x O x H' x W'].
Tensor conv3x3_s2(const Tensor& x, const Tensor& w, const Tensor& bias);
/// [B x C x H x W] -> [B x C]
Tensor global_avg_pool(const Tensor& x);
/// [B*k x C] -> [B x C]
Tensor group_max(const Tensor& x, int k);
Tensor group_mean(const Tensor& x, int k);

/// Mean binary cross-entropy of logits against constant 0/1 labels.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);
/// Mean over rows of KL(N(mu, sigma^2) || N(0, I)) for mu, log_sigma [B x L].
Tensor kl_standard_normal(const Tensor& mu, const Tensor& log_sigma);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace sketchmass::ad
