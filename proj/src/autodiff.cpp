#include "sketchmass/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Core>

#include "sketchmass/errors.hpp"

namespace sketchmass::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

using NodePtr = std::shared_ptr<Node>;

Tensor make(Shape shape, std::vector<double> value, std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (const auto& in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
    if (n->requires_grad) {
        n->inputs = std::move(inputs);
        n->backward = std::move(bw);
    }
    return Tensor::from_node(std::move(n));
}

void check(bool ok, const char* what) {
    if (!ok) throw DataError(std::string("tensor shape mismatch: ") + what);
}

int rows_of(const Tensor& t) { return t.dim(0); }
int cols_of(const Tensor& t) { return static_cast<int>(t.size() / std::max(1, t.dim(0))); }

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DataError("negative tensor extent");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::vector<double>& Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

Tensor Tensor::constant(Shape shape, std::vector<double> value) {
    if (shape_size(shape) != value.size()) throw DataError("tensor data length does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return from_node(std::move(n));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> value) {
    Tensor t = constant(std::move(shape), std::move(value));
    t.node_->requires_grad = true;
    return t;
}

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = shape_size(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

double Tensor::item() const {
    if (size() != 1) throw DataError("item() on a non-scalar tensor");
    return node_->value[0];
}

void Tensor::zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::detach_inplace() {
    node_->inputs.clear();
    node_->backward = nullptr;
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw DataError("backward() needs a scalar loss");
    if (!loss.requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->inputs.size()) {
            Node* child = n->inputs[i++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) {
            n->ensure_grad();
            n->backward(*n);
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul");
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * m);
    MapMat(out.data(), n, m).noalias() = CMapMat(a.value().data(), n, k) * CMapMat(b.value().data(), k, m);
    auto an = a.node(), bn = b.node();
    return make({n, m}, std::move(out), {an, bn}, [an, bn, n, k, m](Node& self) {
        CMapMat g(self.grad.data(), n, m);
        if (an->requires_grad)
            MapMat(an->ensure_grad().data(), n, k).noalias() += g * CMapMat(bn->value.data(), k, m).transpose();
        if (bn->requires_grad)
            MapMat(bn->ensure_grad().data(), k, m).noalias() += CMapMat(an->value.data(), n, k).transpose() * g;
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0), "linear");
    const int n = x.dim(0), k = x.dim(1), m = w.dim(1);
    check(bias.size() == static_cast<std::size_t>(m), "linear bias");
    std::vector<double> out(static_cast<std::size_t>(n) * m);
    MapMat o(out.data(), n, m);
    o.noalias() = CMapMat(x.value().data(), n, k) * CMapMat(w.value().data(), k, m);
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), m);
    auto xn = x.node(), wn = w.node(), bn = bias.node();
    return make({n, m}, std::move(out), {xn, wn, bn}, [xn, wn, bn, n, k, m](Node& self) {
        CMapMat g(self.grad.data(), n, m);
        if (xn->requires_grad)
            MapMat(xn->ensure_grad().data(), n, k).noalias() += g * CMapMat(wn->value.data(), k, m).transpose();
        if (wn->requires_grad)
            MapMat(wn->ensure_grad().data(), k, m).noalias() += CMapMat(xn->value.data(), n, k).transpose() * g;
        if (bn->requires_grad)
            Eigen::Map<Eigen::RowVectorXd>(bn->ensure_grad().data(), m) += g.colwise().sum();
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check(a.size() == b.size(), "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    auto an = a.node(), bn = b.node();
    return make(a.shape(), std::move(out), {an, bn}, [an, bn](Node& self) {
        for (Node* in : {an.get(), bn.get()}) {
            if (!in->requires_grad) continue;
            auto& g = in->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.size() == b.size(), "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto an = a.node(), bn = b.node();
    return make(a.shape(), std::move(out), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.value());
    for (double& v : out) v *= s;
    auto an = a.node();
    return make(a.shape(), std::move(out), {an}, [an, s](Node& self) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Tensor repeat_rows(const Tensor& r, int k) {
    check(r.rank() == 2 && k >= 1, "repeat_rows");
    const int b = r.dim(0), m = r.dim(1);
    std::vector<double> out(static_cast<std::size_t>(b) * k * m);
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < k; ++j)
            std::copy_n(r.value().begin() + static_cast<std::ptrdiff_t>(i) * m, m,
                        out.begin() + (static_cast<std::ptrdiff_t>(i) * k + j) * m);
    auto rn = r.node();
    return make({b * k, m}, std::move(out), {rn}, [rn, b, k, m](Node& self) {
        auto& g = rn->ensure_grad();
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < k; ++j) {
                const double* src = self.grad.data() + (static_cast<std::size_t>(i) * k + j) * m;
                double* dst = g.data() + static_cast<std::size_t>(i) * m;
                for (int c = 0; c < m; ++c) dst[c] += src[c];
            }
    });
}

Tensor affine_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, int k) {
    check(x.rank() == 2 && gamma.rank() == 2 && gamma.shape() == beta.shape() && k >= 1 &&
              x.dim(0) == gamma.dim(0) * k && x.dim(1) == gamma.dim(1),
          "affine_rows");
    const int b = gamma.dim(0), m = gamma.dim(1);
    std::vector<double> out(x.size());
    for (int i = 0; i < b; ++i) {
        const double* g = gamma.value().data() + static_cast<std::size_t>(i) * m;
        const double* be = beta.value().data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < k; ++j) {
            const std::size_t row = (static_cast<std::size_t>(i) * k + j) * m;
            const double* xr = x.value().data() + row;
            double* o = out.data() + row;
            for (int c = 0; c < m; ++c) o[c] = xr[c] * g[c] + be[c];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make(x.shape(), std::move(out), {xn, gn, bn}, [xn, gn, bn, b, k, m](Node& self) {
        for (int i = 0; i < b; ++i) {
            const double* g = gn->value.data() + static_cast<std::size_t>(i) * m;
            double* dg = gn->requires_grad ? gn->ensure_grad().data() + static_cast<std::size_t>(i) * m : nullptr;
            double* db = bn->requires_grad ? bn->ensure_grad().data() + static_cast<std::size_t>(i) * m : nullptr;
            double* dx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
            for (int j = 0; j < k; ++j) {
                const std::size_t row = (static_cast<std::size_t>(i) * k + j) * m;
                const double* gr = self.grad.data() + row;
                const double* xr = xn->value.data() + row;
                if (dx)
                    for (int c = 0; c < m; ++c) dx[row + c] += gr[c] * g[c];
                if (dg)
                    for (int c = 0; c < m; ++c) dg[c] += gr[c] * xr[c];
                if (db)
                    for (int c = 0; c < m; ++c) db[c] += gr[c];
            }
        }
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), "concat_cols");
    const int n = a.dim(0), ma = a.dim(1), mb = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n) * (ma + mb));
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.value().begin() + static_cast<std::ptrdiff_t>(i) * ma, ma,
                    out.begin() + static_cast<std::ptrdiff_t>(i) * (ma + mb));
        std::copy_n(b.value().begin() + static_cast<std::ptrdiff_t>(i) * mb, mb,
                    out.begin() + static_cast<std::ptrdiff_t>(i) * (ma + mb) + ma);
    }
    auto an = a.node(), bn = b.node();
    return make({n, ma + mb}, std::move(out), {an, bn}, [an, bn, n, ma, mb](Node& self) {
        for (int i = 0; i < n; ++i) {
            const double* row = self.grad.data() + static_cast<std::size_t>(i) * (ma + mb);
            if (an->requires_grad) {
                double* g = an->ensure_grad().data() + static_cast<std::size_t>(i) * ma;
                for (int c = 0; c < ma; ++c) g[c] += row[c];
            }
            if (bn->requires_grad) {
                double* g = bn->ensure_grad().data() + static_cast<std::size_t>(i) * mb;
                for (int c = 0; c < mb; ++c) g[c] += row[ma + c];
            }
        }
    });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    std::vector<double> out(x.value());
    for (double& v : out) v = v > 0 ? v : slope * v;
    auto xn = x.node();
    return make(x.shape(), std::move(out), {xn}, [xn, slope](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (xn->value[i] > 0 ? 1.0 : slope);
    });
}

Tensor softplus(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.value()[i];
        out[i] = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    }
    auto xn = x.node();
    return make(x.shape(), std::move(out), {xn}, [xn](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sigmoid(xn->value[i]);
    });
}

Tensor exp(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
    auto xn = x.node();
    Tensor t = make(x.shape(), std::move(out), {xn}, nullptr);
    if (t.requires_grad()) {
        t.node()->backward = [xn](Node& self) {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
        };
    }
    return t;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    std::vector<double> out(x.value());
    for (double& v : out) v = std::clamp(v, lo, hi);
    auto xn = x.node();
    return make(x.shape(), std::move(out), {xn}, [xn, lo, hi](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xn->value[i];
            if (v >= lo && v <= hi) g[i] += self.grad[i];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check(shape_size(shape) == x.size(), "reshape");
    auto xn = x.node();
    return make(std::move(shape), x.value(), {xn}, [xn](Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor batch_normalize(const Tensor& x, double eps, BatchStats* stats_out) {
    check(x.rank() == 2 && x.dim(0) > 0, "batch_normalize");
    const int n = rows_of(x), c = cols_of(x);
    const double* xv = x.value().data();
    std::vector<double> mu(c, 0.0), var(c, 0.0), lo(xv, xv + c), hi(xv, xv + c);
    for (int i = 0; i < n; ++i) {
        const double* r = xv + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            mu[j] += r[j];
            lo[j] = std::min(lo[j], r[j]);
            hi[j] = std::max(hi[j], r[j]);
        }
    }
    for (double& m : mu) m /= n;
    for (int i = 0; i < n; ++i) {
        const double* r = xv + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) var[j] += (r[j] - mu[j]) * (r[j] - mu[j]);
    }
    std::vector<double> inv_std(c);
    for (int j = 0; j < c; ++j) {
        var[j] /= n;
        // A constant column normalizes to exactly zero regardless of rounding in the mean.
        inv_std[j] = lo[j] == hi[j] ? 0.0 : 1.0 / std::sqrt(var[j] + eps);
    }
    std::vector<double> out(x.size());
    for (int i = 0; i < n; ++i) {
        const double* r = xv + static_cast<std::size_t>(i) * c;
        double* o = out.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) o[j] = (r[j] - mu[j]) * inv_std[j];
    }
    if (stats_out) {
        stats_out->mean = mu;
        stats_out->var = var;
    }
    for (int j = 0; j < c; ++j)
        if (lo[j] == hi[j]) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    auto xn = x.node();
    Tensor t = make(x.shape(), std::move(out), {xn}, nullptr);
    if (t.requires_grad()) {
        t.node()->backward = [xn, n, c, inv_std = std::move(inv_std)](Node& self) {
            std::vector<double> sg(c, 0.0), sgx(c, 0.0);
            for (int i = 0; i < n; ++i) {
                const double* g = self.grad.data() + static_cast<std::size_t>(i) * c;
                const double* xh = self.value.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    sg[j] += g[j];
                    sgx[j] += g[j] * xh[j];
                }
            }
            const double inv_n = 1.0 / n;
            std::vector<double> a(c), b(c);
            for (int j = 0; j < c; ++j) {
                a[j] = inv_std[j];
                b[j] = inv_std[j] * inv_n;
                sg[j] *= b[j];
                sgx[j] *= b[j];
            }
            double* dx = xn->ensure_grad().data();
            for (int i = 0; i < n; ++i) {
                const std::size_t row = static_cast<std::size_t>(i) * c;
                const double* g = self.grad.data() + row;
                const double* xh = self.value.data() + row;
                for (int j = 0; j < c; ++j) dx[row + j] += a[j] * g[j] - sg[j] - xh[j] * sgx[j];
            }
        };
    }
    return t;
}

Tensor normalize_fixed(const Tensor& x, std::span<const double> mean, std::span<const double> var, double eps) {
    const int n = rows_of(x), c = cols_of(x);
    check(mean.size() == static_cast<std::size_t>(c) && var.size() == static_cast<std::size_t>(c), "normalize_fixed");
    std::vector<double> inv_std(c);
    for (int j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    std::vector<double> out(x.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * c + j;
            out[k] = (x.value()[k] - mean[j]) * inv_std[j];
        }
    auto xn = x.node();
    return make(x.shape(), std::move(out), {xn}, [xn, n, c, inv_std](Node& self) {
        auto& g = xn->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                const std::size_t k = static_cast<std::size_t>(i) * c + j;
                g[k] += self.grad[k] * inv_std[j];
            }
    });
}

namespace {

// cols [C*9 x Ho*Wo] for one image [C x H x W]
void im2col(const double* img, int c, int h, int w, int ho, int wo, double* cols) {
    for (int ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                double* row = cols + (static_cast<std::size_t>(ch) * 9 + ky * 3 + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * 2 - 1 + ky;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * 2 - 1 + kx;
                        row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                                ? img[(static_cast<std::size_t>(ch) * h + iy) * w + ix]
                                                : 0.0;
                    }
                }
            }
}

void col2im(const double* cols, int c, int h, int w, int ho, int wo, double* img) {
    for (int ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const double* row = cols + (static_cast<std::size_t>(ch) * 9 + ky * 3 + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * 2 - 1 + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * 2 - 1 + kx;
                        if (ix < 0 || ix >= w) continue;
                        img[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += row[oy * wo + ox];
                    }
                }
            }
}

}  // namespace

Tensor conv3x3_s2(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check(x.rank() == 4 && w.rank() == 2, "conv3x3_s2");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), o = w.dim(0);
    check(w.dim(1) == c * 9 && bias.size() == static_cast<std::size_t>(o), "conv3x3_s2 weights");
    const int ho = (h - 1) / 2 + 1, wo = (wd - 1) / 2 + 1;
    const int k = c * 9, p = ho * wo;
    std::vector<double> out(static_cast<std::size_t>(b) * o * p);
    std::vector<double> cols(static_cast<std::size_t>(k) * p);
    CMapMat wm(w.value().data(), o, k);
    const Eigen::Map<const Eigen::VectorXd> bv(bias.value().data(), o);
    for (int i = 0; i < b; ++i) {
        im2col(x.value().data() + static_cast<std::size_t>(i) * c * h * wd, c, h, wd, ho, wo, cols.data());
        MapMat om(out.data() + static_cast<std::size_t>(i) * o * p, o, p);
        om.noalias() = wm * CMapMat(cols.data(), k, p);
        om.colwise() += bv;
    }
    auto xn = x.node(), wn = w.node(), bn = bias.node();
    return make({b, o, ho, wo}, std::move(out), {xn, wn, bn}, [=](Node& self) {
        std::vector<double> cols_b(static_cast<std::size_t>(k) * p);
        std::vector<double> dcols(static_cast<std::size_t>(k) * p);
        CMapMat wmat(wn->value.data(), o, k);
        for (int i = 0; i < b; ++i) {
            CMapMat g(self.grad.data() + static_cast<std::size_t>(i) * o * p, o, p);
            if (wn->requires_grad) {
                im2col(xn->value.data() + static_cast<std::size_t>(i) * c * h * wd, c, h, wd, ho, wo, cols_b.data());
                MapMat(wn->ensure_grad().data(), o, k).noalias() += g * CMapMat(cols_b.data(), k, p).transpose();
            }
            if (bn->requires_grad) Eigen::Map<Eigen::VectorXd>(bn->ensure_grad().data(), o) += g.rowwise().sum();
            if (xn->requires_grad) {
                MapMat(dcols.data(), k, p).noalias() = wmat.transpose() * g;
                col2im(dcols.data(), c, h, wd, ho, wo, xn->ensure_grad().data() + static_cast<std::size_t>(i) * c * h * wd);
            }
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    check(x.rank() == 4, "global_avg_pool");
    const int b = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(b) * c);
    for (int i = 0; i < b * c; ++i) {
        double s = 0;
        for (int j = 0; j < p; ++j) s += x.value()[static_cast<std::size_t>(i) * p + j];
        out[i] = s / p;
    }
    auto xn = x.node();
    return make({b, c}, std::move(out), {xn}, [xn, b, c, p](Node& self) {
        auto& g = xn->ensure_grad();
        for (int i = 0; i < b * c; ++i) {
            const double d = self.grad[i] / p;
            for (int j = 0; j < p; ++j) g[static_cast<std::size_t>(i) * p + j] += d;
        }
    });
}

Tensor group_max(const Tensor& x, int k) {
    check(x.rank() == 2 && k >= 1 && x.dim(0) % k == 0, "group_max");
    const int b = x.dim(0) / k, c = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(b) * c);
    std::vector<int> arg(out.size());
    for (int i = 0; i < b; ++i)
        for (int ch = 0; ch < c; ++ch) {
            int best = 0;
            double v = x.value()[static_cast<std::size_t>(i) * k * c + ch];
            for (int j = 1; j < k; ++j) {
                const double u = x.value()[(static_cast<std::size_t>(i) * k + j) * c + ch];
                if (u > v) {
                    v = u;
                    best = j;
                }
            }
            out[static_cast<std::size_t>(i) * c + ch] = v;
            arg[static_cast<std::size_t>(i) * c + ch] = best;
        }
    auto xn = x.node();
    return make({b, c}, std::move(out), {xn}, [xn, b, c, k, arg](Node& self) {
        auto& g = xn->ensure_grad();
        for (int i = 0; i < b; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t o = static_cast<std::size_t>(i) * c + ch;
                g[(static_cast<std::size_t>(i) * k + arg[o]) * c + ch] += self.grad[o];
            }
    });
}

Tensor group_mean(const Tensor& x, int k) {
    check(x.rank() == 2 && k >= 1 && x.dim(0) % k == 0, "group_mean");
    const int b = x.dim(0) / k, c = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(b) * c, 0.0);
    for (int i = 0; i < b; ++i) {
        for (int j = 0; j < k; ++j)
            for (int ch = 0; ch < c; ++ch)
                out[static_cast<std::size_t>(i) * c + ch] += x.value()[(static_cast<std::size_t>(i) * k + j) * c + ch];
        for (int ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(i) * c + ch] /= k;
    }
    auto xn = x.node();
    return make({b, c}, std::move(out), {xn}, [xn, b, c, k](Node& self) {
        auto& g = xn->ensure_grad();
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < k; ++j)
                for (int ch = 0; ch < c; ++ch)
                    g[(static_cast<std::size_t>(i) * k + j) * c + ch] += self.grad[static_cast<std::size_t>(i) * c + ch] / k;
    });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
    check(logits.size() == labels.size() && !labels.empty(), "bce_with_logits");
    const std::size_t n = labels.size();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = logits.value()[i];
        total += std::max(l, 0.0) - l * labels[i] + std::log1p(std::exp(-std::abs(l)));
    }
    auto ln = logits.node();
    std::vector<double> y(labels.begin(), labels.end());
    return make({1}, {total / n}, {ln}, [ln, y = std::move(y)](Node& self) {
        auto& g = ln->ensure_grad();
        const double s = self.grad[0] / static_cast<double>(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) g[i] += s * (sigmoid(ln->value[i]) - y[i]);
    });
}

Tensor kl_standard_normal(const Tensor& mu, const Tensor& log_sigma) {
    check(mu.rank() == 2 && mu.shape() == log_sigma.shape(), "kl_standard_normal");
    const int b = mu.dim(0);
    double total = 0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double m = mu.value()[i], ls = log_sigma.value()[i];
        total += 0.5 * (std::exp(2 * ls) + m * m - 1.0 - 2.0 * ls);
    }
    auto mn = mu.node(), sn = log_sigma.node();
    return make({1}, {total / b}, {mn, sn}, [mn, sn, b](Node& self) {
        const double s = self.grad[0] / b;
        if (mn->requires_grad) {
            auto& g = mn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * mn->value[i];
        }
        if (sn->requires_grad) {
            auto& g = sn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (std::exp(2 * sn->value[i]) - 1.0);
        }
    });
}

Tensor sum(const Tensor& x) {
    double s = 0;
    for (double v : x.value()) s += v;
    auto xn = x.node();
    return make({1}, {s}, {xn}, [xn](Node& self) {
        for (double& g : xn->ensure_grad()) g += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

}  // namespace sketchmass::ad
