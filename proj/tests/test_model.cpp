#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/model.hpp"
#include "sketchmass/rng.hpp"
#include "test_util.hpp"

using namespace sketchmass;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed, double s = 1.0) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> d(0.0, s);
    std::vector<double> v(n);
    for (auto& x : v) x = d(gen);
    return v;
}

Tensor rand_param(ad::Shape shape, std::uint64_t seed, double s = 1.0) {
    const auto n = ad::shape_size(shape);
    return Tensor::parameter(std::move(shape), randn(n, seed, s));
}

// sum(f(x) * R) for a fixed random R, so every output coordinate matters.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
    return ad::sum(ad::mul(y, Tensor::constant(y.shape(), randn(y.size(), seed))));
}

SketchImage toy_sketch(int offset) {
    SketchImage img;
    for (int i = 40; i < 180; ++i) {
        img.set(i, 50 + offset, 0);
        img.set(50 + offset, i, 0);
        img.set(i, i, 0);
    }
    return img;
}

Batch toy_batch(int b, int k, const std::vector<SketchImage>& sketches, std::uint64_t seed) {
    Batch batch;
    batch.b = b;
    batch.k = k;
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-0.55, 0.55);
    for (int i = 0; i < b * k; ++i) {
        const double x = u(gen), y = u(gen), z = u(gen);
        batch.points.insert(batch.points.end(), {x, y, z});
        batch.labels.push_back(std::max({std::abs(x), std::abs(y), std::abs(z)}) < 0.3 ? 1.0 : 0.0);
    }
    for (int i = 0; i < b; ++i) {
        batch.sketches.push_back(&sketches[i % sketches.size()]);
        batch.context.push_back({0.1 * i, 1.0, 0.4, -0.8});
    }
    return batch;
}

void randomize_conditioning_maps(OccupancyNetwork& net, std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& [name, t] : net.params().items()) {
        if (name.find("gamma_w") != std::string::npos || name.find("beta_w") != std::string::npos ||
            name.find("z_proj.w") != std::string::npos) {
            t.value() = randn(t.size(), s++, 0.05);
        }
    }
}

std::vector<Tensor> all_params(OccupancyNetwork& net) {
    std::vector<Tensor> out;
    for (auto& [name, t] : net.params().items()) out.push_back(t);
    return out;
}

}  // namespace

TEST_CASE("autodiff layers match central differences") {
    GradCheckOptions opts;
    opts.coordinates = 40;
    auto check_op = [&](std::vector<Tensor> params, const LossClosure& f) {
        const auto r = grad_check(params, f, opts);
        CHECK(r.checked > 0);
        CHECK(r.max_relative_error < 1e-6);
    };
    const Tensor x = rand_param({12, 5}, 1), w = rand_param({5, 4}, 2), b = rand_param({4}, 3);
    check_op({x, w, b}, [&] { return weighted_sum(ad::linear(x, w, b), 10); });
    check_op({x, w}, [&] { return weighted_sum(ad::matmul(x, w), 11); });
    check_op({x}, [&] { return weighted_sum(ad::batch_normalize(x, 1e-5), 12); });
    check_op({x}, [&] { return weighted_sum(ad::leaky_relu(x, 0.2), 13); });
    check_op({x}, [&] { return weighted_sum(ad::softplus(x), 14); });
    check_op({x}, [&] { return weighted_sum(ad::exp(ad::scale(x, 0.3)), 15); });
    check_op({x}, [&] { return weighted_sum(ad::clamp(x, -0.7, 0.9), 16); });
    check_op({x}, [&] { return weighted_sum(ad::group_max(x, 4), 17); });
    check_op({x}, [&] { return weighted_sum(ad::group_mean(x, 3), 18); });
    const Tensor g = rand_param({3, 5}, 4), be = rand_param({3, 5}, 5);
    check_op({x, g, be}, [&] { return weighted_sum(ad::affine_rows(x, g, be, 4), 19); });
    check_op({g}, [&] { return weighted_sum(ad::repeat_rows(g, 4), 20); });
    check_op({x, g}, [&] { return weighted_sum(ad::concat_cols(ad::repeat_rows(g, 4), x), 21); });
    const Tensor img = rand_param({2, 3, 9, 8}, 6), cw = rand_param({4, 27}, 7), cb = rand_param({4}, 8);
    check_op({img, cw, cb}, [&] { return weighted_sum(ad::conv3x3_s2(img, cw, cb), 22); });
    check_op({img}, [&] { return weighted_sum(ad::global_avg_pool(img), 23); });
    std::vector<double> labels(12);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0;
    const Tensor logits = rand_param({12}, 9);
    check_op({logits}, [&] { return ad::bce_with_logits(logits, labels); });
    const Tensor mu = rand_param({3, 4}, 30), ls = rand_param({3, 4}, 31, 0.5);
    check_op({mu, ls}, [&] { return kl_gaussian(mu, ls); });
}

TEST_CASE("encode_sketch") {
    const OccupancyNetwork net(ModelConfig{}, 3);
    const SketchImage white;
    const Tensor a = encode_sketch(net, white), b = encode_sketch(net, white);
    CHECK(a.size() == 256);
    CHECK(a.value() == b.value());
    for (double v : a.value()) CHECK(std::isfinite(v));

    SUBCASE("perturbing a conv weight changes the output") {
        OccupancyNetwork n2(ModelConfig{}, 3);
        const SketchImage img = toy_sketch(0);
        const auto before = encode_sketch(n2, img).value();
        n2.params().at("enc.conv1.w").value()[5] += 0.05;
        const auto after = encode_sketch(n2, img).value();
        double diff = 0;
        for (std::size_t i = 0; i < before.size(); ++i) diff = std::max(diff, std::abs(before[i] - after[i]));
        CHECK(diff > 0);
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(net.encode(Tensor::zeros({1, 1, 100, 100})), DataError);
        SketchImage small;
        small.width = small.height = 10;
        small.pixels.assign(100, 255);
        CHECK_THROWS_AS(encode_sketch(net, small), DataError);
    }
}

TEST_CASE("cbn") {
    const int b = 2, k = 50, ch = 6, d = 5;
    auto feats = randn(b * k * ch, 4, 2.0);
    for (int i = 0; i < b * k; ++i) feats[i * ch + 2] = 3.25;  // constant channel
    const Tensor x = Tensor::constant({b * k, ch}, feats);
    const Tensor c = Tensor::constant({b, d}, randn(b * d, 5));

    SUBCASE("identity maps give plain normalization") {
        CbnParams p{Tensor::zeros({d, ch}), Tensor::constant({ch}, std::vector<double>(ch, 1.0)), Tensor::zeros({d, ch}),
                    Tensor::zeros({ch})};
        const Tensor y = cbn(x, c, k, p, 1e-5);
        const Tensor plain = ad::batch_normalize(x, 1e-5);
        CHECK(y.value() == plain.value());
        for (int i = 0; i < b * k; ++i) CHECK(y.value()[i * ch + 2] == 0.0);
    }
    SUBCASE("constant channel yields beta exactly; moments follow gamma and beta") {
        CbnParams p{Tensor::constant({d, ch}, randn(d * ch, 6, 0.3)), Tensor::constant({ch}, randn(ch, 7)),
                    Tensor::constant({d, ch}, randn(d * ch, 8, 0.3)), Tensor::constant({ch}, randn(ch, 9))};
        const Tensor y = cbn(x, c, k, p, 1e-5);
        const Tensor gamma = ad::linear(c, p.gamma_w, p.gamma_b), beta = ad::linear(c, p.beta_w, p.beta_b);
        for (int s = 0; s < b; ++s)
            for (int i = 0; i < k; ++i) CHECK(y.value()[(s * k + i) * ch + 2] == beta.value()[s * ch + 2]);
        // With a single conditioning row the per-channel moments are beta and gamma^2.
        const Tensor c1 = Tensor::constant({1, d}, randn(d, 10));
        const Tensor x1 = Tensor::constant({k, ch}, randn(k * ch, 11, 3.0));
        const Tensor y1 = cbn(x1, c1, k, p, 1e-5);
        const Tensor g1 = ad::linear(c1, p.gamma_w, p.gamma_b), b1 = ad::linear(c1, p.beta_w, p.beta_b);
        for (int j = 0; j < ch; ++j) {
            double m = 0, v = 0;
            for (int i = 0; i < k; ++i) m += y1.value()[i * ch + j];
            m /= k;
            for (int i = 0; i < k; ++i) v += std::pow(y1.value()[i * ch + j] - m, 2);
            v /= k;
            CHECK(m == doctest::Approx(b1.value()[j]).epsilon(1e-9));
            CHECK(v == doctest::Approx(g1.value()[j] * g1.value()[j]).epsilon(1e-4));
        }
        (void)gamma;
    }
}

TEST_CASE("decode_occupancy") {
    const std::vector<SketchImage> sketches{toy_sketch(0), toy_sketch(30)};
    SUBCASE("initial probabilities are balanced") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            OccupancyNetwork net(ModelConfig{}, seed);
            const Batch batch = toy_batch(2, 512, sketches, seed);
            const Tensor c = condition(net, batch);
            const Tensor logits = net.decode(Tensor::constant({1024, 3}, batch.points), c, 512, true);
            double mean = 0;
            for (double l : logits.value()) {
                const double p = 1.0 / (1.0 + std::exp(-l));
                CHECK(p > 0.0);
                CHECK(p < 1.0);
                mean += p;
            }
            mean /= logits.size();
            CHECK(mean > 0.3);
            CHECK(mean < 0.7);
        }
    }
    SUBCASE("permuting points permutes logits") {
        OccupancyNetwork net(ModelConfig{}, 4);
        randomize_conditioning_maps(net, 1);
        const Batch batch = toy_batch(1, 256, sketches, 3);
        const Tensor c = condition(net, batch);
        std::vector<int> perm(256);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
        std::vector<double> permuted(batch.points.size());
        for (int i = 0; i < 256; ++i)
            for (int a = 0; a < 3; ++a) permuted[i * 3 + a] = batch.points[perm[i] * 3 + a];
        const auto l0 = net.decode(Tensor::constant({256, 3}, batch.points), c, 256, true).value();
        const auto l1 = net.decode(Tensor::constant({256, 3}, permuted), c, 256, true).value();
        for (int i = 0; i < 256; ++i) CHECK(l1[i] == doctest::Approx(l0[perm[i]]).epsilon(1e-12));
        const auto e0 = net.decode_eval(Tensor::constant({256, 3}, batch.points), c, 256).value();
        const auto e1 = net.decode_eval(Tensor::constant({256, 3}, permuted), c, 256).value();
        for (int i = 0; i < 256; ++i) CHECK(e1[i] == e0[perm[i]]);
    }
    SUBCASE("shape mismatch") {
        OccupancyNetwork net(ModelConfig{}, 4);
        CHECK_THROWS_AS(net.decode(Tensor::zeros({10, 2}), Tensor::zeros({1, 256}), 10, true), DataError);
        CHECK_THROWS_AS(net.decode(Tensor::zeros({10, 3}), Tensor::zeros({1, 255}), 10, true), DataError);
        CHECK_THROWS_AS(net.decode(Tensor::zeros({10, 3}), Tensor::zeros({2, 256}), 10, true), DataError);
    }
}

TEST_CASE("pointset_encoder") {
    ModelConfig cfg;
    cfg.mode = ModelMode::Variational;
    const OccupancyNetwork net(cfg, 2);
    const int k = 64;
    const auto pts = randn(k * 3, 1, 0.3);
    std::vector<double> labels(k);
    for (int i = 0; i < k; ++i) labels[i] = i % 2;
    const auto [mu, ls] = net.encode_pointset(Tensor::constant({k, 3}, pts), labels, k);
    CHECK(mu.shape() == ad::Shape{1, 128});
    CHECK(ls.shape() == ad::Shape{1, 128});

    SUBCASE("permutation invariant") {
        std::vector<int> perm(k);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), std::mt19937_64(9));
        std::vector<double> p2(pts.size()), l2(k);
        for (int i = 0; i < k; ++i) {
            for (int a = 0; a < 3; ++a) p2[i * 3 + a] = pts[perm[i] * 3 + a];
            l2[i] = labels[perm[i]];
        }
        const auto [mu2, ls2] = net.encode_pointset(Tensor::constant({k, 3}, p2), l2, k);
        for (std::size_t i = 0; i < mu.size(); ++i) {
            CHECK(std::abs(mu2.value()[i] - mu.value()[i]) <= 1e-12);
            CHECK(std::abs(ls2.value()[i] - ls.value()[i]) <= 1e-12);
        }
    }
    SUBCASE("single point and duplicated set") {
        const auto [m1, s1] = net.encode_pointset(Tensor::constant({1, 3}, {0.1, 0.2, 0.3}), std::vector<double>{1.0}, 1);
        for (double v : m1.value()) CHECK(std::isfinite(v));
        std::vector<double> p2, l2;
        for (int rep = 0; rep < 2; ++rep) {
            p2.insert(p2.end(), pts.begin(), pts.end());
            l2.insert(l2.end(), labels.begin(), labels.end());
        }
        const auto [mu2, ls2] = net.encode_pointset(Tensor::constant({2 * k, 3}, p2), l2, 2 * k);
        for (std::size_t i = 0; i < mu.size(); ++i) {
            CHECK(std::abs(mu2.value()[i] - mu.value()[i]) <= 1e-12);
            CHECK(std::abs(ls2.value()[i] - ls.value()[i]) <= 1e-12);
        }
    }
}

TEST_CASE("reparameterize") {
    const Tensor mu = Tensor::constant({1, 3}, {0.5, -1.0, 2.0});
    const Tensor tiny = Tensor::constant({1, 3}, {-20.0, -20.0, -20.0});
    const auto s = reparameterize(mu, tiny, 7);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s.z.value()[i] - mu.value()[i]) < 1e-8);
    CHECK(reparameterize(mu, Tensor::zeros({1, 3}), 7).z.value() == reparameterize(mu, Tensor::zeros({1, 3}), 7).z.value());
    CHECK(reparameterize(mu, Tensor::zeros({1, 3}), 7).z.value() != reparameterize(mu, Tensor::zeros({1, 3}), 8).z.value());

    const int n = 100000;
    const double m = 0.7, sigma = std::exp(0.4);
    const auto draw = reparameterize(Tensor::constant({n, 1}, std::vector<double>(n, m)),
                                     Tensor::constant({n, 1}, std::vector<double>(n, 0.4)), 11);
    double mean = 0;
    for (double z : draw.z.value()) mean += z;
    mean /= n;
    CHECK(std::abs(mean - m) < 3 * sigma / std::sqrt(n));
}

TEST_CASE("bce_loss") {
    CHECK(bce_loss(Tensor::zeros({5}), std::vector<double>{0, 1, 0, 1, 1}).item() == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(Tensor::constant({1}, {20.0}), std::vector<double>{1}).item() < 1e-8);
    const auto logits = randn(200, 3, 3.0);
    std::vector<double> labels(200);
    for (int i = 0; i < 200; ++i) labels[i] = (i * 7) % 3 == 0;
    double naive = 0;
    for (int i = 0; i < 200; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits[i]));
        naive -= labels[i] * std::log(p) + (1 - labels[i]) * std::log(1 - p);
    }
    CHECK(std::abs(bce_loss(Tensor::constant({200}, logits), labels).item() - naive / 200) < 1e-9);
}

TEST_CASE("kl_gaussian") {
    CHECK(kl_gaussian(Tensor::zeros({1, 4}), Tensor::zeros({1, 4})).item() == 0.0);
    CHECK(kl_gaussian(Tensor::constant({1, 1}, {1.0}), Tensor::zeros({1, 1})).item() == doctest::Approx(0.5));

    SUBCASE("Monte-Carlo estimate") {
        const std::vector<double> mu{0.3, -0.8, 1.1}, ls{-0.2, 0.4, 0.1};
        const double kl = kl_gaussian(Tensor::constant({1, 3}, mu), Tensor::constant({1, 3}, ls)).item();
        const CounterRng rng(5);
        const int n = 1000000;
        double sum = 0, sum2 = 0;
        for (int s = 0; s < n; ++s) {
            double log_ratio = 0;
            for (int j = 0; j < 3; ++j) {
                const double e = rng.normal(static_cast<std::uint64_t>(s) * 3 + j);
                const double z = mu[j] + std::exp(ls[j]) * e;
                // log q(z) - log p(z); the 2*pi terms cancel.
                log_ratio += -ls[j] - 0.5 * e * e + 0.5 * z * z;
            }
            sum += log_ratio;
            sum2 += log_ratio * log_ratio;
        }
        const double est = sum / n, sd = std::sqrt((sum2 / n - est * est) / n);
        CHECK(std::abs(est - kl) < 3 * sd);
    }
}

TEST_CASE("loss_total") {
    const std::vector<SketchImage> sketches{toy_sketch(0), toy_sketch(20), toy_sketch(40)};
    const Batch batch = toy_batch(3, 128, sketches, 1);

    SUBCASE("variational reduces to conditional") {
        OccupancyNetwork cond(ModelConfig{}, 5);
        ModelConfig vcfg;
        vcfg.mode = ModelMode::Variational;
        OccupancyNetwork var(vcfg, 5);
        for (auto& [name, t] : var.params().items()) {
            if (name.rfind("set.", 0) == 0) std::fill(t.value().begin(), t.value().end(), 0.0);
            else CHECK(t.value() == cond.params().at(name).value());
        }
        const auto lc = loss_total(cond, batch, 1.0, 3);
        const auto lv = loss_total(var, batch, 0.0, 3);
        CHECK(lv.total.item() == lc.total.item());
        CHECK(lv.kl == doctest::Approx(0.0));

        const auto lv1 = loss_total(var, batch, 1.0, 3);
        CHECK(lv1.total.item() >= lv1.bce);
        CHECK(lv1.kl >= 0.0);
        CHECK(lv1.total.item() >= 0.0);
    }
    SUBCASE("perfect predictor") {
        std::vector<double> logits(batch.labels.size());
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = batch.labels[i] > 0.5 ? 20.0 : -20.0;
        CHECK(bce_loss(Tensor::constant({static_cast<int>(logits.size())}, logits), batch.labels).item() < 1e-6);
    }
    SUBCASE("batch loss is the mean of per-shape losses in eval mode") {
        ModelConfig vcfg;
        vcfg.mode = ModelMode::Variational;
        OccupancyNetwork net(vcfg, 6);
        randomize_conditioning_maps(net, 2);
        const double whole = loss_total(net, batch, 0.5, 9, false).total.item();
        // Per-shape noise must match the batched draw, so feed the shared latent through mu with zero spread.
        for (auto& [name, t] : net.params().items())
            if (name.rfind("set.log_sigma", 0) == 0) std::fill(t.value().begin(), t.value().end(), 0.0);
        auto& lsb = net.params().at("set.log_sigma.b").value();
        std::fill(lsb.begin(), lsb.end(), -20.0);
        const double whole_det = loss_total(net, batch, 0.5, 9, false).total.item();
        double per_shape = 0;
        for (int s = 0; s < batch.b; ++s) {
            Batch one;
            one.b = 1;
            one.k = batch.k;
            one.points.assign(batch.points.begin() + s * batch.k * 3, batch.points.begin() + (s + 1) * batch.k * 3);
            one.labels.assign(batch.labels.begin() + s * batch.k, batch.labels.begin() + (s + 1) * batch.k);
            one.sketches = {batch.sketches[s]};
            one.context = {batch.context[s]};
            per_shape += loss_total(net, one, 0.5, 9, false).total.item();
        }
        CHECK(whole_det == doctest::Approx(per_shape / batch.b).epsilon(1e-9));
        CHECK(std::isfinite(whole));
    }
    SUBCASE("context append") {
        ModelConfig cfg;
        cfg.use_context = true;
        OccupancyNetwork net(cfg, 1);
        CHECK(net.params().at("dec.cbn0.gamma_w").dim(0) == 260);
        CHECK(std::isfinite(loss_total(net, batch, 1.0, 1).total.item()));
        Batch missing = batch;
        missing.context.clear();
        CHECK_THROWS_AS(loss_total(net, missing, 1.0, 1), DataError);
    }
}

TEST_CASE("adam_step") {
    OptimizerConfig cfg;
    SUBCASE("zero gradient is the identity") {
        ParameterStore ps;
        ps.add("w", {4}, {0.5, -0.25, 1.0, 2.0});
        const auto before = ps.at("w").value();
        ps.zero_grad();
        AdamState st;
        adam_step(ps, st, cfg);
        CHECK(ps.at("w").value() == before);
    }
    SUBCASE("one step by hand") {
        ParameterStore ps;
        ps.add("w", {1}, {1.0});
        ps.at("w").grad()[0] = 1.0;
        AdamState st;
        adam_step(ps, st, cfg, false);
        // m = 0.1, v = 0.001; bias correction gives m_hat = v_hat = 1.
        CHECK(ps.at("w").value()[0] == doctest::Approx(1.0 - 1e-4 / (1.0 + 1e-8)).epsilon(1e-15));
        CHECK(st.t == 1);
    }
    SUBCASE("decoupled weight decay") {
        cfg.weight_decay = 1e-2;
        ParameterStore ps;
        ps.add("w", {1}, {2.0});
        ps.zero_grad();
        AdamState st;
        adam_step(ps, st, cfg, false);
        CHECK(ps.at("w").value()[0] == doctest::Approx(2.0 * (1 - 1e-4 * 1e-2)).epsilon(1e-15));
    }
    SUBCASE("float rounding keeps values representable") {
        ParameterStore ps;
        ps.add("w", {3}, {0.1f, 0.2f, 0.3f});
        ps.at("w").grad() = {0.3, -0.2, 0.1};
        AdamState st;
        adam_step(ps, st, cfg);
        for (double v : ps.at("w").value()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
        for (double v : st.m["w"]) CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
    CHECK_THROWS_AS([] {
        OptimizerConfig bad;
        bad.beta1 = 1.0;
        bad.validate();
    }(), ConfigError);
}

TEST_CASE("grad_check") {
    SUBCASE("quadratic") {
        Tensor theta = rand_param({10}, 1);
        std::vector<Tensor> ps{theta};
        const auto r = grad_check(ps, [&] { return ad::sum(ad::mul(theta, theta)); });
        CHECK(r.max_relative_error < 1e-8);
    }
    SUBCASE("full model and corrupted control") {
        ModelConfig cfg;
        cfg.mode = ModelMode::Variational;
        cfg.activation = Activation::Softplus;
        OccupancyNetwork net(cfg, 8);
        randomize_conditioning_maps(net, 3);
        const std::vector<SketchImage> sketches{toy_sketch(0), toy_sketch(25)};
        const Batch batch = toy_batch(2, 32, sketches, 4);
        auto params = all_params(net);
        const LossClosure loss = [&] { return loss_total(net, batch, 1.0, 17).total; };
        GradCheckOptions opts;
        opts.coordinates = 50;
        opts.seed = 2;
        const auto analytic = analytic_gradients(params, loss);
        const auto r = grad_check_against(params, loss, analytic, opts);
        CHECK(r.checked == 50);
        CHECK(r.max_relative_error < 1e-3);

        // Doubling the gradient of the decoder's first layer must be caught.
        auto corrupted = analytic;
        std::size_t idx = 0;
        while (net.params().items()[idx].first != "dec.fc_p.w") ++idx;
        for (double& g : corrupted[idx]) g *= 2.0;
        std::vector<Tensor> only{params[idx]};
        const auto bad = grad_check_against(only, loss, {corrupted[idx]}, opts);
        CHECK(bad.max_relative_error > 0.5);
    }
}

TEST_CASE("checkpoint") {
    sketchmass::testing::TempDir dir("ckpt");
    ModelConfig cfg;
    cfg.mode = ModelMode::Variational;
    OccupancyNetwork net(cfg, 12);
    net.input_mean = 0.96875;
    net.input_std = 0.125;
    AdamState adam;
    const std::vector<SketchImage> sketches{toy_sketch(0)};
    const Batch batch = toy_batch(1, 64, sketches, 2);
    net.params().zero_grad();
    ad::backward(loss_total(net, batch, 1.0, 1).total);
    adam_step(net.params(), adam, OptimizerConfig{});
    TrainState st{7, 0.75, 5, 1};
    save_model(dir / "m.vitp", net, &adam, &st);

    AdamState adam2;
    TrainState st2;
    OccupancyNetwork back = load_model(dir / "m.vitp", &adam2, &st2);
    CHECK(back.config().mode == ModelMode::Variational);
    CHECK(back.input_mean == 0.96875);
    for (const auto& [name, t] : net.params().items()) CHECK(back.params().at(name).value() == t.value());
    CHECK(back.running_stats()[0].mean == net.running_stats()[0].mean);
    CHECK(adam2.t == 1);
    CHECK(adam2.m == adam.m);
    CHECK(adam2.v == adam.v);
    CHECK(st2.step == 7);
    CHECK(st2.best_val == 0.75);
    save_model(dir / "m2.vitp", back, &adam2, &st2);
    CHECK(read_file(dir / "m.vitp") == read_file(dir / "m2.vitp"));

    SUBCASE("format") {
        const std::string bytes = read_file(dir / "m.vitp");
        CHECK(bytes.substr(0, 4) == "VITP");
        CHECK(bytes[4] == 1);
        const auto recs = decode_checkpoint(bytes);
        CHECK(recs.size() == model_records(net, &adam, &st).size());
        CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
        CHECK_THROWS_AS(decode_checkpoint("XXXX" + bytes.substr(4)), DataError);
        std::vector<TensorRecord> one{{"a", {2, 2}, {1, 2, 3, 4}}};
        const std::string enc = encode_checkpoint(one);
        // magic, version, count, name length, name, dtype, rank, 2 extents, 4 floats
        CHECK(enc.size() == 4 + 4 + 4 + 4 + 1 + 4 + 4 + 8 + 16);
        CHECK(decode_checkpoint(enc)[0].data == one[0].data);
    }
}
