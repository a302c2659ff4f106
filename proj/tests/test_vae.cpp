#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "bvod/imagegen.hpp"
#include "bvod/vae.hpp"

using namespace bvod;
using Catch::Matchers::WithinAbs;

namespace {

Dataset tiny_dataset(std::size_t n, std::uint64_t seed) {
    PartitionSpec spec;
    spec.n_train = n;
    spec.n_validation = 0;
    spec.n_test1 = 0;
    spec.n_test2 = 0;
    spec.seed = seed;
    return generate_partition(spec).train;
}

VaeConfig tiny_config() {
    VaeConfig cfg;
    cfg.n_latent = 2;
    cfg.hidden = {8};
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-3;
    cfg.seed = 21;
    return cfg;
}

void zero_param(const NodePtr& p) {
    std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
}

}  // namespace

TEST_CASE("init_vae builds the mirrored layer stack", "[vae]") {
    VaeConfig cfg;
    cfg.n_latent = 4;
    cfg.hidden = {32, 8};
    const VaeModel m = init_vae(cfg);

    REQUIRE(m.enc_w.size() == 2);
    REQUIRE(m.enc_w[0]->value.shape == std::vector<std::size_t>{1024, 32});
    REQUIRE(m.enc_w[1]->value.shape == std::vector<std::size_t>{32, 8});
    REQUIRE(m.mu_w->value.shape == std::vector<std::size_t>{8, 4});
    REQUIRE(m.logvar_w->value.shape == std::vector<std::size_t>{8, 4});
    REQUIRE(m.dec_w[0]->value.shape == std::vector<std::size_t>{4, 8});
    REQUIRE(m.dec_w[1]->value.shape == std::vector<std::size_t>{8, 32});
    REQUIRE(m.out_w->value.shape == std::vector<std::size_t>{32, 1024});
    REQUIRE(m.params().size() == 2 * 2 + 4 + 2 * 2 + 2);
}

TEST_CASE("initial biases are zero and weights bounded by the fan rule", "[vae]") {
    VaeConfig cfg;
    cfg.n_latent = 3;
    cfg.hidden = {16};
    const VaeModel m = init_vae(cfg);
    for (double v : m.enc_b[0]->value.data) REQUIRE(v == 0.0);
    for (double v : m.out_b->value.data) REQUIRE(v == 0.0);
    const double bound = std::sqrt(6.0 / (1024.0 + 16.0));
    for (double v : m.enc_w[0]->value.data) {
        REQUIRE(v >= -bound);
        REQUIRE(v <= bound);
    }
}

TEST_CASE("init_vae is deterministic in the seed", "[vae]") {
    VaeConfig cfg = tiny_config();
    const VaeModel a = init_vae(cfg);
    const VaeModel b = init_vae(cfg);
    REQUIRE(a.enc_w[0]->value.data == b.enc_w[0]->value.data);
    cfg.seed = 22;
    const VaeModel c = init_vae(cfg);
    REQUIRE(a.enc_w[0]->value.data != c.enc_w[0]->value.data);
}

TEST_CASE("degenerate configs are rejected", "[vae]") {
    VaeConfig no_latent;
    no_latent.n_latent = 0;
    REQUIRE_THROWS_AS(init_vae(no_latent), ConfigError);
    VaeConfig no_hidden;
    no_hidden.hidden = {};
    REQUIRE_THROWS_AS(init_vae(no_hidden), ConfigError);
}

TEST_CASE("zeroed posterior heads encode to the standard normal", "[vae]") {
    VaeModel m = init_vae(tiny_config());
    zero_param(m.mu_w);
    zero_param(m.mu_b);
    zero_param(m.logvar_w);
    zero_param(m.logvar_b);
    const Dataset data = tiny_dataset(3, 1);
    for (const LatentStats& s : encode_all(m, data)) {
        for (double v : s.mu) REQUIRE(v == 0.0);
        for (double v : s.log_var) REQUIRE(v == 0.0);
    }
}

TEST_CASE("encoding is deterministic and chunk-size independent", "[vae]") {
    const VaeModel m = init_vae(tiny_config());
    const Dataset data = tiny_dataset(7, 2);
    const std::vector<LatentStats> big = encode_all(m, data, 256);
    const std::vector<LatentStats> small = encode_all(m, data, 2);
    REQUIRE(big.size() == 7);
    for (std::size_t i = 0; i < big.size(); ++i) {
        REQUIRE(big[i].mu == small[i].mu);
        REQUIRE(big[i].log_var == small[i].log_var);
        const LatentStats single = encode(m, data[i]);
        REQUIRE(big[i].mu == single.mu);
    }
}

TEST_CASE("log variance is clamped to the working band", "[vae]") {
    VaeModel m = init_vae(tiny_config());
    std::fill(m.logvar_b->value.data.begin(), m.logvar_b->value.data.end(), 100.0);
    const Dataset data = tiny_dataset(2, 3);
    for (const LatentStats& s : encode_all(m, data))
        for (double v : s.log_var) REQUIRE(v == 10.0);
    std::fill(m.logvar_b->value.data.begin(), m.logvar_b->value.data.end(), -100.0);
    for (const LatentStats& s : encode_all(m, data))
        for (double v : s.log_var) REQUIRE(v == -10.0);
}

TEST_CASE("non-finite activations are reported", "[vae]") {
    VaeModel m = init_vae(tiny_config());
    // Poison the mean-head bias: the bias add touches every element each forward
    // pass, so the NaN reaches the encoder output regardless of the input image.
    m.mu_b->value.data[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(encode_all(m, tiny_dataset(2, 4)), NumericError);
}

TEST_CASE("reparameterize follows mu + sigma * noise", "[vae]") {
    LatentStats s;
    s.mu = {1.0, -2.0};
    s.log_var = {0.0, 0.0};
    REQUIRE(reparameterize(s, {0.0, 0.0}) == std::vector<double>{1.0, -2.0});
    REQUIRE(reparameterize(s, {1.5, -0.5}) == std::vector<double>{2.5, -2.5});
    s.log_var = {2.0, 2.0};  // sigma = e
    const std::vector<double> z = reparameterize(s, {1.0, 1.0});
    REQUIRE_THAT(z[0], WithinAbs(1.0 + std::exp(1.0), 1e-12));
    REQUIRE_THROWS_AS(reparameterize(s, {1.0}), Error);
}

TEST_CASE("reparameterization gradient in mu is the identity", "[vae]") {
    NodePtr mu = parameter(Tensor({1, 3}, {0.3, -1.0, 2.0}), "mu");
    NodePtr lv = parameter(Tensor({1, 3}, {0.5, -0.25, 1.0}), "lv");
    NodePtr noise = constant(Tensor({1, 3}, {0.7, -0.1, 1.3}));
    NodePtr z = build_reparameterize(mu, lv, noise);
    backward(sum(z));
    for (double g : mu->grad.data) REQUIRE_THAT(g, WithinAbs(1.0, 1e-12));
    // and d z / d lv = 0.5 * sigma * noise
    for (std::size_t i = 0; i < 3; ++i) {
        const double expected = 0.5 * std::exp(0.5 * lv->value.data[i]) * noise->value.data[i];
        REQUIRE_THAT(lv->grad.data[i], WithinAbs(expected, 1e-10));
    }
}

TEST_CASE("objective splits into reconstruction plus weighted divergence", "[vae]") {
    VaeConfig cfg = tiny_config();
    cfg.beta = 1.7;
    const VaeModel m = init_vae(cfg);
    const Dataset batch = tiny_dataset(4, 5);
    Rng rng(50);
    Tensor noise({4, cfg.n_latent});
    for (double& v : noise.data) v = rng.normal();
    const ElboBreakdown b = elbo_loss(m, batch, noise);
    REQUIRE_THAT(b.loss, WithinAbs(b.reconstruction + cfg.beta * b.kl, 1e-9));
    REQUIRE(b.reconstruction >= 0.0);
    REQUIRE(b.kl >= 0.0);
}

TEST_CASE("objective rejects bad inputs", "[vae]") {
    const VaeModel m = init_vae(tiny_config());
    REQUIRE_THROWS_AS(elbo_loss(m, Dataset{}, Tensor({1, 2})), Error);
    REQUIRE_THROWS_AS(elbo_loss(m, tiny_dataset(2, 6), Tensor({3, 2})), Error);
}

TEST_CASE("objective gradients match finite differences", "[vae]") {
    VaeConfig cfg;
    cfg.n_latent = 2;
    cfg.hidden = {6};
    cfg.beta = 1.3;
    cfg.seed = 31;
    const VaeModel m = init_vae(cfg);
    const Dataset batch = tiny_dataset(2, 7);
    Rng rng(51);
    Tensor noise({2, cfg.n_latent});
    for (double& v : noise.data) v = rng.normal();

    VaeGraph g = build_elbo(m, detail::pixels_batch(batch, 0, batch.size()), noise);
    backward(g.loss);

    // Spot-check a deterministic sample of parameter elements against
    // central differences on the same graph.
    Rng pick(52);
    const double h = 1e-5;
    for (const NodePtr& p : m.params()) {
        for (int rep = 0; rep < 3; ++rep) {
            const std::size_t i =
                static_cast<std::size_t>(pick.uniform_int(0, p->value.size() - 1));
            const double orig = p->value.data[i];
            p->value.data[i] = orig + h;
            const double fp = forward(g.loss)[0];
            p->value.data[i] = orig - h;
            const double fm = forward(g.loss)[0];
            p->value.data[i] = orig;
            forward(g.loss);
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = p->grad.data[i];
            const double rel =
                std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
            INFO(p->name << "[" << i << "] ad=" << ad << " fd=" << fd);
            REQUIRE(rel < 1e-5);
        }
    }
}

TEST_CASE("training reduces the objective on a small set", "[vae]") {
    const Dataset data = tiny_dataset(16, 8);
    VaeConfig cfg = tiny_config();
    cfg.epochs = 12;
    const TrainResult res = train(cfg, data);
    REQUIRE(res.trace.size() == 12);
    REQUIRE(res.trace.back() < res.trace.front());
    for (double v : res.trace) REQUIRE(std::isfinite(v));
}

TEST_CASE("training is bitwise deterministic in the seed", "[vae]") {
    const Dataset data = tiny_dataset(10, 9);
    VaeConfig cfg = tiny_config();
    cfg.epochs = 3;
    const TrainResult a = train(cfg, data);
    const TrainResult b = train(cfg, data);
    REQUIRE(a.trace == b.trace);
    REQUIRE(a.model.enc_w[0]->value.data == b.model.enc_w[0]->value.data);
    REQUIRE(a.model.out_w->value.data == b.model.out_w->value.data);

    cfg.seed = 99;
    const TrainResult c = train(cfg, data);
    REQUIRE(a.trace != c.trace);
}

TEST_CASE("zero epochs leaves the initialized model untouched", "[vae]") {
    const Dataset data = tiny_dataset(4, 10);
    VaeConfig cfg = tiny_config();
    cfg.epochs = 0;
    const TrainResult res = train(cfg, data);
    REQUIRE(res.trace.empty());
    const VaeModel fresh = init_vae(cfg);
    REQUIRE(res.model.enc_w[0]->value.data == fresh.enc_w[0]->value.data);
}

TEST_CASE("training rejects an empty dataset", "[vae]") {
    REQUIRE_THROWS_AS(train(tiny_config(), Dataset{}), Error);
}

TEST_CASE("reconstruction error is chunk-independent and non-negative", "[vae]") {
    const VaeModel m = init_vae(tiny_config());
    const Dataset data = tiny_dataset(9, 11);
    const double big = reconstruction_mse(m, data, 256);
    const double small = reconstruction_mse(m, data, 2);
    REQUIRE(big >= 0.0);
    REQUIRE(big == small);
    REQUIRE_THROWS_AS(reconstruction_mse(m, Dataset{}), Error);
}
