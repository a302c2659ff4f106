#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "bvod/adam.hpp"
#include "bvod/autodiff.hpp"
#include "bvod/error.hpp"
#include "bvod/imagegen.hpp"
#include "bvod/rng.hpp"

namespace bvod {

constexpr double kLogVarClampLo = -10.0;
constexpr double kLogVarClampHi = 10.0;

struct VaeConfig {
    std::size_t n_latent = 8;
    double beta = 1.0;
    std::vector<std::size_t> hidden = {256, 64};  // encoder sizes, mirrored in the decoder
    double learning_rate = 1e-3;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

/// Encoder and decoder parameters. The encoder maps 1024 pixels through the
/// hidden stack to a mean head and a log-variance head, one output per
/// latent; the decoder mirrors the stack back to 1024 sigmoid pixels.
struct VaeModel {
    VaeConfig config;
    std::vector<NodePtr> enc_w, enc_b;
    NodePtr mu_w, mu_b, logvar_w, logvar_b;
    std::vector<NodePtr> dec_w, dec_b;
    NodePtr out_w, out_b;

    std::vector<NodePtr> params() const {
        std::vector<NodePtr> all;
        for (std::size_t i = 0; i < enc_w.size(); ++i) {
            all.push_back(enc_w[i]);
            all.push_back(enc_b[i]);
        }
        all.push_back(mu_w);
        all.push_back(mu_b);
        all.push_back(logvar_w);
        all.push_back(logvar_b);
        for (std::size_t i = 0; i < dec_w.size(); ++i) {
            all.push_back(dec_w[i]);
            all.push_back(dec_b[i]);
        }
        all.push_back(out_w);
        all.push_back(out_b);
        return all;
    }
};

/// Per-image Gaussian posterior parameters, one (mu, log variance) pair per
/// latent variable.
struct LatentStats {
    std::vector<double> mu;
    std::vector<double> log_var;
};

namespace detail {

inline NodePtr init_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                           const std::string& name) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w({fan_in, fan_out});
    for (double& v : w.data) v = rng.uniform(-s, s);
    return parameter(std::move(w), name);
}

inline NodePtr init_bias(std::size_t n, const std::string& name) {
    return parameter(Tensor({1, n}), name);
}

}  // namespace detail

/// Fresh model with uniform +-sqrt(6/(fan_in+fan_out)) weights and zero
/// biases, fully determined by config.seed.
inline VaeModel init_vae(const VaeConfig& config) {
    if (config.n_latent == 0) throw ConfigError("n_latent must be positive");
    if (config.hidden.empty()) throw ConfigError("at least one hidden layer is required");
    Rng rng(derive_seed(config.seed, 0));
    VaeModel m;
    m.config = config;

    std::size_t in = kImagePixels;
    for (std::size_t i = 0; i < config.hidden.size(); ++i) {
        const std::size_t outn = config.hidden[i];
        const std::string tag = "enc" + std::to_string(i);
        m.enc_w.push_back(detail::init_weight(rng, in, outn, tag + ".w"));
        m.enc_b.push_back(detail::init_bias(outn, tag + ".b"));
        in = outn;
    }
    m.mu_w = detail::init_weight(rng, in, config.n_latent, "mu.w");
    m.mu_b = detail::init_bias(config.n_latent, "mu.b");
    m.logvar_w = detail::init_weight(rng, in, config.n_latent, "logvar.w");
    m.logvar_b = detail::init_bias(config.n_latent, "logvar.b");

    in = config.n_latent;
    for (std::size_t i = 0; i < config.hidden.size(); ++i) {
        const std::size_t outn = config.hidden[config.hidden.size() - 1 - i];
        const std::string tag = "dec" + std::to_string(i);
        m.dec_w.push_back(detail::init_weight(rng, in, outn, tag + ".w"));
        m.dec_b.push_back(detail::init_bias(outn, tag + ".b"));
        in = outn;
    }
    m.out_w = detail::init_weight(rng, in, kImagePixels, "out.w");
    m.out_b = detail::init_bias(kImagePixels, "out.b");
    return m;
}

/// Encoder subgraph: batch {B, 1024} to mu and clamped log-variance, each
/// {B, nLatent}.
inline std::pair<NodePtr, NodePtr> build_encoder(const VaeModel& m, NodePtr batch) {
    NodePtr h = std::move(batch);
    for (std::size_t i = 0; i < m.enc_w.size(); ++i) h = relu(affine(h, m.enc_w[i], m.enc_b[i]));
    NodePtr mu = affine(h, m.mu_w, m.mu_b);
    NodePtr log_var = clamp(affine(h, m.logvar_w, m.logvar_b), kLogVarClampLo, kLogVarClampHi);
    return {std::move(mu), std::move(log_var)};
}

/// Decoder subgraph: latent batch {B, nLatent} to sigmoid pixels {B, 1024}.
inline NodePtr build_decoder(const VaeModel& m, NodePtr z) {
    NodePtr h = std::move(z);
    for (std::size_t i = 0; i < m.dec_w.size(); ++i) h = relu(affine(h, m.dec_w[i], m.dec_b[i]));
    return sigmoid(affine(h, m.out_w, m.out_b));
}

/// z = mu + exp(log_var / 2) * noise as graph nodes, differentiable in both
/// posterior parameters.
inline NodePtr build_reparameterize(NodePtr mu, NodePtr log_var, NodePtr noise) {
    return add(std::move(mu), mul(exp(scale(std::move(log_var), 0.5)), std::move(noise)));
}

/// Handles into one assembled training graph.
struct VaeGraph {
    NodePtr input;       // {B, 1024} pixel batch
    NodePtr noise;       // {B, nLatent} standard-normal draws
    NodePtr mu, log_var; // {B, nLatent}
    NodePtr z;           // {B, nLatent}
    NodePtr recon;       // {B, 1024}
    NodePtr recon_term;  // {1} scaled reconstruction error
    NodePtr kl_term;     // {1} summed divergence, before the beta weight
    NodePtr loss;        // {1}
};

/// Per-element closed-form divergence of N(mu, sigma^2) from N(0, 1):
/// (mu^2 + sigma^2 - log sigma^2 - 1) / 2.
inline NodePtr build_kl_elements(NodePtr mu, NodePtr log_var) {
    NodePtr lv = std::move(log_var);
    NodePtr inside = sub(add(square(std::move(mu)), exp(lv)), add_scalar(lv, 1.0));
    return scale(std::move(inside), 0.5);
}

/// Full objective over a pixel batch: the batch mean of the per-image summed
/// squared reconstruction error plus beta times the per-image summed
/// divergence. Both reductions use one graph-level sum scaled by 1/B.
inline VaeGraph build_elbo(const VaeModel& m, Tensor batch, Tensor noise) {
    const double inv_b = 1.0 / static_cast<double>(batch.rows());
    VaeGraph g;
    g.input = constant(std::move(batch));
    g.noise = constant(std::move(noise));
    auto [mu, log_var] = build_encoder(m, g.input);
    g.mu = mu;
    g.log_var = log_var;
    g.z = build_reparameterize(g.mu, g.log_var, g.noise);
    g.recon = build_decoder(m, g.z);
    g.recon_term = scale(sum(square(sub(g.recon, g.input))), inv_b);
    g.kl_term = scale(sum(build_kl_elements(g.mu, g.log_var)), inv_b);
    g.loss = add(g.recon_term, scale(g.kl_term, m.config.beta));
    return g;
}

namespace detail {

inline Tensor pixels_batch(const Dataset& images, std::size_t begin, std::size_t end,
                           const std::vector<std::size_t>* order = nullptr) {
    Tensor batch({end - begin, kImagePixels});
    for (std::size_t i = begin; i < end; ++i) {
        const LabeledImage& img = images[order ? (*order)[i] : i];
        if (img.pixels.size() != kImagePixels)
            throw Error("image pixels have shape " + img.pixels.shape_str() +
                        ", expected 32x32");
        std::copy(img.pixels.data.begin(), img.pixels.data.end(),
                  batch.data.begin() + static_cast<std::ptrdiff_t>((i - begin) * kImagePixels));
    }
    return batch;
}

}  // namespace detail

/// Posterior parameters for a batch of images, computed in chunks. Pure and
/// deterministic; no sampling involved.
inline std::vector<LatentStats> encode_all(const VaeModel& m, const Dataset& images,
                                           std::size_t chunk = 256) {
    std::vector<LatentStats> out;
    out.reserve(images.size());
    for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
        const std::size_t end = std::min(images.size(), begin + chunk);
        auto [mu, log_var] = build_encoder(m, constant(detail::pixels_batch(images, begin, end)));
        if (!mu->value.all_finite() || !log_var->value.all_finite())
            throw NumericError("non-finite encoder activation");
        const std::size_t L = m.config.n_latent;
        for (std::size_t r = 0; r < end - begin; ++r) {
            LatentStats s;
            s.mu.assign(mu->value.data.begin() + static_cast<std::ptrdiff_t>(r * L),
                        mu->value.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * L));
            s.log_var.assign(log_var->value.data.begin() + static_cast<std::ptrdiff_t>(r * L),
                             log_var->value.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * L));
            out.push_back(std::move(s));
        }
    }
    return out;
}

inline LatentStats encode(const VaeModel& m, const LabeledImage& image) {
    return encode_all(m, Dataset{image})[0];
}

/// Same for a bare pixel tensor, as seen by an online detector.
inline LatentStats encode(const VaeModel& m, const Tensor& pixels) {
    LabeledImage img;
    img.pixels = pixels;
    return encode_all(m, Dataset{std::move(img)})[0];
}

/// Direct (non-graph) reparameterization: z = mu + exp(log_var / 2) * noise.
inline std::vector<double> reparameterize(const LatentStats& stats,
                                          const std::vector<double>& noise) {
    if (noise.size() != stats.mu.size())
        throw Error("noise length " + std::to_string(noise.size()) + " does not match " +
                    std::to_string(stats.mu.size()) + " latent variables");
    std::vector<double> z(stats.mu.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = stats.mu[i] + std::exp(0.5 * stats.log_var[i]) * noise[i];
    return z;
}

struct ElboBreakdown {
    double loss = 0.0;
    double reconstruction = 0.0;  // mean per image of the summed squared error
    double kl = 0.0;              // mean per image of the summed divergence
};

/// Evaluates the objective on a batch without training. The noise tensor must
/// be {batch size, nLatent}.
inline ElboBreakdown elbo_loss(const VaeModel& m, const Dataset& batch, const Tensor& noise) {
    if (batch.empty()) throw Error("elbo_loss: empty batch");
    if (noise.shape != std::vector<std::size_t>{batch.size(), m.config.n_latent})
        throw Error("elbo_loss: noise shape " + noise.shape_str() + " does not match batch");
    VaeGraph g = build_elbo(m, detail::pixels_batch(batch, 0, batch.size()), noise);
    ElboBreakdown b{g.loss->value[0], g.recon_term->value[0], g.kl_term->value[0]};
    if (!std::isfinite(b.loss))
        throw NumericError("non-finite objective (reconstruction=" +
                           std::to_string(b.reconstruction) + ", kl=" + std::to_string(b.kl) + ")");
    return b;
}

/// Mean over images of the per-pixel squared error between the input and the
/// deterministic reconstruction decoded from the posterior mean.
inline double reconstruction_mse(const VaeModel& m, const Dataset& images, std::size_t chunk = 256) {
    if (images.empty()) throw Error("reconstruction_mse: empty dataset");
    double total = 0.0;
    for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
        const std::size_t end = std::min(images.size(), begin + chunk);
        NodePtr batch = constant(detail::pixels_batch(images, begin, end));
        auto [mu, log_var] = build_encoder(m, batch);
        (void)log_var;
        NodePtr recon = build_decoder(m, mu);
        for (std::size_t i = 0; i < recon->value.size(); ++i) {
            const double d = recon->value.data[i] - batch->value.data[i];
            total += d * d;
        }
    }
    return total / static_cast<double>(images.size() * kImagePixels);
}

struct TrainResult {
    VaeModel model;
    std::vector<double> trace;  // mean per-image loss per epoch
};

/// Trains a fresh model on the given images. One noise sample per image per
/// step, shuffled batches, Adam updates. Deterministic in config.seed.
inline TrainResult train(const VaeConfig& config, const Dataset& train_set) {
    if (train_set.empty()) throw Error("train: empty training set");
    TrainResult result{init_vae(config), {}};
    VaeModel& m = result.model;
    const std::vector<NodePtr> params = m.params();
    AdamState adam = make_adam(params, config.learning_rate);

    Rng shuffle_rng(derive_seed(config.seed, 1));
    Rng noise_rng(derive_seed(config.seed, 2));
    const std::size_t n = train_set.size();
    const std::size_t bs = std::max<std::size_t>(1, config.batch_size);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < n; begin += bs) {
            const std::size_t end = std::min(n, begin + bs);
            const std::size_t b = end - begin;
            Tensor noise({b, config.n_latent});
            for (double& v : noise.data) v = noise_rng.normal();
            VaeGraph g = build_elbo(m, detail::pixels_batch(train_set, begin, end, &order),
                                    std::move(noise));
            const double loss = g.loss->value[0];
            if (!std::isfinite(loss))
                throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) +
                                   " (reconstruction=" + std::to_string(g.recon_term->value[0]) +
                                   ", kl=" + std::to_string(g.kl_term->value[0]) + ")");
            backward(g.loss);
            adam_step(adam, params);
            epoch_loss += loss * static_cast<double>(b);
        }
        result.trace.push_back(epoch_loss / static_cast<double>(n));
    }
    return result;
}

}  // namespace bvod
