#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "bvod/error.hpp"
#include "bvod/imagegen.hpp"
#include "bvod/vae.hpp"

namespace bvod {

/// Per-latent divergence of the posterior from N(0, 1):
/// KL_n = (mu_n^2 + sigma_n^2 - log sigma_n^2 - 1) / 2.
inline std::vector<double> kl_per_latent(const LatentStats& stats) {
    std::vector<double> out(stats.mu.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double var = std::exp(stats.log_var[i]);
        out[i] = 0.5 * (stats.mu[i] * stats.mu[i] + var - stats.log_var[i] - 1.0);
    }
    return out;
}

/// Elementwise mean of kl_per_latent over a dataset.
inline std::vector<double> average_kl(const VaeModel& m, const Dataset& images) {
    if (images.empty()) throw Error("average_kl: empty dataset");
    std::vector<double> acc(m.config.n_latent, 0.0);
    for (const LatentStats& s : encode_all(m, images)) {
        const std::vector<double> kl = kl_per_latent(s);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += kl[i];
    }
    for (double& v : acc) v /= static_cast<double>(images.size());
    return acc;
}

/// Per-image divergence of one latent over a dataset, in dataset order.
inline std::vector<double> latent_kl_values(const VaeModel& m, const Dataset& images,
                                            std::size_t latent) {
    std::vector<double> out;
    out.reserve(images.size());
    for (const LatentStats& s : encode_all(m, images)) out.push_back(kl_per_latent(s)[latent]);
    return out;
}

/// Elementwise absolute difference between two per-latent averages.
inline std::vector<double> kl_diff(const std::vector<double>& train_avg,
                                   const std::vector<double>& validation_avg) {
    if (train_avg.size() != validation_avg.size())
        throw Error("kl_diff: length mismatch " + std::to_string(train_avg.size()) + " vs " +
                    std::to_string(validation_avg.size()));
    std::vector<double> out(train_avg.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::abs(train_avg[i] - validation_avg[i]);
    return out;
}

/// Index of the largest difference; ties go to the lowest index.
inline std::size_t select_informative_latent(const std::vector<double>& diffs) {
    if (diffs.empty()) throw Error("select_informative_latent: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < diffs.size(); ++i)
        if (diffs[i] > diffs[best]) best = i;
    return best;
}

/// Nearest-rank percentile: the sorted value at index ceil(p/100 * N) - 1.
inline double calibrate_threshold(std::vector<double> values, int percentile) {
    if (values.empty()) throw Error("calibrate_threshold: empty input");
    if (percentile < 1 || percentile > 100)
        throw Error("calibrate_threshold: percentile " + std::to_string(percentile) +
                    " outside [1, 100]");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const std::size_t rank = (static_cast<std::size_t>(percentile) * n + 99) / 100;  // ceil
    return values[rank - 1];
}

struct SweepGrid {
    std::vector<double> betas;
    std::vector<std::size_t> n_latents;
};

/// Outcome of one grid cell. A failed cell keeps its error text and a null
/// model; metrics are NaN.
struct SweepRecord {
    double beta = 0.0;
    std::size_t n_latent = 0;
    std::uint64_t seed = 0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double val_mse = std::numeric_limits<double>::quiet_NaN();
    double avg_kl = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> trace;  // per-epoch training loss
    std::shared_ptr<const VaeModel> model;
    std::string error;

    bool ok() const { return model != nullptr; }
};

/// Trains one model per (beta, nLatent) cell and evaluates it on the
/// validation split. Cell seeds derive from (base seed, cell index), so the
/// result table does not depend on the worker count. Failed cells are
/// recorded and the sweep continues.
inline std::vector<SweepRecord> run_sweep(const SweepGrid& grid, const Partition& data,
                                          const VaeConfig& base, std::size_t jobs = 1) {
    if (grid.betas.empty() || grid.n_latents.empty())
        throw ConfigError("sweep grid must list at least one beta and one nLatent");
    const std::size_t n_cells = grid.betas.size() * grid.n_latents.size();
    std::vector<SweepRecord> records(n_cells);

    auto run_cell = [&](std::size_t cell) {
        SweepRecord& rec = records[cell];
        rec.beta = grid.betas[cell / grid.n_latents.size()];
        rec.n_latent = grid.n_latents[cell % grid.n_latents.size()];
        rec.seed = derive_seed(base.seed, cell);
        VaeConfig cfg = base;
        cfg.beta = rec.beta;
        cfg.n_latent = rec.n_latent;
        cfg.seed = rec.seed;
        try {
            TrainResult res = train(cfg, data.train);
            rec.trace = res.trace;
            if (!res.trace.empty()) rec.final_loss = res.trace.back();
            rec.val_mse = reconstruction_mse(res.model, data.validation);
            const std::vector<double> avg = average_kl(res.model, data.validation);
            rec.avg_kl = 0.0;
            for (double v : avg) rec.avg_kl += v;
            rec.avg_kl /= static_cast<double>(avg.size());
            rec.model = std::make_shared<VaeModel>(std::move(res.model));
        } catch (const std::exception& e) {
            rec.error = e.what();
            rec.model.reset();
        }
    };

    if (jobs <= 1) {
        for (std::size_t cell = 0; cell < n_cells; ++cell) run_cell(cell);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const std::size_t workers = std::min(jobs, n_cells);
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t cell = next.fetch_add(1); cell < n_cells;
                     cell = next.fetch_add(1))
                    run_cell(cell);
            });
        }
        for (std::thread& t : pool) t.join();
    }
    return records;
}

/// Orders the successful records by a rank composite: position in the
/// descending validation-MSE order weighted by w_mse plus position in the
/// ascending average-KL order weighted by w_kl, lower total first. Ties fall
/// back to (beta, nLatent). Returns indices into the input.
inline std::vector<std::size_t> rank_models(const std::vector<SweepRecord>& records,
                                            double w_mse = 1.0, double w_kl = 1.0) {
    if (w_mse < 0.0 || w_kl < 0.0 || (w_mse == 0.0 && w_kl == 0.0))
        throw Error("rank_models: weights must be non-negative and not both zero");
    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].ok()) ok.push_back(i);
    if (ok.empty()) throw Error("rank_models: no successful records");

    auto positions = [&](auto less) {
        std::vector<std::size_t> order = ok;
        std::sort(order.begin(), order.end(), less);
        std::vector<std::size_t> pos(records.size(), 0);
        for (std::size_t p = 0; p < order.size(); ++p) pos[order[p]] = p;
        return pos;
    };
    auto cell_key = [&](std::size_t i) {
        return std::make_pair(records[i].beta, records[i].n_latent);
    };
    const std::vector<std::size_t> mse_pos = positions([&](std::size_t a, std::size_t b) {
        if (records[a].val_mse != records[b].val_mse)
            return records[a].val_mse > records[b].val_mse;  // larger error first
        return cell_key(a) < cell_key(b);
    });
    const std::vector<std::size_t> kl_pos = positions([&](std::size_t a, std::size_t b) {
        if (records[a].avg_kl != records[b].avg_kl)
            return records[a].avg_kl < records[b].avg_kl;  // smaller divergence first
        return cell_key(a) < cell_key(b);
    });

    std::sort(ok.begin(), ok.end(), [&](std::size_t a, std::size_t b) {
        const double sa = w_mse * static_cast<double>(mse_pos[a]) +
                          w_kl * static_cast<double>(kl_pos[a]);
        const double sb = w_mse * static_cast<double>(mse_pos[b]) +
                          w_kl * static_cast<double>(kl_pos[b]);
        if (sa != sb) return sa < sb;
        return cell_key(a) < cell_key(b);
    });
    return ok;
}

/// A calibrated single-latent detector. The model is shared, never copied.
struct DetectorSpec {
    std::string factor;
    std::size_t latent_index = 0;
    double tau = 0.0;
    int percentile = 75;
    double beta = 0.0;        // recorded for audit
    std::size_t n_latent = 0; // recorded for audit
    std::shared_ptr<const VaeModel> model;
};

/// Everything produced while building a detector, kept for reporting.
struct SelectionReport {
    DetectorSpec spec;
    std::size_t record_index = 0;       // winning entry in the sweep records
    std::vector<double> diffs;          // per-latent averaged divergence difference
    std::vector<double> train_kl;       // per-image divergence of the chosen latent
    std::vector<double> validation_kl;
    double tau_percentile = 0.0;        // plain nearest-rank value before separation
};

/// Builds a detector from sweep results: picks the top-ranked model, chooses
/// the latent with the largest train/validation divergence difference, and
/// calibrates the threshold at the given percentile of the training values.
///
/// When refine_separation is set and some validation images score above every
/// training image, the threshold is raised to the midpoint between the
/// highest training value and the lowest such validation value. The
/// percentile value acts as a floor; with no separated validation scores the
/// plain percentile is kept.
inline SelectionReport select_detector(const std::vector<SweepRecord>& records,
                                       const Dataset& train, const Dataset& validation,
                                       const std::string& factor, int percentile,
                                       double w_mse = 1.0, double w_kl = 1.0,
                                       bool refine_separation = true) {
    const std::vector<std::size_t> ranked = rank_models(records, w_mse, w_kl);
    const SweepRecord& best = records[ranked.front()];
    const VaeModel& model = *best.model;

    SelectionReport rep;
    rep.record_index = ranked.front();
    rep.diffs = kl_diff(average_kl(model, train), average_kl(model, validation));
    const std::size_t latent = select_informative_latent(rep.diffs);
    rep.train_kl = latent_kl_values(model, train, latent);
    rep.validation_kl = latent_kl_values(model, validation, latent);

    rep.tau_percentile = calibrate_threshold(rep.train_kl, percentile);
    double tau = rep.tau_percentile;
    if (refine_separation) {
        const double train_max = *std::max_element(rep.train_kl.begin(), rep.train_kl.end());
        double above_min = std::numeric_limits<double>::infinity();
        for (double v : rep.validation_kl)
            if (v > train_max) above_min = std::min(above_min, v);
        if (std::isfinite(above_min)) tau = 0.5 * (train_max + above_min);
    }

    rep.spec.factor = factor;
    rep.spec.latent_index = latent;
    rep.spec.tau = tau;
    rep.spec.percentile = percentile;
    rep.spec.beta = best.beta;
    rep.spec.n_latent = best.n_latent;
    rep.spec.model = best.model;
    return rep;
}

}  // namespace bvod
