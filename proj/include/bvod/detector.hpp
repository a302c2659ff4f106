#pragma once

#include <chrono>
#include <set>
#include <string>
#include <vector>

#include "bvod/error.hpp"
#include "bvod/factors.hpp"
#include "bvod/selection.hpp"
#include "bvod/vae.hpp"

namespace bvod {

/// Divergence of one image along the detector's latent.
inline double detector_score(const DetectorSpec& spec, const Tensor& image) {
    if (!spec.model) throw ConfigError("detector for '" + spec.factor + "' has no model");
    if (spec.latent_index >= spec.model->config.n_latent)
        throw ConfigError("detector for '" + spec.factor + "': latent index " +
                          std::to_string(spec.latent_index) + " outside model width " +
                          std::to_string(spec.model->config.n_latent));
    return kl_per_latent(encode(*spec.model, image))[spec.latent_index];
}

/// Flags an image as out-of-distribution when its score strictly exceeds the
/// threshold. A score equal to tau stays in-distribution.
inline bool detect(const DetectorSpec& spec, const Tensor& image) {
    return detector_score(spec, image) > spec.tau;
}

/// Verdict of one detector on one image. A detector that throws reports its
/// message here instead of aborting the chain.
struct FactorResult {
    std::string factor;
    double score = 0.0;
    bool out_of_distribution = false;
    std::string error;

    bool ok() const { return error.empty(); }
};

struct DetectionResult {
    std::vector<FactorResult> factors;
    std::int64_t duration_us = 0;

    bool any_out_of_distribution() const {
        for (const FactorResult& f : factors)
            if (f.ok() && f.out_of_distribution) return true;
        return false;
    }
};

/// Runs several single-factor detectors over the same stream of images.
class DetectorChain {
public:
    explicit DetectorChain(std::vector<DetectorSpec> specs) : specs_(std::move(specs)) {
        if (specs_.empty()) throw ConfigError("detector chain needs at least one detector");
        std::set<std::string> seen;
        for (const DetectorSpec& s : specs_) {
            factor_def(s.factor);  // rejects unknown factor names
            if (!seen.insert(s.factor).second)
                throw ConfigError("duplicate detector for factor '" + s.factor + "'");
            if (!s.model)
                throw ConfigError("detector for '" + s.factor + "' has no model");
            if (s.latent_index >= s.model->config.n_latent)
                throw ConfigError("detector for '" + s.factor + "': latent index " +
                                  std::to_string(s.latent_index) + " outside model width " +
                                  std::to_string(s.model->config.n_latent));
        }
    }

    const std::vector<DetectorSpec>& specs() const { return specs_; }

    /// Scores one image with every detector. Failures are isolated per
    /// factor: one broken detector does not silence the others.
    DetectionResult run(const Tensor& image) const {
        const auto start = std::chrono::steady_clock::now();
        DetectionResult result;
        result.factors.reserve(specs_.size());
        for (const DetectorSpec& spec : specs_) {
            FactorResult fr;
            fr.factor = spec.factor;
            try {
                fr.score = detector_score(spec, image);
                fr.out_of_distribution = fr.score > spec.tau;
            } catch (const std::exception& e) {
                fr.error = e.what();
            }
            result.factors.push_back(std::move(fr));
        }
        result.duration_us = std::chrono::duration_cast<std::chrono::microseconds>(
                                 std::chrono::steady_clock::now() - start)
                                 .count();
        return result;
    }

    std::vector<DetectionResult> run_all(const Dataset& images) const {
        std::vector<DetectionResult> out;
        out.reserve(images.size());
        for (const LabeledImage& img : images) out.push_back(run(img.pixels));
        return out;
    }

private:
    std::vector<DetectorSpec> specs_;
};

}  // namespace bvod
