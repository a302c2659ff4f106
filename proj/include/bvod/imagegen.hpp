#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bvod/error.hpp"
#include "bvod/factors.hpp"
#include "bvod/rng.hpp"
#include "bvod/tensor.hpp"

namespace bvod {

constexpr std::size_t kImageSide = 32;
constexpr std::size_t kImagePixels = kImageSide * kImageSide;

/// A rendered scene image with its factor labels.
struct LabeledImage {
    Tensor pixels;  // {32, 32}, values in [0, 1]
    FactorLabels labels;
    std::int64_t scene_id = 0;
};

using Dataset = std::vector<LabeledImage>;

/// One object stamped onto the image, recorded in render order.
struct Placement {
    std::size_t row = 0, col = 0, height = 0, width = 0;
    double intensity = 0.0;
};

struct RenderedScene {
    LabeledImage image;
    std::vector<Placement> placements;
};

namespace detail {

inline void stamp(Tensor& px, const Placement& p) {
    for (std::size_t r = p.row; r < p.row + p.height; ++r)
        for (std::size_t c = p.col; c < p.col + p.width; ++c) px.at(r, c) = p.intensity;
}

}  // namespace detail

/// Renders one scene. The draw stream is consumed in a fixed order
/// (background noise, traffic rectangles, pedestrian blocks), so a
/// (labels, seed) pair always produces the same pixels.
///
/// Rules: background 0.8 (day) or 0.2 (night) plus uniform noise in
/// [-0.05, 0.05], clamped to [0, 1]. Traffic stamps 4..6 by 6..8 rectangles
/// of intensity 0.95: 1-2 for low, 6-9 for high. Pedestrians stamp 2x2
/// blocks of intensity 0.6: none for "none", 2-4 for "present". Objects may
/// overlap; later stamps win.
inline RenderedScene render_scene(const FactorLabels& labels, std::uint64_t scene_seed) {
    validate_labels(labels);
    Rng rng(scene_seed);

    RenderedScene out;
    out.image.labels = labels;
    out.image.pixels = Tensor({kImageSide, kImageSide});
    Tensor& px = out.image.pixels;

    const double background = labels.at("time-of-day") == "day" ? 0.8 : 0.2;
    for (std::size_t i = 0; i < kImagePixels; ++i) {
        double v = background + rng.uniform(-0.05, 0.05);
        px.data[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }

    const bool high_traffic = labels.at("traffic") == "high";
    const std::size_t n_rects =
        high_traffic ? rng.uniform_int(6, 9) : rng.uniform_int(1, 2);
    for (std::size_t i = 0; i < n_rects; ++i) {
        Placement p;
        p.height = rng.uniform_int(4, 6);
        p.width = rng.uniform_int(6, 8);
        p.row = rng.uniform_int(0, kImageSide - p.height);
        p.col = rng.uniform_int(0, kImageSide - p.width);
        p.intensity = 0.95;
        detail::stamp(px, p);
        out.placements.push_back(p);
    }

    if (labels.at("pedestrian") == "present") {
        const std::size_t n_blocks = rng.uniform_int(2, 4);
        for (std::size_t i = 0; i < n_blocks; ++i) {
            Placement p;
            p.height = 2;
            p.width = 2;
            p.row = rng.uniform_int(0, kImageSide - 2);
            p.col = rng.uniform_int(0, kImageSide - 2);
            p.intensity = 0.6;
            detail::stamp(px, p);
            out.placements.push_back(p);
        }
    }
    return out;
}

inline LabeledImage render_image(const FactorLabels& labels, std::uint64_t scene_seed) {
    return render_scene(labels, scene_seed).image;
}

/// Describes one factor partition: which factor is monitored, which of its
/// values counts as in-distribution, optional additional factors pinned in
/// the training material, and the split sizes.
struct PartitionSpec {
    std::string factor = "time-of-day";
    std::string in_dist_value = "day";
    std::map<std::string, std::string> pinned;  // extra factors fixed in train/test1
    std::size_t n_train = 1000;
    std::size_t n_validation = 200;
    std::size_t n_test1 = 100;
    std::size_t n_test2 = 100;
    std::uint64_t seed = 0;
};

struct Partition {
    Dataset train, validation, test1, test2;
};

namespace detail {

enum class Split { train, validation, test1, test2 };

inline FactorLabels split_labels(const PartitionSpec& spec, Split split, std::size_t index,
                                 Rng& rng) {
    FactorLabels labels = random_labels(rng);
    switch (split) {
        case Split::train:
        case Split::test1:
            labels[spec.factor] = spec.in_dist_value;
            for (const auto& [f, v] : spec.pinned) labels[f] = v;
            break;
        case Split::validation:
            // Alternate so both values are present for any split size. Pins
            // stay applied: validation must differ from train only in the
            // monitored factor.
            labels[spec.factor] = index % 2 == 0
                                      ? spec.in_dist_value
                                      : complement_value(spec.factor, spec.in_dist_value);
            for (const auto& [f, v] : spec.pinned) labels[f] = v;
            break;
        case Split::test2:
            labels[spec.factor] = complement_value(spec.factor, spec.in_dist_value);
            for (const auto& [f, v] : spec.pinned) labels[f] = complement_value(f, v);
            break;
    }
    return labels;
}

}  // namespace detail

/// Builds the four splits. Scene ids are assigned sequentially across splits,
/// so the test sets never reuse a train or validation scene. A given
/// (spec, seed) always yields identical datasets.
inline Partition generate_partition(const PartitionSpec& spec) {
    if (!is_factor_value(spec.factor, spec.in_dist_value))
        throw ConfigError("unknown value \"" + spec.in_dist_value + "\" for factor \"" +
                          spec.factor + "\"");
    for (const auto& [f, v] : spec.pinned) {
        if (f == spec.factor)
            throw ConfigError("factor \"" + f + "\" cannot be both monitored and pinned");
        if (!is_factor_value(f, v))
            throw ConfigError("unknown value \"" + v + "\" for pinned factor \"" + f + "\"");
    }

    Rng label_rng(derive_seed(spec.seed, 0));
    std::int64_t next_scene = 0;
    Partition out;

    auto fill = [&](Dataset& set, detail::Split split, std::size_t count) {
        set.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const FactorLabels labels = detail::split_labels(spec, split, i, label_rng);
            const std::int64_t id = next_scene++;
            LabeledImage img =
                render_image(labels, derive_seed(spec.seed, 1 + static_cast<std::uint64_t>(id)));
            img.scene_id = id;
            set.push_back(std::move(img));
        }
    };
    fill(out.train, detail::Split::train, spec.n_train);
    fill(out.validation, detail::Split::validation, spec.n_validation);
    fill(out.test1, detail::Split::test1, spec.n_test1);
    fill(out.test2, detail::Split::test2, spec.n_test2);
    return out;
}

}  // namespace bvod
