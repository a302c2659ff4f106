#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <vector>

#include "bvod/imagegen.hpp"

using namespace bvod;
using Catch::Matchers::WithinAbs;

namespace {

const FactorLabels kQuietDay = {
    {"time-of-day", "day"}, {"traffic", "low"}, {"pedestrian", "none"}};
const FactorLabels kQuietNight = {
    {"time-of-day", "night"}, {"traffic", "low"}, {"pedestrian", "none"}};

// Pixels not covered by any placement, i.e. pure background.
std::vector<double> background_pixels(const RenderedScene& scene) {
    std::vector<bool> covered(kImagePixels, false);
    for (const Placement& p : scene.placements)
        for (std::size_t r = p.row; r < p.row + p.height; ++r)
            for (std::size_t c = p.col; c < p.col + p.width; ++c)
                covered[r * kImageSide + c] = true;
    std::vector<double> out;
    for (std::size_t i = 0; i < kImagePixels; ++i)
        if (!covered[i]) out.push_back(scene.image.pixels.data[i]);
    return out;
}

}  // namespace

TEST_CASE("rendering is deterministic in labels and seed", "[imagegen]") {
    const LabeledImage a = render_image(kQuietDay, 123);
    const LabeledImage b = render_image(kQuietDay, 123);
    REQUIRE(a.pixels.data == b.pixels.data);
    const LabeledImage c = render_image(kQuietDay, 124);
    REQUIRE(a.pixels.data != c.pixels.data);
}

TEST_CASE("images are 32x32 with pixels in the unit interval", "[imagegen]") {
    for (std::uint64_t seed : {0ULL, 7ULL, 991ULL}) {
        const LabeledImage img = render_image(kQuietDay, seed);
        REQUIRE(img.pixels.shape == std::vector<std::size_t>{32, 32});
        for (double v : img.pixels.data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("day and night backgrounds sit at their base intensities", "[imagegen]") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const RenderedScene day = render_scene(kQuietDay, seed);
        for (double v : background_pixels(day)) {
            REQUIRE(v >= 0.75);
            REQUIRE(v <= 0.85);
        }
        const RenderedScene night = render_scene(kQuietNight, seed);
        for (double v : background_pixels(night)) {
            REQUIRE(v >= 0.15);
            REQUIRE(v <= 0.25);
        }
    }
}

TEST_CASE("unknown labels are rejected", "[imagegen]") {
    FactorLabels bad = kQuietDay;
    bad["time-of-day"] = "dusk";
    REQUIRE_THROWS_AS(render_image(bad, 0), ConfigError);
    FactorLabels missing = {{"time-of-day", "day"}, {"traffic", "low"}};
    REQUIRE_THROWS_AS(render_image(missing, 0), ConfigError);
}

TEST_CASE("traffic rectangle counts and sizes follow the label", "[imagegen]") {
    FactorLabels low = kQuietDay;
    FactorLabels high = kQuietDay;
    high["traffic"] = "high";
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const RenderedScene ls = render_scene(low, seed);
        REQUIRE(ls.placements.size() >= 1);
        REQUIRE(ls.placements.size() <= 2);
        const RenderedScene hs = render_scene(high, seed);
        REQUIRE(hs.placements.size() >= 6);
        REQUIRE(hs.placements.size() <= 9);
        for (const Placement& p : hs.placements) {
            REQUIRE(p.intensity == 0.95);
            REQUIRE(p.height >= 4);
            REQUIRE(p.height <= 6);
            REQUIRE(p.width >= 6);
            REQUIRE(p.width <= 8);
            REQUIRE(p.row + p.height <= kImageSide);
            REQUIRE(p.col + p.width <= kImageSide);
        }
    }
}

TEST_CASE("pedestrian blocks are 2x2 at intensity 0.6 when present", "[imagegen]") {
    FactorLabels present = kQuietDay;
    present["pedestrian"] = "present";
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const RenderedScene s = render_scene(present, seed);
        std::size_t blocks = 0;
        for (const Placement& p : s.placements) {
            if (p.intensity != 0.6) continue;
            ++blocks;
            REQUIRE(p.height == 2);
            REQUIRE(p.width == 2);
        }
        REQUIRE(blocks >= 2);
        REQUIRE(blocks <= 4);

        const RenderedScene none = render_scene(kQuietDay, seed);
        for (const Placement& p : none.placements) REQUIRE(p.intensity != 0.6);
    }
}

TEST_CASE("the last stamp wins where objects overlap", "[imagegen]") {
    FactorLabels busy = {{"time-of-day", "day"}, {"traffic", "high"}, {"pedestrian", "present"}};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const RenderedScene s = render_scene(busy, seed);
        // Replay the placement log over the rendered image: every cell of the
        // final placement covering it must carry that placement's intensity.
        for (std::size_t i = 0; i < kImagePixels; ++i) {
            const std::size_t r = i / kImageSide, c = i % kImageSide;
            double expected = -1.0;
            for (const Placement& p : s.placements)
                if (r >= p.row && r < p.row + p.height && c >= p.col && c < p.col + p.width)
                    expected = p.intensity;
            if (expected >= 0.0) REQUIRE(s.image.pixels.data[i] == expected);
        }
    }
}

TEST_CASE("partition splits have the requested sizes", "[imagegen]") {
    PartitionSpec spec;
    spec.n_train = 40;
    spec.n_validation = 10;
    spec.n_test1 = 6;
    spec.n_test2 = 8;
    spec.seed = 5;
    const Partition p = generate_partition(spec);
    REQUIRE(p.train.size() == 40);
    REQUIRE(p.validation.size() == 10);
    REQUIRE(p.test1.size() == 6);
    REQUIRE(p.test2.size() == 8);
}

TEST_CASE("train and test1 carry only the in-distribution value", "[imagegen]") {
    PartitionSpec spec;
    spec.n_train = 60;
    spec.n_validation = 20;
    spec.n_test1 = 20;
    spec.n_test2 = 20;
    spec.seed = 6;
    const Partition p = generate_partition(spec);
    for (const LabeledImage& img : p.train) REQUIRE(img.labels.at("time-of-day") == "day");
    for (const LabeledImage& img : p.test1) REQUIRE(img.labels.at("time-of-day") == "day");
    for (const LabeledImage& img : p.test2) REQUIRE(img.labels.at("time-of-day") == "night");
}

TEST_CASE("validation mixes both values of the monitored factor", "[imagegen]") {
    PartitionSpec spec;
    spec.n_train = 10;
    spec.n_validation = 30;
    spec.n_test1 = 5;
    spec.n_test2 = 5;
    spec.seed = 7;
    const Partition p = generate_partition(spec);
    std::size_t day = 0, night = 0;
    for (const LabeledImage& img : p.validation)
        (img.labels.at("time-of-day") == "day" ? day : night)++;
    REQUIRE(day == 15);
    REQUIRE(night == 15);
}

TEST_CASE("non-monitored factors vary across a large train split", "[imagegen]") {
    PartitionSpec spec;
    spec.n_train = 200;
    spec.n_validation = 4;
    spec.n_test1 = 4;
    spec.n_test2 = 4;
    spec.seed = 8;
    const Partition p = generate_partition(spec);
    std::set<std::string> traffic, pedestrian;
    for (const LabeledImage& img : p.train) {
        traffic.insert(img.labels.at("traffic"));
        pedestrian.insert(img.labels.at("pedestrian"));
    }
    REQUIRE(traffic.size() == 2);
    REQUIRE(pedestrian.size() == 2);
}

TEST_CASE("pinned factors hold in train, validation and test1, flip in test2",
          "[imagegen]") {
    PartitionSpec spec;
    spec.factor = "traffic";
    spec.in_dist_value = "low";
    spec.pinned = {{"pedestrian", "none"}};
    spec.n_train = 30;
    spec.n_validation = 12;
    spec.n_test1 = 10;
    spec.n_test2 = 10;
    spec.seed = 9;
    const Partition p = generate_partition(spec);
    for (const LabeledImage& img : p.train) {
        REQUIRE(img.labels.at("traffic") == "low");
        REQUIRE(img.labels.at("pedestrian") == "none");
    }
    for (const LabeledImage& img : p.validation)
        REQUIRE(img.labels.at("pedestrian") == "none");
    for (const LabeledImage& img : p.test1) {
        REQUIRE(img.labels.at("traffic") == "low");
        REQUIRE(img.labels.at("pedestrian") == "none");
    }
    for (const LabeledImage& img : p.test2) {
        REQUIRE(img.labels.at("traffic") == "high");
        REQUIRE(img.labels.at("pedestrian") == "present");
    }
}

TEST_CASE("scene ids are unique and test ids never reuse train ids", "[imagegen]") {
    PartitionSpec spec;
    spec.n_train = 25;
    spec.n_validation = 10;
    spec.n_test1 = 5;
    spec.n_test2 = 5;
    spec.seed = 10;
    const Partition p = generate_partition(spec);
    std::set<std::int64_t> all;
    for (const Dataset* set : {&p.train, &p.validation, &p.test1, &p.test2})
        for (const LabeledImage& img : *set) REQUIRE(all.insert(img.scene_id).second);
    REQUIRE(all.size() == 45);

    std::set<std::int64_t> train_ids;
    for (const LabeledImage& img : p.train) train_ids.insert(img.scene_id);
    for (const Dataset* set : {&p.test1, &p.test2})
        for (const LabeledImage& img : *set) REQUIRE_FALSE(train_ids.count(img.scene_id));
}

TEST_CASE("identical specs generate identical partitions", "[imagegen]") {
    PartitionSpec spec;
    spec.n_train = 15;
    spec.n_validation = 6;
    spec.n_test1 = 4;
    spec.n_test2 = 4;
    spec.seed = 11;
    const Partition a = generate_partition(spec);
    const Partition b = generate_partition(spec);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        REQUIRE(a.train[i].pixels.data == b.train[i].pixels.data);
        REQUIRE(a.train[i].labels == b.train[i].labels);
        REQUIRE(a.train[i].scene_id == b.train[i].scene_id);
    }
    for (std::size_t i = 0; i < a.test2.size(); ++i)
        REQUIRE(a.test2[i].pixels.data == b.test2[i].pixels.data);
}

TEST_CASE("invalid partition specs are rejected", "[imagegen]") {
    PartitionSpec spec;
    spec.in_dist_value = "noon";
    REQUIRE_THROWS_AS(generate_partition(spec), ConfigError);

    PartitionSpec pin_clash;
    pin_clash.pinned = {{"time-of-day", "day"}};
    REQUIRE_THROWS_AS(generate_partition(pin_clash), ConfigError);

    PartitionSpec bad_pin;
    bad_pin.pinned = {{"traffic", "medium"}};
    REQUIRE_THROWS_AS(generate_partition(bad_pin), ConfigError);
}

TEST_CASE("empty split counts are allowed and left empty", "[imagegen]") {
    PartitionSpec spec;
    spec.n_train = 5;
    spec.n_validation = 2;
    spec.n_test1 = 2;
    spec.n_test2 = 0;
    spec.seed = 12;
    const Partition p = generate_partition(spec);
    REQUIRE(p.test2.empty());
    REQUIRE(p.train.size() == 5);
}

TEST_CASE("factors stay independent over many generated images", "[imagegen]") {
    // Empirical correlation between any two distinct factor indicators
    // should be near zero when labels are drawn independently.
    Rng rng(99);
    const int n = 2000;
    std::vector<std::array<double, 3>> draws;
    draws.reserve(n);
    for (int i = 0; i < n; ++i) {
        const FactorLabels labels = random_labels(rng);
        draws.push_back({labels.at("time-of-day") == "day" ? 1.0 : 0.0,
                         labels.at("traffic") == "high" ? 1.0 : 0.0,
                         labels.at("pedestrian") == "present" ? 1.0 : 0.0});
    }
    for (int a = 0; a < 3; ++a) {
        for (int b = a + 1; b < 3; ++b) {
            double ma = 0, mb = 0;
            for (const auto& d : draws) {
                ma += d[a];
                mb += d[b];
            }
            ma /= n;
            mb /= n;
            double cov = 0, va = 0, vb = 0;
            for (const auto& d : draws) {
                cov += (d[a] - ma) * (d[b] - mb);
                va += (d[a] - ma) * (d[a] - ma);
                vb += (d[b] - mb) * (d[b] - mb);
            }
            REQUIRE(std::abs(cov / std::sqrt(va * vb)) < 0.1);
        }
    }
}
