#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "bvod/tensor.hpp"

using bvod::Tensor;

TEST_CASE("shape constructor zero-fills", "[tensor]") {
    Tensor t({2, 3});
    REQUIRE(t.rank() == 2);
    REQUIRE(t.size() == 6);
    for (double v : t.data) REQUIRE(v == 0.0);
}

TEST_CASE("shape and data must agree", "[tensor]") {
    REQUIRE_NOTHROW(Tensor({2, 2}, {1, 2, 3, 4}));
    REQUIRE_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
    REQUIRE_THROWS_AS(Tensor({3}, {}), std::invalid_argument);
}

TEST_CASE("empty shape means zero elements", "[tensor]") {
    REQUIRE(Tensor::numel_of({}) == 0);
    Tensor t;
    REQUIRE(t.size() == 0);
    REQUIRE(t.rank() == 0);
}

TEST_CASE("scalar and full helpers", "[tensor]") {
    const Tensor s = Tensor::scalar(2.5);
    REQUIRE(s.shape == std::vector<std::size_t>{1});
    REQUIRE(s[0] == 2.5);

    const Tensor f = Tensor::full({2, 2}, -1.5);
    REQUIRE(f.size() == 4);
    for (double v : f.data) REQUIRE(v == -1.5);
}

TEST_CASE("two-dimensional access is row-major", "[tensor]") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t.rows() == 2);
    REQUIRE(t.cols() == 3);
    REQUIRE(t.at(0, 0) == 1.0);
    REQUIRE(t.at(0, 2) == 3.0);
    REQUIRE(t.at(1, 0) == 4.0);
    t.at(1, 2) = 9.0;
    REQUIRE(t.data[5] == 9.0);
}

TEST_CASE("same_shape compares shapes only", "[tensor]") {
    REQUIRE(Tensor({2, 2}).same_shape(Tensor::full({2, 2}, 7.0)));
    REQUIRE_FALSE(Tensor({2, 2}).same_shape(Tensor({4})));
}

TEST_CASE("all_finite flags nan and infinity", "[tensor]") {
    Tensor t({3}, {1.0, 2.0, 3.0});
    REQUIRE(t.all_finite());
    t[1] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_FALSE(t.all_finite());
    t[1] = std::numeric_limits<double>::infinity();
    REQUIRE_FALSE(t.all_finite());
}

TEST_CASE("shape_str formats dimensions", "[tensor]") {
    REQUIRE(Tensor({2, 3}).shape_str() == "[2, 3]");
    REQUIRE(Tensor({5}).shape_str() == "[5]");
    REQUIRE(Tensor().shape_str() == "[]");
}
