// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <random>

#include "htgq/tensor.hpp"

using namespace htgq;

namespace {

Tensor2D random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor2D t(rows, cols);
    for (double& v : t.data()) v = g(rng);
    return t;
}

// Independent reference: plain three-nested-loop product.
Tensor2D matmul_oracle(const Tensor2D& a, const Tensor2D& b) {
    Tensor2D out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

Tensor2D identity(std::size_t n) {
    Tensor2D out(n, n);
    for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
    return out;
}

}  // namespace

TEST_CASE("construction validates shape and finiteness") {
    CHECK_THROWS_AS(Tensor2D(2, 2, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor2D(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}),
                    std::invalid_argument);
    CHECK_THROWS_AS(Tensor2D(1, 1, {std::numeric_limits<double>::infinity()}),
                    std::invalid_argument);
    const Tensor2D t = Tensor2D::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 2);
    CHECK(t.at(1, 0) == 3.0);
}

TEST_CASE("matmul identity is exact on both sides") {
    std::mt19937_64 rng(42);
    const Tensor2D m = random_tensor(rng, 4, 4);
    const Tensor2D i = identity(4);
    const Tensor2D left = matmul(i, m);
    const Tensor2D right = matmul(m, i);
    for (std::size_t k = 0; k < m.size(); ++k) {
        CHECK(left.data()[k] == m.data()[k]);
        CHECK(right.data()[k] == m.data()[k]);
    }
}

TEST_CASE("matmul hand example") {
    const Tensor2D a = Tensor2D::from_rows({{1, 2}, {3, 4}});
    const Tensor2D b = Tensor2D::from_rows({{1}, {1}});
    const Tensor2D y = matmul(a, b);
    CHECK(y.rows() == 2);
    CHECK(y.cols() == 1);
    CHECK(y.at(0, 0) == 3.0);
    CHECK(y.at(1, 0) == 7.0);
}

TEST_CASE("matmul matches triple-loop oracle exactly") {
    std::mt19937_64 rng(7);
    const Tensor2D a = random_tensor(rng, 5, 7);
    const Tensor2D b = random_tensor(rng, 7, 3);
    const Tensor2D got = matmul(a, b);
    const Tensor2D want = matmul_oracle(a, b);
    for (std::size_t k = 0; k < got.size(); ++k) {
        CHECK(got.data()[k] == want.data()[k]);
    }
}

TEST_CASE("matmul rejects shape mismatch") {
    CHECK_THROWS_AS(matmul(Tensor2D(2, 3), Tensor2D(2, 3)), std::invalid_argument);
}

TEST_CASE("vec_matmul matches a 1-row matmul") {
    std::mt19937_64 rng(11);
    const Tensor2D m = random_tensor(rng, 6, 4);
    ChannelVector v(6);
    std::normal_distribution<double> g;
    for (double& x : v) x = g(rng);
    const ChannelVector got = vec_matmul(v, m);
    const Tensor2D want = matmul(Tensor2D(1, 6, v), m);
    for (std::size_t j = 0; j < got.size(); ++j) CHECK(got[j] == want.at(0, j));
    CHECK_THROWS_AS(vec_matmul(ChannelVector(5), m), std::invalid_argument);
}

TEST_CASE("col_min_max hand examples") {
    const Tensor2D t = Tensor2D::from_rows({{1, -2}, {3, 4}});
    const auto [mins, maxs] = col_min_max(t);
    CHECK(mins == ChannelVector{1, -2});
    CHECK(maxs == ChannelVector{3, 4});

    const Tensor2D constant = Tensor2D::from_rows({{5.5}, {5.5}, {5.5}});
    const auto [cmin, cmax] = col_min_max(constant);
    CHECK(cmin[0] == 5.5);
    CHECK(cmax[0] == 5.5);

    CHECK_THROWS_AS(col_min_max(Tensor2D()), std::invalid_argument);
}

TEST_CASE("col_min_max matches per-column scan oracle and bounds all entries") {
    std::mt19937_64 rng(123);
    const Tensor2D t = random_tensor(rng, 100, 8);
    const auto [mins, maxs] = col_min_max(t);
    for (std::size_t c = 0; c < t.cols(); ++c) {
        double lo = t.at(0, c), hi = t.at(0, c);
        for (std::size_t r = 0; r < t.rows(); ++r) {
            lo = std::min(lo, t.at(r, c));
            hi = std::max(hi, t.at(r, c));
            CHECK(t.at(r, c) >= mins[c]);
            CHECK(t.at(r, c) <= maxs[c]);
        }
        CHECK(mins[c] == lo);
        CHECK(maxs[c] == hi);
    }
}

TEST_CASE("col_abs_max hand examples and extrema identity") {
    const Tensor2D t = Tensor2D::from_rows({{-5}, {3}});
    CHECK(col_abs_max(t)[0] == 5.0);
    const Tensor2D zeros(4, 1);
    CHECK(col_abs_max(zeros)[0] == 0.0);

    std::mt19937_64 rng(5);
    const Tensor2D r = random_tensor(rng, 64, 16);
    const ChannelVector am = col_abs_max(r);
    const auto [mins, maxs] = col_min_max(r);
    for (std::size_t c = 0; c < r.cols(); ++c) {
        double want = 0.0;
        for (std::size_t i = 0; i < r.rows(); ++i) want = std::max(want, std::fabs(r.at(i, c)));
        CHECK(am[c] == want);
        CHECK(am[c] == std::max(std::fabs(mins[c]), std::fabs(maxs[c])));
    }
}
