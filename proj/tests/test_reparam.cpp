// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "htgq/reparam.hpp"

using namespace htgq;

namespace {

std::mt19937_64 g_rng(314);

Tensor2D random_tensor(std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Tensor2D t(rows, cols);
    for (double& v : t.data()) v = g(g_rng);
    return t;
}

ChannelVector random_vec(std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    ChannelVector v(n);
    for (double& x : v) x = g(g_rng);
    return v;
}

ScaleVector random_scale(std::size_t n) {
    std::uniform_real_distribution<double> u(0.2, 4.0);
    ScaleVector s;
    s.values.resize(n);
    for (double& x : s.values) x = u(g_rng);
    return s;
}

std::vector<GroupShift> random_group_shifts(std::size_t groups, std::size_t n) {
    std::vector<GroupShift> out;
    for (std::size_t g = 0; g < groups; ++g) {
        out.push_back({static_cast<int>(g) + 1, random_vec(n, 2.0)});
    }
    return out;
}

double rel_err(const Tensor2D& a, const Tensor2D& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        num += d * d;
        den += b.data()[i] * b.data()[i];
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("layer_norm normalizes each row") {
    const Tensor2D x = random_tensor(5, 16, 3.0);
    const Tensor2D y = layer_norm(x);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) mean += y.at(r, c);
        mean /= 16.0;
        for (std::size_t c = 0; c < y.cols(); ++c) {
            var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
        }
        var /= 16.0;
        CHECK(std::fabs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps in the denominator
    }
}

TEST_CASE("reparam_adaln") {
    SUBCASE("identity transform keeps gain = 1 + gamma and beta") {
        const AdaLNParams p{random_vec(4), random_vec(4)};
        const ScaleVector ones{ChannelVector(4, 1.0)};
        const std::vector<GroupShift> zero = {{1, ChannelVector(4, 0.0)}};
        const ReparamAdaLN r = reparam_adaln(p, ones, zero);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(r.gain[i] == 1.0 + p.gamma[i]);
            CHECK(r.betas[0][i] == p.beta[i]);
        }
    }
    SUBCASE("hand values") {
        const AdaLNParams p{{0.0}, {0.0}};
        const ScaleVector s{{2.0}};
        const std::vector<GroupShift> shifts = {{1, {4.0}}};
        const ReparamAdaLN r = reparam_adaln(p, s, shifts);
        CHECK(r.gain[0] == 0.5);
        CHECK(r.betas[0][0] == -2.0);
    }
    SUBCASE("shapes match the original parameters (no extra per-token work)") {
        const AdaLNParams p{random_vec(6), random_vec(6)};
        const ReparamAdaLN r = reparam_adaln(p, random_scale(6), random_group_shifts(3, 6));
        CHECK(r.gain.size() == p.gamma.size());
        CHECK(r.betas.size() == 3);
        for (const auto& b : r.betas) CHECK(b.size() == p.beta.size());
    }
    SUBCASE("forward equals AdaLN-then-transform on random instances") {
        for (int trial = 0; trial < 40; ++trial) {
            const std::size_t n = 8;
            const AdaLNParams p{random_vec(n), random_vec(n)};
            const ScaleVector s = random_scale(n);
            const auto shifts = random_group_shifts(2, n);
            const ReparamAdaLN r = reparam_adaln(p, s, shifts);
            const Tensor2D z = random_tensor(5, n, 2.0);
            for (std::size_t g = 0; g < 2; ++g) {
                const Tensor2D direct = apply_htg(adaln_forward(p, z), shifts[g].values, s);
                const Tensor2D merged = reparam_adaln_forward(r, z, g);
                CHECK(rel_err(merged, direct) <= 1e-8);
            }
        }
    }
    CHECK_THROWS_AS(reparam_adaln(AdaLNParams{random_vec(3), random_vec(4)}, random_scale(3),
                                  random_group_shifts(1, 3)),
                    std::invalid_argument);
}

TEST_CASE("reparam_linear") {
    SUBCASE("identity transform keeps the layer") {
        const Tensor2D w = random_tensor(4, 3);
        const ChannelVector b = random_vec(3);
        const ScaleVector ones{ChannelVector(4, 1.0)};
        const std::vector<GroupShift> zero = {{1, ChannelVector(4, 0.0)}};
        const SmoothedLinear l = reparam_linear(w, b, ones, zero);
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(l.weight.data()[i] == w.data()[i]);
        for (std::size_t j = 0; j < 3; ++j) CHECK(l.biases[0][j] == b[j]);
    }
    SUBCASE("identity weight exposes the shift in the bias") {
        const Tensor2D w = Tensor2D::from_rows({{1.0, 0.0}, {0.0, 1.0}});
        const ChannelVector b = {0.5, -0.5};
        const auto shifts = random_group_shifts(3, 2);
        const SmoothedLinear l = reparam_linear(w, b, ScaleVector{{1.0, 1.0}}, shifts);
        for (std::size_t g = 0; g < 3; ++g) {
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(l.biases[g][j] - b[j] == doctest::Approx(shifts[g].values[j]).epsilon(1e-15));
            }
        }
    }
    SUBCASE("smoothed path reproduces the original product for every group") {
        for (int trial = 0; trial < 40; ++trial) {
            const Tensor2D w = random_tensor(6, 4);
            const ChannelVector b = random_vec(4);
            const ScaleVector s = random_scale(6);
            const auto shifts = random_group_shifts(3, 6);
            const SmoothedLinear l = reparam_linear(w, b, s, shifts);
            const Tensor2D x = random_tensor(5, 6, 3.0);
            for (std::size_t g = 0; g < 3; ++g) {
                Tensor2D lhs = matmul(apply_htg(x, shifts[g].values, s), l.weight);
                Tensor2D rhs = matmul(x, w);
                for (std::size_t r = 0; r < lhs.rows(); ++r) {
                    for (std::size_t c = 0; c < lhs.cols(); ++c) {
                        lhs.at(r, c) += l.biases[g][c];
                        rhs.at(r, c) += b[c];
                    }
                }
                CHECK(rel_err(lhs, rhs) <= 1e-8);
            }
        }
    }
}

TEST_CASE("fold_into_dequant") {
    SUBCASE("identity transform recovers the plain dequant") {
        const DequantAffine plain = plain_dequant_affine(0.25, 3.0, 2);
        const std::vector<GroupShift> zero = {{1, ChannelVector(2, 0.0)}};
        const DequantAffine folded = fold_into_dequant(plain, ScaleVector{{1.0, 1.0}}, zero);
        CHECK(folded.scale == plain.scale);
        CHECK(folded.offsets[0] == plain.offsets[0]);
    }
    SUBCASE("hand values") {
        const DequantAffine folded = fold_into_dequant(plain_dequant_affine(1.0, 0.0, 1),
                                                       ScaleVector{{2.0}}, {{1, {6.0}}});
        CHECK(folded.scale[0] == 0.5);
        CHECK(folded.offsets[0][0] == 3.0);
    }
    SUBCASE("fused path equals dequantize-then-transform") {
        for (int trial = 0; trial < 40; ++trial) {
            const std::size_t n = 5;
            const double delta = 0.03;
            const double lambda = 11.0;
            const ScaleVector s = random_scale(n);
            const auto shifts = random_group_shifts(2, n);
            const DequantAffine fused =
                fold_into_dequant(plain_dequant_affine(delta, lambda, n), s, shifts);
            Tensor2D raw(4, n);
            for (double& v : raw.data()) v = static_cast<double>(g_rng() % 256ull);
            for (std::size_t g = 0; g < 2; ++g) {
                const Tensor2D got = apply_dequant_affine(fused, raw, g);
                Tensor2D plain(4, n);
                for (std::size_t i = 0; i < raw.size(); ++i) {
                    plain.data()[i] = (raw.data()[i] - lambda) * delta;
                }
                const Tensor2D want = apply_htg(plain, shifts[g].values, s);
                for (std::size_t i = 0; i < got.size(); ++i) {
                    CHECK(std::fabs(got.data()[i] - want.data()[i]) <= 1e-10);
                }
            }
        }
    }
}

TEST_CASE("select_bias") {
    TemporalPlan plan;
    plan.num_timesteps = 10;
    plan.num_groups = 3;
    plan.boundaries = {4, 7};

    SmoothedLinear l;
    l.weight = Tensor2D(2, 2);
    l.biases = {{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}};

    SUBCASE("single group always selects the same bias") {
        TemporalPlan one;
        one.num_timesteps = 10;
        one.num_groups = 1;
        SmoothedLinear sl;
        sl.biases = {{5.0}};
        for (int t = 1; t <= 10; ++t) CHECK(select_bias(sl, t, one)[0] == 5.0);
    }
    SUBCASE("boundary switches the bias set") {
        CHECK(select_bias(l, 4, plan)[0] == 1.0);
        CHECK(select_bias(l, 5, plan)[0] == 2.0);
        CHECK(select_bias(l, 7, plan)[0] == 2.0);
        CHECK(select_bias(l, 8, plan)[0] == 3.0);
    }
    SUBCASE("sweeping t yields non-decreasing indices covering 1..G") {
        int prev = 1;
        bool saw_last = false;
        for (int t = 1; t <= 10; ++t) {
            const int g = group_of(t, plan);
            CHECK(g >= prev);
            prev = g;
            saw_last = saw_last || g == 3;
        }
        CHECK(saw_last);
    }
    SUBCASE("bias count must match the plan") {
        SmoothedLinear wrong;
        wrong.biases = {{1.0}};
        CHECK_THROWS_AS(select_bias(wrong, 1, plan), std::invalid_argument);
    }
}

TEST_CASE("end-to-end: reparam AdaLN + smoothed linear reproduces AdaLN + linear") {
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 8, out = 6;
        const AdaLNParams p{random_vec(n), random_vec(n)};
        const Tensor2D w = random_tensor(n, out);
        const ChannelVector b = random_vec(out);
        const ScaleVector s = random_scale(n);
        const auto shifts = random_group_shifts(4, n);
        const ReparamAdaLN ra = reparam_adaln(p, s, shifts);
        const SmoothedLinear sl = reparam_linear(w, b, s, shifts);
        const Tensor2D z = random_tensor(7, n, 2.0);
        for (std::size_t g = 0; g < 4; ++g) {
            Tensor2D lhs = matmul(reparam_adaln_forward(ra, z, g), sl.weight);
            Tensor2D rhs = matmul(adaln_forward(p, z), w);
            for (std::size_t r = 0; r < lhs.rows(); ++r) {
                for (std::size_t c = 0; c < lhs.cols(); ++c) {
                    lhs.at(r, c) += sl.biases[g][c];
                    rhs.at(r, c) += b[c];
                }
            }
            CHECK(rel_err(lhs, rhs) <= 1e-8);
        }
    }
}
