// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "htgq/clustering.hpp"

#include "support/oracles.hpp"

using namespace htgq;

namespace {

std::mt19937_64 g_rng(77);

std::vector<ShiftVector> shifts_1d(const std::vector<double>& values) {
    std::vector<ShiftVector> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out.push_back({static_cast<int>(i) + 1, {values[i]}});
    }
    return out;
}

}  // namespace

TEST_CASE("trivial group counts") {
    const auto shifts = shifts_1d({1, 2, 3, 4});
    SUBCASE("G = T gives the identity grouping") {
        const TemporalPlan p = cluster_timesteps(shifts, 4, Linkage::Ward);
        CHECK(p.boundaries == std::vector<int>{1, 2, 3});
        for (int t = 1; t <= 4; ++t) CHECK(group_of(t, p) == t);
        CHECK(objective(shifts, p) == 0.0);
    }
    SUBCASE("G = 1 has no boundaries") {
        const TemporalPlan p = cluster_timesteps(shifts, 1, Linkage::Average);
        CHECK(p.boundaries.empty());
        for (int t = 1; t <= 4; ++t) CHECK(group_of(t, p) == 1);
    }
    CHECK_THROWS_AS(cluster_timesteps(shifts, 5, Linkage::Ward), std::invalid_argument);
    CHECK_THROWS_AS(cluster_timesteps(shifts, 0, Linkage::Ward), std::invalid_argument);
}

TEST_CASE("two well-separated blocks split at the true boundary") {
    const auto shifts = shifts_1d({0, 0, 0, 5, 5, 5});
    for (Linkage linkage : {Linkage::Average, Linkage::Centroid, Linkage::Ward}) {
        const TemporalPlan p = cluster_timesteps(shifts, 2, linkage);
        CHECK(p.boundaries == std::vector<int>{3});
        // Exhaustive check over all C(5,1) contiguous 2-partitions.
        const TemporalPlan best = testsupport::optimal_plan(shifts, 2);
        CHECK(best.boundaries == p.boundaries);
    }
}

TEST_CASE("adjacent_distance formulas") {
    const std::vector<ShiftVector> a = {{1, {0.0, 0.0}}};
    const std::vector<ShiftVector> b = {{2, {3.0, 4.0}}};
    SUBCASE("singletons: average and centroid coincide with the euclidean distance") {
        const double avg = adjacent_distance(a, b, Linkage::Average);
        const double cen = adjacent_distance(a, b, Linkage::Centroid);
        const double ward = adjacent_distance(a, b, Linkage::Ward);
        CHECK(avg == doctest::Approx(5.0).epsilon(1e-14));
        CHECK(cen == doctest::Approx(5.0).epsilon(1e-14));
        CHECK(ward == doctest::Approx(12.5).epsilon(1e-14));  // 1*1/2 * 25
    }
    SUBCASE("identical groups are at distance zero") {
        const std::vector<ShiftVector> c = {{1, {2.0}}, {2, {2.0}}};
        const std::vector<ShiftVector> d = {{3, {2.0}}, {4, {2.0}}};
        for (Linkage linkage : {Linkage::Average, Linkage::Centroid, Linkage::Ward}) {
            CHECK(adjacent_distance(c, d, linkage) == 0.0);
        }
    }
    SUBCASE("random groups match the direct formulas") {
        std::normal_distribution<double> g;
        auto grp = [&](int n, int t0) {
            std::vector<ShiftVector> out;
            for (int i = 0; i < n; ++i) out.push_back({t0 + i, {g(g_rng), g(g_rng), g(g_rng)}});
            return out;
        };
        const auto ga = grp(3, 1);
        const auto gb = grp(2, 4);
        auto dist = [](const ChannelVector& x, const ChannelVector& y) {
            double acc = 0;
            for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
            return std::sqrt(acc);
        };
        double avg = 0;
        for (const auto& x : ga)
            for (const auto& y : gb) avg += dist(x.values, y.values);
        avg /= 6.0;
        ChannelVector ma(3, 0), mb(3, 0);
        for (const auto& x : ga)
            for (std::size_t i = 0; i < 3; ++i) ma[i] += x.values[i] / 3.0;
        for (const auto& y : gb)
            for (std::size_t i = 0; i < 3; ++i) mb[i] += y.values[i] / 2.0;
        CHECK(adjacent_distance(ga, gb, Linkage::Average) == doctest::Approx(avg).epsilon(1e-12));
        CHECK(adjacent_distance(ga, gb, Linkage::Centroid) ==
              doctest::Approx(dist(ma, mb)).epsilon(1e-12));
        CHECK(adjacent_distance(ga, gb, Linkage::Ward) ==
              doctest::Approx(3.0 * 2.0 / 5.0 * dist(ma, mb) * dist(ma, mb)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(adjacent_distance({}, b, Linkage::Ward), std::invalid_argument);
}

TEST_CASE("group_of boundary semantics") {
    TemporalPlan p;
    p.num_timesteps = 6;
    p.num_groups = 2;
    p.boundaries = {3};
    CHECK(group_of(3, p) == 1);
    CHECK(group_of(4, p) == 2);
    CHECK_THROWS_AS(group_of(0, p), std::invalid_argument);
    CHECK_THROWS_AS(group_of(7, p), std::invalid_argument);

    // Every t agrees with a linear scan over the boundary constraints.
    TemporalPlan q;
    q.num_timesteps = 10;
    q.num_groups = 4;
    q.boundaries = {2, 5, 9};
    for (int t = 1; t <= 10; ++t) {
        int want = 1;
        int prev = 0;
        for (std::size_t i = 0; i <= q.boundaries.size(); ++i) {
            const int hi = i == q.boundaries.size() ? q.num_timesteps : q.boundaries[i];
            if (t > prev && t <= hi) {
                want = static_cast<int>(i) + 1;
                break;
            }
            prev = hi;
        }
        CHECK(group_of(t, q) == want);
    }
}

TEST_CASE("objective hand values and direct-sum oracle") {
    SUBCASE("two points in one group") {
        const auto shifts = shifts_1d({0.0, 2.0});
        TemporalPlan p;
        p.num_timesteps = 2;
        p.num_groups = 1;
        CHECK(objective(shifts, p) == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(within_group_sse(shifts, p) == doctest::Approx(2.0).epsilon(1e-14));
    }
    SUBCASE("random instance vs direct sum") {
        std::normal_distribution<double> g;
        std::vector<ShiftVector> shifts;
        const int T = 9;
        for (int t = 1; t <= T; ++t) shifts.push_back({t, {g(g_rng), g(g_rng)}});
        TemporalPlan p;
        p.num_timesteps = T;
        p.num_groups = 3;
        p.boundaries = {2, 6};
        double want = 0.0;
        for (int gi = 1; gi <= 3; ++gi) {
            ChannelVector mu(2, 0.0);
            int n = 0;
            for (int t = 1; t <= T; ++t) {
                if (group_of(t, p) != gi) continue;
                for (std::size_t i = 0; i < 2; ++i) mu[i] += shifts[static_cast<std::size_t>(t - 1)].values[i];
                ++n;
            }
            for (double& v : mu) v /= n;
            for (int t = 1; t <= T; ++t) {
                if (group_of(t, p) != gi) continue;
                double d = 0.0;
                for (std::size_t i = 0; i < 2; ++i) {
                    const double e = shifts[static_cast<std::size_t>(t - 1)].values[i] - mu[i];
                    d += e * e;
                }
                want += std::sqrt(d);
            }
        }
        CHECK(objective(shifts, p) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("greedy equals the exhaustive optimum on well-separated blocks") {
    std::normal_distribution<double> noise(0.0, 0.05);
    std::uniform_int_distribution<int> t_pick(6, 12);
    for (int trial = 0; trial < 20; ++trial) {
        const int T = t_pick(g_rng);
        const int G = 2 + static_cast<int>(g_rng() % 3ull);
        if (G > T) continue;
        // True boundaries chosen at random; block centroids 10 apart with
        // intra-block spread ~0.05 (separation >> 10x spread).
        std::vector<int> cut;
        while (static_cast<int>(cut.size()) < G - 1) {
            const int c = 1 + static_cast<int>(g_rng() % static_cast<std::uint64_t>(T - 1));
            if (std::find(cut.begin(), cut.end(), c) == cut.end()) cut.push_back(c);
        }
        std::sort(cut.begin(), cut.end());
        std::vector<ShiftVector> shifts;
        for (int t = 1; t <= T; ++t) {
            int block = 0;
            for (int c : cut) {
                if (t > c) ++block;
            }
            shifts.push_back({t, {block * 10.0 + noise(g_rng), -block * 10.0 + noise(g_rng)}});
        }
        const TemporalPlan greedy = cluster_timesteps(shifts, G, Linkage::Ward);
        const TemporalPlan best = testsupport::optimal_plan(shifts, G);
        CHECK(greedy.boundaries == best.boundaries);
        CHECK(objective(shifts, greedy) == doctest::Approx(objective(shifts, best)).epsilon(1e-12));
    }
}

TEST_CASE("plans are contiguous with exactly G non-empty groups") {
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 30; ++trial) {
        const int T = 3 + static_cast<int>(g_rng() % 20ull);
        const int G = 1 + static_cast<int>(g_rng() % static_cast<std::uint64_t>(T));
        std::vector<ShiftVector> shifts;
        for (int t = 1; t <= T; ++t) shifts.push_back({t, {g(g_rng), g(g_rng), g(g_rng)}});
        const Linkage linkage = static_cast<Linkage>(trial % 3);
        const TemporalPlan p = cluster_timesteps(shifts, G, linkage);
        p.validate();
        CHECK(p.num_groups == G);
        // Non-decreasing group ids covering 1..G in order imply contiguity
        // and non-emptiness.
        int prev = 1;
        for (int t = 1; t <= T; ++t) {
            const int gi = group_of(t, p);
            CHECK(gi >= prev);
            CHECK(gi - prev <= 1);
            prev = gi;
        }
        CHECK(prev == G);
    }
}

TEST_CASE("equal-distance ties merge the earliest pair") {
    // All-constant shifts: every adjacent distance is 0, so the leftmost pair
    // merges each round and the tail timesteps remain as singleton groups.
    const auto shifts = shifts_1d({2, 2, 2, 2, 2});
    const TemporalPlan p = cluster_timesteps(shifts, 3, Linkage::Ward);
    CHECK(p.boundaries == std::vector<int>{3, 4});
}

TEST_CASE("linkage names round-trip") {
    for (Linkage linkage : {Linkage::Average, Linkage::Centroid, Linkage::Ward}) {
        CHECK(linkage_from_string(to_string(linkage)) == linkage);
    }
    CHECK_THROWS_AS(linkage_from_string("complete"), std::invalid_argument);
}
