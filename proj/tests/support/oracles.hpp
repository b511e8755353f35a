// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used only by tests.

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "htgq/clustering.hpp"
#include "htgq/smoothing.hpp"

namespace testsupport {

// Exact minimizer of the contiguous-partition objective
// sum_g sum_{t in g} ||z_t - mean_g||, found by dynamic programming over
// boundary placements. Polynomial thanks to the contiguity constraint;
// intended for small T only.
inline htgq::TemporalPlan optimal_plan(const std::vector<htgq::ShiftVector>& shifts, int groups) {
    const int T = static_cast<int>(shifts.size());
    const auto z = htgq::order_by_timestep(shifts, T);
    const std::size_t dim = z[0]->size();

    // cost[i][j]: deviation sum of the segment of timesteps i+1 .. j+1.
    std::vector<std::vector<double>> cost(static_cast<std::size_t>(T),
                                          std::vector<double>(static_cast<std::size_t>(T), 0.0));
    for (int i = 0; i < T; ++i) {
        for (int j = i; j < T; ++j) {
            std::vector<double> mu(dim, 0.0);
            for (int t = i; t <= j; ++t) {
                for (std::size_t d = 0; d < dim; ++d) mu[d] += (*z[static_cast<std::size_t>(t)])[d];
            }
            for (double& v : mu) v /= static_cast<double>(j - i + 1);
            double acc = 0.0;
            for (int t = i; t <= j; ++t) {
                double e = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    const double diff = (*z[static_cast<std::size_t>(t)])[d] - mu[d];
                    e += diff * diff;
                }
                acc += std::sqrt(e);
            }
            cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = acc;
        }
    }

    const double inf = std::numeric_limits<double>::infinity();
    // best[g][j]: minimal cost of splitting timesteps 1..j+1 into g+1 groups.
    std::vector<std::vector<double>> best(static_cast<std::size_t>(groups),
                                          std::vector<double>(static_cast<std::size_t>(T), inf));
    std::vector<std::vector<int>> from(static_cast<std::size_t>(groups),
                                       std::vector<int>(static_cast<std::size_t>(T), -1));
    for (int j = 0; j < T; ++j) best[0][static_cast<std::size_t>(j)] = cost[0][static_cast<std::size_t>(j)];
    for (int g = 1; g < groups; ++g) {
        for (int j = g; j < T; ++j) {
            for (int i = g; i <= j; ++i) {  // segment i..j forms group g+1
                const double c = best[static_cast<std::size_t>(g - 1)][static_cast<std::size_t>(i - 1)] +
                                 cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                if (c < best[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)]) {
                    best[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)] = c;
                    from[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)] = i;
                }
            }
        }
    }

    htgq::TemporalPlan plan;
    plan.num_timesteps = T;
    plan.num_groups = groups;
    int j = T - 1;
    std::vector<int> cuts;
    for (int g = groups - 1; g >= 1; --g) {
        const int i = from[static_cast<std::size_t>(g)][static_cast<std::size_t>(j)];
        cuts.push_back(i);  // boundary tau = last timestep of the previous group = i
        j = i - 1;
    }
    for (auto it = cuts.rbegin(); it != cuts.rend(); ++it) plan.boundaries.push_back(*it);
    plan.validate();
    return plan;
}

}  // namespace testsupport
