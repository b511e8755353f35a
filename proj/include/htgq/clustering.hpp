// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "htgq/smoothing.hpp"
#include "htgq/tensor.hpp"

namespace htgq {

enum class Linkage {
    Average,   // mean pairwise Euclidean distance
    Centroid,  // Euclidean distance between centroids
    Ward,      // |a||b| / (|a|+|b|) * ||mu_a - mu_b||^2
};

const char* to_string(Linkage linkage);
Linkage linkage_from_string(std::string_view name);

/// Contiguous partition of timesteps 1..T into G groups. Group g covers
/// boundaries[g-2] < t <= boundaries[g-1] with implicit tau_0 = 0, tau_G = T.
struct TemporalPlan {
    int num_timesteps = 0;
    int num_groups = 0;
    std::vector<int> boundaries;  // strictly increasing, G-1 values in (0, T)
    Linkage linkage = Linkage::Ward;

    void validate() const;
};

/// Validates that `shifts` covers timesteps 1..T exactly once and returns
/// their value vectors indexed by t - 1.
std::vector<const ChannelVector*> order_by_timestep(const std::vector<ShiftVector>& shifts,
                                                    int num_timesteps);

/// Greedy agglomeration: start from T singleton groups and repeatedly merge
/// the adjacent pair with the smallest linkage distance until `num_groups`
/// remain. Ties merge the earliest pair.
TemporalPlan cluster_timesteps(const std::vector<ShiftVector>& shifts, int num_groups,
                               Linkage linkage);

/// Linkage distance between two groups of shift vectors.
double adjacent_distance(std::span<const ShiftVector> a, std::span<const ShiftVector> b,
                         Linkage linkage);

/// The unique g with tau_{g-1} < t <= tau_g.
int group_of(int t, const TemporalPlan& plan);

/// Sum over groups of the Euclidean deviations ||z_t - mu_g|| (unsquared),
/// with mu_g the group mean.
double objective(const std::vector<ShiftVector>& shifts, const TemporalPlan& plan);

/// Same partition scored by within-group sum of squares, reported alongside
/// the unsquared objective since Ward's merge rule minimizes this form.
double within_group_sse(const std::vector<ShiftVector>& shifts, const TemporalPlan& plan);

}  // namespace htgq
