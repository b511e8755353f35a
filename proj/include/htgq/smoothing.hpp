// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "htgq/tensor.hpp"

namespace htgq {

struct TemporalPlan;  // clustering.hpp

/// Lower bound for smoothing-scale entries; keeps the inverse scale finite.
inline constexpr double kScaleFloor = 1e-5;

/// Per-channel midpoint (max + min) / 2 of one timestep's activations.
/// Subtracting it zero-centers every channel.
struct ShiftVector {
    int timestep = 0;  // t in [1, T]; t = T is the first inference step
    ChannelVector values;
};

/// Mean shift of one temporal group.
struct GroupShift {
    int group_index = 0;  // g in [1, G]
    ChannelVector values;
};

/// Exponential moving average of per-channel activation magnitudes,
/// folded over timesteps in descending order (T, T-1, ..., 1).
struct EmaState {
    ChannelVector values;
    double alpha = 0.99;
    bool initialized = false;
};

/// Per-channel smoothing scale, strictly positive (floored at kScaleFloor).
struct ScaleVector {
    ChannelVector values;
};

/// Midpoints from per-channel extrema.
ChannelVector shift_from_extrema(const ChannelVector& cmin, const ChannelVector& cmax);

ShiftVector compute_shift(const Tensor2D& x, int timestep = 0);

/// x with shift[c] subtracted from every column c.
Tensor2D shift_activation(const Tensor2D& x, const ChannelVector& shift);

/// Arithmetic mean of the member shift vectors of each group in the plan.
/// The shifts must cover timesteps 1..T exactly once.
std::vector<GroupShift> group_mean_shift(const std::vector<ShiftVector>& shifts,
                                         const TemporalPlan& plan);

/// bias + group_shift * w, so (x - group_shift) * w + result reproduces
/// x * w + bias exactly.
ChannelVector compensated_bias(const Tensor2D& w, const ChannelVector& bias,
                               const ChannelVector& group_shift);

/// Per-channel max(|min - shift|, |max - shift|); equals the abs-max of the
/// shifted tensor without materializing it.
ChannelVector shifted_abs_max_from_extrema(const ChannelVector& cmin, const ChannelVector& cmax,
                                           const ChannelVector& shift);

/// First update adopts the magnitudes; later updates blend
/// alpha * state + (1 - alpha) * magnitudes.
EmaState ema_update(EmaState state, const ChannelVector& channel_abs_max);

/// Convenience overload: magnitudes are the per-channel abs-max of the
/// (shifted) activation tensor.
EmaState ema_update(EmaState state, const Tensor2D& shifted);

/// scale[i] = sqrt(m[i] / max_j |w(i, j)|), floored at kScaleFloor. Channels
/// where both the magnitude and the weight row vanish get the neutral 1.
ScaleVector derive_scale(const ChannelVector& m_final, const Tensor2D& w);

/// (x - group_shift) / scale, per channel.
Tensor2D apply_htg(const Tensor2D& x, const ChannelVector& group_shift, const ScaleVector& scale);

/// Row i of w multiplied by scale[i].
Tensor2D rescale_weight(const Tensor2D& w, const ScaleVector& scale);

}  // namespace htgq
