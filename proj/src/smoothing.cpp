// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/smoothing.hpp"

#include <cmath>
#include <stdexcept>

#include "htgq/clustering.hpp"

namespace htgq {

namespace {

// Weight rows that never exceed this are treated as dead when deriving scales.
constexpr double kDeadChannelEps = 1e-12;

}  // namespace

ChannelVector shift_from_extrema(const ChannelVector& cmin, const ChannelVector& cmax) {
    if (cmin.size() != cmax.size()) {
        throw std::invalid_argument("shift_from_extrema: extrema length mismatch");
    }
    ChannelVector z(cmin.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = (cmax[i] + cmin[i]) / 2.0;
    }
    return z;
}

ShiftVector compute_shift(const Tensor2D& x, int timestep) {
    auto [cmin, cmax] = col_min_max(x);
    return ShiftVector{timestep, shift_from_extrema(cmin, cmax)};
}

Tensor2D shift_activation(const Tensor2D& x, const ChannelVector& shift) {
    if (shift.size() != x.cols()) {
        throw std::invalid_argument("shift_activation: shift length must equal channel count");
    }
    Tensor2D out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out.at(r, c) = x.at(r, c) - shift[c];
        }
    }
    return out;
}

std::vector<GroupShift> group_mean_shift(const std::vector<ShiftVector>& shifts,
                                         const TemporalPlan& plan) {
    const auto by_t = order_by_timestep(shifts, plan.num_timesteps);
    std::vector<GroupShift> out;
    out.reserve(static_cast<std::size_t>(plan.num_groups));
    for (int g = 1; g <= plan.num_groups; ++g) {
        GroupShift gs{g, ChannelVector(by_t[0]->size(), 0.0)};
        int members = 0;
        for (int t = 1; t <= plan.num_timesteps; ++t) {
            if (group_of(t, plan) != g) continue;
            const ChannelVector& z = *by_t[static_cast<std::size_t>(t - 1)];
            if (z.size() != gs.values.size()) {
                throw std::invalid_argument("group_mean_shift: shift vectors differ in length");
            }
            for (std::size_t i = 0; i < z.size(); ++i) gs.values[i] += z[i];
            ++members;
        }
        for (double& v : gs.values) v /= static_cast<double>(members);
        out.push_back(std::move(gs));
    }
    return out;
}

ChannelVector compensated_bias(const Tensor2D& w, const ChannelVector& bias,
                               const ChannelVector& group_shift) {
    if (group_shift.size() != w.rows()) {
        throw std::invalid_argument("compensated_bias: shift length must equal input channels");
    }
    if (bias.size() != w.cols()) {
        throw std::invalid_argument("compensated_bias: bias length must equal output channels");
    }
    ChannelVector out = vec_matmul(group_shift, w);
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = bias[j] + out[j];
    }
    return out;
}

ChannelVector shifted_abs_max_from_extrema(const ChannelVector& cmin, const ChannelVector& cmax,
                                           const ChannelVector& shift) {
    if (cmin.size() != cmax.size() || cmin.size() != shift.size()) {
        throw std::invalid_argument("shifted_abs_max_from_extrema: length mismatch");
    }
    ChannelVector out(cmin.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::max(std::fabs(cmin[i] - shift[i]), std::fabs(cmax[i] - shift[i]));
    }
    return out;
}

EmaState ema_update(EmaState state, const ChannelVector& channel_abs_max) {
    if (!(state.alpha > 0.0) || !(state.alpha < 1.0)) {
        throw std::invalid_argument("ema_update: alpha must lie in (0, 1)");
    }
    if (!state.initialized) {
        state.values = channel_abs_max;
        state.initialized = true;
        return state;
    }
    if (state.values.size() != channel_abs_max.size()) {
        throw std::invalid_argument("ema_update: channel count mismatch");
    }
    for (std::size_t i = 0; i < state.values.size(); ++i) {
        state.values[i] = state.alpha * state.values[i] + (1.0 - state.alpha) * channel_abs_max[i];
    }
    return state;
}

EmaState ema_update(EmaState state, const Tensor2D& shifted) {
    return ema_update(std::move(state), col_abs_max(shifted));
}

ScaleVector derive_scale(const ChannelVector& m_final, const Tensor2D& w) {
    if (m_final.size() != w.rows()) {
        throw std::invalid_argument("derive_scale: magnitude length must equal input channels");
    }
    ScaleVector out;
    out.values.resize(m_final.size());
    for (std::size_t i = 0; i < m_final.size(); ++i) {
        if (m_final[i] < 0.0) {
            throw std::invalid_argument("derive_scale: negative channel magnitude");
        }
        double wmax = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
            wmax = std::max(wmax, std::fabs(w.at(i, j)));
        }
        double s;
        if (m_final[i] <= kDeadChannelEps && wmax <= kDeadChannelEps) {
            s = 1.0;  // dead channel, identity scale
        } else {
            s = std::sqrt(m_final[i] / std::max(wmax, kDeadChannelEps));
        }
        out.values[i] = std::max(s, kScaleFloor);
    }
    return out;
}

Tensor2D apply_htg(const Tensor2D& x, const ChannelVector& group_shift, const ScaleVector& scale) {
    if (group_shift.size() != x.cols() || scale.values.size() != x.cols()) {
        throw std::invalid_argument("apply_htg: vector lengths must equal channel count");
    }
    for (double s : scale.values) {
        if (!(s > 0.0)) throw std::invalid_argument("apply_htg: scale entries must be positive");
    }
    Tensor2D out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out.at(r, c) = (x.at(r, c) - group_shift[c]) / scale.values[c];
        }
    }
    return out;
}

Tensor2D rescale_weight(const Tensor2D& w, const ScaleVector& scale) {
    if (scale.values.size() != w.rows()) {
        throw std::invalid_argument("rescale_weight: scale length must equal input channels");
    }
    for (double s : scale.values) {
        if (!(s > 0.0)) throw std::invalid_argument("rescale_weight: scale entries must be positive");
    }
    Tensor2D out(w.rows(), w.cols());
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
            out.at(r, c) = scale.values[r] * w.at(r, c);
        }
    }
    return out;
}

}  // namespace htgq
