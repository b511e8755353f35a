// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/reparam.hpp"

#include <cmath>
#include <stdexcept>

namespace htgq {

namespace {

void check_group_shifts(const std::vector<GroupShift>& group_shifts, std::size_t channels) {
    if (group_shifts.empty()) {
        throw std::invalid_argument("reparam: at least one group shift required");
    }
    for (std::size_t g = 0; g < group_shifts.size(); ++g) {
        if (group_shifts[g].group_index != static_cast<int>(g) + 1) {
            throw std::invalid_argument("reparam: group shifts must be ordered 1..G");
        }
        if (group_shifts[g].values.size() != channels) {
            throw std::invalid_argument("reparam: group shift length mismatch");
        }
    }
}

}  // namespace

Tensor2D layer_norm(const Tensor2D& x, double eps) {
    if (x.cols() == 0) {
        throw std::invalid_argument("layer_norm: empty tensor");
    }
    Tensor2D out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) mean += x.at(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double d = x.at(r, c) - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out.at(r, c) = (x.at(r, c) - mean) * inv;
        }
    }
    return out;
}

Tensor2D adaln_forward(const AdaLNParams& p, const Tensor2D& z) {
    if (p.gamma.size() != z.cols() || p.beta.size() != z.cols()) {
        throw std::invalid_argument("adaln_forward: parameter length mismatch");
    }
    Tensor2D ln = layer_norm(z);
    Tensor2D out(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < z.cols(); ++c) {
            out.at(r, c) = ln.at(r, c) * (1.0 + p.gamma[c]) + p.beta[c];
        }
    }
    return out;
}

ReparamAdaLN reparam_adaln(const AdaLNParams& p, const ScaleVector& scale,
                           const std::vector<GroupShift>& group_shifts) {
    const std::size_t n = p.gamma.size();
    if (p.beta.size() != n || scale.values.size() != n) {
        throw std::invalid_argument("reparam_adaln: dimension mismatch");
    }
    check_group_shifts(group_shifts, n);
    ReparamAdaLN out;
    out.gain.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.gain[i] = (1.0 + p.gamma[i]) / scale.values[i];
    }
    out.betas.reserve(group_shifts.size());
    for (const GroupShift& gs : group_shifts) {
        ChannelVector beta_g(n);
        for (std::size_t i = 0; i < n; ++i) {
            beta_g[i] = (p.beta[i] - gs.values[i]) / scale.values[i];
        }
        out.betas.push_back(std::move(beta_g));
    }
    return out;
}

Tensor2D reparam_adaln_forward(const ReparamAdaLN& p, const Tensor2D& z, std::size_t group) {
    if (p.gain.size() != z.cols()) {
        throw std::invalid_argument("reparam_adaln_forward: gain length mismatch");
    }
    if (group >= p.betas.size()) {
        throw std::invalid_argument("reparam_adaln_forward: group index out of range");
    }
    const ChannelVector& beta = p.betas[group];
    Tensor2D ln = layer_norm(z);
    Tensor2D out(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < z.cols(); ++c) {
            out.at(r, c) = ln.at(r, c) * p.gain[c] + beta[c];
        }
    }
    return out;
}

SmoothedLinear reparam_linear(const Tensor2D& w, const ChannelVector& b, const ScaleVector& scale,
                              const std::vector<GroupShift>& group_shifts) {
    check_group_shifts(group_shifts, w.rows());
    SmoothedLinear out;
    out.weight = rescale_weight(w, scale);
    out.biases.reserve(group_shifts.size());
    for (const GroupShift& gs : group_shifts) {
        // The compensation uses the original weight: x_hat * (diag(s) W)
        // re-expands to (x - z_g) W, so the bias must add back z_g W.
        out.biases.push_back(compensated_bias(w, b, gs.values));
    }
    return out;
}

DequantAffine plain_dequant_affine(double delta, double zero_offset, std::size_t channels) {
    if (channels == 0) {
        throw std::invalid_argument("plain_dequant_affine: need at least one channel");
    }
    DequantAffine d;
    d.scale.assign(channels, delta);
    d.offsets.push_back(ChannelVector(channels, zero_offset * delta));
    return d;
}

DequantAffine fold_into_dequant(const DequantAffine& d, const ScaleVector& scale,
                                const std::vector<GroupShift>& group_shifts) {
    const std::size_t n = d.scale.size();
    if (scale.values.size() != n) {
        throw std::invalid_argument("fold_into_dequant: scale length mismatch");
    }
    check_group_shifts(group_shifts, n);
    const std::size_t groups = group_shifts.size();
    if (d.offsets.size() != 1 && d.offsets.size() != groups) {
        throw std::invalid_argument("fold_into_dequant: offset sets must be 1 or G");
    }
    DequantAffine out;
    out.scale.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.scale[i] = d.scale[i] / scale.values[i];
    }
    out.offsets.reserve(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        const ChannelVector& base = d.offsets[d.offsets.size() == 1 ? 0 : g];
        ChannelVector off(n);
        for (std::size_t i = 0; i < n; ++i) {
            off[i] = (base[i] + group_shifts[g].values[i]) / scale.values[i];
        }
        out.offsets.push_back(std::move(off));
    }
    return out;
}

Tensor2D apply_dequant_affine(const DequantAffine& d, const Tensor2D& raw, std::size_t group) {
    if (d.scale.size() != raw.cols()) {
        throw std::invalid_argument("apply_dequant_affine: channel count mismatch");
    }
    if (group >= d.offsets.size()) {
        throw std::invalid_argument("apply_dequant_affine: group index out of range");
    }
    const ChannelVector& off = d.offsets[group];
    Tensor2D out(raw.rows(), raw.cols());
    for (std::size_t r = 0; r < raw.rows(); ++r) {
        for (std::size_t c = 0; c < raw.cols(); ++c) {
            out.at(r, c) = raw.at(r, c) * d.scale[c] - off[c];
        }
    }
    return out;
}

const ChannelVector& select_bias(const SmoothedLinear& layer, int t, const TemporalPlan& plan) {
    if (layer.biases.size() != static_cast<std::size_t>(plan.num_groups)) {
        throw std::invalid_argument("select_bias: bias count does not match plan");
    }
    return layer.biases[static_cast<std::size_t>(group_of(t, plan) - 1)];
}

const ChannelVector& select_bias(const ReparamAdaLN& layer, int t, const TemporalPlan& plan) {
    if (layer.betas.size() != static_cast<std::size_t>(plan.num_groups)) {
        throw std::invalid_argument("select_bias: beta count does not match plan");
    }
    return layer.betas[static_cast<std::size_t>(group_of(t, plan) - 1)];
}

}  // namespace htgq
