// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "htgq/clustering.hpp"
#include "htgq/quantizer.hpp"
#include "htgq/smoothing.hpp"
#include "htgq/tensor.hpp"

namespace htgq {

/// AdaLN: x = LayerNorm(z) * (1 + gamma) + beta, with a parameter-free
/// LayerNorm (epsilon 1e-6).
struct AdaLNParams {
    ChannelVector gamma;
    ChannelVector beta;
};

/// AdaLN with the smoothing transform absorbed:
/// x_hat = LayerNorm(z) * gain + betas[g], gain = (1 + gamma) / s,
/// betas[g] = (beta - z_g) / s. One beta per temporal group.
struct ReparamAdaLN {
    ChannelVector gain;
    std::vector<ChannelVector> betas;
};

/// Linear layer with rescaled weight and per-group compensated biases.
/// Quantizer params are filled during calibration; bits = 0 leaves them
/// disabled.
struct SmoothedLinear {
    Tensor2D weight;                       // diag(s) * W
    std::vector<ChannelVector> biases;     // b + z_g * W, one per group
    PerChannelParams weight_qparams;
    QuantParams act_qparams;
};

/// Per-channel affine x_hat = raw * scale - offsets[g]. Realizes a
/// dequantization fused with the shift/scale transform.
struct DequantAffine {
    ChannelVector scale;
    std::vector<ChannelVector> offsets;
};

Tensor2D layer_norm(const Tensor2D& x, double eps = 1e-6);

Tensor2D adaln_forward(const AdaLNParams& p, const Tensor2D& z);

ReparamAdaLN reparam_adaln(const AdaLNParams& p, const ScaleVector& scale,
                           const std::vector<GroupShift>& group_shifts);

/// Forward with the group resolved by the caller (0-based index into betas).
Tensor2D reparam_adaln_forward(const ReparamAdaLN& p, const Tensor2D& z, std::size_t group);

SmoothedLinear reparam_linear(const Tensor2D& w, const ChannelVector& b, const ScaleVector& scale,
                              const std::vector<GroupShift>& group_shifts);

/// The plain dequantization x = (q - zero_offset) * delta as a single-group
/// affine, ready to be fused.
DequantAffine plain_dequant_affine(double delta, double zero_offset, std::size_t channels);

/// Fuses the shift/scale transform into an existing dequantization affine:
/// scale' = scale / s, offsets'[g] = (offset + z_g) / s. The input affine must
/// carry either one offset set or one per group.
DequantAffine fold_into_dequant(const DequantAffine& d, const ScaleVector& scale,
                                const std::vector<GroupShift>& group_shifts);

Tensor2D apply_dequant_affine(const DequantAffine& d, const Tensor2D& raw, std::size_t group);

const ChannelVector& select_bias(const SmoothedLinear& layer, int t, const TemporalPlan& plan);
const ChannelVector& select_bias(const ReparamAdaLN& layer, int t, const TemporalPlan& plan);

}  // namespace htgq
