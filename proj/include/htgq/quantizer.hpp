// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "htgq/tensor.hpp"

namespace htgq {

/// Step width for degenerate (constant) calibration data.
inline constexpr double kDegenerateDelta = 1e-8;

/// Uniform affine quantizer: q = clamp(round(x / delta) + zero_offset, 0, 2^bits - 1),
/// dequant x = (q - zero_offset) * delta. Rounding is half-to-even.
/// bits == 0 marks a disabled quantizer (identity), used for float bundles.
struct QuantParams {
    double delta = 0.0;
    int zero_offset = 0;
    int bits = 0;

    bool enabled() const { return bits > 0; }
    int max_code() const { return (1 << bits) - 1; }
    void validate() const;
};

/// One QuantParams per output channel (weight column).
struct PerChannelParams {
    std::vector<QuantParams> params;
};

/// Quantization error metrics of a tensor against its fake-quantized image.
/// sqnr_db is +inf when the error power is exactly zero.
struct ErrorReport {
    double mse = 0.0;
    double max_abs_err = 0.0;
    double sqnr_db = 0.0;
};

struct QuantizedTensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int32_t> codes;
};

/// Fits delta/zero_offset on [lo, hi]. A degenerate range (hi <= lo) yields
/// delta = kDegenerateDelta and zero_offset = 0.
QuantParams fit_params_from_range(double lo, double hi, int bits);

/// Min/max calibration over all entries. clip_quantile < 1 clips the range to
/// the [1-q, q] empirical quantiles before fitting (CLI knob; default keeps
/// the strict min/max).
QuantParams fit_params(const Tensor2D& samples, int bits, double clip_quantile = 1.0);

QuantizedTensor quantize(const Tensor2D& x, const QuantParams& p);

/// Errors if any code lies outside [0, 2^bits - 1].
Tensor2D dequantize(const QuantizedTensor& q, const QuantParams& p);

/// dequantize(quantize(x)). Grid-aligned inputs round-trip exactly.
Tensor2D fake_quant(const Tensor2D& x, const QuantParams& p);

/// Static per-channel weight quantizer: each column of the C_in x C_out
/// matrix is fitted independently with fit_params semantics.
PerChannelParams fit_weight_per_channel(const Tensor2D& w, int bits);

Tensor2D fake_quant_per_channel(const Tensor2D& w, const PerChannelParams& p);

ErrorReport error_report(const Tensor2D& x, const QuantParams& p);

/// Error metrics of `actual` against `reference` (signal power taken from the
/// reference).
ErrorReport error_between(const Tensor2D& reference, const Tensor2D& actual);

}  // namespace htgq
