// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace htgq {

namespace {

// Round half to even. Relies on the default FE_TONEAREST rounding mode, which
// this project never changes.
double round_half_even(double x) {
    return std::nearbyint(x);
}

void validate_bits(int bits) {
    if (bits < 2 || bits > 16) {
        throw std::invalid_argument("quantizer: bits must be in [2, 16]");
    }
}

}  // namespace

void QuantParams::validate() const {
    validate_bits(bits);
    if (!(delta > 0.0) || !std::isfinite(delta)) {
        throw std::invalid_argument("QuantParams: delta must be positive and finite");
    }
    if (zero_offset < 0 || zero_offset > max_code()) {
        throw std::invalid_argument("QuantParams: zero_offset out of range");
    }
}

QuantParams fit_params_from_range(double lo, double hi, int bits) {
    validate_bits(bits);
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
        throw std::invalid_argument("fit_params_from_range: invalid range");
    }
    const int qmax = (1 << bits) - 1;
    if (!(hi > lo)) {
        return QuantParams{kDegenerateDelta, 0, bits};
    }
    const double delta = (hi - lo) / qmax;
    double z = round_half_even(-lo / delta);
    z = std::clamp(z, 0.0, static_cast<double>(qmax));
    return QuantParams{delta, static_cast<int>(z), bits};
}

QuantParams fit_params(const Tensor2D& samples, int bits, double clip_quantile) {
    if (samples.empty()) {
        throw std::invalid_argument("fit_params: empty tensor");
    }
    if (!(clip_quantile > 0.5) || clip_quantile > 1.0) {
        throw std::invalid_argument("fit_params: clip_quantile must be in (0.5, 1]");
    }
    double lo, hi;
    if (clip_quantile == 1.0) {
        lo = hi = samples.data()[0];
        for (double v : samples.data()) {
            if (v < lo) lo = v;
            if (v > hi) hi = v;
        }
    } else {
        std::vector<double> sorted(samples.data());
        std::sort(sorted.begin(), sorted.end());
        const auto n = sorted.size();
        const auto hi_idx = static_cast<std::size_t>(std::llround(clip_quantile * static_cast<double>(n - 1)));
        const auto lo_idx = static_cast<std::size_t>(std::llround((1.0 - clip_quantile) * static_cast<double>(n - 1)));
        lo = sorted[lo_idx];
        hi = sorted[hi_idx];
    }
    return fit_params_from_range(lo, hi, bits);
}

QuantizedTensor quantize(const Tensor2D& x, const QuantParams& p) {
    p.validate();
    const double qmax = p.max_code();
    QuantizedTensor out{x.rows(), x.cols(), std::vector<std::int32_t>(x.size())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        double q = round_half_even(x.data()[i] / p.delta) + p.zero_offset;
        q = std::clamp(q, 0.0, qmax);
        out.codes[i] = static_cast<std::int32_t>(q);
    }
    return out;
}

Tensor2D dequantize(const QuantizedTensor& q, const QuantParams& p) {
    p.validate();
    if (q.codes.size() != q.rows * q.cols) {
        throw std::invalid_argument("dequantize: code count does not match shape");
    }
    std::vector<double> values(q.codes.size());
    for (std::size_t i = 0; i < q.codes.size(); ++i) {
        const std::int32_t c = q.codes[i];
        if (c < 0 || c > p.max_code()) {
            throw std::invalid_argument("dequantize: code out of range for bit width");
        }
        values[i] = static_cast<double>(c - p.zero_offset) * p.delta;
    }
    return Tensor2D(q.rows, q.cols, std::move(values));
}

Tensor2D fake_quant(const Tensor2D& x, const QuantParams& p) {
    return dequantize(quantize(x, p), p);
}

PerChannelParams fit_weight_per_channel(const Tensor2D& w, int bits) {
    if (w.empty()) {
        throw std::invalid_argument("fit_weight_per_channel: empty tensor");
    }
    PerChannelParams out;
    out.params.reserve(w.cols());
    for (std::size_t c = 0; c < w.cols(); ++c) {
        double lo = w.at(0, c);
        double hi = lo;
        for (std::size_t r = 1; r < w.rows(); ++r) {
            const double v = w.at(r, c);
            if (v < lo) lo = v;
            if (v > hi) hi = v;
        }
        out.params.push_back(fit_params_from_range(lo, hi, bits));
    }
    return out;
}

Tensor2D fake_quant_per_channel(const Tensor2D& w, const PerChannelParams& p) {
    if (p.params.size() != w.cols()) {
        throw std::invalid_argument("fake_quant_per_channel: one QuantParams per column required");
    }
    Tensor2D out(w.rows(), w.cols());
    for (std::size_t c = 0; c < w.cols(); ++c) {
        const QuantParams& qp = p.params[c];
        qp.validate();
        const double qmax = qp.max_code();
        for (std::size_t r = 0; r < w.rows(); ++r) {
            double q = round_half_even(w.at(r, c) / qp.delta) + qp.zero_offset;
            q = std::clamp(q, 0.0, qmax);
            out.at(r, c) = (q - qp.zero_offset) * qp.delta;
        }
    }
    return out;
}

ErrorReport error_report(const Tensor2D& x, const QuantParams& p) {
    return error_between(x, fake_quant(x, p));
}

ErrorReport error_between(const Tensor2D& reference, const Tensor2D& actual) {
    if (reference.rows() != actual.rows() || reference.cols() != actual.cols()) {
        throw std::invalid_argument("error_between: shape mismatch");
    }
    double err_power = 0.0;
    double sig_power = 0.0;
    double max_abs = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double r = reference.data()[i];
        const double d = actual.data()[i] - r;
        err_power += d * d;
        sig_power += r * r;
        max_abs = std::max(max_abs, std::fabs(d));
    }
    ErrorReport rep;
    rep.mse = reference.size() == 0 ? 0.0 : err_power / static_cast<double>(reference.size());
    rep.max_abs_err = max_abs;
    rep.sqnr_db = err_power == 0.0 ? std::numeric_limits<double>::infinity()
                                   : 10.0 * std::log10(sig_power / err_power);
    return rep;
}

}  // namespace htgq
