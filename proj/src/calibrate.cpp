// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/quant_block.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace htgq {

namespace {

std::string block_prefix(std::size_t block_index) {
    return "blocks." + std::to_string(block_index) + ".";
}

const CalibrationTrace& need_layer(const TraceSet& trace, const std::string& id) {
    const auto it = trace.layers.find(id);
    if (it == trace.layers.end()) {
        throw DataError("calibration trace incomplete: missing layer \"" + id +
                        "\" (timesteps 1.." + std::to_string(trace.num_timesteps) + ")");
    }
    if (it->second.num_timesteps != trace.num_timesteps) {
        throw DataError("calibration trace incomplete: layer \"" + id + "\" covers " +
                        std::to_string(it->second.num_timesteps) + " of " +
                        std::to_string(trace.num_timesteps) + " timesteps");
    }
    return it->second;
}

// Per-timestep shift vectors of one tap record; zeros when shifting is off.
std::vector<ShiftVector> record_shifts(const CalibrationTrace& rec, bool enable_shift) {
    std::vector<ShiftVector> shifts;
    shifts.reserve(static_cast<std::size_t>(rec.num_timesteps));
    for (int t = 1; t <= rec.num_timesteps; ++t) {
        const ChannelSummary s = rec.summary_at(t);
        if (enable_shift) {
            shifts.push_back(ShiftVector{t, shift_from_extrema(s.min, s.max)});
        } else {
            shifts.push_back(ShiftVector{t, ChannelVector(s.min.size(), 0.0)});
        }
    }
    return shifts;
}

// EMA over per-channel magnitudes of the (per-step) shifted record, folded in
// descending timestep order.
ChannelVector ema_magnitudes(const CalibrationTrace& rec, const std::vector<ShiftVector>& shifts,
                             double alpha) {
    EmaState state;
    state.alpha = alpha;
    for (int t = rec.num_timesteps; t >= 1; --t) {
        const ChannelSummary s = rec.summary_at(t);
        const ChannelVector& z = shifts[static_cast<std::size_t>(t - 1)].values;
        state = ema_update(std::move(state), shifted_abs_max_from_extrema(s.min, s.max, z));
    }
    return state.values;
}

ScaleVector unit_scale(std::size_t n) {
    return ScaleVector{ChannelVector(n, 1.0)};
}

QuantParams disabled_params() {
    return QuantParams{};
}

// Static per-tensor activation params from pooled raw extrema of a record.
QuantParams fit_plain_act(const CalibrationTrace& rec, int bits, double clip_quantile) {
    if (bits == 0) return disabled_params();
    if (clip_quantile == 1.0) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (int t = 1; t <= rec.num_timesteps; ++t) {
            const ChannelSummary s = rec.summary_at(t);
            for (double v : s.min) lo = std::min(lo, v);
            for (double v : s.max) hi = std::max(hi, v);
        }
        return fit_params_from_range(lo, hi, bits);
    }
    if (rec.kind != RecordKind::Full) {
        throw DataError("clip_quantile < 1 requires full tensors for layer \"" + rec.layer_id + "\"");
    }
    std::vector<double> pooled;
    for (const Tensor2D& x : rec.tensors) {
        pooled.insert(pooled.end(), x.data().begin(), x.data().end());
    }
    const std::size_t n = pooled.size();
    return fit_params(Tensor2D(n, 1, std::move(pooled)), bits, clip_quantile);
}

// Activation params of a smoothed tap: extrema are mapped through
// (x - z_g) / s, which preserves per-channel order since s > 0.
QuantParams fit_htg_act(const CalibrationTrace& rec, int bits, double clip_quantile,
                        const TemporalPlan& plan, const std::vector<GroupShift>& gshifts,
                        const ScaleVector& scale) {
    if (bits == 0) return disabled_params();
    if (clip_quantile == 1.0) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (int t = 1; t <= rec.num_timesteps; ++t) {
            const ChannelSummary s = rec.summary_at(t);
            const ChannelVector& z = gshifts[static_cast<std::size_t>(group_of(t, plan) - 1)].values;
            for (std::size_t i = 0; i < s.min.size(); ++i) {
                lo = std::min(lo, (s.min[i] - z[i]) / scale.values[i]);
                hi = std::max(hi, (s.max[i] - z[i]) / scale.values[i]);
            }
        }
        return fit_params_from_range(lo, hi, bits);
    }
    if (rec.kind != RecordKind::Full) {
        throw DataError("clip_quantile < 1 requires full tensors for layer \"" + rec.layer_id + "\"");
    }
    std::vector<double> pooled;
    for (int t = 1; t <= rec.num_timesteps; ++t) {
        const ChannelVector& z = gshifts[static_cast<std::size_t>(group_of(t, plan) - 1)].values;
        const Tensor2D smoothed = apply_htg(rec.tensors[static_cast<std::size_t>(t - 1)], z, scale);
        pooled.insert(pooled.end(), smoothed.data().begin(), smoothed.data().end());
    }
    const std::size_t n = pooled.size();
    return fit_params(Tensor2D(n, 1, std::move(pooled)), bits, clip_quantile);
}

PerChannelParams maybe_fit_weight(const Tensor2D& w, int bits) {
    if (bits == 0) return PerChannelParams{};
    return fit_weight_per_channel(w, bits);
}

Tensor2D maybe_fq(const Tensor2D& x, const QuantParams& p, QuantMode mode) {
    if (mode == QuantMode::Bypass || !p.enabled()) return x;
    return fake_quant(x, p);
}

Tensor2D maybe_fq_weight(const Tensor2D& w, const PerChannelParams& p, QuantMode mode) {
    if (mode == QuantMode::Bypass || p.params.empty()) return w;
    return fake_quant_per_channel(w, p);
}

// Integer attention: operands quantized per tensor, products accumulated in
// int64, outputs returned as raw AV accumulators (to be dequantized by the
// fused affine).
Tensor2D attention_int(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v, int heads,
                       const AttentionQuant& aq) {
    const std::size_t n = q.rows();
    const std::size_t hidden = q.cols();
    const std::size_t head_dim = hidden / static_cast<std::size_t>(heads);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const double score_scale = aq.q.delta * aq.k.delta * inv_sqrt_d;

    const QuantizedTensor cq = quantize(q, aq.q);
    const QuantizedTensor ck = quantize(k, aq.k);
    const QuantizedTensor cv = quantize(v, aq.v);

    Tensor2D raw(n, hidden);
    for (int head = 0; head < heads; ++head) {
        const std::size_t off = static_cast<std::size_t>(head) * head_dim;
        Tensor2D scores(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                std::int64_t acc = 0;
                for (std::size_t d = 0; d < head_dim; ++d) {
                    const std::int64_t a = cq.codes[i * hidden + off + d] - aq.q.zero_offset;
                    const std::int64_t b = ck.codes[j * hidden + off + d] - aq.k.zero_offset;
                    acc += a * b;
                }
                scores.at(i, j) = static_cast<double>(acc) * score_scale;
            }
        }
        const Tensor2D probs = softmax_rows(scores);
        const QuantizedTensor ca = quantize(probs, aq.softmax);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < head_dim; ++d) {
                std::int64_t acc = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    const std::int64_t a = ca.codes[i * n + j] - aq.softmax.zero_offset;
                    const std::int64_t b = cv.codes[j * hidden + off + d] - aq.v.zero_offset;
                    acc += a * b;
                }
                raw.at(i, off + d) = static_cast<double>(acc);
            }
        }
    }
    return raw;
}

struct ResolvedAdaln {
    // Effective gain/beta applied after LayerNorm for this timestep.
    ChannelVector gain1, beta1, gain2, beta2;
};

ResolvedAdaln resolve_quant_adaln(const QuantizedDitBlock& qb, int t, std::size_t group,
                                  QuantMode mode) {
    ResolvedAdaln out;
    if (!qb.modulation) {
        out.gain1 = qb.adaln1.gain;
        out.beta1 = qb.adaln1.betas[group];
        out.gain2 = qb.adaln2.gain;
        out.beta2 = qb.adaln2.betas[group];
        return out;
    }
    const ReparamModulation& mod = *qb.modulation;
    const ChannelVector c = timestep_embedding(t, qb.cond_dim);
    const Tensor2D c_row = maybe_fq(Tensor2D(1, c.size(), c), mod.act_qparams, mode);
    const Tensor2D w = maybe_fq_weight(mod.weight, mod.weight_qparams, mode);
    ChannelVector m = vec_matmul(c_row.data(), w);
    const ChannelVector& bias = mod.biases[group];
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += bias[i];

    const std::size_t h = static_cast<std::size_t>(qb.hidden);
    out.gain1.resize(h);
    out.beta1.assign(m.begin() + static_cast<std::ptrdiff_t>(h),
                     m.begin() + static_cast<std::ptrdiff_t>(2 * h));
    out.gain2.resize(h);
    out.beta2.assign(m.begin() + static_cast<std::ptrdiff_t>(3 * h),
                     m.begin() + static_cast<std::ptrdiff_t>(4 * h));
    for (std::size_t i = 0; i < h; ++i) {
        out.gain1[i] = mod.base_gain1[i] + m[i];
        out.gain2[i] = mod.base_gain2[i] + m[2 * h + i];
    }
    return out;
}

Tensor2D affine_after_norm(const Tensor2D& z, const ChannelVector& gain,
                           const ChannelVector& beta) {
    Tensor2D ln = layer_norm(z);
    Tensor2D out(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        for (std::size_t c = 0; c < z.cols(); ++c) {
            out.at(r, c) = ln.at(r, c) * gain[c] + beta[c];
        }
    }
    return out;
}

}  // namespace

void BlockConfig::validate() const {
    auto check_bits = [](int b, const char* what) {
        if (b != 0 && (b < 2 || b > 16)) {
            throw std::invalid_argument(std::string(what) + " must be 0 (off) or in [2, 16]");
        }
    };
    check_bits(weight_bits, "weight_bits");
    check_bits(act_bits, "act_bits");
    if (groups < 0) throw std::invalid_argument("groups must be >= 0 (0 = auto)");
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (!(clip_quantile > 0.5) || clip_quantile > 1.0) {
        throw std::invalid_argument("clip_quantile must lie in (0.5, 1]");
    }
}

int BlockConfig::resolve_groups(int num_timesteps) const {
    const int g = groups == 0 ? std::max(1, num_timesteps / 10) : groups;
    if (g > num_timesteps) {
        throw std::invalid_argument("groups exceeds the number of timesteps");
    }
    return g;
}

QuantizedStack calibrate_stack(const std::vector<DitBlock>& blocks, const TraceSet& trace,
                               const BlockConfig& cfg) {
    cfg.validate();
    if (blocks.empty()) throw std::invalid_argument("calibrate_stack: no blocks");
    for (const DitBlock& b : blocks) b.validate();
    const int T = trace.num_timesteps;
    if (T < 1) throw DataError("calibration trace is empty");
    const int G = cfg.resolve_groups(T);

    struct HtgTap {
        const CalibrationTrace* rec = nullptr;
        std::vector<ShiftVector> shifts;
        std::vector<GroupShift> group_shifts;
        ScaleVector scale;
    };
    // Tap order per block: qkv, fc1, o_proj.
    std::vector<std::array<HtgTap, 3>> taps(blocks.size());
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const std::string p = block_prefix(bi);
        taps[bi][0].rec = &need_layer(trace, p + "attn.qkv.in");
        taps[bi][1].rec = &need_layer(trace, p + "mlp.fc1.in");
        taps[bi][2].rec = &need_layer(trace, p + "attn.o_proj.in");
        for (HtgTap& tap : taps[bi]) {
            tap.shifts = record_shifts(*tap.rec, cfg.enable_shift);
        }
    }

    // One temporal plan for the whole stack, clustered on the concatenation
    // of every smoothed layer's shift vectors.
    std::vector<ShiftVector> concat;
    concat.reserve(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        ShiftVector sv{t, {}};
        for (const auto& block_taps : taps) {
            for (const HtgTap& tap : block_taps) {
                const ChannelVector& z = tap.shifts[static_cast<std::size_t>(t - 1)].values;
                sv.values.insert(sv.values.end(), z.begin(), z.end());
            }
        }
        concat.push_back(std::move(sv));
    }
    QuantizedStack out;
    out.cfg = cfg;
    out.plan = cluster_timesteps(concat, G, cfg.linkage);

    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const DitBlock& block = blocks[bi];
        const std::string p = block_prefix(bi);
        const auto h = static_cast<std::size_t>(block.hidden);

        for (HtgTap& tap : taps[bi]) {
            tap.group_shifts = group_mean_shift(tap.shifts, out.plan);
        }
        const Tensor2D* weights[3] = {&block.w_qkv, &block.w_fc1, &block.w_o};
        for (int i = 0; i < 3; ++i) {
            HtgTap& tap = taps[bi][static_cast<std::size_t>(i)];
            if (cfg.enable_scale) {
                tap.scale = derive_scale(ema_magnitudes(*tap.rec, tap.shifts, cfg.alpha),
                                         *weights[i]);
            } else {
                tap.scale = unit_scale(weights[i]->rows());
            }
        }
        HtgTap& qkv_tap = taps[bi][0];
        HtgTap& fc1_tap = taps[bi][1];
        HtgTap& o_tap = taps[bi][2];

        QuantizedDitBlock qb;
        qb.hidden = block.hidden;
        qb.heads = block.heads;
        qb.cond_dim = block.cond_dim;

        qb.qkv = reparam_linear(block.w_qkv, block.b_qkv, qkv_tap.scale, qkv_tap.group_shifts);
        qb.fc1 = reparam_linear(block.w_fc1, block.b_fc1, fc1_tap.scale, fc1_tap.group_shifts);
        qb.o_proj = reparam_linear(block.w_o, block.b_o, o_tap.scale, o_tap.group_shifts);
        qb.o_proj_fold = fold_into_dequant(plain_dequant_affine(1.0, 0.0, h), o_tap.scale,
                                           o_tap.group_shifts);

        if (!block.modulation) {
            qb.adaln1 = reparam_adaln(block.adaln1, qkv_tap.scale, qkv_tap.group_shifts);
            qb.adaln2 = reparam_adaln(block.adaln2, fc1_tap.scale, fc1_tap.group_shifts);
        } else {
            ReparamModulation mod;
            mod.weight = block.modulation->weight;
            // Column blocks [gamma1 | beta1 | gamma2 | beta2] absorb 1/s of
            // the layer each AdaLN feeds.
            for (std::size_t r = 0; r < mod.weight.rows(); ++r) {
                for (std::size_t i = 0; i < h; ++i) {
                    mod.weight.at(r, i) /= qkv_tap.scale.values[i];
                    mod.weight.at(r, h + i) /= qkv_tap.scale.values[i];
                    mod.weight.at(r, 2 * h + i) /= fc1_tap.scale.values[i];
                    mod.weight.at(r, 3 * h + i) /= fc1_tap.scale.values[i];
                }
            }
            for (int g = 0; g < G; ++g) {
                ChannelVector bias(4 * h);
                const ChannelVector& z1 = qkv_tap.group_shifts[static_cast<std::size_t>(g)].values;
                const ChannelVector& z2 = fc1_tap.group_shifts[static_cast<std::size_t>(g)].values;
                const ChannelVector& b = block.modulation->bias;
                for (std::size_t i = 0; i < h; ++i) {
                    bias[i] = b[i] / qkv_tap.scale.values[i];
                    bias[h + i] = (b[h + i] - z1[i]) / qkv_tap.scale.values[i];
                    bias[2 * h + i] = b[2 * h + i] / fc1_tap.scale.values[i];
                    bias[3 * h + i] = (b[3 * h + i] - z2[i]) / fc1_tap.scale.values[i];
                }
                mod.biases.push_back(std::move(bias));
            }
            mod.base_gain1.resize(h);
            mod.base_gain2.resize(h);
            for (std::size_t i = 0; i < h; ++i) {
                mod.base_gain1[i] = 1.0 / qkv_tap.scale.values[i];
                mod.base_gain2[i] = 1.0 / fc1_tap.scale.values[i];
            }
            mod.weight_qparams = maybe_fit_weight(mod.weight, cfg.weight_bits);
            mod.act_qparams = fit_plain_act(need_layer(trace, p + "mod.in"), cfg.act_bits,
                                            cfg.clip_quantile);
            qb.modulation = std::move(mod);
        }

        qb.qkv.weight_qparams = maybe_fit_weight(qb.qkv.weight, cfg.weight_bits);
        qb.fc1.weight_qparams = maybe_fit_weight(qb.fc1.weight, cfg.weight_bits);
        qb.o_proj.weight_qparams = maybe_fit_weight(qb.o_proj.weight, cfg.weight_bits);
        qb.qkv.act_qparams = fit_htg_act(*qkv_tap.rec, cfg.act_bits, cfg.clip_quantile, out.plan,
                                         qkv_tap.group_shifts, qkv_tap.scale);
        qb.fc1.act_qparams = fit_htg_act(*fc1_tap.rec, cfg.act_bits, cfg.clip_quantile, out.plan,
                                         fc1_tap.group_shifts, fc1_tap.scale);
        qb.o_proj.act_qparams = fit_htg_act(*o_tap.rec, cfg.act_bits, cfg.clip_quantile, out.plan,
                                            o_tap.group_shifts, o_tap.scale);

        qb.attn.q = fit_plain_act(need_layer(trace, p + "attn.q"), cfg.act_bits, cfg.clip_quantile);
        qb.attn.k = fit_plain_act(need_layer(trace, p + "attn.k"), cfg.act_bits, cfg.clip_quantile);
        qb.attn.v = fit_plain_act(need_layer(trace, p + "attn.v"), cfg.act_bits, cfg.clip_quantile);
        qb.attn.softmax = fit_plain_act(need_layer(trace, p + "attn.softmax"), cfg.act_bits,
                                        cfg.clip_quantile);

        qb.fc2.weight = block.w_fc2;
        qb.fc2.bias = block.b_fc2;
        qb.fc2.weight_qparams = maybe_fit_weight(block.w_fc2, cfg.weight_bits);
        qb.fc2.act_qparams = fit_plain_act(need_layer(trace, p + "mlp.fc2.in"), cfg.act_bits,
                                           cfg.clip_quantile);

        out.blocks.push_back(std::move(qb));
    }
    return out;
}

QuantizedStack calibrate_block(const DitBlock& block, const TraceSet& trace,
                               const BlockConfig& cfg) {
    return calibrate_stack({block}, trace, cfg);
}

namespace {

Tensor2D forward_quant_block(const QuantizedDitBlock& qb, const TemporalPlan& plan,
                             const Tensor2D& z, int t, QuantMode mode, OutTaps* outs) {
    const std::size_t group = static_cast<std::size_t>(group_of(t, plan) - 1);
    const ResolvedAdaln ad = resolve_quant_adaln(qb, t, group, mode);

    Tensor2D x1 = affine_after_norm(z, ad.gain1, ad.beta1);
    x1 = maybe_fq(x1, qb.qkv.act_qparams, mode);
    Tensor2D y_qkv = linear_forward(x1, maybe_fq_weight(qb.qkv.weight, qb.qkv.weight_qparams, mode),
                                    qb.qkv.biases[group]);

    Tensor2D q, k, v;
    split_qkv(y_qkv, qb.hidden, q, k, v);

    Tensor2D x_o;
    if (mode == QuantMode::Simulate && qb.attn.q.enabled()) {
        const Tensor2D raw = attention_int(q, k, v, qb.heads, qb.attn);
        // Fuse the AV dequant step width into the shift/scale affine.
        DequantAffine fused = qb.o_proj_fold;
        const double deq = qb.attn.softmax.delta * qb.attn.v.delta;
        for (double& s : fused.scale) s *= deq;
        x_o = apply_dequant_affine(fused, raw, group);
    } else {
        const Tensor2D attn = attention_float(q, k, v, qb.heads);
        x_o = apply_dequant_affine(qb.o_proj_fold, attn, group);
    }
    x_o = maybe_fq(x_o, qb.o_proj.act_qparams, mode);
    Tensor2D y_attn = linear_forward(
        x_o, maybe_fq_weight(qb.o_proj.weight, qb.o_proj.weight_qparams, mode),
        qb.o_proj.biases[group]);
    Tensor2D h = residual_add(z, y_attn);

    Tensor2D x2 = affine_after_norm(h, ad.gain2, ad.beta2);
    x2 = maybe_fq(x2, qb.fc1.act_qparams, mode);
    Tensor2D y_fc1 = linear_forward(x2, maybe_fq_weight(qb.fc1.weight, qb.fc1.weight_qparams, mode),
                                    qb.fc1.biases[group]);
    Tensor2D act = gelu(y_fc1);
    act = maybe_fq(act, qb.fc2.act_qparams, mode);
    Tensor2D y_fc2 = linear_forward(act, maybe_fq_weight(qb.fc2.weight, qb.fc2.weight_qparams, mode),
                                    qb.fc2.bias);
    Tensor2D out = residual_add(h, y_fc2);

    if (outs) {
        outs->qkv_out = std::move(y_qkv);
        outs->attn_out = std::move(y_attn);
        outs->fc1_out = std::move(y_fc1);
        outs->fc2_out = std::move(y_fc2);
    }
    return out;
}

}  // namespace

Tensor2D forward_quant_sim(const QuantizedStack& stack, const Tensor2D& z, int t, QuantMode mode,
                           std::vector<OutTaps>* outs) {
    if (stack.blocks.empty()) throw std::invalid_argument("forward_quant_sim: no blocks");
    Tensor2D x = z;
    for (const QuantizedDitBlock& qb : stack.blocks) {
        OutTaps ot;
        x = forward_quant_block(qb, stack.plan, x, t, mode, outs ? &ot : nullptr);
        if (outs) outs->push_back(std::move(ot));
    }
    return x;
}

std::vector<std::string> compare_tap_names(std::size_t num_blocks) {
    std::vector<std::string> names;
    for (std::size_t bi = 0; bi < num_blocks; ++bi) {
        const std::string p = block_prefix(bi);
        names.push_back(p + "attn.qkv.out");
        names.push_back(p + "attn.out");
        names.push_back(p + "mlp.fc1.out");
        names.push_back(p + "mlp.fc2.out");
    }
    names.emplace_back("output");
    return names;
}

std::vector<TapReport> compare_paths(const std::vector<DitBlock>& blocks,
                                     const QuantizedStack& stack,
                                     const std::vector<Tensor2D>& inputs_per_t) {
    if (blocks.size() != stack.blocks.size()) {
        throw std::invalid_argument("compare_paths: block counts differ");
    }
    const int T = stack.plan.num_timesteps;
    if (inputs_per_t.size() != static_cast<std::size_t>(T)) {
        throw std::invalid_argument("compare_paths: need one input per timestep");
    }
    const std::vector<std::string> names = compare_tap_names(blocks.size());
    std::vector<TapReport> rows;
    rows.reserve(names.size() * static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        const Tensor2D& z = inputs_per_t[static_cast<std::size_t>(t - 1)];
        std::vector<OutTaps> f_outs, q_outs;
        const Tensor2D y_f = forward_float_stack(blocks, z, t, &f_outs);
        const Tensor2D y_q = forward_quant_sim(stack, z, t, QuantMode::Simulate, &q_outs);
        std::size_t name_idx = 0;
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
            const Tensor2D* f[] = {&f_outs[bi].qkv_out, &f_outs[bi].attn_out,
                                   &f_outs[bi].fc1_out, &f_outs[bi].fc2_out};
            const Tensor2D* q[] = {&q_outs[bi].qkv_out, &q_outs[bi].attn_out,
                                   &q_outs[bi].fc1_out, &q_outs[bi].fc2_out};
            for (int i = 0; i < 4; ++i) {
                rows.push_back(TapReport{names[name_idx++], t, error_between(*f[i], *q[i])});
            }
        }
        rows.push_back(TapReport{names[name_idx], t, error_between(y_f, y_q)});
    }
    return rows;
}

std::size_t storage_overhead(const QuantizedStack& stack) {
    const std::size_t extra_groups = static_cast<std::size_t>(stack.plan.num_groups - 1);
    std::size_t entries = 0;
    for (const QuantizedDitBlock& qb : stack.blocks) {
        const auto h = static_cast<std::size_t>(qb.hidden);
        entries += qb.qkv.biases.front().size();    // 3h
        entries += qb.fc1.biases.front().size();    // 4h
        entries += qb.o_proj.biases.front().size(); // h
        entries += h;                               // first AdaLN beta set
        entries += h;                               // second AdaLN beta set
        entries += h;                               // dequant offset set
    }
    return extra_groups * entries * 4;  // 32-bit reals on disk
}

double end_to_end_sqnr_db(const std::vector<DitBlock>& blocks, const QuantizedStack& stack,
                          const std::vector<Tensor2D>& inputs_per_t) {
    const int T = stack.plan.num_timesteps;
    if (inputs_per_t.size() != static_cast<std::size_t>(T)) {
        throw std::invalid_argument("end_to_end_sqnr_db: need one input per timestep");
    }
    double sig = 0.0;
    double err = 0.0;
    for (int t = 1; t <= T; ++t) {
        const Tensor2D& z = inputs_per_t[static_cast<std::size_t>(t - 1)];
        const Tensor2D y_f = forward_float_stack(blocks, z, t);
        const Tensor2D y_q = forward_quant_sim(stack, z, t, QuantMode::Simulate);
        for (std::size_t i = 0; i < y_f.size(); ++i) {
            const double d = y_q.data()[i] - y_f.data()[i];
            sig += y_f.data()[i] * y_f.data()[i];
            err += d * d;
        }
    }
    return err == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(sig / err);
}

}  // namespace htgq
