// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "htgq/block.hpp"
#include "htgq/clustering.hpp"
#include "htgq/quantizer.hpp"
#include "htgq/reparam.hpp"
#include "htgq/trace.hpp"

namespace htgq {

/// Calibration configuration. groups == 0 resolves to max(1, T / 10) once the
/// trace length is known. Bit widths of 0 disable the corresponding fake
/// quantization (float bundle). enable_shift / enable_scale are the ablation
/// switches for the two smoothing operations.
struct BlockConfig {
    int weight_bits = 8;
    int act_bits = 8;
    int groups = 0;
    double alpha = 0.99;
    Linkage linkage = Linkage::Ward;
    double clip_quantile = 1.0;
    bool enable_shift = true;   // op1: temporally-grouped channel-wise shifting
    bool enable_scale = true;   // op2: temporally-aggregated channel-wise scaling

    void validate() const;
    int resolve_groups(int num_timesteps) const;
};

/// Per-tensor params of the integer attention matmul operands.
struct AttentionQuant {
    QuantParams q, k, v, softmax;
};

/// Plain quantized linear (no smoothing): fc2 and the modulation layer.
struct QuantLinear {
    Tensor2D weight;
    ChannelVector bias;
    PerChannelParams weight_qparams;
    QuantParams act_qparams;
};

/// Modulation linear with 1/s absorbed into the gamma/beta column blocks and
/// the group shift absorbed into per-group biases.
struct ReparamModulation {
    Tensor2D weight;                    // columns rescaled by 1/s
    std::vector<ChannelVector> biases;  // one per group
    ChannelVector base_gain1;           // 1/s for the first AdaLN
    ChannelVector base_gain2;           // 1/s for the second AdaLN
    PerChannelParams weight_qparams;
    QuantParams act_qparams;
};

struct QuantizedDitBlock {
    int hidden = 0;
    int heads = 0;
    int cond_dim = 0;
    ReparamAdaLN adaln1, adaln2;                 // static path
    std::optional<ReparamModulation> modulation;  // modulated path
    SmoothedLinear qkv, fc1, o_proj;
    /// Float-form fold (scale = 1/s, offsets = z_g / s). The attention dequant
    /// step widths are composed in at simulation time and when serializing.
    DequantAffine o_proj_fold;
    AttentionQuant attn;
    QuantLinear fc2;
};

struct QuantizedStack {
    TemporalPlan plan;
    BlockConfig cfg;
    std::vector<QuantizedDitBlock> blocks;
};

/// Runs the whole calibration pipeline from tap records: per-timestep shifts,
/// temporal plan, group shifts and compensated biases, EMA-aggregated scales,
/// weight rescaling, absorption into AdaLN / the attention dequant, and
/// quantizer fitting for every weight and activation tap.
QuantizedStack calibrate_stack(const std::vector<DitBlock>& blocks, const TraceSet& trace,
                               const BlockConfig& cfg);

/// Single-block convenience wrapper.
QuantizedStack calibrate_block(const DitBlock& block, const TraceSet& trace,
                               const BlockConfig& cfg);

enum class QuantMode {
    Simulate,  // fake-quantize taps/weights, integer attention matmuls
    Bypass,    // transformed float path, no quantization anywhere
};

Tensor2D forward_quant_sim(const QuantizedStack& stack, const Tensor2D& z, int t,
                           QuantMode mode = QuantMode::Simulate,
                           std::vector<OutTaps>* outs = nullptr);

struct TapReport {
    std::string layer;
    int timestep = 0;
    ErrorReport err;
};

/// Compares layer outputs and the block output between the float and the
/// quantized path for every timestep's input. Row count is taps x timesteps,
/// with "output" as the end-to-end tap.
std::vector<TapReport> compare_paths(const std::vector<DitBlock>& blocks,
                                     const QuantizedStack& stack,
                                     const std::vector<Tensor2D>& inputs_per_t);

/// Names of the compared taps, in report order.
std::vector<std::string> compare_tap_names(std::size_t num_blocks);

/// Extra bytes versus a single-group plan: (G - 1) * 4 bytes per entry of
/// every per-group bias / beta / dequant-offset vector.
std::size_t storage_overhead(const QuantizedStack& stack);

/// Pooled end-to-end SQNR over all timesteps (block output vs float output).
double end_to_end_sqnr_db(const std::vector<DitBlock>& blocks, const QuantizedStack& stack,
                          const std::vector<Tensor2D>& inputs_per_t);

}  // namespace htgq
