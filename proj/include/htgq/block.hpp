// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "htgq/reparam.hpp"
#include "htgq/tensor.hpp"
#include "htgq/trace.hpp"

namespace htgq {

/// Optional conditioning source: a linear layer mapping a timestep embedding
/// to the packed AdaLN parameters [gamma1 | beta1 | gamma2 | beta2].
struct ModulationLinear {
    Tensor2D weight;     // cond_dim x 4*hidden
    ChannelVector bias;  // 4*hidden
};

/// DiT-style transformer block: AdaLN -> qkv -> multi-head attention ->
/// o_proj -> residual -> AdaLN -> fc1 -> GELU -> fc2 -> residual. When a
/// modulation linear is present, the AdaLN gamma/beta come from it per
/// timestep instead of the static parameters.
struct DitBlock {
    int hidden = 0;
    int heads = 0;
    int cond_dim = 0;
    AdaLNParams adaln1, adaln2;
    Tensor2D w_qkv;  // hidden x 3*hidden
    ChannelVector b_qkv;
    Tensor2D w_o;    // hidden x hidden
    ChannelVector b_o;
    Tensor2D w_fc1;  // hidden x 4*hidden
    ChannelVector b_fc1;
    Tensor2D w_fc2;  // 4*hidden x hidden
    ChannelVector b_fc2;
    std::optional<ModulationLinear> modulation;

    void validate() const;
};

/// Sinusoidal embedding of a timestep index.
ChannelVector timestep_embedding(int t, int dim);

/// Resolved AdaLN parameters for one timestep (static, or modulation output).
struct AdaLNPair {
    AdaLNParams first;
    AdaLNParams second;
    ChannelVector mod_in;  // conditioning row when modulation is present
};
AdaLNPair resolve_adaln(const DitBlock& block, int t);

DitBlock make_random_block(std::uint64_t seed, int hidden, int heads, bool with_modulation = false,
                           int cond_dim = 0);

/// Intermediate activations of one float forward, in block order.
struct BlockTaps {
    Tensor2D qkv_in, q, k, v, softmax, o_proj_in, fc1_in, fc2_in;
    ChannelVector mod_in;
};

/// Layer outputs compared between the float and the quantized paths.
struct OutTaps {
    Tensor2D qkv_out, attn_out, fc1_out, fc2_out;
};

Tensor2D forward_float(const DitBlock& block, const Tensor2D& z, int t,
                       BlockTaps* taps = nullptr, OutTaps* outs = nullptr);

/// Chains the blocks of a stack; per-block taps/outs are appended when the
/// vectors are non-null.
Tensor2D forward_float_stack(const std::vector<DitBlock>& blocks, const Tensor2D& z, int t,
                             std::vector<OutTaps>* outs = nullptr);

/// Row-softmax in full precision.
Tensor2D softmax_rows(const Tensor2D& x);

Tensor2D gelu(const Tensor2D& x);
Tensor2D residual_add(const Tensor2D& a, const Tensor2D& b);
Tensor2D linear_forward(const Tensor2D& x, const Tensor2D& w, const ChannelVector& b);
void split_qkv(const Tensor2D& qkv, int hidden, Tensor2D& q, Tensor2D& k, Tensor2D& v);

/// Float multi-head attention from pre-split Q/K/V (n x hidden each);
/// returns the concatenated head outputs (the o_proj input).
Tensor2D attention_float(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v, int heads,
                         Tensor2D* softmax_taps = nullptr);

/// Tap layer ids of one block under prefix "blocks.<i>.".
std::vector<std::string> block_tap_ids(int block_index, bool with_modulation);

inline constexpr const char* kInputLayerId = "input";

/// Runs the float stack over every timestep's pooled calibration input
/// (sample by sample, `tokens` rows each) and records all tap activations.
/// The returned trace also carries the input record itself.
TraceSet capture_trace(const std::vector<DitBlock>& blocks, const CalibrationTrace& input,
                       int tokens);

inline constexpr const char* kModelSchema = "htg-model/1";

void save_model(const std::vector<DitBlock>& blocks, const std::filesystem::path& dir);
std::vector<DitBlock> load_model(const std::filesystem::path& dir);

}  // namespace htgq
