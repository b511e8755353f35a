// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/block.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace htgq {

Tensor2D gelu(const Tensor2D& x) {
    Tensor2D out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    return out;
}

Tensor2D residual_add(const Tensor2D& a, const Tensor2D& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument("residual add: shape mismatch");
    }
    Tensor2D out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = a.data()[i] + b.data()[i];
    }
    return out;
}

Tensor2D linear_forward(const Tensor2D& x, const Tensor2D& w, const ChannelVector& b) {
    Tensor2D out = matmul(x, w);
    if (b.size() != out.cols()) {
        throw std::invalid_argument("linear: bias length mismatch");
    }
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out.at(r, c) += b[c];
        }
    }
    return out;
}

void split_qkv(const Tensor2D& qkv, int hidden, Tensor2D& q, Tensor2D& k, Tensor2D& v) {
    if (qkv.cols() != 3 * static_cast<std::size_t>(hidden)) {
        throw std::invalid_argument("split_qkv: expected 3 * hidden columns");
    }
    const auto h = static_cast<std::size_t>(hidden);
    q = Tensor2D(qkv.rows(), h);
    k = Tensor2D(qkv.rows(), h);
    v = Tensor2D(qkv.rows(), h);
    for (std::size_t r = 0; r < qkv.rows(); ++r) {
        for (std::size_t c = 0; c < h; ++c) {
            q.at(r, c) = qkv.at(r, c);
            k.at(r, c) = qkv.at(r, c + h);
            v.at(r, c) = qkv.at(r, c + 2 * h);
        }
    }
}

namespace {

Tensor2D head_slice(const Tensor2D& x, int head, int head_dim) {
    const auto d = static_cast<std::size_t>(head_dim);
    const auto off = static_cast<std::size_t>(head) * d;
    Tensor2D out(x.rows(), d);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            out.at(r, c) = x.at(r, off + c);
        }
    }
    return out;
}

ChannelVector slice(const ChannelVector& v, std::size_t off, std::size_t len) {
    return ChannelVector(v.begin() + static_cast<std::ptrdiff_t>(off),
                         v.begin() + static_cast<std::ptrdiff_t>(off + len));
}

}  // namespace

void DitBlock::validate() const {
    const auto h = static_cast<std::size_t>(hidden);
    if (hidden <= 0 || heads <= 0 || hidden % heads != 0) {
        throw std::invalid_argument("DitBlock: hidden must be a positive multiple of heads");
    }
    if (w_qkv.rows() != h || w_qkv.cols() != 3 * h || b_qkv.size() != 3 * h ||
        w_o.rows() != h || w_o.cols() != h || b_o.size() != h ||
        w_fc1.rows() != h || w_fc1.cols() != 4 * h || b_fc1.size() != 4 * h ||
        w_fc2.rows() != 4 * h || w_fc2.cols() != h || b_fc2.size() != h) {
        throw std::invalid_argument("DitBlock: weight shapes inconsistent with hidden size");
    }
    if (adaln1.gamma.size() != h || adaln1.beta.size() != h || adaln2.gamma.size() != h ||
        adaln2.beta.size() != h) {
        throw std::invalid_argument("DitBlock: AdaLN parameter shapes inconsistent");
    }
    if (modulation) {
        if (cond_dim <= 0 || modulation->weight.rows() != static_cast<std::size_t>(cond_dim) ||
            modulation->weight.cols() != 4 * h || modulation->bias.size() != 4 * h) {
            throw std::invalid_argument("DitBlock: modulation shapes inconsistent");
        }
    }
}

ChannelVector timestep_embedding(int t, int dim) {
    if (dim <= 0) throw std::invalid_argument("timestep_embedding: dim must be positive");
    ChannelVector emb(static_cast<std::size_t>(dim), 0.0);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        emb[static_cast<std::size_t>(i)] = std::sin(t * freq);
        emb[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
    }
    return emb;
}

AdaLNPair resolve_adaln(const DitBlock& block, int t) {
    AdaLNPair out;
    if (!block.modulation) {
        out.first = block.adaln1;
        out.second = block.adaln2;
        return out;
    }
    const auto h = static_cast<std::size_t>(block.hidden);
    out.mod_in = timestep_embedding(t, block.cond_dim);
    ChannelVector m = vec_matmul(out.mod_in, block.modulation->weight);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += block.modulation->bias[i];
    out.first.gamma = slice(m, 0, h);
    out.first.beta = slice(m, h, h);
    out.second.gamma = slice(m, 2 * h, h);
    out.second.beta = slice(m, 3 * h, h);
    return out;
}

DitBlock make_random_block(std::uint64_t seed, int hidden, int heads, bool with_modulation,
                           int cond_dim) {
    DitBlock b;
    b.hidden = hidden;
    b.heads = heads;
    b.cond_dim = with_modulation ? (cond_dim > 0 ? cond_dim : hidden) : 0;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto vec = [&](std::size_t n, double std_dev) {
        ChannelVector v(n);
        for (double& x : v) x = gauss(rng) * std_dev;
        return v;
    };
    auto mat = [&](std::size_t r, std::size_t c) {
        Tensor2D m(r, c);
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(r));
        for (double& x : m.data()) x = gauss(rng) * std_dev;
        return m;
    };

    const auto h = static_cast<std::size_t>(hidden);
    // A few channels get large gamma/beta; those make the post-AdaLN
    // activations outlier-bearing the way trained blocks are.
    auto adaln_vec = [&](double base_std, double outlier_std) {
        ChannelVector v = vec(h, base_std);
        const std::size_t heavy = std::max<std::size_t>(1, h / 16);
        std::uniform_int_distribution<std::size_t> pick(0, h - 1);
        for (std::size_t i = 0; i < heavy; ++i) {
            v[pick(rng)] = gauss(rng) * outlier_std;
        }
        return v;
    };
    b.adaln1 = {adaln_vec(0.3, 12.0), adaln_vec(0.3, 20.0)};
    b.adaln2 = {adaln_vec(0.3, 12.0), adaln_vec(0.3, 20.0)};
    b.w_qkv = mat(h, 3 * h);
    b.b_qkv = vec(3 * h, 0.02);
    b.w_o = mat(h, h);
    b.b_o = vec(h, 0.02);
    b.w_fc1 = mat(h, 4 * h);
    b.b_fc1 = vec(4 * h, 0.02);
    b.w_fc2 = mat(4 * h, h);
    b.b_fc2 = vec(h, 0.02);
    // Trained networks keep channel products in scale: rows consuming a
    // large-magnitude channel carry inversely small weights.
    auto coadapt_rows = [&](const AdaLNParams& a, Tensor2D& w) {
        for (std::size_t c = 0; c < h; ++c) {
            const double mag = std::sqrt((1.0 + a.gamma[c]) * (1.0 + a.gamma[c]) +
                                         a.beta[c] * a.beta[c]);
            const double f = std::min(1.0, 1.5 / mag);
            for (std::size_t j = 0; j < w.cols(); ++j) w.at(c, j) *= f;
        }
    };
    coadapt_rows(b.adaln1, b.w_qkv);
    coadapt_rows(b.adaln2, b.w_fc1);
    if (with_modulation) {
        // The static vectors become the modulation bias, so the per-timestep
        // gamma/beta wander around the same heavy-tailed operating point.
        ModulationLinear mod;
        mod.weight = mat(static_cast<std::size_t>(b.cond_dim), 4 * h);
        for (double& x : mod.weight.data()) x *= 0.3;
        mod.bias.reserve(4 * h);
        mod.bias.insert(mod.bias.end(), b.adaln1.gamma.begin(), b.adaln1.gamma.end());
        mod.bias.insert(mod.bias.end(), b.adaln1.beta.begin(), b.adaln1.beta.end());
        mod.bias.insert(mod.bias.end(), b.adaln2.gamma.begin(), b.adaln2.gamma.end());
        mod.bias.insert(mod.bias.end(), b.adaln2.beta.begin(), b.adaln2.beta.end());
        b.modulation = std::move(mod);
    }
    b.validate();
    return b;
}

Tensor2D softmax_rows(const Tensor2D& x) {
    Tensor2D out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double m = x.at(r, 0);
        for (std::size_t c = 1; c < x.cols(); ++c) m = std::max(m, x.at(r, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const double e = std::exp(x.at(r, c) - m);
            out.at(r, c) = e;
            sum += e;
        }
        for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) /= sum;
    }
    return out;
}

Tensor2D attention_float(const Tensor2D& q, const Tensor2D& k, const Tensor2D& v, int heads,
                         Tensor2D* softmax_taps) {
    const int hidden = static_cast<int>(q.cols());
    const int head_dim = hidden / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const std::size_t n = q.rows();

    Tensor2D out(n, q.cols());
    if (softmax_taps) *softmax_taps = Tensor2D(static_cast<std::size_t>(heads) * n, n);
    for (int head = 0; head < heads; ++head) {
        const Tensor2D qh = head_slice(q, head, head_dim);
        const Tensor2D kh = head_slice(k, head, head_dim);
        const Tensor2D vh = head_slice(v, head, head_dim);
        Tensor2D scores(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < qh.cols(); ++d) {
                    acc += qh.at(i, d) * kh.at(j, d);
                }
                scores.at(i, j) = acc * inv_sqrt_d;
            }
        }
        const Tensor2D probs = softmax_rows(scores);
        if (softmax_taps) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    softmax_taps->at(static_cast<std::size_t>(head) * n + i, j) = probs.at(i, j);
                }
            }
        }
        const Tensor2D oh = matmul(probs, vh);
        const auto off = static_cast<std::size_t>(head) * static_cast<std::size_t>(head_dim);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < oh.cols(); ++d) {
                out.at(i, off + d) = oh.at(i, d);
            }
        }
    }
    return out;
}

Tensor2D forward_float(const DitBlock& block, const Tensor2D& z, int t, BlockTaps* taps,
                       OutTaps* outs) {
    block.validate();
    if (z.cols() != static_cast<std::size_t>(block.hidden)) {
        throw std::invalid_argument("forward_float: input channel count mismatch");
    }
    const AdaLNPair params = resolve_adaln(block, t);

    Tensor2D x1 = adaln_forward(params.first, z);
    Tensor2D qkv = linear_forward(x1, block.w_qkv, block.b_qkv);
    Tensor2D q, k, v;
    split_qkv(qkv, block.hidden, q, k, v);
    Tensor2D attn_in = attention_float(q, k, v, block.heads, taps ? &taps->softmax : nullptr);
    Tensor2D attn_out = linear_forward(attn_in, block.w_o, block.b_o);
    Tensor2D h = residual_add(z, attn_out);

    Tensor2D x2 = adaln_forward(params.second, h);
    Tensor2D f1 = linear_forward(x2, block.w_fc1, block.b_fc1);
    Tensor2D act = gelu(f1);
    Tensor2D f2 = linear_forward(act, block.w_fc2, block.b_fc2);
    Tensor2D out = residual_add(h, f2);

    if (taps) {
        taps->qkv_in = std::move(x1);
        taps->q = std::move(q);
        taps->k = std::move(k);
        taps->v = std::move(v);
        taps->o_proj_in = attn_in;
        taps->fc1_in = std::move(x2);
        taps->fc2_in = std::move(act);
        taps->mod_in = params.mod_in;
    }
    if (outs) {
        outs->qkv_out = std::move(qkv);
        outs->attn_out = std::move(attn_out);
        outs->fc1_out = std::move(f1);
        outs->fc2_out = std::move(f2);
    }
    return out;
}

Tensor2D forward_float_stack(const std::vector<DitBlock>& blocks, const Tensor2D& z, int t,
                             std::vector<OutTaps>* outs) {
    if (blocks.empty()) throw std::invalid_argument("forward_float_stack: no blocks");
    Tensor2D x = z;
    for (const DitBlock& b : blocks) {
        OutTaps ot;
        x = forward_float(b, x, t, nullptr, outs ? &ot : nullptr);
        if (outs) outs->push_back(std::move(ot));
    }
    return x;
}

std::vector<std::string> block_tap_ids(int block_index, bool with_modulation) {
    const std::string p = "blocks." + std::to_string(block_index) + ".";
    std::vector<std::string> ids = {
        p + "attn.qkv.in", p + "attn.q",       p + "attn.k",    p + "attn.v",
        p + "attn.softmax", p + "attn.o_proj.in", p + "mlp.fc1.in", p + "mlp.fc2.in",
    };
    if (with_modulation) ids.push_back(p + "mod.in");
    return ids;
}

TraceSet capture_trace(const std::vector<DitBlock>& blocks, const CalibrationTrace& input,
                       int tokens) {
    if (blocks.empty()) throw std::invalid_argument("capture_trace: no blocks");
    if (input.kind != RecordKind::Full) {
        throw DataError("capture_trace: input record must hold full tensors");
    }
    for (const DitBlock& b : blocks) b.validate();
    const int T = input.num_timesteps;
    const std::size_t rows = input.tensors.front().rows();
    if (tokens <= 0 || rows % static_cast<std::size_t>(tokens) != 0) {
        throw std::invalid_argument("capture_trace: record rows must be a multiple of tokens");
    }
    const std::size_t samples = rows / static_cast<std::size_t>(tokens);

    TraceSet out;
    out.num_timesteps = T;
    out.layers.emplace(kInputLayerId, input);

    auto make_layer = [&](const std::string& id) {
        CalibrationTrace tr;
        tr.layer_id = id;
        tr.num_timesteps = T;
        tr.kind = RecordKind::Full;
        tr.tensors.reserve(static_cast<std::size_t>(T));
        return tr;
    };

    // One record accumulator per tap layer; rows from all samples at a given
    // timestep are pooled into one tensor.
    std::vector<std::vector<CalibrationTrace>> taps_per_block(blocks.size());
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        for (const std::string& id : block_tap_ids(static_cast<int>(bi),
                                                   blocks[bi].modulation.has_value())) {
            taps_per_block[bi].push_back(make_layer(id));
        }
    }

    auto paste_rows = [](Tensor2D& dst, const Tensor2D& src, std::size_t row_offset) {
        std::copy(src.data().begin(), src.data().end(),
                  dst.data().begin() + static_cast<std::ptrdiff_t>(row_offset * dst.cols()));
    };

    for (int t = 1; t <= T; ++t) {
        const Tensor2D& pooled = input.tensors[static_cast<std::size_t>(t - 1)];
        // Pooled tap tensors for this timestep, preallocated once the first
        // sample tells us the shapes.
        std::vector<std::vector<Tensor2D>> collected(blocks.size());
        std::vector<ChannelVector> mod_rows(blocks.size());
        for (std::size_t s = 0; s < samples; ++s) {
            Tensor2D x = pooled.row_block(s * static_cast<std::size_t>(tokens),
                                          static_cast<std::size_t>(tokens));
            for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
                BlockTaps bt;
                x = forward_float(blocks[bi], x, t, &bt, nullptr);
                const Tensor2D* vals[] = {&bt.qkv_in, &bt.q,       &bt.k,      &bt.v,
                                          &bt.softmax, &bt.o_proj_in, &bt.fc1_in, &bt.fc2_in};
                if (s == 0) {
                    for (const Tensor2D* v : vals) {
                        collected[bi].emplace_back(v->rows() * samples, v->cols());
                    }
                }
                for (std::size_t vi = 0; vi < std::size(vals); ++vi) {
                    paste_rows(collected[bi][vi], *vals[vi], s * vals[vi]->rows());
                }
                mod_rows[bi] = std::move(bt.mod_in);
            }
        }
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
            auto& tap_traces = taps_per_block[bi];
            for (std::size_t vi = 0; vi < collected[bi].size(); ++vi) {
                tap_traces[vi].tensors.push_back(std::move(collected[bi][vi]));
            }
            if (blocks[bi].modulation) {
                // The conditioning row only depends on t; one row per record.
                tap_traces.back().tensors.emplace_back(1, mod_rows[bi].size(), mod_rows[bi]);
            }
        }
    }

    for (auto& tap_traces : taps_per_block) {
        for (auto& tr : tap_traces) {
            const std::string id = tr.layer_id;
            out.layers.emplace(id, std::move(tr));
        }
    }
    out.meta["tokens"] = tokens;
    out.meta["samples"] = samples;
    out.meta["hidden"] = blocks.front().hidden;
    out.meta["blocks"] = blocks.size();
    return out;
}

}  // namespace htgq
