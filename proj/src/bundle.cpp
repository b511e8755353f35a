// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/bundle.hpp"

#include <stdexcept>

#include "htgq/block.hpp"

namespace htgq {

namespace {

using nlohmann::json;

class BlobWriter {
public:
    explicit BlobWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    json write(const std::string& name, const std::vector<std::uint8_t>& bytes) {
        detail::write_file(dir_ / name, bytes);
        return json{{"blob", name}, {"bytes", bytes.size()},
                    {"crc32", detail::crc32(bytes.data(), bytes.size())}};
    }

    json write_f32(const std::string& name, const std::vector<double>& values) {
        std::vector<std::uint8_t> bytes;
        bytes.reserve(values.size() * 4);
        detail::append_f32(bytes, values);
        return write(name, bytes);
    }

private:
    std::filesystem::path dir_;
};

class BlobReader {
public:
    explicit BlobReader(std::filesystem::path dir) : dir_(std::move(dir)) {}

    std::vector<std::uint8_t> read(const json& entry) const {
        const std::string name = entry.at("blob").get<std::string>();
        std::vector<std::uint8_t> bytes = detail::read_file(dir_ / name);
        const auto expected = entry.at("bytes").get<std::size_t>();
        if (bytes.size() < expected) throw DataError("truncated blob " + name);
        if (bytes.size() != expected) throw DataError("blob size mismatch for " + name);
        if (detail::crc32(bytes.data(), bytes.size()) != entry.at("crc32").get<std::uint32_t>()) {
            throw DataError("blob corrupt (crc mismatch): " + name);
        }
        return bytes;
    }

    std::vector<double> read_f32(const json& entry, std::size_t count) const {
        const std::vector<std::uint8_t> bytes = read(entry);
        if (bytes.size() != count * 4) {
            throw DataError("unexpected value count in " + entry.at("blob").get<std::string>());
        }
        return detail::read_f32(bytes, 0, count);
    }

private:
    std::filesystem::path dir_;
};

json qparams_to_json(const QuantParams& p) {
    if (!p.enabled()) return nullptr;
    return json{{"delta", p.delta}, {"zero", p.zero_offset}, {"bits", p.bits}};
}

QuantParams qparams_from_json(const json& j) {
    if (j.is_null()) return QuantParams{};
    return QuantParams{j.at("delta").get<double>(), j.at("zero").get<int>(),
                       j.at("bits").get<int>()};
}

json per_channel_to_json(const PerChannelParams& p) {
    if (p.params.empty()) return nullptr;
    json deltas = json::array();
    json zeros = json::array();
    for (const QuantParams& qp : p.params) {
        deltas.push_back(qp.delta);
        zeros.push_back(qp.zero_offset);
    }
    return json{{"bits", p.params.front().bits}, {"delta", deltas}, {"zero", zeros}};
}

PerChannelParams per_channel_from_json(const json& j) {
    PerChannelParams p;
    if (j.is_null()) return p;
    const int bits = j.at("bits").get<int>();
    const auto& deltas = j.at("delta");
    const auto& zeros = j.at("zero");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        p.params.push_back(QuantParams{deltas[i].get<double>(), zeros[i].get<int>(), bits});
    }
    return p;
}

std::vector<double> concat_groups(const std::vector<ChannelVector>& groups) {
    std::vector<double> out;
    for (const ChannelVector& g : groups) out.insert(out.end(), g.begin(), g.end());
    return out;
}

std::vector<ChannelVector> split_groups(const std::vector<double>& flat, std::size_t groups,
                                        std::size_t len) {
    std::vector<ChannelVector> out;
    out.reserve(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(g * len),
                         flat.begin() + static_cast<std::ptrdiff_t>((g + 1) * len));
    }
    return out;
}

// Weight codes when quantized, float32 otherwise.
json write_weight(BlobWriter& w, const std::string& name, const Tensor2D& weight,
                  const PerChannelParams& p) {
    json entry;
    entry["rows"] = weight.rows();
    entry["cols"] = weight.cols();
    if (p.params.empty()) {
        entry["packed"] = false;
        entry.update(w.write_f32(name + ".f32.bin", weight.data()));
        return entry;
    }
    if (p.params.size() != weight.cols()) {
        throw std::invalid_argument("write_weight: per-channel params do not match columns");
    }
    std::vector<std::int32_t> codes(weight.size());
    for (std::size_t c = 0; c < weight.cols(); ++c) {
        Tensor2D col(weight.rows(), 1);
        for (std::size_t r = 0; r < weight.rows(); ++r) col.at(r, 0) = weight.at(r, c);
        const QuantizedTensor q = quantize(col, p.params[c]);
        for (std::size_t r = 0; r < weight.rows(); ++r) {
            codes[r * weight.cols() + c] = q.codes[r];
        }
    }
    entry["packed"] = true;
    entry.update(w.write(name + ".codes.bin", pack_codes(codes, p.params.front().bits)));
    return entry;
}

Tensor2D read_weight(const BlobReader& r, const json& entry, const PerChannelParams& p) {
    const auto rows = entry.at("rows").get<std::size_t>();
    const auto cols = entry.at("cols").get<std::size_t>();
    if (!entry.at("packed").get<bool>()) {
        return Tensor2D(rows, cols, r.read_f32(entry, rows * cols));
    }
    if (p.params.size() != cols) {
        throw DataError("packed weight without matching per-channel params");
    }
    const std::vector<std::int32_t> codes =
        unpack_codes(r.read(entry), p.params.front().bits, rows * cols);
    Tensor2D out(rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        const QuantParams& qp = p.params[c];
        for (std::size_t rr = 0; rr < rows; ++rr) {
            const std::int32_t code = codes[rr * cols + c];
            if (code < 0 || code > qp.max_code()) {
                throw DataError("weight code out of range in " + entry.at("blob").get<std::string>());
            }
            out.at(rr, c) = static_cast<double>(code - qp.zero_offset) * qp.delta;
        }
    }
    return out;
}

json smoothed_to_json(BlobWriter& w, const std::string& name, const SmoothedLinear& layer) {
    json entry;
    entry["weight"] = write_weight(w, name, layer.weight, layer.weight_qparams);
    entry["weight_qparams"] = per_channel_to_json(layer.weight_qparams);
    entry["act_qparams"] = qparams_to_json(layer.act_qparams);
    entry["groups"] = layer.biases.size();
    entry["biases"] = w.write_f32(name + ".biases.bin", concat_groups(layer.biases));
    return entry;
}

SmoothedLinear smoothed_from_json(const BlobReader& r, const json& entry) {
    SmoothedLinear layer;
    layer.weight_qparams = per_channel_from_json(entry.at("weight_qparams"));
    layer.act_qparams = qparams_from_json(entry.at("act_qparams"));
    layer.weight = read_weight(r, entry.at("weight"), layer.weight_qparams);
    const auto groups = entry.at("groups").get<std::size_t>();
    const std::size_t len = layer.weight.cols();
    layer.biases = split_groups(r.read_f32(entry.at("biases"), groups * len), groups, len);
    return layer;
}

}  // namespace

std::vector<std::uint8_t> pack_codes(const std::vector<std::int32_t>& codes, int bits) {
    if (bits < 1 || bits > 16) throw std::invalid_argument("pack_codes: bits must be in [1, 16]");
    std::vector<std::uint8_t> out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
    std::size_t bit_pos = 0;
    for (std::int32_t code : codes) {
        if (code < 0 || code >= (1 << bits)) {
            throw std::invalid_argument("pack_codes: code does not fit in bit width");
        }
        for (int b = 0; b < bits; ++b) {
            if (code & (1 << b)) {
                out[(bit_pos + static_cast<std::size_t>(b)) / 8] |=
                    static_cast<std::uint8_t>(1u << ((bit_pos + static_cast<std::size_t>(b)) % 8));
            }
        }
        bit_pos += static_cast<std::size_t>(bits);
    }
    return out;
}

std::vector<std::int32_t> unpack_codes(const std::vector<std::uint8_t>& bytes, int bits,
                                       std::size_t count) {
    if (bits < 1 || bits > 16) throw std::invalid_argument("unpack_codes: bits must be in [1, 16]");
    if ((count * static_cast<std::size_t>(bits) + 7) / 8 > bytes.size()) {
        throw DataError("unpack_codes: byte stream too short");
    }
    std::vector<std::int32_t> out(count, 0);
    std::size_t bit_pos = 0;
    for (std::size_t i = 0; i < count; ++i) {
        std::int32_t code = 0;
        for (int b = 0; b < bits; ++b) {
            const std::size_t p = bit_pos + static_cast<std::size_t>(b);
            if (bytes[p / 8] & (1u << (p % 8))) code |= 1 << b;
        }
        out[i] = code;
        bit_pos += static_cast<std::size_t>(bits);
    }
    return out;
}

void save_model(const std::vector<DitBlock>& blocks, const std::filesystem::path& dir) {
    if (blocks.empty()) throw std::invalid_argument("save_model: no blocks");
    for (const DitBlock& b : blocks) b.validate();
    BlobWriter w(dir);
    json layers = json::array();
    auto add_mat = [&](const std::string& id, const Tensor2D& m) {
        json e = w.write_f32(id + ".bin", m.data());
        e["id"] = id;
        e["rows"] = m.rows();
        e["cols"] = m.cols();
        layers.push_back(std::move(e));
    };
    auto add_vec = [&](const std::string& id, const ChannelVector& v) {
        json e = w.write_f32(id + ".bin", v);
        e["id"] = id;
        e["rows"] = 1;
        e["cols"] = v.size();
        layers.push_back(std::move(e));
    };
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const DitBlock& b = blocks[bi];
        const std::string p = "blocks." + std::to_string(bi) + ".";
        add_vec(p + "adaln1.gamma", b.adaln1.gamma);
        add_vec(p + "adaln1.beta", b.adaln1.beta);
        add_vec(p + "adaln2.gamma", b.adaln2.gamma);
        add_vec(p + "adaln2.beta", b.adaln2.beta);
        add_mat(p + "attn.qkv.weight", b.w_qkv);
        add_vec(p + "attn.qkv.bias", b.b_qkv);
        add_mat(p + "attn.o_proj.weight", b.w_o);
        add_vec(p + "attn.o_proj.bias", b.b_o);
        add_mat(p + "mlp.fc1.weight", b.w_fc1);
        add_vec(p + "mlp.fc1.bias", b.b_fc1);
        add_mat(p + "mlp.fc2.weight", b.w_fc2);
        add_vec(p + "mlp.fc2.bias", b.b_fc2);
        if (b.modulation) {
            add_mat(p + "mod.weight", b.modulation->weight);
            add_vec(p + "mod.bias", b.modulation->bias);
        }
    }
    const DitBlock& first = blocks.front();
    json manifest{{"schema", kModelSchema},
                  {"meta",
                   {{"hidden", first.hidden},
                    {"heads", first.heads},
                    {"blocks", blocks.size()},
                    {"cond_dim", first.cond_dim},
                    {"modulation", first.modulation.has_value()}}},
                  {"layers", layers}};
    detail::write_manifest(dir / "manifest.json", manifest);
}

std::vector<DitBlock> load_model(const std::filesystem::path& dir) {
    const json manifest = detail::read_manifest(dir / "manifest.json", kModelSchema);
    const json& meta = manifest.at("meta");
    const auto num_blocks = meta.at("blocks").get<std::size_t>();
    const int hidden = meta.at("hidden").get<int>();
    const int heads = meta.at("heads").get<int>();
    const bool with_mod = meta.at("modulation").get<bool>();
    const int cond_dim = meta.at("cond_dim").get<int>();

    BlobReader r(dir);
    std::map<std::string, json> entries;
    for (const json& e : manifest.at("layers")) {
        entries.emplace(e.at("id").get<std::string>(), e);
    }
    auto get_mat = [&](const std::string& id) {
        const auto it = entries.find(id);
        if (it == entries.end()) throw DataError("model manifest missing layer \"" + id + "\"");
        const auto rows = it->second.at("rows").get<std::size_t>();
        const auto cols = it->second.at("cols").get<std::size_t>();
        return Tensor2D(rows, cols, r.read_f32(it->second, rows * cols));
    };
    auto get_vec = [&](const std::string& id) { return get_mat(id).data(); };

    std::vector<DitBlock> blocks;
    for (std::size_t bi = 0; bi < num_blocks; ++bi) {
        const std::string p = "blocks." + std::to_string(bi) + ".";
        DitBlock b;
        b.hidden = hidden;
        b.heads = heads;
        b.cond_dim = cond_dim;
        b.adaln1 = {get_vec(p + "adaln1.gamma"), get_vec(p + "adaln1.beta")};
        b.adaln2 = {get_vec(p + "adaln2.gamma"), get_vec(p + "adaln2.beta")};
        b.w_qkv = get_mat(p + "attn.qkv.weight");
        b.b_qkv = get_vec(p + "attn.qkv.bias");
        b.w_o = get_mat(p + "attn.o_proj.weight");
        b.b_o = get_vec(p + "attn.o_proj.bias");
        b.w_fc1 = get_mat(p + "mlp.fc1.weight");
        b.b_fc1 = get_vec(p + "mlp.fc1.bias");
        b.w_fc2 = get_mat(p + "mlp.fc2.weight");
        b.b_fc2 = get_vec(p + "mlp.fc2.bias");
        if (with_mod) {
            b.modulation = ModulationLinear{get_mat(p + "mod.weight"), get_vec(p + "mod.bias")};
        }
        b.validate();
        blocks.push_back(std::move(b));
    }
    return blocks;
}

void save_bundle(const Bundle& bundle, const std::filesystem::path& dir) {
    const QuantizedStack& stack = bundle.stack;
    stack.plan.validate();
    BlobWriter w(dir);
    json blocks = json::array();
    for (std::size_t bi = 0; bi < stack.blocks.size(); ++bi) {
        const QuantizedDitBlock& qb = stack.blocks[bi];
        const std::string p = "blocks." + std::to_string(bi) + ".";
        json jb;
        jb["hidden"] = qb.hidden;
        jb["heads"] = qb.heads;
        jb["cond_dim"] = qb.cond_dim;
        jb["attn"] = {{"q", qparams_to_json(qb.attn.q)},
                      {"k", qparams_to_json(qb.attn.k)},
                      {"v", qparams_to_json(qb.attn.v)},
                      {"softmax", qparams_to_json(qb.attn.softmax)}};
        jb["qkv"] = smoothed_to_json(w, p + "attn.qkv", qb.qkv);
        jb["fc1"] = smoothed_to_json(w, p + "mlp.fc1", qb.fc1);
        jb["o_proj"] = smoothed_to_json(w, p + "attn.o_proj", qb.o_proj);

        if (qb.modulation) {
            const ReparamModulation& mod = *qb.modulation;
            json jm;
            jm["weight"] = write_weight(w, p + "mod", mod.weight, mod.weight_qparams);
            jm["weight_qparams"] = per_channel_to_json(mod.weight_qparams);
            jm["act_qparams"] = qparams_to_json(mod.act_qparams);
            jm["groups"] = mod.biases.size();
            jm["biases"] = w.write_f32(p + "mod.biases.bin", concat_groups(mod.biases));
            jm["base_gain1"] = json(mod.base_gain1);
            jm["base_gain2"] = json(mod.base_gain2);
            jb["modulation"] = std::move(jm);
        } else {
            // Gains ride in the manifest as exact doubles; only the per-group
            // vectors go to 32-bit blobs.
            jb["adaln1"] = {{"gain", json(qb.adaln1.gain)},
                            {"betas", w.write_f32(p + "adaln1.betas.bin",
                                                  concat_groups(qb.adaln1.betas))},
                            {"groups", qb.adaln1.betas.size()},
                            {"channels", qb.adaln1.gain.size()}};
            jb["adaln2"] = {{"gain", json(qb.adaln2.gain)},
                            {"betas", w.write_f32(p + "adaln2.betas.bin",
                                                  concat_groups(qb.adaln2.betas))},
                            {"groups", qb.adaln2.betas.size()},
                            {"channels", qb.adaln2.gain.size()}};
        }

        // The serialized dequant affine is the fused form: the AV dequant
        // step width is folded into the per-channel scale.
        const double attn_deq = qb.attn.softmax.enabled()
                                    ? qb.attn.softmax.delta * qb.attn.v.delta
                                    : 1.0;
        ChannelVector fused_scale = qb.o_proj_fold.scale;
        for (double& s : fused_scale) s *= attn_deq;
        jb["o_proj_dequant"] = {{"scale", w.write_f32(p + "attn.o_proj.deq_scale.bin", fused_scale)},
                                {"offsets", w.write_f32(p + "attn.o_proj.deq_offsets.bin",
                                                        concat_groups(qb.o_proj_fold.offsets))},
                                {"groups", qb.o_proj_fold.offsets.size()},
                                {"channels", qb.o_proj_fold.scale.size()}};

        json jf;
        jf["weight"] = write_weight(w, p + "mlp.fc2", qb.fc2.weight, qb.fc2.weight_qparams);
        jf["weight_qparams"] = per_channel_to_json(qb.fc2.weight_qparams);
        jf["act_qparams"] = qparams_to_json(qb.fc2.act_qparams);
        jf["bias"] = w.write_f32(p + "mlp.fc2.bias.bin", qb.fc2.bias);
        jb["fc2"] = std::move(jf);

        blocks.push_back(std::move(jb));
    }

    json boundaries = json::array();
    for (int b : stack.plan.boundaries) boundaries.push_back(b);
    json manifest{
        {"schema", kBundleSchema},
        {"plan",
         {{"timesteps", stack.plan.num_timesteps},
          {"groups", stack.plan.num_groups},
          {"boundaries", boundaries},
          {"linkage", to_string(stack.plan.linkage)}}},
        {"config",
         {{"weight_bits", stack.cfg.weight_bits},
          {"act_bits", stack.cfg.act_bits},
          {"groups", stack.cfg.groups},
          {"alpha", stack.cfg.alpha},
          {"linkage", to_string(stack.cfg.linkage)},
          {"clip_quantile", stack.cfg.clip_quantile},
          {"enable_shift", stack.cfg.enable_shift},
          {"enable_scale", stack.cfg.enable_scale}}},
        {"meta", bundle.meta},
        {"blocks", blocks}};
    detail::write_manifest(dir / "manifest.json", manifest);
}

Bundle load_bundle(const std::filesystem::path& dir) {
    const json manifest = detail::read_manifest(dir / "manifest.json", kBundleSchema);
    Bundle out;
    out.meta = manifest.value("meta", json::object());

    const json& jp = manifest.at("plan");
    out.stack.plan.num_timesteps = jp.at("timesteps").get<int>();
    out.stack.plan.num_groups = jp.at("groups").get<int>();
    for (const json& b : jp.at("boundaries")) out.stack.plan.boundaries.push_back(b.get<int>());
    out.stack.plan.linkage = linkage_from_string(jp.at("linkage").get<std::string>());
    out.stack.plan.validate();

    const json& jc = manifest.at("config");
    out.stack.cfg.weight_bits = jc.at("weight_bits").get<int>();
    out.stack.cfg.act_bits = jc.at("act_bits").get<int>();
    out.stack.cfg.groups = jc.at("groups").get<int>();
    out.stack.cfg.alpha = jc.at("alpha").get<double>();
    out.stack.cfg.linkage = linkage_from_string(jc.at("linkage").get<std::string>());
    out.stack.cfg.clip_quantile = jc.at("clip_quantile").get<double>();
    out.stack.cfg.enable_shift = jc.at("enable_shift").get<bool>();
    out.stack.cfg.enable_scale = jc.at("enable_scale").get<bool>();

    BlobReader r(dir);
    for (const json& jb : manifest.at("blocks")) {
        QuantizedDitBlock qb;
        qb.hidden = jb.at("hidden").get<int>();
        qb.heads = jb.at("heads").get<int>();
        qb.cond_dim = jb.at("cond_dim").get<int>();
        qb.attn.q = qparams_from_json(jb.at("attn").at("q"));
        qb.attn.k = qparams_from_json(jb.at("attn").at("k"));
        qb.attn.v = qparams_from_json(jb.at("attn").at("v"));
        qb.attn.softmax = qparams_from_json(jb.at("attn").at("softmax"));
        qb.qkv = smoothed_from_json(r, jb.at("qkv"));
        qb.fc1 = smoothed_from_json(r, jb.at("fc1"));
        qb.o_proj = smoothed_from_json(r, jb.at("o_proj"));

        if (jb.contains("modulation")) {
            const json& jm = jb.at("modulation");
            ReparamModulation mod;
            mod.weight_qparams = per_channel_from_json(jm.at("weight_qparams"));
            mod.act_qparams = qparams_from_json(jm.at("act_qparams"));
            mod.weight = read_weight(r, jm.at("weight"), mod.weight_qparams);
            const auto groups = jm.at("groups").get<std::size_t>();
            const std::size_t len = mod.weight.cols();
            mod.biases = split_groups(r.read_f32(jm.at("biases"), groups * len), groups, len);
            mod.base_gain1 = jm.at("base_gain1").get<ChannelVector>();
            mod.base_gain2 = jm.at("base_gain2").get<ChannelVector>();
            qb.modulation = std::move(mod);
        } else {
            auto read_adaln = [&](const json& ja) {
                ReparamAdaLN a;
                const auto channels = ja.at("channels").get<std::size_t>();
                const auto groups = ja.at("groups").get<std::size_t>();
                a.gain = ja.at("gain").get<ChannelVector>();
                if (a.gain.size() != channels) throw DataError("adaln gain length mismatch");
                a.betas = split_groups(r.read_f32(ja.at("betas"), groups * channels), groups,
                                       channels);
                return a;
            };
            qb.adaln1 = read_adaln(jb.at("adaln1"));
            qb.adaln2 = read_adaln(jb.at("adaln2"));
        }

        const json& jd = jb.at("o_proj_dequant");
        const auto channels = jd.at("channels").get<std::size_t>();
        const auto groups = jd.at("groups").get<std::size_t>();
        ChannelVector fused_scale = r.read_f32(jd.at("scale"), channels);
        const double attn_deq = qb.attn.softmax.enabled()
                                    ? qb.attn.softmax.delta * qb.attn.v.delta
                                    : 1.0;
        qb.o_proj_fold.scale.resize(channels);
        for (std::size_t i = 0; i < channels; ++i) {
            qb.o_proj_fold.scale[i] = fused_scale[i] / attn_deq;
        }
        qb.o_proj_fold.offsets =
            split_groups(r.read_f32(jd.at("offsets"), groups * channels), groups, channels);

        const json& jf = jb.at("fc2");
        qb.fc2.weight_qparams = per_channel_from_json(jf.at("weight_qparams"));
        qb.fc2.act_qparams = qparams_from_json(jf.at("act_qparams"));
        qb.fc2.weight = read_weight(r, jf.at("weight"), qb.fc2.weight_qparams);
        qb.fc2.bias = r.read_f32(jf.at("bias"), qb.fc2.weight.cols());

        out.stack.blocks.push_back(std::move(qb));
    }
    return out;
}

}  // namespace htgq
