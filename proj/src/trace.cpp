// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/trace.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace htgq {

namespace detail {

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) {
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            }
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) {
        crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

void append_f32(std::vector<std::uint8_t>& out, const std::vector<double>& values) {
    for (double v : values) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        out.push_back(static_cast<std::uint8_t>(bits & 0xFFu));
        out.push_back(static_cast<std::uint8_t>((bits >> 8) & 0xFFu));
        out.push_back(static_cast<std::uint8_t>((bits >> 16) & 0xFFu));
        out.push_back(static_cast<std::uint8_t>((bits >> 24) & 0xFFu));
    }
}

std::vector<double> read_f32(const std::vector<std::uint8_t>& in, std::size_t offset,
                             std::size_t count) {
    if (offset + count * 4 > in.size()) {
        throw DataError("blob read out of range");
    }
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t p = offset + i * 4;
        const std::uint32_t bits = static_cast<std::uint32_t>(in[p]) |
                                   (static_cast<std::uint32_t>(in[p + 1]) << 8) |
                                   (static_cast<std::uint32_t>(in[p + 2]) << 16) |
                                   (static_cast<std::uint32_t>(in[p + 3]) << 24);
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        out[i] = static_cast<double>(f);
    }
    return out;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw DataError("read failed: " + path.string());
    return bytes;
}

void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f << manifest.dump(2) << "\n";
    if (!f) throw DataError("write failed: " + path.string());
}

nlohmann::json read_manifest(const std::filesystem::path& path, const char* expected_schema) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path.string() + ": " + e.what());
    }
    const std::string schema = j.value("schema", "");
    if (schema != expected_schema) {
        throw DataError("unsupported schema \"" + schema + "\" in " + path.string() +
                        " (expected " + expected_schema + ")");
    }
    return j;
}

std::uint64_t layer_stream_seed(std::uint64_t base, const std::string& layer_id) {
    // FNV-1a over the layer id, then a splitmix64 scramble of the combination.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : layer_id) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    std::uint64_t z = base ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace detail

std::size_t CalibrationTrace::channels() const {
    if (kind == RecordKind::Full) {
        return tensors.empty() ? 0 : tensors.front().cols();
    }
    return summaries.empty() ? 0 : summaries.front().min.size();
}

ChannelSummary CalibrationTrace::summary_at(int t) const {
    if (t < 1 || t > num_timesteps) {
        throw std::invalid_argument("summary_at: timestep out of range");
    }
    const auto idx = static_cast<std::size_t>(t - 1);
    if (kind == RecordKind::Summary) {
        return summaries[idx];
    }
    auto [cmin, cmax] = col_min_max(tensors[idx]);
    ChannelSummary s;
    s.abs_max.resize(cmin.size());
    for (std::size_t i = 0; i < cmin.size(); ++i) {
        s.abs_max[i] = std::max(std::fabs(cmin[i]), std::fabs(cmax[i]));
    }
    s.min = std::move(cmin);
    s.max = std::move(cmax);
    return s;
}

const CalibrationTrace& TraceSet::layer(const std::string& id) const {
    const auto it = layers.find(id);
    if (it == layers.end()) {
        throw DataError("trace has no layer \"" + id + "\"");
    }
    return it->second;
}

const char* to_string(DriftProfile profile) {
    switch (profile) {
        case DriftProfile::LinearDecay: return "linear_decay";
        case DriftProfile::SignFlipAtEnd: return "sign_flip_at_end";
        case DriftProfile::Constant: return "constant";
    }
    return "?";
}

DriftProfile drift_profile_from_string(const std::string& name) {
    if (name == "linear_decay") return DriftProfile::LinearDecay;
    if (name == "sign_flip_at_end") return DriftProfile::SignFlipAtEnd;
    if (name == "constant") return DriftProfile::Constant;
    throw std::invalid_argument("unknown drift profile: " + name);
}

void SyntheticSpec::validate() const {
    if (channels < 1 || tokens < 1 || samples < 1 || num_timesteps < 1) {
        throw std::invalid_argument("SyntheticSpec: dimensions must be positive");
    }
    if (outlier_channel_fraction < 0.0 || outlier_channel_fraction > 1.0) {
        throw std::invalid_argument("SyntheticSpec: outlier fraction must lie in [0, 1]");
    }
    if (!(outlier_magnitude > 0.0) || !(base_std > 0.0)) {
        throw std::invalid_argument("SyntheticSpec: magnitudes must be positive");
    }
}

nlohmann::json SyntheticSpec::to_json() const {
    return nlohmann::json{{"channels", channels},
                          {"tokens", tokens},
                          {"samples", samples},
                          {"timesteps", num_timesteps},
                          {"outlier_channel_fraction", outlier_channel_fraction},
                          {"outlier_magnitude", outlier_magnitude},
                          {"drift_profile", to_string(drift_profile)},
                          {"base_std", base_std},
                          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.channels = j.at("channels").get<int>();
    s.tokens = j.at("tokens").get<int>();
    s.samples = j.at("samples").get<int>();
    s.num_timesteps = j.at("timesteps").get<int>();
    s.outlier_channel_fraction = j.at("outlier_channel_fraction").get<double>();
    s.outlier_magnitude = j.at("outlier_magnitude").get<double>();
    s.drift_profile = drift_profile_from_string(j.at("drift_profile").get<std::string>());
    s.base_std = j.at("base_std").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
}

std::vector<int> outlier_channels(const SyntheticSpec& spec) {
    spec.validate();
    const int count = static_cast<int>(spec.outlier_channel_fraction * spec.channels);
    std::vector<int> all(static_cast<std::size_t>(spec.channels));
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 rng(detail::layer_stream_seed(spec.seed, "outlier-channels"));
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(count));
    std::sort(all.begin(), all.end());
    return all;
}

namespace {

double drift_offset(const SyntheticSpec& spec, int t) {
    const double m = spec.outlier_magnitude * spec.base_std;
    switch (spec.drift_profile) {
        case DriftProfile::Constant:
            return m;
        case DriftProfile::LinearDecay:
        case DriftProfile::SignFlipAtEnd: {
            double frac = 1.0;
            if (spec.num_timesteps > 1) {
                frac = static_cast<double>(t - 1) / static_cast<double>(spec.num_timesteps - 1);
            }
            const double off = m * (0.3 + 0.7 * frac);  // full at t = T, 0.3x at t = 1
            if (spec.drift_profile == DriftProfile::SignFlipAtEnd && t == 1) {
                return -off;
            }
            return off;
        }
    }
    return m;
}

}  // namespace

CalibrationTrace generate_trace(const SyntheticSpec& spec, const std::string& layer_id) {
    spec.validate();
    const std::vector<int> outliers = outlier_channels(spec);
    std::vector<bool> is_outlier(static_cast<std::size_t>(spec.channels), false);
    for (int c : outliers) is_outlier[static_cast<std::size_t>(c)] = true;

    std::mt19937_64 rng(detail::layer_stream_seed(spec.seed, layer_id));
    std::normal_distribution<double> gauss(0.0, spec.base_std);

    CalibrationTrace trace;
    trace.layer_id = layer_id;
    trace.num_timesteps = spec.num_timesteps;
    trace.kind = RecordKind::Full;
    trace.tensors.reserve(static_cast<std::size_t>(spec.num_timesteps));

    const std::size_t rows = static_cast<std::size_t>(spec.samples) *
                             static_cast<std::size_t>(spec.tokens);
    for (int t = 1; t <= spec.num_timesteps; ++t) {
        const double offset = drift_offset(spec, t);
        Tensor2D x(rows, static_cast<std::size_t>(spec.channels));
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < x.cols(); ++c) {
                double v = gauss(rng);
                if (is_outlier[c]) v += offset;
                x.at(r, c) = v;
            }
        }
        trace.tensors.push_back(std::move(x));
    }
    return trace;
}

CalibrationTrace summarize(const CalibrationTrace& trace) {
    if (trace.kind == RecordKind::Summary) {
        return trace;
    }
    CalibrationTrace out;
    out.layer_id = trace.layer_id;
    out.num_timesteps = trace.num_timesteps;
    out.kind = RecordKind::Summary;
    out.summaries.reserve(static_cast<std::size_t>(trace.num_timesteps));
    for (int t = 1; t <= trace.num_timesteps; ++t) {
        out.summaries.push_back(trace.summary_at(t));
    }
    return out;
}

TraceSet summarize(const TraceSet& trace) {
    TraceSet out;
    out.num_timesteps = trace.num_timesteps;
    out.meta = trace.meta;
    for (const auto& [id, layer] : trace.layers) {
        out.layers.emplace(id, summarize(layer));
    }
    return out;
}

void save_trace(const TraceSet& trace, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& [id, layer] : trace.layers) {
        if (layer.num_timesteps != trace.num_timesteps) {
            throw DataError("layer \"" + id + "\" disagrees on timestep count");
        }
        std::vector<std::uint8_t> blob;
        nlohmann::json entry{{"id", id}, {"blob", id + ".bin"}};
        if (layer.kind == RecordKind::Full) {
            const std::size_t rows = layer.tensors.front().rows();
            const std::size_t cols = layer.tensors.front().cols();
            blob.reserve(layer.tensors.size() * rows * cols * 4);
            for (const Tensor2D& x : layer.tensors) {
                if (x.rows() != rows || x.cols() != cols) {
                    throw DataError("layer \"" + id + "\" has inconsistent record shapes");
                }
                detail::append_f32(blob, x.data());
            }
            entry["kind"] = "full";
            entry["rows"] = rows;
            entry["cols"] = cols;
        } else {
            const std::size_t cols = layer.channels();
            for (const ChannelSummary& s : layer.summaries) {
                detail::append_f32(blob, s.min);
                detail::append_f32(blob, s.max);
                detail::append_f32(blob, s.abs_max);
            }
            entry["kind"] = "summary";
            entry["cols"] = cols;
        }
        entry["bytes"] = blob.size();
        entry["crc32"] = detail::crc32(blob.data(), blob.size());
        detail::write_file(dir / (id + ".bin"), blob);
        layers.push_back(std::move(entry));
    }
    nlohmann::json manifest{{"schema", kTraceSchema},
                            {"timesteps", trace.num_timesteps},
                            {"dtype", "f32"},
                            {"meta", trace.meta},
                            {"layers", layers}};
    detail::write_manifest(dir / "manifest.json", manifest);
}

TraceSet load_trace(const std::filesystem::path& dir) {
    const nlohmann::json manifest = detail::read_manifest(dir / "manifest.json", kTraceSchema);
    TraceSet out;
    out.num_timesteps = manifest.at("timesteps").get<int>();
    const std::string dtype = manifest.value("dtype", "f32");
    if (dtype != "f32") {
        throw DataError("unsupported trace dtype \"" + dtype + "\"");
    }
    out.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("layers")) {
        const std::string id = entry.at("id").get<std::string>();
        const std::size_t expected_bytes = entry.at("bytes").get<std::size_t>();
        const std::vector<std::uint8_t> blob = detail::read_file(dir / entry.at("blob").get<std::string>());
        if (blob.size() < expected_bytes) {
            throw DataError("truncated blob for layer \"" + id + "\"");
        }
        if (blob.size() != expected_bytes) {
            throw DataError("blob size mismatch for layer \"" + id + "\"");
        }
        if (detail::crc32(blob.data(), blob.size()) != entry.at("crc32").get<std::uint32_t>()) {
            throw DataError("blob corrupt (crc mismatch) for layer \"" + id + "\"");
        }
        CalibrationTrace layer;
        layer.layer_id = id;
        layer.num_timesteps = out.num_timesteps;
        const std::string kind = entry.at("kind").get<std::string>();
        const auto T = static_cast<std::size_t>(out.num_timesteps);
        if (kind == "full") {
            const auto rows = entry.at("rows").get<std::size_t>();
            const auto cols = entry.at("cols").get<std::size_t>();
            if (blob.size() != T * rows * cols * 4) {
                throw DataError("blob size mismatch for layer \"" + id + "\"");
            }
            layer.kind = RecordKind::Full;
            for (std::size_t t = 0; t < T; ++t) {
                layer.tensors.emplace_back(rows, cols,
                                           detail::read_f32(blob, t * rows * cols * 4, rows * cols));
            }
        } else if (kind == "summary") {
            const auto cols = entry.at("cols").get<std::size_t>();
            if (blob.size() != T * 3 * cols * 4) {
                throw DataError("blob size mismatch for layer \"" + id + "\"");
            }
            layer.kind = RecordKind::Summary;
            for (std::size_t t = 0; t < T; ++t) {
                ChannelSummary s;
                const std::size_t base = t * 3 * cols * 4;
                s.min = detail::read_f32(blob, base, cols);
                s.max = detail::read_f32(blob, base + cols * 4, cols);
                s.abs_max = detail::read_f32(blob, base + 2 * cols * 4, cols);
                layer.summaries.push_back(std::move(s));
            }
        } else {
            throw DataError("unknown record kind \"" + kind + "\" for layer \"" + id + "\"");
        }
        out.layers.emplace(id, std::move(layer));
    }
    return out;
}

}  // namespace htgq
