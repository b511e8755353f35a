// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "htgq/tensor.hpp"

namespace htgq {

inline constexpr const char* kTraceSchema = "htg-trace/1";

/// Thrown for malformed or inconsistent on-disk artifacts.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-channel extrema of one timestep's record. abs_max is always
/// max(|min|, |max|).
struct ChannelSummary {
    ChannelVector min;
    ChannelVector max;
    ChannelVector abs_max;
};

enum class RecordKind { Full, Summary };

/// One layer's activation records over all timesteps, either as full tensors
/// (n_calib * tokens rows per timestep) or as channel summaries.
struct CalibrationTrace {
    std::string layer_id;
    int num_timesteps = 0;
    RecordKind kind = RecordKind::Full;
    std::vector<Tensor2D> tensors;           // kind == Full, index t - 1
    std::vector<ChannelSummary> summaries;   // kind == Summary

    std::size_t channels() const;
    /// Extrema of timestep t; computed on the fly for full records. All of
    /// calibration consumes records through this accessor, which is what
    /// makes summary traces lossless for the pipeline.
    ChannelSummary summary_at(int t) const;
};

/// A set of layer traces sharing one timestep axis, plus free-form metadata
/// that is persisted verbatim in the manifest.
struct TraceSet {
    int num_timesteps = 0;
    std::map<std::string, CalibrationTrace> layers;
    nlohmann::json meta = nlohmann::json::object();

    const CalibrationTrace& layer(const std::string& id) const;
};

enum class DriftProfile { LinearDecay, SignFlipAtEnd, Constant };

const char* to_string(DriftProfile profile);
DriftProfile drift_profile_from_string(const std::string& name);

/// Synthetic activation generator: Gaussian base with a designated fraction
/// of channels carrying an additive offset that drifts over timesteps.
struct SyntheticSpec {
    int channels = 64;
    int tokens = 16;
    int samples = 32;   // calibration samples pooled per timestep
    int num_timesteps = 100;
    double outlier_channel_fraction = 0.05;
    double outlier_magnitude = 20.0;  // offset in units of base_std
    DriftProfile drift_profile = DriftProfile::LinearDecay;
    double base_std = 1.0;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& j);
};

/// Deterministic under (spec, layer_id): each layer id seeds its own RNG
/// stream. Offsets follow the drift profile: LinearDecay interpolates from
/// the full magnitude at t = T down to 0.3x at t = 1; SignFlipAtEnd follows
/// the same schedule but negates the offset at t = 1; Constant holds it.
CalibrationTrace generate_trace(const SyntheticSpec& spec, const std::string& layer_id);

/// Channels that generate_trace offsets for this spec, ascending.
std::vector<int> outlier_channels(const SyntheticSpec& spec);

CalibrationTrace summarize(const CalibrationTrace& trace);
TraceSet summarize(const TraceSet& trace);

/// Writes manifest.json plus one little-endian float32 blob per layer
/// (timestep-major, then row-major). Byte-for-byte reproducible.
void save_trace(const TraceSet& trace, const std::filesystem::path& dir);
TraceSet load_trace(const std::filesystem::path& dir);

namespace detail {

std::uint32_t crc32(const std::uint8_t* data, std::size_t len);
void append_f32(std::vector<std::uint8_t>& out, const std::vector<double>& values);
std::vector<double> read_f32(const std::vector<std::uint8_t>& in, std::size_t offset,
                             std::size_t count);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);
nlohmann::json read_manifest(const std::filesystem::path& path, const char* expected_schema);
std::uint64_t layer_stream_seed(std::uint64_t base, const std::string& layer_id);

}  // namespace detail

}  // namespace htgq
