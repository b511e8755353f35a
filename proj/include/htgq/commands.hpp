// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "htgq/quant_block.hpp"
#include "htgq/trace.hpp"

namespace htgq {

inline constexpr const char* kPlanSchema = "htg-plan/1";

struct TraceGenOptions {
    SyntheticSpec spec;
    int blocks = 1;
    int heads = 4;
    bool with_modulation = false;
    bool summary_only = false;
    std::filesystem::path trace_dir;
    std::filesystem::path model_dir;
};

/// Builds the seeded toy model, synthesizes its input activations, captures
/// all tap records by running the float model, and writes both artifacts.
void cmd_trace_gen(const TraceGenOptions& opt, std::ostream& out);

struct QuantizeOptions {
    std::filesystem::path trace_dir;
    std::filesystem::path model_dir;
    std::filesystem::path bundle_dir;
    BlockConfig cfg;
};

void cmd_quantize(const QuantizeOptions& opt, std::ostream& out);

struct EvalOptions {
    std::filesystem::path bundle_dir;
    std::filesystem::path model_dir;
    std::filesystem::path trace_dir;           // input source unless fresh_seed is set
    std::filesystem::path csv_path;
    std::optional<std::uint64_t> fresh_seed;   // regenerate inputs from bundle metadata
    bool ablate = false;                       // append the op1/op2 ablation grid
};

void cmd_eval(const EvalOptions& opt, std::ostream& out);

struct PlanOptions {
    std::filesystem::path trace_dir;
    int groups = 0;  // 0 = auto
    Linkage linkage = Linkage::Ward;
    std::filesystem::path out_json;  // optional
};

void cmd_plan(const PlanOptions& opt, std::ostream& out);

struct ReportOptions {
    std::filesystem::path csv_path;
};

void cmd_report(const ReportOptions& opt, std::ostream& out);

/// "%.17g" rendering used for all CSV values; round-trips doubles exactly.
std::string format_double(double v);

}  // namespace htgq
