// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "htgq/bundle.hpp"

namespace htgq {

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<Tensor2D> eval_inputs_from_trace(const TraceSet& trace) {
    const CalibrationTrace& input = trace.layer(kInputLayerId);
    if (input.kind != RecordKind::Full) {
        throw DataError("evaluation needs full tensors for layer \"input\"; "
                        "this trace stores summaries only");
    }
    // One sample's token block per timestep keeps attention shapes intact.
    const int tokens = trace.meta.contains("tokens") ? trace.meta.at("tokens").get<int>()
                                                     : static_cast<int>(input.tensors.front().rows());
    std::vector<Tensor2D> inputs;
    inputs.reserve(input.tensors.size());
    for (const Tensor2D& x : input.tensors) {
        inputs.push_back(x.row_block(0, static_cast<std::size_t>(tokens)));
    }
    return inputs;
}

void write_csv(const std::filesystem::path& path, const std::vector<TapReport>& rows,
               const std::vector<std::pair<std::string, double>>& extra) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f << "layer,timestep,metric,value\n";
    for (const TapReport& r : rows) {
        f << r.layer << "," << r.timestep << ",mse," << format_double(r.err.mse) << "\n";
        f << r.layer << "," << r.timestep << ",max_abs_err," << format_double(r.err.max_abs_err)
          << "\n";
        f << r.layer << "," << r.timestep << ",sqnr_db," << format_double(r.err.sqnr_db) << "\n";
    }
    for (const auto& [name, value] : extra) {
        f << name << ",0,sqnr_db_end_to_end," << format_double(value) << "\n";
    }
    if (!f) throw DataError("write failed: " + path.string());
}

std::string human_bytes(std::size_t bytes) {
    char buf[64];
    if (bytes >= 1024 * 1024) {
        std::snprintf(buf, sizeof(buf), "%.2f MiB", static_cast<double>(bytes) / (1024.0 * 1024.0));
    } else if (bytes >= 1024) {
        std::snprintf(buf, sizeof(buf), "%.2f KiB", static_cast<double>(bytes) / 1024.0);
    } else {
        std::snprintf(buf, sizeof(buf), "%zu B", bytes);
    }
    return buf;
}

std::vector<ShiftVector> concat_htg_shifts(const TraceSet& trace) {
    std::vector<std::string> ids;
    for (const auto& [id, layer] : trace.layers) {
        if (id.ends_with("attn.qkv.in") || id.ends_with("mlp.fc1.in") ||
            id.ends_with("attn.o_proj.in")) {
            ids.push_back(id);
        }
    }
    if (ids.empty()) {
        throw DataError("trace carries no smoothed-layer input records");
    }
    std::vector<ShiftVector> shifts;
    for (int t = 1; t <= trace.num_timesteps; ++t) {
        ShiftVector sv{t, {}};
        for (const std::string& id : ids) {
            const ChannelSummary s = trace.layers.at(id).summary_at(t);
            const ChannelVector z = shift_from_extrema(s.min, s.max);
            sv.values.insert(sv.values.end(), z.begin(), z.end());
        }
        shifts.push_back(std::move(sv));
    }
    return shifts;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void cmd_trace_gen(const TraceGenOptions& opt, std::ostream& out) {
    opt.spec.validate();
    if (opt.blocks < 1) throw std::invalid_argument("trace-gen: need at least one block");
    const std::uint64_t model_seed = detail::layer_stream_seed(opt.spec.seed, "model");
    std::vector<DitBlock> blocks;
    for (int bi = 0; bi < opt.blocks; ++bi) {
        blocks.push_back(make_random_block(model_seed + static_cast<std::uint64_t>(bi),
                                           opt.spec.channels, opt.heads, opt.with_modulation,
                                           opt.spec.channels));
    }
    const CalibrationTrace input = generate_trace(opt.spec, kInputLayerId);
    TraceSet trace = capture_trace(blocks, input, opt.spec.tokens);
    trace.meta["synthetic"] = opt.spec.to_json();
    trace.meta["heads"] = opt.heads;
    trace.meta["modulation"] = opt.with_modulation;
    if (opt.summary_only) {
        trace = summarize(trace);
    }
    save_model(blocks, opt.model_dir);
    save_trace(trace, opt.trace_dir);

    out << "model: " << opt.model_dir.string() << " (blocks=" << opt.blocks
        << " hidden=" << opt.spec.channels << " heads=" << opt.heads << ")\n";
    out << "trace: " << opt.trace_dir.string() << " (T=" << opt.spec.num_timesteps
        << " samples=" << opt.spec.samples << " tokens=" << opt.spec.tokens
        << (opt.summary_only ? " summary-only" : "") << ")\n";
    out << "per-layer channel outliers (|max| > 5x median |max|):\n";
    for (const auto& [id, layer] : trace.layers) {
        // Pool per-channel magnitudes over all timesteps.
        ChannelVector mag(layer.channels(), 0.0);
        for (int t = 1; t <= layer.num_timesteps; ++t) {
            const ChannelSummary s = layer.summary_at(t);
            for (std::size_t i = 0; i < mag.size(); ++i) {
                mag[i] = std::max(mag[i], s.abs_max[i]);
            }
        }
        const double med = median(mag);
        std::vector<int> outliers;
        for (std::size_t i = 0; i < mag.size(); ++i) {
            if (mag[i] > 5.0 * med) outliers.push_back(static_cast<int>(i));
        }
        out << "  " << id << ": channels=" << mag.size() << " median=" << std::setprecision(3)
            << med << " outliers=" << outliers.size();
        if (!outliers.empty()) {
            out << " [";
            for (std::size_t i = 0; i < outliers.size() && i < 8; ++i) {
                out << (i ? " " : "") << outliers[i];
            }
            if (outliers.size() > 8) out << " ...";
            out << "]";
        }
        out << "\n";
    }
}

void cmd_quantize(const QuantizeOptions& opt, std::ostream& out) {
    const TraceSet trace = load_trace(opt.trace_dir);
    const std::vector<DitBlock> blocks = load_model(opt.model_dir);
    const QuantizedStack stack = calibrate_stack(blocks, trace, opt.cfg);

    Bundle bundle;
    bundle.stack = stack;
    bundle.meta = trace.meta;
    save_bundle(bundle, opt.bundle_dir);

    out << "bundle: " << opt.bundle_dir.string() << " (W" << opt.cfg.weight_bits << "A"
        << opt.cfg.act_bits << ", shift=" << (opt.cfg.enable_shift ? "on" : "off")
        << ", scale=" << (opt.cfg.enable_scale ? "on" : "off") << ")\n";
    out << "plan: T=" << stack.plan.num_timesteps << " G=" << stack.plan.num_groups
        << " linkage=" << to_string(stack.plan.linkage) << " boundaries=[";
    for (std::size_t i = 0; i < stack.plan.boundaries.size(); ++i) {
        out << (i ? " " : "") << stack.plan.boundaries[i];
    }
    out << "]\n";
    const std::size_t overhead = storage_overhead(stack);
    out << "storage overhead vs G=1: " << overhead << " bytes (" << human_bytes(overhead) << ")\n";
}

void cmd_eval(const EvalOptions& opt, std::ostream& out) {
    const Bundle bundle = load_bundle(opt.bundle_dir);
    const std::vector<DitBlock> blocks = load_model(opt.model_dir);

    std::vector<Tensor2D> inputs;
    std::optional<TraceSet> trace;
    if (opt.fresh_seed) {
        if (!bundle.meta.contains("synthetic")) {
            throw DataError("bundle metadata lacks the synthetic spec needed for fresh inputs");
        }
        SyntheticSpec spec = SyntheticSpec::from_json(bundle.meta.at("synthetic"));
        spec.seed = *opt.fresh_seed;
        spec.samples = 1;
        const CalibrationTrace fresh = generate_trace(spec, kInputLayerId);
        inputs.assign(fresh.tensors.begin(), fresh.tensors.end());
    } else {
        trace = load_trace(opt.trace_dir);
        if (trace->num_timesteps != bundle.stack.plan.num_timesteps) {
            throw DataError("trace and bundle disagree on the timestep count");
        }
        inputs = eval_inputs_from_trace(*trace);
    }
    if (inputs.size() != static_cast<std::size_t>(bundle.stack.plan.num_timesteps)) {
        throw DataError("evaluation inputs do not cover the bundle's timesteps");
    }

    const std::vector<TapReport> rows = compare_paths(blocks, bundle.stack, inputs);

    std::vector<std::pair<std::string, double>> extra;
    if (opt.ablate) {
        if (!trace) trace = load_trace(opt.trace_dir);
        const std::pair<const char*, std::pair<bool, bool>> grid[] = {
            {"ablation.baseline", {false, false}},
            {"ablation.op1", {true, false}},
            {"ablation.op2", {false, true}},
            {"ablation.op1_op2", {true, true}},
        };
        out << "ablation (end-to-end SQNR, dB):\n";
        for (const auto& [name, flags] : grid) {
            BlockConfig cfg = bundle.stack.cfg;
            cfg.enable_shift = flags.first;
            cfg.enable_scale = flags.second;
            const QuantizedStack stack = calibrate_stack(blocks, *trace, cfg);
            const double sqnr = end_to_end_sqnr_db(blocks, stack, inputs);
            extra.emplace_back(name, sqnr);
            out << "  " << name << ": " << format_double(sqnr) << "\n";
        }
    }

    write_csv(opt.csv_path, rows, extra);

    std::map<std::string, std::vector<double>> per_layer;
    for (const TapReport& r : rows) per_layer[r.layer].push_back(r.err.sqnr_db);
    std::vector<double> all;
    std::string worst_layer;
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& [layer, v] : per_layer) {
        const double m = median(v);
        all.insert(all.end(), v.begin(), v.end());
        if (m < worst) {
            worst = m;
            worst_layer = layer;
        }
    }
    out << "csv: " << opt.csv_path.string() << " (" << rows.size() << " taps x timesteps)\n";
    out << "summary: median_sqnr_db=" << format_double(median(all)) << " worst_layer="
        << worst_layer << " (" << format_double(worst) << " dB)\n";
}

void cmd_plan(const PlanOptions& opt, std::ostream& out) {
    const TraceSet trace = load_trace(opt.trace_dir);
    const std::vector<ShiftVector> shifts = concat_htg_shifts(trace);
    const int T = trace.num_timesteps;
    const int groups = opt.groups == 0 ? std::max(1, T / 10) : opt.groups;
    const TemporalPlan plan = cluster_timesteps(shifts, groups, opt.linkage);
    const double obj = objective(shifts, plan);
    const double sse = within_group_sse(shifts, plan);

    out << "plan: T=" << T << " G=" << groups << " linkage=" << to_string(opt.linkage) << "\n";
    out << "boundaries: [";
    for (std::size_t i = 0; i < plan.boundaries.size(); ++i) {
        out << (i ? " " : "") << plan.boundaries[i];
    }
    out << "]\n";
    out << "objective (sum of deviations): " << format_double(obj) << "\n";
    out << "within-group SSE: " << format_double(sse) << "\n";

    if (!opt.out_json.empty()) {
        nlohmann::json boundaries = nlohmann::json::array();
        for (int b : plan.boundaries) boundaries.push_back(b);
        nlohmann::json j{{"schema", kPlanSchema},
                         {"timesteps", T},
                         {"groups", groups},
                         {"boundaries", boundaries},
                         {"linkage", to_string(opt.linkage)},
                         {"objective", obj},
                         {"within_group_sse", sse}};
        detail::write_manifest(opt.out_json, j);
        out << "written: " << opt.out_json.string() << "\n";
    }
}

void cmd_report(const ReportOptions& opt, std::ostream& out) {
    std::ifstream f(opt.csv_path);
    if (!f) throw DataError("cannot open CSV: " + opt.csv_path.string());
    std::string line;
    if (!std::getline(f, line) || line != "layer,timestep,metric,value") {
        throw DataError("unrecognized CSV header in " + opt.csv_path.string());
    }
    struct Stats {
        std::vector<double> sqnr;
        std::vector<double> mse;
    };
    std::map<std::string, Stats> layers;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string layer, timestep, metric, value;
        if (!std::getline(ss, layer, ',') || !std::getline(ss, timestep, ',') ||
            !std::getline(ss, metric, ',') || !std::getline(ss, value)) {
            throw DataError("malformed CSV row: " + line);
        }
        const double v = std::strtod(value.c_str(), nullptr);
        if (metric == "sqnr_db" || metric == "sqnr_db_end_to_end") {
            layers[layer].sqnr.push_back(v);
        } else if (metric == "mse") {
            layers[layer].mse.push_back(v);
        }
    }
    out << std::left << std::setw(28) << "layer" << std::right << std::setw(14) << "median sqnr"
        << std::setw(14) << "min sqnr" << std::setw(16) << "median mse" << "\n";
    for (const auto& [layer, st] : layers) {
        const double min_sqnr =
            st.sqnr.empty() ? 0.0 : *std::min_element(st.sqnr.begin(), st.sqnr.end());
        std::ostringstream med_s, min_s, mse_s;
        med_s << std::fixed << std::setprecision(2) << median(st.sqnr);
        min_s << std::fixed << std::setprecision(2) << min_sqnr;
        mse_s << std::scientific << std::setprecision(3) << median(st.mse);
        out << std::left << std::setw(28) << layer << std::right << std::setw(14) << med_s.str()
            << std::setw(14) << min_s.str() << std::setw(16) << mse_s.str() << "\n";
    }
}

}  // namespace htgq
