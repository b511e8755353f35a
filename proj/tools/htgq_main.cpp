// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "htgq/commands.hpp"

namespace {

using htgq::BlockConfig;
using htgq::SyntheticSpec;

// Values shared by subcommands, resolved as: flag > config file > HTG_SEED
// env (seed only) > built-in default.
struct Common {
    std::string config_path;
    nlohmann::json config = nlohmann::json::object();

    void load() {
        if (config_path.empty()) return;
        std::ifstream f(config_path);
        if (!f) throw CLI::ValidationError("--config", "cannot open " + config_path);
        try {
            f >> config;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ValidationError("--config", std::string("malformed JSON: ") + e.what());
        }
    }

    template <typename T>
    void fill(const CLI::Option* opt, const char* key, T& value) const {
        if (opt->count() > 0) return;  // explicit flag wins
        if (config.contains(key)) value = config.at(key).get<T>();
    }

    void fill_seed(const CLI::Option* opt, std::uint64_t& seed) const {
        if (opt->count() > 0) return;
        if (config.contains("seed")) {
            seed = config.at("seed").get<std::uint64_t>();
            return;
        }
        if (const char* env = std::getenv("HTG_SEED")) {
            seed = std::strtoull(env, nullptr, 10);
        }
    }
};

std::string path_from(const nlohmann::json& config, const char* key, const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (config.contains("paths") && config.at("paths").contains(key)) {
        return config.at("paths").at(key).get<std::string>();
    }
    return flag_value;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Post-training quantization toolkit for DiT-style blocks with "
                 "timestep-grouped activation smoothing"};
    app.require_subcommand(1);

    Common common;
    app.add_option("--config", common.config_path, "JSON config file; flags override its values")
        ->envname("HTG_CONFIG");

    // trace-gen -------------------------------------------------------------
    auto* gen = app.add_subcommand("trace-gen", "Generate the toy model and calibration trace");
    htgq::TraceGenOptions gopt;
    std::string g_trace, g_model, g_profile = "linear_decay";
    auto* g_seed = gen->add_option("--seed", gopt.spec.seed, "RNG seed");
    gen->add_option("--trace", g_trace, "output trace directory");
    gen->add_option("--model", g_model, "output model directory");
    auto* g_channels = gen->add_option("--channels", gopt.spec.channels, "hidden size / channels");
    auto* g_tokens = gen->add_option("--tokens", gopt.spec.tokens, "tokens per sample");
    auto* g_samples = gen->add_option("--samples", gopt.spec.samples, "calibration samples per timestep");
    auto* g_steps = gen->add_option("--timesteps", gopt.spec.num_timesteps, "denoising steps T");
    auto* g_frac = gen->add_option("--outlier-fraction", gopt.spec.outlier_channel_fraction,
                                   "fraction of channels carrying outliers");
    auto* g_mag = gen->add_option("--outlier-magnitude", gopt.spec.outlier_magnitude,
                                  "outlier offset in units of base std");
    auto* g_profile_opt = gen->add_option("--drift-profile", g_profile,
                                          "linear_decay | sign_flip_at_end | constant");
    auto* g_std = gen->add_option("--base-std", gopt.spec.base_std, "base activation std");
    auto* g_heads = gen->add_option("--heads", gopt.heads, "attention heads");
    auto* g_blocks = gen->add_option("--blocks", gopt.blocks, "blocks in the stack (1 or 2)");
    gen->add_flag("--modulation", gopt.with_modulation, "derive AdaLN params from a modulation linear");
    gen->add_flag("--summary-only", gopt.summary_only, "store channel summaries instead of tensors");

    // quantize ----------------------------------------------------------------
    auto* quant = app.add_subcommand("quantize", "Calibrate and write the quantized bundle");
    htgq::QuantizeOptions qopt;
    std::string q_trace, q_model, q_bundle, q_linkage = "ward";
    quant->add_option("--trace", q_trace, "input trace directory");
    quant->add_option("--model", q_model, "input model directory");
    quant->add_option("--bundle", q_bundle, "output bundle directory");
    auto* q_wbits = quant->add_option("--weight-bits", qopt.cfg.weight_bits, "0 (off), 2..16");
    auto* q_abits = quant->add_option("--act-bits", qopt.cfg.act_bits, "0 (off), 2..16");
    auto* q_groups = quant->add_option("--groups", qopt.cfg.groups, "temporal groups; 0 = auto (T/10)");
    auto* q_alpha = quant->add_option("--alpha", qopt.cfg.alpha, "EMA coefficient");
    auto* q_linkage_opt = quant->add_option("--linkage", q_linkage, "average | centroid | ward");
    auto* q_clip = quant->add_option("--clip-quantile", qopt.cfg.clip_quantile,
                                     "activation range quantile (1 = strict min/max)");
    bool q_no_shift = false, q_no_scale = false;
    quant->add_flag("--no-shift", q_no_shift, "disable channel-wise shifting (op1)");
    quant->add_flag("--no-scale", q_no_scale, "disable channel-wise scaling (op2)");

    // eval --------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Compare float and quantized paths, emit CSV");
    htgq::EvalOptions eopt;
    std::string e_bundle, e_model, e_trace, e_csv;
    std::uint64_t e_fresh = 0;
    eval->add_option("--bundle", e_bundle, "bundle directory");
    eval->add_option("--model", e_model, "model directory");
    eval->add_option("--trace", e_trace, "trace directory (evaluation inputs)");
    eval->add_option("--csv", e_csv, "output CSV path");
    auto* e_fresh_opt = eval->add_option("--fresh-seed", e_fresh,
                                         "generate fresh inputs with this seed instead of the trace");
    eval->add_flag("--ablate", eopt.ablate, "append the shifting/scaling ablation grid");

    // plan --------------------------------------------------------------------
    auto* plan = app.add_subcommand("plan", "Cluster timesteps and print the partition");
    htgq::PlanOptions popt;
    std::string p_trace, p_linkage = "ward", p_out;
    plan->add_option("--trace", p_trace, "trace directory");
    plan->add_option("--groups", popt.groups, "temporal groups; 0 = auto (T/10)");
    plan->add_option("--linkage", p_linkage, "average | centroid | ward");
    plan->add_option("--out", p_out, "also write the plan as JSON");

    // report ------------------------------------------------------------------
    auto* report = app.add_subcommand("report", "Render an eval CSV as a text table");
    htgq::ReportOptions ropt;
    std::string r_csv;
    report->add_option("--csv", r_csv, "CSV path from eval");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        common.load();
        const nlohmann::json& cfg = common.config;

        if (gen->parsed()) {
            common.fill_seed(g_seed, gopt.spec.seed);
            common.fill(g_channels, "channels", gopt.spec.channels);
            common.fill(g_tokens, "tokens", gopt.spec.tokens);
            common.fill(g_samples, "samples", gopt.spec.samples);
            common.fill(g_steps, "timesteps", gopt.spec.num_timesteps);
            common.fill(g_frac, "outlier_fraction", gopt.spec.outlier_channel_fraction);
            common.fill(g_mag, "outlier_magnitude", gopt.spec.outlier_magnitude);
            common.fill(g_profile_opt, "drift_profile", g_profile);
            common.fill(g_std, "base_std", gopt.spec.base_std);
            common.fill(g_heads, "heads", gopt.heads);
            common.fill(g_blocks, "blocks", gopt.blocks);
            gopt.spec.drift_profile = htgq::drift_profile_from_string(g_profile);
            gopt.trace_dir = path_from(cfg, "trace", g_trace);
            gopt.model_dir = path_from(cfg, "model", g_model);
            if (gopt.trace_dir.empty() || gopt.model_dir.empty()) {
                throw CLI::ValidationError("trace-gen", "--trace and --model are required");
            }
            htgq::cmd_trace_gen(gopt, std::cout);
        } else if (quant->parsed()) {
            common.fill(q_wbits, "weight_bits", qopt.cfg.weight_bits);
            common.fill(q_abits, "act_bits", qopt.cfg.act_bits);
            if (q_groups->count() == 0 && cfg.contains("groups")) {
                // "auto" in the config file means resolve to T/10 later.
                if (cfg.at("groups").is_string() && cfg.at("groups") == "auto") {
                    qopt.cfg.groups = 0;
                } else {
                    qopt.cfg.groups = cfg.at("groups").get<int>();
                }
            }
            common.fill(q_alpha, "alpha", qopt.cfg.alpha);
            common.fill(q_linkage_opt, "linkage", q_linkage);
            common.fill(q_clip, "clip_quantile", qopt.cfg.clip_quantile);
            qopt.cfg.linkage = htgq::linkage_from_string(q_linkage);
            if (q_no_shift || cfg.value("no_shift", false)) qopt.cfg.enable_shift = false;
            if (q_no_scale || cfg.value("no_scale", false)) qopt.cfg.enable_scale = false;
            qopt.cfg.validate();
            qopt.trace_dir = path_from(cfg, "trace", q_trace);
            qopt.model_dir = path_from(cfg, "model", q_model);
            qopt.bundle_dir = path_from(cfg, "bundle", q_bundle);
            if (qopt.trace_dir.empty() || qopt.model_dir.empty() || qopt.bundle_dir.empty()) {
                throw CLI::ValidationError("quantize", "--trace, --model and --bundle are required");
            }
            htgq::cmd_quantize(qopt, std::cout);
        } else if (eval->parsed()) {
            eopt.bundle_dir = path_from(cfg, "bundle", e_bundle);
            eopt.model_dir = path_from(cfg, "model", e_model);
            eopt.trace_dir = path_from(cfg, "trace", e_trace);
            eopt.csv_path = path_from(cfg, "csv", e_csv);
            if (e_fresh_opt->count() > 0) eopt.fresh_seed = e_fresh;
            if (eopt.bundle_dir.empty() || eopt.model_dir.empty() || eopt.csv_path.empty()) {
                throw CLI::ValidationError("eval", "--bundle, --model and --csv are required");
            }
            if (!eopt.fresh_seed && eopt.trace_dir.empty()) {
                throw CLI::ValidationError("eval", "either --trace or --fresh-seed is required");
            }
            if (eopt.ablate && eopt.trace_dir.empty()) {
                throw CLI::ValidationError("eval", "--ablate needs --trace for recalibration");
            }
            htgq::cmd_eval(eopt, std::cout);
        } else if (plan->parsed()) {
            popt.trace_dir = path_from(cfg, "trace", p_trace);
            popt.linkage = htgq::linkage_from_string(p_linkage);
            popt.out_json = p_out;
            if (popt.trace_dir.empty()) {
                throw CLI::ValidationError("plan", "--trace is required");
            }
            htgq::cmd_plan(popt, std::cout);
        } else if (report->parsed()) {
            ropt.csv_path = path_from(cfg, "csv", r_csv);
            if (ropt.csv_path.empty()) {
                throw CLI::ValidationError("report", "--csv is required");
            }
            htgq::cmd_report(ropt, std::cout);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
