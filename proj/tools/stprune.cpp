// stprune command line: analyze, train, sweep, plot-data, synth.
//
// Exit status: 0 ok, 1 invalid input or configuration, 2 failure while running.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stprune/harness.hpp"

using namespace stprune;

namespace {

int analyze_cmd(const std::string& path, std::size_t period, std::size_t history, std::size_t horizon,
                const std::string& out_path) {
    RawSeries s = load_series(path);
    if (period == 0) period = s.period;
    const auto rep = analyze_redundancy(s, period, history, horizon);
    if (out_path.empty()) {
        write_redundancy_csv(std::cout, rep, s.num_nodes);
    } else {
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("cannot write " + out_path);
        write_redundancy_csv(out, rep, s.num_nodes);
    }
    std::fprintf(stderr, "nodes=%zu frames=%zu excluded_constant=%zu frac_pairs_ge_0.8=%.4f\n", s.num_nodes,
                 s.num_frames, rep.correlation.excluded.size(), rep.frac_pairs_ge_08);
    return 0;
}

void print_summary(const ExperimentReport& r) {
    std::printf("policy=%s retention=%.3f ablation=%s seeds=%zu\n", r.policy.c_str(), r.retention, r.ablation.c_str(),
                r.seeds.size());
    for (const auto& s : r.seeds)
        std::printf("  seed %llu: test MAE %.4f RMSE %.4f samples %zu\n", static_cast<unsigned long long>(s.seed),
                    s.test.mae, s.test.rmse, s.cumulative_samples);
    std::printf("  mean: test MAE %.4f RMSE %.4f samples %.1f\n", r.aggregate.mae, r.aggregate.rmse,
                r.aggregate.cumulative_samples);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic sample pruning for spatio-temporal forecasting"};
    app.require_subcommand(1);

    auto* analyze = app.add_subcommand("analyze", "Redundancy statistics of a dataset (CSV or STB)");
    std::string dataset, analyze_out;
    std::size_t period = 0, history = 12, horizon = 12;
    analyze->add_option("dataset", dataset, "Dataset file")->required();
    analyze->add_option("--period", period, "Frames per day (0: from the file)");
    analyze->add_option("--history", history, "Input steps");
    analyze->add_option("--horizon", horizon, "Forecast steps");
    analyze->add_option("-o,--output", analyze_out, "Output CSV (default stdout)");

    auto* train_cmd = app.add_subcommand("train", "Train with one config");
    std::string config_path, output_override;
    bool dump_plans = false;
    train_cmd->add_option("config", config_path, "Config file")->required();
    train_cmd->add_option("-o,--output", output_override, "Override run.output");
    train_cmd->add_flag("--dump-plans", dump_plans, "Write plans/epoch_<e>.csv");

    auto* sweep_cmd = app.add_subcommand("sweep", "One run per axis value plus a whole-dataset reference");
    std::string axis;
    std::vector<std::string> values;
    sweep_cmd->add_option("config", config_path, "Base config file")->required();
    sweep_cmd->add_option("--axis", axis, "retention | policy | ablation")->required();
    sweep_cmd->add_option("--values", values, "Axis values (default: the standard set)")->delimiter(',');
    sweep_cmd->add_option("-o,--output", output_override, "Override run.output");

    auto* plot = app.add_subcommand("plot-data", "tradeoff.csv / convergence.csv from reports");
    std::vector<std::string> reports;
    std::string plot_out = "plot";
    plot->add_option("reports", reports, "report.jsonl files or run directories")->required();
    plot->add_option("-o,--output", plot_out, "Output directory");

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset as STB");
    std::string spec_path, synth_out;
    synth->add_option("spec", spec_path, "Config file; only [synth] keys matter")->required();
    synth->add_option("-o,--output", synth_out, "Output .stb")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*analyze) return analyze_cmd(dataset, period, history, horizon, analyze_out);
        if (*train_cmd) {
            ExperimentConfig cfg = load_config(config_path);
            if (!output_override.empty()) cfg.output_dir = output_override;
            if (dump_plans) cfg.dump_plans = true;
            print_summary(run(cfg));
            std::printf("wrote %s\n", cfg.output_dir.c_str());
            return 0;
        }
        if (*sweep_cmd) {
            ExperimentConfig cfg = load_config(config_path);
            if (!output_override.empty()) cfg.output_dir = output_override;
            const auto res = sweep(cfg, parse_axis(axis), values);
            std::size_t failed = 0;
            for (const auto& c : res.cells) {
                if (c.report)
                    std::printf("%-20s MAE %.4f samples %.1f\n", c.value.c_str(), c.report->aggregate.mae,
                                c.report->aggregate.cumulative_samples);
                else
                    std::printf("%-20s FAILED: %s\n", c.value.c_str(), c.error.c_str()), ++failed;
            }
            std::printf("wrote %s/sweep.csv\n", cfg.output_dir.c_str());
            return failed ? 2 : 0;
        }
        if (*plot) {
            std::vector<ExperimentReport> loaded;
            for (const auto& p : reports) loaded.push_back(load_report(p));
            emit_plot_data(loaded, plot_out);
            std::printf("wrote %s\n", plot_out.c_str());
            return 0;
        }
        if (*synth) {
            ExperimentConfig cfg = load_config(spec_path);
            RawSeries s = build_series(cfg);
            save_stb(synth_out, s);
            std::printf("wrote %s (%zu nodes, %zu frames)\n", synth_out.c_str(), s.num_nodes, s.num_frames);
            return 0;
        }
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
