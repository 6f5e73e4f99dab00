/*
 * harness.hpp
 *
 * Experiment orchestration: dataset construction, per-seed training,
 * seed aggregation, sweeps over retention / policy / ablation, and the
 * CSV + JSON outputs consumed by plotting tools.
 *
 * Output directory of one run:
 *   report.jsonl             full report as one JSON record (config echo, per-epoch rows, test metrics)
 *   summary.csv              per-seed and mean test metrics; wall clock in the last column
 *   epochs.csv               per-seed, per-epoch rows; wall clock in the last column
 *   redundancy_report.csv    when run.analyze = true
 *   plans/...                when run.dump_plans = true
 *   checkpoint_seed<S>.stck  when run.checkpoint = true
 */
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stprune/analysis.hpp"
#include "stprune/config.hpp"
#include "stprune/dataset.hpp"
#include "stprune/metrics.hpp"
#include "stprune/trainer.hpp"

namespace stprune {

/// Failure inside a run, with module / seed context in the message.
class RunError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SeedReport {
    std::uint64_t seed = 0;
    std::vector<EpochRow> rows;
    EvalResult test;
    std::size_t cumulative_samples = 0;
    double total_wall_ms = 0.0;
};

struct AggregateMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape_pct;
    std::optional<double> corr;
    double cumulative_samples = 0.0;
};

struct ExperimentReport {
    std::string config_echo;
    std::string config_hash;
    std::string policy;
    double retention = 1.0;
    std::string ablation = "full";
    std::size_t epochs = 0;
    std::size_t train_size = 0;
    std::vector<SeedReport> seeds;
    AggregateMetrics aggregate;
    std::string output_dir;
};

inline std::string ablation_label(const PruneConfig& p) {
    std::string s;
    const auto add = [&](const char* t) { s += (s.empty() ? "" : "+") + std::string(t); };
    if (p.disable_complexity) add("no_stc");
    if (p.disable_rescale) add("no_res");
    if (p.disable_anneal) add("no_anne");
    return s.empty() ? "full" : s;
}

inline double retention_of(const PruneConfig& p) { return p.policy == Policy::none ? 1.0 : 1.0 - p.prune_ratio; }

inline AggregateMetrics aggregate_seeds(const std::vector<SeedReport>& seeds) {
    AggregateMetrics a;
    if (seeds.empty()) return a;
    double mape = 0.0, corr = 0.0;
    std::size_t n_mape = 0, n_corr = 0;
    for (const auto& s : seeds) {
        a.mae += s.test.mae;
        a.rmse += s.test.rmse;
        a.cumulative_samples += static_cast<double>(s.cumulative_samples);
        if (s.test.mape_pct) mape += *s.test.mape_pct, ++n_mape;
        if (s.test.corr) corr += *s.test.corr, ++n_corr;
    }
    const double n = static_cast<double>(seeds.size());
    a.mae /= n;
    a.rmse /= n;
    a.cumulative_samples /= n;
    if (n_mape) a.mape_pct = mape / static_cast<double>(n_mape);
    if (n_corr) a.corr = corr / static_cast<double>(n_corr);
    return a;
}

inline RawSeries build_series(const ExperimentConfig& cfg) {
    RawSeries s;
    switch (cfg.source) {
        case DataSource::synth: s = synthesize(cfg.synth, SeededRng(cfg.synth_seed)); break;
        case DataSource::csv: s = load_csv(cfg.data_path); break;
        case DataSource::stb: s = load_stb(cfg.data_path); break;
    }
    if (cfg.period != 0) s.period = cfg.period;
    return s;
}

// ---------------------------------------------------------------------------
// CSV / JSON emission
// ---------------------------------------------------------------------------

namespace detail {

inline std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline std::optional<double> json_opt(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

inline nlohmann::json eval_json(const EvalResult& e) {
    return {{"mae", e.mae}, {"rmse", e.rmse}, {"mape_pct", opt_json(e.mape_pct)}, {"corr", opt_json(e.corr)}, {"n", e.n}};
}

inline EvalResult eval_from_json(const nlohmann::json& j) {
    EvalResult e;
    e.mae = j.at("mae").get<double>();
    e.rmse = j.at("rmse").get<double>();
    e.mape_pct = json_opt(j.at("mape_pct"));
    e.corr = json_opt(j.at("corr"));
    e.n = j.at("n").get<std::size_t>();
    return e;
}

}  // namespace detail

inline nlohmann::json report_to_json(const ExperimentReport& r) {
    using nlohmann::json;
    json seeds = json::array();
    for (const auto& s : r.seeds) {
        json rows = json::array();
        for (const auto& e : s.rows)
            rows.push_back({{"epoch", e.epoch},
                            {"train_loss", e.train_loss},
                            {"val", detail::eval_json(e.val)},
                            {"samples_processed", e.samples_processed},
                            {"lr", e.lr},
                            {"mean_weight", e.mean_weight},
                            {"weight_sum", e.weight_sum},
                            {"informative", e.informative_count},
                            {"retained_redundant", e.retained_redundant},
                            {"full_epoch", e.is_full_epoch},
                            {"wall_ms", e.wall_ms}});
        seeds.push_back({{"seed", s.seed},
                         {"epochs", rows},
                         {"test", detail::eval_json(s.test)},
                         {"cumulative_samples", s.cumulative_samples},
                         {"total_wall_ms", s.total_wall_ms}});
    }
    return {{"config", r.config_echo},
            {"config_hash", r.config_hash},
            {"policy", r.policy},
            {"retention", r.retention},
            {"ablation", r.ablation},
            {"epochs", r.epochs},
            {"train_size", r.train_size},
            {"seeds", seeds},
            {"aggregate",
             {{"mae", r.aggregate.mae},
              {"rmse", r.aggregate.rmse},
              {"mape_pct", detail::opt_json(r.aggregate.mape_pct)},
              {"corr", detail::opt_json(r.aggregate.corr)},
              {"cumulative_samples", r.aggregate.cumulative_samples}}}};
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
    ExperimentReport r;
    r.config_echo = j.at("config").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.policy = j.at("policy").get<std::string>();
    r.retention = j.at("retention").get<double>();
    r.ablation = j.at("ablation").get<std::string>();
    r.epochs = j.at("epochs").get<std::size_t>();
    r.train_size = j.at("train_size").get<std::size_t>();
    for (const auto& js : j.at("seeds")) {
        SeedReport s;
        s.seed = js.at("seed").get<std::uint64_t>();
        s.test = detail::eval_from_json(js.at("test"));
        s.cumulative_samples = js.at("cumulative_samples").get<std::size_t>();
        s.total_wall_ms = js.at("total_wall_ms").get<double>();
        for (const auto& je : js.at("epochs")) {
            EpochRow e;
            e.epoch = je.at("epoch").get<std::size_t>();
            e.train_loss = je.at("train_loss").get<double>();
            e.val = detail::eval_from_json(je.at("val"));
            e.samples_processed = je.at("samples_processed").get<std::size_t>();
            e.lr = je.at("lr").get<double>();
            e.mean_weight = je.at("mean_weight").get<double>();
            e.weight_sum = je.at("weight_sum").get<double>();
            e.informative_count = je.at("informative").get<std::size_t>();
            e.retained_redundant = je.at("retained_redundant").get<std::size_t>();
            e.is_full_epoch = je.at("full_epoch").get<bool>();
            e.wall_ms = je.at("wall_ms").get<double>();
            s.rows.push_back(e);
        }
        r.seeds.push_back(std::move(s));
    }
    r.aggregate = aggregate_seeds(r.seeds);
    return r;
}

inline ExperimentReport load_report(const std::string& path) {
    std::filesystem::path p(path);
    if (std::filesystem::is_directory(p)) p /= "report.jsonl";
    std::ifstream in(p);
    if (!in) throw ParseError("cannot open report " + p.string());
    try {
        auto r = report_from_json(nlohmann::json::parse(in));
        r.output_dir = p.parent_path().string();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

inline void write_summary_csv(std::ostream& out, const ExperimentReport& r) {
    using detail::format_double;
    using detail::opt_str;
    out << "seed,policy,retention,ablation,test_mae,test_rmse,test_mape_pct,test_corr,cumulative_samples,wall_ms\n";
    double wall = 0.0;
    for (const auto& s : r.seeds) {
        out << s.seed << "," << r.policy << "," << format_double(r.retention) << "," << r.ablation << ","
            << format_double(s.test.mae) << "," << format_double(s.test.rmse) << "," << opt_str(s.test.mape_pct) << ","
            << opt_str(s.test.corr) << "," << s.cumulative_samples << "," << format_double(s.total_wall_ms) << "\n";
        wall += s.total_wall_ms;
    }
    const auto& a = r.aggregate;
    out << "mean," << r.policy << "," << format_double(r.retention) << "," << r.ablation << "," << format_double(a.mae)
        << "," << format_double(a.rmse) << "," << opt_str(a.mape_pct) << "," << opt_str(a.corr) << ","
        << format_double(a.cumulative_samples) << ","
        << format_double(r.seeds.empty() ? 0.0 : wall / static_cast<double>(r.seeds.size())) << "\n";
}

inline void write_epochs_csv(std::ostream& out, const ExperimentReport& r) {
    using detail::format_double;
    using detail::opt_str;
    out << "seed,epoch,train_loss,val_mae,val_rmse,val_mape_pct,val_corr,samples_processed,cumulative_samples,"
           "mean_weight,weight_sum,informative,retained_redundant,full_epoch,lr,wall_ms\n";
    for (const auto& s : r.seeds) {
        std::size_t cum = 0;
        for (const auto& e : s.rows) {
            cum += e.samples_processed;
            out << s.seed << "," << e.epoch << "," << format_double(e.train_loss) << "," << format_double(e.val.mae)
                << "," << format_double(e.val.rmse) << "," << opt_str(e.val.mape_pct) << "," << opt_str(e.val.corr)
                << "," << e.samples_processed << "," << cum << "," << format_double(e.mean_weight) << ","
                << format_double(e.weight_sum) << "," << e.informative_count << "," << e.retained_redundant << ","
                << (e.is_full_epoch ? 1 : 0) << "," << format_double(e.lr) << "," << format_double(e.wall_ms) << "\n";
        }
    }
}

/// Drops the named column from a CSV text (used to compare runs without wall clock).
inline std::string drop_csv_column(const std::string& csv, const std::string& column) {
    std::istringstream in(csv);
    std::string line, out;
    long drop = -1;
    bool header = true;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (header) {
            for (std::size_t i = 0; i < cells.size(); ++i)
                if (cells[i] == column) drop = static_cast<long>(i);
            header = false;
        }
        std::string joined;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (static_cast<long>(i) == drop) continue;
            if (!joined.empty()) joined += ",";
            joined += cells[i];
        }
        out += joined + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

inline ExperimentReport run(const ExperimentConfig& cfg, bool write_outputs = true) {
    cfg.validate();
    namespace fs = std::filesystem;

    RawSeries series;
    DatasetSplit split;
    try {
        series = build_series(cfg);
        split = chrono_split(series, cfg.train_ratio, cfg.val_ratio, cfg.test_ratio, cfg.history, cfg.horizon);
    } catch (const std::exception& e) {
        throw RunError(std::string("dataset: ") + e.what());
    }

    ExperimentReport report;
    report.config_echo = config_echo(cfg);
    report.config_hash = config_hash(cfg);
    report.policy = std::string(to_string(cfg.train.prune.policy));
    report.retention = retention_of(cfg.train.prune);
    report.ablation = ablation_label(cfg.train.prune);
    report.epochs = cfg.train.epochs;
    report.train_size = split.train.size();
    report.output_dir = cfg.output_dir;

    if (write_outputs) fs::create_directories(cfg.output_dir);

    if (cfg.analyze && write_outputs) {
        try {
            const auto train_part = series.slice(0, split.bounds.train_end);
            const auto red = analyze_redundancy(train_part, split.period, cfg.history, cfg.horizon);
            std::ofstream out(fs::path(cfg.output_dir) / "redundancy_report.csv");
            write_redundancy_csv(out, red, series.num_nodes);
        } catch (const std::exception& e) {
            throw RunError(std::string("analysis: ") + e.what());
        }
    }

    for (std::uint64_t seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        if (cfg.dump_plans && write_outputs) {
            fs::path dir = fs::path(cfg.output_dir) / "plans";
            if (cfg.seeds.size() > 1) dir /= "seed_" + std::to_string(seed);
            tc.plan_dump_dir = dir.string();
        }
        TrainResult tr;
        try {
            tr = train(split, tc, SeededRng(seed));
        } catch (const std::exception& e) {
            throw RunError("seed " + std::to_string(seed) + ": train: " + e.what());
        }
        SeedReport sr;
        sr.seed = seed;
        sr.rows = tr.rows;
        sr.test = tr.test;
        sr.cumulative_samples = tr.cumulative_samples();
        for (const auto& row : tr.rows) sr.total_wall_ms += row.wall_ms;
        if (cfg.checkpoint && write_outputs)
            save_checkpoint((fs::path(cfg.output_dir) / ("checkpoint_seed" + std::to_string(seed) + ".stck")).string(),
                            Checkpoint{tr.model, tr.optimizer, {SeededRng(seed)}});
        report.seeds.push_back(std::move(sr));
    }
    report.aggregate = aggregate_seeds(report.seeds);

    if (write_outputs) {
        std::ofstream(fs::path(cfg.output_dir) / "report.jsonl") << report_to_json(report).dump() << "\n";
        std::ofstream summary(fs::path(cfg.output_dir) / "summary.csv");
        write_summary_csv(summary, report);
        std::ofstream epochs(fs::path(cfg.output_dir) / "epochs.csv");
        write_epochs_csv(epochs, report);
    }
    return report;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

enum class SweepAxis { retention, policy, ablation };

inline SweepAxis parse_axis(const std::string& s) {
    if (s == "retention") return SweepAxis::retention;
    if (s == "policy") return SweepAxis::policy;
    if (s == "ablation") return SweepAxis::ablation;
    throw ConfigError("unknown sweep axis '" + s + "' (expected retention|policy|ablation)");
}

inline std::vector<std::string> default_axis_values(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::retention: return {"0.1", "0.3", "0.5", "0.7"};
        case SweepAxis::policy: return {"st_prune", "hard_random", "soft_random", "loss_mean_uniform"};
        case SweepAxis::ablation: return {"full", "no_stc", "no_res", "no_anne"};
    }
    return {};
}

/// Applies one axis value to a copy of the base config.
inline ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value) {
    ExperimentConfig c = base;
    switch (axis) {
        case SweepAxis::retention: {
            const double keep = detail::parse_double("retention", value);
            if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError("retention must lie in (0, 1]");
            c.train.prune.prune_ratio = 1.0 - keep;
            break;
        }
        case SweepAxis::policy:
            try {
                c.train.prune.policy = parse_policy(value);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            break;
        case SweepAxis::ablation:
            c.train.prune.policy = Policy::st_prune;
            c.train.prune.disable_complexity = value == "no_stc";
            c.train.prune.disable_rescale = value == "no_res";
            c.train.prune.disable_anneal = value == "no_anne";
            if (value != "full" && value != "no_stc" && value != "no_res" && value != "no_anne")
                throw ConfigError("unknown ablation '" + value + "' (expected full|no_stc|no_res|no_anne)");
            break;
    }
    return c;
}

struct SweepCell {
    std::string value;
    std::optional<ExperimentReport> report;
    std::string error;
};

struct SweepResult {
    ExperimentReport reference;  // full-data run
    std::vector<SweepCell> cells;
};

inline double relative_change_pct(double value, double reference) {
    return reference == 0.0 ? 0.0 : 100.0 * (value - reference) / reference;
}

inline void write_sweep_csv(std::ostream& out, SweepAxis axis, const SweepResult& s) {
    using detail::format_double;
    using detail::opt_str;
    const char* axis_name = axis == SweepAxis::retention ? "retention" : axis == SweepAxis::policy ? "policy" : "ablation";
    out << "axis,value,status,policy,retention,ablation,test_mae,test_rmse,test_mape_pct,cumulative_samples,"
           "work_fraction,mae_change_pct,rmse_change_pct,mape_change_pct,error\n";
    const auto& ref = s.reference.aggregate;
    const auto row = [&](const std::string& value, const ExperimentReport& r) {
        const auto& a = r.aggregate;
        out << axis_name << "," << value << ",ok," << r.policy << "," << format_double(r.retention) << "," << r.ablation
            << "," << format_double(a.mae) << "," << format_double(a.rmse) << "," << opt_str(a.mape_pct) << ","
            << format_double(a.cumulative_samples) << ","
            << format_double(ref.cumulative_samples > 0 ? a.cumulative_samples / ref.cumulative_samples : 0.0) << ","
            << format_double(relative_change_pct(a.mae, ref.mae)) << ","
            << format_double(relative_change_pct(a.rmse, ref.rmse)) << ","
            << (a.mape_pct && ref.mape_pct ? format_double(relative_change_pct(*a.mape_pct, *ref.mape_pct)) : "NA")
            << ",\n";
    };
    row("whole_dataset", s.reference);
    for (const auto& c : s.cells) {
        if (c.report) {
            row(c.value, *c.report);
        } else {
            std::string msg = c.error;
            for (char& ch : msg)
                if (ch == ',' || ch == '\n') ch = ';';
            out << axis_name << "," << c.value << ",failed,,,,,,,,,,,," << msg << "\n";
        }
    }
}

/// One run per axis value plus a whole-dataset reference. A failing cell is
/// recorded and the sweep moves on.
inline SweepResult sweep(const ExperimentConfig& base, SweepAxis axis, std::vector<std::string> values = {},
                         bool write_outputs = true) {
    namespace fs = std::filesystem;
    base.validate();
    if (values.empty()) values = default_axis_values(axis);

    // Resolve every cell before computing anything.
    std::vector<ExperimentConfig> cells;
    for (std::size_t k = 0; k < values.size(); ++k) {
        ExperimentConfig c = apply_axis(base, axis, values[k]);
        c.output_dir = (fs::path(base.output_dir) / ("cell_" + std::to_string(k) + "_" + values[k])).string();
        c.analyze = false;
        c.validate();
        cells.push_back(std::move(c));
    }

    SweepResult out;
    ExperimentConfig ref = base;
    ref.train.prune.policy = Policy::none;
    ref.output_dir = (fs::path(base.output_dir) / "reference").string();
    out.reference = run(ref, write_outputs);

    for (std::size_t k = 0; k < cells.size(); ++k) {
        SweepCell cell;
        cell.value = values[k];
        try {
            cell.report = run(cells[k], write_outputs);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
        out.cells.push_back(std::move(cell));
    }
    if (write_outputs) {
        fs::create_directories(base.output_dir);
        std::ofstream csv(fs::path(base.output_dir) / "sweep.csv");
        write_sweep_csv(csv, axis, out);
    }
    return out;
}

// ---------------------------------------------------------------------------
// plot data
// ---------------------------------------------------------------------------

/// tradeoff.csv and convergence.csv from seed-mean values, plus a
/// passthrough of any redundancy_report.csv found next to a report.
inline void emit_plot_data(const std::vector<ExperimentReport>& reports, const std::string& out_dir) {
    namespace fs = std::filesystem;
    using detail::format_double;
    using detail::opt_str;
    if (reports.empty()) throw std::invalid_argument("emit_plot_data: no reports");
    fs::create_directories(out_dir);

    std::ofstream trade(fs::path(out_dir) / "tradeoff.csv");
    trade << "policy,retention,ablation,seeds,cumulative_samples,test_mae,test_mape_pct\n";
    for (const auto& r : reports)
        trade << r.policy << "," << format_double(r.retention) << "," << r.ablation << "," << r.seeds.size() << ","
              << format_double(r.aggregate.cumulative_samples) << "," << format_double(r.aggregate.mae) << ","
              << opt_str(r.aggregate.mape_pct) << "\n";

    std::ofstream conv(fs::path(out_dir) / "convergence.csv");
    conv << "policy,retention,ablation,epoch,val_mae\n";
    for (const auto& r : reports) {
        if (r.seeds.empty()) continue;
        for (std::size_t e = 0; e < r.seeds.front().rows.size(); ++e) {
            double acc = 0.0;
            std::size_t n = 0;
            for (const auto& s : r.seeds)
                if (e < s.rows.size()) acc += s.rows[e].val.mae, ++n;
            conv << r.policy << "," << format_double(r.retention) << "," << r.ablation << "," << e + 1 << ","
                 << format_double(acc / static_cast<double>(n)) << "\n";
        }
    }

    std::ofstream red;
    for (const auto& r : reports) {
        const fs::path src = fs::path(r.output_dir) / "redundancy_report.csv";
        if (r.output_dir.empty() || !fs::exists(src)) continue;
        if (!red.is_open()) {
            red.open(fs::path(out_dir) / "redundancy_report.csv");
            red << "source,statistic,index,value\n";
        }
        std::ifstream in(src);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) red << r.output_dir << "," << line << "\n";
    }
}

}  // namespace stprune
