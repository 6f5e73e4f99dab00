#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stprune/harness.hpp"

using namespace stprune;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("stprune_harness_" + name);
    fs::remove_all(p);
    return p;
}

ExperimentConfig small(const fs::path& out) {
    std::istringstream in(R"(
# small synthetic run
[dataset]
history = 6
horizon = 6
[synth]
nodes = 5
frames = 600
period = 48
anomaly_duration = 12
[train]
epochs = 10
batch_size = 32
lr = 0.01
min_lr = 0.001
[prune]
policy = st_prune
ratio = 0.5
)");
    auto c = parse_config(in, "test");
    c.output_dir = out.string();
    return c;
}

}  // namespace

TEST(Config, DefaultsMirrorReferenceTable) {
    ExperimentConfig c;
    EXPECT_EQ(c.train.epochs, 100u);
    EXPECT_EQ(c.train.batch_size, 256u);
    EXPECT_EQ(c.train.base_lr, 1e-3);
    EXPECT_EQ(c.train.min_lr, 1e-4);
    EXPECT_EQ(c.train.momentum, 0.9);
    EXPECT_EQ(c.train.weight_decay, 1e-4);
    EXPECT_EQ(c.train.prune.lambda, 0.5);
    EXPECT_EQ(c.train.prune.anneal_cutoff, 0.9);
    c.validate();
}

TEST(Config, ParsesEveryKeyAndEchoesCanonically) {
    std::istringstream in(R"(
[dataset]
source = synth
train_ratio = 0.7
val_ratio = 0.1
test_ratio = 0.2   # trailing comment
[model]
arch = linear
[prune]
policy = hard_random
ratio = 0.3
disable_anneal = true
[run]
seeds = 1, 2,3
output = somewhere
)");
    const auto c = parse_config(in);
    EXPECT_EQ(c.train_ratio, 0.7);
    EXPECT_EQ(c.train.model.arch, Architecture::linear);
    EXPECT_EQ(c.train.prune.policy, Policy::hard_random);
    EXPECT_TRUE(c.train.prune.disable_anneal);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    const std::string echo = config_echo(c);
    EXPECT_NE(echo.find("prune.ratio = 0.29999999999999999\n"), std::string::npos);
    // echo parses back to the same config
    std::string sectioned;
    std::string current;
    std::istringstream lines(echo);
    for (std::string l; std::getline(lines, l);) {
        const auto dot = l.find('.');
        const std::string sec = l.substr(0, dot);
        if (sec != current) sectioned += "[" + sec + "]\n", current = sec;
        sectioned += l.substr(dot + 1) + "\n";
    }
    std::istringstream again(sectioned);
    EXPECT_EQ(config_hash(parse_config(again)), config_hash(c));
    ExperimentConfig other = c;
    other.train.prune.lambda = 0.25;
    EXPECT_NE(config_hash(other), config_hash(c));
    EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(Config, UnknownKeysAndBadValuesAreErrors) {
    const auto fails = [](const std::string& text, const std::string& needle) {
        std::istringstream in(text);
        try {
            parse_config(in, "cfg");
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
            return;
        }
        ADD_FAILURE() << "no error for: " << text;
    };
    fails("[prune]\nratoi = 0.5\n", "cfg:2");
    fails("[prune]\nratio = 1.0\n", "ratio");
    fails("[nope]\n", "unknown section");
    fails("ratio = 0.5\n", "outside");
    fails("[train]\nepochs = ten\n", "epochs");
    fails("[train]\nepochs = -3\n", "epochs");
    fails("[prune]\npolicy = greedy\n", "policy");
    fails("[dataset]\nsource = csv\n", "dataset.path");
    fails("[dataset]\ntrain_ratio = 0.5\n", "sum to 1");
    fails("[run]\nseeds =\n", "seed");
    fails("[prune]\ndisable_anneal = maybe\n", "disable_anneal");
    EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST(Run, WritesOutputsAndAggregates) {
    const auto out = scratch("run");
    auto c = small(out);
    c.seeds = {1, 2, 3};
    c.analyze = true;
    c.dump_plans = true;
    c.checkpoint = true;
    const auto r = run(c);
    ASSERT_EQ(r.seeds.size(), 3u);
    double mean_mae = 0.0;
    for (const auto& s : r.seeds) {
        EXPECT_EQ(s.rows.size(), c.train.epochs);
        mean_mae += s.test.mae;
    }
    EXPECT_NEAR(r.aggregate.mae, mean_mae / 3, 1e-12);
    for (const char* f : {"report.jsonl", "summary.csv", "epochs.csv", "redundancy_report.csv",
                          "checkpoint_seed2.stck", "plans/seed_3/epoch_10.csv"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    const auto summary = slurp(out / "summary.csv");
    EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 5);
    EXPECT_NE(summary.find("\nmean,"), std::string::npos);
    const auto loaded = load_report((out / "report.jsonl").string());
    EXPECT_EQ(loaded.config_hash, r.config_hash);
    EXPECT_EQ(loaded.seeds[1].rows[4].samples_processed, r.seeds[1].rows[4].samples_processed);
    EXPECT_NEAR(loaded.aggregate.mae, r.aggregate.mae, 1e-12);
    const auto ck = load_checkpoint((out / "checkpoint_seed2.stck").string());
    EXPECT_EQ(ck.model.size(), ck.optimizer.momentum_buffer.size());
    fs::remove_all(out);
}

TEST(Run, StPruneUnderEightyPercentOfFull) {
    auto c = small(scratch("ratio"));
    const auto pruned = run(c, false);
    c.train.prune.policy = Policy::none;
    const auto full = run(c, false);
    EXPECT_LE(pruned.aggregate.cumulative_samples, 0.8 * full.aggregate.cumulative_samples);
}

TEST(Run, ReproducibleSummaryExceptWallClock) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    run(small(a));
    run(small(b));
    EXPECT_EQ(drop_csv_column(slurp(a / "summary.csv"), "wall_ms"), drop_csv_column(slurp(b / "summary.csv"), "wall_ms"));
    EXPECT_EQ(drop_csv_column(slurp(a / "epochs.csv"), "wall_ms"), drop_csv_column(slurp(b / "epochs.csv"), "wall_ms"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Run, ErrorsCarryContext) {
    auto c = small(scratch("err"));
    c.train.base_lr = 1e200;
    c.train.min_lr = 1e199;
    c.seeds = {4};
    try {
        run(c, false);
        FAIL();
    } catch (const RunError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("seed 4"), std::string::npos) << msg;
        EXPECT_NE(msg.find("epoch"), std::string::npos) << msg;
    }
    auto bad = small(scratch("err2"));
    bad.source = DataSource::csv;
    bad.data_path = "/nonexistent.csv";
    EXPECT_THROW(run(bad, false), RunError);
    bad = small(scratch("err3"));
    bad.train.prune.prune_ratio = 1.0;
    EXPECT_THROW(run(bad, false), ConfigError);
}

TEST(Run, CsvAndStbSources) {
    const auto dir = scratch("sources");
    fs::create_directories(dir);
    SynthSpec sp;
    sp.num_nodes = 3;
    sp.num_frames = 200;
    const auto s = synthesize(sp, SeededRng(1));
    save_stb((dir / "d.stb").string(), s);
    {
        std::ofstream csv(dir / "d.csv");
        csv << "a,b,c\n";
        for (std::size_t t = 0; t < s.num_frames; ++t)
            csv << s.at(t, 0) << "," << s.at(t, 1) << "," << s.at(t, 2) << "\n";
    }
    auto c = small(dir / "out");
    c.train.epochs = 2;
    c.period = 96;
    c.source = DataSource::stb;
    c.data_path = (dir / "d.stb").string();
    EXPECT_EQ(run(c, false).seeds[0].rows.size(), 2u);
    c.source = DataSource::csv;
    c.data_path = (dir / "d.csv").string();
    EXPECT_EQ(run(c, false).seeds[0].rows.size(), 2u);
    fs::remove_all(dir);
}

TEST(Sweep, RetentionMonotoneWork) {
    const auto out = scratch("sweep_ret");
    auto c = small(out);
    c.train.epochs = 6;
    const auto s = sweep(c, SweepAxis::retention);
    ASSERT_EQ(s.cells.size(), 4u);
    double prev = 0.0;
    for (const auto& cell : s.cells) {  // retention 0.1, 0.3, 0.5, 0.7
        ASSERT_TRUE(cell.report) << cell.error;
        EXPECT_GE(cell.report->aggregate.cumulative_samples, prev);
        prev = cell.report->aggregate.cumulative_samples;
    }
    EXPECT_LE(prev, s.reference.aggregate.cumulative_samples);
    const auto csv = slurp(out / "sweep.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
    fs::remove_all(out);
}

TEST(Sweep, PolicyAndAblationSemantics) {
    auto c = small(scratch("sweep_pol"));
    c.train.epochs = 10;
    const auto pol = sweep(c, SweepAxis::policy, {}, false);
    ASSERT_EQ(pol.cells.size(), 4u);
    const auto& hard = *pol.cells[1].report;
    EXPECT_EQ(hard.policy, "hard_random");
    for (const auto& row : hard.seeds[0].rows)
        EXPECT_EQ(row.samples_processed, hard.seeds[0].rows[0].samples_processed);

    const auto abl = sweep(c, SweepAxis::ablation, {"no_anne"}, false);
    const auto& rows = abl.cells[0].report->seeds[0].rows;
    EXPECT_FALSE(rows[9].is_full_epoch);
    EXPECT_EQ(abl.cells[0].report->ablation, "no_anne");
}

TEST(Sweep, InvalidCellRejectedUpFrontAndFailuresRecorded) {
    auto c = small(scratch("sweep_bad"));
    EXPECT_THROW(sweep(c, SweepAxis::retention, {"0.5", "1.5"}, false), ConfigError);
    EXPECT_THROW(parse_axis("width"), ConfigError);
    // a cell that fails at run time does not stop the sweep: an enormous
    // alpha overflows the rescaling weights of st_prune only
    c.train.epochs = 3;
    c.train.prune.alpha = 1000;
    const auto r = sweep(c, SweepAxis::policy, {"st_prune", "hard_random"}, false);
    ASSERT_EQ(r.cells.size(), 2u);
    EXPECT_FALSE(r.cells[0].report);
    EXPECT_NE(r.cells[0].error.find("seed 1"), std::string::npos) << r.cells[0].error;
    EXPECT_TRUE(r.cells[1].report);
    std::ostringstream csv;
    write_sweep_csv(csv, SweepAxis::policy, r);
    EXPECT_NE(csv.str().find("policy,st_prune,failed"), std::string::npos);
}

TEST(PlotData, TradeoffAndConvergence) {
    EXPECT_THROW(emit_plot_data({}, scratch("plot_empty").string()), std::invalid_argument);
    const auto out = scratch("plot");
    auto c = small(out / "run");
    c.seeds = {1, 2};
    c.train.epochs = 4;
    c.analyze = true;
    const auto r = run(c);
    emit_plot_data({r}, (out / "plot").string());
    const auto trade = slurp(out / "plot" / "tradeoff.csv");
    EXPECT_EQ(std::count(trade.begin(), trade.end(), '\n'), 2);
    EXPECT_NE(trade.find(detail::format_double(r.aggregate.mae)), std::string::npos);
    const auto conv = slurp(out / "plot" / "convergence.csv");
    EXPECT_EQ(std::count(conv.begin(), conv.end(), '\n'), 5);
    EXPECT_TRUE(fs::exists(out / "plot" / "redundancy_report.csv"));
    fs::remove_all(out);
}
