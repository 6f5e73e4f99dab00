#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "stprune/analysis.hpp"

using namespace stprune;

namespace {

RawSeries from_columns(const std::vector<std::vector<double>>& cols) {
    RawSeries s;
    s.num_nodes = cols.size();
    s.num_frames = cols.front().size();
    s.num_features = 1;
    for (std::size_t t = 0; t < s.num_frames; ++t)
        for (const auto& c : cols) s.values.push_back(c[t]);
    return s;
}

SynthSpec clean_spec(std::size_t rank) {
    SynthSpec sp;
    sp.num_nodes = 8;
    sp.num_frames = 480;
    sp.rank = rank;
    sp.noise_level = 0;
    sp.anomaly_rate = 0;
    return sp;
}

}  // namespace

TEST(Correlation, RankOneAllUnitMagnitude) {
    const auto r = correlation_matrix(synthesize(clean_spec(1), SeededRng(2)));
    for (double v : r.matrix.data()) EXPECT_NEAR(std::abs(v), 1.0, 1e-9);
    EXPECT_DOUBLE_EQ(fraction_pairs_at_least(r.matrix, 0.8), 1.0);
}

TEST(Correlation, IndependentNoiseNearZero) {
    SeededRng rng(17);
    std::vector<double> a(10000), b(10000);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const auto r = correlation_matrix(from_columns({a, b}));
    EXPECT_LT(std::abs(r.matrix(0, 1)), 0.05);
    EXPECT_DOUBLE_EQ(r.matrix(0, 0), 1.0);
}

TEST(Correlation, SingleNodeAndConstantExclusion) {
    const auto one = correlation_matrix(from_columns({{1, 2, 4}}));
    ASSERT_EQ(one.matrix.rows(), 1u);
    EXPECT_EQ(one.matrix(0, 0), 1.0);

    const auto r = correlation_matrix(from_columns({{1, 2, 4}, {3, 3, 3}, {2, 4, 8}}));
    ASSERT_EQ(r.nodes.size(), 2u);
    EXPECT_EQ(r.excluded, std::vector<std::size_t>{1});
    EXPECT_NEAR(r.matrix(0, 1), 1.0, 1e-12);
    EXPECT_THROW(correlation_matrix(from_columns({{3, 3, 3}, {1, 1, 1}})), std::invalid_argument);
}

TEST(Correlation, CsvWritesNaForConstantNodes) {
    const auto s = from_columns({{1, 2, 4, 3}, {3, 3, 3, 3}, {2, 4, 8, 1}});
    RedundancyReport r;
    r.correlation = correlation_matrix(s);
    std::ostringstream out;
    write_redundancy_csv(out, r, 3);
    const std::string csv = out.str();
    EXPECT_NE(csv.find("corr,0:1,NA"), std::string::npos);
    EXPECT_NE(csv.find("corr,1:1,NA"), std::string::npos);
    EXPECT_NE(csv.find("corr,0:0,1"), std::string::npos);
}

TEST(Pca, HadamardColumnsGiveFlatSpectrum) {
    // columns 2..4 of the 4x4 Hadamard matrix: zero mean, unit variance, orthogonal
    const auto s = from_columns({{1, -1, 1, -1}, {1, 1, -1, -1}, {1, -1, -1, 1}});
    const auto c = pca_explained(s, PcaAxis::spatial);
    ASSERT_EQ(c.size(), 3u);
    EXPECT_NEAR(c[0], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(c[1], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(c[2], 1.0, 1e-12);
}

TEST(Pca, DominantNode) {
    SeededRng rng(1);
    std::vector<double> a(200), z(200, 0.0);
    for (auto& v : a) v = 10 * rng.normal();
    const auto c = pca_explained(from_columns({a, z, z}), PcaAxis::spatial);
    EXPECT_NEAR(c[0], 1.0, 1e-12);
    EXPECT_NEAR(cumulative_explained(DenseMatrix(2, 2, std::vector<double>{100, 0, 0, 0}))[0], 1.0, 1e-15);
}

TEST(Pca, RankTwoNoiselessSaturatesAtTwo) {
    const auto c = pca_explained(synthesize(clean_spec(2), SeededRng(5)), PcaAxis::spatial);
    EXPECT_NEAR(c[1], 1.0, 1e-9);
    EXPECT_LT(c[0], 1.0 - 1e-6);
    for (std::size_t k = 1; k < c.size(); ++k) EXPECT_GE(c[k] + 1e-15, c[k - 1]);
}

TEST(Pca, TemporalFolding) {
    // every node repeats one day profile scaled by a node factor -> one temporal component
    const std::size_t period = 6, days = 5;
    std::vector<std::vector<double>> cols;
    for (double scale : {1.0, 2.0, -0.5}) {
        std::vector<double> c;
        for (std::size_t d = 0; d < days; ++d)
            for (std::size_t p = 0; p < period; ++p) c.push_back(scale * std::sin(static_cast<double>(p)));
        cols.push_back(c);
    }
    const auto c = pca_explained(from_columns(cols), PcaAxis::temporal, period);
    ASSERT_EQ(c.size(), period);
    EXPECT_NEAR(c[0], 1.0, 1e-9);
    EXPECT_THROW(pca_explained(from_columns(cols), PcaAxis::temporal, 0), std::invalid_argument);
    EXPECT_THROW(pca_explained(from_columns({{1, 1, 1}, {2, 2, 2}}), PcaAxis::spatial), std::invalid_argument);
}

TEST(Histogram, ConstantBinsAndTotals) {
    RawSeries flat = from_columns({std::vector<double>(40, 2.0), std::vector<double>(40, 2.0)});
    const auto w = make_windows(flat, 4, 4);
    const auto h = intensity_histogram(w, 20);
    EXPECT_EQ(h[0].count, w.size());
    EXPECT_EQ(h[0].lower, 0.0);
    const auto one = intensity_histogram(make_windows(synthesize(clean_spec(2), SeededRng(1)), 12, 12), 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].count, 480u - 24 + 1);
    EXPECT_THROW(intensity_histogram({}, 3), std::invalid_argument);
    EXPECT_THROW(intensity_histogram(w, 0), std::invalid_argument);
}

TEST(Histogram, AnomaliesGiveLongTail) {
    const auto s = synthesize(SynthSpec{}, SeededRng(7));
    const auto h = intensity_histogram(make_windows(s, 12, 12), 10);
    std::size_t total = 0;
    for (const auto& b : h) total += b.count;
    EXPECT_LT(static_cast<double>(h.back().count), 0.15 * static_cast<double>(total));
    EXPECT_GT(h.front().count, h.back().count);
}

TEST(Redundancy, FullReport) {
    auto sp = SynthSpec{};
    sp.num_frames = 960;
    const auto s = synthesize(sp, SeededRng(3));
    const auto r = analyze_redundancy(s, s.period, 12, 12);
    EXPECT_EQ(r.spatial_explained.size(), sp.num_nodes);
    EXPECT_EQ(r.temporal_explained.size(), sp.period);
    EXPECT_EQ(r.intensity.size(), 20u);
    EXPECT_GT(r.frac_pairs_ge_08, 0.0);
    std::ostringstream out;
    write_redundancy_csv(out, r, sp.num_nodes);
    EXPECT_EQ(out.str().rfind("statistic,index,value\n", 0), 0u);
}
