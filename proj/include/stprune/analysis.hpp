/*
 * analysis.hpp
 *
 * Redundancy statistics over a raw series: node correlation structure,
 * spatial and temporal PCA explained variance, and the distribution of
 * per-sample dynamic intensity.
 */
#pragma once

#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stprune/dataset.hpp"
#include "stprune/numerics.hpp"

namespace stprune {

struct CorrelationResult {
    DenseMatrix matrix;               // over kept nodes only
    std::vector<std::size_t> nodes;   // original index of each row
    std::vector<std::size_t> excluded;  // constant nodes
};

inline bool is_constant(std::span<const double> v) {
    for (double x : v)
        if (x != v.front()) return false;
    return true;
}

/// Pearson correlation between every pair of non-constant nodes.
inline CorrelationResult correlation_matrix(const RawSeries& series, std::size_t feature = 0) {
    if (series.num_frames < 2) throw std::invalid_argument("correlation_matrix: need at least 2 frames");
    if (feature >= series.num_features) throw std::invalid_argument("correlation_matrix: feature out of range");
    CorrelationResult out;
    std::vector<std::vector<double>> cols;
    for (std::size_t n = 0; n < series.num_nodes; ++n) {
        auto s = series.node_series(n, feature);
        if (is_constant(s)) {
            out.excluded.push_back(n);
            continue;
        }
        out.nodes.push_back(n);
        cols.push_back(std::move(s));
    }
    if (cols.empty()) throw std::invalid_argument("correlation_matrix: all nodes constant");
    const std::size_t m = cols.size();
    out.matrix = DenseMatrix(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        out.matrix(i, i) = 1.0;
        for (std::size_t j = i + 1; j < m; ++j) {
            const double r = pearson(cols[i], cols[j]);
            out.matrix(i, j) = r;
            out.matrix(j, i) = r;
        }
    }
    return out;
}

/// Fraction of off-diagonal pairs with correlation >= threshold.
inline double fraction_pairs_at_least(const DenseMatrix& corr, double threshold) {
    const std::size_t m = corr.rows();
    if (m < 2) return 0.0;
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            ++total;
            if (corr(i, j) >= threshold) ++hits;
        }
    return static_cast<double>(hits) / static_cast<double>(total);
}

enum class PcaAxis { spatial, temporal };

/// Cumulative explained-variance fractions of the eigenvalues of a covariance.
inline std::vector<double> cumulative_explained(const DenseMatrix& cov) {
    const auto eig = sym_eig(cov);
    double total = 0.0;
    for (double v : eig.values) total += std::max(v, 0.0);
    if (!(total > 0.0)) throw std::invalid_argument("pca_explained: zero total variance");
    std::vector<double> out;
    out.reserve(eig.values.size());
    double acc = 0.0;
    for (double v : eig.values) {
        acc += std::max(v, 0.0);
        out.push_back(std::min(acc / total, 1.0));
    }
    return out;
}

/// Spatial axis: nodes are the variables, frames the observations.
/// Temporal axis: the series is folded into day-length profiles; each
/// (node, day) is an observation and each time-of-day slot a variable.
inline std::vector<double> pca_explained(const RawSeries& series, PcaAxis axis, std::size_t period = 0,
                                         std::size_t feature = 0) {
    if (feature >= series.num_features) throw std::invalid_argument("pca_explained: feature out of range");
    if (axis == PcaAxis::spatial) {
        if (series.num_nodes < 2) throw std::invalid_argument("pca_explained: need at least 2 nodes");
        DenseMatrix obs(series.num_frames, series.num_nodes);
        for (std::size_t t = 0; t < series.num_frames; ++t)
            for (std::size_t n = 0; n < series.num_nodes; ++n) obs(t, n) = series.at(t, n, feature);
        return cumulative_explained(column_covariance(obs));
    }
    if (period == 0) period = series.period;
    if (period < 2) throw std::invalid_argument("pca_explained: temporal axis needs a period >= 2");
    const std::size_t days = series.num_frames / period;
    if (days * series.num_nodes < 2)
        throw std::invalid_argument("pca_explained: need at least 2 day profiles");
    DenseMatrix obs(days * series.num_nodes, period);
    for (std::size_t n = 0; n < series.num_nodes; ++n)
        for (std::size_t d = 0; d < days; ++d)
            for (std::size_t p = 0; p < period; ++p)
                obs(n * days + d, p) = series.at(d * period + p, n, feature);
    return cumulative_explained(column_covariance(obs));
}

struct HistogramBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
};

/// Equal-width bins over [0, max intensity]; the last bin is closed.
inline std::vector<HistogramBin> intensity_histogram(const std::vector<WindowedSample>& samples,
                                                     std::size_t bins) {
    if (samples.empty()) throw std::invalid_argument("intensity_histogram: empty input");
    if (bins == 0) throw std::invalid_argument("intensity_histogram: bins must be >= 1");
    double hi = 0.0;
    for (const auto& s : samples) hi = std::max(hi, s.dynamic_intensity);
    const double width = hi / static_cast<double>(bins);
    std::vector<HistogramBin> out(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        out[b].lower = width * static_cast<double>(b);
        out[b].upper = b + 1 == bins ? hi : width * static_cast<double>(b + 1);
    }
    for (const auto& s : samples) {
        std::size_t b = 0;
        if (width > 0.0)
            b = std::min(bins - 1, static_cast<std::size_t>(s.dynamic_intensity / width));
        ++out[b].count;
    }
    return out;
}

struct RedundancyReport {
    CorrelationResult correlation;
    double frac_pairs_ge_08 = 0.0;
    std::vector<double> spatial_explained;
    std::vector<double> temporal_explained;
    std::vector<HistogramBin> intensity;
};

inline RedundancyReport analyze_redundancy(const RawSeries& series, std::size_t period,
                                           std::size_t history, std::size_t horizon,
                                           std::size_t bins = 20) {
    RedundancyReport r;
    r.correlation = correlation_matrix(series);
    r.frac_pairs_ge_08 = fraction_pairs_at_least(r.correlation.matrix, 0.8);
    if (series.num_nodes >= 2) r.spatial_explained = pca_explained(series, PcaAxis::spatial);
    if (period == 0) period = series.period;
    if (period >= 2 && series.num_frames / period * series.num_nodes >= 2)
        r.temporal_explained = pca_explained(series, PcaAxis::temporal, period);
    r.intensity = intensity_histogram(make_windows(series, history, horizon), bins);
    return r;
}

/// Long-format CSV: statistic,index,value. Pairs involving an excluded
/// constant node are written with value NA.
inline void write_redundancy_csv(std::ostream& out, const RedundancyReport& r, std::size_t num_nodes) {
    out.precision(17);
    out << "statistic,index,value\n";
    out << "frac_pairs_ge_0.8,0," << r.frac_pairs_ge_08 << "\n";
    std::vector<long> row_of(num_nodes, -1);
    for (std::size_t i = 0; i < r.correlation.nodes.size(); ++i)
        row_of[r.correlation.nodes[i]] = static_cast<long>(i);
    for (std::size_t i = 0; i < num_nodes; ++i)
        for (std::size_t j = 0; j < num_nodes; ++j) {
            out << "corr," << i << ":" << j << ",";
            if (row_of[i] < 0 || row_of[j] < 0)
                out << "NA\n";
            else
                out << r.correlation.matrix(static_cast<std::size_t>(row_of[i]), static_cast<std::size_t>(row_of[j])) << "\n";
        }
    for (std::size_t k = 0; k < r.spatial_explained.size(); ++k)
        out << "spatial_explained," << k + 1 << "," << r.spatial_explained[k] << "\n";
    for (std::size_t k = 0; k < r.temporal_explained.size(); ++k)
        out << "temporal_explained," << k + 1 << "," << r.temporal_explained[k] << "\n";
    for (std::size_t b = 0; b < r.intensity.size(); ++b) {
        out << "intensity_bin_lower," << b << "," << r.intensity[b].lower << "\n";
        out << "intensity_bin_count," << b << "," << r.intensity[b].count << "\n";
    }
}

}  // namespace stprune
