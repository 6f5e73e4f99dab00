/*
 * metrics.hpp
 *
 * MAE / RMSE / MAPE / Corr over all horizons jointly, and the work
 * counters used for efficiency comparisons.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace stprune {

struct EvalResult {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape_pct;  // empty when every |y| <= mape_floor
    std::optional<double> corr;      // empty when truth or prediction is constant
    std::size_t n = 0;
};

inline EvalResult evaluate(std::span<const double> pred, std::span<const double> truth,
                           double mape_floor = 1e-3) {
    if (pred.size() != truth.size()) throw std::invalid_argument("evaluate: length mismatch");
    if (pred.empty()) throw std::invalid_argument("evaluate: empty input");
    const std::size_t n = pred.size();
    double abs_sum = 0.0, sq_sum = 0.0, ape_sum = 0.0;
    std::size_t ape_n = 0;
    double my = 0.0, mp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(pred[i]) || !std::isfinite(truth[i]))
            throw std::invalid_argument("evaluate: non-finite entry");
        const double d = truth[i] - pred[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
        if (std::abs(truth[i]) > mape_floor) {
            ape_sum += std::abs((pred[i] - truth[i]) / truth[i]);
            ++ape_n;
        }
        my += truth[i];
        mp += pred[i];
    }
    my /= static_cast<double>(n);
    mp /= static_cast<double>(n);

    EvalResult r;
    r.n = n;
    r.mae = abs_sum / static_cast<double>(n);
    r.rmse = std::sqrt(sq_sum / static_cast<double>(n));
    if (ape_n > 0) r.mape_pct = 100.0 * ape_sum / static_cast<double>(ape_n);

    double syp = 0.0, syy = 0.0, spp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dy = truth[i] - my, dp = pred[i] - mp;
        syp += dy * dp;
        syy += dy * dy;
        spp += dp * dp;
    }
    if (syy > 0.0 && spp > 0.0) r.corr = std::clamp(syp / std::sqrt(syy * spp), -1.0, 1.0);
    return r;
}

struct EpochWork {
    std::size_t samples_processed = 0;
    double wall_ms = 0.0;
};

struct WorkCounters {
    std::vector<std::size_t> per_epoch;
    std::vector<std::size_t> cumulative;
    std::vector<double> wall_ms;
    std::size_t total() const { return cumulative.empty() ? 0 : cumulative.back(); }
};

inline WorkCounters work_counters(std::span<const EpochWork> epochs) {
    WorkCounters w;
    std::size_t acc = 0;
    for (const auto& e : epochs) {
        acc += e.samples_processed;
        w.per_epoch.push_back(e.samples_processed);
        w.cumulative.push_back(acc);
        w.wall_ms.push_back(e.wall_ms);
    }
    return w;
}

}  // namespace stprune
