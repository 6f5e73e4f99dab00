/*
 * trainer.hpp
 *
 * Fixed-epoch training loop driven by per-epoch sample plans.
 *
 * Each epoch: build the plan from the scores recorded so far, shuffle the
 * retained indices, run weighted mini-batches (the last short batch is
 * kept), and refresh the score of every sample that was actually computed.
 * Skipped samples keep their last-known score.
 */
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "stprune/dataset.hpp"
#include "stprune/metrics.hpp"
#include "stprune/model.hpp"
#include "stprune/pruning.hpp"

namespace stprune {

struct TrainConfig {
    ModelConfig model;
    PruneConfig prune;
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    double base_lr = 1e-3;
    double min_lr = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double mape_floor = 1e-3;
    std::string plan_dump_dir;  // empty: no dump

    void validate() const {
        prune.validate();
        if (epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
        if (batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
        if (!(base_lr > 0.0) || !(min_lr >= 0.0) || min_lr > base_lr)
            throw std::invalid_argument("train: need 0 <= min_lr <= base_lr, base_lr > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight decay must be >= 0");
    }
};

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    EvalResult val;
    std::size_t samples_processed = 0;
    double wall_ms = 0.0;
    double lr = 0.0;
    double mean_weight = 0.0;
    double weight_sum = 0.0;
    std::size_t informative_count = 0;
    std::size_t retained_redundant = 0;
    bool is_full_epoch = false;
};

struct TrainResult {
    std::vector<EpochRow> rows;
    EvalResult test;
    Forecaster model;
    OptimizerState optimizer;

    std::size_t cumulative_samples() const {
        std::size_t s = 0;
        for (const auto& r : rows) s += r.samples_processed;
        return s;
    }
    std::vector<EpochWork> work() const {
        std::vector<EpochWork> w;
        for (const auto& r : rows) w.push_back({r.samples_processed, r.wall_ms});
        return w;
    }
};

inline EvalResult evaluate_samples(const Forecaster& model, const std::vector<WindowedSample>& samples,
                                   const Normalizer& z, double mape_floor) {
    std::vector<double> pred, truth;
    pred.reserve(samples.size() * model.shape().y_size());
    truth.reserve(pred.capacity());
    for (const auto& s : samples) {
        const auto p = model.predict(s, z);
        pred.insert(pred.end(), p.begin(), p.end());
        truth.insert(truth.end(), s.y.begin(), s.y.end());
    }
    return evaluate(pred, truth, mape_floor);
}

inline TrainResult train(const DatasetSplit& split, const TrainConfig& cfg, const SeededRng& run_rng) {
    cfg.validate();
    const std::size_t m = split.train.size();
    if (m == 0) throw std::invalid_argument("train: empty train split");

    TrainResult out;
    out.model = Forecaster(split.shape, split.period, cfg.model);
    out.model.init(run_rng.split(Stream::weight_init));
    out.optimizer = OptimizerState(out.model.size());
    out.optimizer.base_lr = cfg.base_lr;
    out.optimizer.min_lr = cfg.min_lr;
    out.optimizer.momentum = cfg.momentum;
    out.optimizer.weight_decay = cfg.weight_decay;
    out.optimizer.horizon = cfg.epochs;

    std::vector<double> intensity(m);
    for (std::size_t i = 0; i < m; ++i) intensity[i] = split.train[i].dynamic_intensity;
    const double mean_intensity = mean(intensity);

    ScoreTable scores(m);
    std::vector<double> last_loss(m, 0.0);
    const double lambda = cfg.prune.effective_lambda();

    if (!cfg.plan_dump_dir.empty()) std::filesystem::create_directories(cfg.plan_dump_dir);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        out.optimizer.schedule_t = epoch - 1;

        const EpochPlan plan =
            cfg.prune.policy == Policy::st_prune
                ? epoch_plan(epoch, cfg.epochs, scores, intensity, mean_intensity, cfg.prune, run_rng)
                : baseline_plan(cfg.prune.policy, epoch, cfg.epochs, m, cfg.prune, run_rng, last_loss);

        if (!cfg.plan_dump_dir.empty()) {
            std::ofstream dump(std::filesystem::path(cfg.plan_dump_dir) / ("epoch_" + std::to_string(epoch) + ".csv"));
            write_plan_csv(dump, plan, m);
        }

        std::vector<RetainedSample> order = plan.retained;
        SeededRng shuffle_rng = run_rng.split(Stream::shuffle, epoch);
        shuffle_rng.shuffle(order);

        EpochRow row;
        row.epoch = epoch;
        row.lr = out.optimizer.lr();
        row.samples_processed = order.size();
        row.mean_weight = plan.mean_weight();
        row.weight_sum = plan.weight_sum();
        row.informative_count = plan.informative_count;
        row.retained_redundant = plan.retained_redundant;
        row.is_full_epoch = plan.is_full_epoch;

        double weighted_loss = 0.0, total_weight = 0.0;
        std::vector<Forecaster::WeightedSample> batch;
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
            batch.clear();
            for (std::size_t k = lo; k < hi; ++k) batch.push_back({&split.train[order[k].index], order[k].weight});
            Forecaster::LossResult res;
            try {
                res = out.model.weighted_loss_and_grads(batch, split.normalizer);
            } catch (const DivergenceError& e) {
                throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what());
            }
            for (std::size_t k = 0; k < batch.size(); ++k) {
                const std::size_t idx = batch[k].sample->index;
                scores.update(score_sample(res.errors[k].abs_errors, lambda, idx, epoch));
                last_loss[idx] = res.sample_mae[k];
            }
            weighted_loss += res.loss * res.weight_sum;
            total_weight += res.weight_sum;
            sgd_step(out.model.params(), res.grads, out.optimizer);
        }
        row.train_loss = total_weight > 0.0 ? weighted_loss / total_weight : 0.0;
        if (!std::isfinite(row.train_loss))
            throw DivergenceError("divergence at epoch " + std::to_string(epoch));
        row.val = evaluate_samples(out.model, split.val, split.normalizer, cfg.mape_floor);
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        out.rows.push_back(row);
    }
    out.test = evaluate_samples(out.model, split.test, split.normalizer, cfg.mape_floor);
    return out;
}

}  // namespace stprune
