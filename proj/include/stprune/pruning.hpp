/*
 * pruning.hpp
 *
 * Per-epoch sample selection.
 *
 * ST-Prune policy, one pruned epoch:
 *
 *   1. every train sample carries its last-known complexity score
 *        H = mu + lambda * (sigma_space + sigma_time)
 *      computed from its absolute-error field (nodes x horizon)
 *   2. samples with H >= mean(H) form the informative set and are all kept
 *   3. the remaining (redundant) samples are kept independently with
 *      probability 1 - r
 *   4. kept redundant samples get loss weight
 *        w = 1/(1-r) * (mean_intensity / (intensity + eps))^alpha
 *      informative samples get weight 1
 *
 * Epoch 1 and every epoch after floor(cutoff * E) train on the full set.
 *
 * Comparison policies: hard_random (one frozen subset), soft_random (fresh
 * uniform subset per epoch), loss_mean_uniform (below-mean-loss samples
 * pruned with probability r, survivors scaled by 1/(1-r), annealed like
 * ST-Prune), none.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stprune/numerics.hpp"

namespace stprune {

/// Absolute error field of one sample, nodes x horizon, feature-averaged.
struct ErrorMatrix {
    std::size_t index = 0;
    DenseMatrix abs_errors;
};

struct SampleScore {
    std::size_t index = 0;
    double mu = 0.0;
    double sigma_space = 0.0;
    double sigma_time = 0.0;
    double H = 0.0;
    std::size_t epoch = 0;
};

enum class Policy { st_prune, hard_random, soft_random, loss_mean_uniform, none };

inline std::string_view to_string(Policy p) {
    switch (p) {
        case Policy::st_prune: return "st_prune";
        case Policy::hard_random: return "hard_random";
        case Policy::soft_random: return "soft_random";
        case Policy::loss_mean_uniform: return "loss_mean_uniform";
        case Policy::none: return "none";
    }
    return "?";
}

inline Policy parse_policy(std::string_view s) {
    for (Policy p : {Policy::st_prune, Policy::hard_random, Policy::soft_random,
                     Policy::loss_mean_uniform, Policy::none})
        if (s == to_string(p)) return p;
    throw std::invalid_argument("unknown policy '" + std::string(s) + "'");
}

struct PruneConfig {
    Policy policy = Policy::st_prune;
    double lambda = 0.5;
    double prune_ratio = 0.5;
    double alpha = 0.5;
    double epsilon = 1e-2;
    double anneal_cutoff = 0.9;
    bool disable_complexity = false;
    bool disable_rescale = false;
    bool disable_anneal = false;
    bool weights_on_informative = false;

    void validate() const {
        if (!(lambda >= 0.0)) throw std::invalid_argument("prune: lambda must be >= 0");
        if (!(prune_ratio >= 0.0 && prune_ratio < 1.0))
            throw std::invalid_argument("prune: ratio r must lie in [0, 1)");
        if (!(alpha >= 0.0)) throw std::invalid_argument("prune: alpha must be >= 0");
        if (!(epsilon > 0.0)) throw std::invalid_argument("prune: epsilon must be > 0");
        if (!(anneal_cutoff > 0.0 && anneal_cutoff <= 1.0))
            throw std::invalid_argument("prune: anneal cutoff must lie in (0, 1]");
    }

    double effective_lambda() const { return disable_complexity ? 0.0 : lambda; }
    double effective_cutoff() const { return disable_anneal ? 1.0 : anneal_cutoff; }
};

struct RetainedSample {
    std::size_t index = 0;
    double weight = 1.0;
    bool informative = false;
};

struct EpochPlan {
    std::size_t epoch = 0;
    std::vector<RetainedSample> retained;  // ascending index
    std::size_t pruned_count = 0;
    double mean_score = 0.0;
    bool is_full_epoch = false;
    std::size_t informative_count = 0;
    std::size_t retained_redundant = 0;

    double weight_sum() const {
        double s = 0.0;
        for (const auto& r : retained) s += r.weight;
        return s;
    }
    double mean_weight() const { return retained.empty() ? 0.0 : weight_sum() / static_cast<double>(retained.size()); }

    friend bool operator==(const EpochPlan& a, const EpochPlan& b) {
        if (a.retained.size() != b.retained.size()) return false;
        for (std::size_t i = 0; i < a.retained.size(); ++i)
            if (a.retained[i].index != b.retained[i].index || a.retained[i].weight != b.retained[i].weight ||
                a.retained[i].informative != b.retained[i].informative)
                return false;
        return a.epoch == b.epoch && a.pruned_count == b.pruned_count && a.mean_score == b.mean_score &&
               a.is_full_epoch == b.is_full_epoch && a.informative_count == b.informative_count &&
               a.retained_redundant == b.retained_redundant;
    }
};

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

inline SampleScore score_sample(const DenseMatrix& errors, double lambda, std::size_t index = 0,
                                std::size_t epoch = 0) {
    const std::size_t n = errors.rows(), t = errors.cols();
    if (n == 0 || t == 0) throw std::invalid_argument("score_sample: empty error field");
    if (lambda < 0.0) throw std::invalid_argument("score_sample: lambda must be >= 0");
    for (double v : errors.data())
        if (!(v >= 0.0)) throw std::invalid_argument("not an absolute-error field");

    // Work on deviations from the first entry; a constant field then scores
    // exactly its constant.
    const double shift = errors(0, 0);
    std::vector<double> node_means(n, 0.0), step_means(t, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < t; ++j) {
            const double v = errors(i, j) - shift;
            node_means[i] += v;
            step_means[j] += v;
            total += v;
        }
    for (double& m : node_means) m /= static_cast<double>(t);
    for (double& m : step_means) m /= static_cast<double>(n);

    SampleScore s;
    s.index = index;
    s.epoch = epoch;
    s.mu = shift + total / static_cast<double>(n * t);
    s.sigma_space = pop_std(node_means);
    s.sigma_time = pop_std(step_means);
    s.H = s.mu + lambda * (s.sigma_space + s.sigma_time);
    return s;
}

/// Last-known score of every train sample.
class ScoreTable {
public:
    explicit ScoreTable(std::size_t size = 0) : scores_(size) {}

    std::size_t size() const { return scores_.size(); }
    void update(const SampleScore& s) { scores_.at(s.index) = s; }
    bool complete() const {
        return std::all_of(scores_.begin(), scores_.end(), [](const auto& s) { return s.has_value(); });
    }
    const SampleScore& at(std::size_t i) const {
        if (!scores_.at(i)) throw std::invalid_argument("missing score for sample " + std::to_string(i));
        return *scores_[i];
    }

private:
    std::vector<std::optional<SampleScore>> scores_;
};

struct Partition {
    std::vector<std::size_t> informative;
    std::vector<std::size_t> redundant;
    double mean_score = 0.0;
};

/// Ties with the mean go to the informative set.
inline Partition partition(std::span<const double> scores) {
    if (scores.empty()) throw std::invalid_argument("partition: no scores");
    Partition p;
    p.mean_score = mean(scores);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] >= p.mean_score)
            p.informative.push_back(i);
        else
            p.redundant.push_back(i);
    }
    return p;
}

inline std::vector<std::size_t> soft_prune(std::span<const std::size_t> redundant, double prune_ratio,
                                           SeededRng& rng) {
    if (!(prune_ratio >= 0.0 && prune_ratio < 1.0)) throw std::invalid_argument("soft_prune: r must lie in [0, 1)");
    const double keep = 1.0 - prune_ratio;
    std::vector<std::size_t> out;
    out.reserve(redundant.size());
    for (std::size_t i : redundant)
        if (rng.uniform() < keep) out.push_back(i);
    return out;
}

inline double rescale_weight(double intensity, double mean_intensity, double prune_ratio, double alpha,
                             double epsilon) {
    if (!(prune_ratio < 1.0)) throw std::invalid_argument("rescale_weights: r must be < 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("rescale_weights: epsilon must be > 0");
    const double base = 1.0 / (1.0 - prune_ratio);
    if (alpha == 0.0) return base;
    return base * std::pow(mean_intensity / (intensity + epsilon), alpha);
}

/// Weight for each listed sample; `intensities` is indexed by sample index.
inline std::vector<double> rescale_weights(std::span<const std::size_t> retained_redundant,
                                           std::span<const double> intensities, double mean_intensity,
                                           double prune_ratio, double alpha, double epsilon) {
    std::vector<double> w;
    w.reserve(retained_redundant.size());
    for (std::size_t i : retained_redundant)
        w.push_back(rescale_weight(intensities[i], mean_intensity, prune_ratio, alpha, epsilon));
    return w;
}

inline EpochPlan full_plan(std::size_t epoch, std::size_t train_size) {
    EpochPlan p;
    p.epoch = epoch;
    p.is_full_epoch = true;
    p.retained.reserve(train_size);
    for (std::size_t i = 0; i < train_size; ++i) p.retained.push_back({i, 1.0, false});
    return p;
}

/// Last epoch (1-based) that may be pruned.
inline std::size_t last_pruned_epoch(std::size_t total_epochs, double cutoff) {
    return static_cast<std::size_t>(std::floor(cutoff * static_cast<double>(total_epochs) + 1e-9));
}

/// ST-Prune plan for 1-based `epoch` of `total_epochs`.
inline EpochPlan epoch_plan(std::size_t epoch, std::size_t total_epochs, const ScoreTable& scores,
                            std::span<const double> intensities, double mean_intensity,
                            const PruneConfig& cfg, const SeededRng& run_rng) {
    cfg.validate();
    const std::size_t m = scores.size();
    if (epoch == 1 || cfg.policy == Policy::none || epoch > last_pruned_epoch(total_epochs, cfg.effective_cutoff()))
        return full_plan(epoch, m);
    if (!scores.complete()) throw std::invalid_argument("epoch_plan: missing scores for a pruned epoch");
    if (intensities.size() != m) throw std::invalid_argument("epoch_plan: intensity count != train size");

    std::vector<double> h(m);
    for (std::size_t i = 0; i < m; ++i) h[i] = scores.at(i).H;
    const Partition part = partition(h);
    SeededRng rng = run_rng.split(Stream::prune, epoch);
    const auto kept_red = soft_prune(part.redundant, cfg.prune_ratio, rng);

    EpochPlan plan;
    plan.epoch = epoch;
    plan.mean_score = part.mean_score;
    plan.informative_count = part.informative.size();
    plan.retained_redundant = kept_red.size();
    plan.pruned_count = part.redundant.size() - kept_red.size();

    const auto weight = [&](std::size_t i) {
        if (cfg.disable_rescale) return 1.0;
        return rescale_weight(intensities[i], mean_intensity, cfg.prune_ratio, cfg.alpha, cfg.epsilon);
    };
    plan.retained.reserve(part.informative.size() + kept_red.size());
    for (std::size_t i : part.informative)
        plan.retained.push_back({i, cfg.weights_on_informative ? weight(i) : 1.0, true});
    for (std::size_t i : kept_red)
        plan.retained.push_back({i, cfg.weights_on_informative ? 1.0 : weight(i), false});
    std::sort(plan.retained.begin(), plan.retained.end(),
              [](const RetainedSample& a, const RetainedSample& b) { return a.index < b.index; });
    return plan;
}

inline std::size_t subset_size(std::size_t train_size, double prune_ratio) {
    const auto k = static_cast<std::size_t>(std::llround((1.0 - prune_ratio) * static_cast<double>(train_size)));
    return std::clamp<std::size_t>(k, 1, train_size);
}

/// Uniform subset of `k` indices in ascending order (partial Fisher-Yates).
inline std::vector<std::size_t> uniform_subset(std::size_t n, std::size_t k, SeededRng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Comparison policies. `last_loss` holds each sample's last-known mean
/// absolute error and is only read by loss_mean_uniform.
inline EpochPlan baseline_plan(Policy policy, std::size_t epoch, std::size_t total_epochs,
                               std::size_t train_size, const PruneConfig& cfg, const SeededRng& run_rng,
                               std::span<const double> last_loss = {}) {
    cfg.validate();
    switch (policy) {
        case Policy::none:
            return full_plan(epoch, train_size);
        case Policy::hard_random:
        case Policy::soft_random: {
            SeededRng rng = policy == Policy::hard_random ? run_rng.split(Stream::baseline, 0)
                                                          : run_rng.split(Stream::baseline, epoch);
            const auto subset = uniform_subset(train_size, subset_size(train_size, cfg.prune_ratio), rng);
            EpochPlan p;
            p.epoch = epoch;
            p.pruned_count = train_size - subset.size();
            p.retained_redundant = subset.size();
            for (std::size_t i : subset) p.retained.push_back({i, 1.0, false});
            p.is_full_epoch = subset.size() == train_size;
            return p;
        }
        case Policy::loss_mean_uniform: {
            if (epoch == 1 || epoch > last_pruned_epoch(total_epochs, cfg.effective_cutoff()))
                return full_plan(epoch, train_size);
            if (last_loss.size() != train_size) throw std::invalid_argument("baseline_plan: missing losses");
            const Partition part = partition(last_loss);
            SeededRng rng = run_rng.split(Stream::prune, epoch);
            const auto kept = soft_prune(part.redundant, cfg.prune_ratio, rng);
            const double w = cfg.disable_rescale ? 1.0 : 1.0 / (1.0 - cfg.prune_ratio);
            EpochPlan p;
            p.epoch = epoch;
            p.mean_score = part.mean_score;
            p.informative_count = part.informative.size();
            p.retained_redundant = kept.size();
            p.pruned_count = part.redundant.size() - kept.size();
            for (std::size_t i : part.informative) p.retained.push_back({i, 1.0, true});
            for (std::size_t i : kept) p.retained.push_back({i, w, false});
            std::sort(p.retained.begin(), p.retained.end(),
                      [](const RetainedSample& a, const RetainedSample& b) { return a.index < b.index; });
            return p;
        }
        case Policy::st_prune:
            break;
    }
    throw std::invalid_argument("baseline_plan: unsupported policy '" + std::string(to_string(policy)) + "'");
}

/// Audit dump: index,set,weight for every train index.
inline void write_plan_csv(std::ostream& out, const EpochPlan& plan, std::size_t train_size) {
    out.precision(17);
    out << "index,set,weight\n";
    std::size_t k = 0;
    for (std::size_t i = 0; i < train_size; ++i) {
        if (k < plan.retained.size() && plan.retained[k].index == i) {
            const auto& r = plan.retained[k++];
            const char* set = plan.is_full_epoch ? "full" : r.informative ? "informative" : "redundant_kept";
            out << i << "," << set << "," << r.weight << "\n";
        } else {
            out << i << ",pruned,0\n";
        }
    }
}

}  // namespace stprune
