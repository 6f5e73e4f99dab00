/*
 * model.hpp
 *
 * Small forecasters with hand-written gradients.
 *
 *   linear  one readout shared by all nodes:
 *             yhat_n = W * vec(x_n) + b
 *   mlp_id  identity-embedding MLP applied per node:
 *             h0 = [vec(x_n), node_emb[n], tod_emb[tod]]
 *             h1 = relu(W1 h0 + b1), h2 = relu(W2 h1 + b2)
 *             yhat_n = W3 h2 + b3
 *
 * Predictions live in normalized space and are mapped back to target
 * units before any error is measured. The training loss of a batch is
 *
 *   L = sum_i w_i * MAE_i / sum_i w_i
 *
 * with the MAE subgradient taken as 0 at a zero residual.
 *
 * All parameters sit in one flat vector; the optimizer and the checkpoint
 * format work on that vector directly.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "stprune/dataset.hpp"
#include "stprune/numerics.hpp"
#include "stprune/pruning.hpp"

namespace stprune {

/// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Architecture : std::uint32_t { linear = 0, mlp_id = 1 };

inline std::string_view to_string(Architecture a) { return a == Architecture::linear ? "linear" : "mlp_id"; }

inline Architecture parse_architecture(std::string_view s) {
    if (s == "linear") return Architecture::linear;
    if (s == "mlp_id") return Architecture::mlp_id;
    throw std::invalid_argument("unknown model '" + std::string(s) + "'");
}

struct ModelConfig {
    Architecture arch = Architecture::mlp_id;
    std::size_t hidden = 32;
    std::size_t embed_dim = 8;
};

/// Worker count from STPRUNE_THREADS, else hardware concurrency.
inline std::size_t thread_budget() {
    if (const char* env = std::getenv("STPRUNE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

class Forecaster {
public:
    Forecaster() = default;

    Forecaster(const WindowShape& shape, std::size_t period, const ModelConfig& cfg)
        : shape_(shape), period_(std::max<std::size_t>(period, 1)), cfg_(cfg) {
        if (shape.num_nodes == 0 || shape.history == 0 || shape.horizon == 0 || shape.num_features == 0)
            throw std::invalid_argument("Forecaster: empty window shape");
        layout();
        params_.assign(param_count_, 0.0);
    }

    /// Weights ~ N(0, 1/fan_in), embeddings ~ N(0, 0.1^2), biases 0.
    void init(SeededRng rng) {
        const auto fill = [&](std::size_t off, std::size_t count, double scale) {
            for (std::size_t i = 0; i < count; ++i) params_[off + i] = scale * rng.normal();
        };
        std::fill(params_.begin(), params_.end(), 0.0);
        if (cfg_.arch == Architecture::linear) {
            fill(w_, out_dim() * in_raw(), 1.0 / std::sqrt(static_cast<double>(in_raw())));
            return;
        }
        const std::size_t h = cfg_.hidden;
        fill(w1_, h * in_mlp(), 1.0 / std::sqrt(static_cast<double>(in_mlp())));
        fill(w2_, h * h, 1.0 / std::sqrt(static_cast<double>(h)));
        fill(w3_, out_dim() * h, 1.0 / std::sqrt(static_cast<double>(h)));
        fill(node_emb_, shape_.num_nodes * cfg_.embed_dim, 0.1);
        fill(tod_emb_, period_ * cfg_.embed_dim, 0.1);
    }

    const WindowShape& shape() const { return shape_; }
    const ModelConfig& config() const { return cfg_; }
    std::size_t period() const { return period_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t size() const { return param_count_; }

    std::size_t in_raw() const { return shape_.history * shape_.num_features; }
    std::size_t out_dim() const { return shape_.horizon * shape_.num_features; }
    std::size_t in_mlp() const { return in_raw() + 2 * cfg_.embed_dim; }

    // Offsets into params() for tests and tooling.
    std::size_t weight_offset() const { return cfg_.arch == Architecture::linear ? w_ : w1_; }
    std::size_t output_bias_offset() const { return cfg_.arch == Architecture::linear ? b_ : b3_; }
    std::size_t output_weight_offset() const { return cfg_.arch == Architecture::linear ? w_ : w3_; }

    std::size_t time_of_day(std::size_t start_frame) const {
        return (start_frame + shape_.history - 1) % period_;
    }

    /// Normalized prediction [node][step][feature].
    std::vector<double> forward(std::span<const double> x, std::size_t start_frame) const {
        if (x.size() != shape_.x_size()) throw std::invalid_argument("forward: input shape mismatch");
        std::vector<double> out(shape_.y_size());
        Workspace ws(*this);
        for (std::size_t n = 0; n < shape_.num_nodes; ++n)
            node_forward(x.subspan(n * in_raw(), in_raw()), n, time_of_day(start_frame), ws,
                         std::span<double>(out).subspan(n * out_dim(), out_dim()));
        return out;
    }

    /// Prediction in target units.
    std::vector<double> predict(const WindowedSample& s, const Normalizer& z) const {
        auto y = forward(s.x, s.start_frame);
        z.denormalize(y);
        return y;
    }

    struct WeightedSample {
        const WindowedSample* sample = nullptr;
        double weight = 1.0;
    };

    struct LossResult {
        double loss = 0.0;
        double weight_sum = 0.0;
        std::vector<double> grads;
        std::vector<ErrorMatrix> errors;   // one per batch entry, in order
        std::vector<double> sample_mae;    // unweighted, per batch entry
    };

    LossResult weighted_loss_and_grads(std::span<const WeightedSample> batch, const Normalizer& z) const {
        if (batch.empty()) throw std::invalid_argument("weighted_loss_and_grads: empty batch");
        double wsum = 0.0;
        for (const auto& b : batch) {
            if (!(b.weight > 0.0) || !std::isfinite(b.weight))
                throw std::invalid_argument("weighted_loss_and_grads: weights must be positive");
            if (b.sample->x.size() != shape_.x_size() || b.sample->y.size() != shape_.y_size())
                throw std::invalid_argument("weighted_loss_and_grads: sample shape mismatch");
            wsum += b.weight;
        }

        LossResult r;
        r.weight_sum = wsum;
        r.grads.assign(param_count_, 0.0);
        r.errors.resize(batch.size());
        r.sample_mae.resize(batch.size());

        // Fixed chunking keeps the reduction order independent of thread count.
        constexpr std::size_t chunk = 16;
        const std::size_t n_chunks = (batch.size() + chunk - 1) / chunk;
        std::vector<std::vector<double>> partial(n_chunks, std::vector<double>(param_count_, 0.0));
        std::vector<double> partial_loss(n_chunks, 0.0);

        const auto run_chunk = [&](std::size_t c) {
            Workspace ws(*this);
            const std::size_t lo = c * chunk, hi = std::min(batch.size(), lo + chunk);
            for (std::size_t k = lo; k < hi; ++k)
                partial_loss[c] += sample_backward(*batch[k].sample, batch[k].weight / wsum, z, ws, partial[c],
                                                   r.errors[k], r.sample_mae[k]);
        };
        const std::size_t workers = std::min(thread_budget(), n_chunks);
        if (workers <= 1) {
            for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w)
                pool.emplace_back([&, w] {
                    for (std::size_t c = w; c < n_chunks; c += workers) run_chunk(c);
                });
            for (auto& t : pool) t.join();
        }
        for (std::size_t c = 0; c < n_chunks; ++c) {
            r.loss += partial_loss[c];
            for (std::size_t p = 0; p < param_count_; ++p) r.grads[p] += partial[c][p];
        }
        if (!std::isfinite(r.loss)) throw DivergenceError("divergence: non-finite training loss");
        return r;
    }

private:
    struct Workspace {
        explicit Workspace(const Forecaster& f)
            : h0(f.in_mlp()), z1(f.cfg_.hidden), a1(f.cfg_.hidden), z2(f.cfg_.hidden), a2(f.cfg_.hidden),
              d1(f.cfg_.hidden), d2(f.cfg_.hidden), dh0(f.in_mlp()), dout(f.out_dim()) {}
        std::vector<double> h0, z1, a1, z2, a2, d1, d2, dh0, dout;
    };

    void layout() {
        std::size_t off = 0;
        const auto take = [&](std::size_t n) {
            const std::size_t at = off;
            off += n;
            return at;
        };
        if (cfg_.arch == Architecture::linear) {
            w_ = take(out_dim() * in_raw());
            b_ = take(out_dim());
        } else {
            if (cfg_.hidden == 0) throw std::invalid_argument("Forecaster: hidden width must be >= 1");
            const std::size_t h = cfg_.hidden;
            w1_ = take(h * in_mlp());
            b1_ = take(h);
            w2_ = take(h * h);
            b2_ = take(h);
            w3_ = take(out_dim() * h);
            b3_ = take(out_dim());
            node_emb_ = take(shape_.num_nodes * cfg_.embed_dim);
            tod_emb_ = take(period_ * cfg_.embed_dim);
        }
        param_count_ = off;
    }

    static void affine(const double* w, const double* b, std::span<const double> in, std::span<double> out) {
        for (std::size_t o = 0; o < out.size(); ++o) {
            const double* row = w + o * in.size();
            double acc = b[o];
            for (std::size_t i = 0; i < in.size(); ++i) acc += row[i] * in[i];
            out[o] = acc;
        }
    }

    void node_forward(std::span<const double> x, std::size_t node, std::size_t tod, Workspace& ws,
                      std::span<double> out) const {
        const double* p = params_.data();
        if (cfg_.arch == Architecture::linear) {
            affine(p + w_, p + b_, x, out);
            return;
        }
        const std::size_t e = cfg_.embed_dim;
        std::copy(x.begin(), x.end(), ws.h0.begin());
        std::copy_n(p + node_emb_ + node * e, e, ws.h0.begin() + static_cast<std::ptrdiff_t>(in_raw()));
        std::copy_n(p + tod_emb_ + tod * e, e, ws.h0.begin() + static_cast<std::ptrdiff_t>(in_raw() + e));
        affine(p + w1_, p + b1_, ws.h0, ws.z1);
        for (std::size_t i = 0; i < ws.z1.size(); ++i) ws.a1[i] = ws.z1[i] > 0.0 ? ws.z1[i] : 0.0;
        affine(p + w2_, p + b2_, ws.a1, ws.z2);
        for (std::size_t i = 0; i < ws.z2.size(); ++i) ws.a2[i] = ws.z2[i] > 0.0 ? ws.z2[i] : 0.0;
        affine(p + w3_, p + b3_, ws.a2, out);
    }

    // Accumulates d(scale * MAE)/dparams into g; returns scale * MAE.
    double sample_backward(const WindowedSample& s, double scale, const Normalizer& z, Workspace& ws,
                           std::vector<double>& g, ErrorMatrix& err, double& mae) const {
        const std::size_t nf = shape_.num_features, nt = shape_.horizon, od = out_dim();
        const double per_entry = 1.0 / static_cast<double>(shape_.y_size());
        const std::size_t tod = time_of_day(s.start_frame);
        std::vector<double> yhat(od);

        err.index = s.index;
        err.abs_errors = DenseMatrix(shape_.num_nodes, nt);
        double abs_total = 0.0;
        const double* p = params_.data();
        double* gp = g.data();

        for (std::size_t n = 0; n < shape_.num_nodes; ++n) {
            const auto x = std::span<const double>(s.x).subspan(n * in_raw(), in_raw());
            node_forward(x, n, tod, ws, yhat);
            for (std::size_t o = 0; o < od; ++o) {
                const std::size_t f = o % nf;
                const double pred = yhat[o] * z.stddev[f] + z.mean[f];
                const double res = pred - s.y[n * od + o];
                const double a = std::abs(res);
                abs_total += a;
                err.abs_errors(n, o / nf) += a / static_cast<double>(nf);
                const double sgn = res > 0.0 ? 1.0 : (res < 0.0 ? -1.0 : 0.0);
                ws.dout[o] = scale * per_entry * sgn * z.stddev[f];
            }

            if (cfg_.arch == Architecture::linear) {
                for (std::size_t o = 0; o < od; ++o) {
                    const double d = ws.dout[o];
                    if (d == 0.0) continue;
                    double* gw = gp + w_ + o * in_raw();
                    for (std::size_t i = 0; i < in_raw(); ++i) gw[i] += d * x[i];
                    gp[b_ + o] += d;
                }
                continue;
            }

            const std::size_t h = cfg_.hidden, e = cfg_.embed_dim, in = in_mlp();
            // head
            std::fill(ws.d2.begin(), ws.d2.end(), 0.0);
            for (std::size_t o = 0; o < od; ++o) {
                const double d = ws.dout[o];
                if (d == 0.0) continue;
                const double* w3row = p + w3_ + o * h;
                double* g3row = gp + w3_ + o * h;
                for (std::size_t j = 0; j < h; ++j) {
                    g3row[j] += d * ws.a2[j];
                    ws.d2[j] += d * w3row[j];
                }
                gp[b3_ + o] += d;
            }
            for (std::size_t j = 0; j < h; ++j) ws.d2[j] = ws.z2[j] > 0.0 ? ws.d2[j] : 0.0;
            // hidden 2
            std::fill(ws.d1.begin(), ws.d1.end(), 0.0);
            for (std::size_t j = 0; j < h; ++j) {
                const double d = ws.d2[j];
                if (d == 0.0) continue;
                const double* w2row = p + w2_ + j * h;
                double* g2row = gp + w2_ + j * h;
                for (std::size_t i = 0; i < h; ++i) {
                    g2row[i] += d * ws.a1[i];
                    ws.d1[i] += d * w2row[i];
                }
                gp[b2_ + j] += d;
            }
            for (std::size_t i = 0; i < h; ++i) ws.d1[i] = ws.z1[i] > 0.0 ? ws.d1[i] : 0.0;
            // hidden 1 and the embedding inputs
            std::fill(ws.dh0.begin(), ws.dh0.end(), 0.0);
            for (std::size_t j = 0; j < h; ++j) {
                const double d = ws.d1[j];
                if (d == 0.0) continue;
                const double* w1row = p + w1_ + j * in;
                double* g1row = gp + w1_ + j * in;
                for (std::size_t i = 0; i < in; ++i) {
                    g1row[i] += d * ws.h0[i];
                    ws.dh0[i] += d * w1row[i];
                }
                gp[b1_ + j] += d;
            }
            for (std::size_t k = 0; k < e; ++k) {
                gp[node_emb_ + n * e + k] += ws.dh0[in_raw() + k];
                gp[tod_emb_ + tod * e + k] += ws.dh0[in_raw() + e + k];
            }
        }
        mae = abs_total * per_entry;
        return scale * mae;
    }

    WindowShape shape_{};
    std::size_t period_ = 1;
    ModelConfig cfg_{};
    std::vector<double> params_;
    std::size_t param_count_ = 0;
    std::size_t w_ = 0, b_ = 0;
    std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, w3_ = 0, b3_ = 0, node_emb_ = 0, tod_emb_ = 0;
};

// ---------------------------------------------------------------------------
// SGD with momentum, L2 weight decay and a cosine learning-rate schedule
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::vector<double> momentum_buffer;
    std::uint64_t step = 0;           // updates applied
    std::uint64_t schedule_t = 0;     // position on the cosine curve
    std::uint64_t horizon = 1;        // schedule length
    double base_lr = 1e-3;
    double min_lr = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    explicit OptimizerState(std::size_t n = 0) : momentum_buffer(n, 0.0) {}

    double lr() const {
        constexpr double pi = 3.14159265358979323846;
        const double frac = static_cast<double>(std::min(schedule_t, horizon)) / static_cast<double>(std::max<std::uint64_t>(horizon, 1));
        return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(pi * frac));
    }
};

/// buf <- momentum*buf + (g + wd*p);  p <- p - lr*buf
inline void sgd_step(std::vector<double>& params, std::span<const double> grads, OptimizerState& opt) {
    if (params.size() != grads.size() || params.size() != opt.momentum_buffer.size())
        throw std::invalid_argument("sgd_step: shape mismatch");
    const double lr = opt.lr();
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& buf = opt.momentum_buffer[i];
        buf = opt.momentum * buf + (grads[i] + opt.weight_decay * params[i]);
        params[i] -= lr * buf;
    }
    ++opt.step;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------
//
// "STCK", u32 version (1), u32 architecture, u64 N, T_p, T_f, F, period,
// hidden, embed_dim, u64 parameter count, params f64[], momentum f64[],
// u64 step, schedule_t, horizon, f64 base_lr, min_lr, momentum,
// weight_decay, u64 rng count, then per rng: u64 seed, u64 state[4].
// All integers little-endian.

struct Checkpoint {
    Forecaster model;
    OptimizerState optimizer;
    std::vector<SeededRng> rngs;
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    const auto& m = ck.model;
    const auto& o = ck.optimizer;
    out.write("STCK", 4);
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(m.config().arch));
    for (std::uint64_t v : {std::uint64_t(m.shape().num_nodes), std::uint64_t(m.shape().history),
                            std::uint64_t(m.shape().horizon), std::uint64_t(m.shape().num_features),
                            std::uint64_t(m.period()), std::uint64_t(m.config().hidden),
                            std::uint64_t(m.config().embed_dim), std::uint64_t(m.size())})
        detail::put_u64(out, v);
    for (double v : m.params()) detail::put_f64(out, v);
    for (double v : o.momentum_buffer) detail::put_f64(out, v);
    detail::put_u64(out, o.step);
    detail::put_u64(out, o.schedule_t);
    detail::put_u64(out, o.horizon);
    for (double v : {o.base_lr, o.min_lr, o.momentum, o.weight_decay}) detail::put_f64(out, v);
    detail::put_u64(out, ck.rngs.size());
    for (const auto& r : ck.rngs) {
        detail::put_u64(out, r.seed());
        for (auto s : r.state()) detail::put_u64(out, s);
    }
}

inline Checkpoint read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "STCK", 4) != 0) throw ParseError("bad checkpoint magic");
    if (detail::get_uint(in, 4, "version") != 1) throw ParseError("unsupported checkpoint version");
    ModelConfig cfg;
    const auto arch = detail::get_uint(in, 4, "architecture");
    if (arch > 1) throw ParseError("unknown architecture tag");
    cfg.arch = static_cast<Architecture>(arch);
    WindowShape shape;
    shape.num_nodes = detail::get_uint(in, 8, "N");
    shape.history = detail::get_uint(in, 8, "T_p");
    shape.horizon = detail::get_uint(in, 8, "T_f");
    shape.num_features = detail::get_uint(in, 8, "F");
    const std::size_t period = detail::get_uint(in, 8, "period");
    cfg.hidden = detail::get_uint(in, 8, "hidden");
    cfg.embed_dim = detail::get_uint(in, 8, "embed_dim");
    const std::size_t count = detail::get_uint(in, 8, "parameter count");
    Checkpoint ck{Forecaster(shape, period, cfg), OptimizerState(count), {}};
    if (ck.model.size() != count) throw ParseError("checkpoint parameter count does not match its shape");
    for (auto& v : ck.model.params()) v = detail::get_f64(in, "params");
    for (auto& v : ck.optimizer.momentum_buffer) v = detail::get_f64(in, "momentum");
    ck.optimizer.step = detail::get_uint(in, 8, "step");
    ck.optimizer.schedule_t = detail::get_uint(in, 8, "schedule_t");
    ck.optimizer.horizon = detail::get_uint(in, 8, "horizon");
    ck.optimizer.base_lr = detail::get_f64(in, "base_lr");
    ck.optimizer.min_lr = detail::get_f64(in, "min_lr");
    ck.optimizer.momentum = detail::get_f64(in, "momentum");
    ck.optimizer.weight_decay = detail::get_f64(in, "weight_decay");
    const std::size_t n_rng = detail::get_uint(in, 8, "rng count");
    for (std::size_t i = 0; i < n_rng; ++i) {
        SeededRng r(detail::get_uint(in, 8, "rng seed"));
        std::array<std::uint64_t, 4> st{};
        for (auto& s : st) s = detail::get_uint(in, 8, "rng state");
        r.set_state(st);
        ck.rngs.push_back(r);
    }
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    return read_checkpoint(in);
}

}  // namespace stprune
