#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "stprune/model.hpp"

using namespace stprune;

namespace {

DatasetSplit small_split(std::size_t history = 4, std::size_t horizon = 3) {
    SynthSpec sp;
    sp.num_nodes = 3;
    sp.num_frames = 240;
    sp.period = 24;
    return chrono_split(synthesize(sp, SeededRng(2)), 0.6, 0.2, 0.2, history, horizon);
}

std::vector<Forecaster::WeightedSample> batch_of(const std::vector<WindowedSample>& s, std::size_t n,
                                                 double w = 1.0) {
    std::vector<Forecaster::WeightedSample> b;
    for (std::size_t i = 0; i < n; ++i) b.push_back({&s[i], w});
    return b;
}

double loss_at(Forecaster& m, std::span<const Forecaster::WeightedSample> b, const Normalizer& z) {
    return m.weighted_loss_and_grads(b, z).loss;
}

// central differences on every parameter at the current point
void check_gradients(Forecaster& m, std::span<const Forecaster::WeightedSample> b, const Normalizer& z) {
    const auto g = m.weighted_loss_and_grads(b, z).grads;
    const double h = 1e-5;
    auto& p = m.params();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = loss_at(m, b, z);
        p[i] = keep - h;
        const double down = loss_at(m, b, z);
        p[i] = keep;
        const double fd = (up - down) / (2 * h);
        ASSERT_LE(std::abs(fd - g[i]), 1e-4 * std::max(std::abs(fd), std::abs(g[i])) + 1e-8)
            << "param " << i << " analytic " << g[i] << " fd " << fd;
    }
}

}  // namespace

TEST(Forecaster, ZeroLinearPredictsTrainMean) {
    const auto sp = small_split();
    Forecaster m(sp.shape, sp.period, ModelConfig{Architecture::linear, 0, 0});
    for (double v : m.predict(sp.test[0], sp.normalizer)) EXPECT_NEAR(v, sp.normalizer.mean[0], 1e-9);
}

TEST(Forecaster, LinearPersistence) {
    const auto sp = small_split(3, 3);
    Forecaster m(sp.shape, sp.period, ModelConfig{Architecture::linear, 0, 0});
    const std::size_t in = m.in_raw();
    for (std::size_t o = 0; o < m.out_dim(); ++o) m.params()[m.weight_offset() + o * in + (in - 1)] = 1.0;
    // de-normalized output equals the last observed raw value
    const double mu = sp.normalizer.mean[0], sd = sp.normalizer.stddev[0];
    const auto& s = sp.test[5];
    const auto y = m.predict(s, sp.normalizer);
    for (std::size_t n = 0; n < sp.shape.num_nodes; ++n) {
        const double last_raw = s.x[n * 3 + 2] * sd + mu;
        for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(y[n * 3 + t], last_raw, 1e-9);
    }
}

TEST(Forecaster, MlpZeroHiddenGivesBias) {
    const auto sp = small_split();
    Forecaster m(sp.shape, sp.period, ModelConfig{});
    m.init(SeededRng(1));
    for (std::size_t k = 0; k < m.shape().horizon; ++k) m.params()[m.output_bias_offset() + k] = 0.25 * k;
    const std::size_t w3 = m.output_weight_offset();
    for (std::size_t k = 0; k < m.out_dim() * m.config().hidden; ++k) m.params()[w3 + k] = 0.0;
    const auto y = m.forward(sp.test[0].x, sp.test[0].start_frame);
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(y[n * 3 + k], 0.25 * k);
}

TEST(Forecaster, TimeOfDayAndShapeErrors) {
    const auto sp = small_split();
    Forecaster m(sp.shape, 24, ModelConfig{});
    EXPECT_EQ(m.time_of_day(0), 3u);
    EXPECT_EQ(m.time_of_day(21), 0u);
    EXPECT_THROW(m.forward(std::vector<double>(5), 0), std::invalid_argument);
    EXPECT_THROW(Forecaster(WindowShape{0, 1, 1, 1}, 24, ModelConfig{}), std::invalid_argument);
    EXPECT_THROW(parse_architecture("gru"), std::invalid_argument);
}

TEST(Gradients, LinearMatchesFiniteDifferences) {
    // 1 node, history 3, horizon 2 -> 2*3 weights + 2 biases; plus a second shape
    const auto sp = small_split(3, 2);
    Forecaster m(sp.shape, sp.period, ModelConfig{Architecture::linear, 0, 0});
    for (int point = 0; point < 5; ++point) {
        m.init(SeededRng(100 + point));
        auto b = batch_of(sp.train, 7);
        for (std::size_t i = 0; i < b.size(); ++i) b[i].weight = 0.5 + static_cast<double>(i);
        check_gradients(m, b, sp.normalizer);
    }
}

TEST(Gradients, MlpMatchesFiniteDifferences) {
    const auto sp = small_split(4, 3);
    Forecaster m(sp.shape, sp.period, ModelConfig{Architecture::mlp_id, 6, 3});
    for (int point = 0; point < 5; ++point) {
        m.init(SeededRng(200 + point));
        for (std::size_t k = 0; k < m.size(); ++k) m.params()[k] += 0.01 * std::sin(static_cast<double>(k + point));
        auto b = batch_of(sp.train, 5);
        for (std::size_t i = 0; i < b.size(); ++i) b[i].weight = 1.0 + 0.3 * static_cast<double>(i);
        check_gradients(m, b, sp.normalizer);
    }
}

TEST(Gradients, WeightNormalization) {
    const auto sp = small_split();
    Forecaster m(sp.shape, sp.period, ModelConfig{});
    m.init(SeededRng(3));
    const auto one = m.weighted_loss_and_grads(batch_of(sp.train, 6, 1.0), sp.normalizer);
    const auto three = m.weighted_loss_and_grads(batch_of(sp.train, 6, 3.0), sp.normalizer);
    EXPECT_NEAR(one.loss, three.loss, 1e-12);
    for (std::size_t k = 0; k < one.grads.size(); ++k) EXPECT_NEAR(one.grads[k], three.grads[k], 1e-12);
    const auto a = m.weighted_loss_and_grads(batch_of(sp.train, 1, 5.0), sp.normalizer);
    const auto b = m.weighted_loss_and_grads(batch_of(sp.train, 1, 1.0), sp.normalizer);
    for (std::size_t k = 0; k < a.grads.size(); ++k) EXPECT_NEAR(a.grads[k], b.grads[k], 1e-12);
    // loss is a weighted mean of per-sample MAE
    auto mixed = batch_of(sp.train, 2);
    mixed[1].weight = 3.0;
    const auto r = m.weighted_loss_and_grads(mixed, sp.normalizer);
    EXPECT_NEAR(r.loss, (r.sample_mae[0] + 3 * r.sample_mae[1]) / 4, 1e-12);
    EXPECT_EQ(r.errors[1].abs_errors.rows(), sp.shape.num_nodes);
    EXPECT_EQ(r.errors[1].abs_errors.cols(), sp.shape.horizon);
}

TEST(Gradients, ThreadCountDoesNotChangeBits) {
    const auto sp = small_split();
    Forecaster m(sp.shape, sp.period, ModelConfig{});
    m.init(SeededRng(4));
    const auto b = batch_of(sp.train, 70);
    setenv("STPRUNE_THREADS", "1", 1);
    const auto a = m.weighted_loss_and_grads(b, sp.normalizer);
    setenv("STPRUNE_THREADS", "4", 1);
    const auto c = m.weighted_loss_and_grads(b, sp.normalizer);
    unsetenv("STPRUNE_THREADS");
    EXPECT_EQ(a.loss, c.loss);
    EXPECT_EQ(a.grads, c.grads);
}

TEST(Gradients, Errors) {
    const auto sp = small_split();
    Forecaster m(sp.shape, sp.period, ModelConfig{});
    EXPECT_THROW(m.weighted_loss_and_grads({}, sp.normalizer), std::invalid_argument);
    EXPECT_THROW(m.weighted_loss_and_grads(batch_of(sp.train, 2, 0.0), sp.normalizer), std::invalid_argument);
    m.params()[m.output_bias_offset()] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(m.weighted_loss_and_grads(batch_of(sp.train, 2), sp.normalizer), DivergenceError);
}

TEST(Sgd, UpdateRule) {
    OptimizerState o(3);
    o.weight_decay = 0;
    o.base_lr = 0.1;
    o.min_lr = 0.01;
    o.horizon = 10;
    std::vector<double> p{1, 2, 3};
    sgd_step(p, std::vector<double>{0, 0, 0}, o);
    EXPECT_EQ(p, (std::vector<double>{1, 2, 3}));
    sgd_step(p, std::vector<double>{1, -2, 0.5}, o);
    EXPECT_DOUBLE_EQ(p[0], 1 - 0.1 * 1);
    EXPECT_DOUBLE_EQ(p[1], 2 + 0.1 * 2);
    // second step carries momentum
    const double before = p[0];
    sgd_step(p, std::vector<double>{1, 0, 0}, o);
    EXPECT_DOUBLE_EQ(p[0], before - 0.1 * (0.9 * 1 + 1));
    EXPECT_EQ(o.step, 3u);
    EXPECT_THROW(sgd_step(p, std::vector<double>{1}, o), std::invalid_argument);
}

TEST(Sgd, WeightDecayAndCosineEndpoints) {
    OptimizerState o(1);
    o.base_lr = 1e-3;
    o.min_lr = 1e-4;
    o.horizon = 100;
    EXPECT_DOUBLE_EQ(o.lr(), 1e-3);
    o.schedule_t = 100;
    EXPECT_DOUBLE_EQ(o.lr(), 1e-4);
    o.schedule_t = 50;
    EXPECT_NEAR(o.lr(), 5.5e-4, 1e-15);
    o.schedule_t = 0;
    std::vector<double> p{2.0};
    sgd_step(p, std::vector<double>{0.0}, o);
    EXPECT_DOUBLE_EQ(p[0], 2.0 - 1e-3 * (1e-4 * 2.0));
}

TEST(Checkpoint, RoundTrip) {
    const auto sp = small_split();
    Forecaster m(sp.shape, sp.period, ModelConfig{Architecture::mlp_id, 5, 2});
    m.init(SeededRng(8));
    OptimizerState o(m.size());
    o.momentum_buffer[3] = 0.5;
    o.step = 17;
    o.schedule_t = 4;
    o.horizon = 9;
    SeededRng r(77);
    r.next();
    std::stringstream buf;
    write_checkpoint(buf, Checkpoint{m, o, {r}});
    const auto ck = read_checkpoint(buf);
    EXPECT_EQ(ck.model.params(), m.params());
    EXPECT_EQ(ck.model.config().hidden, 5u);
    EXPECT_EQ(ck.optimizer.momentum_buffer, o.momentum_buffer);
    EXPECT_EQ(ck.optimizer.step, 17u);
    EXPECT_EQ(ck.optimizer.horizon, 9u);
    ASSERT_EQ(ck.rngs.size(), 1u);
    EXPECT_EQ(ck.rngs[0].state(), r.state());
    const auto y0 = m.forward(sp.test[0].x, sp.test[0].start_frame);
    EXPECT_EQ(ck.model.forward(sp.test[0].x, sp.test[0].start_frame), y0);

    std::stringstream bad("NOPE");
    EXPECT_THROW(read_checkpoint(bad), ParseError);
    std::string bytes;
    {
        std::stringstream full;
        write_checkpoint(full, Checkpoint{m, o, {}});
        bytes = full.str();
    }
    std::stringstream cut(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(read_checkpoint(cut), ParseError);
}
