#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "doctest.h"
#include "lowp/network.hpp"
#include "ref_net.hpp"

using namespace lowp;

namespace {

const ArithContext kFull = ArithContext::full_precision();

Tensor random_images(std::size_t batch, std::size_t h, std::size_t w, std::uint64_t seed) {
    Tensor t({batch, h, w});
    Rng rng(Rng::derive(seed, 0xD47AULL));
    for (float& v : t.data) v = static_cast<float>(rng.next_double());
    return t;
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
    Tensor t({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, labels[i]) = 1.0f;
    return t;
}

NetworkSpec tiny_spec() {
    NetworkSpec spec;
    spec.conv_layers = {{2, 3, 3}, {2, 2, 2}};
    spec.dense_layers = 1;
    spec.dense_units = 3;
    spec.input_h = 8;
    spec.input_w = 8;
    spec.classes = 3;
    return spec;
}

// Synthetic, cleanly separable classification set: class c sets the overall
// brightness level, which survives the max-pool bottleneck of the tiny
// network. Used for end-to-end training checks without external data.
Dataset synthetic_dataset(std::size_t n, std::size_t h, std::size_t w, std::size_t classes,
                          std::uint64_t seed) {
    Dataset ds;
    ds.split = "synthetic";
    ds.images = Tensor({n, h, w});
    ds.labels.resize(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        ds.labels[i] = static_cast<std::uint8_t>(c);
        const float base = 0.1f + 0.8f * static_cast<float>(c) /
                                      static_cast<float>(classes - 1);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t col = 0; col < w; ++col) {
                ds.images.at(i, r, col) = base + 0.05f * static_cast<float>(rng.next_double());
            }
        }
    }
    return ds;
}

}  // namespace

TEST_CASE("spec validation rejects impossible geometries") {
    NetworkSpec spec;  // defaults: 28x28, conv 8x5x5 + 16x5x5, one dense layer
    spec.validate();
    CHECK(spec.flatten_size() == 256);  // 28->24->12->8->4, 16 filters

    NetworkSpec bad = spec;
    bad.dense_layers = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.dense_layers = 6;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    NetworkSpec huge = spec;
    huge.conv_layers = {{4, 29, 5}};
    CHECK_THROWS_AS(huge.validate(), std::invalid_argument);

    NetworkSpec collapse = spec;
    collapse.input_h = 4;
    collapse.input_w = 4;
    collapse.conv_layers = {{2, 4, 4}};  // conv out 1x1, nothing left to pool
    CHECK_THROWS_AS(collapse.validate(), std::invalid_argument);

    const NetworkSpec tiny = tiny_spec();
    tiny.validate();
    CHECK(tiny.flatten_size() == 2);
}

TEST_CASE("weight init is deterministic, zero-biased and scale-bounded") {
    const NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.seed = 5;
    const Params a = init_weights(spec, cfg);
    const Params b = init_weights(spec, cfg);
    cfg.seed = 6;
    const Params c = init_weights(spec, cfg);

    REQUIRE(a.conv_w.size() == 2);
    REQUIRE(a.dense_w.size() == 2);
    CHECK(a.conv_w[0].data == b.conv_w[0].data);
    CHECK(a.dense_w[1].data == b.dense_w[1].data);
    CHECK(a.conv_w[0].data != c.conv_w[0].data);

    for (const Tensor& t : a.conv_b) {
        for (float v : t.data) CHECK(v == 0.0f);
    }
    for (const Tensor& t : a.dense_b) {
        for (float v : t.data) CHECK(v == 0.0f);
    }
    bool any_negative = false;
    for (const Tensor& t : a.conv_w) {
        for (float v : t.data) {
            CHECK(std::fabs(v) <= cfg.init_scale);
            any_negative |= v < 0.0f;
        }
    }
    CHECK(any_negative);

    TrainConfig shifted = cfg;
    shifted.seed = 5;
    shifted.init_perturbation = 0.004f;
    const Params d = init_weights(spec, shifted);
    for (std::size_t i = 0; i < d.conv_w[0].size(); ++i) {
        CHECK(d.conv_w[0].data[i] ==
              doctest::Approx(a.conv_w[0].data[i] + 0.004f).epsilon(1e-5));
    }

    shifted.init_perturbation = -0.1f;
    CHECK_THROWS_AS(init_weights(spec, shifted), std::invalid_argument);
}

TEST_CASE("forward produces the documented trace shapes and valid softmax rows") {
    NetworkSpec spec;  // default 28x28 stack
    TrainConfig cfg;
    cfg.seed = 3;
    const Params params = init_weights(spec, cfg);
    const Tensor images = random_images(3, 28, 28, 17);
    const ForwardTrace trace = forward(spec, params, images, kFull);

    REQUIRE(trace.conv.size() == 2);
    CHECK(trace.conv[0].z.shape == std::vector<std::size_t>{3, 8, 24, 24});
    CHECK(trace.conv[0].pooled.shape == std::vector<std::size_t>{3, 8, 12, 12});
    CHECK(trace.conv[1].z.shape == std::vector<std::size_t>{3, 16, 8, 8});
    CHECK(trace.conv[1].pooled.shape == std::vector<std::size_t>{3, 16, 4, 4});
    CHECK(trace.flat.shape == std::vector<std::size_t>{3, 256});
    REQUIRE(trace.dense.size() == 1);
    CHECK(trace.dense[0].z.shape == std::vector<std::size_t>{3, 100});
    CHECK(trace.head.z.shape == std::vector<std::size_t>{3, 10});
    CHECK(trace.probs.shape == std::vector<std::size_t>{3, 10});
    CHECK(trace.batch_size() == 3);

    for (std::size_t i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 10; ++j) {
            CHECK(trace.probs.at(i, j) >= 0.0f);
            sum += trace.probs.at(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }

    // explicit single-channel batch gives the identical result
    Tensor channeled({3, 1, 28, 28});
    channeled.data = images.data;
    const ForwardTrace trace2 = forward(spec, params, channeled, kFull);
    CHECK(trace2.probs.data == trace.probs.data);

    CHECK_THROWS_AS(forward(spec, params, Tensor({3, 27, 28}), kFull), std::invalid_argument);
}

TEST_CASE("forward matches an independent double-precision reference") {
    const NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.seed = 11;
    cfg.init_scale = 0.5f;
    const Params params = init_weights(spec, cfg);
    const Tensor images = random_images(4, 8, 8, 23);
    const Tensor targets = one_hot({0, 1, 2, 1}, 3);

    const ForwardTrace trace = forward(spec, params, images, kFull);
    const refnet::RefResult ref =
        refnet::ref_forward(spec, refnet::RefParams::mirror(params), images, targets);
    for (std::size_t i = 0; i < trace.probs.size(); ++i) {
        CHECK(trace.probs.data[i] == doctest::Approx(ref.probs[i]).epsilon(1e-5));
    }
    CHECK(cross_entropy(trace.probs, targets) == doctest::Approx(ref.loss).epsilon(1e-5));
}

TEST_CASE("analytic gradients match central finite differences on every layer type") {
    const refnet::FdCheck fd = refnet::fd_gradient_check(tiny_spec(), 1e-4);
    REQUIRE(fd.setup_found);
    CHECK(fd.parameters == 59);
    INFO("max relative error ", fd.max_rel_error);
    CHECK(fd.max_rel_error < 1e-4);
}

TEST_CASE("backward validates trace and target shapes") {
    const NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.seed = 2;
    const Params params = init_weights(spec, cfg);
    const Tensor images = random_images(2, 8, 8, 5);
    const ForwardTrace trace = forward(spec, params, images, kFull);
    CHECK_THROWS_AS(backward(spec, params, trace, Tensor({2, 4}), kFull),
                    std::invalid_argument);
    CHECK_THROWS_AS(backward(spec, params, ForwardTrace{}, one_hot({0, 1}, 3), kFull),
                    std::invalid_argument);
}

TEST_CASE("squared-error sigmoid head gradient follows its closed form") {
    Rng rng(77);
    Tensor y({4, 3}), y0({4, 3});
    for (float& v : y.data) v = static_cast<float>(0.05 + 0.9 * rng.next_double());
    for (std::size_t i = 0; i < y0.size(); ++i) y0.data[i] = (i % 3 == 0) ? 1.0f : 0.0f;
    const Tensor g = sigmoid_squared_error_head(y, y0, kFull);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const float yi = y.data[i], ti = y0.data[i];
        CHECK(g.data[i] == doctest::Approx((ti - yi) * (yi - yi * yi)).epsilon(1e-6));
    }
    CHECK_THROWS_AS(sigmoid_squared_error_head(y, Tensor({3, 4}), kFull), DimensionError);
}

TEST_CASE("rmsprop follows its closed-form update, starting from zero cache") {
    NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.learning_rate = 1e-2f;
    Params params = init_weights(spec, cfg);
    const Params before = params;
    Params cache = init_weights(spec, TrainConfig{.seed = 99, .init_scale = 0.0f});  // zeros

    // gradient: every entry 0.25
    Params grads = params;
    grads.for_each_tensor([](Tensor& t) {
        for (float& v : t.data) v = 0.25f;
    });

    rmsprop_step(params, grads, cache, cfg, kFull);
    const float g = 0.25f;
    const float cache_want = (1.0f - cfg.rmsprop_decay) * g * g;
    const float step = cfg.learning_rate * g / (std::sqrt(cache_want) + cfg.rmsprop_epsilon);
    CHECK(cache.conv_w[0].data[0] == doctest::Approx(cache_want).epsilon(1e-6));
    CHECK(params.conv_w[0].data[0] ==
          doctest::Approx(before.conv_w[0].data[0] - step).epsilon(1e-6));
    CHECK(params.dense_b[1].data[2] ==
          doctest::Approx(before.dense_b[1].data[2] - step).epsilon(1e-6));

    // second step accumulates the cache with the decay factor
    Params params2 = params;
    rmsprop_step(params2, grads, cache, cfg, kFull);
    const float cache2 = cfg.rmsprop_decay * cache_want + (1.0f - cfg.rmsprop_decay) * g * g;
    const float step2 = cfg.learning_rate * g / (std::sqrt(cache2) + cfg.rmsprop_epsilon);
    CHECK(cache.conv_w[0].data[0] == doctest::Approx(cache2).epsilon(1e-6));
    CHECK(params2.conv_w[0].data[0] ==
          doctest::Approx(params.conv_w[0].data[0] - step2).epsilon(1e-6));

    // non-finite gradients halt the run
    grads.conv_w[0].data[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(rmsprop_step(params, grads, cache, cfg, kFull), DivergenceError);
}

TEST_CASE("training is deterministic and improves on a separable synthetic set") {
    const Dataset data = synthetic_dataset(45, 8, 8, 3, 313);
    NetworkSpec spec = tiny_spec();
    spec.dense_units = 16;
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 12;
    cfg.learning_rate = 1e-2f;
    cfg.seed = 3;
    cfg.init_scale = 0.2f;
    // positive shift keeps the two global-max features monotone in class
    // brightness; a symmetric init can collapse the darker classes to zero
    cfg.init_perturbation = 0.1f;

    const TrainResult a = train(spec, cfg, data, data);
    const TrainResult b = train(spec, cfg, data, data);
    REQUIRE(a.status == RunStatus::Completed);
    REQUIRE(a.epoch_accuracy.size() == 12);
    CHECK(a.epoch_accuracy == b.epoch_accuracy);
    CHECK(a.params.conv_w[0].data == b.params.conv_w[0].data);
    CHECK(a.params.dense_w[1].data == b.params.dense_w[1].data);
    CHECK(a.wall_seconds > 0.0);

    // separable bands are learned quickly at full precision
    const double best = *std::max_element(a.epoch_accuracy.begin(), a.epoch_accuracy.end());
    CHECK(best >= 0.9);
    CHECK(a.epoch_accuracy.back() >= 0.65);

    TrainConfig other = cfg;
    other.seed = 9;
    const TrainResult c = train(spec, other, data, data);
    CHECK(a.params.conv_w[0].data != c.params.conv_w[0].data);
}

TEST_CASE("stochastic-rounding training is reproducible for a fixed seed") {
    const Dataset data = synthetic_dataset(24, 8, 8, 3, 99);
    const NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.seed = 21;
    cfg.precision = {7, Rounding::Stochastic, Granularity::PerBatch};

    const TrainResult a = train(spec, cfg, data, data);
    const TrainResult b = train(spec, cfg, data, data);
    CHECK(a.epoch_accuracy == b.epoch_accuracy);
    CHECK(a.params.dense_w[0].data == b.params.dense_w[0].data);
}

TEST_CASE("per-batch truncation leaves every parameter on the reduced grid") {
    const Dataset data = synthetic_dataset(24, 8, 8, 3, 55);
    const NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.seed = 31;
    cfg.precision = {5, Rounding::Truncate, Granularity::PerBatch};

    const TrainResult r = train(spec, cfg, data, data);
    REQUIRE(r.status == RunStatus::Completed);
    Params params = r.params;
    params.for_each_tensor([&](Tensor& t) {
        for (float v : t.data) CHECK(truncate(v, cfg.precision) == v);
    });

    // deferring quantization to epoch ends still lands on the grid but takes
    // a different path through weight space
    TrainConfig deferred = cfg;
    deferred.quantize_once_per_epoch = true;
    const TrainResult d = train(spec, deferred, data, data);
    Params dparams = d.params;
    dparams.for_each_tensor([&](Tensor& t) {
        for (float v : t.data) CHECK(truncate(v, cfg.precision) == v);
    });
    CHECK(d.params.conv_w[0].data != r.params.conv_w[0].data);
}

TEST_CASE("divergence is caught and reported as a partial record") {
    const Dataset data = synthetic_dataset(24, 8, 8, 3, 10);
    const NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 4;
    cfg.seed = 8;
    cfg.learning_rate = 1e12f;  // overflows the head logits into inf - inf

    const TrainResult r = train(spec, cfg, data, data);
    CHECK(r.status == RunStatus::Diverged);
    CHECK(r.diverged_epoch >= 1);
    CHECK(r.diverged_epoch <= 4);
    CHECK(r.epoch_accuracy.size() < 4);
}

TEST_CASE("evaluate resolves argmax ties toward the lowest class index") {
    const Dataset data = synthetic_dataset(20, 8, 8, 3, 70);
    const NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.init_scale = 0.0f;  // all-zero network: uniform softmax, every row ties
    const Params params = init_weights(spec, cfg);
    const double acc = evaluate(spec, params, data);
    // everything predicted as class 0; synthetic labels cycle 0,1,2
    const double want = 7.0 / 20.0;
    CHECK(acc == doctest::Approx(want));

    Dataset empty;
    empty.images = Tensor({1, 8, 8});
    empty.labels = {};
    CHECK_THROWS_AS(evaluate(spec, params, empty), std::invalid_argument);
}

TEST_CASE("training rejects empty inputs and zero batch size") {
    const Dataset data = synthetic_dataset(8, 8, 8, 3, 5);
    const NetworkSpec spec = tiny_spec();
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(spec, cfg, data, data), std::invalid_argument);
    Dataset empty;
    empty.images = Tensor({1, 8, 8});
    empty.labels = {};
    TrainConfig ok;
    CHECK_THROWS_AS(train(spec, ok, empty, data), std::invalid_argument);
}
