#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "fmk/errors.hpp"
#include "fmk/nn.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

using fmk::Layer;
using fmk::Model;
using fmk::Tensor;

namespace {

Model dense_only(Tensor w, Tensor b, std::vector<std::size_t> in_shape, std::size_t classes) {
    Model m;
    m.input_shape = std::move(in_shape);
    m.num_classes = classes;
    m.layers.push_back(Layer::dense(std::move(w), std::move(b)));
    return m;
}

} // namespace

TEST_CASE("tensor shape bookkeeping") {
    CHECK_THROWS_AS(Tensor({3, 0}), fmk::ArgumentError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), fmk::ShapeError);

    Tensor t({2, 2}, {1.0f, -2.0f, 3.0f, -4.0f});
    CHECK(t.numel() == 4);
    t.clamp(-2.5f, 2.5f);
    CHECK(t.data == std::vector<float>{1.0f, -2.0f, 2.5f, -2.5f});

    Tensor nan_t({1}, {std::nanf("")});
    CHECK_THROWS_AS(fmk::require_finite(nan_t, "probe"), fmk::NumericalError);

    CHECK(fmk::max_abs_diff(t, t) == 0.0f);
    Tensor other({4});
    CHECK_THROWS_AS(fmk::max_abs_diff(t, other), fmk::ShapeError);
}

TEST_CASE("forward: zero weights give zero logits") {
    Model m = dense_only(Tensor::zeros({2, 3}), Tensor::zeros({2}), {3}, 2);
    Tensor out = fmk::forward(m, Tensor({3}, {0.3f, -1.0f, 2.0f}));
    CHECK(out.shape == std::vector<std::size_t>{2});
    CHECK(out.data == std::vector<float>{0.0f, 0.0f});
}

TEST_CASE("forward: identity dense passes input through exactly") {
    Tensor w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Model m = dense_only(std::move(w), Tensor::zeros({3}), {3}, 3);
    const Tensor in({3}, {0.125f, -7.5f, 3.25f});
    Tensor out = fmk::forward(m, in);
    CHECK(out.data == in.data);
}

TEST_CASE("forward: wrong input shape is rejected") {
    Model m = dense_only(Tensor::zeros({2, 3}), Tensor::zeros({2}), {3}, 2);
    CHECK_THROWS_AS(fmk::forward(m, Tensor({4})), fmk::ShapeError);
}

TEST_CASE("forward: agrees with a double-precision reference") {
    for (const auto& fd : fixtures::fd_cases(3, 100)) {
        const Tensor got = fmk::forward(fd.model, fd.input);
        const std::vector<double> want = oracle::forward_f64(fd.model, fd.input);
        REQUIRE(got.numel() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(std::abs(static_cast<double>(got.data[i]) - want[i]) < 1e-5);
    }
}

TEST_CASE("forward: deterministic across calls") {
    const auto& toy = fixtures::toy();
    const Tensor a = fmk::forward(toy.model, toy.val.inputs[0]);
    const Tensor b = fmk::forward(toy.model, toy.val.inputs[0]);
    CHECK(a.data == b.data);
}

TEST_CASE("backward: unit cotangent on one logit exposes the dense rows") {
    // single dense layer: d(logit0)/dW row 0 is the input itself, row 1 never
    // contributes; d/dx is weight row 0
    Tensor w({2, 3}, {0.5f, -1.0f, 2.0f, 1.5f, 0.25f, -0.75f});
    Model m = dense_only(std::move(w), Tensor::zeros({2}), {3}, 2);
    const Tensor in({3}, {1.0f, 2.0f, -3.0f});
    const auto trace = fmk::forward_trace(m, in);
    const auto grads = fmk::backward(m, trace, Tensor({2}, {1.0f, 0.0f}));

    CHECK(grads.weight_grads[0].data == std::vector<float>{1.0f, 2.0f, -3.0f, 0.0f, 0.0f, 0.0f});
    CHECK(grads.bias_grads[0].data == std::vector<float>{1.0f, 0.0f});
    CHECK(grads.input_grad.data == std::vector<float>{0.5f, -1.0f, 2.0f});
}

TEST_CASE("backward: zero cotangent zeroes every gradient") {
    const auto& toy = fixtures::toy();
    const auto trace = fmk::forward_trace(toy.model, toy.val.inputs[1]);
    const auto grads = fmk::backward(toy.model, trace, Tensor::zeros({toy.model.num_classes}));
    for (const Tensor& g : grads.weight_grads)
        for (float v : g.data) CHECK(v == 0.0f);
    for (const Tensor& g : grads.bias_grads)
        for (float v : g.data) CHECK(v == 0.0f);
    for (float v : grads.input_grad.data) CHECK(v == 0.0f);
}

TEST_CASE("backward: matches central differences on mixed architectures") {
    for (const auto& fd : fixtures::fd_cases(3, 7)) {
        const auto g = fixtures::random_probe(fd.model.num_classes, fd.seed);
        const auto res = oracle::fd_check(fd.model, fd.input, g);
        INFO("seed ", fd.seed, " worst rel err ", res.max_rel);
        CHECK(res.max_rel <= 1e-3);
        CHECK(res.checked > fixtures::param_count(fd.model)); // params plus input pixels
    }
}

TEST_CASE("backward: stale or foreign traces are rejected") {
    const auto& toy = fixtures::toy();
    const Tensor g = Tensor::zeros({toy.model.num_classes});
    CHECK_THROWS_AS(fmk::backward(toy.model, fmk::ForwardTrace{}, g), fmk::StateError);

    Model shallow = dense_only(Tensor::zeros({8, 64}), Tensor::zeros({8}), {64}, 8);
    const auto trace = fmk::forward_trace(shallow, Tensor::zeros({64}));
    CHECK_THROWS_AS(fmk::backward(toy.model, trace, g), fmk::StateError);
}

TEST_CASE("backward: cotangent length must match the class count") {
    Model m = dense_only(Tensor::zeros({2, 3}), Tensor::zeros({2}), {3}, 2);
    const auto trace = fmk::forward_trace(m, Tensor::zeros({3}));
    CHECK_THROWS_AS(fmk::backward(m, trace, Tensor::zeros({5})), fmk::ShapeError);
}

TEST_CASE("backward: relu blocks gradient through dead units") {
    Model m;
    m.input_shape = {1};
    m.num_classes = 2;
    m.layers.push_back(Layer::dense(Tensor({2, 1}, {1.0f, -1.0f}), Tensor::zeros({2})));
    m.layers.push_back(Layer::relu());
    m.layers.push_back(Layer::dense(Tensor({2, 2}, {1, 1, 1, 1}), Tensor::zeros({2})));

    const auto trace = fmk::forward_trace(m, Tensor({1}, {2.0f}));
    const auto grads = fmk::backward(m, trace, Tensor({2}, {1.0f, 0.0f}));
    // pre-activations are (2, -2): unit 1 is dead, so its incoming weight and
    // the input path through it see zero
    CHECK(grads.weight_grads[0].data[0] == 2.0f);
    CHECK(grads.weight_grads[0].data[1] == 0.0f);
    CHECK(grads.input_grad.data[0] == 1.0f);

    // exactly-zero pre-activation counts as dead too
    const auto trace0 = fmk::forward_trace(m, Tensor({1}, {0.0f}));
    const auto grads0 = fmk::backward(m, trace0, Tensor({2}, {1.0f, 1.0f}));
    CHECK(grads0.weight_grads[0].data == std::vector<float>{0.0f, 0.0f});
    CHECK(grads0.input_grad.data[0] == 0.0f);
}

TEST_CASE("softmax cross-entropy: symmetric two-logit case") {
    const auto [loss, grad] = fmk::softmax_cross_entropy(Tensor({2}, {0.0f, 0.0f}), 0);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(grad.data[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(grad.data[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy: confident correct logit costs ~nothing") {
    const auto [loss, grad] = fmk::softmax_cross_entropy(Tensor({2}, {100.0f, 0.0f}), 0);
    CHECK(loss < 1e-12);
    CHECK(std::abs(grad.data[0]) < 1e-12);
    CHECK(std::abs(grad.data[1]) < 1e-12);
}

TEST_CASE("softmax cross-entropy: matches the direct formula, grads sum to zero") {
    std::uint64_t s = 99;
    for (int trial = 0; trial < 10; ++trial) {
        Tensor logits({5});
        for (float& v : logits.data) v = static_cast<float>(20.0 * oracle::sm64_unit(s) - 10.0);
        const std::size_t label = oracle::sm64_next(s) % 5;
        const auto [loss, grad] = fmk::softmax_cross_entropy(logits, label);
        CHECK(oracle::rel_err(loss, oracle::ce_f64(logits, label), 1e-9) < 1e-6);
        double sum = 0.0;
        for (float v : grad.data) sum += v;
        CHECK(std::abs(sum) < 1e-6);
    }
}

TEST_CASE("softmax cross-entropy: label out of range") {
    CHECK_THROWS_AS(fmk::softmax_cross_entropy(Tensor({2}), 2), fmk::ArgumentError);
}

TEST_CASE("top1 prefers the lowest index on ties") {
    CHECK(fmk::top1(Tensor({2}, {1.0f, 1.0f})) == 0);
    CHECK(fmk::top1(Tensor({3}, {0.0f, 3.0f, 3.0f})) == 1);
    CHECK(fmk::top1(Tensor({3}, {-1.0f, -5.0f, -0.5f})) == 2);
}

TEST_CASE("train: zero learning rate returns the model bit for bit") {
    const auto& toy = fixtures::toy();
    fmk::TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.steps = 25;
    const Model out = fmk::train(toy.model, toy.train, tc);
    for (std::size_t li = 0; li < out.layers.size(); ++li) {
        CHECK(out.layers[li].weights.data == toy.model.layers[li].weights.data);
        CHECK(out.layers[li].bias.data == toy.model.layers[li].bias.data);
    }
}

TEST_CASE("train: one step on one sample is exactly w - lr * grad") {
    const auto& toy = fixtures::toy();
    fmk::Dataset one;
    one.inputs = {toy.train.inputs[0]};
    one.labels = {toy.train.labels[0]};
    one.input_shape = toy.train.input_shape;
    one.num_classes = toy.train.num_classes;

    fmk::TrainConfig tc;
    tc.learning_rate = 0.1;
    tc.steps = 1;
    tc.batch_size = 1;
    const Model out = fmk::train(toy.model, one, tc);

    const auto trace = fmk::forward_trace(toy.model, one.inputs[0]);
    const auto [loss, lgrad] = fmk::softmax_cross_entropy(trace.acts.back(), one.labels[0]);
    const auto grads = fmk::backward(toy.model, trace, lgrad);

    for (std::size_t li = 0; li < out.layers.size(); ++li) {
        if (!out.layers[li].has_params()) continue;
        for (std::size_t i = 0; i < out.layers[li].weights.numel(); ++i) {
            const float expect = static_cast<float>(
                static_cast<double>(toy.model.layers[li].weights.data[i]) -
                0.1 * static_cast<double>(grads.weight_grads[li].data[i]));
            CHECK(out.layers[li].weights.data[i] == expect);
        }
        for (std::size_t i = 0; i < out.layers[li].bias.numel(); ++i) {
            const float expect = static_cast<float>(
                static_cast<double>(toy.model.layers[li].bias.data[i]) -
                0.1 * static_cast<double>(grads.bias_grads[li].data[i]));
            CHECK(out.layers[li].bias.data[i] == expect);
        }
    }
}

TEST_CASE("train: bad arguments") {
    const auto& toy = fixtures::toy();
    fmk::Dataset empty;
    empty.input_shape = toy.train.input_shape;
    empty.num_classes = toy.train.num_classes;
    fmk::TrainConfig tc;
    CHECK_THROWS_AS(fmk::train(toy.model, empty, tc), fmk::ArgumentError);

    tc.learning_rate = -0.5;
    CHECK_THROWS_AS(fmk::train(toy.model, toy.train, tc), fmk::ArgumentError);
    tc = {};
    tc.steps = 0;
    CHECK_THROWS_AS(fmk::train(toy.model, toy.train, tc), fmk::ArgumentError);
    tc = {};
    tc.batch_size = 0;
    CHECK_THROWS_AS(fmk::train(toy.model, toy.train, tc), fmk::ArgumentError);

    fmk::Dataset bad = toy.train;
    bad.labels[3] = bad.num_classes;
    tc = {};
    tc.steps = 1;
    CHECK_THROWS_AS(fmk::train(toy.model, bad, tc), fmk::ArgumentError);
}

TEST_CASE("train: same seed, same result; the toy net actually learns") {
    const auto& toy = fixtures::toy();
    fmk::Dataset small;
    small.inputs.assign(toy.train.inputs.begin(), toy.train.inputs.begin() + 64);
    small.labels.assign(toy.train.labels.begin(), toy.train.labels.begin() + 64);
    small.input_shape = toy.train.input_shape;
    small.num_classes = toy.train.num_classes;

    fmk::TrainConfig tc;
    tc.steps = 40;
    tc.seed = 5;
    const Model a = fmk::train(toy.model, small, tc);
    const Model b = fmk::train(toy.model, small, tc);
    for (std::size_t li = 0; li < a.layers.size(); ++li)
        CHECK(a.layers[li].weights.data == b.layers[li].weights.data);

    CHECK(toy.val_accuracy >= 0.95);
}

TEST_CASE("train: the stock 2000-step run masters the toy set") {
    const auto& toy = fixtures::toy();
    Model fresh = fmk::build_model(fmk::default_mlp_arch(toy.train.num_classes),
                                   toy.train.input_shape, toy.train.num_classes, 3);
    fmk::TrainConfig tc; // 2000 steps by default
    tc.seed = 29;
    const Model trained = fmk::train(fresh, toy.train, tc);
    CHECK(fmk::accuracy(trained, toy.train) >= 0.95);
}

TEST_CASE("accuracy refuses an empty dataset") {
    const auto& toy = fixtures::toy();
    fmk::Dataset empty;
    empty.input_shape = toy.train.input_shape;
    empty.num_classes = toy.train.num_classes;
    CHECK_THROWS_AS(fmk::accuracy(toy.model, empty), fmk::ArgumentError);
}
