#include "doctest.h"

#include "blastoseg/model.hpp"
#include "blastoseg/ops.hpp"
#include "blastoseg/train.hpp"
#include "gradcheck.hpp"

using namespace blastoseg;
using gradcheck::project;
using gradcheck::random_tensor;
using gradcheck::random_weights;
using gradcheck::separated_tensor;

namespace {
constexpr double kTol = 1e-4;
}

TEST_CASE("conv2d gradients vs finite differences") {
    Rng rng(101);
    const struct {
        Shape in, w;
        index_t stride, dil;
        Padding pad;
    } cases[] = {
        {{1, 1, 6, 6}, {1, 1, 3, 3}, 1, 1, Padding::kSame},
        {{2, 3, 7, 5}, {4, 3, 3, 3}, 1, 2, Padding::kSame},
        {{1, 2, 9, 9}, {3, 2, 3, 3}, 1, 4, Padding::kSame},
        {{2, 2, 8, 8}, {2, 2, 2, 2}, 2, 1, Padding::kValid},
        {{1, 3, 10, 10}, {2, 3, 3, 3}, 2, 1, Padding::kSame},
        {{1, 1, 12, 12}, {2, 1, 3, 3}, 1, 1, Padding::kValid},
        {{1, 2, 6, 6}, {2, 2, 1, 1}, 1, 1, Padding::kSame},
    };
    for (const auto& c : cases) {
        auto x = random_tensor(c.in, rng);
        auto w = random_tensor(c.w, rng);
        auto b = random_tensor({c.w[0]}, rng);
        auto probe = conv2d(x, w, b, c.stride, c.dil, c.pad);
        auto pw = random_weights(probe.numel(), rng);
        auto loss_fn = [&](Tape<double>* t) {
            return project(conv2d(x, w, b, c.stride, c.dil, c.pad, t), pw, t);
        };
        auto res = gradcheck::check(loss_fn, {x, w, b});
        INFO(res.worst);
        CHECK(res.ok(kTol));
    }
}

TEST_CASE("conv2d_transpose gradients vs finite differences") {
    Rng rng(202);
    const Shape cases[][2] = {
        {{1, 1, 3, 3}, {1, 1, 2, 2}}, {{2, 2, 4, 3}, {2, 3, 2, 2}}, {{1, 3, 5, 5}, {3, 2, 2, 2}},
        {{1, 2, 2, 6}, {2, 2, 2, 2}}, {{2, 1, 4, 4}, {1, 4, 2, 2}},
    };
    for (const auto& c : cases) {
        auto x = random_tensor(c[0], rng);
        auto w = random_tensor(c[1], rng);
        auto probe = conv2d_transpose(x, w, 2);
        auto pw = random_weights(probe.numel(), rng);
        auto loss_fn = [&](Tape<double>* t) { return project(conv2d_transpose(x, w, 2, t), pw, t); };
        auto res = gradcheck::check(loss_fn, {x, w});
        INFO(res.worst);
        CHECK(res.ok(kTol));
    }
}

TEST_CASE("maxpool2d gradients vs finite differences") {
    Rng rng(303);
    const Shape cases[] = {{1, 1, 4, 4}, {2, 3, 6, 6}, {1, 2, 8, 4}, {3, 1, 2, 2}, {1, 4, 10, 10}};
    for (const auto& c : cases) {
        auto x = separated_tensor(c, rng);  // argmax stays put under +-h
        auto probe = maxpool2d(x);
        auto pw = random_weights(probe.numel(), rng);
        auto loss_fn = [&](Tape<double>* t) { return project(maxpool2d(x, t), pw, t); };
        auto res = gradcheck::check(loss_fn, {x});
        INFO(res.worst);
        CHECK(res.ok(kTol));
    }
}

TEST_CASE("batchnorm2d gradients vs finite differences, both modes") {
    Rng rng(404);
    const Shape cases[] = {{2, 1, 3, 3}, {4, 2, 4, 4}, {2, 3, 5, 5}, {8, 1, 2, 2}, {3, 4, 4, 2}};
    for (bool training : {true, false}) {
        for (const auto& c : cases) {
            auto x = random_tensor(c, rng);
            BatchNormState<double> st(c[1]);
            for (index_t i = 0; i < c[1]; ++i) {
                st.gamma[i] = 0.5 + 0.1 * static_cast<double>(i + 1);
                st.beta[i] = 0.2 * static_cast<double>(i);
                st.running_mean[static_cast<std::size_t>(i)] = 0.1 * static_cast<double>(i);
                st.running_var[static_cast<std::size_t>(i)] = 1.0 + 0.2 * static_cast<double>(i);
            }
            auto pw = random_weights(x.numel(), rng);
            auto loss_fn = [&](Tape<double>* t) {
                // keep running stats frozen so repeated probes see one function
                BatchNormState<double> local = st;
                local.gamma = st.gamma;
                local.beta = st.beta;
                return project(batchnorm2d(x, local, training, t), pw, t);
            };
            auto res = gradcheck::check(loss_fn, {x, st.gamma, st.beta});
            INFO("training=" << training << " " << res.worst);
            CHECK(res.ok(kTol));
        }
    }
}

TEST_CASE("dropout gradients vs finite differences (fixed mask)") {
    Rng rng(505);
    const Shape cases[] = {{1, 1, 4, 4}, {2, 2, 3, 3}, {50}, {2, 1, 6, 2}, {1, 3, 2, 2}};
    int seed = 900;
    for (const auto& c : cases) {
        auto x = random_tensor(c, rng);
        auto pw = random_weights(x.numel(), rng);
        const int mask_seed = ++seed;
        auto loss_fn = [&, mask_seed](Tape<double>* t) {
            Rng mask_rng(static_cast<std::uint64_t>(mask_seed));
            return project(dropout(x, 0.3, true, mask_rng, t), pw, t);
        };
        auto res = gradcheck::check(loss_fn, {x});
        INFO(res.worst);
        CHECK(res.ok(kTol));
    }
}

TEST_CASE("elementwise op gradients vs finite differences") {
    Rng rng(606);
    const Shape cases[] = {{3}, {2, 5}, {1, 2, 3, 4}, {7, 3}, {2, 2, 2, 2}};
    for (const auto& c : cases) {
        // keep relu inputs away from the kink at zero
        auto x = random_tensor(c, rng, 0.1, 1.5);
        auto y = random_tensor(c, rng, -1.5, -0.1);
        auto pw = random_weights(x.numel(), rng);

        auto relu_fn = [&](Tape<double>* t) { return project(relu(x, t), pw, t); };
        CHECK(gradcheck::check(relu_fn, {x}).ok(kTol));

        auto sig_fn = [&](Tape<double>* t) { return project(sigmoid(x, t), pw, t); };
        CHECK(gradcheck::check(sig_fn, {x}).ok(kTol));

        auto add_fn = [&](Tape<double>* t) { return project(add(x, y, t), pw, t); };
        CHECK(gradcheck::check(add_fn, {x, y}).ok(kTol));

        auto mul_fn = [&](Tape<double>* t) { return project(mul(x, y, t), pw, t); };
        CHECK(gradcheck::check(mul_fn, {x, y}).ok(kTol));

        auto sum_fn = [&](Tape<double>* t) { return sum(mul(x, x, t), t); };
        CHECK(gradcheck::check(sum_fn, {x}).ok(kTol));

        auto mean_fn = [&](Tape<double>* t) { return mean(mul(x, y, t), t); };
        CHECK(gradcheck::check(mean_fn, {x, y}).ok(kTol));
    }
}

TEST_CASE("concat_channels gradients vs finite differences") {
    Rng rng(707);
    const Shape pairs[][2] = {
        {{1, 1, 2, 2}, {1, 2, 2, 2}}, {{2, 3, 3, 3}, {2, 1, 3, 3}}, {{1, 4, 2, 3}, {1, 4, 2, 3}},
        {{2, 2, 4, 4}, {2, 5, 4, 4}}, {{1, 1, 5, 2}, {1, 1, 5, 2}},
    };
    for (const auto& c : pairs) {
        auto a = random_tensor(c[0], rng);
        auto b = random_tensor(c[1], rng);
        auto probe = concat_channels(a, b);
        auto pw = random_weights(probe.numel(), rng);
        auto fn = [&](Tape<double>* t) { return project(concat_channels(a, b, t), pw, t); };
        CHECK(gradcheck::check(fn, {a, b}).ok(kTol));
    }
}

TEST_CASE("bce+jaccard loss gradient vs finite differences on a 4x4 case") {
    Rng rng(808);
    for (int c = 0; c < 5; ++c) {
        auto pred = random_tensor({1, 1, 4, 4}, rng, 0.05, 0.95);
        Tensor<double> target({1, 1, 4, 4}, 0.0);
        for (index_t i = 0; i < target.numel(); ++i) target[i] = (rng() % 2) ? 1.0 : 0.0;
        auto fn = [&](Tape<double>* t) { return loss_bce_jaccard(pred, target, t); };
        auto res = gradcheck::check(fn, {pred});
        INFO(res.worst);
        CHECK(res.ok(kTol));
    }
}

TEST_CASE("composed residual path gradients vs finite differences") {
    // conv -> bn -> relu -> conv -> bn -> add(shortcut) -> relu, through a
    // pool and a sigmoid head: exercises gradient accumulation across the
    // skip fan-out.
    Rng rng(909);
    auto x = random_tensor({1, 2, 4, 4}, rng);
    auto w1 = random_tensor({2, 2, 3, 3}, rng);
    auto b1 = random_tensor({2}, rng);
    auto w2 = random_tensor({2, 2, 3, 3}, rng);
    auto b2 = random_tensor({2}, rng);
    BatchNormState<double> bn1(2), bn2(2);
    auto pw = random_weights(2 * 2 * 2, rng);
    auto fn = [&](Tape<double>* t) {
        BatchNormState<double> l1 = bn1, l2 = bn2;
        l1.gamma = bn1.gamma;
        l1.beta = bn1.beta;
        l2.gamma = bn2.gamma;
        l2.beta = bn2.beta;
        auto h1 = relu(batchnorm2d(conv2d(x, w1, b1, 1, 1, Padding::kSame, t), l1, true, t), t);
        auto h2 = batchnorm2d(conv2d(h1, w2, b2, 1, 1, Padding::kSame, t), l2, true, t);
        auto res = relu(add(h2, x, t), t);
        return project(sigmoid(maxpool2d(res, t), t), pw, t);
    };
    auto res = gradcheck::check(fn, {x, w1, b1, w2, b2, bn1.gamma, bn1.beta, bn2.gamma, bn2.beta});
    INFO(res.worst);
    CHECK(res.ok(kTol));
}

TEST_CASE("full network gradient check at 32x32 (sampled parameters)") {
    ModelConfig cfg;
    cfg.depth = 4;
    cfg.encoder_kernels = {2, 3, 4, 5};
    cfg.decoder_kernels = {5, 4, 3, 2};
    cfg.dilation_rates = {1, 2, 4, 8};
    cfg.bottleneck_channels = 6;
    cfg.input_channels = 1;
    cfg.dropout_rate = 0.05;
    cfg.image_size = 32;

    Rng rng(4242);
    auto model = RDUNet<double>::build(cfg, rng);
    auto x = random_tensor({1, 1, 32, 32}, rng, -1.0, 1.0);
    Tensor<double> target({1, 1, 32, 32}, 0.0);
    for (index_t i = 0; i < target.numel(); ++i) target[i] = (rng() % 3 == 0) ? 1.0 : 0.0;

    auto fn = [&](Tape<double>* t) {
        // fresh running stats each call so training-mode BN is a pure
        // function of the parameters; dropout mask fixed by seed
        auto bufs = model.buffers();
        std::vector<std::vector<double>> saved;
        saved.reserve(bufs.size());
        for (auto& [name, vec] : bufs) saved.push_back(*vec);
        Rng drop_rng(7);
        auto out = model.forward(x, true, t, &drop_rng);
        auto loss = loss_bce_jaccard(out, target, t);
        for (std::size_t k = 0; k < bufs.size(); ++k) *bufs[k].second = saved[k];
        return loss;
    };

    std::vector<Tensor<double>> inputs;
    inputs.push_back(x);
    for (auto& [name, t] : model.parameters()) inputs.push_back(t);
    auto res = gradcheck::check(fn, inputs, 1e-3, 1e-6, /*max_probes=*/6);
    INFO(res.worst);
    CHECK(res.checked > 500);
    CHECK(res.ok(kTol));
}
