#include "doctest.h"

#include "blastoseg/ops.hpp"
#include "blastoseg/tensor.hpp"

using namespace blastoseg;

TEST_CASE("tensor shape and data agree") {
    Tensor<double> t({2, 3, 4}, 1.5);
    CHECK(t.numel() == 24);
    CHECK(t.rank() == 3);
    CHECK(t[0] == 1.5);
    CHECK_THROWS_AS(Tensor<double>::from_data({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    CHECK_THROWS_AS(Tensor<double>({0, 3}), DimensionError);
}

TEST_CASE("copies share storage, clone does not") {
    Tensor<float> a({4}, 1.0f);
    Tensor<float> b = a;
    b[0] = 7.0f;
    CHECK(a[0] == 7.0f);
    Tensor<float> c = a.clone();
    c[1] = 9.0f;
    CHECK(a[1] == 1.0f);
}

TEST_CASE("backward requires a scalar loss from this tape") {
    Tensor<double> x({2, 2}, 1.0, true);
    Tape<double> tape;
    auto y = relu(x, &tape);
    CHECK_THROWS_AS(tape.backward(y), ParameterError);  // non-scalar

    Tensor<double> loose = Tensor<double>::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(loose), ParameterError);  // not on tape
}

TEST_CASE("loss = sum(x) gives all-ones gradient") {
    Tensor<double> x = Tensor<double>::from_data({2, 3}, {1, -2, 3, 4, -5, 6}, true);
    Tape<double> tape;
    auto loss = sum(x, &tape);
    tape.backward(loss);
    auto g = tape.grad(x);
    for (index_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("loss = sum(x*x) gives 2x gradient") {
    Tensor<double> x = Tensor<double>::from_data({4}, {0.5, -1.5, 2.0, -0.25}, true);
    Tape<double> tape;
    auto loss = sum(mul(x, x, &tape), &tape);
    tape.backward(loss);
    auto g = tape.grad(x);
    for (index_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-12));
}

TEST_CASE("gradients accumulate across fan-out") {
    Tensor<double> x = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}, true);
    Tape<double> tape;
    auto y = add(x, x, &tape);  // y = 2x
    auto loss = sum(y, &tape);
    tape.backward(loss);
    auto g = tape.grad(x);
    for (index_t i = 0; i < 3; ++i) CHECK(g[i] == 2.0);
}

TEST_CASE("a fresh tape never aliases a stale one") {
    Tensor<double> x({4}, 1.0, true);
    double g0 = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
        Tape<double> tape;
        auto loss = sum(mul(x, x, &tape), &tape);
        tape.backward(loss);
        auto g = tape.grad(x);
        if (rep == 0) g0 = g[0];
        CHECK(g[0] == g0);
    }
}

TEST_CASE("forward ops keep finite inputs finite") {
    Rng rng(11);
    std::normal_distribution<double> nd(0.0, 3.0);
    Tensor<double> x({2, 4, 8, 8});
    for (index_t i = 0; i < x.numel(); ++i) x[i] = nd(rng);
    Tensor<double> w({3, 4, 3, 3});
    for (index_t i = 0; i < w.numel(); ++i) w[i] = nd(rng);
    Tensor<double> b({3}, 0.1);
    auto y = conv2d(x, w, b);
    CHECK(y.all_finite());
    CHECK(sigmoid(y).all_finite());
    CHECK(relu(y).all_finite());
    CHECK(maxpool2d(y).all_finite());
}
