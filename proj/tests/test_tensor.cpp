#include <doctest.h>

#include <cmath>

#include "relsar/graph.hpp"
#include "relsar/optim.hpp"

using namespace relsar;

TEST_CASE("matmul identity and hand arithmetic") {
    Graph g;
    auto eye = Tensor(Shape{3, 3});
    for (int i = 0; i < 3; ++i) eye(i, i) = 1.0f;
    auto b = Tensor(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
    auto prod = g.matmul(g.constant(eye), g.constant(b));
    CHECK(g.value(prod).data == b.data);

    auto a2 = Tensor(Shape{2, 2}, {1, 2, 3, 4});
    auto b2 = Tensor(Shape{2, 1}, {1, 1});
    auto p2 = g.matmul(g.constant(a2), g.constant(b2));
    CHECK(g.value(p2)(0, 0) == doctest::Approx(3.0));
    CHECK(g.value(p2)(1, 0) == doctest::Approx(7.0));

    CHECK_THROWS_AS(g.matmul(g.constant(Tensor(Shape{2, 3})), g.constant(Tensor(Shape{2, 3}))), DimensionError);
}

TEST_CASE("softmax values") {
    Graph g;
    auto one = g.softmax_last(g.constant(Tensor(Shape{1, 1}, {4.2f})));
    CHECK(g.value(one)(0, 0) == doctest::Approx(1.0));

    auto sym = g.softmax_last(g.constant(Tensor(Shape{1, 2}, {0.0f, 0.0f})));
    CHECK(g.value(sym)(0, 0) == doctest::Approx(0.5));
    CHECK(g.value(sym)(0, 1) == doctest::Approx(0.5));

    auto logs = Tensor(Shape{1, 3}, {std::log(1.0f), std::log(2.0f), std::log(3.0f)});
    auto sm = g.softmax_last(g.constant(logs));
    CHECK(g.value(sm)(0, 0) == doctest::Approx(1.0 / 6.0));
    CHECK(g.value(sm)(0, 1) == doctest::Approx(2.0 / 6.0));
    CHECK(g.value(sm)(0, 2) == doctest::Approx(3.0 / 6.0));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng(11);
    Tensor x(Shape{5, 7});
    for (auto& v : x.data) v = static_cast<float>(rng.normal(0.0, 2.0));
    Tensor shifted = x;
    for (int64_t r = 0; r < 5; ++r)
        for (int64_t c = 0; c < 7; ++c) shifted(r, c) += 3.75f;
    Graph g;
    auto a = g.softmax_last(g.constant(x));
    auto b = g.softmax_last(g.constant(shifted));
    for (int64_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (int64_t c = 0; c < 7; ++c) {
            sum += g.value(a)(r, c);
            CHECK(g.value(a)(r, c) == doctest::Approx(g.value(b)(r, c)).epsilon(1e-6));
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("selu, gelu, l2_normalize basics") {
    Graph g;
    auto s = g.selu(g.constant(Tensor(Shape{1}, {0.0f})));
    CHECK(g.value(s)(0) == doctest::Approx(0.0));
    // selu(1) = lambda, selu(-inf) -> -lambda*alpha
    auto s1 = g.selu(g.constant(Tensor(Shape{2}, {1.0f, -40.0f})));
    CHECK(g.value(s1)(0) == doctest::Approx(1.0507009873554805));
    CHECK(g.value(s1)(1) == doctest::Approx(-1.7580993408473766).epsilon(1e-5));

    auto n = g.l2_normalize_last(g.constant(Tensor(Shape{1, 2}, {3.0f, 4.0f})));
    CHECK(g.value(n)(0, 0) == doctest::Approx(0.6));
    CHECK(g.value(n)(0, 1) == doctest::Approx(0.8));

    // unit norm within 1e-6 for non-degenerate rows
    Rng rng(3);
    Tensor x(Shape{4, 9});
    for (auto& v : x.data) v = static_cast<float>(rng.normal(0.0, 1.0));
    auto nx = g.l2_normalize_last(g.constant(x));
    for (int64_t r = 0; r < 4; ++r) {
        double sq = 0.0;
        for (int64_t c = 0; c < 9; ++c) sq += g.value(nx)(r, c) * g.value(nx)(r, c);
        CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-6));
    }

    // eps-guard keeps the zero vector finite instead of NaN
    auto z = g.l2_normalize_last(g.constant(Tensor(Shape{1, 3})));
    CHECK(g.value(z).all_finite());

    // gelu: symmetric tail behavior
    auto ge = g.gelu(g.constant(Tensor(Shape{3}, {0.0f, 10.0f, -10.0f})));
    CHECK(g.value(ge)(0) == doctest::Approx(0.0));
    CHECK(g.value(ge)(1) == doctest::Approx(10.0));
    CHECK(g.value(ge)(2) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("conv1d with K=1 identity mapping reproduces the input") {
    const int64_t T = 6, C = 3;
    Rng rng(5);
    Tensor x(Shape{1, T, C});
    for (auto& v : x.data) v = static_cast<float>(rng.normal(0.0, 1.0));
    Tensor w(Shape{1, C, C});
    for (int64_t c = 0; c < C; ++c) w(0, c, c) = 1.0f;
    Graph g;
    auto y = g.conv1d(g.constant(x), g.constant(w), g.constant(Tensor(Shape{C})));
    CHECK(g.value(y).data == x.data);
}

TEST_CASE("maxpool length arithmetic") {
    Graph g;
    auto x30 = g.constant(Tensor(Shape{1, 30, 2}, 1.0f));
    auto p1 = g.maxpool1d(x30);
    CHECK(g.value(p1).shape[1] == 15);
    auto p2 = g.maxpool1d(p1);
    CHECK(g.value(p2).shape[1] == 7);

    auto x1 = g.constant(Tensor(Shape{1, 1, 2}, 1.0f));
    CHECK_THROWS_AS(g.maxpool1d(x1), DimensionError);
}

TEST_CASE("batchnorm uses batch stats in training and running stats in eval") {
    Graph g;
    Tensor x(Shape{4, 2}, {1.0f, 10.0f, 3.0f, 30.0f, 5.0f, 50.0f, 7.0f, 70.0f});
    auto gamma = g.constant(Tensor(Shape{2}, 1.0f));
    auto beta = g.constant(Tensor(Shape{2}));
    BnStatsT<float> stats;
    stats.running_mean = Tensor(Shape{2});
    stats.running_var = Tensor(Shape{2}, 1.0f);
    auto y = g.batchnorm(g.constant(x), gamma, beta, &stats, /*training=*/true);
    // per-channel zero mean, unit variance
    for (int64_t c = 0; c < 2; ++c) {
        double mean = 0.0, var = 0.0;
        for (int64_t r = 0; r < 4; ++r) mean += g.value(y)(r, c);
        mean /= 4;
        for (int64_t r = 0; r < 4; ++r) var += (g.value(y)(r, c) - mean) * (g.value(y)(r, c) - mean);
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(var / 4 == doctest::Approx(1.0).epsilon(1e-3));
    }
    // running stats moved toward batch stats
    CHECK(stats.running_mean(0) == doctest::Approx(0.1 * 4.0));
    // eval mode uses running stats: a constant input maps deterministically
    Graph g2;
    auto y2 = g2.batchnorm(g2.constant(Tensor(Shape{1, 2}, {4.0f, 40.0f})), g2.constant(Tensor(Shape{2}, 1.0f)),
                           g2.constant(Tensor(Shape{2})), &stats, /*training=*/false);
    CHECK(g2.value(y2).all_finite());
}

TEST_CASE("backward: sum gives ones, squared norm gives 2x") {
    Graph g;
    Tensor x(Shape{3}, {1.5f, -2.0f, 0.25f});
    auto xv = g.leaf(x);
    auto loss = g.sum(xv);
    g.backward(loss);
    for (int64_t i = 0; i < 3; ++i) CHECK(g.grad(xv)(i) == doctest::Approx(1.0));

    Graph h;
    auto hx = h.leaf(x);
    auto sq = h.sum(h.mul(hx, hx));
    h.backward(sq);
    for (int64_t i = 0; i < 3; ++i) CHECK(h.grad(hx)(i) == doctest::Approx(2.0 * x(i)));
}

TEST_CASE("backward contract: scalar loss only, off-path leaves stay zero") {
    Graph g;
    auto a = g.leaf(Tensor(Shape{2}, {1.0f, 2.0f}));
    auto b = g.leaf(Tensor(Shape{2}, {3.0f, 4.0f})); // never used
    auto vec = g.scale(a, 2.0f);
    CHECK_THROWS_AS(g.backward(vec), GraphError);
    auto loss = g.sum(vec);
    g.backward(loss);
    CHECK(g.grad(a)(0) == doctest::Approx(2.0));
    CHECK(g.grad(b)(0) == 0.0f);
    CHECK(g.grad(b)(1) == 0.0f);
}

TEST_CASE("two backward passes with zeroed accumulators agree bitwise") {
    Rng rng(17);
    Tensor x(Shape{4, 3});
    for (auto& v : x.data) v = static_cast<float>(rng.normal(0.0, 1.0));
    Graph g;
    auto xv = g.leaf(x);
    auto y = g.softmax_last(g.gelu(xv));
    auto loss = g.mean(y);
    g.backward(loss);
    const std::vector<float> first = g.grad(xv).data;
    g.zero_grad();
    g.backward(loss);
    CHECK(g.grad(xv).data == first);
}

TEST_CASE("optimizer steps and schedule") {
    CHECK(cosine_lr(0, 1e-2, 1000) == doctest::Approx(1e-2));
    CHECK(cosine_lr(500, 1e-2, 1000) == doctest::Approx(5e-3));
    CHECK(cosine_lr(1000, 1e-2, 1000) == doctest::Approx(0.0));
    CHECK(cosine_lr(5000, 1e-2, 1000) == doctest::Approx(0.0));
    CHECK_THROWS_AS(cosine_lr(0, -1.0, 1000), ConfigError);

    ParamSet p;
    p.add("w", Tensor(Shape{1}, {1.0f}));
    std::map<std::string, Tensor> grads;
    grads.emplace("w", Tensor(Shape{1}, {0.25f}));
    SgdMomentum opt(0.0, 0.0);
    opt.step(p, grads, 1.0);
    CHECK(p.at("w")(0) == doctest::Approx(0.75));

    CHECK_THROWS_AS(SgdMomentum(-0.1, 0.0), ConfigError);
    CHECK_THROWS_AS(opt.step(p, grads, -1.0), ConfigError);

    // momentum accumulates velocity
    SgdMomentum m(0.9, 0.0);
    ParamSet q;
    q.add("w", Tensor(Shape{1}, {0.0f}));
    std::map<std::string, Tensor> g1;
    g1.emplace("w", Tensor(Shape{1}, {1.0f}));
    m.step(q, g1, 0.1);
    CHECK(q.at("w")(0) == doctest::Approx(-0.1));
    m.step(q, g1, 0.1);
    CHECK(q.at("w")(0) == doctest::Approx(-0.1 - 0.1 * 1.9));
}

TEST_CASE("adamw first step moves parameter against gradient sign") {
    ParamSet p;
    p.add("w", Tensor(Shape{2}, {1.0f, -1.0f}));
    std::map<std::string, Tensor> grads;
    grads.emplace("w", Tensor(Shape{2}, {0.5f, -0.5f}));
    AdamW opt(0.9, 0.999, 0.0);
    opt.step(p, grads, 1e-2);
    CHECK(p.at("w")(0) < 1.0f);
    CHECK(p.at("w")(1) > -1.0f);
    // bias-corrected first step has magnitude ~lr
    CHECK(p.at("w")(0) == doctest::Approx(1.0 - 1e-2).epsilon(1e-3));
}
