// Finite-difference verification of every differentiable op and of the full
// encoder + BYOL pipeline on a shrunken config. All checks run in 64-bit.
#include <doctest.h>

#include "oracles.hpp"
#include "relsar/byol.hpp"
#include "relsar/model.hpp"
#include "relsar/supervised.hpp"

using namespace relsar;

namespace {

Tensor64 random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor64 t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

// Scalarize an op output through a fixed random projection so every output
// element contributes to the loss.
template <typename BuildOp>
void check_unary_op(const BuildOp& op, const Tensor64& x, double tol, Rng& rng, double h = 1e-5) {
    Tensor64 proj;
    {
        Graph64 g;
        auto y = op(g, g.constant(x));
        proj = random_tensor(g.value(y).shape, rng);
    }
    auto f = [&](const Tensor64& xt) {
        Graph64 g;
        auto y = op(g, g.constant(xt));
        auto loss = g.sum(g.mul(y, g.constant(proj)));
        return g.value(loss)(0);
    };
    Graph64 g;
    auto xv = g.leaf(x);
    auto y = op(g, xv);
    auto loss = g.sum(g.mul(y, g.constant(proj)));
    g.backward(loss);
    auto r = oracles::check_gradient(f, x, g.grad(xv), h);
    INFO("worst: ", r.worst);
    CHECK(r.max_rel_err < tol);
}

} // namespace

TEST_CASE("matmul gradient matches central differences (rel < 1e-6)") {
    Rng rng(101);
    Tensor64 a = random_tensor({4, 5}, rng);
    Tensor64 b = random_tensor({5, 2}, rng);
    Tensor64 proj = random_tensor({4, 2}, rng);

    auto loss_of = [&](const Tensor64& av, const Tensor64& bv) {
        Graph64 g;
        auto y = g.matmul(g.constant(av), g.constant(bv));
        return g.value(g.sum(g.mul(y, g.constant(proj))))(0);
    };
    Graph64 g;
    auto av = g.leaf(a);
    auto bv = g.leaf(b);
    auto loss = g.sum(g.mul(g.matmul(av, bv), g.constant(proj)));
    g.backward(loss);

    auto ra = oracles::check_gradient([&](const Tensor64& t) { return loss_of(t, b); }, a, g.grad(av));
    auto rb = oracles::check_gradient([&](const Tensor64& t) { return loss_of(a, t); }, b, g.grad(bv));
    CHECK(ra.max_rel_err < 1e-6);
    CHECK(rb.max_rel_err < 1e-6);
}

TEST_CASE("gelu gradient at several points (rel < 1e-5)") {
    Rng rng(7);
    Tensor64 x(Shape{7}, {-2.5, -1.0, -0.1, 0.3, 0.9, 1.7, 3.2});
    check_unary_op([](Graph64& g, Graph64::Var v) { return g.gelu(v); }, x, 1e-5, rng);
}

TEST_CASE("selu gradient away from the kink") {
    Rng rng(8);
    Tensor64 x(Shape{6}, {-2.0, -0.7, -0.2, 0.4, 1.3, 2.2});
    check_unary_op([](Graph64& g, Graph64::Var v) { return g.selu(v); }, x, 1e-6, rng);
}

TEST_CASE("softmax and log_softmax gradients") {
    Rng rng(9);
    Tensor64 x = random_tensor({3, 6}, rng, 1.5);
    check_unary_op([](Graph64& g, Graph64::Var v) { return g.softmax_last(v); }, x, 1e-6, rng);
    check_unary_op([](Graph64& g, Graph64::Var v) { return g.log_softmax_last(v); }, x, 1e-6, rng);
}

TEST_CASE("l2_normalize gradient") {
    Rng rng(10);
    Tensor64 x = random_tensor({4, 5}, rng);
    check_unary_op([](Graph64& g, Graph64::Var v) { return g.l2_normalize_last(v); }, x, 1e-6, rng);
}

TEST_CASE("conv1d gradients for input, weights, bias (rel < 1e-4)") {
    Rng rng(11);
    Tensor64 x = random_tensor({2, 7, 3}, rng);
    Tensor64 w = random_tensor({3, 3, 4}, rng, 0.5);
    Tensor64 b = random_tensor({4}, rng, 0.2);
    Tensor64 proj = random_tensor({2, 7, 4}, rng);

    auto loss_of = [&](const Tensor64& xv, const Tensor64& wv, const Tensor64& bv) {
        Graph64 g;
        auto y = g.conv1d(g.constant(xv), g.constant(wv), g.constant(bv));
        return g.value(g.sum(g.mul(y, g.constant(proj))))(0);
    };
    Graph64 g;
    auto xv = g.leaf(x);
    auto wv = g.leaf(w);
    auto bv = g.leaf(b);
    auto loss = g.sum(g.mul(g.conv1d(xv, wv, bv), g.constant(proj)));
    g.backward(loss);
    CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(t, w, b); }, x, g.grad(xv)).max_rel_err <
          1e-4);
    CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(x, t, b); }, w, g.grad(wv)).max_rel_err <
          1e-4);
    CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(x, w, t); }, b, g.grad(bv)).max_rel_err <
          1e-4);
}

TEST_CASE("maxpool gradient routes to the argmax") {
    Rng rng(12);
    Tensor64 x = random_tensor({2, 8, 3}, rng);
    check_unary_op([](Graph64& g, Graph64::Var v) { return g.maxpool1d(v); }, x, 1e-6, rng);
}

TEST_CASE("batchnorm gradients in training and eval mode") {
    Rng rng(13);
    Tensor64 x = random_tensor({5, 4}, rng);
    Tensor64 gamma = random_tensor({4}, rng, 0.5);
    Tensor64 beta = random_tensor({4}, rng, 0.5);
    Tensor64 proj = random_tensor({5, 4}, rng);
    for (bool training : {true, false}) {
        CAPTURE(training);
        BnStatsT<double> stats;
        stats.running_mean = random_tensor({4}, rng, 0.3);
        stats.running_var = Tensor64(Shape{4}, 1.0);
        for (auto& v : stats.running_var.data) v = 0.5 + rng.uniform();
        auto loss_of = [&](const Tensor64& xv, const Tensor64& gv, const Tensor64& bv) {
            Graph64 g;
            BnStatsT<double> local = stats;
            auto y = g.batchnorm(g.constant(xv), g.constant(gv), g.constant(bv), &local, training, false);
            return g.value(g.sum(g.mul(y, g.constant(proj))))(0);
        };
        Graph64 g;
        BnStatsT<double> local = stats;
        auto xv = g.leaf(x);
        auto gv = g.leaf(gamma);
        auto bv = g.leaf(beta);
        auto loss = g.sum(g.mul(g.batchnorm(xv, gv, bv, &local, training, false), g.constant(proj)));
        g.backward(loss);
        CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(t, gamma, beta); }, x, g.grad(xv))
                  .max_rel_err < 1e-6);
        CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(x, t, beta); }, gamma, g.grad(gv))
                  .max_rel_err < 1e-6);
        CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(x, gamma, t); }, beta, g.grad(bv))
                  .max_rel_err < 1e-6);
    }
}

TEST_CASE("layernorm gradients") {
    Rng rng(14);
    Tensor64 x = random_tensor({3, 6}, rng);
    Tensor64 gamma = random_tensor({6}, rng, 0.5);
    Tensor64 beta = random_tensor({6}, rng, 0.5);
    Tensor64 proj = random_tensor({3, 6}, rng);
    auto loss_of = [&](const Tensor64& xv, const Tensor64& gv, const Tensor64& bv) {
        Graph64 g;
        auto y = g.layernorm(g.constant(xv), g.constant(gv), g.constant(bv));
        return g.value(g.sum(g.mul(y, g.constant(proj))))(0);
    };
    Graph64 g;
    auto xv = g.leaf(x);
    auto gv = g.leaf(gamma);
    auto bv = g.leaf(beta);
    auto loss = g.sum(g.mul(g.layernorm(xv, gv, bv), g.constant(proj)));
    g.backward(loss);
    CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(t, gamma, beta); }, x, g.grad(xv))
              .max_rel_err < 1e-6);
    CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(x, t, beta); }, gamma, g.grad(gv))
              .max_rel_err < 1e-6);
    CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(x, gamma, t); }, beta, g.grad(bv))
              .max_rel_err < 1e-6);
}

TEST_CASE("bmm and permute gradients") {
    Rng rng(15);
    Tensor64 a = random_tensor({3, 2, 4}, rng);
    Tensor64 b = random_tensor({3, 4, 2}, rng);
    Tensor64 proj = random_tensor({3, 2, 2}, rng);
    auto loss_of = [&](const Tensor64& av, const Tensor64& bv) {
        Graph64 g;
        auto y = g.bmm(g.constant(av), g.permute(g.permute(g.constant(bv), {2, 0, 1}), {1, 2, 0}));
        return g.value(g.sum(g.mul(y, g.constant(proj))))(0);
    };
    Graph64 g;
    auto av = g.leaf(a);
    auto bv = g.leaf(b);
    auto loss = g.sum(g.mul(g.bmm(av, g.permute(g.permute(bv, {2, 0, 1}), {1, 2, 0})), g.constant(proj)));
    g.backward(loss);
    CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(t, b); }, a, g.grad(av)).max_rel_err <
          1e-6);
    CHECK(oracles::check_gradient([&](const Tensor64& t) { return loss_of(a, t); }, b, g.grad(bv)).max_rel_err <
          1e-6);
}

namespace {

struct ShrunkenSetup {
    EncoderConfig enc;
    HeadConfig heads;
    ParamSetT<double> online_enc, online_proj, online_pred, target_enc, target_proj;
    Tensor64 x_i, x_j;
};

ShrunkenSetup make_shrunken(uint64_t seed) {
    ShrunkenSetup s;
    s.enc.conv_filters = 8;
    s.enc.kernel_size = 3;
    s.enc.layers = 1;
    s.enc.heads = 2;
    s.enc.d_model = 8;
    s.enc.dropout_rate = 0.0f;
    s.enc.seq_len = 8;
    s.enc.joints = 4;
    s.heads.proj_hidden = 16;
    s.heads.proj_dim = 8;
    Rng rng(seed);
    s.online_enc = init_encoder_params(s.enc, rng).cast<double>();
    s.online_proj = init_projector_params(s.enc.d_model, s.heads, rng).cast<double>();
    s.online_pred = init_predictor_params(s.heads, rng).cast<double>();
    // target weights deliberately differ from the online ones
    s.target_enc = init_encoder_params(s.enc, rng).cast<double>();
    s.target_proj = init_projector_params(s.enc.d_model, s.heads, rng).cast<double>();
    s.x_i = Tensor64(Shape{2, s.enc.seq_len, s.enc.in_channels()});
    s.x_j = Tensor64(Shape{2, s.enc.seq_len, s.enc.in_channels()});
    for (auto& v : s.x_i.data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : s.x_j.data) v = rng.uniform(-1.0, 1.0);
    return s;
}

double byol_loss_value(const ShrunkenSetup& s, const ParamSetT<double>& enc, const ParamSetT<double>& proj,
                       const ParamSetT<double>& pred) {
    GraphT<double> g;
    ParamSetT<double> e = enc, p = proj, q = pred, te = s.target_enc, tp = s.target_proj;
    ByolGraphParams<double> bp;
    bp.online_encoder = bind(g, e);
    bp.online_projector = bind(g, p);
    bp.online_predictor = bind(g, q);
    bp.target_encoder = bind(g, te);
    bp.target_projector = bind(g, tp);
    auto loss = symmetric_byol_loss(g, bp, s.enc, s.heads.activation, g.constant(s.x_i), g.constant(s.x_j));
    return g.value(loss)(0);
}

} // namespace

TEST_CASE("end-to-end: encoder + BYOL loss gradient on a 2-sample batch (rel < 1e-3)") {
    ShrunkenSetup s = make_shrunken(2024);

    GraphT<double> g;
    ParamSetT<double> e = s.online_enc, p = s.online_proj, q = s.online_pred, te = s.target_enc,
                      tp = s.target_proj;
    ByolGraphParams<double> bp;
    bp.online_encoder = bind(g, e);
    bp.online_projector = bind(g, p);
    bp.online_predictor = bind(g, q);
    bp.target_encoder = bind(g, te);
    bp.target_projector = bind(g, tp);
    auto loss = symmetric_byol_loss(g, bp, s.enc, s.heads.activation, g.constant(s.x_i), g.constant(s.x_j));
    g.backward(loss);

    auto check_set = [&](const ParamSetT<double>& set, const BoundParamsT<double>& bound,
                         const std::function<double(const ParamSetT<double>&)>& loss_fn) {
        auto r = oracles::check_param_gradients(
            loss_fn, set, [&](const std::string& n) -> const Tensor64& { return g.grad(bound[n]); });
        INFO("worst: ", r.worst, " over ", r.checked, " params");
        CHECK(r.max_rel_err < 1e-3);
    };
    check_set(s.online_enc, bp.online_encoder,
              [&](const ParamSetT<double>& v) { return byol_loss_value(s, v, s.online_proj, s.online_pred); });
    check_set(s.online_proj, bp.online_projector,
              [&](const ParamSetT<double>& v) { return byol_loss_value(s, s.online_enc, v, s.online_pred); });
    check_set(s.online_pred, bp.online_predictor,
              [&](const ParamSetT<double>& v) { return byol_loss_value(s, s.online_enc, s.online_proj, v); });
}

TEST_CASE("end-to-end: target network receives exactly zero gradient") {
    ShrunkenSetup s = make_shrunken(2025);
    GraphT<double> g;
    ParamSetT<double> e = s.online_enc, p = s.online_proj, q = s.online_pred, te = s.target_enc,
                      tp = s.target_proj;
    ByolGraphParams<double> bp;
    bp.online_encoder = bind(g, e);
    bp.online_projector = bind(g, p);
    bp.online_predictor = bind(g, q);
    bp.target_encoder = bind(g, te);
    bp.target_projector = bind(g, tp);
    auto loss = symmetric_byol_loss(g, bp, s.enc, s.heads.activation, g.constant(s.x_i), g.constant(s.x_j));
    g.backward(loss);
    for (const auto& name : s.target_enc.order)
        for (int64_t i = 0; i < g.grad(bp.target_encoder[name]).numel(); ++i)
            REQUIRE(g.grad(bp.target_encoder[name])(i) == 0.0);
    for (const auto& name : s.target_proj.order)
        for (int64_t i = 0; i < g.grad(bp.target_projector[name]).numel(); ++i)
            REQUIRE(g.grad(bp.target_projector[name])(i) == 0.0);
}

TEST_CASE("end-to-end: encoder + classifier cross-entropy gradient (rel < 1e-3)") {
    ShrunkenSetup s = make_shrunken(77);
    const int num_classes = 3;
    Rng rng(78);
    ParamSetT<double> cls = init_classifier_params(s.enc.d_model, num_classes, rng).cast<double>();
    const std::vector<int> labels = {1, 2};

    auto loss_at = [&](const ParamSetT<double>& enc, const ParamSetT<double>& c,
                       GraphT<double>* keep = nullptr, BoundParamsT<double>* be_out = nullptr,
                       BoundParamsT<double>* bc_out = nullptr) {
        GraphT<double> local;
        GraphT<double>& g = keep ? *keep : local;
        ParamSetT<double> e = enc, cc = c;
        auto be = bind(g, e);
        auto bc = bind(g, cc);
        EncodeOptions opt;
        opt.mode = ForwardMode::Train;
        auto y = encode(g, be, s.enc, g.constant(s.x_i), opt);
        auto logits = g.add_suffix(g.matmul(y, bc["fc.w"]), bc["fc.b"]);
        auto ls = g.log_softmax_last(logits);
        Tensor64 targets(Shape{2, num_classes});
        for (int64_t b = 0; b < 2; ++b) {
            auto row = smoothed_targets(labels[static_cast<size_t>(b)], num_classes, 0.1);
            for (int c2 = 0; c2 < num_classes; ++c2) targets(b, c2) = row[static_cast<size_t>(c2)];
        }
        auto loss = g.scale(g.mean(g.sum_last(g.mul(ls, g.constant(targets)))), -1.0);
        if (keep) {
            g.backward(loss);
            *be_out = be;
            *bc_out = bc;
        }
        return g.value(loss)(0);
    };

    GraphT<double> g;
    BoundParamsT<double> be, bc;
    loss_at(s.online_enc, cls, &g, &be, &bc);

    auto re = oracles::check_param_gradients(
        [&](const ParamSetT<double>& v) { return loss_at(v, cls); }, s.online_enc,
        [&](const std::string& n) -> const Tensor64& { return g.grad(be[n]); });
    INFO("worst: ", re.worst);
    CHECK(re.max_rel_err < 1e-3);
    auto rc = oracles::check_param_gradients(
        [&](const ParamSetT<double>& v) { return loss_at(s.online_enc, v); }, cls,
        [&](const std::string& n) -> const Tensor64& { return g.grad(bc[n]); });
    CHECK(rc.max_rel_err < 1e-3);
}
