#include "dcoral/coral.hpp"
#include "dcoral/error.hpp"
#include "dcoral/net.hpp"
#include "dcoral/random.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace dcoral;

namespace {

double ce_oracle(const Matrix& logits, const LabelBatch& y) {
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c));
        total += std::log(z) - logits(r, y[r]);
    }
    return total / static_cast<double>(logits.rows());
}

Layer affine(Matrix w, double mult = 1.0) {
    const std::size_t out = w.cols();
    return Layer{LayerKind::Affine, std::move(w), std::vector<double>(out, 0.0), mult};
}

Layer relu() { return Layer{LayerKind::Relu, {}, {}, 1.0}; }
Layer head() { return Layer{LayerKind::SoftmaxCrossEntropy, {}, {}, 1.0}; }

ErrorKind kind_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no Error thrown");
    return ErrorKind::ConfigError;
}

}  // namespace

TEST_CASE("init_network is deterministic and shaped") {
    const std::size_t small[] = {2, 31};
    const Network a = init_network(small, 0.005, 7);
    const Network b = init_network(small, 0.005, 7);
    CHECK(a == b);
    CHECK(parameter_hash(a) == parameter_hash(b));
    CHECK(a.layer(0).lr_multiplier == 10.0);
    CHECK(a.num_classes() == 31);

    const std::size_t dims[] = {4, 8, 3};
    const Network n = init_network(dims, 0.005, 1);
    CHECK(n.layer(0).weights.rows() == 4);
    CHECK(n.layer(0).weights.cols() == 8);
    CHECK(n.layer(2).weights.rows() == 8);
    CHECK(n.layer(2).weights.cols() == 3);
    CHECK(n.layer(0).lr_multiplier == 1.0);
    CHECK(n.layer(2).lr_multiplier == 10.0);
    CHECK(n.coral_taps() == std::vector<std::size_t>{2});
    CHECK(n.logits_layer() == 2);
    const double limit = std::sqrt(6.0 / 4.0);
    for (double w : n.layer(0).weights.data()) CHECK(std::abs(w) <= limit);
    for (double b : n.layer(0).bias) CHECK(b == 0.0);
}

TEST_CASE("head init spread follows head_init_std") {
    const std::size_t dims[] = {200, 100};
    const Network n = init_network(dims, 0.005, 3);
    double sq = 0.0;
    for (double w : n.layer(0).weights.data()) sq += w * w;
    const double sd = std::sqrt(sq / static_cast<double>(n.layer(0).weights.size()));
    CHECK(sd == doctest::Approx(0.005).epsilon(0.02));
}

TEST_CASE("bad architectures") {
    const std::size_t one[] = {3};
    CHECK(kind_of([&] { init_network(one, 0.005, 0); }) == ErrorKind::BadArchitecture);
    const std::size_t zero[] = {3, 0};
    CHECK(kind_of([&] { init_network(zero, 0.005, 0); }) == ErrorKind::BadArchitecture);
    const std::size_t ok[] = {3, 2};
    CHECK(kind_of([&] { init_network(ok, 0.0, 0); }) == ErrorKind::BadArchitecture);
    CHECK(kind_of([&] { Network({affine(Matrix(2, 3)), affine(Matrix(2, 2)), head()}, {}); }) ==
          ErrorKind::BadArchitecture);
    CHECK(kind_of([&] { Network({affine(Matrix(2, 3))}, {}); }) == ErrorKind::BadArchitecture);
    CHECK(kind_of([&] { Network({affine(Matrix(2, 2)), head()}, {1}); }) == ErrorKind::BadArchitecture);
}

TEST_CASE("forward: identity layer and relu") {
    const Network id({affine(Matrix::identity(3)), head()}, {});
    const Matrix x = Matrix::from_rows({{1, -2, 3}, {0.5, 0, -1}});
    CHECK(forward(id, x).logits == x);

    const Network r({affine(Matrix::identity(2)), relu(), affine(Matrix::identity(2)), head()}, {1});
    const ForwardPass p = forward(r, Matrix::from_rows({{-1, 2}}));
    REQUIRE(p.taps.count(1) == 1);
    CHECK(p.taps.at(1) == Matrix::from_rows({{0, 2}}));

    const std::size_t dims[] = {4, 6, 3};
    const Network n = init_network(dims, 0.1, 2, std::vector<std::size_t>{0});
    const ForwardPass q = forward(n, Matrix(5, 4, 1.0));
    CHECK(q.taps.size() == 1);
    CHECK(q.taps.at(0).rows() == 5);
    CHECK(q.taps.at(0).cols() == 6);
    CHECK(q.logits.rows() == 5);
    CHECK(kind_of([&] { forward(n, Matrix(5, 3)); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("class loss values") {
    const LabelBatch y({0, 3}, 4);
    const auto uniform = class_loss_and_grad(Matrix(2, 4, 0.7), y);
    CHECK(uniform.loss == doctest::Approx(std::log(4.0)).epsilon(1e-14));

    Matrix sat(2, 4);
    sat(0, 0) = 20.0;
    sat(1, 3) = 20.0;
    CHECK(class_loss_and_grad(sat, y).loss < 1e-6);

    CHECK(kind_of([] { LabelBatch({0, 4}, 4); }) == ErrorKind::BadLabel);
    CHECK(kind_of([&] { class_loss_and_grad(Matrix(3, 4), y); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("class loss gradient matches finite differences") {
    Rng rng(8);
    Matrix logits = oracle::random_matrix(rng, 8, 5, -3.0, 3.0);
    std::vector<std::size_t> labels(8);
    for (auto& l : labels) l = rng.below(5);
    const LabelBatch y(labels, 5);
    const ClassLoss cl = class_loss_and_grad(logits, y);
    CHECK(cl.loss == doctest::Approx(ce_oracle(logits, y)).epsilon(1e-13));
    const Matrix fd = oracle::numeric_gradient(logits, [&] { return ce_oracle(logits, y); }, 1e-6);
    for (std::size_t i = 0; i < fd.size(); ++i) CHECK(oracle::close(cl.grad_logits.data()[i], fd.data()[i], 1e-10, 1e-6));
}

TEST_CASE("property: softmax rows sum to one") {
    Rng rng(10);
    for (int inst = 0; inst < 20; ++inst) {
        const Matrix p = softmax(oracle::random_matrix(rng, 6, 1 + rng.below(9), -50.0, 50.0));
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double s = 0.0;
            for (double v : p.row(r)) s += v;
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }
    const Matrix big = softmax(Matrix::from_rows({{1000, 0}}));
    CHECK(big(0, 0) == 1.0);
}

TEST_CASE("backward: no tap gradients is plain classification backprop") {
    const std::size_t dims[] = {3, 5, 4};
    Network net = init_network(dims, 0.3, 21);
    Rng rng(22);
    const Matrix x = oracle::random_matrix(rng, 6, 3);
    const LabelBatch y({0, 1, 2, 3, 0, 1}, 4);
    const ForwardPass pass = forward(net, x);
    const ParamGrads g = backward(net, pass, class_loss_and_grad(pass.logits, y).grad_logits, {});

    for (std::size_t li : {std::size_t{0}, std::size_t{2}}) {
        Matrix& w = net.mutable_layer(li).weights;
        const Matrix fd = oracle::numeric_gradient(w, [&] {
            net.touch();
            return ce_oracle(forward(net, x).logits, y);
        }, 1e-6);
        for (std::size_t i = 0; i < fd.size(); ++i)
            CHECK(oracle::close(g.layers[li].weights.data()[i], fd.data()[i], 1e-9, 1e-5));
    }
}

TEST_CASE("backward: a lone tap gradient only reaches layers below the tap") {
    const std::size_t dims[] = {3, 5, 4};
    const Network net = init_network(dims, 0.3, 23, std::vector<std::size_t>{0});
    Rng rng(24);
    const Matrix x = oracle::random_matrix(rng, 4, 3);
    const ForwardPass pass = forward(net, x);
    const Matrix tap_grad = oracle::random_matrix(rng, 4, 5);
    const ParamGrads g = backward(net, pass, Matrix(4, 4), TapMap{{0, tap_grad}});
    for (double v : g.layers[2].weights.data()) CHECK(v == 0.0);
    for (double v : g.layers[2].bias) CHECK(v == 0.0);
    const Matrix expect = matmul_tn(x, tap_grad);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(g.layers[0].weights.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-14));
}

TEST_CASE("end-to-end gradient of class + lambda * coral") {
    for (double lambda : {0.0, 0.5, 10.0}) {
        CAPTURE(lambda);
        Rng rng(static_cast<std::uint64_t>(100 + lambda * 10));
        const std::size_t dims[] = {5, 6, 3};
        Network net = init_network(dims, 0.3, rng.next_u64(), std::vector<std::size_t>{1, 2});
        const Matrix xs = oracle::random_matrix(rng, 7, 5);
        const Matrix xt = oracle::random_matrix(rng, 6, 5);
        const LabelBatch ys({0, 1, 2, 0, 1, 2, 0}, 3);

        const auto scalar = [&] {
            net.touch();
            const ForwardPass s = forward(net, xs);
            const ForwardPass t = forward(net, xt);
            double v = ce_oracle(s.logits, ys);
            for (std::size_t tap : net.coral_taps()) v += lambda * oracle::coral_loss(s.taps.at(tap), t.taps.at(tap));
            return v;
        };

        const ForwardPass s = forward(net, xs);
        const ForwardPass t = forward(net, xt);
        TapMap src_grads, tgt_grads;
        for (std::size_t tap : net.coral_taps()) {
            CoralGrad cg = coral_grad(s.taps.at(tap), t.taps.at(tap));
            src_grads[tap] = cg.grad_source * lambda;
            tgt_grads[tap] = cg.grad_target * lambda;
        }
        ParamGrads g = backward(net, s, class_loss_and_grad(s.logits, ys).grad_logits, src_grads);
        g += backward(net, t, Matrix(6, 3), tgt_grads);

        for (std::size_t li : {std::size_t{0}, std::size_t{2}}) {
            Matrix& w = net.mutable_layer(li).weights;
            const Matrix fd = oracle::numeric_gradient(w, scalar, 1e-6);
            for (std::size_t i = 0; i < fd.size(); ++i)
                CHECK(oracle::close(g.layers[li].weights.data()[i], fd.data()[i], 1e-8, 1e-4));
        }
    }
}

TEST_CASE("stale forward is rejected") {
    const std::size_t dims[] = {2, 3};
    Network net = init_network(dims, 0.1, 1);
    const ForwardPass pass = forward(net, Matrix(2, 2, 1.0));
    net.mutable_layer(0).bias[0] = 1.0;
    CHECK(kind_of([&] { backward(net, pass, Matrix(2, 3), {}); }) == ErrorKind::StaleForward);
    CHECK(kind_of([&] { backward(net, ForwardPass{}, Matrix(2, 3), {}); }) == ErrorKind::StaleForward);
}

TEST_CASE("sgd step rules") {
    const Network start({affine(Matrix::from_rows({{1.0, -2.0}}), 1.0), head()}, {});
    ParamGrads g = zeros_like(start);
    g.layers[0].weights = Matrix::from_rows({{0.5, 0.25}});
    g.layers[0].bias = {1.0, -1.0};

    SUBCASE("plain sgd") {
        Network n = start;
        ParamGrads v = zeros_like(n);
        sgd_step(n, g, v, SgdParams{0.1, 0.0, 0.0});
        CHECK(n.layer(0).weights(0, 0) == doctest::Approx(1.0 - 0.05));
        CHECK(n.layer(0).weights(0, 1) == doctest::Approx(-2.0 - 0.025));
        CHECK(n.layer(0).bias[0] == doctest::Approx(-0.1));
    }
    SUBCASE("zero gradient is a fixed point") {
        Network n = start;
        ParamGrads v = zeros_like(n);
        sgd_step(n, zeros_like(n), v, SgdParams{0.1, 0.9, 0.0});
        CHECK(n == start);
    }
    SUBCASE("momentum unroll over two steps") {
        Network n = start;
        ParamGrads v = zeros_like(n);
        const SgdParams p{0.01, 0.9, 0.0};
        sgd_step(n, g, v, p);
        sgd_step(n, g, v, p);
        CHECK(n.layer(0).weights(0, 0) - 1.0 == doctest::Approx(-0.01 * 0.5 * 2.9).epsilon(1e-12));
        CHECK(n.layer(0).bias[1] == doctest::Approx(0.01 * 2.9).epsilon(1e-12));
    }
    SUBCASE("weight decay skips biases") {
        Network n = start;
        ParamGrads v = zeros_like(n);
        sgd_step(n, zeros_like(n), v, SgdParams{0.1, 0.0, 0.5});
        CHECK(n.layer(0).weights(0, 0) == doctest::Approx(1.0 - 0.05));
        CHECK(n.layer(0).bias[0] == 0.0);
    }
    SUBCASE("bad hyperparameters") {
        Network n = start;
        ParamGrads v = zeros_like(n);
        CHECK(kind_of([&] { sgd_step(n, g, v, SgdParams{0.0, 0.9, 0.0}); }) == ErrorKind::ConfigError);
        CHECK(kind_of([&] { sgd_step(n, g, v, SgdParams{0.1, 1.0, 0.0}); }) == ErrorKind::ConfigError);
        CHECK(kind_of([&] { sgd_step(n, g, v, SgdParams{0.1, 0.5, -1.0}); }) == ErrorKind::ConfigError);
    }
    SUBCASE("non-finite update leaves the network untouched") {
        Network n = start;
        ParamGrads v = zeros_like(n);
        ParamGrads huge = g;
        huge.layers[0].weights(0, 0) = 1e308;
        CHECK(kind_of([&] { sgd_step(n, huge, v, SgdParams{1e10, 0.0, 0.0}); }) == ErrorKind::NonFinite);
        CHECK(n == start);
    }
}

TEST_CASE("property: doubling lr_multiplier doubles the update") {
    Rng rng(31);
    const std::size_t dims[] = {3, 4, 2};
    const Network base = init_network(dims, 0.2, 31);
    Network doubled = base;
    doubled.mutable_layer(0).lr_multiplier = 2.0;
    const Matrix x = oracle::random_matrix(rng, 5, 3);
    const LabelBatch y({0, 1, 1, 0, 1}, 2);
    const ForwardPass pass = forward(base, x);
    const ParamGrads g = backward(base, pass, class_loss_and_grad(pass.logits, y).grad_logits, {});

    Network a = base, b = doubled;
    ParamGrads va = zeros_like(a), vb = zeros_like(b);
    sgd_step(a, g, va, SgdParams{0.05, 0.0, 5e-4});
    sgd_step(b, g, vb, SgdParams{0.05, 0.0, 5e-4});
    for (std::size_t i = 0; i < va.layers[0].weights.size(); ++i) {
        CHECK(vb.layers[0].weights.data()[i] == 2.0 * va.layers[0].weights.data()[i]);
        const double da = a.layer(0).weights.data()[i] - base.layer(0).weights.data()[i];
        const double db = b.layer(0).weights.data()[i] - base.layer(0).weights.data()[i];
        CHECK(db == doctest::Approx(2.0 * da).epsilon(1e-9));
    }
    CHECK(a.layer(2) == b.layer(2));
}

TEST_CASE("property: training steps are deterministic") {
    const auto run = [] {
        const std::size_t dims[] = {3, 4, 2};
        Network n = init_network(dims, 0.2, 5);
        ParamGrads v = zeros_like(n);
        Rng rng(6);
        const Matrix x = oracle::random_matrix(rng, 8, 3);
        const LabelBatch y({0, 1, 1, 0, 1, 0, 0, 1}, 2);
        for (int k = 0; k < 10; ++k) {
            const ForwardPass pass = forward(n, x);
            sgd_step(n, backward(n, pass, class_loss_and_grad(pass.logits, y).grad_logits, {}), v, SgdParams{});
        }
        return n;
    };
    CHECK(parameter_hash(run()) == parameter_hash(run()));
}

TEST_CASE("checkpoint round trip is bit exact") {
    const std::size_t dims[] = {4, 7, 5, 3};
    Network net = init_network(dims, 0.005, 99, std::vector<std::size_t>{1, 4});
    net.mutable_layer(2).bias[1] = -0.0;
    net.mutable_layer(0).bias[2] = 1.0 / 3.0;
    std::stringstream ss;
    save_checkpoint(ss, net, CheckpointMeta{0xfeedULL, 42});
    const Checkpoint back = load_checkpoint(ss);
    CHECK(back.network == net);
    CHECK(parameter_hash(back.network) == parameter_hash(net));
    CHECK(back.meta == CheckpointMeta{0xfeedULL, 42});
    CHECK(std::signbit(back.network.layer(2).bias[1]));

    std::stringstream junk("not a checkpoint");
    CHECK(kind_of([&] { load_checkpoint(junk); }) == ErrorKind::ParseError);
    std::string bytes;
    {
        std::stringstream again;
        save_checkpoint(again, net, {});
        bytes = again.str();
    }
    std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
    CHECK(kind_of([&] { load_checkpoint(truncated); }) == ErrorKind::ParseError);
}
