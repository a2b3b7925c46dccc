#include "dcoral/coral.hpp"
#include "dcoral/error.hpp"
#include "dcoral/random.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace dcoral;

namespace {

void check_against_two_pass(const Matrix& d, double tol) {
    const Covariance c = covariance(d);
    const auto ref = oracle::two_pass_covariance(d);
    for (std::size_t i = 0; i < c.dim(); ++i)
        for (std::size_t j = 0; j < c.dim(); ++j) CHECK(std::abs(c(i, j) - ref[i][j]) <= tol);
}

}  // namespace

TEST_CASE("covariance of constant rows is zero") {
    for (double c : {0.0, -3.5, 1e6}) {
        const Matrix d(5, 3, c);
        const Covariance cov = covariance(d);
        for (double v : cov.matrix().data()) CHECK(v == 0.0);
    }
}

TEST_CASE("covariance small cases") {
    const Covariance a = covariance(Matrix::from_rows({{1, 0}, {-1, 0}}));
    CHECK(a.matrix() == Matrix::from_rows({{2, 0}, {0, 0}}));
    const Covariance b = covariance(Matrix::from_rows({{1}, {2}, {3}}));
    CHECK(b(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("covariance errors") {
    CHECK_THROWS_AS(covariance(Matrix(1, 3)), Error);
    try {
        covariance(Matrix(1, 3));
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateBatch);
    }
    Matrix bad(3, 2);
    bad(1, 1) = std::numeric_limits<double>::infinity();
    try {
        covariance(bad);
        FAIL("expected NonFinite");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NonFinite);
    }
}

TEST_CASE("covariance matches the two-pass oracle on random matrices") {
    Rng rng(11);
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n = 2 + rng.below(30);
        const std::size_t d = 1 + rng.below(10);
        check_against_two_pass(oracle::random_matrix(rng, n, d, -5.0, 5.0), 1e-10);
    }
}

TEST_CASE("covariance is symmetric and translation invariant") {
    Rng rng(12);
    for (int inst = 0; inst < 20; ++inst) {
        Matrix d = oracle::random_matrix(rng, 12, 6);
        const Covariance c = covariance(d);
        CHECK(c.matrix() == c.matrix().transpose());

        std::vector<double> shift(6);
        for (double& s : shift) s = rng.uniform(-10.0, 10.0);
        Matrix moved = d;
        for (std::size_t r = 0; r < moved.rows(); ++r)
            for (std::size_t k = 0; k < 6; ++k) moved(r, k) += shift[k];
        const Covariance cm = covariance(moved);
        for (std::size_t i = 0; i < c.matrix().size(); ++i)
            CHECK(std::abs(cm.matrix().data()[i] - c.matrix().data()[i]) < 1e-9);

        const Matrix t = oracle::random_matrix(rng, 9, 6);
        CHECK(std::abs(coral_loss(moved, t) - coral_loss(d, t)) < 1e-9);
    }
}

TEST_CASE("Covariance rejects asymmetric input") {
    CHECK_THROWS_AS(Covariance(Matrix::from_rows({{1, 2}, {0, 1}})), Error);
    CHECK_THROWS_AS(Covariance(Matrix(2, 3)), Error);
}

TEST_CASE("frobenius_sq") {
    CHECK(frobenius_sq(Matrix(3, 3)) == 0.0);
    CHECK(frobenius_sq(Matrix::from_rows({{1, 2}, {3, 4}})) == 30.0);
    CHECK(frobenius_sq(Matrix::identity(7)) == 7.0);
    Matrix m(2, 2);
    m(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(frobenius_sq(m), Error);
}

TEST_CASE("coral loss values") {
    const Matrix s = Matrix::from_rows({{1}, {-1}});
    const Matrix t = Matrix::from_rows({{0}, {0}});
    CHECK(coral_loss(s, t) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(coral_distance(s, t) == coral_loss(s, t));
    CHECK(coral_loss(s, s) == 0.0);
    CHECK(coral_distance(t, t) == 0.0);

    Rng rng(3);
    const Matrix a = oracle::random_matrix(rng, 7, 4);
    const Matrix b = oracle::random_matrix(rng, 5, 4);
    CHECK(coral_loss(a, b) == coral_loss(b, a));
    CHECK(coral_loss(a, b) == doctest::Approx(oracle::coral_loss(a, b)).epsilon(1e-12));
    CHECK(coral_distance(a, b) == coral_loss(a, b));
}

TEST_CASE("coral loss dimension mismatch") {
    try {
        coral_loss(Matrix(3, 2), Matrix(3, 3));
        FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DimensionMismatch);
    }
    CHECK_THROWS_AS(coral_grad(Matrix(1, 2), Matrix(3, 2)), Error);
}

TEST_CASE("coral gradient small case") {
    const Matrix s = Matrix::from_rows({{1}, {-1}});
    const Matrix t = Matrix::from_rows({{0}, {0}});
    const CoralGrad g = coral_grad(s, t);
    CHECK(g.grad_source(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(g.grad_source(1, 0) == doctest::Approx(-2.0).epsilon(1e-15));
    CHECK(g.grad_target == Matrix(2, 1));

    Matrix sm = s;
    const Matrix fd = oracle::numeric_gradient(sm, [&] { return oracle::coral_loss(sm, t); }, 1e-5);
    CHECK(fd(0, 0) == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(fd(1, 0) == doctest::Approx(-2.0).epsilon(1e-8));
}

TEST_CASE("coral gradient is zero for identical inputs") {
    Rng rng(4);
    const Matrix a = oracle::random_matrix(rng, 6, 3);
    const CoralGrad g = coral_grad(a, a);
    for (double v : g.grad_source.data()) CHECK(v == 0.0);
    for (double v : g.grad_target.data()) CHECK(v == 0.0);
}

TEST_CASE("coral gradient 4x3 vs 5x3 against finite differences") {
    Rng rng(5);
    Matrix s = oracle::random_matrix(rng, 4, 3);
    Matrix t = oracle::random_matrix(rng, 5, 3);
    const CoralGrad g = coral_grad(s, t);
    const auto f = [&] { return oracle::coral_loss(s, t); };
    const Matrix fs = oracle::numeric_gradient(s, f, 1e-5);
    const Matrix ft = oracle::numeric_gradient(t, f, 1e-5);
    CHECK(g.grad_source.rows() == 4);
    CHECK(g.grad_target.rows() == 5);
    for (std::size_t i = 0; i < fs.size(); ++i) CHECK(oracle::close(g.grad_source.data()[i], fs.data()[i], 1e-9, 1e-5));
    for (std::size_t i = 0; i < ft.size(); ++i) CHECK(oracle::close(g.grad_target.data()[i], ft.data()[i], 1e-9, 1e-5));
}

TEST_CASE("property: 50 random pairs, gradients match finite differences") {
    Rng rng(2024);
    std::size_t compared = 0;
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t d = 1 + rng.below(8);
        Matrix s = oracle::random_matrix(rng, 2 + rng.below(15), d);
        Matrix t = oracle::random_matrix(rng, 2 + rng.below(15), d);
        const CoralEval e = coral_loss_and_grad(s, t);
        CHECK(e.loss >= 0.0);
        CHECK(e.loss == coral_loss(s, t));
        const auto f = [&] { return oracle::coral_loss(s, t); };
        const Matrix fs = oracle::numeric_gradient(s, f, 1e-5);
        const Matrix ft = oracle::numeric_gradient(t, f, 1e-5);
        for (std::size_t i = 0; i < fs.size(); ++i, ++compared)
            CHECK(oracle::close(e.grad.grad_source.data()[i], fs.data()[i], 1e-7, 1e-5));
        for (std::size_t i = 0; i < ft.size(); ++i, ++compared)
            CHECK(oracle::close(e.grad.grad_target.data()[i], ft.data()[i], 1e-7, 1e-5));
    }
    CHECK(compared > 500);
}

TEST_CASE("property: value symmetry and gradient role swap") {
    Rng rng(77);
    for (int inst = 0; inst < 30; ++inst) {
        const std::size_t n = 2 + rng.below(10), d = 1 + rng.below(6);
        const Matrix a = oracle::random_matrix(rng, n, d);
        const Matrix b = oracle::random_matrix(rng, n, d);
        CHECK(coral_loss(a, b) == coral_loss(b, a));
        const CoralGrad ab = coral_grad(a, b);
        const CoralGrad ba = coral_grad(b, a);
        // Swapping roles negates C_S - C_T and the target gradient's sign at
        // once, so A's gradient is unchanged.
        for (std::size_t i = 0; i < ab.grad_source.size(); ++i) {
            CHECK(ab.grad_source.data()[i] == doctest::Approx(ba.grad_target.data()[i]).epsilon(1e-12));
            CHECK(ab.grad_target.data()[i] == doctest::Approx(ba.grad_source.data()[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("property: loss is zero exactly when covariances agree") {
    Rng rng(78);
    const Matrix a = oracle::random_matrix(rng, 8, 3);
    Matrix shifted = a;
    for (double& v : shifted.data()) v += 0.25;
    CHECK(coral_loss(a, shifted) < 1e-12);
    Matrix flipped = a * -1.0;
    CHECK(coral_loss(a, flipped) < 1e-12);
    Matrix scaled = a * 1.5;
    CHECK(coral_loss(a, scaled) > 1e-6);
}
