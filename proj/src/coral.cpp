#include "dcoral/coral.hpp"

#include "dcoral/error.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace dcoral {

namespace {

constexpr double kSymmetryTolerance = 1e-10;

void require_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) throw Error(ErrorKind::NonFinite, std::string(what) + " has non-finite entries");
}

void require_pair(const Matrix& source, const Matrix& target) {
    if (source.empty() || target.empty()) {
        throw Error(ErrorKind::DegenerateBatch, "empty feature matrix");
    }
    if (source.cols() != target.cols()) {
        throw Error(ErrorKind::DimensionMismatch,
                    "source has " + std::to_string(source.cols()) + " features, target has " +
                        std::to_string(target.cols()));
    }
}

std::vector<double> column_means(const Matrix& d) {
    std::vector<long double> sums(d.cols(), 0.0L);
    for (std::size_t r = 0; r < d.rows(); ++r) {
        const auto row = d.row(r);
        for (std::size_t c = 0; c < d.cols(); ++c) sums[c] += row[c];
    }
    std::vector<double> means(d.cols());
    for (std::size_t c = 0; c < d.cols(); ++c) {
        means[c] = static_cast<double>(sums[c] / static_cast<long double>(d.rows()));
    }
    return means;
}

// (D - 1 mu^T) * delta * scale
Matrix centered_times(const Matrix& d, const Matrix& delta, double scale) {
    const auto means = column_means(d);
    Matrix centered = d;
    for (std::size_t r = 0; r < centered.rows(); ++r) {
        auto row = centered.row(r);
        for (std::size_t c = 0; c < centered.cols(); ++c) row[c] -= means[c];
    }
    Matrix out = matmul(centered, delta);
    out *= scale;
    return out;
}

}  // namespace

Covariance::Covariance(Matrix m) : matrix_(std::move(m)) {
    if (matrix_.rows() != matrix_.cols() || matrix_.empty()) {
        throw Error(ErrorKind::DimensionMismatch, "covariance must be square");
    }
    for (std::size_t i = 0; i < dim(); ++i) {
        for (std::size_t j = i + 1; j < dim(); ++j) {
            if (!(std::abs(matrix_(i, j) - matrix_(j, i)) <= kSymmetryTolerance)) {
                throw Error(ErrorKind::NonFinite, "covariance asymmetric beyond tolerance");
            }
        }
    }
}

Covariance covariance(const Matrix& d) {
    if (d.empty() || d.rows() < 2) {
        throw Error(ErrorKind::DegenerateBatch,
                    "covariance needs at least 2 rows, got " + std::to_string(d.rows()));
    }
    require_finite(d, "covariance input");

    const std::size_t n = d.rows();
    const std::size_t dim = d.cols();
    std::vector<long double> gram(dim * dim, 0.0L);
    std::vector<long double> colsum(dim, 0.0L);
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = d.row(r);
        for (std::size_t i = 0; i < dim; ++i) {
            const long double xi = row[i];
            colsum[i] += xi;
            for (std::size_t j = i; j < dim; ++j) gram[i * dim + j] += xi * row[j];
        }
    }

    const long double inv_n = 1.0L / static_cast<long double>(n);
    const long double inv_nm1 = 1.0L / static_cast<long double>(n - 1);
    Matrix c(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = i; j < dim; ++j) {
            const long double v = (gram[i * dim + j] - colsum[i] * colsum[j] * inv_n) * inv_nm1;
            c(i, j) = static_cast<double>(v);
        }
    }
    // Only the upper triangle was accumulated; the mirror is exact, and the
    // average with the transpose leaves the result unchanged.
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < i; ++j) c(i, j) = c(j, i);
    }
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = i + 1; j < dim; ++j) {
            const double avg = 0.5 * (c(i, j) + c(j, i));
            c(i, j) = avg;
            c(j, i) = avg;
        }
    }
    require_finite(c, "covariance result");
    return Covariance(std::move(c));
}

double frobenius_sq(const Matrix& m) {
    require_finite(m, "frobenius_sq input");
    long double acc = 0.0L;
    for (double v : m.data()) acc += static_cast<long double>(v) * v;
    return static_cast<double>(acc);
}

CoralEval coral_loss_and_grad(const Matrix& source, const Matrix& target) {
    require_pair(source, target);
    const Covariance cs = covariance(source);
    const Covariance ct = covariance(target);
    const Matrix delta = cs.matrix() - ct.matrix();

    const double d = static_cast<double>(source.cols());
    const double d2 = d * d;
    CoralEval out;
    out.loss = frobenius_sq(delta) / (4.0 * d2);
    out.grad.grad_source =
        centered_times(source, delta, 1.0 / (d2 * static_cast<double>(source.rows() - 1)));
    out.grad.grad_target =
        centered_times(target, delta, -1.0 / (d2 * static_cast<double>(target.rows() - 1)));
    if (!std::isfinite(out.loss) || !out.grad.grad_source.all_finite() ||
        !out.grad.grad_target.all_finite()) {
        throw Error(ErrorKind::NonFinite, "coral loss or gradient overflowed");
    }
    return out;
}

double coral_loss(const Matrix& source, const Matrix& target) {
    require_pair(source, target);
    const Matrix delta = covariance(source).matrix() - covariance(target).matrix();
    const double d = static_cast<double>(source.cols());
    const double loss = frobenius_sq(delta) / (4.0 * d * d);
    if (!std::isfinite(loss)) throw Error(ErrorKind::NonFinite, "coral loss overflowed");
    return loss;
}

CoralGrad coral_grad(const Matrix& source, const Matrix& target) {
    return coral_loss_and_grad(source, target).grad;
}

double coral_distance(const Matrix& source, const Matrix& target) {
    return coral_loss(source, target);
}

}  // namespace dcoral
