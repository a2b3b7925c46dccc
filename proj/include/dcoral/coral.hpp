#pragma once

#include "dcoral/matrix.hpp"

#include <cstddef>

namespace dcoral {

// Symmetric d x d feature covariance of a batch.
class Covariance {
public:
    explicit Covariance(Matrix m);

    std::size_t dim() const noexcept { return matrix_.rows(); }
    const Matrix& matrix() const noexcept { return matrix_; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return matrix_(i, j); }

private:
    Matrix matrix_;
};

struct CoralGrad {
    Matrix grad_source;  // n_S x d
    Matrix grad_target;  // n_T x d
};

// Unbiased batch covariance, evaluated with the one-pass form
//   C = (D^T D - (1^T D)^T (1^T D) / n) / (n - 1)
// accumulated in long double and symmetrized afterwards.
// Throws DegenerateBatch for n < 2 and NonFinite for non-finite input.
Covariance covariance(const Matrix& d);

double frobenius_sq(const Matrix& m);

// (1 / 4d^2) * ||C_S - C_T||_F^2
double coral_loss(const Matrix& source, const Matrix& target);

// Analytic gradients of coral_loss with respect to every entry of the source
// and target feature matrices:
//   dL/dD_S =  (D_S - 1 mu_S^T) (C_S - C_T) / (d^2 (n_S - 1))
//   dL/dD_T = -(D_T - 1 mu_T^T) (C_S - C_T) / (d^2 (n_T - 1))
CoralGrad coral_grad(const Matrix& source, const Matrix& target);

// Loss value and gradients from a single pair of covariance evaluations.
struct CoralEval {
    double loss = 0.0;
    CoralGrad grad;
};
CoralEval coral_loss_and_grad(const Matrix& source, const Matrix& target);

// Read-only monitor of the domain discrepancy. Same value as coral_loss.
double coral_distance(const Matrix& source, const Matrix& target);

}  // namespace dcoral
