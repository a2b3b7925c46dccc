#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dcoral {

// Dense row-major matrix of doubles. Rows are examples, columns are feature
// dimensions. A default-constructed Matrix is empty (0x0) and only serves as
// a placeholder; every constructed Matrix has rows >= 1 and cols >= 1.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    // Row-list literal, mostly for tests: Matrix::from_rows({{1, 2}, {3, 4}}).
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool all_finite() const noexcept;
    Matrix transpose() const;
    Matrix gather_rows(std::span<const std::size_t> indices) const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s) noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b, without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);
// Strict parse of a whole token; returns false on trailing garbage.
bool parse_double(std::string_view text, double& out);

// One row per line, comma separated, no header.
void write_csv(std::ostream& os, const Matrix& m);
// Inverse of write_csv; skips '#' comment lines. Throws Error(ParseError) naming the 1-based line.
Matrix read_csv(std::istream& is);

}  // namespace dcoral
