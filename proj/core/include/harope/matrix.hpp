#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "harope/errors.hpp"

namespace harope {

// Dense row-major matrix of doubles. Small sizes only (dim <= 256); all the
// kernels below are written for that regime, not for BLAS-scale inputs.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix column(std::span<const double> v);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    std::span<const double> values() const { return data_; }
    std::span<double> values() { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    bool operator==(const Matrix& o) const = default;

  private:
    std::size_t rows_{0};
    std::size_t cols_{0};
    std::vector<double> data_;
};

// Strict upper triangle of a skew-symmetric generator, packed row-major.
struct SkewParams {
    std::size_t dim{0};
    std::vector<double> entries;  // length dim*(dim-1)/2

    static SkewParams zeros(std::size_t dim);
    bool operator==(const SkewParams&) const = default;
};

inline std::size_t skew_param_count(std::size_t dim) { return dim * (dim - 1) / 2; }

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void add_in_place(Matrix& a, const Matrix& b);
void add_scaled_in_place(Matrix& a, const Matrix& b, double s);  // a += s*b

Matrix skew_to_matrix(const SkewParams& p);

// Matrix exponential by scaling-and-squaring over an order-18 Taylor sum;
// the scale s is chosen so that the 1-norm of m/2^s is at most 0.5.
Matrix expm(const Matrix& m);

double softplus(double x);          // log(1 + e^x), overflow/underflow safe
double softplus_inverse(double y);  // log(e^y - 1) for y > 0
double sigmoid(double x);

double orthogonality_defect(const Matrix& u);  // ||U^T U - I||_F
double frobenius_norm(const Matrix& m);
double frobenius_distance(const Matrix& a, const Matrix& b);
double one_norm(const Matrix& m);  // max column abs sum
double determinant(const Matrix& m);  // LU with partial pivoting

// 17-significant-digit decimal, round-trip exact for doubles
std::string format_double(double v);

// CSV: one row per line, values separated by commas
std::string matrix_to_csv(const Matrix& m);
Matrix matrix_from_csv(const std::string& text);

}  // namespace harope
