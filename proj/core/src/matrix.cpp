#include "harope/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace harope {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged initializer rows");
        std::size_t j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::column(std::span<const double> v) {
    Matrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

SkewParams SkewParams::zeros(std::size_t dim) {
    return SkewParams{dim, std::vector<double>(skew_param_count(dim), 0.0)};
}

namespace {

void check_mul(std::size_t ac, std::size_t br, const char* what) {
    if (ac != br) {
        throw ShapeError(std::string(what) + ": inner dimensions " + std::to_string(ac) +
                         " vs " + std::to_string(br));
    }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_mul(a.cols(), b.rows(), "matmul");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b.row(l);
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_mul(a.cols(), b.cols(), "matmul_nt");
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = b.row(j);
            // independent accumulators so the reduction vectorizes
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0;
            std::size_t l = 0;
            for (; l + 8 <= k; l += 8) {
                s0 += arow[l] * brow[l];
                s1 += arow[l + 1] * brow[l + 1];
                s2 += arow[l + 2] * brow[l + 2];
                s3 += arow[l + 3] * brow[l + 3];
                s4 += arow[l + 4] * brow[l + 4];
                s5 += arow[l + 5] * brow[l + 5];
                s6 += arow[l + 6] * brow[l + 6];
                s7 += arow[l + 7] * brow[l + 7];
            }
            double s = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
            for (; l < k; ++l) s += arow[l] * brow[l];
            crow[j] = s;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_mul(a.rows(), b.rows(), "matmul_tn");
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
    Matrix c(n, m);
    for (std::size_t l = 0; l < k; ++l) {
        const double* arow = a.row(l);
        const double* brow = b.row(l);
        for (std::size_t i = 0; i < n; ++i) {
            const double av = arow[i];
            double* crow = c.row(i);
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    Matrix c = a;
    add_in_place(c, b);
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("sub: shape mismatch");
    Matrix c = a;
    double* p = c.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < c.size(); ++i) p[i] -= q[i];
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (double& v : c.values()) v *= s;
    return c;
}

void add_in_place(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("add_in_place: shape mismatch");
    double* p = a.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) p[i] += q[i];
}

void add_scaled_in_place(Matrix& a, const Matrix& b, double s) {
    if (!a.same_shape(b)) throw ShapeError("add_scaled_in_place: shape mismatch");
    double* p = a.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) p[i] += s * q[i];
}

Matrix skew_to_matrix(const SkewParams& p) {
    if (p.entries.size() != skew_param_count(p.dim)) {
        throw ShapeError("skew params: expected " + std::to_string(skew_param_count(p.dim)) +
                         " entries, got " + std::to_string(p.entries.size()));
    }
    Matrix s(p.dim, p.dim);
    std::size_t t = 0;
    for (std::size_t i = 0; i < p.dim; ++i) {
        for (std::size_t j = i + 1; j < p.dim; ++j, ++t) {
            s(i, j) = p.entries[t];
            s(j, i) = -p.entries[t];
        }
    }
    return s;
}

Matrix expm(const Matrix& m) {
    if (m.rows() != m.cols()) throw ShapeError("expm: matrix must be square");
    const std::size_t n = m.rows();

    int s = 0;
    double norm = one_norm(m);
    while (norm > 0.5 && s < 60) {
        norm *= 0.5;
        ++s;
    }
    const Matrix x = scale(m, std::ldexp(1.0, -s));

    // Taylor sum of order 18: I + x + x^2/2! + ... + x^18/18!
    Matrix result = Matrix::identity(n);
    Matrix term = Matrix::identity(n);
    for (int k = 1; k <= 18; ++k) {
        term = scale(matmul(term, x), 1.0 / k);
        add_in_place(result, term);
    }
    for (int i = 0; i < s; ++i) result = matmul(result, result);

    if (!result.all_finite()) throw NumericError("expm produced non-finite values");
    return result;
}

double softplus(double x) {
    // keep the result strictly positive: below roughly -708, e^x underflows,
    // so clamp to the smallest positive normal double
    if (x < -708.0) return std::numeric_limits<double>::min();
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw DomainError("softplus_inverse: input must be positive");
    // log(e^y - 1) = y + log(1 - e^-y)
    if (y > 36.0) return y;  // e^-y below double epsilon
    return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double orthogonality_defect(const Matrix& u) {
    if (u.rows() != u.cols()) throw ShapeError("orthogonality_defect: matrix must be square");
    Matrix g = matmul_tn(u, u);
    for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
    return frobenius_norm(g);
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.values()) s += v * v;
    return std::sqrt(s);
}

double frobenius_distance(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("frobenius_distance: shape mismatch");
    double s = 0.0;
    const double* p = a.data();
    const double* q = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = p[i] - q[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double one_norm(const Matrix& m) {
    double best = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) s += std::abs(m(i, j));
        best = std::max(best, s);
    }
    return best;
}

double determinant(const Matrix& m) {
    if (m.rows() != m.cols()) throw ShapeError("determinant: matrix must be square");
    const std::size_t n = m.rows();
    Matrix lu = m;
    double det = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t i = col + 1; i < n; ++i)
            if (std::abs(lu(i, col)) > std::abs(lu(pivot, col))) pivot = i;
        if (lu(pivot, col) == 0.0) return 0.0;
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(lu(pivot, j), lu(col, j));
            det = -det;
        }
        det *= lu(col, col);
        for (std::size_t i = col + 1; i < n; ++i) {
            const double f = lu(i, col) / lu(col, col);
            for (std::size_t j = col; j < n; ++j) lu(i, j) -= f * lu(col, j);
        }
    }
    return det;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string matrix_to_csv(const Matrix& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_double(m(i, j));
        }
        out += '\n';
    }
    return out;
}

Matrix matrix_from_csv(const std::string& text) {
    std::vector<double> data;
    std::size_t rows = 0, cols = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t line_cols = 0;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t end = line.find(',', start);
            if (end == std::string::npos) end = line.size();
            const std::string tok = line.substr(start, end - start);
            std::size_t parsed = 0;
            double v = 0.0;
            try {
                v = std::stod(tok, &parsed);
            } catch (const std::exception&) {
                throw FormatError("csv: bad number '" + tok + "'", start);
            }
            if (parsed != tok.size()) throw FormatError("csv: trailing garbage in '" + tok + "'", start);
            data.push_back(v);
            ++line_cols;
            start = end + 1;
            if (end == line.size()) break;
        }
        if (rows == 0) {
            cols = line_cols;
        } else if (line_cols != cols) {
            throw FormatError("csv: ragged row", 0);
        }
        ++rows;
    }
    return Matrix(rows, cols, std::move(data));
}

}  // namespace harope
