#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssmll {

// Error categories map to CLI exit codes (config -> 2, data -> 3).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// shape/dimension violations inside numeric code
struct dim_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Row-major dense matrix of doubles. Score and label matrices are the same
/// storage with different content conventions (scores in [0,1], labels in {0,1}).
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

using ScoreMatrix = DenseMatrix;
using LabelMatrix = DenseMatrix;

inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* what) {
    if (!a.same_shape(b))
        throw dim_error(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                        std::to_string(b.cols) + ")");
}

inline bool is_binary(const DenseMatrix& m) {
    for (double v : m.data)
        if (v != 0.0 && v != 1.0) return false;
    return true;
}

inline bool all_finite(const DenseMatrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

/// C = A * B
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows) throw dim_error("matmul: inner dimensions differ");
    DenseMatrix c(a.rows, b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* crow = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

/// C = A^T * B  (A is n x r, B is n x c -> C is r x c)
inline DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != b.rows) throw dim_error("matmul_at_b: row counts differ");
    DenseMatrix c(a.cols, b.cols, 0.0);
    for (std::size_t n = 0; n < a.rows; ++n) {
        const double* arow = a.data.data() + n * a.cols;
        const double* brow = b.data.data() + n * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double ani = arow[i];
            double* crow = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += ani * brow[j];
        }
    }
    return c;
}

/// C = A * B^T  (A is n x c, B is m x c -> C is n x m)
inline DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.cols) throw dim_error("matmul_a_bt: column counts differ");
    DenseMatrix c(a.rows, b.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + j * b.cols;
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c(i, j) = s;
        }
    }
    return c;
}

inline std::vector<double> column_sums(const DenseMatrix& a) {
    std::vector<double> s(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) s[j] += arow[j];
    }
    return s;
}

/// gather rows of `src` given by `idx` into a new matrix
inline DenseMatrix gather_rows(const DenseMatrix& src, std::span<const std::size_t> idx) {
    DenseMatrix out(idx.size(), src.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* s = src.data.data() + idx[i] * src.cols;
        double* d = out.data.data() + i * out.cols;
        for (std::size_t j = 0; j < src.cols; ++j) d[j] = s[j];
    }
    return out;
}

}  // namespace ssmll
