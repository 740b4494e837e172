#ifndef CFX_LINALG_HPP
#define CFX_LINALG_HPP

#include <cstddef>
#include <vector>

namespace cfx {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }
    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

// Four-accumulator dot product. The association is fixed in source so the
// result is identical no matter how the surrounding loop is scheduled.
inline double dot(const double* x, const double* y, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += x[i] * y[i];
        s1 += x[i + 1] * y[i + 1];
        s2 += x[i + 2] * y[i + 2];
        s3 += x[i + 3] * y[i + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

// y += alpha * x
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// out = W x + b
inline void affine(const Matrix& W, const Vec& b, const double* x, double* out) {
    for (std::size_t r = 0; r < W.rows; ++r) out[r] = b[r] + dot(W.row(r), x, W.cols);
}

// dx += W^T g   (accumulates row by row to stay contiguous)
inline void matvec_t_acc(const Matrix& W, const double* g, double* dx) {
    for (std::size_t r = 0; r < W.rows; ++r) axpy(g[r], W.row(r), dx, W.cols);
}

// dW += g x^T
inline void outer_acc(Matrix& dW, const double* g, const double* x) {
    for (std::size_t r = 0; r < dW.rows; ++r) axpy(g[r], x, dW.row(r), dW.cols);
}

}  // namespace cfx

#endif
