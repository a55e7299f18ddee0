#pragma once

#include <cstddef>
#include <string>

// Data-parallel inner loops used by the fitting/search hot paths and the
// network-residual evaluation. Each kernel has a scalar reference
// implementation and an AVX2 variant; the active table is selected once at
// runtime from CPU capabilities (override with TSLIM_KERNELS=scalar|avx2 or
// kernels::force_backend). Scalar and SIMD variants are equivalence-tested
// against each other.

namespace tslim::kernels {

struct Table {
    // sum_i a[i]*b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // sum_i (a[i]-b[i])^2
    double (*sum_sq_diff)(const double* a, const double* b, std::size_t n);
    // sum_i |a[i]-b[i]|
    double (*sum_abs_diff)(const double* a, const double* b, std::size_t n);
    // sum_i max(tau*(p[i]-r[i]), (tau-1)*(p[i]-r[i]))
    double (*pinball_sum)(const double* pred, const double* ref, std::size_t n, double tau);
    // y[i] += a*x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // y = W*x + b, W row-major (rows x cols); b may be null
    void (*gemv)(const double* w, const double* x, const double* b, double* y,
                 std::size_t rows, std::size_t cols);
    // x_out = W^T * dy, W row-major (rows x cols)
    void (*gemv_t)(const double* w, const double* dy, double* x_out,
                   std::size_t rows, std::size_t cols);
    // W += alpha * dy * x^T (rank-1 update), W row-major (rows x cols)
    void (*ger)(double* w, const double* dy, const double* x, double alpha,
                std::size_t rows, std::size_t cols);
    // out[i] = scale * (c2*z^2 + c1*z + c0), z = v[i]*inv_v0
    void (*poly2)(const double* v, double* out, std::size_t n, double inv_v0,
                  double c2, double c1, double c0, double scale);
    // complex dense matvec with split storage: y = A*x, A row-major (n x n)
    void (*cmatvec)(const double* are, const double* aim, const double* xre,
                    const double* xim, double* yre, double* yim, std::size_t n);

    const char* name;
};

const Table& scalar_table();
// Null when the host cannot execute AVX2.
const Table* avx2_table();

// Active table (resolved once; honors TSLIM_KERNELS on first use).
const Table& active();
// Test hook: force a specific backend ("scalar", "avx2", "auto").
// Returns false if the request cannot be honored on this host.
bool force_backend(const std::string& name);

}  // namespace tslim::kernels
