#include "tslim/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace tslim::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_sq_diff(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double sum_abs_diff(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d < 0.0 ? -d : d;
    }
    return s;
}

double pinball_sum(const double* pred, const double* ref, std::size_t n, double tau) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred[i] - ref[i];
        const double a = d * tau;
        const double b = d * (tau - 1.0);
        s += a > b ? a : b;
    }
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemv(const double* w, const double* x, const double* b, double* y,
          std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = w + r * cols;
        double s = b ? b[r] : 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
        y[r] = s;
    }
}

void gemv_t(const double* w, const double* dy, double* x_out,
            std::size_t rows, std::size_t cols) {
    for (std::size_t c = 0; c < cols; ++c) x_out[c] = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = w + r * cols;
        const double g = dy[r];
        for (std::size_t c = 0; c < cols; ++c) x_out[c] += wr[c] * g;
    }
}

void ger(double* w, const double* dy, const double* x, double alpha,
         std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* wr = w + r * cols;
        const double g = alpha * dy[r];
        for (std::size_t c = 0; c < cols; ++c) wr[c] += g * x[c];
    }
}

void poly2(const double* v, double* out, std::size_t n, double inv_v0,
           double c2, double c1, double c0, double scale) {
    for (std::size_t i = 0; i < n; ++i) {
        const double z = v[i] * inv_v0;
        out[i] = scale * ((c2 * z + c1) * z + c0);
    }
}

void cmatvec(const double* are, const double* aim, const double* xre,
             const double* xim, double* yre, double* yim, std::size_t n) {
    for (std::size_t r = 0; r < n; ++r) {
        const double* rr = are + r * n;
        const double* ri = aim + r * n;
        double sr = 0.0, si = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            sr += rr[c] * xre[c] - ri[c] * xim[c];
            si += rr[c] * xim[c] + ri[c] * xre[c];
        }
        yre[r] = sr;
        yim[r] = si;
    }
}

}  // namespace scalar

const Table& scalar_table() {
    static const Table t{
        scalar::dot,     scalar::sum_sq_diff, scalar::sum_abs_diff,
        scalar::pinball_sum, scalar::axpy,    scalar::gemv,
        scalar::gemv_t,  scalar::ger,         scalar::poly2,
        scalar::cmatvec, "scalar"};
    return t;
}

namespace {

std::atomic<const Table*> g_active{nullptr};

const Table* resolve_auto() {
    if (const Table* t = avx2_table()) return t;
    return &scalar_table();
}

const Table* resolve_from_env() {
    if (const char* env = std::getenv("TSLIM_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_table();
        if (std::strcmp(env, "avx2") == 0) {
            if (const Table* t = avx2_table()) return t;
        }
    }
    return resolve_auto();
}

}  // namespace

const Table& active() {
    const Table* t = g_active.load(std::memory_order_acquire);
    if (!t) {
        t = resolve_from_env();
        g_active.store(t, std::memory_order_release);
    }
    return *t;
}

bool force_backend(const std::string& name) {
    if (name == "scalar") {
        g_active.store(&scalar_table(), std::memory_order_release);
        return true;
    }
    if (name == "avx2") {
        if (const Table* t = avx2_table()) {
            g_active.store(t, std::memory_order_release);
            return true;
        }
        return false;
    }
    if (name == "auto") {
        g_active.store(resolve_auto(), std::memory_order_release);
        return true;
    }
    return false;
}

}  // namespace tslim::kernels
