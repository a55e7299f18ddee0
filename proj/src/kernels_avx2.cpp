// AVX2/FMA variants of the kernel table. This translation unit is compiled
// with -mavx2 -mfma and is only reachable after a runtime cpuid check.

#include "tslim/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define TSLIM_X86 1
#include <immintrin.h>
#else
#define TSLIM_X86 0
#endif

namespace tslim::kernels {

#if TSLIM_X86

namespace avx2 {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum_sq_diff(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double sum_abs_diff(const double* a, const double* b, std::size_t n) {
    const __m256d signmask = _mm256_set1_pd(-0.0);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_andnot_pd(signmask, d));
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d < 0.0 ? -d : d;
    }
    return s;
}

double pinball_sum(const double* pred, const double* ref, std::size_t n, double tau) {
    const __m256d vt = _mm256_set1_pd(tau);
    const __m256d vt1 = _mm256_set1_pd(tau - 1.0);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(pred + i), _mm256_loadu_pd(ref + i));
        acc = _mm256_add_pd(acc, _mm256_max_pd(_mm256_mul_pd(d, vt), _mm256_mul_pd(d, vt1)));
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = pred[i] - ref[i];
        const double a = d * tau;
        const double b = d * (tau - 1.0);
        s += a > b ? a : b;
    }
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void gemv(const double* w, const double* x, const double* b, double* y,
          std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = w + r * cols;
        __m256d acc = _mm256_setzero_pd();
        std::size_t c = 0;
        for (; c + 4 <= cols; c += 4) {
            acc = _mm256_fmadd_pd(_mm256_loadu_pd(wr + c), _mm256_loadu_pd(x + c), acc);
        }
        double s = hsum(acc);
        for (; c < cols; ++c) s += wr[c] * x[c];
        y[r] = (b ? b[r] : 0.0) + s;
    }
}

void gemv_t(const double* w, const double* dy, double* x_out,
            std::size_t rows, std::size_t cols) {
    std::size_t c = 0;
    for (; c + 4 <= cols; c += 4) _mm256_storeu_pd(x_out + c, _mm256_setzero_pd());
    for (; c < cols; ++c) x_out[c] = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = w + r * cols;
        const __m256d g = _mm256_set1_pd(dy[r]);
        std::size_t i = 0;
        for (; i + 4 <= cols; i += 4) {
            _mm256_storeu_pd(x_out + i, _mm256_fmadd_pd(g, _mm256_loadu_pd(wr + i),
                                                        _mm256_loadu_pd(x_out + i)));
        }
        for (; i < cols; ++i) x_out[i] += wr[i] * dy[r];
    }
}

void ger(double* w, const double* dy, const double* x, double alpha,
         std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* wr = w + r * cols;
        const double gs = alpha * dy[r];
        const __m256d g = _mm256_set1_pd(gs);
        std::size_t i = 0;
        for (; i + 4 <= cols; i += 4) {
            _mm256_storeu_pd(wr + i, _mm256_fmadd_pd(g, _mm256_loadu_pd(x + i),
                                                     _mm256_loadu_pd(wr + i)));
        }
        for (; i < cols; ++i) wr[i] += gs * x[i];
    }
}

void poly2(const double* v, double* out, std::size_t n, double inv_v0,
           double c2, double c1, double c0, double scale) {
    const __m256d vi = _mm256_set1_pd(inv_v0);
    const __m256d v2 = _mm256_set1_pd(c2);
    const __m256d v1 = _mm256_set1_pd(c1);
    const __m256d v0 = _mm256_set1_pd(c0);
    const __m256d vs = _mm256_set1_pd(scale);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d z = _mm256_mul_pd(_mm256_loadu_pd(v + i), vi);
        __m256d p = _mm256_fmadd_pd(v2, z, v1);
        p = _mm256_fmadd_pd(p, z, v0);
        _mm256_storeu_pd(out + i, _mm256_mul_pd(p, vs));
    }
    for (; i < n; ++i) {
        const double z = v[i] * inv_v0;
        out[i] = scale * ((c2 * z + c1) * z + c0);
    }
}

void cmatvec(const double* are, const double* aim, const double* xre,
             const double* xim, double* yre, double* yim, std::size_t n) {
    for (std::size_t r = 0; r < n; ++r) {
        const double* rr = are + r * n;
        const double* ri = aim + r * n;
        __m256d sr = _mm256_setzero_pd();
        __m256d si = _mm256_setzero_pd();
        std::size_t c = 0;
        for (; c + 4 <= n; c += 4) {
            const __m256d mr = _mm256_loadu_pd(rr + c);
            const __m256d mi = _mm256_loadu_pd(ri + c);
            const __m256d vr = _mm256_loadu_pd(xre + c);
            const __m256d vi = _mm256_loadu_pd(xim + c);
            sr = _mm256_fmadd_pd(mr, vr, sr);
            sr = _mm256_fnmadd_pd(mi, vi, sr);
            si = _mm256_fmadd_pd(mr, vi, si);
            si = _mm256_fmadd_pd(mi, vr, si);
        }
        double asr = hsum(sr), asi = hsum(si);
        for (; c < n; ++c) {
            asr += rr[c] * xre[c] - ri[c] * xim[c];
            asi += rr[c] * xim[c] + ri[c] * xre[c];
        }
        yre[r] = asr;
        yim[r] = asi;
    }
}

}  // namespace avx2

const Table* avx2_table() {
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    if (!supported) return nullptr;
    static const Table t{
        avx2::dot,     avx2::sum_sq_diff, avx2::sum_abs_diff,
        avx2::pinball_sum, avx2::axpy,    avx2::gemv,
        avx2::gemv_t,  avx2::ger,         avx2::poly2,
        avx2::cmatvec, "avx2"};
    return &t;
}

#else

const Table* avx2_table() { return nullptr; }

#endif  // TSLIM_X86

}  // namespace tslim::kernels
