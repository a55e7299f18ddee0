#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "tslim/kernels.hpp"
#include "tslim/rng.hpp"

using namespace tslim;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

bool close_rel(double a, double b, double tol) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) <= tol * scale;
}

}  // namespace

TEST_CASE("scalar reductions agree with straightforward loops") {
    Rng rng(42);
    const auto a = random_vec(137, rng);
    const auto b = random_vec(137, rng);
    const auto& k = kernels::scalar_table();

    double dot = 0.0, ssd = 0.0, sad = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        ssd += (a[i] - b[i]) * (a[i] - b[i]);
        sad += std::abs(a[i] - b[i]);
    }
    CHECK(close_rel(k.dot(a.data(), b.data(), a.size()), dot, 1e-13));
    CHECK(close_rel(k.sum_sq_diff(a.data(), b.data(), a.size()), ssd, 1e-13));
    CHECK(close_rel(k.sum_abs_diff(a.data(), b.data(), a.size()), sad, 1e-13));
}

TEST_CASE("avx2 variants match the scalar reference") {
    const auto* avx2 = kernels::avx2_table();
    if (!avx2) return;  // host without AVX2
    const auto& ref = kernels::scalar_table();
    Rng rng(7);

    for (std::size_t n : {std::size_t{1}, std::size_t{3}, std::size_t{4}, std::size_t{17},
                          std::size_t{64}, std::size_t{129}}) {
        const auto a = random_vec(n, rng);
        const auto b = random_vec(n, rng);

        CHECK(close_rel(avx2->dot(a.data(), b.data(), n), ref.dot(a.data(), b.data(), n), 1e-13));
        CHECK(close_rel(avx2->sum_sq_diff(a.data(), b.data(), n),
                        ref.sum_sq_diff(a.data(), b.data(), n), 1e-13));
        CHECK(close_rel(avx2->sum_abs_diff(a.data(), b.data(), n),
                        ref.sum_abs_diff(a.data(), b.data(), n), 1e-13));
        for (double tau : {0.1, 0.5, 0.9}) {
            CHECK(close_rel(avx2->pinball_sum(a.data(), b.data(), n, tau),
                            ref.pinball_sum(a.data(), b.data(), n, tau), 1e-13));
        }

        auto y1 = random_vec(n, rng);
        auto y2 = y1;
        avx2->axpy(0.37, a.data(), y1.data(), n);
        ref.axpy(0.37, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(close_rel(y1[i], y2[i], 1e-14));

        auto p1 = std::vector<double>(n), p2 = std::vector<double>(n);
        avx2->poly2(a.data(), p1.data(), n, 1.03, 0.4, 0.35, 0.25, 1.7);
        ref.poly2(a.data(), p2.data(), n, 1.03, 0.4, 0.35, 0.25, 1.7);
        for (std::size_t i = 0; i < n; ++i) CHECK(close_rel(p1[i], p2[i], 1e-14));
    }
}

TEST_CASE("matrix kernels match the scalar reference") {
    const auto* avx2 = kernels::avx2_table();
    if (!avx2) return;
    const auto& ref = kernels::scalar_table();
    Rng rng(11);

    const std::size_t rows = 13, cols = 29;
    const auto w = random_vec(rows * cols, rng);
    const auto x = random_vec(cols, rng);
    const auto bias = random_vec(rows, rng);
    const auto dy = random_vec(rows, rng);

    std::vector<double> y1(rows), y2(rows);
    avx2->gemv(w.data(), x.data(), bias.data(), y1.data(), rows, cols);
    ref.gemv(w.data(), x.data(), bias.data(), y2.data(), rows, cols);
    for (std::size_t i = 0; i < rows; ++i) CHECK(close_rel(y1[i], y2[i], 1e-13));

    std::vector<double> g1(cols), g2(cols);
    avx2->gemv_t(w.data(), dy.data(), g1.data(), rows, cols);
    ref.gemv_t(w.data(), dy.data(), g2.data(), rows, cols);
    for (std::size_t i = 0; i < cols; ++i) CHECK(close_rel(g1[i], g2[i], 1e-13));

    auto w1 = w, w2 = w;
    avx2->ger(w1.data(), dy.data(), x.data(), -0.81, rows, cols);
    ref.ger(w2.data(), dy.data(), x.data(), -0.81, rows, cols);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(close_rel(w1[i], w2[i], 1e-13));

    const std::size_t n = 41;
    const auto are = random_vec(n * n, rng);
    const auto aim = random_vec(n * n, rng);
    const auto xr = random_vec(n, rng);
    const auto xi = random_vec(n, rng);
    std::vector<double> yr1(n), yi1(n), yr2(n), yi2(n);
    avx2->cmatvec(are.data(), aim.data(), xr.data(), xi.data(), yr1.data(), yi1.data(), n);
    ref.cmatvec(are.data(), aim.data(), xr.data(), xi.data(), yr2.data(), yi2.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(close_rel(yr1[i], yr2[i], 1e-12));
        CHECK(close_rel(yi1[i], yi2[i], 1e-12));
    }
}

TEST_CASE("backend selection honors forcing") {
    CHECK(kernels::force_backend("scalar"));
    CHECK(std::string(kernels::active().name) == "scalar");
    if (kernels::avx2_table()) {
        CHECK(kernels::force_backend("avx2"));
        CHECK(std::string(kernels::active().name) == "avx2");
    } else {
        CHECK_FALSE(kernels::force_backend("avx2"));
    }
    CHECK(kernels::force_backend("auto"));
    CHECK_FALSE(kernels::force_backend("mmx"));
}

TEST_CASE("rng streams are reproducible and sub-derivable") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(Rng::derive(9, 1) != Rng::derive(9, 2));
    CHECK(Rng::derive(9, 1) == Rng::derive(9, 1));
    Rng c(5);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}
