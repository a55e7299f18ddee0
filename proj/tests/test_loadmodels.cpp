#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "tslim/errors.hpp"
#include "tslim/loadmodels.hpp"
#include "tslim/rng.hpp"

using namespace tslim;

namespace {

ZipParams zip_with(double p1, double p2, double p3, double p0 = 1.0, double q0 = 0.5) {
    ZipParams z;
    z.p0 = p0;
    z.q0 = q0;
    z.p1c = p1;
    z.p2c = p2;
    z.p3c = p3;
    z.q1c = p1;
    z.q2c = p2;
    z.q3c = p3;
    return z;
}

ImParams random_motor(Rng& rng) {
    ImParams m;
    m.rs = rng.uniform(0.01, 0.06);
    m.xs = rng.uniform(0.06, 0.18);
    m.xm = rng.uniform(2.0, 4.5);
    m.rr = rng.uniform(0.008, 0.05);
    m.xr = rng.uniform(0.06, 0.20);
    m.h = rng.uniform(0.15, 1.5);
    m.torque_exp = (rng.uniform() < 0.3) ? 0.0 : 2.0;
    return m;
}

// independent oracle: bisection on the torque-balance residual
// tm0*(1-s)^e - Te(s) over the stable branch, using the solved tm0
double torque_balance_slip(const ImParams& m, Complex u) {
    const auto [p_po, s_po] = im_pullout(m, u);
    (void)p_po;
    const auto g = [&](double s) {
        const ImState st = im_equilibrium_state(m, u, s);
        return m.tm0 * std::pow(1.0 - s, m.torque_exp) - im_electrical_torque(m, st, u);
    };
    double lo = 1e-12, hi = s_po;
    REQUIRE(g(lo) > 0.0);
    REQUIRE(g(hi) < 0.0);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (g(mid) > 0.0) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("zip polynomial hits its anchor points") {
    ZipParams z = zip_with(0.2, 0.3, 0.5, 2.0, 1.0);
    z.v0 = 1.0;
    auto [p, q] = zip_pq(z, 1.0);
    CHECK(p == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(q == doctest::Approx(1.0).epsilon(1e-12));

    // pure impedance share
    ZipParams zz = zip_with(1.0, 0.0, 0.0);
    CHECK(zip_pq(zz, 0.9).first == doctest::Approx(0.81).epsilon(1e-12));

    // pure power share is flat in v
    ZipParams zp = zip_with(0.0, 0.0, 1.0);
    for (double v : {0.5, 0.8, 1.0, 1.2}) {
        CHECK(zip_pq(zp, v).first == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("zip curve is exactly quadratic in voltage") {
    const ZipParams z = zip_with(0.35, 0.42, 0.23, 1.7, 0.6);
    const double h = 0.01;
    double prev_dd = 0.0;
    for (int k = 0; k < 40; ++k) {
        const double v = 0.5 + k * h;
        const double dd = zip_pq(z, v + h).first - 2.0 * zip_pq(z, v).first +
                          zip_pq(z, v - h).first;
        if (k > 0) CHECK(dd == doctest::Approx(prev_dd).epsilon(1e-9));
        prev_dd = dd;
    }
}

TEST_CASE("zip fraction invariants are enforced") {
    ZipParams bad = zip_with(0.5, 0.2, 0.2);
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    ZipParams good = zip_with(0.5, 0.2, 0.3);
    CHECK_NOTHROW(good.validate());
}

TEST_CASE("motor equilibrium matches the torque-balance oracle") {
    Rng rng(2024);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const ImParams base = random_motor(rng);
        const Complex u = std::polar(rng.uniform(0.9, 1.1), rng.uniform(-0.3, 0.3));
        const auto [p_po, s_po] = im_pullout(base, u);
        (void)s_po;
        const double p_target = rng.uniform(0.2, 0.85) * p_po;
        ImInit init;
        try {
            init = im_init(base, u, p_target);
        } catch (const NoEquilibrium&) {
            continue;  // target below no-load losses for this draw
        }
        ++checked;

        const auto [p, q] = im_pq(init.params, init.state, u);
        (void)q;
        CHECK(p == doctest::Approx(p_target).epsilon(1e-6));

        const auto d = im_derivatives(init.params, init.state, u);
        for (double v : d) CHECK(std::abs(v) < 1e-9);

        const double s_oracle = torque_balance_slip(init.params, u);
        CHECK(std::abs(s_oracle - init.state.slip) < 1e-8);
    }
    CHECK(checked >= 90);
}

TEST_CASE("motor init refuses demand past pull-out") {
    ImParams m;  // generic machine
    const Complex u{1.0, 0.0};
    const auto [p_po, s_po] = im_pullout(m, u);
    (void)s_po;
    CHECK_THROWS_AS((void)im_init(m, u, p_po * 1.05), NoEquilibrium);
}

TEST_CASE("light loading lands on a small slip") {
    ImParams m;
    const ImInit init = im_init(m, Complex{1.0, 0.0}, 0.3);
    CHECK(init.state.slip > 0.0);
    CHECK(init.state.slip < 0.05);
}

TEST_CASE("terminal power matches the complex-arithmetic oracle") {
    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        const ImParams m = random_motor(rng);
        ImState st;
        st.vdp = rng.uniform(-1.2, 1.2);
        st.vqp = rng.uniform(-1.2, 1.2);
        st.slip = rng.uniform(0.0, 0.9);
        const Complex u = std::polar(rng.uniform(0.2, 1.2), rng.uniform(-3.1, 3.1));

        const Complex i = (u - Complex{st.vdp, st.vqp}) / Complex{m.rs, m.xprime()};
        const Complex s = u * std::conj(i);
        const auto [p, q] = im_pq(m, st, u);
        CHECK(std::abs(p - s.real()) < 1e-10);
        CHECK(std::abs(q - s.imag()) < 1e-10);
    }
}

TEST_CASE("zero stator current draws nothing") {
    ImParams m;
    ImState st{0.7, -0.2, 0.03};
    const auto [p, q] = im_pq(m, st, Complex{0.7, -0.2});
    CHECK(std::abs(p) < 1e-14);
    CHECK(std::abs(q) < 1e-14);
}

TEST_CASE("voltage sag decelerates the machine") {
    ImParams m;
    const Complex u{1.0, 0.0};
    const ImInit init = im_init(m, u, 0.6);
    const auto d = im_derivatives(init.params, init.state, u * 0.8);
    CHECK(d[2] > 0.0);  // slip grows when electrical torque collapses
}

TEST_CASE("state jacobian matches central finite differences") {
    Rng rng(5150);
    for (int trial = 0; trial < 50; ++trial) {
        const ImParams m = random_motor(rng);
        ImState st;
        st.vdp = rng.uniform(-1.0, 1.0);
        st.vqp = rng.uniform(-1.0, 1.0);
        st.slip = rng.uniform(0.01, 0.8);
        const Complex u = std::polar(rng.uniform(0.5, 1.1), rng.uniform(-0.5, 0.5));

        const auto jac = im_state_jacobian(m, st, u);
        const double h = 1e-7;
        for (int col = 0; col < 3; ++col) {
            ImState plus = st, minus = st;
            double* fields_p[3] = {&plus.vdp, &plus.vqp, &plus.slip};
            double* fields_m[3] = {&minus.vdp, &minus.vqp, &minus.slip};
            *fields_p[col] += h;
            *fields_m[col] -= h;
            const auto dp = im_derivatives(m, plus, u);
            const auto dm = im_derivatives(m, minus, u);
            for (int row = 0; row < 3; ++row) {
                const double fd = (dp[row] - dm[row]) / (2.0 * h);
                const double scale = std::max({1.0, std::abs(fd), std::abs(jac[row][col])});
                CHECK(std::abs(fd - jac[row][col]) / scale < 1e-5);
            }
        }
    }
}

TEST_CASE("per-unit base change scales system quantities inversely") {
    ImParams m;
    m.mva_base = 100.0;
    ImParams m2 = m;
    m2.mva_base = 200.0;
    // same motor-base target: identical internal state
    const ImInit a = im_init(m, Complex{1.0, 0.0}, 0.5);
    const ImInit b = im_init(m2, Complex{1.0, 0.0}, 0.5);
    CHECK(a.state.slip == doctest::Approx(b.state.slip).epsilon(1e-12));
    // impedance on the system base halves when the machine doubles
    const double z_sys_a = m.xprime() * 100.0 / m.mva_base;
    const double z_sys_b = m2.xprime() * 100.0 / m2.mva_base;
    CHECK(z_sys_b == doctest::Approx(0.5 * z_sys_a).epsilon(1e-12));
}

TEST_CASE("electronic load follows its piecewise-linear curve") {
    ElectronicLoadParams e;
    e.p0 = 0.8;
    CHECK(electronic_pq(e, 1.0) == std::pair{0.8, 0.0});
    CHECK(electronic_pq(e, e.v_off).first == doctest::Approx(0.0));
    CHECK(electronic_pq(e, (e.v_off + e.v_full) / 2).first == doctest::Approx(0.4));

    // continuity at both breakpoints and monotone growth
    const double eps = 1e-9;
    CHECK(electronic_pq(e, e.v_full - eps).first ==
          doctest::Approx(electronic_pq(e, e.v_full + eps).first).epsilon(1e-6));
    CHECK(electronic_pq(e, e.v_off - eps).first ==
          doctest::Approx(electronic_pq(e, e.v_off + eps).first).epsilon(1e-6));
    double prev = -1.0;
    for (double v = 0.0; v <= e.v_full + 1e-12; v += 0.01) {
        const double p = electronic_pq(e, v).first;
        CHECK(p >= prev - 1e-12);
        prev = p;
    }
}

TEST_CASE("single-phase motor stall rules") {
    SinglePhaseImParams sp;
    sp.p0 = 1.0;
    sp.q0 = 0.33;
    const double dt = 0.01;

    SUBCASE("healthy voltage keeps it running") {
        SpimState st;
        for (int k = 0; k < 100; ++k) st = sp_im_update(sp, st, 1.0, dt);
        CHECK(st.frac_stalled == 0.0);
        CHECK(sp_im_pq(sp, st, 1.0) == std::pair{1.0, 0.33});
    }
    SUBCASE("sustained undervoltage stalls the whole component") {
        SpimState st;
        for (int k = 0; k < 7; ++k) st = sp_im_update(sp, st, 0.4, dt);
        CHECK(st.frac_stalled == 1.0);
        const auto [p, q] = sp_im_pq(sp, st, 0.4);
        CHECK(p == doctest::Approx(sp.g_stall * 0.16).epsilon(1e-12));
        CHECK(q == doctest::Approx(sp.b_stall * 0.16).epsilon(1e-12));
    }
    SUBCASE("a dip shorter than the timer never stalls") {
        SpimState st;
        st = sp_im_update(sp, st, 0.4, 0.02);  // t_stall is 0.033
        st = sp_im_update(sp, st, 1.0, 0.02);
        st = sp_im_update(sp, st, 0.4, 0.02);
        CHECK(st.frac_stalled == 0.0);
    }
    SUBCASE("recovery restarts the restartable fraction once") {
        SpimState st;
        for (int k = 0; k < 7; ++k) st = sp_im_update(sp, st, 0.4, dt);
        REQUIRE(st.frac_stalled == 1.0);
        st = sp_im_update(sp, st, 0.9, dt);
        CHECK(st.frac_stalled == doctest::Approx(1.0 - sp.f_restart));
        st = sp_im_update(sp, st, 0.9, dt);
        CHECK(st.frac_stalled == doctest::Approx(1.0 - sp.f_restart));
    }
}

TEST_CASE("every family meets the init-injection contract") {
    const Complex v0 = std::polar(0.98, -0.1);
    const double p0 = 6.8, q0 = 1.03;

    const auto check_contract = [&](LoadModel& model) {
        const LoadState st = model.init(v0, p0, q0);
        const auto [p, q] = model.injection(st, v0);
        CHECK(p == doctest::Approx(p0).epsilon(1e-6));
        CHECK(q == doctest::Approx(q0).epsilon(1e-6));
        std::vector<double> dx(model.n_states(), 0.0);
        model.derivatives(st, v0, dx.data());
        for (double d : dx) CHECK(std::abs(d) < 1e-6);
    };

    SUBCASE("zip") {
        ZipLoad m(zip_with(0.3, 0.3, 0.4));
        check_contract(m);
    }
    SUBCASE("zip plus motor") {
        ZipImParams p;
        p.f_zip = 0.45;
        p.f_im = 0.55;
        ZipImLoad m(p);
        check_contract(m);
    }
    SUBCASE("composite with feeder") {
        ClmLiteParams p;
        // the case-study composition, normalized onto the simplex
        p.fractions = LoadComposition::from_fractions(
            ClmLiteParams::component_labels(),
            {1.0 / 11, 1.5 / 11, 1.0 / 11, 2.0 / 11, 1.0 / 11, 4.5 / 11});
        p.ma = motor_preset("ma");
        p.mb = motor_preset("mb");
        p.mc = motor_preset("mc");
        p.shunt_b = 0.05;
        ClmLiteLoad m(p);
        check_contract(m);
    }
}

TEST_CASE("composite component powers operate at the feeder-end target") {
    ClmLiteParams p;
    p.fractions = LoadComposition::from_fractions(
        ClmLiteParams::component_labels(),
        {1.0 / 11, 1.5 / 11, 1.0 / 11, 2.0 / 11, 1.0 / 11, 4.5 / 11});
    p.ma = motor_preset("ma");
    p.mb = motor_preset("mb");
    p.mc = motor_preset("mc");
    ClmLiteLoad model(p);
    const Complex v0{1.0, 0.0};
    const LoadState st = model.init(v0, 6.8, 1.03);

    const Complex v_int = model.solve_feeder_node(st, v0);
    const auto [p_sum, q_sum] = composite_pq(model, st, v_int);
    (void)q_sum;
    const auto [p_bus, q_bus] = model.injection(st, v0);
    (void)q_bus;
    CHECK(p_bus == doctest::Approx(6.8).epsilon(1e-6));
    // component sum reproduces the back-solved feeder-end power exactly
    const Complex i_model = std::conj(Complex{6.8, 1.03} / v0);
    const Complex i_shunt = Complex{0.0, model.sub_shunt_b_} * v0;
    const Complex i_feeder = i_model - i_shunt;
    const Complex s_int = v_int * std::conj(model.tap_ * i_feeder);
    CHECK(p_sum == doctest::Approx(s_int.real()).epsilon(1e-6));
}

TEST_CASE("degenerate compositions collapse to their pure forms") {
    const Complex v0{1.0, 0.0};
    const double p0 = 2.0, q0 = 0.5;

    SUBCASE("zip plus motor with zero motor share equals pure zip") {
        ZipImParams zi;
        zi.f_zip = 1.0;
        zi.f_im = 0.0;
        zi.zip = zip_with(0.25, 0.35, 0.40);
        ZipImLoad combined(zi);
        ZipLoad pure(zip_with(0.25, 0.35, 0.40));
        const LoadState sa = combined.init(v0, p0, q0);
        const LoadState sb = pure.init(v0, p0, q0);
        for (double v = 0.45; v <= 1.25; v += 0.05) {
            const auto [pa, qa] = combined.injection(sa, Complex{v, 0.0});
            const auto [pb, qb] = pure.injection(sb, Complex{v, 0.0});
            CHECK(pa == doctest::Approx(pb).epsilon(1e-12));
            CHECK(qa == doctest::Approx(qb).epsilon(1e-12));
        }
    }
    SUBCASE("all-zip composite with no feeder equals pure zip") {
        ClmLiteParams cp;
        cp.feeder_r = 0.0;
        cp.feeder_x = 0.0;
        cp.shunt_b = 0.0;
        cp.tap = 1.0;
        cp.zip = zip_with(0.25, 0.35, 0.40);
        cp.fractions = LoadComposition::from_fractions(ClmLiteParams::component_labels(),
                                                       {0.0, 0.0, 0.0, 0.0, 0.0, 1.0});
        ClmLiteLoad combined(cp);
        ZipLoad pure(zip_with(0.25, 0.35, 0.40));
        const LoadState sa = combined.init(v0, p0, q0);
        const LoadState sb = pure.init(v0, p0, q0);
        for (double v = 0.45; v <= 1.25; v += 0.05) {
            const auto [pa, qa] = combined.injection(sa, Complex{v, 0.0});
            const auto [pb, qb] = pure.injection(sb, Complex{v, 0.0});
            CHECK(pa == doctest::Approx(pb).epsilon(1e-12));
            CHECK(qa == doctest::Approx(qb).epsilon(1e-12));
        }
    }
    SUBCASE("zip plus motor with full motor share equals the bare machine") {
        ZipImParams zi;
        zi.f_zip = 0.0;
        zi.f_im = 1.0;
        ZipImLoad combined(zi);
        // natural reactive draw keeps the compensating shunt at zero
        ImParams sized = zi.im;
        sized.mva_base = p0 * 100.0 / sized.loading;
        const ImInit bare = im_init(sized, v0, sized.loading);
        const auto [pm, qm] = im_pq(bare.params, bare.state, v0);
        (void)pm;
        const double q_natural = qm * sized.mva_base / 100.0;

        const LoadState st = combined.init(v0, p0, q_natural);
        CHECK(combined.b_comp_ == doctest::Approx(0.0).epsilon(1e-9));
        for (double v = 0.7; v <= 1.2; v += 0.1) {
            ImState ms{st.x[0], st.x[1], st.x[2]};
            const auto [pa, qa] = combined.injection(st, Complex{v, 0.0});
            const auto [pb, qb] = im_pq(bare.params, ms, Complex{v, 0.0});
            CHECK(pa == doctest::Approx(pb * sized.mva_base / 100.0).epsilon(1e-9));
            CHECK(qa == doctest::Approx(qb * sized.mva_base / 100.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("composition simplex stays exact under fraction arithmetic") {
    auto c = LoadComposition::uniform({"a", "b", "c"});
    long long sum = 0;
    for (long long v : c.num) sum += v;
    CHECK(sum == kFractionDen);
    CHECK_NOTHROW(c.validate());

    auto fromf = LoadComposition::from_fractions({"a", "b", "c"}, {0.2, 0.3, 0.5});
    CHECK(fromf.f(0) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK_NOTHROW(fromf.validate());

    CHECK_THROWS_AS(LoadComposition::from_fractions({"a", "b"}, {0.2, 0.3}),
                    ValidationError);
}
