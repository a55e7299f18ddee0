#include "tslim/loadmodels.hpp"

#include <algorithm>
#include <cmath>

#include "tslim/errors.hpp"

namespace tslim {

// ---------------------------------------------------------------------------
// ZIP

std::pair<double, double> zip_pq(const ZipParams& z, double v) {
    const double r = v / z.v0;
    const double p = z.p0 * ((z.p1c * r + z.p2c) * r + z.p3c);
    const double q = z.q0 * ((z.q1c * r + z.q2c) * r + z.q3c);
    return {p, q};
}

Complex zip_linear_admittance(const ZipParams& z) {
    const double v2 = z.v0 * z.v0;
    // consumed S = (p - jq) conj pattern: admittance y = (p - j q)/v0^2 drawn
    return Complex{z.p0 * z.p1c / v2, -z.q0 * z.q1c / v2};
}

std::pair<double, double> zip_pq_nonlinear(const ZipParams& z, double v) {
    const double r = v / z.v0;
    return {z.p0 * (z.p2c * r + z.p3c), z.q0 * (z.q2c * r + z.q3c)};
}

std::pair<double, double> zip_dpq_dv_nonlinear(const ZipParams& z, double v) {
    (void)v;
    return {z.p0 * z.p2c / z.v0, z.q0 * z.q2c / z.v0};
}

std::pair<double, double> zip_pq_lv(const ZipParams& z, double v) {
    if (v >= kLowVoltageBreak) return zip_pq(z, v);
    const double r = v / z.v0;
    const double pz_part = z.p0 * z.p1c * r * r;
    const double qz_part = z.q0 * z.q1c * r * r;
    const auto [pnl_b, qnl_b] = zip_pq_nonlinear(z, kLowVoltageBreak);
    const double s = (v / kLowVoltageBreak) * (v / kLowVoltageBreak);
    return {pz_part + pnl_b * s, qz_part + qnl_b * s};
}

// ---------------------------------------------------------------------------
// Induction motor

Complex im_stator_current(const ImParams& m, const ImState& st, Complex u) {
    return (u - Complex{st.vdp, st.vqp}) / Complex{m.rs, m.xprime()};
}

std::pair<double, double> im_pq(const ImParams& m, const ImState& st, Complex u) {
    const double xp = m.xprime();
    const double den = m.rs * m.rs + xp * xp;
    const double ud = u.real(), uq = u.imag();
    const double u2 = ud * ud + uq * uq;
    const double uv = ud * st.vdp + uq * st.vqp;
    const double cross = ud * st.vqp - uq * st.vdp;
    const double p = (m.rs * (u2 - uv) - xp * cross) / den;
    const double q = (xp * (u2 - uv) + m.rs * cross) / den;
    return {p, q};
}

std::array<double, 3> im_derivatives(const ImParams& m, const ImState& st, Complex u,
                                     double omega_syn) {
    const Complex i = im_stator_current(m, st, u);
    const double id = i.real(), iq = i.imag();
    const double r0 = m.rr / (m.xr + m.xm);
    const double k = m.xm * m.xm / (m.xr + m.xm);
    const double te = st.vdp * id + st.vqp * iq;
    const double one_s = 1.0 - st.slip;
    const double tm = m.tm0 * std::pow(one_s, m.torque_exp);
    return {
        omega_syn * (-r0 * (st.vdp + k * iq) + st.slip * st.vqp),
        omega_syn * (-r0 * (st.vqp - k * id) - st.slip * st.vdp),
        (tm - te) / (2.0 * m.h),
    };
}

std::array<std::array<double, 3>, 3> im_state_jacobian(const ImParams& m, const ImState& st,
                                                       Complex u, double omega_syn) {
    const double xp = m.xprime();
    const double den = m.rs * m.rs + xp * xp;
    const Complex i = im_stator_current(m, st, u);
    const double id = i.real(), iq = i.imag();
    const double r0 = m.rr / (m.xr + m.xm);
    const double k = m.xm * m.xm / (m.xr + m.xm);

    const double did_dvdp = -m.rs / den;
    const double did_dvqp = -xp / den;
    const double diq_dvdp = xp / den;
    const double diq_dvqp = -m.rs / den;

    std::array<std::array<double, 3>, 3> j{};
    j[0][0] = omega_syn * (-r0 * (1.0 + k * diq_dvdp));
    j[0][1] = omega_syn * (-r0 * k * diq_dvqp + st.slip);
    j[0][2] = omega_syn * st.vqp;
    j[1][0] = omega_syn * (r0 * k * did_dvdp - st.slip);
    j[1][1] = omega_syn * (-r0 * (1.0 - k * did_dvqp));
    j[1][2] = -omega_syn * st.vdp;

    const double dte_dvdp = id + st.vdp * did_dvdp + st.vqp * diq_dvdp;
    const double dte_dvqp = iq + st.vdp * did_dvqp + st.vqp * diq_dvqp;
    const double one_s = 1.0 - st.slip;
    const double dtm_ds =
        (m.torque_exp == 0.0) ? 0.0
                              : -m.torque_exp * m.tm0 * std::pow(one_s, m.torque_exp - 1.0);
    j[2][0] = -dte_dvdp / (2.0 * m.h);
    j[2][1] = -dte_dvqp / (2.0 * m.h);
    j[2][2] = dtm_ds / (2.0 * m.h);
    return j;
}

ImState im_equilibrium_state(const ImParams& m, Complex u, double slip) {
    // Zero flux derivatives: (r0 + j s) v' = j r0 k i with i = (u - v')/(rs + j x')
    const double r0 = m.rr / (m.xr + m.xm);
    const double k = m.xm * m.xm / (m.xr + m.xm);
    const Complex a{r0, slip};
    const Complex b = Complex{0.0, r0 * k} / Complex{m.rs, m.xprime()};
    const Complex vprime = b * u / (a + b);
    return {vprime.real(), vprime.imag(), slip};
}

double im_electrical_torque(const ImParams& m, const ImState& st, Complex u) {
    const Complex i = im_stator_current(m, st, u);
    return st.vdp * i.real() + st.vqp * i.imag();
}

double im_equilibrium_power(const ImParams& m, Complex u, double slip) {
    return im_pq(m, im_equilibrium_state(m, u, slip), u).first;
}

std::pair<double, double> im_pullout(const ImParams& m, Complex u) {
    // coarse scan then ternary refinement of the single interior maximum
    double best_s = 1e-4, best_p = im_equilibrium_power(m, u, best_s);
    for (int k = 1; k <= 400; ++k) {
        const double s = k * (0.99 / 400.0) + 1e-4;
        const double p = im_equilibrium_power(m, u, s);
        if (p > best_p) {
            best_p = p;
            best_s = s;
        }
    }
    double lo = std::max(1e-6, best_s - 0.99 / 400.0);
    double hi = std::min(0.9999, best_s + 0.99 / 400.0);
    for (int it = 0; it < 200; ++it) {
        const double m1 = lo + (hi - lo) / 3.0;
        const double m2 = hi - (hi - lo) / 3.0;
        if (im_equilibrium_power(m, u, m1) < im_equilibrium_power(m, u, m2)) lo = m1;
        else hi = m2;
    }
    const double s = 0.5 * (lo + hi);
    return {im_equilibrium_power(m, u, s), s};
}

ImInit im_init(const ImParams& base, Complex u, double p_target) {
    if (p_target <= 0.0) throw InitError("motor power target must be positive");
    const auto [p_po, s_po] = im_pullout(base, u);
    if (p_target >= p_po) {
        throw NoEquilibrium("motor demand " + std::to_string(p_target) +
                            " pu exceeds pull-out power " + std::to_string(p_po) + " pu");
    }
    const double p_noload = im_equilibrium_power(base, u, 1e-12);
    if (p_target <= p_noload) {
        throw NoEquilibrium("motor demand below no-load losses");
    }
    // stable branch: P increasing on (0, s_po]
    double lo = 1e-12, hi = s_po;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (im_equilibrium_power(base, u, mid) < p_target) lo = mid;
        else hi = mid;
        if (hi - lo < 1e-16) break;
    }
    const double slip = 0.5 * (lo + hi);

    ImInit out;
    out.params = base;
    out.state = im_equilibrium_state(base, u, slip);
    const double te = im_electrical_torque(base, out.state, u);
    out.params.tm0 = te / std::pow(1.0 - slip, base.torque_exp);
    return out;
}

// ---------------------------------------------------------------------------
// Electronic load

std::pair<double, double> electronic_pq(const ElectronicLoadParams& e, double v) {
    if (v >= e.v_full) return {e.p0, 0.0};
    if (v <= e.v_off) return {0.0, 0.0};
    return {e.p0 * (v - e.v_off) / (e.v_full - e.v_off), 0.0};
}

double electronic_dp_dv(const ElectronicLoadParams& e, double v) {
    if (v >= e.v_full || v <= e.v_off) return 0.0;
    return e.p0 / (e.v_full - e.v_off);
}

// ---------------------------------------------------------------------------
// Single-phase motor

SpimState sp_im_update(const SinglePhaseImParams& s, const SpimState& st, double v, double dt) {
    SpimState out = st;
    if (v < s.v_stall) {
        out.uv_time += dt;
        if (out.uv_time >= s.t_stall && out.frac_stalled < 1.0) {
            out.frac_stalled = 1.0;
            out.restart_done = false;
        }
    } else {
        out.uv_time = 0.0;
        if (out.frac_stalled > 0.0 && !out.restart_done && v > s.v_restart) {
            out.frac_stalled *= (1.0 - s.f_restart);
            out.restart_done = true;
        }
    }
    return out;
}

std::pair<double, double> sp_im_pq(const SinglePhaseImParams& s, const SpimState& st, double v) {
    const double run = 1.0 - st.frac_stalled;
    // stall admittance is per-unit on the component's own base (p0)
    const double v2 = v * v;
    const double p = run * s.p0 + st.frac_stalled * s.g_stall * s.p0 * v2;
    const double q = run * s.q0 + st.frac_stalled * s.b_stall * s.p0 * v2;
    return {p, q};
}

std::pair<double, double> sp_im_dpq_dv(const SinglePhaseImParams& s, const SpimState& st,
                                       double v) {
    const double dp = st.frac_stalled * s.g_stall * s.p0 * 2.0 * v;
    const double dq = st.frac_stalled * s.b_stall * s.p0 * 2.0 * v;
    return {dp, dq};
}

std::pair<double, double> sp_im_pq_lv(const SinglePhaseImParams& s, const SpimState& st,
                                      double v) {
    auto [p, q] = sp_im_pq(s, st, v);
    if (v < kLowVoltageBreak) {
        const double run = 1.0 - st.frac_stalled;
        const double scale = (v / kLowVoltageBreak) * (v / kLowVoltageBreak);
        p += run * s.p0 * (scale - 1.0);
        q += run * s.q0 * (scale - 1.0);
    }
    return {p, q};
}

// ---------------------------------------------------------------------------
// ZIP bus model

LoadState ZipLoad::init(Complex v0, double p0, double q0) {
    z_.p0 = p0;
    z_.q0 = q0;
    z_.v0 = std::abs(v0);
    return {};
}

std::pair<double, double> ZipLoad::injection(const LoadState&, Complex v) const {
    return zip_pq_lv(z_, std::abs(v));
}

// ---------------------------------------------------------------------------
// ZIP + IM bus model

LoadState ZipImLoad::init(Complex v0, double p0, double q0) {
    const double f_zip = spec_.f_zip, f_im = spec_.f_im;
    zip_active_ = f_zip > 0.0;
    im_active_ = f_im > 0.0;
    const double vm = std::abs(v0);

    LoadState st;
    double q_natural = 0.0;
    if (im_active_) {
        ImParams sized = spec_.im;
        const double p_im = f_im * p0;
        // size the machine so it runs at its design loading
        sized.mva_base = p_im * 100.0 / sized.loading;
        im_scale_ = sized.mva_base / 100.0;
        const ImInit ii = im_init(sized, v0, sized.loading);
        im_ = ii.params;
        st.x = {ii.state.vdp, ii.state.vqp, ii.state.slip};
        const auto [pm, qm] = im_pq(im_, ii.state, v0);
        (void)pm;
        q_natural += qm * im_scale_;
    }
    if (zip_active_) {
        zip_ = spec_.zip;
        zip_.p0 = f_zip * p0;
        zip_.q0 = f_zip * q0;
        zip_.v0 = vm;
        q_natural += zip_.q0;
    }
    // compensating shunt absorbs the reactive residual exactly
    const double q_resid = q0 - q_natural;
    b_comp_ = -q_resid / (vm * vm);
    return st;
}

std::pair<double, double> ZipImLoad::injection(const LoadState& st, Complex v) const {
    const double vm = std::abs(v);
    double p = 0.0, q = 0.0;
    if (zip_active_) {
        const auto [pz, qz] = zip_pq_lv(zip_, vm);
        p += pz;
        q += qz;
    }
    if (im_active_) {
        ImState ms{st.x[0], st.x[1], st.x[2]};
        const auto [pm, qm] = im_pq(im_, ms, v);
        p += pm * im_scale_;
        q += qm * im_scale_;
    }
    q += -b_comp_ * vm * vm;
    return {p, q};
}

void ZipImLoad::derivatives(const LoadState& st, Complex v, double* dx) const {
    if (!im_active_) return;
    ImState ms{st.x[0], st.x[1], st.x[2]};
    const auto d = im_derivatives(im_, ms, v);
    dx[0] = d[0];
    dx[1] = d[1];
    dx[2] = d[2];
}

// ---------------------------------------------------------------------------
// CLM-lite bus model

std::size_t ClmLiteLoad::n_states() const {
    std::size_t n = 0;
    for (int k = 0; k < 3; ++k) {
        if (active_[k]) n += 3;
    }
    return n;
}

LoadState ClmLiteLoad::init(Complex v0, double p0, double q0) {
    const auto& fr = spec_.fractions;
    if (fr.size() != 6) throw ValidationError("clm_lite requires six component fractions");
    fr.validate();
    for (int k = 0; k < 6; ++k) active_[k] = fr.f(k) > 0.0;

    tap_ = spec_.tap;
    // feeder and substation shunt are per-unit on the load's own base
    const double z_scale = 1.0 / std::max(p0, 1e-9);
    const Complex z_feeder{spec_.feeder_r * z_scale, spec_.feeder_x * z_scale};
    feeder_y_ = (std::abs(z_feeder) > 0.0) ? 1.0 / z_feeder : Complex{0.0, 0.0};
    sub_shunt_b_ = spec_.shunt_b * p0 / (tap_ * tap_);

    // back-solve the feeder for the component-node operating point
    const Complex s0{p0, q0};
    const Complex i_model = std::conj(s0 / v0);
    const Complex i_shunt = Complex{0.0, sub_shunt_b_} * v0;
    const Complex i_feeder = i_model - i_shunt;
    Complex v_int;
    if (std::abs(z_feeder) > 0.0) {
        v_int = v0 / tap_ - z_feeder * (tap_ * i_feeder);
    } else {
        v_int = v0 / tap_;
    }
    const Complex i_int = tap_ * i_feeder;
    const Complex s_int = v_int * std::conj(i_int);
    const double p_int = s_int.real(), q_int = s_int.imag();
    if (p_int <= 0.0) throw InitError("clm_lite feeder absorbs the entire load");
    const double vm = std::abs(v_int);

    LoadState st;
    double q_natural = 0.0;

    const ImParams* bases[3] = {&spec_.ma, &spec_.mb, &spec_.mc};
    ImParams* resolved[3] = {&ma_, &mb_, &mc_};
    for (int k = 0; k < 3; ++k) {
        if (!active_[k]) continue;
        ImParams sized = *bases[k];
        const double p_m = fr.f(k) * p_int;
        sized.mva_base = p_m * 100.0 / sized.loading;
        motor_scale_[k] = sized.mva_base / 100.0;
        const ImInit ii = im_init(sized, v_int, sized.loading);
        *resolved[k] = ii.params;
        st.x.push_back(ii.state.vdp);
        st.x.push_back(ii.state.vqp);
        st.x.push_back(ii.state.slip);
        q_natural += im_pq(*resolved[k], ii.state, v_int).second * motor_scale_[k];
    }
    if (active_[3]) {
        md_ = spec_.md;
        md_.p0 = fr.f(3) * p_int;
        md_.q0 = md_.p0 * md_.qp_ratio;
        st.sp = SpimState{};
        q_natural += md_.q0;
    }
    if (active_[4]) {
        elec_ = spec_.elec;
        const double target = fr.f(4) * p_int;
        if (vm >= elec_.v_full) {
            elec_.p0 = target;
        } else if (vm > elec_.v_off) {
            elec_.p0 = target * (elec_.v_full - elec_.v_off) / (vm - elec_.v_off);
        } else {
            throw InitError("electronic load cannot serve its share below cut-off voltage");
        }
    }
    if (active_[5]) {
        zip_ = spec_.zip;
        zip_.p0 = fr.f(5) * p_int;
        zip_.q0 = fr.f(5) * q_int;
        zip_.v0 = vm;
        q_natural += zip_.q0;
    }

    const double q_resid = q_int - q_natural;
    b_comp_ = -q_resid / (vm * vm);
    return st;
}

std::pair<double, double> ClmLiteLoad::component_pq(const LoadState& st, Complex v_int) const {
    const double vm = std::abs(v_int);
    double p = 0.0, q = 0.0;
    std::size_t off = 0;
    const ImParams* motors[3] = {&ma_, &mb_, &mc_};
    for (int k = 0; k < 3; ++k) {
        if (!active_[k]) continue;
        ImState ms{st.x[off], st.x[off + 1], st.x[off + 2]};
        off += 3;
        const auto [pm, qm] = im_pq(*motors[k], ms, v_int);
        p += pm * motor_scale_[k];
        q += qm * motor_scale_[k];
    }
    if (active_[3]) {
        const auto [pm, qm] = sp_im_pq_lv(md_, st.sp, vm);
        p += pm;
        q += qm;
    }
    if (active_[4]) {
        const auto [pe, qe] = electronic_pq(elec_, vm);
        p += pe;
        q += qe;
    }
    if (active_[5]) {
        const auto [pz, qz] = zip_pq_lv(zip_, vm);
        p += pz;
        q += qz;
    }
    q += -b_comp_ * vm * vm;
    return {p, q};
}

namespace {

// static consumption with low-voltage conversion: value and d/d|v| slope
struct StaticEval {
    double p = 0.0, q = 0.0, dp = 0.0, dq = 0.0;
};

void add_zip_nl(const ZipParams& z, double vm, StaticEval& ev) {
    const double zp_i = z.p0 * z.p2c / z.v0, zp_p = z.p0 * z.p3c;
    const double zq_i = z.q0 * z.q2c / z.v0, zq_p = z.q0 * z.q3c;
    if (vm >= kLowVoltageBreak) {
        ev.p += zp_i * vm + zp_p;
        ev.q += zq_i * vm + zq_p;
        ev.dp += zp_i;
        ev.dq += zq_i;
    } else {
        const double pb = zp_i * kLowVoltageBreak + zp_p;
        const double qb = zq_i * kLowVoltageBreak + zq_p;
        const double s = vm / (kLowVoltageBreak * kLowVoltageBreak);
        ev.p += pb * vm * s;
        ev.q += qb * vm * s;
        ev.dp += 2.0 * pb * s;
        ev.dq += 2.0 * qb * s;
    }
}

void add_sp_running(const SinglePhaseImParams& sp, const SpimState& st, double vm,
                    StaticEval& ev) {
    const double run = 1.0 - st.frac_stalled;
    if (vm >= kLowVoltageBreak) {
        ev.p += run * sp.p0;
        ev.q += run * sp.q0;
    } else {
        const double s = (vm / kLowVoltageBreak) * (vm / kLowVoltageBreak);
        ev.p += run * sp.p0 * s;
        ev.q += run * sp.q0 * s;
        ev.dp += run * sp.p0 * 2.0 * vm / (kLowVoltageBreak * kLowVoltageBreak);
        ev.dq += run * sp.q0 * 2.0 * vm / (kLowVoltageBreak * kLowVoltageBreak);
    }
}

void add_electronic(const ElectronicLoadParams& e, double vm, StaticEval& ev) {
    ev.p += electronic_pq(e, vm).first;
    ev.dp += electronic_dp_dv(e, vm);
}

}  // namespace

Complex ClmLiteLoad::solve_feeder_node(const LoadState& st, Complex v_bus) const {
    if (std::abs(feeder_y_) == 0.0) return v_bus / tap_;

    // linear elements at the node: feeder series, compensation, motor stators,
    // zip impedance share, stalled single-phase admittance
    Complex y_lin = feeder_y_ + Complex{0.0, b_comp_};
    Complex i_src = feeder_y_ * (v_bus / tap_);
    const ImParams* motors[3] = {&ma_, &mb_, &mc_};
    std::size_t off = 0;
    for (int k = 0; k < 3; ++k) {
        if (!active_[k]) continue;
        const Complex ym = motor_scale_[k] / Complex{motors[k]->rs, motors[k]->xprime()};
        y_lin += ym;
        i_src += ym * Complex{st.x[off], st.x[off + 1]};
        off += 3;
    }
    if (active_[5]) y_lin += zip_linear_admittance(zip_);
    if (active_[3]) {
        const double stall = st.sp.frac_stalled * md_.p0;
        y_lin += Complex{stall * md_.g_stall, -stall * md_.b_stall};
    }

    Complex v = cache_valid_ ? v_int_cache_ : v_bus / tap_;
    double fn_prev = 1e300;
    for (int it = 0; it < 50; ++it) {
        const double re = v.real(), im = v.imag();
        const double u2 = re * re + im * im;
        const double vm = std::sqrt(u2);
        StaticEval evs;
        if (vm > 1e-9) {
            if (active_[5]) add_zip_nl(zip_, vm, evs);
            if (active_[4]) add_electronic(elec_, vm, evs);
            if (active_[3]) add_sp_running(md_, st.sp, vm, evs);
        }
        // drawn current of the nonlinear remainder: conj(S/V)
        Complex i_nl{0.0, 0.0};
        double j00 = 0.0, j01 = 0.0, j10 = 0.0, j11 = 0.0;
        if (vm > 1e-9) {
            const double ire = (evs.p * re + evs.q * im) / u2;
            const double iim = (evs.p * im - evs.q * re) / u2;
            i_nl = {ire, iim};
            const double dvr = re / vm, dvi = im / vm;
            j00 = (evs.p + evs.dp * dvr * re + evs.dq * dvr * im) / u2 - 2.0 * re * ire / u2;
            j01 = (evs.q + evs.dp * dvi * re + evs.dq * dvi * im) / u2 - 2.0 * im * ire / u2;
            j10 = (-evs.q + evs.dp * dvr * im - evs.dq * dvr * re) / u2 - 2.0 * re * iim / u2;
            j11 = (evs.p + evs.dp * dvi * im - evs.dq * dvi * re) / u2 - 2.0 * im * iim / u2;
        }
        const Complex f = y_lin * v - i_src + i_nl;
        const double fn = std::abs(f);
        if (fn < 1e-12) {
            v_int_cache_ = v;
            cache_valid_ = true;
            return v;
        }
        const double a = y_lin.real() + j00, b = -y_lin.imag() + j01;
        const double c = y_lin.imag() + j10, d = y_lin.real() + j11;
        const double det = a * d - b * c;
        if (std::abs(det) < 1e-14) break;
        double dx = (-f.real() * d + f.imag() * b) / det;
        double dy = (-f.imag() * a + f.real() * c) / det;
        const double step = (fn > fn_prev) ? 0.5 : 1.0;
        fn_prev = fn;
        v += step * Complex{dx, dy};
    }
    // cross-check the split against the full component evaluation
    const auto [p, q] = component_pq(st, v);
    const Complex f_full = feeder_y_ * (v - v_bus / tap_) + std::conj(Complex{p, q} / v);
    if (std::abs(f_full) > 1e-7) {
        cache_valid_ = false;
        throw AlgebraicDivergence("composite feeder node solve failed", 0.0);
    }
    v_int_cache_ = v;
    cache_valid_ = true;
    return v;
}

std::pair<double, double> ClmLiteLoad::injection(const LoadState& st, Complex v) const {
    const Complex v_int = solve_feeder_node(st, v);
    const auto [p, q] = component_pq(st, v_int);
    Complex s_bus;
    if (std::abs(feeder_y_) > 0.0) {
        const Complex i_feeder_int = feeder_y_ * (v / tap_ - v_int);  // into the node
        const Complex i_bus_side = i_feeder_int / tap_;
        s_bus = v * std::conj(i_bus_side);
    } else {
        s_bus = Complex{p, q};
    }
    const double vm = std::abs(v);
    const Complex s_shunt{0.0, -sub_shunt_b_ * vm * vm};
    return {s_bus.real() + s_shunt.real(), s_bus.imag() + s_shunt.imag()};
}

void ClmLiteLoad::derivatives(const LoadState& st, Complex v, double* dx) const {
    const Complex v_int = solve_feeder_node(st, v);
    std::size_t off = 0;
    const ImParams* motors[3] = {&ma_, &mb_, &mc_};
    for (int k = 0; k < 3; ++k) {
        if (!active_[k]) continue;
        ImState ms{st.x[off], st.x[off + 1], st.x[off + 2]};
        const auto d = im_derivatives(*motors[k], ms, v_int);
        dx[off] = d[0];
        dx[off + 1] = d[1];
        dx[off + 2] = d[2];
        off += 3;
    }
}

void ClmLiteLoad::discrete_update(LoadState& st, Complex v_bus, double dt) const {
    if (!active_[3]) return;
    const Complex v_int = solve_feeder_node(st, v_bus);
    st.sp = sp_im_update(md_, st.sp, std::abs(v_int), dt);
}

std::pair<double, double> composite_pq(const ClmLiteLoad& model, const LoadState& st,
                                       Complex v_component_node) {
    return model.component_pq(st, v_component_node);
}

std::unique_ptr<LoadModel> build_load_model(const LoadModelSpec& spec) {
    switch (spec.type) {
        case LoadModelSpec::Type::Zip:
            return std::make_unique<ZipLoad>(spec.zip);
        case LoadModelSpec::Type::StaticPreset:
            return std::make_unique<ZipLoad>(spec.resolved_zip());
        case LoadModelSpec::Type::ZipIm:
            return std::make_unique<ZipImLoad>(spec.zip_im);
        case LoadModelSpec::Type::ClmLite:
            return std::make_unique<ClmLiteLoad>(spec.clm);
    }
    throw ValidationError("unknown load model type");
}

}  // namespace tslim
