#include "tslim/tdsim.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tslim/errors.hpp"
#include "tslim/kernels.hpp"

namespace tslim {

using nlohmann::json;

namespace {

// Below this voltage the constant-power and constant-current pieces of the
// static loads revert to impedance behavior (scaled to match at the
// breakpoint); a constant-power injection has no solution as V -> 0.
constexpr double kLvBreak = 0.4;

struct StaticInjector {
    int node = -1;
    // ZIP current+power shares (impedance share is stamped into Y)
    bool has_zip = false;
    double zp_i = 0.0, zp_p = 0.0;  // p0*p2c/v0 terms: p_i(v) = zp_i * v, p_p = zp_p
    double zq_i = 0.0, zq_p = 0.0;
    const ElectronicLoadParams* elec = nullptr;
    const SinglePhaseImParams* sp = nullptr;
    const SpimState* sp_state = nullptr;

    void eval(double vm, double& p, double& q, double& dp, double& dq) const {
        if (has_zip) {
            if (vm >= kLvBreak) {
                p += zp_i * vm + zp_p;
                q += zq_i * vm + zq_p;
                dp += zp_i;
                dq += zq_i;
            } else {
                const double pb = zp_i * kLvBreak + zp_p;
                const double qb = zq_i * kLvBreak + zq_p;
                const double s = vm / (kLvBreak * kLvBreak);
                p += pb * vm * s;
                q += qb * vm * s;
                dp += 2.0 * pb * s;
                dq += 2.0 * qb * s;
            }
        }
        if (elec) {
            const auto [pe, qe] = electronic_pq(*elec, vm);
            (void)qe;
            p += pe;
            dp += electronic_dp_dv(*elec, vm);
        }
        if (sp) {
            const double run = 1.0 - sp_state->frac_stalled;
            if (vm >= kLvBreak) {
                p += run * sp->p0;
                q += run * sp->q0;
            } else {
                const double s = (vm / kLvBreak) * (vm / kLvBreak);
                p += run * sp->p0 * s;
                q += run * sp->q0 * s;
                dp += run * sp->p0 * 2.0 * vm / (kLvBreak * kLvBreak);
                dq += run * sp->q0 * 2.0 * vm / (kLvBreak * kLvBreak);
            }
            const double stall = sp_state->frac_stalled * sp->p0;
            p += stall * sp->g_stall * vm * vm;
            q += stall * sp->b_stall * vm * vm;
            dp += 2.0 * stall * sp->g_stall * vm;
            dq += 2.0 * stall * sp->b_stall * vm;
        }
    }
};

struct MotorRt {
    const ImParams* par = nullptr;
    double scale = 0.0;  // mva_base / system base
    Complex y_sys;       // scale / (rs + j xprime)
    int node = -1;
    int x_off = -1;
};

struct GenRt {
    int node = -1;
    Complex y;  // 1 / (j xdp_sys)
    double e_mag = 1.0;
    double pm = 0.0;
    double h2 = 1.0;  // 2 * H on system base
    double d = 0.0;
    int x_off = -1;
};

struct LoadRt {
    LoadModelSpec::Type family = LoadModelSpec::Type::Zip;
    int bus_id = 0;
    int bus_node = -1;
    int comp_node = -1;  // differs from bus_node for expanded composites
    std::unique_ptr<LoadModel> model;
    SpimState sp_state;
    StaticInjector injector;
    std::vector<int> motor_slots;  // indices into Impl::motors
    // two-port stamp for expanded composites (bus <-> comp node)
    Complex y_ff, y_ft, y_tf, y_tt;
    double sub_shunt_b = 0.0;
    int x_begin = -1, x_count = 0;
};

void stamp_branch(Eigen::MatrixXcd& y, const NetworkCase& net, const Branch& br, double sign) {
    const auto f = static_cast<Eigen::Index>(net.bus_index(br.from));
    const auto t = static_cast<Eigen::Index>(net.bus_index(br.to));
    const Complex ys = 1.0 / Complex{br.r, br.x};
    const Complex ysh{0.0, br.b_charging / 2.0};
    const double a = br.tap;
    y(f, f) += sign * (ys + ysh) / (a * a);
    y(t, t) += sign * (ys + ysh);
    y(f, t) -= sign * ys / a;
    y(t, f) -= sign * ys / a;
}

}  // namespace

void SimulationConfig::validate() const {
    if (!(dt > 0.0) || dt > record_dt + 1e-15) {
        throw ValidationError("config requires 0 < dt <= record_dt");
    }
    if (!(t_end > 0.0)) throw ValidationError("config requires t_end > 0");
    if (!(solver_tol > 0.0)) throw ValidationError("config requires solver_tol > 0");
}

SimulationConfig SimulationConfig::from_json_text(const std::string& text) {
    SimulationConfig cfg;
    json j;
    try {
        j = json::parse(text, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ParseError(std::string("simulation config: ") + e.what());
    }
    cfg.dt = j.value("dt", cfg.dt);
    cfg.t_end = j.value("t_end", cfg.t_end);
    cfg.record_dt = j.value("record_dt", cfg.record_dt);
    cfg.solver_tol = j.value("solver_tol", cfg.solver_tol);
    cfg.max_alg_iter = j.value("max_alg_iter", cfg.max_alg_iter);
    cfg.stop_on_violation = j.value("stop_on_violation", cfg.stop_on_violation);
    if (j.contains("monitor_buses")) {
        cfg.monitor_buses = j.at("monitor_buses").get<std::vector<int>>();
    }
    cfg.validate();
    return cfg;
}

SimulationConfig SimulationConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::vector<Event> events_from_json_text(const std::string& text, const NetworkCase& net) {
    json j;
    try {
        j = json::parse(text, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ParseError(std::string("event list: ") + e.what());
    }
    std::vector<Event> out;
    for (const auto& je : j) {
        Event ev;
        ev.time = je.at("time").get<double>();
        const std::string kind = je.at("kind").get<std::string>();
        if (kind == "fault") {
            ev.kind = Event::Kind::ThreePhaseFault;
            ev.bus = je.at("bus").get<int>();
            if (net.bus_index(ev.bus) < 0) {
                throw ParseError("event fault bus does not exist: " + std::to_string(ev.bus));
            }
            if (je.contains("fault_b")) {
                ev.fault_admittance = Complex{0.0, je.at("fault_b").get<double>()};
            }
        } else if (kind == "clear") {
            ev.kind = Event::Kind::FaultClear;
        } else if (kind == "trip") {
            ev.kind = Event::Kind::BranchTrip;
            if (je.contains("branch_index")) {
                ev.branch_index = je.at("branch_index").get<int>();
            } else {
                const auto pr = je.at("branch").get<std::vector<int>>();
                for (std::size_t k = 0; k < net.branches.size(); ++k) {
                    const auto& br = net.branches[k];
                    if (br.in_service && ((br.from == pr.at(0) && br.to == pr.at(1)) ||
                                          (br.from == pr.at(1) && br.to == pr.at(0)))) {
                        ev.branch_index = static_cast<int>(k);
                        break;
                    }
                }
            }
            if (ev.branch_index < 0 ||
                ev.branch_index >= static_cast<int>(net.branches.size())) {
                throw ParseError("event trip branch not found");
            }
        } else {
            throw ParseError("unknown event kind: " + kind);
        }
        out.push_back(ev);
    }
    validate_events(out);
    return out;
}

std::vector<Event> events_from_json_file(const std::string& path, const NetworkCase& net) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open event file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return events_from_json_text(ss.str(), net);
}

void validate_events(const std::vector<Event>& events) {
    double prev = -1e300;
    int open_faults = 0;
    for (const auto& ev : events) {
        if (ev.time < prev - 1e-12) throw ValidationError("events must be time-ordered");
        prev = std::max(prev, ev.time);
        if (ev.kind == Event::Kind::ThreePhaseFault) ++open_faults;
        if (ev.kind == Event::Kind::FaultClear) --open_faults;
    }
    if (open_faults > 0) throw ValidationError("every fault needs a clear event");
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Stable: return "Stable";
        case Verdict::AngleUnstable: return "AngleUnstable";
        case Verdict::VoltageUnstable: return "VoltageUnstable";
        case Verdict::NumericalFailure: return "NumericalFailure";
    }
    return "?";
}

// ---------------------------------------------------------------------------

struct TdSim::Impl {
    NetworkCase net;
    SimulationConfig cfg;
    double omega_syn = 0.0;

    int n_case = 0, n_nodes = 0;
    Eigen::MatrixXcd ybase;                 // network + linear load/generator parts
    std::vector<std::pair<int, Complex>> active_faults;

    std::vector<GenRt> gens;
    std::vector<LoadRt> loads;
    std::vector<MotorRt> motors;

    Eigen::VectorXd x;    // [gen delta/omega ...][motor states ...][energy accum]
    int n_ode = 0;
    int audit_slot = -1;
    double ke0 = 0.0;

    Eigen::VectorXcd v;   // solved node voltages at the current point
    double t = 0.0;

    // split Y for residual matvecs, rebuilt on topology changes
    std::vector<double> y_re, y_im;
    bool y_dirty = true;

    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
    bool have_factor = false;

    std::vector<int> monitor_nodes;
    std::vector<int> monitor_ids;
    std::vector<int> gen_ids;

    // scratch
    Eigen::VectorXd f_scratch, xs_scratch;
    std::vector<double> vr, vi, ir, ii;

    void assemble(const PowerFlowSolution& pf);
    void rebuild_split_y();
    Complex isrc_at(const Eigen::VectorXd& xs, int node) const;
    void build_isrc(const Eigen::VectorXd& xs, std::vector<double>& sr,
                    std::vector<double>& si) const;
    double residual(const Eigen::VectorXcd& vv, const std::vector<double>& sr,
                    const std::vector<double>& si, Eigen::VectorXd& f);
    void build_jacobian(const Eigen::VectorXcd& vv, Eigen::MatrixXd& jac);
    void solve_network(const Eigen::VectorXd& xs, Eigen::VectorXcd& vv);
    void ode_rhs(const Eigen::VectorXd& xs, const Eigen::VectorXcd& vv, Eigen::VectorXd& dx);
    std::pair<double, double> load_bus_pq(const LoadRt& lr, const Eigen::VectorXcd& vv) const;
};

void TdSim::Impl::rebuild_split_y() {
    const std::size_t n = static_cast<std::size_t>(n_nodes);
    y_re.assign(n * n, 0.0);
    y_im.assign(n * n, 0.0);
    Eigen::MatrixXcd y = ybase;
    for (const auto& [node, yf] : active_faults) y(node, node) += yf;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            y_re[r * n + c] = y(r, c).real();
            y_im[r * n + c] = y(r, c).imag();
        }
    }
    y_dirty = false;
    have_factor = false;
}

Complex TdSim::Impl::isrc_at(const Eigen::VectorXd& xs, int node) const {
    Complex s{0.0, 0.0};
    for (const auto& g : gens) {
        if (g.node == node) s += g.y * std::polar(g.e_mag, xs[g.x_off]);
    }
    for (const auto& m : motors) {
        if (m.node == node) s += m.y_sys * Complex{xs[m.x_off], xs[m.x_off + 1]};
    }
    return s;
}

void TdSim::Impl::build_isrc(const Eigen::VectorXd& xs, std::vector<double>& sr,
                             std::vector<double>& si) const {
    sr.assign(n_nodes, 0.0);
    si.assign(n_nodes, 0.0);
    for (const auto& g : gens) {
        const Complex e = g.y * std::polar(g.e_mag, xs[g.x_off]);
        sr[g.node] += e.real();
        si[g.node] += e.imag();
    }
    for (const auto& m : motors) {
        const Complex e = m.y_sys * Complex{xs[m.x_off], xs[m.x_off + 1]};
        sr[m.node] += e.real();
        si[m.node] += e.imag();
    }
}

double TdSim::Impl::residual(const Eigen::VectorXcd& vv, const std::vector<double>& sr,
                             const std::vector<double>& si, Eigen::VectorXd& f) {
    const std::size_t n = static_cast<std::size_t>(n_nodes);
    vr.resize(n);
    vi.resize(n);
    ir.resize(n);
    ii.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        vr[k] = vv(static_cast<Eigen::Index>(k)).real();
        vi[k] = vv(static_cast<Eigen::Index>(k)).imag();
    }
    kernels::active().cmatvec(y_re.data(), y_im.data(), vr.data(), vi.data(), ir.data(),
                              ii.data(), n);

    f.resize(2 * n_nodes);
    for (int k = 0; k < n_nodes; ++k) {
        f(k) = ir[k] - sr[k];
        f(n_nodes + k) = ii[k] - si[k];
    }
    // nonlinear drawn currents: conj(S(|V|)/V)
    for (const auto& lr : loads) {
        const auto& inj = lr.injector;
        if (inj.node < 0) continue;
        const double re = vr[inj.node], im = vi[inj.node];
        const double u2 = re * re + im * im;
        const double vm = std::sqrt(u2);
        if (vm < 1e-9) continue;  // dead node, loads contribute nothing
        double p = 0.0, q = 0.0, dp = 0.0, dq = 0.0;
        inj.eval(vm, p, q, dp, dq);
        f(inj.node) += (p * re + q * im) / u2;
        f(n_nodes + inj.node) += (p * im - q * re) / u2;
    }
    double norm = 0.0;
    for (int k = 0; k < 2 * n_nodes; ++k) norm = std::max(norm, std::abs(f(k)));
    return norm;
}

void TdSim::Impl::build_jacobian(const Eigen::VectorXcd& vv, Eigen::MatrixXd& jac) {
    const int n = n_nodes;
    jac.setZero(2 * n, 2 * n);
    Eigen::MatrixXcd y = ybase;
    for (const auto& [node, yf] : active_faults) y(node, node) += yf;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const double g = y(r, c).real(), b = y(r, c).imag();
            jac(r, c) = g;
            jac(r, n + c) = -b;
            jac(n + r, c) = b;
            jac(n + r, n + c) = g;
        }
    }
    for (const auto& lr : loads) {
        const auto& inj = lr.injector;
        if (inj.node < 0) continue;
        const double re = vv(inj.node).real(), im = vv(inj.node).imag();
        const double u2 = re * re + im * im;
        const double vm = std::sqrt(u2);
        if (vm < 1e-9) continue;
        double p = 0.0, q = 0.0, dp = 0.0, dq = 0.0;
        inj.eval(vm, p, q, dp, dq);
        const double ire = (p * re + q * im) / u2;
        const double iim = (p * im - q * re) / u2;
        const double dvm_dre = re / vm, dvm_dim = im / vm;
        jac(inj.node, inj.node) +=
            (p + dp * dvm_dre * re + dq * dvm_dre * im) / u2 - 2.0 * re * ire / u2;
        jac(inj.node, n + inj.node) +=
            (q + dp * dvm_dim * re + dq * dvm_dim * im) / u2 - 2.0 * im * ire / u2;
        jac(n + inj.node, inj.node) +=
            (-q + dp * dvm_dre * im - dq * dvm_dre * re) / u2 - 2.0 * re * iim / u2;
        jac(n + inj.node, n + inj.node) +=
            (p + dp * dvm_dim * im - dq * dvm_dim * re) / u2 - 2.0 * im * iim / u2;
    }
}

void TdSim::Impl::solve_network(const Eigen::VectorXd& xs, Eigen::VectorXcd& vv) {
    if (y_dirty) rebuild_split_y();
    std::vector<double> sr, si;
    build_isrc(xs, sr, si);

    Eigen::VectorXd f;
    double fn = residual(vv, sr, si, f);
    if (fn <= cfg.solver_tol) return;

    Eigen::MatrixXd jac;
    double fn_prev = 1e300;
    int refreshes = 0;
    for (int iter = 0; iter < cfg.max_alg_iter; ++iter) {
        // reuse the factorization until convergence degrades
        if (!have_factor || (iter > 0 && fn > 0.5 * fn_prev)) {
            if (refreshes > 3) break;
            build_jacobian(vv, jac);
            lu.compute(jac);
            have_factor = true;
            ++refreshes;
        }
        Eigen::VectorXd dx = lu.solve(-f);
        if (!dx.allFinite()) {
            have_factor = false;
            break;
        }
        double alpha = 1.0;
        Eigen::VectorXcd v_new = vv;
        Eigen::VectorXd f_new;
        double fn_new = fn;
        for (int damp = 0; damp < 5; ++damp) {
            for (int k = 0; k < n_nodes; ++k) {
                v_new(k) = vv(k) + alpha * Complex{dx(k), dx(n_nodes + k)};
            }
            fn_new = residual(v_new, sr, si, f_new);
            if (fn_new < fn || fn_new <= cfg.solver_tol) break;
            alpha *= 0.5;
        }
        fn_prev = fn;
        vv = v_new;
        f = f_new;
        fn = fn_new;
        if (fn <= cfg.solver_tol) return;
    }
    throw AlgebraicDivergence("network solve stalled at residual " + std::to_string(fn), t);
}

void TdSim::Impl::ode_rhs(const Eigen::VectorXd& xs, const Eigen::VectorXcd& vv,
                          Eigen::VectorXd& dx) {
    dx.setZero(x.size());
    double audit = 0.0;
    for (const auto& g : gens) {
        const double delta = xs[g.x_off];
        const double omega = xs[g.x_off + 1];
        const Complex e = std::polar(g.e_mag, delta);
        const Complex it = (e - vv(g.node)) * g.y;
        const double pe = (e * std::conj(it)).real();
        dx[g.x_off] = omega_syn * (omega - 1.0);
        dx[g.x_off + 1] = (g.pm - pe - g.d * (omega - 1.0)) / g.h2;
        audit += omega * (g.pm - pe);
    }
    for (const auto& m : motors) {
        const ImState st{xs[m.x_off], xs[m.x_off + 1], xs[m.x_off + 2]};
        const auto d = im_derivatives(*m.par, st, vv(m.node), omega_syn);
        dx[m.x_off] = d[0];
        dx[m.x_off + 1] = d[1];
        dx[m.x_off + 2] = d[2];
    }
    if (audit_slot >= 0) dx[audit_slot] = audit;
}

std::pair<double, double> TdSim::Impl::load_bus_pq(const LoadRt& lr,
                                                   const Eigen::VectorXcd& vv) const {
    const Complex vb = vv(lr.bus_node);
    if (lr.comp_node == lr.bus_node) {
        // direct-connected families evaluate their model in closed form
        LoadState st;
        st.sp = lr.sp_state;
        for (int k = 0; k < lr.x_count; ++k) st.x.push_back(x[lr.x_begin + k]);
        return lr.model->injection(st, vb);
    }
    const Complex vc = vv(lr.comp_node);
    const Complex i_drawn =
        lr.y_ff * vb + lr.y_ft * vc + Complex{0.0, lr.sub_shunt_b} * vb;
    const Complex s = vb * std::conj(i_drawn);
    return {s.real(), s.imag()};
}

void TdSim::Impl::assemble(const PowerFlowSolution& pf) {
    omega_syn = 2.0 * 3.14159265358979323846 * net.f_hz;
    n_case = static_cast<int>(net.buses.size());

    // decide load roster: explicit models plus the default conversion for
    // loaded buses without one
    std::vector<std::pair<int, LoadModelSpec>> roster;
    for (int bi = 0; bi < n_case; ++bi) {
        const auto& bus = net.buses[bi];
        const auto it = net.load_models.find(bus.id);
        if (it != net.load_models.end()) {
            roster.emplace_back(bi, it->second);
        } else if (std::abs(bus.p_load) > 1e-12 || std::abs(bus.q_load) > 1e-12) {
            LoadModelSpec def;
            def.type = LoadModelSpec::Type::StaticPreset;
            def.preset_name = "default_ip_zq";
            def.zip = zip_preset("default_ip_zq");
            roster.emplace_back(bi, def);
        }
    }

    // count internal nodes (every expanded composite feeder gets one)
    n_nodes = n_case;
    for (const auto& [bi, spec] : roster) {
        (void)bi;
        if (spec.type == LoadModelSpec::Type::ClmLite &&
            !(spec.clm.feeder_r == 0.0 && spec.clm.feeder_x == 0.0 && spec.clm.tap == 1.0)) {
            ++n_nodes;
        }
    }

    ybase.setZero(n_nodes, n_nodes);
    const auto ycase = build_ybus(net);
    for (int r = 0; r < n_case; ++r) {
        for (int c = 0; c < n_case; ++c) ybase(r, c) = ycase[r][c];
    }

    // generators
    int x_off = 0;
    gens.reserve(net.generators.size());
    for (std::size_t gi = 0; gi < net.generators.size(); ++gi) {
        const auto& gen = net.generators[gi];
        GenRt rt;
        rt.node = net.bus_index(gen.bus);
        const double base_ratio = net.system_mva_base / gen.mva_base;
        const double xdp_sys = gen.xdp * base_ratio;
        rt.y = 1.0 / Complex{0.0, xdp_sys};
        rt.h2 = 2.0 * gen.h * gen.mva_base / net.system_mva_base;
        rt.d = gen.d * gen.mva_base / net.system_mva_base;
        const Complex vt = pf.voltage(static_cast<std::size_t>(rt.node));
        const Complex s{pf.p_gen[gi], pf.q_gen[gi]};
        const Complex it = std::conj(s / vt);
        const Complex e = vt + Complex{0.0, xdp_sys} * it;
        rt.e_mag = std::abs(e);
        rt.x_off = x_off;
        x_off += 2;
        gens.push_back(rt);
        gen_ids.push_back(gen.bus);
        ybase(rt.node, rt.node) += rt.y;
    }
    // rotor angles and mechanical power at the solved point
    std::vector<double> delta0(gens.size()), pm0(gens.size());
    for (std::size_t gi = 0; gi < gens.size(); ++gi) {
        const auto& gen = net.generators[gi];
        const Complex vt = pf.voltage(static_cast<std::size_t>(gens[gi].node));
        const Complex s{pf.p_gen[gi], pf.q_gen[gi]};
        const Complex it = std::conj(s / vt);
        const double xdp_sys = gen.xdp * net.system_mva_base / gen.mva_base;
        const Complex e = vt + Complex{0.0, xdp_sys} * it;
        delta0[gi] = std::arg(e);
        const Complex ig = (e - vt) * gens[gi].y;
        pm0[gi] = (e * std::conj(ig)).real();
        gens[gi].pm = pm0[gi];
    }

    // loads
    int next_internal = n_case;
    for (const auto& [bi, spec] : roster) {
        const auto& bus = net.buses[bi];
        LoadRt lr;
        lr.family = spec.type;
        lr.bus_id = bus.id;
        lr.bus_node = bi;
        lr.comp_node = bi;
        lr.model = build_load_model(spec);
        const Complex v0 = pf.voltage(static_cast<std::size_t>(bi));
        LoadState st0;
        try {
            st0 = lr.model->init(v0, bus.p_load, bus.q_load);
        } catch (const InitError& e) {
            throw InitError("bus " + std::to_string(bus.id) + ": " + e.what());
        }
        lr.sp_state = st0.sp;

        switch (spec.type) {
            case LoadModelSpec::Type::Zip:
            case LoadModelSpec::Type::StaticPreset: {
                auto* zl = static_cast<ZipLoad*>(lr.model.get());
                ybase(bi, bi) += zip_linear_admittance(zl->z_);
                lr.injector.node = bi;
                lr.injector.has_zip = true;
                lr.injector.zp_i = zl->z_.p0 * zl->z_.p2c / zl->z_.v0;
                lr.injector.zp_p = zl->z_.p0 * zl->z_.p3c;
                lr.injector.zq_i = zl->z_.q0 * zl->z_.q2c / zl->z_.v0;
                lr.injector.zq_p = zl->z_.q0 * zl->z_.q3c;
                break;
            }
            case LoadModelSpec::Type::ZipIm: {
                auto* zl = static_cast<ZipImLoad*>(lr.model.get());
                if (zl->zip_active_) {
                    ybase(bi, bi) += zip_linear_admittance(zl->zip_);
                    lr.injector.node = bi;
                    lr.injector.has_zip = true;
                    lr.injector.zp_i = zl->zip_.p0 * zl->zip_.p2c / zl->zip_.v0;
                    lr.injector.zp_p = zl->zip_.p0 * zl->zip_.p3c;
                    lr.injector.zq_i = zl->zip_.q0 * zl->zip_.q2c / zl->zip_.v0;
                    lr.injector.zq_p = zl->zip_.q0 * zl->zip_.q3c;
                }
                ybase(bi, bi) += Complex{0.0, zl->b_comp_};
                if (zl->im_active_) {
                    MotorRt m;
                    m.par = &zl->im_;
                    m.scale = zl->im_scale_;
                    m.y_sys = m.scale / Complex{zl->im_.rs, zl->im_.xprime()};
                    m.node = bi;
                    m.x_off = x_off;
                    x_off += 3;
                    ybase(bi, bi) += m.y_sys;
                    lr.motor_slots.push_back(static_cast<int>(motors.size()));
                    motors.push_back(m);
                }
                break;
            }
            case LoadModelSpec::Type::ClmLite: {
                auto* cl = static_cast<ClmLiteLoad*>(lr.model.get());
                const bool expanded = !(spec.clm.feeder_r == 0.0 && spec.clm.feeder_x == 0.0 &&
                                        spec.clm.tap == 1.0);
                int cnode = bi;
                if (expanded) {
                    cnode = next_internal++;
                    const double a = cl->tap_;
                    Complex y = cl->feeder_y_;
                    if (std::abs(y) == 0.0) y = 1.0 / Complex{0.0, 1e-8};
                    lr.y_ff = y / (a * a);
                    lr.y_ft = -y / a;
                    lr.y_tf = -y / a;
                    lr.y_tt = y;
                    ybase(bi, bi) += lr.y_ff;
                    ybase(bi, cnode) += lr.y_ft;
                    ybase(cnode, bi) += lr.y_tf;
                    ybase(cnode, cnode) += lr.y_tt;
                    lr.sub_shunt_b = cl->sub_shunt_b_;
                    ybase(bi, bi) += Complex{0.0, cl->sub_shunt_b_};
                }
                lr.comp_node = cnode;
                ybase(cnode, cnode) += Complex{0.0, cl->b_comp_};
                lr.injector.node = cnode;
                if (cl->active_[5]) {
                    ybase(cnode, cnode) += zip_linear_admittance(cl->zip_);
                    lr.injector.has_zip = true;
                    lr.injector.zp_i = cl->zip_.p0 * cl->zip_.p2c / cl->zip_.v0;
                    lr.injector.zp_p = cl->zip_.p0 * cl->zip_.p3c;
                    lr.injector.zq_i = cl->zip_.q0 * cl->zip_.q2c / cl->zip_.v0;
                    lr.injector.zq_p = cl->zip_.q0 * cl->zip_.q3c;
                }
                if (cl->active_[4]) lr.injector.elec = &cl->elec_;
                if (cl->active_[3]) {
                    lr.injector.sp = &cl->md_;
                    // bound after loads vector settles
                }
                const ImParams* pars[3] = {&cl->ma_, &cl->mb_, &cl->mc_};
                for (int k = 0; k < 3; ++k) {
                    if (!cl->active_[k]) continue;
                    MotorRt m;
                    m.par = pars[k];
                    m.scale = cl->motor_scale_[k];
                    m.y_sys = m.scale / Complex{pars[k]->rs, pars[k]->xprime()};
                    m.node = cnode;
                    m.x_off = x_off;
                    x_off += 3;
                    ybase(cnode, cnode) += m.y_sys;
                    lr.motor_slots.push_back(static_cast<int>(motors.size()));
                    motors.push_back(m);
                }
                break;
            }
        }
        lr.x_begin = lr.motor_slots.empty() ? -1 : motors[lr.motor_slots.front()].x_off;
        lr.x_count = static_cast<int>(3 * lr.motor_slots.size());
        loads.push_back(std::move(lr));

        // seed initial motor states into the global vector later
        (void)st0;
    }
    for (auto& lr : loads) {
        if (lr.injector.sp) lr.injector.sp_state = &lr.sp_state;
    }

    n_ode = x_off;
    const int total = n_ode + (cfg.energy_audit ? 1 : 0);
    audit_slot = cfg.energy_audit ? n_ode : -1;
    x.setZero(total);
    for (std::size_t gi = 0; gi < gens.size(); ++gi) {
        x[gens[gi].x_off] = delta0[gi];
        x[gens[gi].x_off + 1] = 1.0;
    }

    // re-run load init to fetch states (models were initialized above)
    {
        std::size_t li = 0;
        for (const auto& [bi, spec] : roster) {
            (void)spec;
            auto& lr = loads[li++];
            if (lr.x_count == 0) continue;
            const Complex v0 = pf.voltage(static_cast<std::size_t>(bi));
            LoadState st = lr.model->init(v0, net.buses[bi].p_load, net.buses[bi].q_load);
            for (int k = 0; k < lr.x_count; ++k) x[lr.x_begin + k] = st.x[k];
        }
    }

    // kinetic-energy reference for the audit
    ke0 = 0.0;
    for (const auto& g : gens) ke0 += 0.5 * g.h2;  // omega = 1 at start

    // monitored buses
    if (!cfg.monitor_buses.empty()) {
        monitor_ids = cfg.monitor_buses;
    } else {
        for (const auto& [bus_id, spec] : net.load_models) {
            (void)spec;
            monitor_ids.push_back(bus_id);
        }
        if (monitor_ids.empty()) {
            for (const auto& bus : net.buses) {
                if (std::abs(bus.p_load) > 1e-12) monitor_ids.push_back(bus.id);
            }
        }
    }
    for (int id : monitor_ids) {
        const int bi = net.bus_index(id);
        if (bi < 0) throw ValidationError("monitored bus does not exist: " + std::to_string(id));
        monitor_nodes.push_back(bi);
    }

    // initial network state from the power flow
    v.setZero(n_nodes);
    for (int k = 0; k < n_case; ++k) v(k) = pf.voltage(static_cast<std::size_t>(k));
    for (const auto& lr : loads) {
        if (lr.comp_node >= n_case) {
            auto* cl = static_cast<ClmLiteLoad*>(lr.model.get());
            LoadState st;
            st.sp = lr.sp_state;
            for (int k = 0; k < lr.x_count; ++k) st.x.push_back(x[lr.x_begin + k]);
            v(lr.comp_node) = cl->solve_feeder_node(st, v(lr.bus_node));
        }
    }
    rebuild_split_y();
    solve_network(x, v);
}

TdSim::TdSim(const NetworkCase& net, const PowerFlowSolution& pf, const SimulationConfig& cfg)
    : impl_(std::make_unique<Impl>()) {
    if (!pf.converged) throw InitError("dynamic initialization needs a converged power flow");
    cfg.validate();
    impl_->net = net;
    impl_->cfg = cfg;
    impl_->assemble(pf);
}

TdSim::~TdSim() = default;
TdSim::TdSim(TdSim&&) noexcept = default;

double TdSim::time() const { return impl_->t; }

Complex TdSim::bus_voltage(int bus_id) const {
    const int bi = impl_->net.bus_index(bus_id);
    if (bi < 0) throw ValidationError("unknown bus " + std::to_string(bus_id));
    return impl_->v(bi);
}

const std::vector<int>& TdSim::monitored_buses() const { return impl_->monitor_ids; }
const std::vector<int>& TdSim::gen_labels() const { return impl_->gen_ids; }

double TdSim::max_state_derivative() {
    auto& im = *impl_;
    im.solve_network(im.x, im.v);
    Eigen::VectorXd dx;
    im.ode_rhs(im.x, im.v, dx);
    double mx = 0.0;
    for (int k = 0; k < im.n_ode; ++k) mx = std::max(mx, std::abs(dx[k]));
    return mx;
}

void TdSim::apply_event(const Event& ev) {
    auto& im = *impl_;
    switch (ev.kind) {
        case Event::Kind::ThreePhaseFault: {
            const int node = im.net.bus_index(ev.bus);
            if (node < 0) throw ValidationError("fault bus does not exist");
            im.active_faults.emplace_back(node, ev.fault_admittance);
            break;
        }
        case Event::Kind::FaultClear: {
            im.active_faults.clear();
            break;
        }
        case Event::Kind::BranchTrip: {
            auto& br = im.net.branches.at(static_cast<std::size_t>(ev.branch_index));
            if (!br.in_service) return;  // already out
            stamp_branch(im.ybase, im.net, br, -1.0);
            br.in_service = false;
            break;
        }
    }
    im.y_dirty = true;
}

void TdSim::step() {
    auto& im = *impl_;
    const double dt = im.cfg.dt;
    const int n = static_cast<int>(im.x.size());

    Eigen::VectorXd k1(n), k2(n), k3(n), k4(n);
    Eigen::VectorXd& xs = im.xs_scratch;

    // stage 1 reuses the solved network at the current point
    im.solve_network(im.x, im.v);
    im.ode_rhs(im.x, im.v, k1);

    Eigen::VectorXcd vs = im.v;
    xs = im.x + 0.5 * dt * k1;
    im.solve_network(xs, vs);
    im.ode_rhs(xs, vs, k2);

    xs = im.x + 0.5 * dt * k2;
    im.solve_network(xs, vs);
    im.ode_rhs(xs, vs, k3);

    xs = im.x + dt * k3;
    im.solve_network(xs, vs);
    im.ode_rhs(xs, vs, k4);

    im.x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    im.t += dt;
    im.v = vs;
    im.solve_network(im.x, im.v);

    // discrete load logic advances once per step on the end-of-step voltages
    bool sp_changed = false;
    for (auto& lr : im.loads) {
        if (!lr.model->has_discrete()) continue;
        const double before = lr.sp_state.frac_stalled;
        const double vm = std::abs(im.v(lr.comp_node));
        lr.sp_state = sp_im_update(*lr.injector.sp, lr.sp_state, vm, dt);
        if (lr.sp_state.frac_stalled != before) sp_changed = true;
    }
    if (sp_changed) im.have_factor = false;  // injection slopes moved
}

TdSim::Sample TdSim::sample() {
    auto& im = *impl_;
    Sample s;
    s.t = im.t;
    for (std::size_t k = 0; k < im.monitor_nodes.size(); ++k) {
        const int node = im.monitor_nodes[k];
        s.bus_v.push_back(std::abs(im.v(node)));
        double p = 0.0, q = 0.0;
        for (const auto& lr : im.loads) {
            if (lr.bus_node != node) continue;
            const auto [lp, lq] = im.load_bus_pq(lr, im.v);
            p += lp;
            q += lq;
        }
        s.bus_p.push_back(p);
        s.bus_q.push_back(q);
    }
    for (const auto& g : im.gens) {
        s.delta.push_back(im.x[g.x_off]);
        s.omega.push_back(im.x[g.x_off + 1]);
    }
    return s;
}

double TdSim::energy_audit_value() const {
    const auto& im = *impl_;
    if (im.audit_slot < 0) return 0.0;
    double ke = 0.0;
    for (const auto& g : im.gens) {
        const double w = im.x[g.x_off + 1];
        ke += 0.5 * g.h2 * w * w;
    }
    return im.x[im.audit_slot] - (ke - im.ke0);
}

// ---------------------------------------------------------------------------

Verdict check_stability(const Trajectory& traj, const StabilityCriteria& criteria,
                        double clear_time, double* first_violation) {
    if (first_violation) *first_violation = -1.0;
    if (criteria.enable_angle && traj.gen_delta.size() > 1) {
        for (std::size_t k = 0; k < traj.n_samples(); ++k) {
            double lo = 1e300, hi = -1e300;
            for (const auto& series : traj.gen_delta) {
                lo = std::min(lo, series[k]);
                hi = std::max(hi, series[k]);
            }
            if (hi - lo > criteria.max_angle_spread) {
                if (first_violation) *first_violation = traj.times[k];
                return Verdict::AngleUnstable;
            }
        }
    }
    if (criteria.enable_voltage) {
        const double deadline = clear_time + criteria.v_recovery_deadline;
        double worst = -1.0;
        for (std::size_t b = 0; b < traj.bus_ids.size(); ++b) {
            double t_rec = -1.0;
            bool any_after_clear = false;
            for (std::size_t k = 0; k < traj.n_samples(); ++k) {
                if (traj.times[k] < clear_time) continue;
                any_after_clear = true;
                if (traj.bus_v[b][k] >= criteria.v_recovery_floor) {
                    t_rec = traj.times[k];
                    break;
                }
            }
            if (!any_after_clear) continue;
            const bool violated =
                (t_rec < 0.0 && traj.times.back() > deadline) || (t_rec > deadline);
            if (violated) worst = (worst < 0.0) ? deadline : std::min(worst, deadline);
        }
        if (worst >= 0.0) {
            if (first_violation) *first_violation = worst;
            return Verdict::VoltageUnstable;
        }
    }
    return Verdict::Stable;
}

SimResult simulate(const NetworkCase& net, const std::vector<Event>& events,
                   const SimulationConfig& cfg, const StabilityCriteria& criteria) {
    cfg.validate();
    validate_events(events);

    SimResult res;
    PowerFlowOptions pf_opt;
    pf_opt.tol = 1e-10;
    pf_opt.max_iter = 50;
    PowerFlowSolution pf;
    try {
        pf = solve_powerflow(net, pf_opt);
    } catch (const NonConvergence&) {
        res.verdict = Verdict::NumericalFailure;
        res.detail = "pre-event power flow did not converge";
        return res;
    }

    TdSim sim(net, pf, cfg);

    const double dt = cfg.dt;
    const long long n_steps = std::llround(cfg.t_end / dt);
    const long long rec_every = std::max<long long>(1, std::llround(cfg.record_dt / dt));

    // events snap to the nearest step boundary
    std::vector<std::pair<long long, const Event*>> sched;
    double clear_time = 0.0;
    for (const auto& ev : events) {
        const long long idx = std::llround(ev.time / dt);
        sched.emplace_back(idx, &ev);
        if (ev.kind != Event::Kind::ThreePhaseFault) {
            clear_time = std::max(clear_time, static_cast<double>(idx) * dt);
        }
    }
    std::stable_sort(sched.begin(), sched.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    Trajectory& traj = res.trajectory;
    traj.bus_ids = sim.monitored_buses();
    traj.gen_ids = sim.gen_labels();
    traj.bus_v.resize(traj.bus_ids.size());
    traj.bus_p.resize(traj.bus_ids.size());
    traj.bus_q.resize(traj.bus_ids.size());
    traj.gen_delta.resize(traj.gen_ids.size());
    traj.gen_omega.resize(traj.gen_ids.size());

    std::vector<bool> recovered(traj.bus_ids.size(), false);
    bool past_clear = false;
    bool violated = false;

    auto record = [&](double t_now) {
        const auto s = sim.sample();
        traj.times.push_back(t_now);
        for (std::size_t b = 0; b < traj.bus_ids.size(); ++b) {
            traj.bus_v[b].push_back(s.bus_v[b]);
            traj.bus_p[b].push_back(s.bus_p[b]);
            traj.bus_q[b].push_back(s.bus_q[b]);
        }
        for (std::size_t g = 0; g < traj.gen_ids.size(); ++g) {
            traj.gen_delta[g].push_back(s.delta[g]);
            traj.gen_omega[g].push_back(s.omega[g]);
        }
        if (violated) return;
        // inline criteria (same rules check_stability applies afterwards)
        if (criteria.enable_angle && s.delta.size() > 1) {
            const auto [lo, hi] = std::minmax_element(s.delta.begin(), s.delta.end());
            if (*hi - *lo > criteria.max_angle_spread) {
                res.verdict = Verdict::AngleUnstable;
                res.first_violation_time = t_now;
                violated = true;
                return;
            }
        }
        if (criteria.enable_voltage && t_now >= clear_time) {
            if (!past_clear) {
                past_clear = true;
                std::fill(recovered.begin(), recovered.end(), false);
            }
            for (std::size_t b = 0; b < traj.bus_ids.size(); ++b) {
                if (!recovered[b] && s.bus_v[b] >= criteria.v_recovery_floor) {
                    recovered[b] = true;
                }
                if (!recovered[b] && t_now > clear_time + criteria.v_recovery_deadline) {
                    res.verdict = Verdict::VoltageUnstable;
                    res.first_violation_time = clear_time + criteria.v_recovery_deadline;
                    violated = true;
                    return;
                }
            }
        }
    };

    std::size_t ev_cursor = 0;
    try {
        for (long long k = 0; k <= n_steps; ++k) {
            while (ev_cursor < sched.size() && sched[ev_cursor].first <= k) {
                sim.apply_event(*sched[ev_cursor].second);
                ++ev_cursor;
            }
            if (k % rec_every == 0 || k == n_steps) {
                record(static_cast<double>(k) * dt);
                if (violated && cfg.stop_on_violation) break;
            }
            if (k < n_steps) sim.step();
        }
        res.energy_imbalance = std::abs(sim.energy_audit_value());
    } catch (const AlgebraicDivergence& e) {
        res.verdict = Verdict::NumericalFailure;
        res.first_violation_time = e.time;
        res.detail = e.what();
        return res;
    }

    if (!violated) {
        double fv = -1.0;
        res.verdict = check_stability(traj, criteria, clear_time, &fv);
        res.first_violation_time = fv;
    }
    return res;
}

}  // namespace tslim
