#include "tslim/powerflow.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "tslim/errors.hpp"

namespace tslim {

namespace {

struct PfWork {
    const NetworkCase& net;
    std::size_t n;
    Eigen::MatrixXd g, b;             // Ybus split
    std::vector<double> p_spec;       // generation minus load, pu
    std::vector<double> q_spec;
    std::vector<BusKind> kind;        // effective kind (after switching)
    std::vector<double> v_sched;      // scheduled magnitude at PV/slack
    std::vector<double> q_gen_min, q_gen_max;  // per-bus aggregate generator limits
    std::vector<bool> has_gen;
    std::vector<int> switch_count;
};

void calc_injections(const PfWork& w, const std::vector<double>& vm,
                     const std::vector<double>& va, std::vector<double>& p,
                     std::vector<double>& q) {
    const std::size_t n = w.n;
    for (std::size_t i = 0; i < n; ++i) {
        double pi = 0.0, qi = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double gik = w.g(i, k), bik = w.b(i, k);
            if (gik == 0.0 && bik == 0.0) continue;
            const double th = va[i] - va[k];
            const double c = std::cos(th), s = std::sin(th);
            pi += vm[k] * (gik * c + bik * s);
            qi += vm[k] * (gik * s - bik * c);
        }
        p[i] = vm[i] * pi;
        q[i] = vm[i] * qi;
    }
}

}  // namespace

PowerFlowSolution solve_powerflow(const NetworkCase& net, const PowerFlowOptions& opt) {
    PowerFlowSolution sol = try_powerflow(net, opt);
    if (!sol.converged) {
        throw NonConvergence("power flow did not converge in " +
                                 std::to_string(opt.max_iter) + " iterations (max mismatch " +
                                 std::to_string(sol.max_mismatch) + " pu)",
                             sol.trace);
    }
    return sol;
}

PowerFlowSolution try_powerflow(const NetworkCase& net, const PowerFlowOptions& opt) {
    if (opt.tol <= 0.0) throw ValidationError("power flow tolerance must be positive");
    net.validate();

    const std::size_t n = net.buses.size();
    PfWork w{net, n, Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n),
             std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
             std::vector<BusKind>(n), std::vector<double>(n, 1.0),
             std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
             std::vector<bool>(n, false), std::vector<int>(n, 0)};

    const auto y = build_ybus(net);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            w.g(i, k) = y[i][k].real();
            w.b(i, k) = y[i][k].imag();
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        w.kind[i] = net.buses[i].kind;
        w.v_sched[i] = net.buses[i].v_mag;
        w.p_spec[i] = -net.buses[i].p_load;
        w.q_spec[i] = -net.buses[i].q_load;
    }
    for (const auto& gen : net.generators) {
        const std::size_t i = static_cast<std::size_t>(net.bus_index(gen.bus));
        w.p_spec[i] += gen.p_set;
        w.q_gen_min[i] += gen.q_min;
        w.q_gen_max[i] += gen.q_max;
        w.has_gen[i] = true;
        w.v_sched[i] = gen.v_set;
    }

    std::vector<double> vm(n), va(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (w.kind[i] == BusKind::PQ) {
            vm[i] = opt.flat_start ? 1.0 : net.buses[i].v_mag;
            va[i] = opt.flat_start ? 0.0 : net.buses[i].v_ang;
        } else {
            vm[i] = w.v_sched[i];
            va[i] = opt.flat_start ? 0.0 : net.buses[i].v_ang;
        }
    }
    const std::size_t slack = static_cast<std::size_t>(net.slack_index());
    va[slack] = net.buses[slack].v_ang;

    std::vector<double> p_calc(n), q_calc(n);
    std::ostringstream trace;
    PowerFlowSolution sol;
    sol.v_mag = vm;
    sol.v_ang = va;

    int iter = 0;
    for (;; ++iter) {
        calc_injections(w, vm, va, p_calc, q_calc);

        // Q-limit handling: pinned buses get their Q target; at most one
        // switching pass per iteration, capped per bus to avoid cycling.
        if (opt.enforce_q_limits && iter > 0) {
            bool switched = false;
            for (std::size_t i = 0; i < n && !switched; ++i) {
                if (!w.has_gen[i] || i == slack) continue;
                const double q_gen = q_calc[i] + net.buses[i].q_load;
                if (w.kind[i] == BusKind::PV && w.switch_count[i] < 4) {
                    if (q_gen > w.q_gen_max[i] + 1e-9) {
                        w.kind[i] = BusKind::PQ;
                        w.q_spec[i] = w.q_gen_max[i] - net.buses[i].q_load;
                        ++w.switch_count[i];
                        switched = true;
                    } else if (q_gen < w.q_gen_min[i] - 1e-9) {
                        w.kind[i] = BusKind::PQ;
                        w.q_spec[i] = w.q_gen_min[i] - net.buses[i].q_load;
                        ++w.switch_count[i];
                        switched = true;
                    }
                } else if (w.kind[i] == BusKind::PQ && net.buses[i].kind == BusKind::PV &&
                           w.switch_count[i] < 4) {
                    // pinned at a limit: release when voltage error reverses
                    const double q_gen_tgt = w.q_spec[i] + net.buses[i].q_load;
                    const bool at_max = q_gen_tgt >= w.q_gen_max[i] - 1e-9;
                    if ((at_max && vm[i] > w.v_sched[i] + 1e-8) ||
                        (!at_max && vm[i] < w.v_sched[i] - 1e-8)) {
                        w.kind[i] = BusKind::PV;
                        vm[i] = w.v_sched[i];
                        ++w.switch_count[i];
                        switched = true;
                    }
                }
            }
            if (switched) calc_injections(w, vm, va, p_calc, q_calc);
        }

        std::vector<std::size_t> ang_idx, mag_idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (w.kind[i] != BusKind::Slack) ang_idx.push_back(i);
            if (w.kind[i] == BusKind::PQ) mag_idx.push_back(i);
        }
        const std::size_t na = ang_idx.size(), nm = mag_idx.size();

        Eigen::VectorXd mis(na + nm);
        double max_mis = 0.0;
        for (std::size_t a = 0; a < na; ++a) {
            mis(a) = w.p_spec[ang_idx[a]] - p_calc[ang_idx[a]];
            max_mis = std::max(max_mis, std::abs(mis(a)));
        }
        for (std::size_t m = 0; m < nm; ++m) {
            mis(na + m) = w.q_spec[mag_idx[m]] - q_calc[mag_idx[m]];
            max_mis = std::max(max_mis, std::abs(mis(na + m)));
        }

        trace << "iter " << iter << " max_mismatch " << max_mis << "\n";
        sol.max_mismatch = max_mis;
        sol.iterations = iter;
        if (max_mis <= opt.tol) {
            sol.converged = true;
            break;
        }
        if (iter >= opt.max_iter) break;

        Eigen::MatrixXd jac(na + nm, na + nm);
        for (std::size_t a = 0; a < na; ++a) {
            const std::size_t i = ang_idx[a];
            for (std::size_t a2 = 0; a2 < na; ++a2) {
                const std::size_t k = ang_idx[a2];
                if (i == k) {
                    jac(a, a2) = -q_calc[i] - w.b(i, i) * vm[i] * vm[i];
                } else {
                    const double th = va[i] - va[k];
                    jac(a, a2) = vm[i] * vm[k] *
                                 (w.g(i, k) * std::sin(th) - w.b(i, k) * std::cos(th));
                }
            }
            for (std::size_t m = 0; m < nm; ++m) {
                const std::size_t k = mag_idx[m];
                if (i == k) {
                    jac(a, na + m) = p_calc[i] / vm[i] + w.g(i, i) * vm[i];
                } else {
                    const double th = va[i] - va[k];
                    jac(a, na + m) =
                        vm[i] * (w.g(i, k) * std::cos(th) + w.b(i, k) * std::sin(th));
                }
            }
        }
        for (std::size_t q = 0; q < nm; ++q) {
            const std::size_t i = mag_idx[q];
            for (std::size_t a2 = 0; a2 < na; ++a2) {
                const std::size_t k = ang_idx[a2];
                if (i == k) {
                    jac(na + q, a2) = p_calc[i] - w.g(i, i) * vm[i] * vm[i];
                } else {
                    const double th = va[i] - va[k];
                    jac(na + q, a2) = -vm[i] * vm[k] *
                                      (w.g(i, k) * std::cos(th) + w.b(i, k) * std::sin(th));
                }
            }
            for (std::size_t m = 0; m < nm; ++m) {
                const std::size_t k = mag_idx[m];
                if (i == k) {
                    jac(na + q, na + m) = q_calc[i] / vm[i] - w.b(i, i) * vm[i];
                } else {
                    const double th = va[i] - va[k];
                    jac(na + q, na + m) =
                        vm[i] * (w.g(i, k) * std::sin(th) - w.b(i, k) * std::cos(th));
                }
            }
        }

        const Eigen::VectorXd dx = jac.partialPivLu().solve(mis);
        if (!dx.allFinite()) break;
        for (std::size_t a = 0; a < na; ++a) va[ang_idx[a]] += dx(a);
        for (std::size_t m = 0; m < nm; ++m) vm[mag_idx[m]] += dx(na + m);
    }

    sol.v_mag = vm;
    sol.v_ang = va;
    sol.trace = trace.str();

    // Recover generator outputs from the solved voltages.
    calc_injections(w, vm, va, p_calc, q_calc);
    sol.p_gen.assign(net.generators.size(), 0.0);
    sol.q_gen.assign(net.generators.size(), 0.0);
    std::vector<double> bus_qrange(n, 0.0);
    std::vector<double> bus_pset(n, 0.0);
    for (const auto& gen : net.generators) {
        const std::size_t i = static_cast<std::size_t>(net.bus_index(gen.bus));
        bus_qrange[i] += std::max(gen.q_max - gen.q_min, 1e-9);
        bus_pset[i] += std::max(gen.p_set, 1e-9);
    }
    for (std::size_t gi = 0; gi < net.generators.size(); ++gi) {
        const auto& gen = net.generators[gi];
        const std::size_t i = static_cast<std::size_t>(net.bus_index(gen.bus));
        const double q_bus = q_calc[i] + net.buses[i].q_load;
        // shared buses split Q by limit range and P (slack) by dispatch
        sol.q_gen[gi] = q_bus * std::max(gen.q_max - gen.q_min, 1e-9) / bus_qrange[i];
        if (i == slack) {
            const double p_bus = p_calc[i] + net.buses[i].p_load;
            sol.p_gen[gi] = p_bus * std::max(gen.p_set, 1e-9) / bus_pset[i];
        } else {
            sol.p_gen[gi] = gen.p_set;
        }
    }
    return sol;
}

std::vector<BranchFlow> branch_flows(const NetworkCase& net, const PowerFlowSolution& sol) {
    std::vector<BranchFlow> flows;
    flows.reserve(net.branches.size());
    for (std::size_t k = 0; k < net.branches.size(); ++k) {
        const auto& br = net.branches[k];
        BranchFlow f;
        f.branch_index = static_cast<int>(k);
        if (br.in_service) {
            const auto vi = sol.voltage(static_cast<std::size_t>(net.bus_index(br.from)));
            const auto vj = sol.voltage(static_cast<std::size_t>(net.bus_index(br.to)));
            const Complex ys = 1.0 / Complex{br.r, br.x};
            const Complex ysh{0.0, br.b_charging / 2.0};
            const double a = br.tap;
            const Complex if_ = (vi / a - vj) * ys / a + vi * ysh / (a * a);
            const Complex it = (vj - vi / a) * ys + vj * ysh;
            const Complex sf = vi * std::conj(if_);
            const Complex st = vj * std::conj(it);
            f.p_from = sf.real();
            f.q_from = sf.imag();
            f.p_to = st.real();
            f.q_to = st.imag();
            f.mva_max = std::max(std::abs(sf), std::abs(st));
        }
        flows.push_back(f);
    }
    return flows;
}

}  // namespace tslim
