#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tslim/loadmodels.hpp"
#include "tslim/netcase.hpp"
#include "tslim/powerflow.hpp"
#include "tslim/trajectory.hpp"

namespace tslim {

struct Event {
    enum class Kind { ThreePhaseFault, BranchTrip, FaultClear };
    Kind kind = Kind::ThreePhaseFault;
    double time = 0.0;
    int bus = -1;                             // fault location (bus id)
    Complex fault_admittance{0.0, -1e5};      // shunt added while the fault is on
    int branch_index = -1;                    // trip target (case branch index)
};

std::vector<Event> events_from_json_text(const std::string& text, const NetworkCase& net);
std::vector<Event> events_from_json_file(const std::string& path, const NetworkCase& net);
void validate_events(const std::vector<Event>& events);

struct SimulationConfig {
    double dt = 1.0 / 240.0;
    double t_end = 5.0;
    double record_dt = 1.0 / 240.0;
    double solver_tol = 1e-8;
    int max_alg_iter = 25;
    std::vector<int> monitor_buses;  // empty: load-model buses, else loaded buses
    bool stop_on_violation = false;  // truncate once a criterion is violated
    bool energy_audit = true;        // integrate the rotor power balance alongside

    void validate() const;
    static SimulationConfig from_json_text(const std::string& text);
    static SimulationConfig from_json_file(const std::string& path);
};

struct StabilityCriteria {
    double max_angle_spread = 3.14159265358979323846;  // rad
    double v_recovery_floor = 0.8;                     // pu
    double v_recovery_deadline = 2.0;                  // s after fault clearing
    bool enable_angle = true;
    bool enable_voltage = true;
};

enum class Verdict { Stable, AngleUnstable, VoltageUnstable, NumericalFailure };
const char* verdict_name(Verdict v);

struct SimResult {
    Trajectory trajectory;
    Verdict verdict = Verdict::Stable;
    double first_violation_time = -1.0;  // <0 when stable
    std::string detail;
    double energy_imbalance = 0.0;  // |integrated rotor power - kinetic energy change|
};

// Compiled dynamic model: generators behind transient reactance, load models
// expanded into the algebraic network (composite feeder nodes become extra
// network nodes). One instance owns one run.
class TdSim {
public:
    // Back-solves generator internal voltages and initializes every load model
    // at the power-flow operating point; throws InitError when a load cannot
    // meet its target. The power flow should be converged tightly (~1e-10) or
    // the run starts slightly off equilibrium.
    TdSim(const NetworkCase& net, const PowerFlowSolution& pf, const SimulationConfig& cfg);
    ~TdSim();
    TdSim(TdSim&&) noexcept;

    // One fixed step of the partitioned scheme (4th-order stages for the ODE
    // states, damped Newton for the network inside each stage). Throws
    // AlgebraicDivergence when the network solve fails.
    void step();

    void apply_event(const Event& ev);

    double time() const;
    // Largest |d state/dt| over all ODE states at the current point.
    double max_state_derivative();
    // Solved voltage at a case bus (current step).
    Complex bus_voltage(int bus_id) const;

    struct Sample {
        double t;
        std::vector<double> bus_v, bus_p, bus_q;  // monitored buses
        std::vector<double> delta, omega;
    };
    Sample sample();
    const std::vector<int>& monitored_buses() const;
    const std::vector<int>& gen_labels() const;

    double energy_audit_value() const;  // integral minus kinetic-energy change

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Whole-run driver: tight power flow, initialization, event schedule (snapped
// to step boundaries), recording, verdict. Algebraic failures become a
// NumericalFailure verdict, never an exception.
SimResult simulate(const NetworkCase& net, const std::vector<Event>& events,
                   const SimulationConfig& cfg, const StabilityCriteria& criteria);

// Criteria application on a finished trajectory. `clear_time` anchors the
// voltage-recovery deadline (use the last fault-clearing/trip time).
Verdict check_stability(const Trajectory& traj, const StabilityCriteria& criteria,
                        double clear_time, double* first_violation = nullptr);

}  // namespace tslim
