#pragma once

#include <array>
#include <complex>
#include <memory>
#include <utility>

#include "tslim/loadspec.hpp"

namespace tslim {

using Complex = std::complex<double>;

inline constexpr double kOmegaSyn = 2.0 * 3.14159265358979323846 * 60.0;  // rad/s

// Below this voltage the constant-power and constant-current pieces of static
// loads revert to impedance behavior, matched at the breakpoint; a constant
// power draw has no network solution as V approaches zero.
inline constexpr double kLowVoltageBreak = 0.4;

// ---------------------------------------------------------------------------
// Static polynomial load: P and Q are quadratics in V/V0 (impedance, current,
// power shares).

std::pair<double, double> zip_pq(const ZipParams& z, double v);

// Split used by the network solver: the impedance share folds into the
// admittance matrix, the current+power shares stay as a nonlinear injection.
Complex zip_linear_admittance(const ZipParams& z);
std::pair<double, double> zip_pq_nonlinear(const ZipParams& z, double v);
std::pair<double, double> zip_dpq_dv_nonlinear(const ZipParams& z, double v);

// Evaluation with the low-voltage impedance conversion applied to the
// current+power shares (what bus models and the simulator actually consume).
std::pair<double, double> zip_pq_lv(const ZipParams& z, double v);

// ---------------------------------------------------------------------------
// Third-order induction motor. Electrical quantities are per-unit on the
// motor's own mva_base; voltage per-unit is common with the network.

struct ImInit {
    ImParams params;  // tm0 resolved so active power equals the target
    ImState state;
};

// Equilibrium at terminal voltage u drawing p_target (motor base). The slip
// solves the torque balance on the stable (low-slip) branch; throws
// NoEquilibrium when p_target exceeds the pull-out power at u.
ImInit im_init(const ImParams& base, Complex u, double p_target);

// d/dt of (vdp, vqp, slip) in 1/s.
std::array<double, 3> im_derivatives(const ImParams& m, const ImState& st, Complex u,
                                     double omega_syn = kOmegaSyn);

// Analytic 3x3 Jacobian of im_derivatives with respect to the state.
std::array<std::array<double, 3>, 3> im_state_jacobian(const ImParams& m, const ImState& st,
                                                       Complex u,
                                                       double omega_syn = kOmegaSyn);

// Stator current (u - v') / (rs + j xprime), motor base.
Complex im_stator_current(const ImParams& m, const ImState& st, Complex u);

// Terminal (p, q) on the motor base.
std::pair<double, double> im_pq(const ImParams& m, const ImState& st, Complex u);

// Equilibrium helpers (closed-form v' given slip).
ImState im_equilibrium_state(const ImParams& m, Complex u, double slip);
double im_equilibrium_power(const ImParams& m, Complex u, double slip);
double im_electrical_torque(const ImParams& m, const ImState& st, Complex u);
// Max equilibrium power over slip and its argmax.
std::pair<double, double> im_pullout(const ImParams& m, Complex u);

// ---------------------------------------------------------------------------
// Power-electronic load: piece-wise linear in V, unity power factor.

std::pair<double, double> electronic_pq(const ElectronicLoadParams& e, double v);
double electronic_dp_dv(const ElectronicLoadParams& e, double v);

// ---------------------------------------------------------------------------
// Single-phase motor, performance model: run / stall-after-timer / partial
// restart. Powers are per-unit on the system base (p0/q0 already scaled).

struct SpimState {
    double frac_stalled = 0.0;
    double uv_time = 0.0;      // continuous time spent below v_stall
    bool restart_done = false;  // one restart per stall episode
};

SpimState sp_im_update(const SinglePhaseImParams& s, const SpimState& st, double v, double dt);
std::pair<double, double> sp_im_pq(const SinglePhaseImParams& s, const SpimState& st, double v);
std::pair<double, double> sp_im_dpq_dv(const SinglePhaseImParams& s, const SpimState& st, double v);
// With the running share's low-voltage impedance conversion.
std::pair<double, double> sp_im_pq_lv(const SinglePhaseImParams& s, const SpimState& st, double v);

// ---------------------------------------------------------------------------
// Whole-bus load models. One instance is owned by a single simulation run:
// init resolves the internal scalings (component sizing, torque base,
// reactive compensation) so the model consumes exactly (p0, q0) at v0, and
// afterwards the parameters are immutable.

struct LoadState {
    std::vector<double> x;  // ODE states, motor components in declaration order
    SpimState sp;
};

class LoadModel {
public:
    virtual ~LoadModel() = default;

    virtual LoadState init(Complex v0, double p0, double q0) = 0;
    // Bus-side consumption (pu system base) at bus voltage v.
    virtual std::pair<double, double> injection(const LoadState& st, Complex v) const = 0;
    virtual void derivatives(const LoadState& st, Complex v, double* dx) const = 0;
    virtual std::size_t n_states() const = 0;
    virtual bool has_discrete() const { return false; }
    // Advance timers/stall fractions once per integration step.
    virtual void discrete_update(LoadState&, Complex /*v_bus*/, double /*dt*/) const {}
};

std::unique_ptr<LoadModel> build_load_model(const LoadModelSpec& spec);

// Concrete families. Members are exposed for the network assembler, which
// expands composite internals into the algebraic system.

class ZipLoad final : public LoadModel {
public:
    explicit ZipLoad(const ZipParams& coeffs) : z_(coeffs) {}
    LoadState init(Complex v0, double p0, double q0) override;
    std::pair<double, double> injection(const LoadState&, Complex v) const override;
    void derivatives(const LoadState&, Complex, double*) const override {}
    std::size_t n_states() const override { return 0; }

    ZipParams z_;
};

class ZipImLoad final : public LoadModel {
public:
    explicit ZipImLoad(const ZipImParams& p) : spec_(p) {}
    LoadState init(Complex v0, double p0, double q0) override;
    std::pair<double, double> injection(const LoadState& st, Complex v) const override;
    void derivatives(const LoadState& st, Complex v, double* dx) const override;
    std::size_t n_states() const override { return im_active_ ? 3 : 0; }

    ZipImParams spec_;
    ZipParams zip_;      // resolved
    ImParams im_;        // resolved (mva_base, tm0)
    bool im_active_ = false;
    bool zip_active_ = false;
    double b_comp_ = 0.0;  // compensating susceptance at the bus, pu system base
    double im_scale_ = 0.0;  // mva_base / system base
};

class ClmLiteLoad final : public LoadModel {
public:
    explicit ClmLiteLoad(const ClmLiteParams& p) : spec_(p) {}
    LoadState init(Complex v0, double p0, double q0) override;
    std::pair<double, double> injection(const LoadState& st, Complex v) const override;
    void derivatives(const LoadState& st, Complex v, double* dx) const override;
    std::size_t n_states() const override;
    bool has_discrete() const override { return active_[3]; }
    void discrete_update(LoadState& st, Complex v_bus, double dt) const override;

    // Feeder-end voltage consistent with the component injections at the
    // given state and bus voltage (the model's internal algebraic equation).
    Complex solve_feeder_node(const LoadState& st, Complex v_bus) const;
    // Total component consumption (pu system base) at feeder-end voltage.
    std::pair<double, double> component_pq(const LoadState& st, Complex v_int) const;

    ClmLiteParams spec_;
    // resolved at init
    ImParams ma_, mb_, mc_;
    SinglePhaseImParams md_;
    ElectronicLoadParams elec_;
    ZipParams zip_;
    bool active_[6] = {false, false, false, false, false, false};
    double motor_scale_[3] = {0.0, 0.0, 0.0};  // mva_base / system base
    double b_comp_ = 0.0;        // at the feeder-end node
    Complex feeder_y_;           // series admittance, system base
    double tap_ = 1.0;
    double sub_shunt_b_ = 0.0;   // substation shunt reflected to the bus side

private:
    // warm start for the repeated internal solves of one run
    mutable Complex v_int_cache_{1.0, 0.0};
    mutable bool cache_valid_ = false;
};

// Fraction-weighted composite consumption at a common component voltage: the
// sum of each active component's injection. Exposed for contract tests.
std::pair<double, double> composite_pq(const ClmLiteLoad& model, const LoadState& st,
                                       Complex v_component_node);

}  // namespace tslim
