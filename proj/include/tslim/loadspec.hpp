#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tslim {

// Fractions are carried as exact integer numerators over a fixed denominator,
// so action transfers and simplex sums never accumulate floating-point drift.
// 720720000 is divisible by 1..16, 20, 1000: uniform starts for 2/3/6
// components and steps of 0.05, 0.01, ... are all exact.
inline constexpr long long kFractionDen = 720720000LL;

// Simplex (or a concatenation of independent simplexes) of component
// fractions. `group_start` marks where each independent simplex begins; the
// common case is a single group covering all labels.
struct LoadComposition {
    std::vector<std::string> labels;
    std::vector<long long> num;
    std::vector<std::size_t> group_start{0};

    std::size_t size() const { return num.size(); }
    std::size_t n_groups() const { return group_start.size(); }
    // [begin, end) of group g
    std::pair<std::size_t, std::size_t> group(std::size_t g) const;

    double f(std::size_t i) const { return static_cast<double>(num[i]) / kFractionDen; }
    std::vector<double> fractions() const;

    void validate() const;  // every group sums to kFractionDen, entries in range

    bool operator==(const LoadComposition& o) const { return num == o.num; }
    bool operator<(const LoadComposition& o) const { return num < o.num; }

    static LoadComposition uniform(std::vector<std::string> labels,
                                   std::vector<std::size_t> group_start = {0});
    // Rationalize doubles (largest-remainder rounding per group).
    static LoadComposition from_fractions(std::vector<std::string> labels,
                                          const std::vector<double>& f,
                                          std::vector<std::size_t> group_start = {0});
};

struct ZipParams {
    double p0 = 0.0, q0 = 0.0;  // pu steady-state draw
    double v0 = 1.0;            // pu reference voltage
    double p1c = 0.0, p2c = 0.0, p3c = 1.0;  // Z, I, P shares of P
    double q1c = 0.0, q2c = 0.0, q3c = 1.0;  // Z, I, P shares of Q
    void validate() const;
};

struct ImParams {
    double rs = 0.035, xs = 0.10;  // stator, pu on mva_base
    double rr = 0.018, xr = 0.12;  // rotor
    double xm = 3.0;               // magnetizing
    double h = 0.6;                // s
    double tm0 = 0.0;              // mechanical torque base, set at init
    double mva_base = 100.0;
    double loading = 0.8;          // design loading used to size mva_base at init
    double torque_exp = 2.0;       // exponent on (1 - slip) in the load torque
    double xprime() const { return xs + xm * xr / (xm + xr); }
    void validate() const;
};

struct ImState {
    double vdp = 0.0;   // transient internal voltage, d axis, motor base
    double vqp = 0.0;   // q axis
    double slip = 0.0;  // pu
};

struct ElectronicLoadParams {
    double p0 = 0.0, q0 = 0.0;
    double v_full = 0.7;  // full-power voltage
    double v_off = 0.5;   // cut-off voltage
    void validate() const;
};

struct SinglePhaseImParams {
    double p0 = 0.0, q0 = 0.0;
    double v_stall = 0.55;
    double t_stall = 0.033;  // s of continuous undervoltage before stalling
    double g_stall = 5.0;    // pu stall conductance on the component's own base
    double b_stall = 4.0;    // pu stall susceptance (consumption)
    double f_restart = 0.3;
    double v_restart = 0.70;
    double qp_ratio = 0.33;  // running q0/p0 (power factor about 0.95)
    void validate() const;
};

struct ZipImParams {
    double f_zip = 0.5, f_im = 0.5;
    ZipParams zip;
    ImParams im;
};

struct ClmLiteParams {
    double feeder_r = 0.04, feeder_x = 0.04;  // pu on system base
    double shunt_b = 0.0;                     // substation shunt, pu
    double tap = 1.0;                         // fixed substation ratio
    LoadComposition fractions;                // over {ma, mb, mc, md, elec, zip}
    ImParams ma, mb, mc;
    SinglePhaseImParams md;
    ElectronicLoadParams elec;
    ZipParams zip;

    static const std::vector<std::string>& component_labels();
};

struct LoadModelSpec {
    enum class Type { Zip, ZipIm, ClmLite, StaticPreset };
    Type type = Type::Zip;
    ZipParams zip;
    ZipImParams zip_im;
    ClmLiteParams clm;
    std::string preset_name;  // for StaticPreset

    // Preset/ZIP families resolve to plain ZIP coefficients.
    ZipParams resolved_zip() const;

    static LoadModelSpec static_preset(const std::string& name);
    static LoadModelSpec from_json_text(const std::string& text, const std::string& origin);
    static LoadModelSpec from_json_file(const std::string& path);
    std::string to_json_text() const;
};

// Named industry compositions: "40Z60P", "30Z30I40P", and the default
// conversion for buses without an explicit model ("default_ip_zq": constant
// current for P, constant impedance for Q).
ZipParams zip_preset(const std::string& name);

// Default motor parameter blocks: "ma" constant-torque commercial
// compressors, "mb" high-inertia fans, "mc" low-inertia pumps, "im" the
// generic aggregate machine. Midpoints of the shipped sampling ranges.
ImParams motor_preset(const std::string& name);

}  // namespace tslim
