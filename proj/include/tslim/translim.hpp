#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tslim/netcase.hpp"
#include "tslim/tdsim.hpp"

namespace tslim {

struct FaultTemplate {
    double fault_time = 0.5;      // s into the run
    double clearing_cycles = 5.0; // at system frequency; branch trips at clearing
    double fault_b = -1e5;        // pu fault shunt susceptance
    double t_end = 3.5;           // s simulated per contingency
    double dt = 1.0 / 240.0;
    double record_dt = 1.0 / 60.0;
};

struct TransferStudy {
    std::string name;
    std::vector<int> source_gen_buses;
    int sink_bus = 0;
    std::vector<std::pair<int, int>> tie_lines;  // reported, not inferred
    double p_base_mw = -1.0;  // <=0: taken from the case
    double delta_p_mw = 50.0;
    double p_cap_mw = 3000.0;
    std::vector<int> contingencies;  // branch indices; empty = all non-islanding outages
    FaultTemplate fault;
    StabilityCriteria criteria;
    bool assume_monotone = false;

    static TransferStudy from_json_text(const std::string& text, const NetworkCase& net);
    static TransferStudy from_json_file(const std::string& path, const NetworkCase& net);
};

enum class BindingCriterion {
    None,
    Thermal,
    AngleUnstable,
    VoltageUnstable,
    PowerFlowDiverged,
};
const char* binding_name(BindingCriterion b);

struct ContingencyVerdict {
    int branch_index = -1;
    bool static_ok = true;
    double max_loading = 0.0;  // worst post-outage flow / rating
    bool dynamics_run = false;
    Verdict dynamic = Verdict::Stable;
    double first_violation = -1.0;
};

struct StepRecord {
    double p_level_mw = 0.0;
    bool static_ok = true;   // base solve plus every post-outage screen
    bool feasible = true;
    int worst_contingency = -1;
    BindingCriterion binding = BindingCriterion::None;
    std::vector<ContingencyVerdict> verdicts;
};

struct LimitResult {
    double p_max_mw = 0.0;
    int binding_contingency = -1;
    BindingCriterion binding_criterion = BindingCriterion::None;
    bool capped = false;           // search ceiling reached while feasible
    bool base_infeasible = false;
    std::vector<StepRecord> steps;
    std::vector<std::string> notes;  // e.g. observed non-monotonicity
};

// Sink load raised to p_level at constant power factor; the increase is
// distributed over the source generators in proportion to their dispatch.
NetworkCase scale_operating_point(const NetworkCase& net, const TransferStudy& study,
                                  double p_level_mw);

// Branch indices of the study's contingency set (islanding outages excluded).
std::vector<int> resolve_contingencies(const NetworkCase& net, const TransferStudy& study);

// Full static + N-1 dynamic screen of one load level. Dynamic screening runs
// only when every static check passes, so the record is independent of
// contingency ordering. When `capture` is set, each simulated contingency
// trajectory is handed to it.
using TrajectorySink = std::function<void(int branch_index, const SimResult&)>;
StepRecord assess_point(const NetworkCase& net, const TransferStudy& study, double p_level_mw,
                        const TrajectorySink* capture = nullptr);

// Ascending sweep from the base load in delta_p steps. With assume_monotone
// the sweep stops at the first infeasible level; otherwise every level up to
// the cap is evaluated and non-monotonicity is logged. Throws BaseInfeasible
// when the starting point already violates.
LimitResult find_limit(const NetworkCase& net, const TransferStudy& study);

// Bisection accelerator over the same level lattice (valid under
// monotonicity; cross-checked against the sweep in tests).
LimitResult find_limit_bisect(const NetworkCase& net, const TransferStudy& study);

// ---------------------------------------------------------------------------

struct TrendEntry {
    std::string study;
    std::string model;
    double p_max_mw = 0.0;
    bool capped = false;
};

// Grid of limits (rows = studies, columns = models), CSV and aligned text
// with per-study orderings spelled out (ties marked explicitly).
std::string trend_report_csv(const std::vector<TrendEntry>& entries);
std::string trend_report_text(const std::vector<TrendEntry>& entries);

std::string limit_to_json(const LimitResult& res, const TransferStudy& study,
                          const std::string& model_name, const NetworkCase& net);
LimitResult limit_from_json_file(const std::string& path, std::string* model_name = nullptr,
                                 std::string* study_name = nullptr);
std::string steps_to_csv(const LimitResult& res, const NetworkCase& net);

}  // namespace tslim
