#include "tslim/translim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tslim/errors.hpp"

namespace tslim {

using nlohmann::json;

const char* binding_name(BindingCriterion b) {
    switch (b) {
        case BindingCriterion::None: return "None";
        case BindingCriterion::Thermal: return "Thermal";
        case BindingCriterion::AngleUnstable: return "AngleUnstable";
        case BindingCriterion::VoltageUnstable: return "VoltageUnstable";
        case BindingCriterion::PowerFlowDiverged: return "PowerFlowDiverged";
    }
    return "?";
}

TransferStudy TransferStudy::from_json_text(const std::string& text, const NetworkCase& net) {
    json j;
    try {
        j = json::parse(text, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ParseError(std::string("study file: ") + e.what());
    }
    TransferStudy s;
    s.name = j.value("name", "study");
    s.sink_bus = j.at("sink_bus").get<int>();
    s.source_gen_buses = j.at("source_gen_buses").get<std::vector<int>>();
    if (j.contains("tie_lines")) {
        for (const auto& t : j.at("tie_lines")) {
            s.tie_lines.emplace_back(t.at(0).get<int>(), t.at(1).get<int>());
        }
    }
    s.p_base_mw = j.value("p_base_mw", -1.0);
    s.delta_p_mw = j.value("delta_p_mw", 50.0);
    s.p_cap_mw = j.value("p_cap_mw", 3000.0);
    s.assume_monotone = j.value("assume_monotone", false);
    if (j.contains("contingencies")) {
        s.contingencies = j.at("contingencies").get<std::vector<int>>();
    }
    if (j.contains("fault")) {
        const auto& f = j.at("fault");
        s.fault.fault_time = f.value("fault_time", s.fault.fault_time);
        s.fault.clearing_cycles = f.value("clearing_cycles", s.fault.clearing_cycles);
        s.fault.fault_b = f.value("fault_b", s.fault.fault_b);
        s.fault.t_end = f.value("t_end", s.fault.t_end);
        s.fault.dt = f.value("dt", s.fault.dt);
        s.fault.record_dt = f.value("record_dt", s.fault.record_dt);
    }
    if (j.contains("criteria")) {
        const auto& c = j.at("criteria");
        s.criteria.max_angle_spread = c.value("max_angle_spread", s.criteria.max_angle_spread);
        s.criteria.v_recovery_floor = c.value("v_recovery_floor", s.criteria.v_recovery_floor);
        s.criteria.v_recovery_deadline =
            c.value("v_recovery_deadline", s.criteria.v_recovery_deadline);
        s.criteria.enable_angle = c.value("enable_angle", s.criteria.enable_angle);
        s.criteria.enable_voltage = c.value("enable_voltage", s.criteria.enable_voltage);
    }

    if (net.bus_index(s.sink_bus) < 0) throw ValidationError("study sink bus does not exist");
    if (!(s.delta_p_mw > 0.0)) throw ValidationError("study requires delta_p > 0");
    for (int gb : s.source_gen_buses) {
        bool found = false;
        for (const auto& g : net.generators) found = found || g.bus == gb;
        if (!found) {
            throw ValidationError("study source generator bus " + std::to_string(gb) +
                                  " has no generator");
        }
    }
    return s;
}

TransferStudy TransferStudy::from_json_file(const std::string& path, const NetworkCase& net) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open study file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str(), net);
}

NetworkCase scale_operating_point(const NetworkCase& net, const TransferStudy& study,
                                  double p_level_mw) {
    const double base_mva = net.system_mva_base;
    const int sink_idx = net.bus_index(study.sink_bus);
    const double p_base_pu = net.buses[static_cast<std::size_t>(sink_idx)].p_load;
    const double q_base_pu = net.buses[static_cast<std::size_t>(sink_idx)].q_load;
    const double p_level_pu = p_level_mw / base_mva;
    if (p_level_pu < p_base_pu - 1e-12) {
        throw ValidationError("scaled level is below the base load");
    }

    NetworkCase out = net;
    auto& sink = out.buses[static_cast<std::size_t>(sink_idx)];
    sink.p_load = p_level_pu;
    sink.q_load = (p_base_pu > 0.0) ? p_level_pu * (q_base_pu / p_base_pu) : q_base_pu;

    double total_pset = 0.0;
    for (const auto& g : out.generators) {
        for (int gb : study.source_gen_buses) {
            if (g.bus == gb) total_pset += g.p_set;
        }
    }
    if (total_pset <= 0.0) throw ValidationError("study sources have no dispatch to scale");
    const double dp = p_level_pu - p_base_pu;
    for (auto& g : out.generators) {
        bool is_source = false;
        for (int gb : study.source_gen_buses) is_source = is_source || g.bus == gb;
        if (!is_source) continue;
        g.p_set += dp * (g.p_set / total_pset);
        if (g.p_set > g.p_max + 1e-9) {
            throw SourceCapacityExceeded("generator at bus " + std::to_string(g.bus) +
                                         " exceeds its ceiling at " +
                                         std::to_string(p_level_mw) + " MW");
        }
    }
    return out;
}

std::vector<int> resolve_contingencies(const NetworkCase& net, const TransferStudy& study) {
    std::vector<int> out;
    const auto consider = [&](int k) {
        if (!net.branches[static_cast<std::size_t>(k)].in_service) return;
        if (!net.connected(k)) return;  // islanding outages are excluded up front
        out.push_back(k);
    };
    if (!study.contingencies.empty()) {
        // canonical order: the assessed record must not depend on how the
        // study happened to list its outages
        std::vector<int> sorted = study.contingencies;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        for (int k : sorted) {
            if (k < 0 || k >= static_cast<int>(net.branches.size())) {
                throw ValidationError("contingency branch index out of range");
            }
            consider(k);
        }
    } else {
        for (int k = 0; k < static_cast<int>(net.branches.size()); ++k) consider(k);
    }
    return out;
}

StepRecord assess_point(const NetworkCase& net, const TransferStudy& study, double p_level_mw,
                        const TrajectorySink* capture) {
    StepRecord rec;
    rec.p_level_mw = p_level_mw;

    NetworkCase scaled;
    try {
        scaled = scale_operating_point(net, study, p_level_mw);
    } catch (const SourceCapacityExceeded&) {
        rec.static_ok = false;
        rec.feasible = false;
        rec.binding = BindingCriterion::PowerFlowDiverged;
        return rec;
    }

    PowerFlowOptions pf_opt;
    pf_opt.tol = 1e-8;
    pf_opt.max_iter = 40;
    const PowerFlowSolution base_pf = try_powerflow(scaled, pf_opt);
    if (!base_pf.converged) {
        rec.static_ok = false;
        rec.feasible = false;
        rec.binding = BindingCriterion::PowerFlowDiverged;
        return rec;
    }

    const auto contingencies = resolve_contingencies(scaled, study);
    rec.verdicts.reserve(contingencies.size());

    // static screen first; dynamics only when the whole level passes it
    for (int k : contingencies) {
        ContingencyVerdict cv;
        cv.branch_index = k;
        NetworkCase outaged = scaled;
        outaged.branches[static_cast<std::size_t>(k)].in_service = false;
        const PowerFlowSolution pf = try_powerflow(outaged, pf_opt);
        if (!pf.converged) {
            cv.static_ok = false;
            cv.max_loading = -1.0;
        } else {
            for (const auto& bf : branch_flows(outaged, pf)) {
                const auto& br = outaged.branches[static_cast<std::size_t>(bf.branch_index)];
                if (!br.in_service || br.rating <= 0.0) continue;
                cv.max_loading = std::max(cv.max_loading, bf.mva_max / br.rating);
            }
            cv.static_ok = cv.max_loading <= 1.0 + 1e-9;
        }
        rec.verdicts.push_back(cv);
    }
    for (const auto& cv : rec.verdicts) rec.static_ok = rec.static_ok && cv.static_ok;

    if (rec.static_ok) {
        for (auto& cv : rec.verdicts) {
            const auto& br = scaled.branches[static_cast<std::size_t>(cv.branch_index)];
            std::vector<Event> events;
            Event fault;
            fault.kind = Event::Kind::ThreePhaseFault;
            fault.bus = br.from;
            fault.time = study.fault.fault_time;
            fault.fault_admittance = Complex{0.0, study.fault.fault_b};
            events.push_back(fault);
            const double t_clear =
                study.fault.fault_time + study.fault.clearing_cycles / scaled.f_hz;
            Event clear;
            clear.kind = Event::Kind::FaultClear;
            clear.time = t_clear;
            events.push_back(clear);
            Event trip;
            trip.kind = Event::Kind::BranchTrip;
            trip.branch_index = cv.branch_index;
            trip.time = t_clear;
            events.push_back(trip);

            SimulationConfig cfg;
            cfg.dt = study.fault.dt;
            cfg.t_end = study.fault.t_end;
            cfg.record_dt = study.fault.record_dt;
            cfg.stop_on_violation = capture == nullptr;
            cfg.energy_audit = false;
            cfg.monitor_buses.push_back(study.sink_bus);
            for (const auto& [a, b2] : study.tie_lines) {
                cfg.monitor_buses.push_back(a);
                cfg.monitor_buses.push_back(b2);
            }
            std::sort(cfg.monitor_buses.begin(), cfg.monitor_buses.end());
            cfg.monitor_buses.erase(
                std::unique(cfg.monitor_buses.begin(), cfg.monitor_buses.end()),
                cfg.monitor_buses.end());

            const SimResult sim = simulate(scaled, events, cfg, study.criteria);
            cv.dynamics_run = true;
            cv.dynamic = sim.verdict;
            cv.first_violation = sim.first_violation_time;
            if (capture) (*capture)(cv.branch_index, sim);
        }
    }

    // feasibility and the binding contingency (lowest branch index among the
    // failures, so the record is order-independent)
    for (const auto& cv : rec.verdicts) {
        const bool ok = cv.static_ok && (!cv.dynamics_run || cv.dynamic == Verdict::Stable);
        if (!ok && rec.feasible) {
            rec.feasible = false;
        }
    }
    if (!rec.feasible) {
        for (const auto& cv : rec.verdicts) {
            if (!cv.static_ok) {
                rec.worst_contingency = cv.branch_index;
                rec.binding = (cv.max_loading < 0.0) ? BindingCriterion::PowerFlowDiverged
                                                     : BindingCriterion::Thermal;
                break;
            }
            if (cv.dynamics_run && cv.dynamic != Verdict::Stable) {
                rec.worst_contingency = cv.branch_index;
                switch (cv.dynamic) {
                    case Verdict::AngleUnstable:
                        rec.binding = BindingCriterion::AngleUnstable;
                        break;
                    case Verdict::VoltageUnstable:
                        rec.binding = BindingCriterion::VoltageUnstable;
                        break;
                    default:
                        rec.binding = BindingCriterion::PowerFlowDiverged;
                        break;
                }
                break;
            }
        }
    } else {
        // report the most loaded contingency as the closest margin
        double worst = -1.0;
        for (const auto& cv : rec.verdicts) {
            if (cv.max_loading > worst) {
                worst = cv.max_loading;
                rec.worst_contingency = cv.branch_index;
            }
        }
    }
    return rec;
}

namespace {

LimitResult finalize_from_steps(std::vector<StepRecord> steps) {
    LimitResult res;
    res.steps = std::move(steps);
    double last_feasible = -1.0;
    const StepRecord* first_infeasible = nullptr;
    for (const auto& st : res.steps) {
        if (first_infeasible == nullptr && st.feasible) last_feasible = st.p_level_mw;
        if (first_infeasible == nullptr && !st.feasible) first_infeasible = &st;
        if (first_infeasible && st.feasible) {
            res.notes.push_back("non-monotone: level " + format_double(st.p_level_mw) +
                                " MW feasible above an infeasible level");
        }
    }
    res.p_max_mw = last_feasible;
    if (first_infeasible) {
        res.binding_contingency = first_infeasible->worst_contingency;
        res.binding_criterion = first_infeasible->binding;
    }
    return res;
}

}  // namespace

LimitResult find_limit(const NetworkCase& net, const TransferStudy& study) {
    const int sink_idx = net.bus_index(study.sink_bus);
    const double p_base_mw = (study.p_base_mw > 0.0)
                                 ? study.p_base_mw
                                 : net.buses[static_cast<std::size_t>(sink_idx)].p_load *
                                       net.system_mva_base;

    std::vector<StepRecord> steps;
    StepRecord base = assess_point(net, study, p_base_mw);
    if (!base.feasible) {
        throw BaseInfeasible("base operating point at " + format_double(p_base_mw) +
                             " MW already violates (binding " +
                             std::string(binding_name(base.binding)) + ")");
    }
    steps.push_back(std::move(base));

    bool seen_infeasible = false;
    for (int k = 1;; ++k) {
        const double level = p_base_mw + k * study.delta_p_mw;
        if (level > study.p_cap_mw + 1e-9) break;
        StepRecord rec = assess_point(net, study, level);
        const bool feasible = rec.feasible;
        steps.push_back(std::move(rec));
        if (!feasible) {
            seen_infeasible = true;
            if (study.assume_monotone) break;
        }
    }
    LimitResult res = finalize_from_steps(std::move(steps));
    res.capped = !seen_infeasible;
    return res;
}

LimitResult find_limit_bisect(const NetworkCase& net, const TransferStudy& study) {
    const int sink_idx = net.bus_index(study.sink_bus);
    const double p_base_mw = (study.p_base_mw > 0.0)
                                 ? study.p_base_mw
                                 : net.buses[static_cast<std::size_t>(sink_idx)].p_load *
                                       net.system_mva_base;
    const long long k_max =
        static_cast<long long>(std::floor((study.p_cap_mw - p_base_mw) / study.delta_p_mw + 1e-9));

    std::map<long long, StepRecord> evaluated;
    const auto eval = [&](long long k) -> const StepRecord& {
        auto it = evaluated.find(k);
        if (it == evaluated.end()) {
            it = evaluated.emplace(k, assess_point(net, study, p_base_mw + k * study.delta_p_mw))
                     .first;
        }
        return it->second;
    };

    if (!eval(0).feasible) {
        throw BaseInfeasible("base operating point already violates");
    }
    LimitResult res;
    if (eval(k_max).feasible) {
        res.p_max_mw = p_base_mw + k_max * study.delta_p_mw;
        res.capped = true;
    } else {
        long long lo = 0, hi = k_max;  // lo feasible, hi infeasible
        while (hi - lo > 1) {
            const long long mid = lo + (hi - lo) / 2;
            if (eval(mid).feasible) lo = mid;
            else hi = mid;
        }
        res.p_max_mw = p_base_mw + lo * study.delta_p_mw;
        res.binding_contingency = eval(hi).worst_contingency;
        res.binding_criterion = eval(hi).binding;
    }
    for (auto& [k, rec] : evaluated) res.steps.push_back(std::move(rec));
    return res;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> sorted_models(const std::vector<TrendEntry>& entries) {
    std::set<std::string> models;
    for (const auto& e : entries) models.insert(e.model);
    return {models.begin(), models.end()};
}

std::vector<std::string> study_order(const std::vector<TrendEntry>& entries) {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        if (std::find(out.begin(), out.end(), e.study) == out.end()) out.push_back(e.study);
    }
    return out;
}

const TrendEntry* find_entry(const std::vector<TrendEntry>& entries, const std::string& study,
                             const std::string& model) {
    for (const auto& e : entries) {
        if (e.study == study && e.model == model) return &e;
    }
    return nullptr;
}

}  // namespace

std::string trend_report_csv(const std::vector<TrendEntry>& entries) {
    const auto models = sorted_models(entries);
    const auto studies = study_order(entries);
    std::ostringstream out;
    out << "study";
    for (const auto& m : models) out << "," << m;
    out << "\n";
    for (const auto& s : studies) {
        out << s;
        for (const auto& m : models) {
            const TrendEntry* e = find_entry(entries, s, m);
            out << ",";
            if (e) {
                out << format_double(e->p_max_mw);
                if (e->capped) out << "+";
            }
        }
        out << "\n";
    }
    return out.str();
}

std::string trend_report_text(const std::vector<TrendEntry>& entries) {
    const auto models = sorted_models(entries);
    const auto studies = study_order(entries);
    std::ostringstream out;
    std::size_t w = 12;
    for (const auto& m : models) w = std::max(w, m.size() + 2);
    out << std::left << std::setw(16) << "study";
    for (const auto& m : models) out << std::setw(static_cast<int>(w)) << m;
    out << "\n";
    for (const auto& s : studies) {
        out << std::left << std::setw(16) << s;
        for (const auto& m : models) {
            const TrendEntry* e = find_entry(entries, s, m);
            std::string cell = "-";
            if (e) {
                cell = format_double(e->p_max_mw);
                if (e->capped) cell += "+";
            }
            out << std::setw(static_cast<int>(w)) << cell;
        }
        out << "\n";
        // ascending ordering with explicit ties
        std::vector<const TrendEntry*> row;
        for (const auto& m : models) {
            if (const TrendEntry* e = find_entry(entries, s, m)) row.push_back(e);
        }
        std::stable_sort(row.begin(), row.end(), [](const TrendEntry* a, const TrendEntry* b) {
            return a->p_max_mw < b->p_max_mw;
        });
        out << "    order: ";
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i > 0) {
                out << (row[i]->p_max_mw == row[i - 1]->p_max_mw ? " = " : " <= ");
            }
            out << row[i]->model;
        }
        out << "\n";
    }
    return out.str();
}

std::string limit_to_json(const LimitResult& res, const TransferStudy& study,
                          const std::string& model_name, const NetworkCase& net) {
    json j;
    j["model"] = model_name;
    j["study"] = study.name;
    j["sink_bus"] = study.sink_bus;
    j["p_max_mw"] = res.p_max_mw;
    j["capped"] = res.capped;
    j["base_infeasible"] = res.base_infeasible;
    j["binding_criterion"] = binding_name(res.binding_criterion);
    if (res.binding_contingency >= 0) {
        const auto& br = net.branches[static_cast<std::size_t>(res.binding_contingency)];
        j["binding_contingency"] =
            json{{"index", res.binding_contingency}, {"from", br.from}, {"to", br.to}};
    }
    j["notes"] = res.notes;
    json steps = json::array();
    for (const auto& st : res.steps) {
        steps.push_back(json{{"p_level_mw", st.p_level_mw},
                             {"static_ok", st.static_ok},
                             {"feasible", st.feasible},
                             {"worst_contingency", st.worst_contingency},
                             {"binding", binding_name(st.binding)}});
    }
    j["steps"] = steps;
    return j.dump(2);
}

LimitResult limit_from_json_file(const std::string& path, std::string* model_name,
                                 std::string* study_name) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open limit file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("limit file " + path + ": " + e.what());
    }
    LimitResult res;
    res.p_max_mw = j.at("p_max_mw").get<double>();
    res.capped = j.value("capped", false);
    res.base_infeasible = j.value("base_infeasible", false);
    if (model_name) *model_name = j.value("model", "model");
    if (study_name) *study_name = j.value("study", "study");
    return res;
}

std::string steps_to_csv(const LimitResult& res, const NetworkCase& net) {
    std::ostringstream out;
    out << "p_level_mw,static_ok,feasible,binding,worst_contingency_from,worst_contingency_to\n";
    for (const auto& st : res.steps) {
        out << format_double(st.p_level_mw) << "," << (st.static_ok ? 1 : 0) << ","
            << (st.feasible ? 1 : 0) << "," << binding_name(st.binding) << ",";
        if (st.worst_contingency >= 0) {
            const auto& br = net.branches[static_cast<std::size_t>(st.worst_contingency)];
            out << br.from << "," << br.to;
        } else {
            out << ",";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace tslim
