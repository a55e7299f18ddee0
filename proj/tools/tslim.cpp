// Transfer-limit laboratory command line: power flow, time-domain simulation,
// load-model fitting, N-1 transfer-limit assessment, and the end-to-end
// three-step pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tslim/errors.hpp"
#include "tslim/fitting.hpp"
#include "tslim/netcase.hpp"
#include "tslim/pipeline.hpp"
#include "tslim/powerflow.hpp"
#include "tslim/tdsim.hpp"
#include "tslim/translim.hpp"

namespace fs = std::filesystem;
using namespace tslim;

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cmd_powerflow(const std::string& case_path, double tol, int max_iter,
                  const std::string& out_path, bool verbose) {
    const NetworkCase net = load_case(case_path);
    PowerFlowOptions opt;
    opt.tol = tol;
    opt.max_iter = max_iter;
    const PowerFlowSolution sol = solve_powerflow(net, opt);
    if (verbose) std::cerr << sol.trace;

    std::ostringstream csv;
    csv << "bus,v_mag,v_ang_deg,p_inj_mw,q_inj_mvar\n";
    // net injection at each bus = generation minus load
    for (std::size_t i = 0; i < net.buses.size(); ++i) {
        double pg = 0.0, qg = 0.0;
        for (std::size_t g = 0; g < net.generators.size(); ++g) {
            if (net.bus_index(net.generators[g].bus) == static_cast<int>(i)) {
                pg += sol.p_gen[g];
                qg += sol.q_gen[g];
            }
        }
        const double p_inj = (pg - net.buses[i].p_load) * net.system_mva_base;
        const double q_inj = (qg - net.buses[i].q_load) * net.system_mva_base;
        csv << net.buses[i].id << "," << format_double(sol.v_mag[i]) << ","
            << format_double(sol.v_ang[i] * 180.0 / 3.14159265358979323846) << ","
            << format_double(p_inj) << "," << format_double(q_inj) << "\n";
    }
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        write_file(out_path, csv.str());
    }
    std::cerr << "converged in " << sol.iterations << " iterations, max mismatch "
              << sol.max_mismatch << " pu\n";
    return 0;
}

int cmd_simulate(const std::string& case_path, const std::string& events_path,
                 const std::string& config_path, const std::string& out_path) {
    const NetworkCase net = load_case(case_path);
    const auto events =
        events_path.empty() ? std::vector<Event>{} : events_from_json_file(events_path, net);
    SimulationConfig cfg;
    if (!config_path.empty()) cfg = SimulationConfig::from_json_file(config_path);
    StabilityCriteria criteria;
    const SimResult res = simulate(net, events, cfg, criteria);
    res.trajectory.write_csv(out_path);
    std::cerr << "verdict " << verdict_name(res.verdict);
    if (res.first_violation_time >= 0.0) {
        std::cerr << " at t=" << res.first_violation_time << " s";
    }
    std::cerr << "\n";
    return res.verdict == Verdict::NumericalFailure ? 1 : 0;
}

FitJob load_fit_job(const std::string& job_path, std::uint64_t seed_override, bool has_seed) {
    const auto text = read_text(job_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("fit job " + job_path + ": " + e.what());
    }
    const fs::path base = fs::path(job_path).parent_path();
    const auto resolve = [&](const std::string& p) {
        const fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };

    FitJob job;
    job.problem.family = family_from_name(j.at("family").get<std::string>());
    job.problem.reference =
        Trajectory::read_csv(resolve(j.at("reference_csv").get<std::string>()));
    job.problem.reference_bus = j.at("reference_bus").get<int>();
    if (j.contains("ranges")) {
        job.problem.ranges =
            ParameterRanges::from_json_file(resolve(j.at("ranges").get<std::string>()));
    }
    if (j.contains("loss")) {
        job.problem.loss.w_alpha = j.at("loss").value("w_alpha", job.problem.loss.w_alpha);
        job.problem.loss.w_beta = j.at("loss").value("w_beta", job.problem.loss.w_beta);
    }
    if (j.contains("pinball")) {
        job.problem.pinball.tau = j.at("pinball").value("tau", job.problem.pinball.tau);
        job.problem.pinball.quantile =
            j.at("pinball").value("quantile", job.problem.pinball.quantile);
    }
    if (j.contains("hyper")) {
        const auto& h = j.at("hyper");
        auto& d = job.hp.ddqn;
        d.lr_alpha = h.value("lr_alpha", d.lr_alpha);
        d.gamma = h.value("gamma", d.gamma);
        d.epsilon_start = h.value("epsilon_start", d.epsilon_start);
        d.epsilon_end = h.value("epsilon_end", d.epsilon_end);
        d.epsilon_decay_episodes = h.value("epsilon_decay_episodes", d.epsilon_decay_episodes);
        d.replay_capacity = h.value("replay_capacity", d.replay_capacity);
        d.batch_size = h.value("batch_size", d.batch_size);
        d.target_update_interval = h.value("target_update_interval", d.target_update_interval);
        d.episodes = h.value("episodes", d.episodes);
        d.max_steps_per_episode = h.value("max_steps_per_episode", d.max_steps_per_episode);
        d.double_dqn_canonical = h.value("double_dqn_canonical", d.double_dqn_canonical);
        if (h.contains("hidden")) d.hidden = h.at("hidden").get<std::vector<int>>();
        job.hp.delta_f = h.value("delta_f", job.hp.delta_f);
        job.hp.m_samples = h.value("m_samples", job.hp.m_samples);
        job.hp.loss_threshold = h.value("loss_threshold", job.hp.loss_threshold);
        job.hp.top_k = h.value("top_k", job.hp.top_k);
    }
    job.stage_two_draws = j.value("stage_two_draws", job.stage_two_draws);
    job.seed = has_seed ? seed_override : j.value("seed", 1ULL);
    return job;
}

int cmd_fit(const std::string& job_path, const std::string& out_dir, std::uint64_t seed,
            bool has_seed) {
    const FitJob job = load_fit_job(job_path, seed, has_seed);
    const FitOutcome outcome = run_fit(job);

    ensure_dir(out_dir);
    write_file(out_dir + "/model.json", outcome.fitted.to_json_text() + "\n");
    write_file(out_dir + "/reward_trace.csv", emit_convergence_csv(outcome.training));
    nlohmann::json cj = nlohmann::json::array();
    for (const auto& c : outcome.candidates) {
        nlohmann::json row;
        for (std::size_t i = 0; i < c.composition.size(); ++i) {
            row["composition"][c.composition.labels[i]] = c.composition.f(i);
        }
        row["mean_loss"] = c.mean_loss;
        row["pinball_score"] = c.pinball_score;
        row["final_loss"] = c.final_loss;
        row["best_params"] = c.best_params;
        cj.push_back(row);
    }
    write_file(out_dir + "/candidates.json", cj.dump(2) + "\n");
    std::cerr << "best composition pinball " << outcome.candidates.front().pinball_score
              << ", rmse_p " << outcome.rmse_p << ", rmse_q " << outcome.rmse_q << "\n";
    return 0;
}

int cmd_rank(const std::string& candidates_path, const std::string& job_path, double tau,
             double quantile, std::uint64_t seed, bool has_seed) {
    FitJob job = load_fit_job(job_path, seed, has_seed);
    job.problem.pinball.tau = tau;
    job.problem.pinball.quantile = quantile;

    const auto text = read_text(candidates_path);
    nlohmann::json j = nlohmann::json::parse(text);
    std::vector<CandidateSolution> candidates;
    const LoadComposition tmpl = job.problem.composition_template();
    for (const auto& row : j) {
        CandidateSolution c;
        std::vector<double> f(tmpl.size());
        for (std::size_t i = 0; i < tmpl.size(); ++i) {
            f[i] = row.at("composition").at(tmpl.labels[i]).get<double>();
        }
        c.composition = LoadComposition::from_fractions(tmpl.labels, f, tmpl.group_start);
        c.mean_loss = row.value("mean_loss", 0.0);
        candidates.push_back(std::move(c));
    }
    rank_candidates(candidates, job.problem, job.problem.pinball, job.hp.m_samples, job.seed);
    for (const auto& c : candidates) {
        std::cout << format_double(c.pinball_score);
        for (std::size_t i = 0; i < c.composition.size(); ++i) {
            std::cout << "," << format_double(c.composition.f(i));
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_assess(const std::string& case_path, const std::string& study_path,
               const std::string& model_path, const std::string& out_dir, bool bisect) {
    NetworkCase net = load_case(case_path);
    const TransferStudy study = TransferStudy::from_json_file(study_path, net);
    std::string model_name = "case_default";
    if (!model_path.empty()) {
        net.load_models[study.sink_bus] = LoadModelSpec::from_json_file(model_path);
        model_name = fs::path(model_path).stem().string();
    }
    const LimitResult res = bisect ? find_limit_bisect(net, study) : find_limit(net, study);

    ensure_dir(out_dir);
    write_file(out_dir + "/limit.json", limit_to_json(res, study, model_name, net) + "\n");
    write_file(out_dir + "/steps.csv", steps_to_csv(res, net));
    for (const auto& st : res.steps) {
        if (st.feasible) continue;
        TrajectorySink sink = [&](int branch_index, const SimResult& sim) {
            const auto& br = net.branches[static_cast<std::size_t>(branch_index)];
            sim.trajectory.write_csv(out_dir + "/binding_" + std::to_string(br.from) + "-" +
                                     std::to_string(br.to) + ".csv");
        };
        assess_point(net, study, st.p_level_mw, &sink);
        break;
    }
    std::cerr << "p_max " << res.p_max_mw << " MW, binding "
              << binding_name(res.binding_criterion) << (res.capped ? " (capped)" : "") << "\n";
    return 0;
}

int cmd_trend(const std::vector<std::string>& in_dirs, const std::string& out_path) {
    std::vector<TrendEntry> entries;
    for (const auto& dir : in_dirs) {
        const fs::path p = fs::path(dir) / "limit.json";
        std::string model, study;
        const LimitResult res = limit_from_json_file(p.string(), &model, &study);
        entries.push_back({study, model, res.p_max_mw, res.capped});
    }
    const std::string csv = trend_report_csv(entries);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        write_file(out_path, csv);
        const fs::path txt = fs::path(out_path).replace_extension(".txt");
        write_file(txt.string(), trend_report_text(entries));
    }
    return 0;
}

int cmd_pipeline(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed,
                 bool has_seed, bool verbose) {
    PipelineSpec spec = PipelineSpec::from_json_file(spec_path);
    if (!out_dir.empty()) spec.out_dir = out_dir;
    if (spec.out_dir.empty()) throw ParseError("pipeline needs an output directory");
    if (has_seed) spec.seed = seed;
    const PipelineResult res = run_pipeline(spec);
    for (const auto& line : res.stage_log) {
        if (verbose || res.exit_status != 0) std::cerr << line << "\n";
    }
    return res.exit_status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transient-stability transfer-limit laboratory"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    int threads = 1;
    std::string out;
    bool verbose = false;
    app.add_option("--seed", seed, "root random seed");
    app.add_option("--threads", threads, "worker threads for independent runs");
    app.add_option("--out", out, "output file or directory");
    app.add_flag("--verbose", verbose, "chatty diagnostics");

    // powerflow
    auto* pf = app.add_subcommand("powerflow", "solve the AC power flow");
    std::string pf_case;
    double pf_tol = 1e-6;
    int pf_iter = 30;
    pf->add_option("--case", pf_case, "case file")->required();
    pf->add_option("--tol", pf_tol, "mismatch tolerance, pu");
    pf->add_option("--max-iter", pf_iter, "iteration cap");

    // simulate
    auto* sim = app.add_subcommand("simulate", "run a time-domain simulation");
    std::string sim_case, sim_events, sim_config;
    sim->add_option("--case", sim_case, "case file")->required();
    sim->add_option("--events", sim_events, "event list (json)");
    sim->add_option("--config", sim_config, "simulation config (json)");

    // fit
    auto* fit = app.add_subcommand("fit", "two-stage load-model fitting");
    std::string fit_job;
    fit->add_option("--job", fit_job, "fit job (json)")->required();

    // rank
    auto* rank = app.add_subcommand("rank", "pinball-rank candidate compositions");
    std::string rank_candidates_path, rank_job;
    double rank_tau = 0.5, rank_quantile = 0.5;
    rank->add_option("--candidates", rank_candidates_path, "candidates json")->required();
    rank->add_option("--job", rank_job, "fit job (json)")->required();
    rank->add_option("--tau", rank_tau, "pinball penalize factor");
    rank->add_option("--quantile", rank_quantile, "quantile level");

    // assess
    auto* assess = app.add_subcommand("assess", "transfer-limit sweep for one model");
    std::string as_case, as_study, as_model;
    bool as_bisect = false;
    assess->add_option("--case", as_case, "case file")->required();
    assess->add_option("--study", as_study, "study file (json)")->required();
    assess->add_option("--load-model", as_model, "sink load model (json)");
    assess->add_flag("--bisect", as_bisect, "bisection accelerator");

    // trend-report
    auto* trend = app.add_subcommand("trend-report", "combine limit results into a table");
    std::vector<std::string> trend_in;
    trend->add_option("--in", trend_in, "result directories")->required()->expected(-1);

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "reference event -> fits -> limits");
    std::string pipe_spec;
    pipe->add_option("--spec", pipe_spec, "pipeline spec (json)")->required();

    CLI11_PARSE(app, argc, argv);
    const bool has_seed = app.count("--seed") > 0;
    (void)threads;

    try {
        if (*pf) return cmd_powerflow(pf_case, pf_tol, pf_iter, out, verbose);
        if (*sim) return cmd_simulate(sim_case, sim_events, sim_config,
                                      out.empty() ? "trajectory.csv" : out);
        if (*fit) return cmd_fit(fit_job, out.empty() ? "fit_out" : out, seed, has_seed);
        if (*rank) return cmd_rank(rank_candidates_path, rank_job, rank_tau, rank_quantile,
                                   seed, has_seed);
        if (*assess) return cmd_assess(as_case, as_study, as_model,
                                       out.empty() ? "assess_out" : out, as_bisect);
        if (*trend) return cmd_trend(trend_in, out);
        if (*pipe) return cmd_pipeline(pipe_spec, out, seed, has_seed, verbose);
    } catch (const NonConvergence& e) {
        std::cerr << "error: " << e.what() << "\n" << e.iteration_trace;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
