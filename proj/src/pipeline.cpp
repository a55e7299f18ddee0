#include "tslim/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tslim/errors.hpp"

namespace tslim {

using nlohmann::json;
namespace fs = std::filesystem;

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw ParseError("cannot create directory " + path + ": " + ec.message());
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + path);
    out << content;
}

PipelineSpec PipelineSpec::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open pipeline spec: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str(), nullptr, true, true);
    } catch (const json::exception& e) {
        throw ParseError("pipeline spec " + path + ": " + e.what());
    }

    PipelineSpec spec;
    const fs::path base = fs::path(path).parent_path();
    const auto resolve = [&](const std::string& p) {
        const fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };

    spec.case_path = resolve(j.at("case").get<std::string>());
    const NetworkCase net = load_case(spec.case_path);

    spec.reference_model = LoadModelSpec::from_json_text(j.at("reference_model").dump(),
                                                         path + "#reference_model");
    spec.events = events_from_json_text(j.at("events").dump(), net);
    if (j.contains("reference_config")) {
        spec.reference_config = SimulationConfig::from_json_text(j.at("reference_config").dump());
    }
    for (const auto& f : j.at("fit_families")) {
        spec.fit_families.push_back(family_from_name(f.get<std::string>()));
    }
    if (j.contains("static_presets")) {
        spec.static_presets = j.at("static_presets").get<std::vector<std::string>>();
    }
    if (j.contains("ranges")) {
        spec.ranges = ParameterRanges::from_json_file(resolve(j.at("ranges").get<std::string>()));
    }
    if (j.contains("hyper")) {
        const auto& h = j.at("hyper");
        auto& d = spec.hp.ddqn;
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
        spec.hp.delta_f = h.value("delta_f", spec.hp.delta_f);
        spec.hp.m_samples = h.value("m_samples", spec.hp.m_samples);
        spec.hp.loss_threshold = h.value("loss_threshold", spec.hp.loss_threshold);
        spec.hp.top_k = h.value("top_k", spec.hp.top_k);
    }
    if (j.contains("loss")) {
        spec.loss.w_alpha = j.at("loss").value("w_alpha", spec.loss.w_alpha);
        spec.loss.w_beta = j.at("loss").value("w_beta", spec.loss.w_beta);
    }
    if (j.contains("pinball")) {
        spec.pinball.tau = j.at("pinball").value("tau", spec.pinball.tau);
        spec.pinball.quantile = j.at("pinball").value("quantile", spec.pinball.quantile);
    }
    spec.stage_two_draws = j.value("stage_two_draws", spec.stage_two_draws);
    spec.study = TransferStudy::from_json_text(j.at("study").dump(), net);
    spec.seed = j.value("seed", 1ULL);
    spec.skip_assessment = j.value("skip_assessment", false);
    if (j.contains("out_dir")) spec.out_dir = resolve(j.at("out_dir").get<std::string>());
    return spec;
}

std::string emit_fit_table(const std::vector<std::pair<std::string, double>>& rmse_p,
                           const std::vector<std::pair<std::string, double>>& rmse_q) {
    std::ostringstream out;
    out << "model,rmse_p,rmse_q\n";
    for (std::size_t i = 0; i < rmse_p.size(); ++i) {
        out << rmse_p[i].first << "," << format_double(rmse_p[i].second) << ","
            << format_double(rmse_q[i].second) << "\n";
    }
    return out.str();
}

std::string emit_convergence_csv(const TrainResult& trace) {
    std::ostringstream out;
    out << "episode,reward,running_best\n";
    for (std::size_t e = 0; e < trace.episode_rewards.size(); ++e) {
        out << e << "," << format_double(trace.episode_rewards[e]) << ","
            << format_double(trace.running_best[e]) << "\n";
    }
    return out.str();
}

PipelineResult run_pipeline(const PipelineSpec& spec) {
    PipelineResult result;
    const auto stage_fail = [&](const std::string& stage, const std::string& why) {
        result.stage_log.push_back(stage + ": FAILED: " + why);
        result.exit_status = 1;
        return result;
    };

    ensure_dir(spec.out_dir);
    ensure_dir(spec.out_dir + "/fits");
    ensure_dir(spec.out_dir + "/limits");
    ensure_dir(spec.out_dir + "/tables");

    NetworkCase net = load_case(spec.case_path);

    // ---- step 1: reference event -----------------------------------------
    Trajectory reference;
    try {
        NetworkCase ref_net = net;
        ref_net.load_models[spec.study.sink_bus] = spec.reference_model;
        SimulationConfig cfg = spec.reference_config;
        if (cfg.monitor_buses.empty()) cfg.monitor_buses.push_back(spec.study.sink_bus);
        const SimResult sim = simulate(ref_net, spec.events, cfg, spec.study.criteria);
        if (sim.verdict == Verdict::NumericalFailure) {
            return stage_fail("collect-reference", sim.detail);
        }
        reference = sim.trajectory;
        reference.write_csv(spec.out_dir + "/reference.csv");
        result.stage_log.push_back("collect-reference: verdict " +
                                   std::string(verdict_name(sim.verdict)));
    } catch (const std::exception& e) {
        return stage_fail("collect-reference", e.what());
    }

    // ---- step 2: fit each family ------------------------------------------
    struct FittedModel {
        std::string name;
        LoadModelSpec spec;
    };
    std::vector<FittedModel> fitted;
    try {
        std::size_t fi = 0;
        for (ModelFamily family : spec.fit_families) {
            FitJob job;
            job.problem.family = family;
            job.problem.reference = reference;
            job.problem.reference_bus = spec.study.sink_bus;
            job.problem.ranges = spec.ranges;
            job.problem.loss = spec.loss;
            job.problem.pinball = spec.pinball;
            job.hp = spec.hp;
            job.stage_two_draws = spec.stage_two_draws;
            job.seed = Rng::derive(spec.seed, 0xf17, fi);
            ++fi;

            const FitOutcome outcome = run_fit(job);
            const std::string fam = family_name(family);
            const std::string dir = spec.out_dir + "/fits/" + fam;
            ensure_dir(dir);
            write_file(dir + "/model.json", outcome.fitted.to_json_text() + "\n");
            write_file(dir + "/reward_trace.csv", emit_convergence_csv(outcome.training));
            json cj = json::array();
            for (const auto& c : outcome.candidates) {
                json row;
                for (std::size_t i = 0; i < c.composition.size(); ++i) {
                    row["composition"][c.composition.labels[i]] = c.composition.f(i);
                }
                row["mean_loss"] = c.mean_loss;
                row["pinball_score"] = c.pinball_score;
                row["final_loss"] = c.final_loss;
                row["best_params"] = c.best_params;
                cj.push_back(row);
            }
            write_file(dir + "/candidates.json", cj.dump(2) + "\n");

            result.rmse_p.push_back({fam, outcome.rmse_p});
            result.rmse_q.push_back({fam, outcome.rmse_q});
            fitted.push_back({fam, outcome.fitted});
            result.stage_log.push_back("fit " + fam + ": rmse_p " +
                                       format_double(outcome.rmse_p) + ", rmse_q " +
                                       format_double(outcome.rmse_q));
        }
        // static presets skip the estimation entirely
        for (const auto& preset : spec.static_presets) {
            const LoadModelSpec ps = LoadModelSpec::static_preset(preset);
            PlaybackResult pb =
                playback(ps, reference, spec.study.sink_bus, spec.reference_config.dt);
            const int b = reference.bus_index(spec.study.sink_bus);
            result.rmse_p.push_back({preset, rmse(pb.p, reference.bus_p[b])});
            result.rmse_q.push_back({preset, rmse(pb.q, reference.bus_q[b])});
            fitted.push_back({preset, ps});
            result.stage_log.push_back("preset " + preset + ": direct implementation");
        }
        write_file(spec.out_dir + "/tables/fit_rmse.csv",
                   emit_fit_table(result.rmse_p, result.rmse_q));
    } catch (const std::exception& e) {
        return stage_fail("fit", e.what());
    }

    // ---- step 3: limits per fitted model -----------------------------------
    if (!spec.skip_assessment) {
        try {
            for (const auto& fm : fitted) {
                NetworkCase swapped = net;
                swapped.load_models[spec.study.sink_bus] = fm.spec;
                const std::string dir = spec.out_dir + "/limits/" + fm.name;
                ensure_dir(dir);

                LimitResult res = find_limit(swapped, spec.study);
                // re-run the first infeasible level capturing trajectories
                for (const auto& st : res.steps) {
                    if (st.feasible) continue;
                    TrajectorySink sink = [&](int branch_index, const SimResult& sim) {
                        const auto& br = swapped.branches[static_cast<std::size_t>(branch_index)];
                        sim.trajectory.write_csv(dir + "/binding_" + std::to_string(br.from) +
                                                 "-" + std::to_string(br.to) + ".csv");
                    };
                    assess_point(swapped, spec.study, st.p_level_mw, &sink);
                    break;
                }

                write_file(dir + "/limit.json",
                           limit_to_json(res, spec.study, fm.name, swapped) + "\n");
                write_file(dir + "/steps.csv", steps_to_csv(res, swapped));
                result.limits.push_back({spec.study.name, fm.name, res.p_max_mw, res.capped});
                result.stage_log.push_back("assess " + fm.name + ": p_max " +
                                           format_double(res.p_max_mw) + " MW (" +
                                           binding_name(res.binding_criterion) + ")");
            }
            write_file(spec.out_dir + "/tables/transfer_limits.csv",
                       trend_report_csv(result.limits));
            write_file(spec.out_dir + "/tables/transfer_limits.txt",
                       trend_report_text(result.limits));
        } catch (const std::exception& e) {
            return stage_fail("assess", e.what());
        }
    }

    result.stage_log.push_back("pipeline: complete");
    return result;
}

}  // namespace tslim
