#pragma once

#include <string>
#include <vector>

#include "tslim/fitting.hpp"
#include "tslim/netcase.hpp"
#include "tslim/tdsim.hpp"
#include "tslim/translim.hpp"

namespace tslim {

// Three-step workflow: simulate the reference event, fit every target family
// to the recorded response (static presets skip fitting), then assess the
// transfer limit under each fitted model at the sink.
struct PipelineSpec {
    std::string case_path;
    LoadModelSpec reference_model;  // placed at the sink for step one
    std::vector<Event> events;      // reference disturbance
    SimulationConfig reference_config;
    std::vector<ModelFamily> fit_families;
    std::vector<std::string> static_presets;
    HyperParams hp;
    ParameterRanges ranges;
    LossConfig loss;
    PinballConfig pinball;
    int stage_two_draws = 400;
    TransferStudy study;
    std::uint64_t seed = 1;
    std::string out_dir;
    bool skip_assessment = false;  // stop after fitting (tables still emitted)

    static PipelineSpec from_json_file(const std::string& path);
};

struct PipelineResult {
    int exit_status = 0;
    std::vector<std::string> stage_log;
    std::vector<std::pair<std::string, double>> rmse_p;  // model -> value
    std::vector<std::pair<std::string, double>> rmse_q;
    std::vector<TrendEntry> limits;
};

PipelineResult run_pipeline(const PipelineSpec& spec);

// Table-style artifacts (also written by run_pipeline).
std::string emit_fit_table(const std::vector<std::pair<std::string, double>>& rmse_p,
                           const std::vector<std::pair<std::string, double>>& rmse_q);
std::string emit_convergence_csv(const TrainResult& trace);

// Byte-stable file writing used for every artifact.
void write_file(const std::string& path, const std::string& content);
void ensure_dir(const std::string& path);

}  // namespace tslim
