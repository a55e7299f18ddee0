#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tslim/ddqn.hpp"
#include "tslim/loadmodels.hpp"
#include "tslim/trajectory.hpp"

namespace tslim {

enum class ModelFamily { Zip, ZipIm, ClmLite };
const char* family_name(ModelFamily f);
ModelFamily family_from_name(const std::string& name);

struct LossConfig {
    double w_alpha = 1.0;   // squared-error weight
    double w_beta = 0.001;  // extremum-index mismatch weight (per shifted sample)
};

struct PinballConfig {
    double tau = 0.5;       // penalize factor
    double quantile = 0.5;  // quantile level across the sampled trajectories
};

// Per-channel series loss: w_alpha * mean squared difference plus w_beta times
// the shift (in samples) of the minimum and maximum positions. Extremum index
// is the first attaining sample.
double trajectory_loss(const std::vector<double>& fit, const std::vector<double>& ref,
                       const LossConfig& cfg);

// Ordered transfer actions over every simplex group of a composition
// template: all ordered pairs (from, to) within a group, groups in order,
// lexicographic within a group. Indices are global into the label vector.
struct FractionAction {
    int from_idx = 0;
    int to_idx = 0;
    double delta_f = 0.05;
};
std::vector<FractionAction> action_space(int n, double delta_f);  // single simplex of n
std::vector<FractionAction> compose_action_space(const LoadComposition& tmpl, double delta_f);

struct ApplyResult {
    LoadComposition composition;
    bool partial = false;  // the source fraction clamped the transfer
};
ApplyResult apply_action(const LoadComposition& c, const FractionAction& a);

double reward_from_loss(double mean_loss, double loss_threshold);

// Uniform start rounded onto the delta_f lattice (largest remainder per
// group), so every state the search visits lies on the same grid the
// exhaustive oracle enumerates.
LoadComposition lattice_uniform(const LoadComposition& tmpl, double delta_f);

// ---------------------------------------------------------------------------

struct ParameterRanges {
    std::map<std::string, std::pair<double, double>> ranges;
    int version = 0;

    static ParameterRanges from_json_file(const std::string& path);
    static ParameterRanges from_json_text(const std::string& text, const std::string& origin);
    // uniform draw when a range exists, otherwise the fallback value
    double sample(const std::string& key, double fallback, Rng& rng,
                  std::map<std::string, double>* record = nullptr) const;
    // midpoint when a range exists
    double midpoint(const std::string& key, double fallback) const;
};

struct FitProblem {
    ModelFamily family = ModelFamily::Zip;
    Trajectory reference;       // must contain the fitted bus series
    int reference_bus = 0;
    ParameterRanges ranges;
    LossConfig loss;
    PinballConfig pinball;
    double playback_dt = 1.0 / 240.0;  // internal substep ceiling for dynamic models
    double penalty_floor = 1.0;        // loss charged to failed simulations

    int n_components() const;  // per-simplex component count
    LoadComposition composition_template() const;
    void validate() const;
};

// Composition + optionally sampled parameters resolved into a bus model spec.
// For dynamic families absent keys fall back to documented defaults.
LoadModelSpec make_model_spec(const FitProblem& problem, const LoadComposition& comp,
                              const std::map<std::string, double>& params);
// Draw one uniform parameter set for the family (empty for ZIP).
std::map<std::string, double> sample_parameters(const FitProblem& problem, Rng& rng);

struct PlaybackResult {
    std::vector<double> p, q;  // on the reference time grid
};

// Drive a load model with the recorded bus-voltage magnitude series and
// return its P/Q response; the model is initialized at the first sample.
PlaybackResult playback(const LoadModelSpec& spec, const Trajectory& reference, int bus_id,
                        double dt_max);

struct EvalResult {
    double mean_loss = 0.0;
    std::vector<PlaybackResult> samples;           // one per Monte-Carlo draw
    std::vector<std::map<std::string, double>> param_sets;
    int failures = 0;
};

// Mean playback loss over m uniformly sampled parameter sets (m collapses to
// one deterministic evaluation for ZIP). Failed draws are charged the penalty
// loss. Deterministic for a given seed.
EvalResult evaluate_composition(const FitProblem& problem, const LoadComposition& comp, int m,
                                std::uint64_t seed);

struct CandidateSolution {
    LoadComposition composition;
    double mean_loss = 0.0;
    double pinball_score = 0.0;
    std::map<std::string, double> best_params;  // filled by stage two
    double final_loss = 0.0;                    // stage-two loss (or stage-one for ZIP)
};

struct HyperParams {
    DdqnConfig ddqn;
    double delta_f = 0.05;
    int m_samples = 8;
    double loss_threshold = 1e-9;
    int top_k = 5;
};

struct StageOneResult {
    std::vector<CandidateSolution> candidates;  // best first
    TrainResult training;
    long long evaluations = 0;
};

// Stage one: epsilon-greedy composition search from the uniform start.
// Candidates are the top-K distinct visited compositions by mean loss.
// Throws NoCandidate when nothing beat the failure penalty.
StageOneResult train_stage_one(const FitProblem& problem, const HyperParams& hp,
                               std::uint64_t seed);

// Quantile-score ranking of candidates (ascending; ties by mean loss, then
// lexicographic composition). Candidates must carry their sample trajectories,
// which are re-generated deterministically from the stored seed.
void rank_candidates(std::vector<CandidateSolution>& candidates, const FitProblem& problem,
                     const PinballConfig& cfg, int m, std::uint64_t seed);

// Mean pinball loss of predicted-vs-reference snapshots (exposed for closed
// form tests): max(tau*d, (tau-1)*d), d = prediction - reference.
double pinball_score(const std::vector<std::vector<double>>& sample_p,
                     const std::vector<std::vector<double>>& sample_q,
                     const std::vector<double>& ref_p, const std::vector<double>& ref_q,
                     const PinballConfig& cfg);
double empirical_quantile(std::vector<double> values, double level);

struct StageTwoResult {
    std::map<std::string, double> best_params;
    double best_loss = 0.0;
    PlaybackResult best_playback;
};

// Uniform Monte-Carlo refinement at a fixed composition; pass-through for ZIP.
StageTwoResult stage_two_monte_carlo(const FitProblem& problem, const LoadComposition& comp,
                                     int n_draws, std::uint64_t seed);

// Exhaustive minimizer over the delta_f lattice on the family's simplex
// groups (the stage-one search oracle; exact for deterministic families).
struct GridSearchResult {
    LoadComposition best;
    double best_loss = 0.0;
    long long points = 0;
};
GridSearchResult grid_search_lattice(const FitProblem& problem, double delta_f,
                                     std::uint64_t seed, int m);

// Whole-fit driver shared by the CLI and the pipeline.
struct FitJob {
    FitProblem problem;
    HyperParams hp;
    int stage_two_draws = 400;
    std::uint64_t seed = 1;
};

struct FitOutcome {
    std::vector<CandidateSolution> candidates;  // pinball-ranked
    TrainResult training;
    LoadModelSpec fitted;   // best candidate with its stage-two parameters
    double rmse_p = 0.0, rmse_q = 0.0;  // plain RMSE of the fitted playback
};

FitOutcome run_fit(const FitJob& job);

double rmse(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace tslim
