#include "tslim/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tslim/errors.hpp"
#include "tslim/kernels.hpp"

namespace tslim {

using nlohmann::json;

const char* family_name(ModelFamily f) {
    switch (f) {
        case ModelFamily::Zip: return "zip";
        case ModelFamily::ZipIm: return "zip_im";
        case ModelFamily::ClmLite: return "clm_lite";
    }
    return "?";
}

ModelFamily family_from_name(const std::string& name) {
    if (name == "zip") return ModelFamily::Zip;
    if (name == "zip_im") return ModelFamily::ZipIm;
    if (name == "clm_lite") return ModelFamily::ClmLite;
    throw ParseError("unknown model family: " + name);
}

// ---------------------------------------------------------------------------

namespace {

std::size_t argmin_first(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] < v[best]) best = i;
    }
    return best;
}

std::size_t argmax_first(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

}  // namespace

double trajectory_loss(const std::vector<double>& fit, const std::vector<double>& ref,
                       const LossConfig& cfg) {
    if (fit.size() != ref.size()) {
        throw LengthMismatch("series lengths differ: " + std::to_string(fit.size()) + " vs " +
                             std::to_string(ref.size()));
    }
    if (fit.empty()) return 0.0;
    const double n = static_cast<double>(fit.size());
    const double sq = kernels::active().sum_sq_diff(fit.data(), ref.data(), fit.size()) / n;
    const double idx_term =
        std::abs(static_cast<double>(argmin_first(fit)) - static_cast<double>(argmin_first(ref))) +
        std::abs(static_cast<double>(argmax_first(fit)) - static_cast<double>(argmax_first(ref)));
    return cfg.w_alpha * sq + cfg.w_beta * idx_term;
}

std::vector<FractionAction> action_space(int n, double delta_f) {
    if (n < 2) throw ValidationError("action space needs at least two components");
    std::vector<FractionAction> out;
    out.reserve(static_cast<std::size_t>(n) * (n - 1));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            out.push_back({i, j, delta_f});
        }
    }
    return out;
}

std::vector<FractionAction> compose_action_space(const LoadComposition& tmpl, double delta_f) {
    std::vector<FractionAction> out;
    for (std::size_t g = 0; g < tmpl.n_groups(); ++g) {
        auto [b, e] = tmpl.group(g);
        for (const auto& a : action_space(static_cast<int>(e - b), delta_f)) {
            out.push_back({a.from_idx + static_cast<int>(b), a.to_idx + static_cast<int>(b),
                           delta_f});
        }
    }
    return out;
}

ApplyResult apply_action(const LoadComposition& c, const FractionAction& a) {
    if (a.from_idx == a.to_idx) throw ValidationError("action endpoints must differ");
    ApplyResult out{c, false};
    const long long want = std::llround(a.delta_f * static_cast<double>(kFractionDen));
    const long long have = c.num[static_cast<std::size_t>(a.from_idx)];
    const long long moved = std::min(want, have);
    out.partial = moved < want;
    out.composition.num[static_cast<std::size_t>(a.from_idx)] -= moved;
    out.composition.num[static_cast<std::size_t>(a.to_idx)] += moved;
    return out;
}

double reward_from_loss(double mean_loss, double loss_threshold) {
    double r = -mean_loss;
    if (mean_loss < loss_threshold) r += 1.0;
    return r;
}

LoadComposition lattice_uniform(const LoadComposition& tmpl, double delta_f) {
    const long long step = std::llround(delta_f * static_cast<double>(kFractionDen));
    if (step <= 0 || kFractionDen % step != 0) {
        throw ValidationError("delta_f must divide the fraction lattice");
    }
    const long long k_total = kFractionDen / step;
    LoadComposition out = tmpl;
    for (std::size_t g = 0; g < tmpl.n_groups(); ++g) {
        auto [b, e] = tmpl.group(g);
        const long long n = static_cast<long long>(e - b);
        const long long base = k_total / n;
        long long extra = k_total - base * n;
        for (std::size_t i = b; i < e; ++i) {
            out.num[i] = (base + (extra > 0 ? 1 : 0)) * step;
            if (extra > 0) --extra;
        }
    }
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------

ParameterRanges ParameterRanges::from_json_text(const std::string& text,
                                                const std::string& origin) {
    json j;
    try {
        j = json::parse(text, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ParseError("ranges " + origin + ": " + e.what());
    }
    ParameterRanges out;
    out.version = j.value("version", 0);
    const json& ranges = j.contains("ranges") ? j.at("ranges") : j;
    for (const auto& [key, val] : ranges.items()) {
        if (!val.is_array() || val.size() != 2) {
            throw ParseError("range for " + key + " must be [lo, hi]");
        }
        const double lo = val[0].get<double>(), hi = val[1].get<double>();
        if (hi < lo) throw ParseError("range for " + key + " has hi < lo");
        out.ranges[key] = {lo, hi};
    }
    return out;
}

ParameterRanges ParameterRanges::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open ranges file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str(), path);
}

double ParameterRanges::sample(const std::string& key, double fallback, Rng& rng,
                               std::map<std::string, double>* record) const {
    double v = fallback;
    const auto it = ranges.find(key);
    if (it != ranges.end()) v = rng.uniform(it->second.first, it->second.second);
    if (record) (*record)[key] = v;
    return v;
}

double ParameterRanges::midpoint(const std::string& key, double fallback) const {
    const auto it = ranges.find(key);
    if (it == ranges.end()) return fallback;
    return 0.5 * (it->second.first + it->second.second);
}

// ---------------------------------------------------------------------------

int FitProblem::n_components() const {
    switch (family) {
        case ModelFamily::Zip: return 3;
        case ModelFamily::ZipIm: return 2;
        case ModelFamily::ClmLite: return 6;
    }
    return 0;
}

LoadComposition FitProblem::composition_template() const {
    switch (family) {
        case ModelFamily::Zip:
            // independent simplexes for the P and Q channel shares
            return LoadComposition::uniform({"pz", "pi", "pp", "qz", "qi", "qp"}, {0, 3});
        case ModelFamily::ZipIm:
            return LoadComposition::uniform({"zip", "im"});
        case ModelFamily::ClmLite:
            return LoadComposition::uniform(ClmLiteParams::component_labels());
    }
    throw ValidationError("bad family");
}

void FitProblem::validate() const {
    if (reference.n_samples() < 3) throw ValidationError("reference trajectory too short");
    if (reference.bus_index(reference_bus) < 0) {
        throw ValidationError("reference trajectory lacks the fitted bus series");
    }
}

namespace {

// sorted-uniform simplex draw for internal ZIP coefficient sampling
void sample_zip_coeffs(ZipParams& z, const std::string& prefix, Rng& rng,
                       std::map<std::string, double>* record) {
    const double a = rng.uniform(), b = rng.uniform();
    const double lo = std::min(a, b), hi = std::max(a, b);
    z.p1c = lo;
    z.p2c = hi - lo;
    z.p3c = 1.0 - hi;
    const double c = rng.uniform(), d = rng.uniform();
    const double lo2 = std::min(c, d), hi2 = std::max(c, d);
    z.q1c = lo2;
    z.q2c = hi2 - lo2;
    z.q3c = 1.0 - hi2;
    if (record) {
        (*record)[prefix + ".p1c"] = z.p1c;
        (*record)[prefix + ".p2c"] = z.p2c;
        (*record)[prefix + ".p3c"] = z.p3c;
        (*record)[prefix + ".q1c"] = z.q1c;
        (*record)[prefix + ".q2c"] = z.q2c;
        (*record)[prefix + ".q3c"] = z.q3c;
    }
}

void apply_zip_coeffs_from_params(ZipParams& z, const std::string& prefix,
                                  const std::map<std::string, double>& params) {
    const auto get = [&](const std::string& k, double& slot) {
        const auto it = params.find(prefix + "." + k);
        if (it != params.end()) slot = it->second;
    };
    get("p1c", z.p1c);
    get("p2c", z.p2c);
    get("p3c", z.p3c);
    get("q1c", z.q1c);
    get("q2c", z.q2c);
    get("q3c", z.q3c);
}

void sample_motor(ImParams& m, const std::string& prefix, const ParameterRanges& rr, Rng& rng,
                  std::map<std::string, double>* record) {
    m.rs = rr.sample(prefix + ".rs", m.rs, rng, record);
    m.xs = rr.sample(prefix + ".xs", m.xs, rng, record);
    m.xm = rr.sample(prefix + ".xm", m.xm, rng, record);
    m.rr = rr.sample(prefix + ".rr", m.rr, rng, record);
    m.xr = rr.sample(prefix + ".xr", m.xr, rng, record);
    m.h = rr.sample(prefix + ".h", m.h, rng, record);
    m.loading = rr.sample(prefix + ".loading", m.loading, rng, record);
}

void apply_motor_from_params(ImParams& m, const std::string& prefix,
                             const std::map<std::string, double>& params) {
    const auto get = [&](const std::string& k, double& slot) {
        const auto it = params.find(prefix + "." + k);
        if (it != params.end()) slot = it->second;
    };
    get("rs", m.rs);
    get("xs", m.xs);
    get("xm", m.xm);
    get("rr", m.rr);
    get("xr", m.xr);
    get("h", m.h);
    get("loading", m.loading);
}

}  // namespace

std::map<std::string, double> sample_parameters(const FitProblem& problem, Rng& rng) {
    std::map<std::string, double> rec;
    switch (problem.family) {
        case ModelFamily::Zip:
            break;  // composition is the whole parameterization
        case ModelFamily::ZipIm: {
            ImParams m = motor_preset("im");
            sample_motor(m, "im", problem.ranges, rng, &rec);
            ZipParams z;
            sample_zip_coeffs(z, "zip", rng, &rec);
            break;
        }
        case ModelFamily::ClmLite: {
            for (const char* name : {"ma", "mb", "mc"}) {
                ImParams m = motor_preset(name);
                sample_motor(m, std::string("clm.") + name, problem.ranges, rng, &rec);
            }
            SinglePhaseImParams sp;
            problem.ranges.sample("clm.md.v_stall", sp.v_stall, rng, &rec);
            problem.ranges.sample("clm.md.t_stall", sp.t_stall, rng, &rec);
            problem.ranges.sample("clm.md.g_stall", sp.g_stall, rng, &rec);
            problem.ranges.sample("clm.md.b_stall", sp.b_stall, rng, &rec);
            problem.ranges.sample("clm.md.f_restart", sp.f_restart, rng, &rec);
            problem.ranges.sample("clm.md.v_restart", sp.v_restart, rng, &rec);
            ElectronicLoadParams el;
            problem.ranges.sample("clm.elec.v_full", el.v_full, rng, &rec);
            problem.ranges.sample("clm.elec.v_off", el.v_off, rng, &rec);
            ClmLiteParams base;
            problem.ranges.sample("clm.feeder_r", base.feeder_r, rng, &rec);
            problem.ranges.sample("clm.feeder_x", base.feeder_x, rng, &rec);
            problem.ranges.sample("clm.shunt_b", base.shunt_b, rng, &rec);
            ZipParams z;
            sample_zip_coeffs(z, "clm.zip", rng, &rec);
            break;
        }
    }
    return rec;
}

LoadModelSpec make_model_spec(const FitProblem& problem, const LoadComposition& comp,
                              const std::map<std::string, double>& params) {
    LoadModelSpec spec;
    switch (problem.family) {
        case ModelFamily::Zip: {
            spec.type = LoadModelSpec::Type::Zip;
            spec.zip.p1c = comp.f(0);
            spec.zip.p2c = comp.f(1);
            spec.zip.p3c = comp.f(2);
            spec.zip.q1c = comp.f(3);
            spec.zip.q2c = comp.f(4);
            spec.zip.q3c = comp.f(5);
            break;
        }
        case ModelFamily::ZipIm: {
            spec.type = LoadModelSpec::Type::ZipIm;
            spec.zip_im.f_zip = comp.f(0);
            spec.zip_im.f_im = comp.f(1);
            spec.zip_im.im = motor_preset("im");
            apply_motor_from_params(spec.zip_im.im, "im", params);
            apply_zip_coeffs_from_params(spec.zip_im.zip, "zip", params);
            break;
        }
        case ModelFamily::ClmLite: {
            spec.type = LoadModelSpec::Type::ClmLite;
            auto& c = spec.clm;
            c.fractions = comp;
            c.ma = motor_preset("ma");
            c.mb = motor_preset("mb");
            c.mc = motor_preset("mc");
            apply_motor_from_params(c.ma, "clm.ma", params);
            apply_motor_from_params(c.mb, "clm.mb", params);
            apply_motor_from_params(c.mc, "clm.mc", params);
            const auto get = [&](const std::string& k, double& slot) {
                const auto it = params.find(k);
                if (it != params.end()) slot = it->second;
            };
            get("clm.md.v_stall", c.md.v_stall);
            get("clm.md.t_stall", c.md.t_stall);
            get("clm.md.g_stall", c.md.g_stall);
            get("clm.md.b_stall", c.md.b_stall);
            get("clm.md.f_restart", c.md.f_restart);
            get("clm.md.v_restart", c.md.v_restart);
            get("clm.elec.v_full", c.elec.v_full);
            get("clm.elec.v_off", c.elec.v_off);
            get("clm.feeder_r", c.feeder_r);
            get("clm.feeder_x", c.feeder_x);
            get("clm.shunt_b", c.shunt_b);
            apply_zip_coeffs_from_params(c.zip, "clm.zip", params);
            break;
        }
    }
    return spec;
}

// ---------------------------------------------------------------------------

PlaybackResult playback(const LoadModelSpec& spec, const Trajectory& reference, int bus_id,
                        double dt_max) {
    const int b = reference.bus_index(bus_id);
    if (b < 0) throw ValidationError("reference lacks bus " + std::to_string(bus_id));
    const auto& vm = reference.bus_v[static_cast<std::size_t>(b)];
    const auto& times = reference.times;
    const std::size_t n = times.size();

    auto model = build_load_model(spec);
    LoadState st = model->init(Complex{vm[0], 0.0}, reference.bus_p[b][0], reference.bus_q[b][0]);
    const std::size_t nx = model->n_states();

    PlaybackResult out;
    out.p.resize(n);
    out.q.resize(n);
    {
        const auto [p0, q0] = model->injection(st, Complex{vm[0], 0.0});
        out.p[0] = p0;
        out.q[0] = q0;
    }

    std::vector<double> k1(nx), k2(nx), k3(nx), k4(nx), xs(nx);
    for (std::size_t k = 1; k < n; ++k) {
        const double span = times[k] - times[k - 1];
        if (nx > 0 || model->has_discrete()) {
            const int nsub = std::max(1, static_cast<int>(std::ceil(span / dt_max - 1e-9)));
            const double h = span / nsub;
            const double v0 = vm[k - 1], v1 = vm[k];
            for (int s = 0; s < nsub; ++s) {
                const double f0 = static_cast<double>(s) / nsub;
                const double fm = (static_cast<double>(s) + 0.5) / nsub;
                const double f1 = static_cast<double>(s + 1) / nsub;
                const Complex va{v0 + (v1 - v0) * f0, 0.0};
                const Complex vb{v0 + (v1 - v0) * fm, 0.0};
                const Complex vc{v0 + (v1 - v0) * f1, 0.0};
                if (nx > 0) {
                    model->derivatives(st, va, k1.data());
                    LoadState tmp = st;
                    for (std::size_t i = 0; i < nx; ++i) tmp.x[i] = st.x[i] + 0.5 * h * k1[i];
                    model->derivatives(tmp, vb, k2.data());
                    for (std::size_t i = 0; i < nx; ++i) tmp.x[i] = st.x[i] + 0.5 * h * k2[i];
                    model->derivatives(tmp, vb, k3.data());
                    for (std::size_t i = 0; i < nx; ++i) tmp.x[i] = st.x[i] + h * k3[i];
                    model->derivatives(tmp, vc, k4.data());
                    for (std::size_t i = 0; i < nx; ++i) {
                        st.x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
                if (model->has_discrete()) model->discrete_update(st, vc, h);
            }
        }
        const auto [p, q] = model->injection(st, Complex{vm[k], 0.0});
        out.p[k] = p;
        out.q[k] = q;
    }
    return out;
}

EvalResult evaluate_composition(const FitProblem& problem, const LoadComposition& comp, int m,
                                std::uint64_t seed) {
    if (m < 1) throw ValidationError("evaluate_composition needs m >= 1");
    const int b = problem.reference.bus_index(problem.reference_bus);
    const auto& ref_p = problem.reference.bus_p[static_cast<std::size_t>(b)];
    const auto& ref_q = problem.reference.bus_q[static_cast<std::size_t>(b)];

    const int m_eff = (problem.family == ModelFamily::Zip) ? 1 : m;
    EvalResult out;
    std::vector<double> losses;
    double worst_valid = 0.0;
    bool any_valid = false;

    for (int j = 0; j < m_eff; ++j) {
        std::map<std::string, double> params;
        if (problem.family != ModelFamily::Zip) {
            Rng draw_rng(Rng::derive(seed, static_cast<std::uint64_t>(j)));
            params = sample_parameters(problem, draw_rng);
        }
        const LoadModelSpec spec = make_model_spec(problem, comp, params);
        out.param_sets.push_back(params);
        try {
            PlaybackResult pb = playback(spec, problem.reference, problem.reference_bus,
                                         problem.playback_dt);
            const double loss = trajectory_loss(pb.p, ref_p, problem.loss) +
                                trajectory_loss(pb.q, ref_q, problem.loss);
            losses.push_back(loss);
            worst_valid = std::max(worst_valid, loss);
            any_valid = true;
            out.samples.push_back(std::move(pb));
        } catch (const InitError&) {
            losses.push_back(-1.0);  // placeholder, charged below
            out.samples.push_back({});
            ++out.failures;
        } catch (const AlgebraicDivergence&) {
            losses.push_back(-1.0);
            out.samples.push_back({});
            ++out.failures;
        }
    }

    const double penalty =
        std::max(problem.penalty_floor, any_valid ? 10.0 * worst_valid : problem.penalty_floor);
    double sum = 0.0;
    for (double l : losses) sum += (l < 0.0) ? penalty : l;
    out.mean_loss = sum / static_cast<double>(m_eff);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

// Stage-one search environment over the composition lattice.
class FitEnv final : public Environment {
public:
    FitEnv(const FitProblem& problem, const HyperParams& hp, std::uint64_t seed)
        : problem_(problem),
          hp_(hp),
          seed_(seed),
          tmpl_(problem.composition_template()),
          actions_(compose_action_space(tmpl_, hp.delta_f)),
          comp_(tmpl_) {}

    int state_dim() const override { return static_cast<int>(tmpl_.size()); }
    int n_actions() const override { return static_cast<int>(actions_.size()); }

    std::vector<double> reset() override {
        comp_ = lattice_uniform(tmpl_, hp_.delta_f);
        evaluate_current();
        return comp_.fractions();
    }

    Step step(int action) override {
        comp_ = apply_action(comp_, actions_[static_cast<std::size_t>(action)]).composition;
        const double loss = evaluate_current();
        Step out;
        out.state = comp_.fractions();
        out.reward = reward_from_loss(loss, hp_.loss_threshold);
        out.done = loss < hp_.loss_threshold;
        return out;
    }

    long long evaluations() const { return eval_counter_; }
    bool any_valid() const { return any_valid_; }

    std::vector<CandidateSolution> top_candidates(int k) const {
        std::vector<std::pair<double, const LoadComposition*>> rows;
        rows.reserve(best_by_comp_.size());
        for (const auto& [comp, loss] : best_by_comp_) rows.push_back({loss, &comp});
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return b.second->num > a.second->num;
        });
        std::vector<CandidateSolution> out;
        for (const auto& [loss, comp] : rows) {
            if (static_cast<int>(out.size()) >= k) break;
            CandidateSolution c;
            c.composition = *comp;
            c.mean_loss = loss;
            out.push_back(std::move(c));
        }
        return out;
    }

private:
    double evaluate_current() {
        // deterministic families are cached by exact lattice position
        const bool cacheable = problem_.family == ModelFamily::Zip;
        if (cacheable) {
            const auto it = best_by_comp_.find(comp_);
            if (it != best_by_comp_.end()) {
                ++eval_counter_;
                return it->second;
            }
        }
        const auto ev = evaluate_composition(problem_, comp_, hp_.m_samples,
                                             Rng::derive(seed_, 0xe7a1, static_cast<std::uint64_t>(
                                                                            eval_counter_)));
        ++eval_counter_;
        if (ev.failures < static_cast<int>(ev.samples.size())) any_valid_ = true;
        auto [it, inserted] = best_by_comp_.try_emplace(comp_, ev.mean_loss);
        if (!inserted) it->second = std::min(it->second, ev.mean_loss);
        return ev.mean_loss;
    }

    const FitProblem& problem_;
    const HyperParams& hp_;
    std::uint64_t seed_;
    LoadComposition tmpl_;
    std::vector<FractionAction> actions_;
    LoadComposition comp_;
    long long eval_counter_ = 0;
    bool any_valid_ = false;
    std::map<LoadComposition, double> best_by_comp_;
};

}  // namespace

StageOneResult train_stage_one(const FitProblem& problem, const HyperParams& hp,
                               std::uint64_t seed) {
    problem.validate();
    FitEnv env(problem, hp, seed);
    StageOneResult out;
    out.training = train_ddqn(env, hp.ddqn, seed);
    out.evaluations = env.evaluations();
    if (!env.any_valid()) {
        throw NoCandidate("every sampled simulation failed; check the parameter ranges");
    }
    out.candidates = env.top_candidates(hp.top_k);
    if (out.candidates.empty()) {
        throw NoCandidate("search visited no evaluable composition");
    }
    return out;
}

double empirical_quantile(std::vector<double> values, double level) {
    if (values.empty()) throw ValidationError("quantile of empty sample");
    std::sort(values.begin(), values.end());
    const double pos = level * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double pinball_score(const std::vector<std::vector<double>>& sample_p,
                     const std::vector<std::vector<double>>& sample_q,
                     const std::vector<double>& ref_p, const std::vector<double>& ref_q,
                     const PinballConfig& cfg) {
    const std::size_t n = ref_p.size();
    std::vector<double> pred_p(n), pred_q(n);
    std::vector<double> column;
    for (std::size_t i = 0; i < n; ++i) {
        column.clear();
        for (const auto& s : sample_p) column.push_back(s[i]);
        pred_p[i] = empirical_quantile(column, cfg.quantile);
        column.clear();
        for (const auto& s : sample_q) column.push_back(s[i]);
        pred_q[i] = empirical_quantile(column, cfg.quantile);
    }
    const auto& k = kernels::active();
    const double sum = k.pinball_sum(pred_p.data(), ref_p.data(), n, cfg.tau) +
                       k.pinball_sum(pred_q.data(), ref_q.data(), n, cfg.tau);
    return sum / static_cast<double>(2 * n);
}

void rank_candidates(std::vector<CandidateSolution>& candidates, const FitProblem& problem,
                     const PinballConfig& cfg, int m, std::uint64_t seed) {
    const int b = problem.reference.bus_index(problem.reference_bus);
    const auto& ref_p = problem.reference.bus_p[static_cast<std::size_t>(b)];
    const auto& ref_q = problem.reference.bus_q[static_cast<std::size_t>(b)];

    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        const auto ev = evaluate_composition(problem, candidates[ci].composition, m,
                                             Rng::derive(seed, 0x9a7b, ci));
        std::vector<std::vector<double>> sp, sq;
        for (const auto& s : ev.samples) {
            if (s.p.empty()) continue;  // failed draw
            sp.push_back(s.p);
            sq.push_back(s.q);
        }
        if (sp.empty()) {
            candidates[ci].pinball_score = 1e300;  // unrankable candidate goes last
        } else {
            candidates[ci].pinball_score = pinball_score(sp, sq, ref_p, ref_q, cfg);
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const CandidateSolution& a, const CandidateSolution& b2) {
                         if (a.pinball_score != b2.pinball_score) {
                             return a.pinball_score < b2.pinball_score;
                         }
                         if (a.mean_loss != b2.mean_loss) return a.mean_loss < b2.mean_loss;
                         return a.composition.num < b2.composition.num;
                     });
}

StageTwoResult stage_two_monte_carlo(const FitProblem& problem, const LoadComposition& comp,
                                     int n_draws, std::uint64_t seed) {
    const int b = problem.reference.bus_index(problem.reference_bus);
    const auto& ref_p = problem.reference.bus_p[static_cast<std::size_t>(b)];
    const auto& ref_q = problem.reference.bus_q[static_cast<std::size_t>(b)];

    StageTwoResult out;
    if (problem.family == ModelFamily::Zip) {
        // the composition is the entire parameterization; nothing to refine
        const LoadModelSpec spec = make_model_spec(problem, comp, {});
        out.best_playback = playback(spec, problem.reference, problem.reference_bus,
                                     problem.playback_dt);
        out.best_loss = trajectory_loss(out.best_playback.p, ref_p, problem.loss) +
                        trajectory_loss(out.best_playback.q, ref_q, problem.loss);
        return out;
    }

    bool found = false;
    for (int j = 0; j < n_draws; ++j) {
        Rng rng(Rng::derive(seed, 0x52a9, static_cast<std::uint64_t>(j)));
        const auto params = sample_parameters(problem, rng);
        const LoadModelSpec spec = make_model_spec(problem, comp, params);
        try {
            PlaybackResult pb =
                playback(spec, problem.reference, problem.reference_bus, problem.playback_dt);
            const double loss = trajectory_loss(pb.p, ref_p, problem.loss) +
                                trajectory_loss(pb.q, ref_q, problem.loss);
            if (!found || loss < out.best_loss) {
                found = true;
                out.best_loss = loss;
                out.best_params = params;
                out.best_playback = std::move(pb);
            }
        } catch (const InitError&) {
        } catch (const AlgebraicDivergence&) {
        }
    }
    if (!found) throw AllFailed("every stage-two draw failed to simulate");
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void enumerate_group(int slots, long long total, std::vector<long long>& cur,
                     const std::function<void(const std::vector<long long>&)>& emit) {
    if (slots == 1) {
        cur.push_back(total);
        emit(cur);
        cur.pop_back();
        return;
    }
    for (long long k = 0; k <= total; ++k) {
        cur.push_back(k);
        enumerate_group(slots - 1, total - k, cur, emit);
        cur.pop_back();
    }
}

}  // namespace

GridSearchResult grid_search_lattice(const FitProblem& problem, double delta_f,
                                     std::uint64_t seed, int m) {
    const LoadComposition tmpl = problem.composition_template();
    const long long step = std::llround(delta_f * static_cast<double>(kFractionDen));
    if (step <= 0 || kFractionDen % step != 0) {
        throw ValidationError("delta_f must divide the fraction lattice");
    }
    const long long k_per_group = kFractionDen / step;

    // per-group lattice points (numerators)
    std::vector<std::vector<std::vector<long long>>> group_points(tmpl.n_groups());
    for (std::size_t g = 0; g < tmpl.n_groups(); ++g) {
        auto [b, e] = tmpl.group(g);
        std::vector<long long> cur;
        enumerate_group(static_cast<int>(e - b), k_per_group, cur,
                        [&](const std::vector<long long>& pt) {
                            std::vector<long long> nums(pt.size());
                            for (std::size_t i = 0; i < pt.size(); ++i) nums[i] = pt[i] * step;
                            group_points[g].push_back(std::move(nums));
                        });
    }

    GridSearchResult out;
    out.best = tmpl;
    bool first = true;
    std::vector<std::size_t> idx(tmpl.n_groups(), 0);
    for (;;) {
        LoadComposition comp = tmpl;
        std::size_t off = 0;
        for (std::size_t g = 0; g < tmpl.n_groups(); ++g) {
            const auto& pt = group_points[g][idx[g]];
            for (std::size_t i = 0; i < pt.size(); ++i) comp.num[off + i] = pt[i];
            off += pt.size();
        }
        const auto ev = evaluate_composition(problem, comp, m, Rng::derive(seed, 0x6e1d,
                                                                           out.points));
        ++out.points;
        if (first || ev.mean_loss < out.best_loss ||
            (ev.mean_loss == out.best_loss && comp.num < out.best.num)) {
            first = false;
            out.best_loss = ev.mean_loss;
            out.best = comp;
        }
        // advance the mixed-radix counter
        std::size_t g = 0;
        for (; g < idx.size(); ++g) {
            if (++idx[g] < group_points[g].size()) break;
            idx[g] = 0;
        }
        if (g == idx.size()) break;
    }
    return out;
}

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw LengthMismatch("rmse inputs differ in length");
    if (a.empty()) return 0.0;
    return std::sqrt(kernels::active().sum_sq_diff(a.data(), b.data(), a.size()) /
                     static_cast<double>(a.size()));
}

FitOutcome run_fit(const FitJob& job) {
    FitOutcome out;
    auto stage_one = train_stage_one(job.problem, job.hp, job.seed);
    out.training = std::move(stage_one.training);
    out.candidates = std::move(stage_one.candidates);
    rank_candidates(out.candidates, job.problem, job.problem.pinball, job.hp.m_samples,
                    job.seed);

    CandidateSolution& best = out.candidates.front();
    auto stage_two =
        stage_two_monte_carlo(job.problem, best.composition, job.stage_two_draws, job.seed);
    best.best_params = stage_two.best_params;
    best.final_loss = stage_two.best_loss;
    out.fitted = make_model_spec(job.problem, best.composition, best.best_params);

    const int b = job.problem.reference.bus_index(job.problem.reference_bus);
    out.rmse_p = rmse(stage_two.best_playback.p,
                      job.problem.reference.bus_p[static_cast<std::size_t>(b)]);
    out.rmse_q = rmse(stage_two.best_playback.q,
                      job.problem.reference.bus_q[static_cast<std::size_t>(b)]);
    return out;
}

}  // namespace tslim
