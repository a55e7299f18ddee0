#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tslim/errors.hpp"
#include "tslim/fitting.hpp"
#include "tslim/netcase.hpp"
#include "tslim/tdsim.hpp"

using namespace tslim;

namespace {

NetworkCase small_case() {
    NetworkCase net;
    Bus b1;
    b1.id = 1;
    b1.kind = BusKind::Slack;
    Bus b2;
    b2.id = 2;
    b2.kind = BusKind::PQ;
    b2.p_load = 0.8;
    b2.q_load = 0.3;
    net.buses = {b1, b2};
    Branch br;
    br.from = 1;
    br.to = 2;
    br.r = 0.01;
    br.x = 0.12;
    br.rating = 10.0;
    net.branches = {br};
    Generator g;
    g.bus = 1;
    g.v_set = 1.02;
    g.h = 4.0;
    g.xdp = 0.2;
    g.d = 1.0;
    net.generators = {g};
    return net;
}

LoadModelSpec generating_zip() {
    LoadModelSpec spec;
    spec.type = LoadModelSpec::Type::Zip;
    spec.zip.p1c = 0.20;
    spec.zip.p2c = 0.35;
    spec.zip.p3c = 0.45;
    spec.zip.q1c = 0.15;
    spec.zip.q2c = 0.30;
    spec.zip.q3c = 0.55;
    return spec;
}

// the shared reference disturbance for all fitting tests in this file
const Trajectory& zip_reference() {
    static const Trajectory traj = [] {
        NetworkCase net = small_case();
        net.load_models[2] = generating_zip();
        SimulationConfig cfg;
        cfg.t_end = 1.5;
        cfg.record_dt = cfg.dt;
        cfg.monitor_buses = {2};
        // two fault depths span three voltage levels, which pins all three
        // polynomial shares of the generating model
        std::vector<Event> events;
        Event f1;
        f1.kind = Event::Kind::ThreePhaseFault;
        f1.bus = 2;
        f1.time = 0.2;
        f1.fault_admittance = Complex{0.0, -4.0};
        Event c1;
        c1.kind = Event::Kind::FaultClear;
        c1.time = 0.45;
        Event f2 = f1;
        f2.time = 0.8;
        f2.fault_admittance = Complex{0.0, -12.0};
        Event c2 = c1;
        c2.time = 1.05;
        events = {f1, c1, f2, c2};
        StabilityCriteria criteria;
        const SimResult res = simulate(net, events, cfg, criteria);
        REQUIRE(res.verdict == Verdict::Stable);
        return res.trajectory;
    }();
    return traj;
}

FitProblem zip_problem() {
    FitProblem p;
    p.family = ModelFamily::Zip;
    p.reference = zip_reference();
    p.reference_bus = 2;
    return p;
}

}  // namespace

TEST_CASE("series loss matches its closed forms") {
    LossConfig cfg;
    cfg.w_alpha = 1.0;
    cfg.w_beta = 0.01;

    std::vector<double> a{1.0, 2.0, 5.0, 3.0, 0.5};
    SUBCASE("identical series cost nothing") {
        CHECK(trajectory_loss(a, a, cfg) == 0.0);
    }
    SUBCASE("a constant offset costs its square") {
        std::vector<double> b;
        for (double v : a) b.push_back(v + 0.3);
        // extrema keep their positions, only the squared term bites
        CHECK(trajectory_loss(b, a, cfg) == doctest::Approx(0.09).epsilon(1e-12));
    }
    SUBCASE("a shifted extremum costs the index weight per sample of shift") {
        std::vector<double> ref{0.0, 5.0, 1.0, -3.0, 0.0, 0.0};
        std::vector<double> fit{0.0, 0.0, 5.0, 1.0, -3.0, 0.0};  // both extrema shift by 1
        LossConfig idx_only;
        idx_only.w_alpha = 0.0;
        idx_only.w_beta = 0.01;
        CHECK(trajectory_loss(fit, ref, idx_only) == doctest::Approx(0.02).epsilon(1e-12));
    }
    SUBCASE("the squared term is symmetric") {
        std::vector<double> b{0.7, 2.4, 4.1, 3.3, 0.2};
        LossConfig sq_only;
        sq_only.w_alpha = 1.0;
        sq_only.w_beta = 0.0;
        CHECK(trajectory_loss(a, b, sq_only) ==
              doctest::Approx(trajectory_loss(b, a, sq_only)).epsilon(1e-15));
    }
    SUBCASE("length mismatch is rejected") {
        std::vector<double> b{1.0, 2.0};
        CHECK_THROWS_AS(trajectory_loss(a, b, cfg), LengthMismatch);
    }
}

TEST_CASE("the action space enumerates ordered pairs") {
    CHECK(action_space(3, 0.05).size() == 6);
    CHECK(action_space(6, 0.05).size() == 30);
    CHECK(action_space(2, 0.05).size() == 2);
    CHECK_THROWS_AS(action_space(1, 0.05), ValidationError);

    // stable lexicographic order and index round-trip
    const auto acts = action_space(3, 0.05);
    for (std::size_t k = 0; k < acts.size(); ++k) {
        const auto again = action_space(3, 0.05);
        CHECK(again[k].from_idx == acts[k].from_idx);
        CHECK(again[k].to_idx == acts[k].to_idx);
    }
    CHECK(acts[0].from_idx == 0);
    CHECK(acts[0].to_idx == 1);
    CHECK(acts[5].from_idx == 2);
    CHECK(acts[5].to_idx == 1);

    // two independent simplexes compose
    FitProblem zp;
    zp.family = ModelFamily::Zip;
    const auto composed = compose_action_space(zp.composition_template(), 0.05);
    CHECK(composed.size() == 12);
    CHECK(composed[6].from_idx == 3);  // q-group actions offset past the p-group
    CHECK(composed[6].to_idx == 4);
}

TEST_CASE("fraction transfers preserve the simplex exactly") {
    const auto tmpl = LoadComposition::from_fractions({"a", "b", "c"}, {0.5, 0.3, 0.2});
    SUBCASE("a plain transfer moves the step") {
        const auto out = apply_action(tmpl, {0, 1, 0.05});
        CHECK_FALSE(out.partial);
        CHECK(out.composition.f(0) == doctest::Approx(0.45).epsilon(1e-15));
        CHECK(out.composition.f(1) == doctest::Approx(0.35).epsilon(1e-15));
        CHECK(out.composition.f(2) == doctest::Approx(0.20).epsilon(1e-15));
    }
    SUBCASE("a drained source clamps and flags") {
        const auto start = LoadComposition::from_fractions({"a", "b"}, {0.02, 0.98});
        const auto out = apply_action(start, {0, 1, 0.05});
        CHECK(out.partial);
        CHECK(out.composition.f(0) == 0.0);
        CHECK(out.composition.f(1) == 1.0);
    }
    SUBCASE("an unclamped action then its reverse is the identity") {
        const auto fwd = apply_action(tmpl, {0, 2, 0.05});
        REQUIRE_FALSE(fwd.partial);
        const auto back = apply_action(fwd.composition, {2, 0, 0.05});
        CHECK(back.composition.num == tmpl.num);
    }
    SUBCASE("thousands of random actions never drift the sum") {
        Rng rng(1);
        auto comp = LoadComposition::uniform({"a", "b", "c", "d", "e", "f"});
        const auto acts = compose_action_space(comp, 0.05);
        for (int it = 0; it < 5000; ++it) {
            comp = apply_action(comp, acts[rng.below(acts.size())]).composition;
            long long sum = 0;
            for (long long v : comp.num) sum += v;
            REQUIRE(sum == kFractionDen);
        }
        CHECK_NOTHROW(comp.validate());
    }
}

TEST_CASE("reward tracks the loss with a terminal bonus") {
    CHECK(reward_from_loss(0.2, 0.01) == doctest::Approx(-0.2));
    CHECK(reward_from_loss(0.005, 0.01) == doctest::Approx(0.995));
    double prev = reward_from_loss(1.0, 0.01);
    for (double loss : {0.8, 0.5, 0.2, 0.05, 0.02}) {
        const double r = reward_from_loss(loss, 0.01);
        CHECK(r > prev);
        prev = r;
    }
}

TEST_CASE("pinball closed forms") {
    PinballConfig cfg;
    SUBCASE("median scoring is half the absolute deviation") {
        std::vector<double> ref{1.0, 2.0, -0.5, 3.0};
        std::vector<std::vector<double>> one_sample{{1.5, 1.0, 0.5, 3.0}};
        cfg.tau = 0.5;
        cfg.quantile = 0.5;
        double mad = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            mad += std::abs(one_sample[0][i] - ref[i]);
        }
        mad /= static_cast<double>(ref.size());
        const double score = pinball_score(one_sample, one_sample, ref, ref, cfg);
        CHECK(std::abs(score - 0.5 * mad) < 1e-12);
    }
    SUBCASE("asymmetric penalties are exact") {
        cfg.tau = 0.9;
        std::vector<double> ref{0.0};
        std::vector<std::vector<double>> over{{1.0}};   // prediction one above
        std::vector<std::vector<double>> under{{-1.0}}; // one below
        CHECK(pinball_score(over, over, ref, ref, cfg) == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(pinball_score(under, under, ref, ref, cfg) == doctest::Approx(0.1).epsilon(1e-15));
    }
    SUBCASE("empirical quantiles interpolate") {
        CHECK(empirical_quantile({3.0, 1.0, 2.0}, 0.5) == doctest::Approx(2.0));
        CHECK(empirical_quantile({1.0, 2.0}, 0.5) == doctest::Approx(1.5));
        CHECK(empirical_quantile({1.0, 2.0, 3.0, 4.0}, 0.0) == doctest::Approx(1.0));
        CHECK(empirical_quantile({1.0, 2.0, 3.0, 4.0}, 1.0) == doctest::Approx(4.0));
    }
}

TEST_CASE("playback reproduces a static generating model exactly") {
    const FitProblem p = zip_problem();
    const auto comp = LoadComposition::from_fractions(
        {"pz", "pi", "pp", "qz", "qi", "qp"}, {0.20, 0.35, 0.45, 0.15, 0.30, 0.55}, {0, 3});
    const auto ev = evaluate_composition(p, comp, 1, 42);
    CHECK(ev.mean_loss < 1e-20);
    CHECK(ev.failures == 0);
    REQUIRE(ev.samples.size() == 1);

    const int b = p.reference.bus_index(2);
    for (std::size_t k = 0; k < p.reference.n_samples(); ++k) {
        CHECK(std::abs(ev.samples[0].p[k] - p.reference.bus_p[b][k]) < 1e-10);
        CHECK(std::abs(ev.samples[0].q[k] - p.reference.bus_q[b][k]) < 1e-10);
    }
}

TEST_CASE("composition evaluation is deterministic and collapses for static families") {
    const FitProblem p = zip_problem();
    const auto comp = p.composition_template();
    const auto a = evaluate_composition(p, comp, 8, 77);
    const auto b = evaluate_composition(p, comp, 8, 77);
    CHECK(a.mean_loss == b.mean_loss);
    CHECK(a.samples.size() == 1);  // no sampled parameters for this family
    const auto c = evaluate_composition(p, comp, 8, 123456);
    CHECK(a.mean_loss == c.mean_loss);  // and therefore seed-independent
}

TEST_CASE("failed draws are charged the penalty loss") {
    FitProblem p = zip_problem();
    p.family = ModelFamily::ZipIm;
    // impossible loading range forces every motor initialization to fail
    p.ranges.ranges["im.loading"] = {5.0, 6.0};
    const auto comp = LoadComposition::from_fractions({"zip", "im"}, {0.5, 0.5});
    const auto ev = evaluate_composition(p, comp, 4, 9);
    CHECK(ev.failures == 4);
    CHECK(ev.mean_loss == doctest::Approx(p.penalty_floor));
}

TEST_CASE("stage one finds the generating composition on the step lattice") {
    FitProblem p = zip_problem();
    HyperParams hp;
    hp.ddqn.episodes = 400;
    hp.ddqn.max_steps_per_episode = 60;
    hp.ddqn.epsilon_decay_episodes = 300;
    hp.ddqn.epsilon_end = 0.2;
    hp.ddqn.hidden = {32, 32};
    hp.ddqn.lr_alpha = 5e-3;
    hp.top_k = 5;

    const auto stage_one = train_stage_one(p, hp, 11);
    REQUIRE_FALSE(stage_one.candidates.empty());

    const auto grid = grid_search_lattice(p, hp.delta_f, 11, 1);
    CHECK(grid.points == 231 * 231);
    // the reference generator sits on the lattice, so the lattice argmin is it
    CHECK(grid.best_loss < 1e-20);
    CHECK(grid.best.f(0) == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(grid.best.f(3) == doctest::Approx(0.15).epsilon(1e-12));

    const auto& best = stage_one.candidates.front();
    for (std::size_t i = 0; i < best.composition.size(); ++i) {
        CHECK(std::abs(best.composition.f(i) - grid.best.f(i)) <= hp.delta_f + 1e-12);
    }
}

TEST_CASE("stage one aborts cleanly when nothing simulates") {
    FitProblem p = zip_problem();
    p.family = ModelFamily::ZipIm;
    p.ranges.ranges["im.loading"] = {5.0, 6.0};
    HyperParams hp;
    hp.ddqn.episodes = 1;
    hp.ddqn.max_steps_per_episode = 1;
    hp.m_samples = 2;
    // the single step moves 0.05 off uniform, so every visited composition
    // keeps a motor share and every draw fails
    CHECK_THROWS_AS(train_stage_one(p, hp, 3), NoCandidate);
}

TEST_CASE("candidates rank by quantile score with the generator first") {
    FitProblem p = zip_problem();
    std::vector<CandidateSolution> candidates(2);
    candidates[0].composition = LoadComposition::from_fractions(
        {"pz", "pi", "pp", "qz", "qi", "qp"}, {0.35, 0.35, 0.30, 0.35, 0.30, 0.35}, {0, 3});
    candidates[0].mean_loss = 1.0;
    candidates[1].composition = LoadComposition::from_fractions(
        {"pz", "pi", "pp", "qz", "qi", "qp"}, {0.20, 0.35, 0.45, 0.15, 0.30, 0.55}, {0, 3});
    candidates[1].mean_loss = 0.0;

    rank_candidates(candidates, p, p.pinball, 1, 5);
    CHECK(candidates[0].pinball_score < 1e-12);  // exact generator scores zero
    CHECK(candidates[0].composition.f(0) == doctest::Approx(0.20));
    CHECK(candidates[1].pinball_score > candidates[0].pinball_score);
}

TEST_CASE("stage two passes through for the static family and refines dynamics") {
    FitProblem p = zip_problem();
    const auto comp = LoadComposition::from_fractions(
        {"pz", "pi", "pp", "qz", "qi", "qp"}, {0.20, 0.35, 0.45, 0.15, 0.30, 0.55}, {0, 3});
    const auto st = stage_two_monte_carlo(p, comp, 50, 7);
    CHECK(st.best_params.empty());
    CHECK(st.best_loss < 1e-20);

    // degenerate ranges pin the dynamic family to a point
    FitProblem pim = zip_problem();
    pim.family = ModelFamily::ZipIm;
    pim.ranges.ranges["im.rs"] = {0.03, 0.03};
    const auto comp2 = LoadComposition::from_fractions({"zip", "im"}, {0.6, 0.4});
    const auto st2 = stage_two_monte_carlo(pim, comp2, 3, 7);
    CHECK(st2.best_params.at("im.rs") == doctest::Approx(0.03));

    FitProblem bad = pim;
    bad.ranges.ranges["im.loading"] = {5.0, 6.0};
    CHECK_THROWS_AS(stage_two_monte_carlo(bad, comp2, 5, 7), AllFailed);
}

TEST_CASE("the whole fit pipeline recovers a static reference") {
    FitJob job;
    job.problem = zip_problem();
    job.hp.ddqn.episodes = 400;
    job.hp.ddqn.max_steps_per_episode = 60;
    job.hp.ddqn.epsilon_decay_episodes = 300;
    job.hp.ddqn.epsilon_end = 0.2;
    job.hp.ddqn.hidden = {32, 32};
    job.hp.ddqn.lr_alpha = 5e-3;
    job.seed = 21;

    const FitOutcome out = run_fit(job);
    CHECK(out.rmse_p < 0.02);
    CHECK(out.rmse_q < 0.02);
    CHECK(out.fitted.type == LoadModelSpec::Type::Zip);
    CHECK(out.candidates.front().pinball_score <
          out.candidates.back().pinball_score + 1e-18);
}

TEST_CASE("range files parse and sample inside their bounds") {
    const auto r = ParameterRanges::from_json_text(
        R"({"version": 3, "ranges": {"im.rs": [0.02, 0.05]}})", "inline");
    CHECK(r.version == 3);
    Rng rng(4);
    for (int k = 0; k < 200; ++k) {
        const double v = r.sample("im.rs", 0.1, rng);
        CHECK(v >= 0.02);
        CHECK(v <= 0.05);
    }
    CHECK(r.sample("missing.key", 0.42, rng) == 0.42);
    CHECK(r.midpoint("im.rs", 0.0) == doctest::Approx(0.035));
    CHECK_THROWS_AS(ParameterRanges::from_json_text(R"({"ranges": {"x": [2, 1]}})", "inline"),
                    ParseError);
}

TEST_CASE("sampled parameter sets honor their ranges and seeds") {
    FitProblem p = zip_problem();
    p.family = ModelFamily::ClmLite;
    p.ranges.ranges["clm.ma.rs"] = {0.02, 0.06};
    Rng rng1(9), rng2(9);
    const auto a = sample_parameters(p, rng1);
    const auto b = sample_parameters(p, rng2);
    CHECK(a == b);
    CHECK(a.at("clm.ma.rs") >= 0.02);
    CHECK(a.at("clm.ma.rs") <= 0.06);
    // internal zip shares always form simplexes
    CHECK(a.at("clm.zip.p1c") + a.at("clm.zip.p2c") + a.at("clm.zip.p3c") ==
          doctest::Approx(1.0).epsilon(1e-12));
}
