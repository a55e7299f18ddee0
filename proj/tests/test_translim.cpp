#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tslim/errors.hpp"
#include "tslim/netcase.hpp"
#include "tslim/rng.hpp"
#include "tslim/translim.hpp"

using namespace tslim;

namespace {

// slack feeding a load bus over two parallel lines; outage of either line
// puts the whole transfer on the survivor, so its rating is the limit
NetworkCase parallel_toy(double rating_mw = 100.0, double p_base_mw = 50.0) {
    NetworkCase net;
    Bus b1;
    b1.id = 1;
    b1.kind = BusKind::Slack;
    Bus b2;
    b2.id = 2;
    b2.kind = BusKind::PQ;
    b2.p_load = p_base_mw / 100.0;
    b2.q_load = 0.0;
    net.buses = {b1, b2};
    Branch br;
    br.from = 1;
    br.to = 2;
    br.x = 1e-6;  // negligible series drop keeps flow equal to load
    br.rating = rating_mw / 100.0;
    net.branches = {br, br};
    Generator g;
    g.bus = 1;
    g.v_set = 1.0;
    g.p_set = p_base_mw / 100.0;
    g.p_max = 100.0;
    g.h = 5.0;
    g.xdp = 0.1;
    g.d = 2.0;
    net.generators = {g};
    return net;
}

TransferStudy toy_study(double delta_p = 10.0, double cap = 200.0) {
    TransferStudy s;
    s.name = "toy";
    s.sink_bus = 2;
    s.source_gen_buses = {1};
    s.delta_p_mw = delta_p;
    s.p_cap_mw = cap;
    s.fault.t_end = 0.8;
    s.fault.fault_time = 0.1;
    return s;
}

}  // namespace

TEST_CASE("scaling the operating point") {
    NetworkCase net = parallel_toy();
    net.buses[1].q_load = 0.15;
    TransferStudy study = toy_study();

    SUBCASE("the base level is the identity") {
        const NetworkCase out = scale_operating_point(net, study, 50.0);
        CHECK(out.buses[1].p_load == doctest::Approx(net.buses[1].p_load).epsilon(1e-15));
        CHECK(out.generators[0].p_set ==
              doctest::Approx(net.generators[0].p_set).epsilon(1e-15));
    }
    SUBCASE("power factor is preserved") {
        const NetworkCase out = scale_operating_point(net, study, 130.0);
        const double ratio0 = net.buses[1].q_load / net.buses[1].p_load;
        const double ratio1 = out.buses[1].q_load / out.buses[1].p_load;
        CHECK(std::abs(ratio1 - ratio0) < 1e-9);
    }
    SUBCASE("two equal sources split the increase evenly") {
        NetworkCase two = net;
        Bus b3;
        b3.id = 3;
        b3.kind = BusKind::PV;
        two.buses.push_back(b3);
        Branch br;
        br.from = 1;
        br.to = 3;
        br.x = 0.05;
        br.rating = 10.0;
        two.branches.push_back(br);
        Generator g2 = two.generators[0];
        g2.bus = 3;
        g2.p_set = two.generators[0].p_set;
        two.generators.push_back(g2);
        TransferStudy st = study;
        st.source_gen_buses = {1, 3};
        const NetworkCase out = scale_operating_point(two, st, 150.0);
        CHECK(out.generators[0].p_set - two.generators[0].p_set ==
              doctest::Approx(0.5).epsilon(1e-12));
        CHECK(out.generators[1].p_set - two.generators[1].p_set ==
              doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("redispatch past a ceiling is an error") {
        NetworkCase capped = net;
        capped.generators[0].p_max = 1.0;  // 100 MW
        CHECK_THROWS_AS(scale_operating_point(capped, study, 180.0),
                        SourceCapacityExceeded);
    }
}

TEST_CASE("assessment of a comfortable level passes every screen") {
    const NetworkCase net = parallel_toy();
    const TransferStudy study = toy_study();
    const StepRecord rec = assess_point(net, study, 60.0);
    CHECK(rec.static_ok);
    CHECK(rec.feasible);
    CHECK(rec.verdicts.size() == 2);
    for (const auto& cv : rec.verdicts) {
        CHECK(cv.static_ok);
        CHECK(cv.dynamics_run);
        CHECK(cv.dynamic == Verdict::Stable);
    }
}

TEST_CASE("thermal overload binds the assessment") {
    const NetworkCase net = parallel_toy(100.0);
    const TransferStudy study = toy_study();
    const StepRecord rec = assess_point(net, study, 110.0);
    CHECK_FALSE(rec.feasible);
    CHECK(rec.binding == BindingCriterion::Thermal);
    CHECK(rec.worst_contingency == 0);
}

TEST_CASE("islanding outages are excluded from the roster") {
    NetworkCase net = parallel_toy();
    net.branches.pop_back();  // single line now
    const TransferStudy study = toy_study();
    CHECK(resolve_contingencies(net, study).empty());

    TransferStudy explicit_study = study;
    explicit_study.contingencies = {0};
    CHECK(resolve_contingencies(net, explicit_study).empty());
}

TEST_CASE("the sweep stops exactly at the rating-bound level") {
    const NetworkCase net = parallel_toy(100.0, 50.0);
    const TransferStudy study = toy_study(10.0);
    const LimitResult res = find_limit(net, study);
    CHECK(res.p_max_mw == doctest::Approx(100.0));
    CHECK(res.binding_criterion == BindingCriterion::Thermal);
    CHECK_FALSE(res.capped);
    // the step log supports the limit directly
    bool found_infeasible = false;
    for (const auto& st : res.steps) {
        if (st.p_level_mw <= res.p_max_mw + 1e-9) CHECK(st.feasible);
        if (std::abs(st.p_level_mw - (res.p_max_mw + study.delta_p_mw)) < 1e-9) {
            CHECK_FALSE(st.feasible);
            found_infeasible = true;
        }
    }
    CHECK(found_infeasible);
}

TEST_CASE("halving the step moves the limit by at most the coarse step") {
    const NetworkCase net = parallel_toy(104.0, 50.0);
    const LimitResult coarse = find_limit(net, toy_study(10.0));
    const LimitResult fine = find_limit(net, toy_study(5.0));
    CHECK(fine.p_max_mw >= coarse.p_max_mw - 1e-9);
    CHECK(fine.p_max_mw - coarse.p_max_mw <= 10.0 + 1e-9);
}

TEST_CASE("an infeasible base point is reported, not searched") {
    const NetworkCase net = parallel_toy(100.0, 150.0);
    CHECK_THROWS_AS(find_limit(net, toy_study()), BaseInfeasible);
}

TEST_CASE("a cap reached while feasible is flagged") {
    const NetworkCase net = parallel_toy(1000.0, 50.0);
    TransferStudy study = toy_study(25.0, 150.0);
    const LimitResult res = find_limit(net, study);
    CHECK(res.capped);
    CHECK(res.p_max_mw == doctest::Approx(150.0));
}

TEST_CASE("bisection agrees with the sweep on randomized toys") {
    Rng rng(808);
    for (int trial = 0; trial < 20; ++trial) {
        const double rating = rng.uniform(80.0, 180.0);
        const double p_base = rng.uniform(30.0, 60.0);
        const double dp = 5.0 + 5.0 * static_cast<double>(rng.below(4));
        const NetworkCase net = parallel_toy(rating, p_base);
        TransferStudy study = toy_study(dp, 260.0);
        study.assume_monotone = true;

        const LimitResult sweep = find_limit(net, study);
        const LimitResult bisect = find_limit_bisect(net, study);
        CHECK(sweep.p_max_mw == doctest::Approx(bisect.p_max_mw).epsilon(1e-12));
        CHECK(sweep.capped == bisect.capped);
    }
}

TEST_CASE("identical studies produce identical results") {
    const NetworkCase net = parallel_toy();
    const TransferStudy study = toy_study();
    const LimitResult a = find_limit(net, study);
    const LimitResult b = find_limit(net, study);
    CHECK(limit_to_json(a, study, "m", net) == limit_to_json(b, study, "m", net));
    CHECK(steps_to_csv(a, net) == steps_to_csv(b, net));
}

TEST_CASE("permuting the contingency list never changes the record") {
    NetworkCase net = parallel_toy();
    Branch third = net.branches[0];
    third.rating = 2.0;
    net.branches.push_back(third);

    TransferStudy s1 = toy_study();
    s1.contingencies = {0, 1, 2};
    TransferStudy s2 = toy_study();
    s2.contingencies = {2, 0, 1};

    const StepRecord a = assess_point(net, s1, 120.0);
    const StepRecord b = assess_point(net, s2, 120.0);
    REQUIRE(a.verdicts.size() == b.verdicts.size());
    for (std::size_t i = 0; i < a.verdicts.size(); ++i) {
        CHECK(a.verdicts[i].branch_index == b.verdicts[i].branch_index);
        CHECK(a.verdicts[i].static_ok == b.verdicts[i].static_ok);
        CHECK(a.verdicts[i].max_loading == b.verdicts[i].max_loading);
        CHECK(a.verdicts[i].dynamic == b.verdicts[i].dynamic);
    }
    CHECK(a.feasible == b.feasible);
    CHECK(a.worst_contingency == b.worst_contingency);
}

TEST_CASE("trend tables lay out studies by models") {
    SUBCASE("single model, single row") {
        std::vector<TrendEntry> entries{{"case-a", "zip", 1200.0, false}};
        const std::string csv = trend_report_csv(entries);
        CHECK(csv == "study,zip\ncase-a,1200\n");
    }
    SUBCASE("ties are marked in the text layout") {
        std::vector<TrendEntry> entries{{"case-a", "m1", 1000.0, false},
                                        {"case-a", "m2", 1000.0, false}};
        const std::string text = trend_report_text(entries);
        CHECK(text.find("m1 = m2") != std::string::npos);
    }
    SUBCASE("six studies by eight models fill the grid") {
        std::vector<TrendEntry> entries;
        for (int s = 0; s < 6; ++s) {
            for (int m = 0; m < 8; ++m) {
                entries.push_back({"case-" + std::to_string(s), "model" + std::to_string(m),
                                   1000.0 + 10.0 * m, false});
            }
        }
        const std::string csv = trend_report_csv(entries);
        std::size_t rows = 0, commas_first_row = 0;
        for (char c : csv) rows += (c == '\n');
        for (char c : csv.substr(0, csv.find('\n'))) commas_first_row += (c == ',');
        CHECK(rows == 7);             // header plus six studies
        CHECK(commas_first_row == 8); // eight model columns
    }
}
