#include <gtest/gtest.h>

#include <cmath>

#include "gridreserve/robust.hpp"
#include "gridreserve/rng.hpp"
#include "test_support.hpp"

using namespace gridreserve;
using namespace gridreserve::netmodel;
using namespace gridreserve::robust;
using nlohmann::json;
using testsupport::fixture;
using testsupport::flat_series;

namespace {

GridCase two_bus(double load_p = 0.6, double load_q = 0.2, double pv = 0.3,
                 double dg_smax = 2.0, int steps = 4) {
    json doc = json::parse(R"({
      "name":"rb","base_mva":1.0,
      "horizon":{"steps":4,"dt_hours":1.0},
      "buses":[{"id":"root","phases":["a"],"vmin_pu":0.8,"vmax_pu":1.2,"is_root":true},
               {"id":"b1","phases":["a"],"vmin_pu":0.8,"vmax_pu":1.2}],
      "branches":[{"id":"br01","from":"root","to":"b1","phases":["a"],
                   "r_pu":[[0.01]],"x_pu":[[0.02]],"smax":5.0}],
      "devices":[{"id":"dg0","bus":"root","kind":"dg","smax":2.0,
                  "cost":{"p":1.0,"reserve":0.05}},
                 {"id":"pv1","bus":"b1","kind":"pv","smax":1.0,
                  "cost":{"curtail_p":10.0,"reserve":0.02}},
                 {"id":"ld1","bus":"b1","kind":"load",
                  "cost":{"curtail_p":100.0,"curtail_q":100.0,"reserve":0.5}}],
      "forecasts":{}
    })");
    doc["horizon"]["steps"] = steps;
    doc["devices"][0]["smax"] = dg_smax;
    doc["forecasts"]["pv1"] = {{"p", flat_series(steps, pv)}, {"q", flat_series(steps, 0.0)}};
    doc["forecasts"]["ld1"] = {{"p", flat_series(steps, load_p)}, {"q", flat_series(steps, load_q)}};
    return parse_case(doc);
}

DisturbanceSpec load_add_spec(double lo, double hi, int from, int to) {
    DisturbanceSpec s;
    s.dims.push_back({"ld1", Channel::LoadForecastAdd, lo, hi, from, to});
    return s;
}

ReserveSchedule zero_schedule(const GridCase& c, const dispatch::DispatchSolution& sol) {
    ReserveSchedule sched;
    sched.steps = c.horizon.steps;
    for (size_t di = 0; di < c.devices.size(); ++di) {
        const auto& d = c.devices[di];
        sched.up[d.id].assign(static_cast<size_t>(c.horizon.steps), 0.0);
        sched.dn[d.id].assign(static_cast<size_t>(c.horizon.steps), 0.0);
        auto& sp = sched.setpoint[d.id];
        for (int k = 0; k < c.horizon.steps; ++k) {
            if (d.kind == DeviceKind::Load)
                sp.push_back(sol.series[di].curtail_p_pu[static_cast<size_t>(k)]);
            else
                sp.push_back(sol.series[di].p_pu[static_cast<size_t>(k)]);
        }
    }
    return sched;
}

} // namespace

TEST(Vertices, EnumerationOrderAndDedup) {
    DisturbanceSpec s;
    s.dims.push_back({"a", Channel::LoadForecastAdd, -1.0, 1.0, 0, 1});
    s.dims.push_back({"b", Channel::LoadForecastAdd, -2.0, 2.0, 0, 1});
    auto v = s.vertices();
    ASSERT_EQ(v.size(), 4u);
    EXPECT_EQ(v[0], (std::vector<double>{-1.0, -2.0}));
    EXPECT_EQ(v[1], (std::vector<double>{-1.0, 2.0}));
    EXPECT_EQ(v[2], (std::vector<double>{1.0, -2.0}));
    EXPECT_EQ(v[3], (std::vector<double>{1.0, 2.0}));

    DisturbanceSpec degen;
    degen.dims.push_back({"a", Channel::LoadForecastAdd, 0.0, 0.0, 0, 1});
    degen.dims.push_back({"b", Channel::LoadForecastAdd, 0.0, 0.0, 0, 1});
    EXPECT_EQ(degen.vertices().size(), 1u);
}

TEST(Vertices, BudgetGuard) {
    DisturbanceSpec s;
    for (int i = 0; i < 13; ++i)
        s.dims.push_back({"d" + std::to_string(i), Channel::LoadForecastAdd, -1, 1, 0, 1});
    EXPECT_THROW(s.vertices(), VertexBudgetExceeded);
}

TEST(SolveRobust, PartialDgTripCovered) {
    // capacity of the only DG halved to 0.25 of rating over the full horizon;
    // recourse must lean on load shedding and the spare PV headroom
    GridCase c = two_bus(1.2, 0.2, 0.3);
    DisturbanceSpec spec;
    spec.dims.push_back({"dg0", Channel::CapacityScale, 0.25, 1.0, 0, 4});
    auto sol = solve_robust(c, spec);
    EXPECT_EQ(sol.vertices, 2);
    // baseline DG carries ~0.9; the tripped vertex caps it near 0.48, so the
    // other resources must hold at least the difference in up-reserves
    for (int k = 0; k < 4; ++k) {
        double up_others = 0.0;
        for (const auto& [id, v] : sol.schedule.up)
            if (id != "dg0") up_others += v[static_cast<size_t>(k)];
        EXPECT_GE(up_others, 0.40) << "step " << k;
    }
    EXPECT_TRUE(verify_robust(c, spec, sol));
}

TEST(SolveRobust, DegenerateBoxMatchesBaseline) {
    GridCase c = two_bus();
    auto base = dispatch::solve_baseline(c);
    auto sol = solve_robust(c, load_add_spec(0.0, 0.0, 0, 4));
    EXPECT_NEAR(sol.schedule.total(), 0.0, 1e-5);
    EXPECT_NEAR(sol.base.objective, base.objective, 1e-4);
}

TEST(SolveRobust, ObjectiveAtLeastBaseline) {
    GridCase c = two_bus();
    auto base = dispatch::solve_baseline(c);
    auto sol = solve_robust(c, load_add_spec(0.0, 0.5, 0, 4));
    EXPECT_GE(sol.base.objective, base.objective - 1e-6);
}

TEST(SolveRobust, BeyondAllCapacityInfeasible) {
    GridCase c = two_bus();
    // cap shedding below the disturbed deficit so no recourse exists
    for (auto& d : c.devices)
        if (d.kind == DeviceKind::Load) d.curtail_max_pu = 0.05;
    DisturbanceSpec spec = load_add_spec(0.0, 5.0, 0, 4);
    EXPECT_THROW(solve_robust(c, spec), InfeasibleRobust);
}

TEST(SolveRobust, ScheduleWithinHeadroom) {
    GridCase c = two_bus(1.2, 0.2, 0.3);
    DisturbanceSpec spec;
    spec.dims.push_back({"dg0", Channel::CapacityScale, 0.25, 1.0, 0, 4});
    auto sol = solve_robust(c, spec);
    for (const auto& d : c.devices) {
        for (int k = 0; k < 4; ++k) {
            double set = sol.schedule.setpoint.at(d.id)[static_cast<size_t>(k)];
            double up = sol.schedule.up.at(d.id)[static_cast<size_t>(k)];
            double dn = sol.schedule.dn.at(d.id)[static_cast<size_t>(k)];
            auto h = robust::detail::headroom(c, d, k);
            if (std::isfinite(h.cap_hi)) EXPECT_LE(set + up, h.cap_hi + 1e-6);
            EXPECT_GE(set - dn, h.cap_lo - 1e-6);
        }
    }
}

TEST(ProportionalDispatch, SharesAndSaturation) {
    ReserveSchedule sched;
    sched.steps = 1;
    sched.up["A"] = {2.0};
    sched.up["B"] = {3.0};
    sched.dn["A"] = {1.0};
    sched.dn["B"] = {1.0};

    auto act = proportional_dispatch(sched, 1.0, 0);
    EXPECT_NEAR(act.activation.at("A"), 0.4, 1e-12);
    EXPECT_NEAR(act.activation.at("B"), 0.6, 1e-12);
    EXPECT_NEAR(act.deployed, 1.0, 1e-12);
    EXPECT_NEAR(act.shortfall, 0.0, 1e-12);

    auto sat = proportional_dispatch(sched, 10.0, 0);
    EXPECT_DOUBLE_EQ(sat.activation.at("A"), 2.0);
    EXPECT_DOUBLE_EQ(sat.activation.at("B"), 3.0);
    EXPECT_DOUBLE_EQ(sat.shortfall, 5.0);

    auto idle = proportional_dispatch(sched, 0.0, 0);
    EXPECT_DOUBLE_EQ(idle.activation.at("A"), 0.0);
    EXPECT_DOUBLE_EQ(idle.deployed, 0.0);

    // exact sum at representable capacities
    ReserveSchedule even;
    even.steps = 1;
    even.up["A"] = {2.0};
    even.up["B"] = {2.0};
    auto half = proportional_dispatch(even, 1.0, 0);
    EXPECT_EQ(half.activation.at("A") + half.activation.at("B"), 1.0);
}

TEST(Margins, NominalPointFeasible) {
    GridCase c = two_bus();
    auto sol = dispatch::solve_baseline(c);
    DisturbanceSpec spec = load_add_spec(-1.0, 1.0, 0, 4);
    auto rep = compute_margins(c, spec, sol, spec.nominal());
    EXPECT_LE(rep.max_value, 1e-6);
}

TEST(Margins, LostDgShowsAsBalanceGap) {
    // DG carries 1.0; capacity scaled to 0.25 of 2.0 => cap 0.5, gap +0.5
    GridCase c = two_bus(1.0, 0.0, 0.0);
    auto sol = dispatch::solve_baseline(c);
    DisturbanceSpec spec;
    spec.dims.push_back({"dg0", Channel::CapacityScale, 0.0, 1.0, 0, 4});
    auto rep = compute_margins(c, spec, sol, {0.25});
    double balance0 = 0.0;
    for (size_t i = 0; i < rep.labels.size(); ++i)
        if (rep.labels[i] == "balance+[0]") balance0 = rep.values[i];
    EXPECT_NEAR(balance0, 0.5, 1e-6);
}

TEST(Margins, RecourseRestoresFeasibility) {
    GridCase c = two_bus();
    DisturbanceSpec spec = load_add_spec(-1.0, 1.0, 0, 4);
    std::vector<double> w = {0.4};
    auto disturbed = apply_disturbance(c, spec, w);
    auto recourse = dispatch::solve_baseline(disturbed.grid);
    auto rep = compute_margins(c, spec, recourse, w);
    EXPECT_LE(rep.max_value, 1e-6);
}

TEST(Radius, MatchesAnalyticSpareCapacity) {
    GridCase c = two_bus();
    auto sol = dispatch::solve_baseline(c);
    DisturbanceSpec spec = load_add_spec(-3.0, 3.0, 0, 4);
    auto rep = feasibility_radius(c, spec, sol);
    // +e: DG apparent rating minus reactive burden plus PV, less load
    double analytic = std::sqrt(2.0 * 2.0 - 0.2 * 0.2) + 0.3 - 0.6;
    ASSERT_EQ(rep.directions.size(), 2u);
    EXPECT_NEAR(rep.directions[0].r, analytic, 1e-3);
    // -e: load can always fall to zero; capped by the box bound
    EXPECT_NEAR(rep.directions[1].r, 3.0, 1e-9);
    EXPECT_LE(rep.margins_max, 1e-6);
}

TEST(Radius, BindingDirectionGivesZero) {
    // load pinned exactly at max servable power
    double analytic = std::sqrt(2.0 * 2.0 - 0.2 * 0.2) + 0.3;
    GridCase c = two_bus(analytic, 0.2, 0.3);
    auto sol = dispatch::solve_baseline(c);
    DisturbanceSpec spec = load_add_spec(-1.0, 1.0, 0, 4);
    auto rep = feasibility_radius(c, spec, sol);
    EXPECT_LE(rep.directions[0].r, 2e-4);
}

TEST(Radius, MonotoneUnderCapacityShrink) {
    GridCase big = two_bus();
    GridCase small = two_bus(0.6, 0.2, 0.3, /*dg_smax=*/1.5);
    DisturbanceSpec spec = load_add_spec(-3.0, 3.0, 0, 4);
    auto r_big = feasibility_radius(big, spec, dispatch::solve_baseline(big));
    auto r_small = feasibility_radius(small, spec, dispatch::solve_baseline(small));
    EXPECT_LE(r_small.directions[0].r, r_big.directions[0].r + 1e-3);
}

TEST(Radius, ConvexCombinationsFeasible) {
    GridCase c = two_bus();
    auto sol = dispatch::solve_baseline(c);
    DisturbanceSpec spec = load_add_spec(-3.0, 3.0, 0, 4);
    auto rep = feasibility_radius(c, spec, sol);
    Rng rng(5);
    RecourseOptions opt;
    for (int trial = 0; trial < 10; ++trial) {
        double beta = rng.uniform01();
        std::vector<double> w(spec.dims.size(), 0.0);
        for (size_t j = 0; j < w.size(); ++j)
            w[j] = beta * rep.directions[0].certified[j] +
                   (1.0 - beta) * rep.directions[1].certified[j];
        EXPECT_TRUE(recourse_feasible(c, spec, w, sol, opt)) << "beta " << beta;
    }
}

TEST(Gain, PinnedVariableIdentity) {
    auto build = [](const std::vector<double>& w) {
        conic::ConicProgram prog;
        prog.add_var("x", w[0], w[0]);
        return prog;
    };
    auto prog = build({0.7});
    auto rep = conic::solve(prog);
    ASSERT_EQ(rep.status, conic::SolveStatus::Optimal);
    auto K = gain_from_family(build, {0.7}, rep);
    ASSERT_EQ(K.rows(), 1);
    ASSERT_EQ(K.cols(), 1);
    EXPECT_NEAR(K(0, 0), 1.0, 1e-9);
}

TEST(Gain, MarginalGeneratorFollowsLoad) {
    auto build = [](const std::vector<double>& w) {
        conic::ConicProgram prog;
        int p = prog.add_var("pdg", 0.0, 10.0);
        prog.add_eq({{p, 1.0}}, 0.7 + w[0]);
        prog.add_cost(p, 1.0);
        return prog;
    };
    auto prog = build({0.0});
    auto rep = conic::solve(prog);
    ASSERT_EQ(rep.status, conic::SolveStatus::Optimal);
    auto K = gain_from_family(build, {0.0}, rep);
    EXPECT_NEAR(K(0, 0), 1.0, 1e-9);
}

TEST(Gain, PredictsResolveOnTwoBus) {
    GridCase c = two_bus();
    DisturbanceSpec spec = load_add_spec(-1.0, 1.0, 0, 4);
    auto sol = dispatch::solve_baseline(c);
    Eigen::MatrixXd K = sensitivity_gain(c, spec, sol.report);
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        double dw = rng.uniform(-1e-3, 1e-3);
        auto disturbed = apply_disturbance(c, spec, {dw});
        auto resolved = dispatch::solve_baseline(disturbed.grid);
        double worst = 0.0;
        for (size_t i = 0; i < sol.report.x.size(); ++i) {
            double predicted = sol.report.x[i] + K(static_cast<int>(i), 0) * dw;
            worst = std::max(worst, std::fabs(resolved.report.x[i] - predicted));
        }
        EXPECT_LE(worst, 1e-6) << "dw " << dw;
    }
}

TEST(Gain, DegenerateActiveSetRejected) {
    // interior optimum: no bounds active, fewer active rows than variables
    auto build = [](const std::vector<double>& w) {
        conic::ConicProgram prog;
        int a = prog.add_var("a", 0.0, 10.0);
        int b = prog.add_var("b", 0.0, 10.0);
        prog.add_eq({{a, 1.0}, {b, 1.0}}, 4.0 + w[0]);
        // symmetric costs leave the split between a and b undetermined
        prog.add_cost(a, 1.0);
        prog.add_cost(b, 1.0);
        return prog;
    };
    auto prog = build({0.0});
    auto rep = conic::solve(prog);
    ASSERT_EQ(rep.status, conic::SolveStatus::Optimal);
    EXPECT_THROW(gain_from_family(build, {0.0}, rep), DegenerateActiveSet);
}

TEST(Tune, ZeroReservesGiveZeroAlpha) {
    GridCase c = two_bus();
    auto base = dispatch::solve_baseline(c);
    DisturbanceSpec spec = load_add_spec(0.0, 2.0, 0, 4);
    RobustSolution rsol;
    rsol.base = base;
    rsol.schedule = zero_schedule(c, base);
    auto out = tune_reserve_gain(c, spec, rsol, 0, +1.0);
    EXPECT_LE(out.alpha, 1e-3);
}

TEST(Tune, ReservesCoveringHalfPuGiveHalfAlpha) {
    GridCase c = two_bus();
    auto base = dispatch::solve_baseline(c);
    DisturbanceSpec spec = load_add_spec(0.0, 2.0, 0, 4);
    RobustSolution rsol;
    rsol.base = base;
    rsol.schedule = zero_schedule(c, base);
    for (int k = 0; k < 4; ++k) rsol.schedule.up["dg0"][static_cast<size_t>(k)] = 0.5;
    auto out = tune_reserve_gain(c, spec, rsol, 0, +1.0);
    EXPECT_NEAR(out.alpha, 0.5, 1e-3);
}

TEST(Tune, SlackDirectionCapsAtBox) {
    GridCase c = two_bus();
    auto base = dispatch::solve_baseline(c);
    DisturbanceSpec spec;
    spec.dims.push_back({"pv1", Channel::PvForecastAdd, -0.2, 1.0, 0, 4});
    RobustSolution rsol;
    rsol.base = base;
    rsol.schedule = zero_schedule(c, base);
    auto out = tune_reserve_gain(c, spec, rsol, 0, +1.0);
    EXPECT_DOUBLE_EQ(out.alpha, 1.0);  // relaxing direction, capped by the box
}

TEST(DisturbanceSpecIo, JsonRoundTrip) {
    GridCase c = load_case(fixture("4bus.json"));
    DisturbanceSpec spec = DisturbanceSpec::load(fixture("dist_4bus.json"));
    spec.validate(c);
    ASSERT_EQ(spec.dims.size(), 2u);
    EXPECT_EQ(spec.dims[0].target, "dg0");
    EXPECT_EQ(spec.dims[0].channel, Channel::CapacityScale);
    EXPECT_EQ(spec.dims[1].channel, Channel::LoadForecastAdd);
    auto w = spec.nominal();
    EXPECT_DOUBLE_EQ(w[0], 1.0);
    EXPECT_DOUBLE_EQ(w[1], 0.0);
}
