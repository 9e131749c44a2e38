#pragma once

// Monte-Carlo validation of a (dispatch, reserves) pair against sampled
// cyber-physical events, and the efficiency-resilience Pareto sweep.
//
// Validation is quasi-static: each scenario draws one realization per active
// event, converts it to a per-step supply-demand imbalance, deploys reserves
// proportionally and records the residual shortfall. Scenario i draws from
// an independent counter-based stream keyed by (seed, i), so reports are
// byte-identical at any thread count.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridreserve/dro.hpp"
#include "gridreserve/events.hpp"
#include "gridreserve/robust.hpp"
#include "gridreserve/stochastic.hpp"

namespace gridreserve::simharness {

using netmodel::GridCase;
using nlohmann::json;

struct ScenarioOutcome {
    int scenario_id = 0;
    events::Mode mode = events::Mode::Normal;  // mode at the worst step
    double violation_pu = 0.0;
};

struct ValidationReport {
    int scenarios = 0;
    double tol = 1e-6;
    double target_rho = 0.0;
    std::vector<ScenarioOutcome> outcomes;      // scenario order
    double violation_probability = 0.0;
    double var_violation = 0.0;
    double cvar_violation = 0.0;
    bool pass = false;
};

namespace detail {

/// Signed per-step deficit contribution of one event draw at one location.
/// Positive means demand exceeds scheduled supply.
inline double deficit_contribution(events::EventKind kind, double draw,
                                   double setpoint, double load_forecast) {
    using events::EventKind;
    switch (kind) {
    case EventKind::DgTrip:
    case EventKind::PvTrip:
        return -draw * setpoint;  // draw in [-1, 0] scales the scheduled output
    case EventKind::DgCyber:
    case EventKind::PvCyber:
        return draw * setpoint;  // over-reported output is missing in real time
    case EventKind::LoadCyber:
        return -draw * load_forecast;  // under-reported load shows up as deficit
    case EventKind::PvForecastErr:
        return -draw;  // extra PV (draw > 0) relieves the balance
    case EventKind::LoadForecastErr:
        return draw;
    case EventKind::WeatherPvLoss:
        return -draw;  // draw <= 0: lost PV in pu
    default:
        return draw;  // weather load loss: draw <= 0 creates surplus
    }
}

struct Baseline {
    // device id -> per-step scheduled injection (loads: consumption forecast)
    std::map<std::string, std::vector<double>> setpoint;
    std::map<std::string, std::vector<double>> load_forecast;
};

inline Baseline collect_baseline(const GridCase& c,
                                 const dispatch::DispatchSolution& sol) {
    Baseline b;
    for (size_t di = 0; di < c.devices.size(); ++di) {
        const auto& d = c.devices[di];
        b.setpoint[d.id] = sol.series[di].p_pu;
        if (d.kind == netmodel::DeviceKind::Load)
            b.load_forecast[d.id] = c.forecast(d.id).p_pu;
    }
    return b;
}

inline ScenarioOutcome run_scenario(const GridCase& c, const Baseline& base,
                                    const robust::ReserveSchedule& sched,
                                    const events::EventCatalog& cat,
                                    const events::ModeSchedule& modes, int scenario_id,
                                    std::uint64_t seed, double tol) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(scenario_id));
    const int K = c.horizon.steps;
    std::vector<double> deficit(static_cast<size_t>(K), 0.0);

    for (const auto& mw : modes.windows) {
        for (const auto& event_id : mw.event_subset) {
            const auto& e = cat.event(event_id);
            size_t e_idx = 0;
            for (size_t i = 0; i < cat.events.size(); ++i)
                if (cat.events[i].id == event_id) e_idx = i;
            for (const auto& loc : e.locations) {
                double p = cat.prob(e_idx, loc);
                // draw unconditionally so the stream layout is identical
                // across probability settings and methods
                bool occur = rng.bernoulli(p);
                double draw = e.distribution.draw(rng);
                if (!occur || p <= 0.0) continue;
                for (int k = mw.window.from; k < mw.window.to; ++k) {
                    double set = 0.0, lf = 0.0;
                    auto it = base.setpoint.find(loc);
                    if (it != base.setpoint.end()) set = it->second[static_cast<size_t>(k)];
                    auto lt = base.load_forecast.find(loc);
                    if (lt != base.load_forecast.end()) lf = lt->second[static_cast<size_t>(k)];
                    deficit[static_cast<size_t>(k)] +=
                        deficit_contribution(e.kind, draw, set, lf);
                }
            }
        }
    }

    ScenarioOutcome out;
    out.scenario_id = scenario_id;
    double worst = 0.0;
    double worst_imb = 0.0;
    out.mode = modes.windows.empty() ? events::Mode::Normal : modes.windows[0].mode;
    for (int k = 0; k < K; ++k) {
        double imb = deficit[static_cast<size_t>(k)];
        auto act = robust::proportional_dispatch(sched, imb, k);
        double viol = act.shortfall > tol ? act.shortfall : 0.0;
        if (viol > worst) {
            worst = viol;
            out.mode = modes.mode_at(k);
        }
        if (std::fabs(imb) > worst_imb && worst == 0.0) {
            worst_imb = std::fabs(imb);
            out.mode = modes.mode_at(k);
        }
    }
    out.violation_pu = worst;
    return out;
}

} // namespace detail

/// Number of worker threads honoring --threads and GRIDRESERVE_THREADS.
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("GRIDRESERVE_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Monte-Carlo validation of a solution + reserve schedule against the event
/// model. Never throws on violations; the report carries them.
inline ValidationReport validate(const GridCase& c,
                                 const dispatch::DispatchSolution& sol,
                                 const robust::ReserveSchedule& sched,
                                 const events::EventCatalog& cat,
                                 const events::ModeSchedule& modes, int n,
                                 std::uint64_t seed, double target_rho = 0.05,
                                 int threads = 0) {
    if (n < 1) throw DomainError("validate: n must be >= 1");
    ValidationReport rep;
    rep.scenarios = n;
    rep.target_rho = target_rho;
    rep.outcomes.resize(static_cast<size_t>(n));

    detail::Baseline base = detail::collect_baseline(c, sol);
    int nthreads = std::min(resolve_threads(threads), n);
    auto work = [&](int from, int to) {
        for (int i = from; i < to; ++i)
            rep.outcomes[static_cast<size_t>(i)] =
                detail::run_scenario(c, base, sched, cat, modes, i, seed, rep.tol);
    };
    if (nthreads <= 1) {
        work(0, n);
    } else {
        std::vector<std::thread> pool;
        int chunk = (n + nthreads - 1) / nthreads;
        for (int t = 0; t < nthreads; ++t) {
            int from = t * chunk, to = std::min(n, from + chunk);
            if (from >= to) break;
            pool.emplace_back(work, from, to);
        }
        for (auto& th : pool) th.join();
    }

    // deterministic aggregation in scenario order
    int violated = 0;
    std::vector<double> magnitudes;
    magnitudes.reserve(static_cast<size_t>(n));
    for (const auto& o : rep.outcomes) {
        if (o.violation_pu > rep.tol) ++violated;
        magnitudes.push_back(o.violation_pu);
    }
    rep.violation_probability = static_cast<double>(violated) / static_cast<double>(n);
    if (n >= static_cast<int>(std::ceil(1.0 / target_rho))) {
        auto est = stochastic::estimate_var_cvar(magnitudes, target_rho);
        rep.var_violation = est.var_value;
        rep.cvar_violation = est.cvar_value;
    }
    rep.pass = rep.violation_probability <= target_rho;
    return rep;
}

inline json report_to_json(const ValidationReport& rep) {
    json j;
    j["scenarios"] = rep.scenarios;
    j["violation_probability"] = rep.violation_probability;
    j["var_violation_pu"] = rep.var_violation;
    j["cvar_violation_pu"] = rep.cvar_violation;
    j["target_rho"] = rep.target_rho;
    j["pass"] = rep.pass;
    j["tol"] = rep.tol;
    json arr = json::array();
    for (const auto& o : rep.outcomes)
        arr.push_back({{"scenario_id", o.scenario_id},
                       {"mode", events::to_string(o.mode)},
                       {"violation_pu", o.violation_pu}});
    j["outcomes"] = arr;
    return j;
}

inline std::string report_to_csv(const ValidationReport& rep) {
    std::ostringstream os;
    os.precision(17);
    os << "scenario_id,mode,violation_pu\n";
    for (const auto& o : rep.outcomes)
        os << o.scenario_id << "," << events::to_string(o.mode) << ","
           << o.violation_pu << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// efficiency-resilience sweep

enum class Method { Robust, Chance, Dro, Cvar };

inline const char* to_string(Method m) {
    switch (m) {
    case Method::Robust: return "robust";
    case Method::Chance: return "chance";
    case Method::Dro: return "dro";
    default: return "cvar";
    }
}

inline Method method_from(const std::string& s) {
    if (s == "robust") return Method::Robust;
    if (s == "chance") return Method::Chance;
    if (s == "dro") return Method::Dro;
    if (s == "cvar") return Method::Cvar;
    throw DomainError("unknown method '" + s + "'");
}

struct SweepInputs {
    const events::EventCatalog* catalog = nullptr;
    const events::ModeSchedule* modes = nullptr;
    const robust::DisturbanceSpec* spec = nullptr;        // robust / dro
    const stochastic::GaussianModel* gauss = nullptr;     // chance
    const dro::SampleSet* samples = nullptr;              // dro / cvar
};

struct ParetoPoint {
    double rho = 0.0;
    double cost = 0.0;
    double resilience = 0.0;
    double total_reserves_pu = 0.0;
    std::uint64_t seed = 0;
    std::string error;  // nonempty when the point failed

    bool ok() const { return error.empty(); }
};

/// Shrinks the disturbance box toward its nominal point by (1 - rho); the
/// risk-level semantics of the sweep then carry over to the robust method.
inline robust::DisturbanceSpec scale_spec(const robust::DisturbanceSpec& spec,
                                          double rho) {
    robust::DisturbanceSpec out = spec;
    double f = 1.0 - rho;
    auto nom = spec.nominal();
    for (size_t j = 0; j < out.dims.size(); ++j) {
        auto& d = out.dims[j];
        d.lo = nom[j] + (d.lo - nom[j]) * f;
        d.hi = nom[j] + (d.hi - nom[j]) * f;
    }
    return out;
}

/// Solves the chosen method at level rho and returns the (solution, reserves)
/// pair used by validation.
inline robust::RobustSolution solve_method(const GridCase& c, Method method, double rho,
                                           const SweepInputs& in) {
    switch (method) {
    case Method::Robust: {
        if (!in.spec) throw DomainError("robust method needs a disturbance spec");
        return robust::solve_robust(c, scale_spec(*in.spec, rho));
    }
    case Method::Chance: {
        if (!in.gauss) throw DomainError("chance method needs a gaussian model");
        return stochastic::solve_chance(c, *in.gauss, rho);
    }
    case Method::Dro: {
        if (!in.spec || !in.samples)
            throw DomainError("dro method needs a disturbance spec and samples");
        auto aset = dro::build_ambiguity_set(*in.samples, rho);
        return dro::solve_dro(c, *in.spec, aset);
    }
    case Method::Cvar:
    default: {
        if (!in.samples) throw DomainError("cvar method needs samples");
        std::vector<double> mags;
        for (int i = 0; i < in.samples->count(); ++i)
            mags.push_back(in.samples->samples.row(i).lpNorm<1>());
        return stochastic::solve_cvar(c, mags, rho);
    }
    }
}

/// One solve + one validation per grid point; failures are recorded and the
/// sweep continues. Grid points share the seed so per-scenario draws pair up
/// across risk levels.
inline std::vector<ParetoPoint> pareto_sweep(const GridCase& c, Method method,
                                             const std::vector<double>& grid, int n,
                                             std::uint64_t seed, const SweepInputs& in,
                                             int threads = 0) {
    if (grid.empty()) throw DomainError("pareto_sweep: grid must be nonempty");
    if (!in.catalog || !in.modes)
        throw DomainError("pareto_sweep: catalog and mode schedule required");
    std::vector<ParetoPoint> out;
    for (double rho : grid) {
        ParetoPoint pt;
        pt.rho = rho;
        pt.seed = seed;
        try {
            auto sol = solve_method(c, method, rho, in);
            auto rep = validate(c, sol.base, sol.schedule, *in.catalog, *in.modes, n,
                                seed, rho, threads);
            pt.cost = sol.base.objective;
            pt.resilience = 1.0 - rep.violation_probability;
            pt.total_reserves_pu = sol.schedule.total();
        } catch (const Error& e) {
            pt.error = e.what();
        }
        out.push_back(std::move(pt));
    }
    return out;
}

inline std::string pareto_to_csv(const std::vector<ParetoPoint>& points) {
    std::ostringstream os;
    os.precision(17);
    os << "rho,cost,resilience,total_reserves_pu,seed\n";
    for (const auto& p : points) {
        if (!p.ok()) continue;
        os << p.rho << "," << p.cost << "," << p.resilience << ","
           << p.total_reserves_pu << "," << p.seed << "\n";
    }
    return os.str();
}

inline json pareto_to_json(const std::vector<ParetoPoint>& points) {
    json j = json::array();
    for (const auto& p : points) {
        json e = {{"rho", p.rho},
                  {"cost", p.cost},
                  {"resilience", p.resilience},
                  {"total_reserves_pu", p.total_reserves_pu},
                  {"seed", p.seed}};
        if (!p.ok()) e["error"] = p.error;
        j.push_back(e);
    }
    return j;
}

} // namespace gridreserve::simharness
