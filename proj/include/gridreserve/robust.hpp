#pragma once

// Worst-case robust reserve co-optimization and post-hoc resilience
// verification. One baseline dispatch is solved jointly with a recourse
// dispatch per vertex of the disturbance box; the recourse setpoints are
// confined to the reserve bands. Verification tools re-solve feasibility
// independently of the joint program.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridreserve/dispatch.hpp"
#include "gridreserve/netmodel.hpp"
#include "gridreserve/overlay.hpp"
#include "gridreserve/powerflow.hpp"
#include "gridreserve/solver.hpp"

namespace gridreserve::robust {

using netmodel::Device;
using netmodel::DeviceKind;
using netmodel::GridCase;
using nlohmann::json;

enum class Channel { CapacityScale, PvForecastAdd, LoadForecastAdd };

inline const char* to_string(Channel ch) {
    switch (ch) {
    case Channel::CapacityScale: return "capacity_scale";
    case Channel::PvForecastAdd: return "pv_forecast_add";
    default: return "load_forecast_add";
    }
}

struct Dimension {
    std::string target;  // device id, or branch id for capacity_scale
    Channel channel = Channel::LoadForecastAdd;
    double lo = 0.0, hi = 0.0;
    int step_from = 0, step_to = 0;  // [from, to)
};

struct DisturbanceSpec {
    std::vector<Dimension> dims;

    size_t size() const { return dims.size(); }

    /// Undisturbed point: scale channels sit at their upper bound, additive
    /// channels at zero.
    std::vector<double> nominal() const {
        std::vector<double> w;
        for (const auto& d : dims)
            w.push_back(d.channel == Channel::CapacityScale ? d.hi : 0.0);
        return w;
    }

    /// All 2^m corner points of the box, duplicates removed, enumeration
    /// order: first vertex all-lo on the last coordinate varying fastest.
    std::vector<std::vector<double>> vertices() const {
        const size_t m = dims.size();
        if (m > 12)
            throw VertexBudgetExceeded("disturbance spec has " + std::to_string(m) +
                                       " dimensions; vertex budget is 12");
        std::vector<std::vector<double>> out;
        const size_t count = size_t{1} << m;
        for (size_t i = 0; i < count; ++i) {
            std::vector<double> w(m);
            for (size_t j = 0; j < m; ++j) {
                bool high = (i >> (m - 1 - j)) & 1;
                w[j] = high ? dims[j].hi : dims[j].lo;
            }
            if (std::find(out.begin(), out.end(), w) == out.end())
                out.push_back(std::move(w));
        }
        return out;
    }

    void validate(const GridCase& c) const {
        for (const auto& d : dims) {
            std::string ctx = "disturbance on '" + d.target + "'";
            if (d.lo > d.hi) throw ValidationError(ctx + ": lo > hi");
            if (d.channel == Channel::CapacityScale) {
                if (d.lo < 0.0 || d.hi > 1.0)
                    throw ValidationError(ctx + ": capacity_scale must be within [0, 1]");
                bool is_branch = false;
                for (const auto& br : c.branches) is_branch |= (br.id == d.target);
                if (!is_branch) {
                    const auto& dev = c.device(d.target);  // throws if unknown
                    if (dev.kind == DeviceKind::Load)
                        throw ValidationError(ctx + ": capacity_scale not defined for loads");
                }
            } else {
                if (d.lo > 0.0 || d.hi < 0.0)
                    throw ValidationError(ctx + ": additive channel requires lo <= 0 <= hi");
                const auto& dev = c.device(d.target);
                if (d.channel == Channel::PvForecastAdd && dev.kind != DeviceKind::Pv)
                    throw ValidationError(ctx + ": pv_forecast_add requires a pv device");
                if (d.channel == Channel::LoadForecastAdd && dev.kind != DeviceKind::Load)
                    throw ValidationError(ctx + ": load_forecast_add requires a load device");
            }
            if (d.step_from < 0 || d.step_to > c.horizon.steps || d.step_from >= d.step_to)
                throw ValidationError(ctx + ": step window out of range");
        }
    }

    static DisturbanceSpec from_json(const json& doc) {
        if (!doc.is_array())
            throw ParseError("disturbance spec: top level must be an array");
        DisturbanceSpec spec;
        for (const auto& jd : doc) {
            Dimension d;
            d.target = jd.at("target").get<std::string>();
            std::string ch = jd.at("channel").get<std::string>();
            if (ch == "capacity_scale") d.channel = Channel::CapacityScale;
            else if (ch == "pv_forecast_add") d.channel = Channel::PvForecastAdd;
            else if (ch == "load_forecast_add") d.channel = Channel::LoadForecastAdd;
            else throw ParseError("disturbance: unknown channel '" + ch + "'");
            d.lo = jd.at("lo").get<double>();
            d.hi = jd.at("hi").get<double>();
            d.step_from = jd.at("steps").at(0).get<int>();
            d.step_to = jd.at("steps").at(1).get<int>();
            spec.dims.push_back(std::move(d));
        }
        return spec;
    }

    static DisturbanceSpec load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open disturbance spec '" + path + "'");
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ParseError(std::string("disturbance spec: ") + e.what());
        }
        return from_json(doc);
    }
};

/// Materializes a disturbance point: forecast channels are applied to a case
/// copy, capacity scales become a per-step overlay.
struct DisturbedCase {
    GridCase grid;
    CapacityOverlay overlay;
};

inline DisturbedCase apply_disturbance(const GridCase& c, const DisturbanceSpec& spec,
                                       const std::vector<double>& w) {
    if (w.size() != spec.dims.size())
        throw DomainError("disturbance vector has wrong dimension");
    DisturbedCase out{c, {}};
    const int K = c.horizon.steps;
    for (size_t j = 0; j < spec.dims.size(); ++j) {
        const auto& d = spec.dims[j];
        double v = w[j];
        switch (d.channel) {
        case Channel::CapacityScale: {
            bool is_branch = false;
            for (const auto& br : c.branches) is_branch |= (br.id == d.target);
            if (!is_branch && c.device(d.target).kind == DeviceKind::Pv) {
                // generation capacity of a PV plant is its available power
                auto& fc = out.grid.forecasts.at(d.target);
                for (int k = d.step_from; k < d.step_to; ++k)
                    fc.p_pu[static_cast<size_t>(k)] *= v;
                break;
            }
            auto& map = is_branch ? out.overlay.branch : out.overlay.device;
            auto& scale = map[d.target];
            if (scale.empty()) scale.assign(static_cast<size_t>(K), 1.0);
            for (int k = d.step_from; k < d.step_to; ++k)
                scale[static_cast<size_t>(k)] *= v;
            break;
        }
        case Channel::PvForecastAdd: {
            auto& fc = out.grid.forecasts.at(d.target);
            for (int k = d.step_from; k < d.step_to; ++k) {
                auto& p = fc.p_pu[static_cast<size_t>(k)];
                p = std::max(0.0, p + v);
            }
            break;
        }
        case Channel::LoadForecastAdd: {
            auto& fc = out.grid.forecasts.at(d.target);
            for (int k = d.step_from; k < d.step_to; ++k) {
                auto& p = fc.p_pu[static_cast<size_t>(k)];
                p = std::max(0.0, p + v);
            }
            break;
        }
        }
    }
    return out;
}

/// Scheduled reserve bands plus the baseline setpoints they are anchored to.
struct ReserveSchedule {
    std::map<std::string, std::vector<double>> up, dn;      // device -> per step
    std::map<std::string, std::vector<double>> setpoint;    // baseline P
    int steps = 0;

    double total_up(int k) const {
        double s = 0.0;
        for (const auto& [id, v] : up) s += v[static_cast<size_t>(k)];
        return s;
    }
    double total_dn(int k) const {
        double s = 0.0;
        for (const auto& [id, v] : dn) s += v[static_cast<size_t>(k)];
        return s;
    }
    double total() const {
        double s = 0.0;
        for (int k = 0; k < steps; ++k) s += total_up(k) + total_dn(k);
        return s;
    }
};

struct RobustSolution {
    dispatch::DispatchSolution base;
    ReserveSchedule schedule;
    int vertices = 0;
};

namespace detail {

/// Physical headroom of the reserve-carrying setpoint per device kind.
struct Headroom {
    double cap_hi = kInf;  // setpoint + up <= cap_hi
    double cap_lo = 0.0;   // setpoint - dn >= cap_lo
};

inline Headroom headroom(const GridCase& c, const Device& d, int k) {
    Headroom h;
    switch (d.kind) {
    case DeviceKind::Dg:
        h.cap_hi = d.smax_pu;
        h.cap_lo = 0.0;
        break;
    case DeviceKind::Storage:
        h.cap_hi = d.pmax_pu;
        h.cap_lo = -d.pmax_pu;
        break;
    case DeviceKind::Pv:
        h.cap_hi = c.forecast(d.id).p_pu[static_cast<size_t>(k)];
        h.cap_lo = 0.0;
        break;
    case DeviceKind::Load:
        h.cap_hi = std::min(c.forecast(d.id).p_pu[static_cast<size_t>(k)],
                            d.curtail_max_pu);
        h.cap_lo = 0.0;
        break;
    }
    return h;
}

struct ReserveVars {
    std::map<std::string, std::vector<int>> up, dn;
};

inline ReserveVars add_reserves(const GridCase& c, conic::ConicProgram& prog,
                                const dispatch::DeviceVars& dv) {
    ReserveVars rv;
    const int K = c.horizon.steps;
    for (const auto& d : c.devices) {
        const auto& slot = dv.slots.at(d.id);
        auto& ups = rv.up[d.id];
        auto& dns = rv.dn[d.id];
        for (int k = 0; k < K; ++k) {
            int ru = prog.add_var("Rup[" + d.id + "," + std::to_string(k) + "]", 0.0, kInf);
            int rd = prog.add_var("Rdn[" + d.id + "," + std::to_string(k) + "]", 0.0, kInf);
            ups.push_back(ru);
            dns.push_back(rd);
            Headroom h = headroom(c, d, k);
            if (std::isfinite(h.cap_hi))
                conic::add_ineq_le(prog, "hrU[" + d.id + "," + std::to_string(k) + "]",
                                   {{slot.p[static_cast<size_t>(k)], 1.0}, {ru, 1.0}},
                                   h.cap_hi);
            conic::add_ineq_ge(prog, "hrD[" + d.id + "," + std::to_string(k) + "]",
                               {{slot.p[static_cast<size_t>(k)], 1.0}, {rd, -1.0}},
                               h.cap_lo);
            prog.add_cost(ru, d.cost.reserve);
            prog.add_cost(rd, d.cost.reserve);
        }
    }
    return rv;
}

/// Ties a recourse block's setpoints to the baseline's reserve bands.
inline void add_band_rows(const GridCase& c, conic::ConicProgram& prog,
                          const dispatch::DeviceVars& base,
                          const dispatch::DeviceVars& rec, const ReserveVars& rv,
                          const std::string& tag) {
    const int K = c.horizon.steps;
    for (const auto& d : c.devices) {
        const auto& b = base.slots.at(d.id);
        const auto& r = rec.slots.at(d.id);
        for (int k = 0; k < K; ++k) {
            conic::add_ineq_le(
                prog, "bndU[" + tag + d.id + "," + std::to_string(k) + "]",
                {{r.p[static_cast<size_t>(k)], 1.0},
                 {b.p[static_cast<size_t>(k)], -1.0},
                 {rv.up.at(d.id)[static_cast<size_t>(k)], -1.0}},
                0.0);
            conic::add_ineq_le(
                prog, "bndD[" + tag + d.id + "," + std::to_string(k) + "]",
                {{b.p[static_cast<size_t>(k)], 1.0},
                 {r.p[static_cast<size_t>(k)], -1.0},
                 {rv.dn.at(d.id)[static_cast<size_t>(k)], -1.0}},
                0.0);
        }
    }
}

inline ReserveSchedule extract_schedule(const GridCase& c,
                                        const dispatch::DeviceVars& dv,
                                        const ReserveVars& rv,
                                        const conic::SolveReport& rep) {
    ReserveSchedule sched;
    sched.steps = c.horizon.steps;
    for (const auto& d : c.devices) {
        const auto& slot = dv.slots.at(d.id);
        auto& up = sched.up[d.id];
        auto& dn = sched.dn[d.id];
        auto& sp = sched.setpoint[d.id];
        for (int k = 0; k < c.horizon.steps; ++k) {
            up.push_back(std::max(0.0, rep.x[static_cast<size_t>(
                                            rv.up.at(d.id)[static_cast<size_t>(k)])]));
            dn.push_back(std::max(0.0, rep.x[static_cast<size_t>(
                                            rv.dn.at(d.id)[static_cast<size_t>(k)])]));
            sp.push_back(rep.x[static_cast<size_t>(slot.p[static_cast<size_t>(k)])]);
        }
    }
    return sched;
}

} // namespace detail

/// Joint robust solve over an explicit vertex list. Baseline power-balance
/// rows see dispatched quantities only; reserves appear in headroom and in
/// the per-vertex recourse bands.
inline RobustSolution
solve_robust_vertices(const GridCase& c, const DisturbanceSpec& spec,
                      const std::vector<std::vector<double>>& verts,
                      const conic::SolverSettings& st = {}) {
    spec.validate(c);
    conic::ConicProgram prog;
    auto nv = powerflow::build_bfm(c, prog, powerflow::Model::Linear);
    auto dv = dispatch::build_baseline(c, prog, nv);
    dispatch::objective_baseline(c, prog, dv);
    auto rv = detail::add_reserves(c, prog, dv);

    for (size_t vi = 0; vi < verts.size(); ++vi) {
        DisturbedCase dc = apply_disturbance(c, spec, verts[vi]);
        std::string tag = "v" + std::to_string(vi) + ":";
        auto nvv = powerflow::build_bfm(dc.grid, prog, powerflow::Model::Linear, tag,
                                        &dc.overlay);
        auto dvv = dispatch::build_baseline(dc.grid, prog, nvv, tag, &dc.overlay);
        detail::add_band_rows(c, prog, dv, dvv, rv, tag);
    }

    conic::SolveReport rep = conic::solve(prog, st);
    if (rep.status != conic::SolveStatus::Optimal) {
        auto format_vertex = [](const std::vector<double>& v) {
            std::ostringstream os;
            os << "[";
            for (size_t j = 0; j < v.size(); ++j) os << (j ? ", " : "") << v[j];
            os << "]";
            return os.str();
        };
        if (verts.size() == 1)
            throw InfeasibleRobust("no recourse covers vertex " +
                                   format_vertex(verts[0]));
        // localize: which single vertex already breaks feasibility?
        for (size_t vi = 0; vi < verts.size(); ++vi) {
            bool ok = true;
            try {
                solve_robust_vertices(c, spec, {verts[vi]}, st);
            } catch (const InfeasibleRobust&) {
                ok = false;
            }
            if (!ok)
                throw InfeasibleRobust("no recourse covers vertex " +
                                       std::to_string(vi) + " " +
                                       format_vertex(verts[vi]));
        }
        throw InfeasibleRobust("vertex combination infeasible (" +
                               std::string(conic::to_string(rep.status)) + ")");
    }

    RobustSolution sol;
    sol.base = dispatch::extract_solution(c, nv, dv, rep);
    sol.schedule = detail::extract_schedule(c, dv, rv, rep);
    sol.vertices = static_cast<int>(verts.size());
    // fold reserve cost into the breakdown
    double rcost = 0.0;
    for (const auto& d : c.devices)
        for (int k = 0; k < c.horizon.steps; ++k)
            rcost += d.cost.reserve * (sol.schedule.up.at(d.id)[static_cast<size_t>(k)] +
                                       sol.schedule.dn.at(d.id)[static_cast<size_t>(k)]);
    sol.base.objective_breakdown["reserve"] = rcost;
    return sol;
}

/// Worst-case robust reserve co-optimization over the disturbance box,
/// tractable by enumerating the box extremities.
inline RobustSolution solve_robust(const GridCase& c, const DisturbanceSpec& spec,
                                   const conic::SolverSettings& st = {}) {
    if (spec.dims.size() > 12)
        throw VertexBudgetExceeded("disturbance spec has " +
                                   std::to_string(spec.dims.size()) +
                                   " dimensions; vertex budget is 12");
    return solve_robust_vertices(c, spec, spec.vertices(), st);
}

/// Aggregate reserve-requirement solve shared by the chance and CVaR
/// methods: schedule reserves so that sum_d Rup >= req_up[k] and
/// sum_d Rdn >= req_dn[k] hold alongside the baseline dispatch.
inline RobustSolution
solve_with_reserve_requirements(const GridCase& c, const std::vector<double>& req_up,
                                const std::vector<double>& req_dn,
                                const conic::SolverSettings& st = {}) {
    conic::ConicProgram prog;
    auto nv = powerflow::build_bfm(c, prog, powerflow::Model::Linear);
    auto dv = dispatch::build_baseline(c, prog, nv);
    dispatch::objective_baseline(c, prog, dv);
    auto rv = detail::add_reserves(c, prog, dv);
    for (int k = 0; k < c.horizon.steps; ++k) {
        std::vector<std::pair<int, double>> urow, drow;
        for (const auto& [id, vars] : rv.up) urow.emplace_back(vars[static_cast<size_t>(k)], 1.0);
        for (const auto& [id, vars] : rv.dn) drow.emplace_back(vars[static_cast<size_t>(k)], 1.0);
        conic::add_ineq_ge(prog, "reqU[" + std::to_string(k) + "]", urow,
                           req_up[static_cast<size_t>(k)]);
        conic::add_ineq_ge(prog, "reqD[" + std::to_string(k) + "]", drow,
                           req_dn[static_cast<size_t>(k)]);
    }
    conic::SolveReport rep = conic::solve(prog, st);
    if (rep.status != conic::SolveStatus::Optimal)
        throw InfeasibleCase("reserve requirement cannot be met (" +
                             std::string(conic::to_string(rep.status)) + "); " +
                             dispatch::diagnose_infeasibility(c));
    RobustSolution sol;
    sol.base = dispatch::extract_solution(c, nv, dv, rep);
    sol.schedule = detail::extract_schedule(c, dv, rv, rep);
    double rcost = 0.0;
    for (const auto& d : c.devices)
        for (int k = 0; k < c.horizon.steps; ++k)
            rcost += d.cost.reserve * (sol.schedule.up.at(d.id)[static_cast<size_t>(k)] +
                                       sol.schedule.dn.at(d.id)[static_cast<size_t>(k)]);
    sol.base.objective_breakdown["reserve"] = rcost;
    return sol;
}

/// Real-time proportional reserve deployment:
///   activation_d = capacity_d / pool * min(|imbalance|, pool).
/// A positive imbalance is a deficit and draws on the up pool.
struct ReserveActivation {
    std::map<std::string, double> activation;
    double deployed = 0.0;
    double shortfall = 0.0;
};

inline ReserveActivation proportional_dispatch(const ReserveSchedule& sched,
                                               double imbalance_pu, int step) {
    ReserveActivation act;
    const auto& pool_map = imbalance_pu >= 0.0 ? sched.up : sched.dn;
    double pool = 0.0;
    for (const auto& [id, v] : pool_map) pool += v[static_cast<size_t>(step)];
    double need = std::fabs(imbalance_pu);
    if (pool <= 0.0 || need <= 0.0) {
        for (const auto& [id, v] : pool_map) act.activation[id] = 0.0;
        act.shortfall = need;
        return act;
    }
    act.deployed = std::min(need, pool);
    double scale = act.deployed / pool;
    for (const auto& [id, v] : pool_map)
        act.activation[id] = v[static_cast<size_t>(step)] * scale;
    act.shortfall = need - act.deployed;
    return act;
}

// ---------------------------------------------------------------------------
// margins c(w) = g(u*, w)

struct MarginReport {
    std::vector<std::string> labels;
    std::vector<double> values;
    double max_value = -kInf;

    void push(const std::string& label, double v) {
        labels.push_back(label);
        values.push_back(v);
        max_value = std::max(max_value, v);
    }
};

/// Evaluates every constraint row at the frozen setpoints of `sol` under the
/// disturbance w. Component-wise c(w) <= 0 iff the fixed dispatch remains
/// feasible; the per-step balance rows carry the supply-demand imbalance.
inline MarginReport compute_margins(const GridCase& c, const DisturbanceSpec& spec,
                                    const dispatch::DispatchSolution& sol,
                                    const std::vector<double>& w) {
    DisturbedCase dc = apply_disturbance(c, spec, w);
    const GridCase& g = dc.grid;
    const int K = c.horizon.steps;
    MarginReport rep;

    // effective injections at frozen setpoints, capped by disturbed capacity
    std::map<std::string, std::vector<double>> inj_p, inj_q;
    for (size_t di = 0; di < c.devices.size(); ++di) {
        const auto& d = c.devices[di];
        const auto& series = sol.series[di];
        auto& ip = inj_p[d.id];
        auto& iq = inj_q[d.id];
        for (int k = 0; k < K; ++k) {
            double p = series.p_pu[static_cast<size_t>(k)];
            double q = series.q_pu[static_cast<size_t>(k)];
            switch (d.kind) {
            case DeviceKind::Dg: {
                double cap = d.smax_pu * dc.overlay.device_scale(d.id, k);
                rep.push("cap[" + d.id + "," + std::to_string(k) + "]", p - cap);
                ip.push_back(std::min(p, cap));
                iq.push_back(q);
                break;
            }
            case DeviceKind::Pv: {
                double avail = g.forecast(d.id).p_pu[static_cast<size_t>(k)];
                rep.push("pv_avail[" + d.id + "," + std::to_string(k) + "]", p - avail);
                ip.push_back(std::min(p, avail));
                iq.push_back(q);
                break;
            }
            case DeviceKind::Storage: {
                double cap = d.pmax_pu * dc.overlay.device_scale(d.id, k);
                rep.push("cap[" + d.id + "," + std::to_string(k) + "]",
                         std::fabs(p) - cap);
                ip.push_back(std::clamp(p, -cap, cap));
                iq.push_back(q);
                break;
            }
            case DeviceKind::Load: {
                double pl = g.forecast(d.id).p_pu[static_cast<size_t>(k)];
                double ql = g.forecast(d.id).q_pu[static_cast<size_t>(k)];
                double lc = series.curtail_p_pu[static_cast<size_t>(k)];
                rep.push("lc_cap[" + d.id + "," + std::to_string(k) + "]",
                         lc - std::min(pl, d.curtail_max_pu));
                double ratio = pl > 0.0 ? ql / pl : 0.0;
                ip.push_back(-(std::max(0.0, pl - lc)));
                iq.push_back(-(ql - ratio * std::min(lc, pl)));
                break;
            }
            }
        }
    }

    // storage SoC path from the applied (capped) battery power
    for (const auto& d : c.devices) {
        if (d.kind != DeviceKind::Storage) continue;
        double e = d.e0_pu_h;
        for (int k = 0; k < K; ++k) {
            e -= d.eta * inj_p[d.id][static_cast<size_t>(k)] * c.horizon.dt_hours;
            rep.push("soc_hi[" + d.id + "," + std::to_string(k) + "]", e - d.emax_pu_h);
            rep.push("soc_lo[" + d.id + "," + std::to_string(k) + "]", d.emin_pu_h - e);
        }
    }

    // radial flow recomputation; any aggregate mismatch lands at the root
    auto children = netmodel::downstream_map(c);
    std::map<std::string, std::vector<double>> sub_p, sub_q;
    std::function<void(const std::string&)> accumulate = [&](const std::string& bus) {
        auto& p = sub_p[bus];
        auto& q = sub_q[bus];
        p.assign(static_cast<size_t>(K), 0.0);
        q.assign(static_cast<size_t>(K), 0.0);
        for (const auto* d : c.devices_at(bus))
            for (int k = 0; k < K; ++k) {
                p[static_cast<size_t>(k)] += inj_p[d->id][static_cast<size_t>(k)];
                q[static_cast<size_t>(k)] += inj_q[d->id][static_cast<size_t>(k)];
            }
        for (const auto& brid : children[bus]) {
            const auto& br = c.branches[static_cast<size_t>(c.branch_index(brid))];
            accumulate(br.to);
            for (int k = 0; k < K; ++k) {
                p[static_cast<size_t>(k)] += sub_p[br.to][static_cast<size_t>(k)];
                q[static_cast<size_t>(k)] += sub_q[br.to][static_cast<size_t>(k)];
            }
        }
    };
    const std::string root = c.root_id();
    accumulate(root);

    for (int k = 0; k < K; ++k) {
        double imb = -sub_p[root][static_cast<size_t>(k)];  // demand minus supply
        rep.push("balance+[" + std::to_string(k) + "]", imb);
        rep.push("balance-[" + std::to_string(k) + "]", -imb);
    }

    // line loading and voltage from the recomputed flows (flow on a branch
    // equals the negated downstream net injection)
    std::map<std::string, std::vector<double>> wsq;  // bus -> W per step
    wsq[root].assign(static_cast<size_t>(K), 1.0);
    std::function<void(const std::string&)> descend = [&](const std::string& bus) {
        for (const auto& brid : children[bus]) {
            const auto& br = c.branches[static_cast<size_t>(c.branch_index(brid))];
            double nph = static_cast<double>(br.phases.size());
            auto& wv = wsq[br.to];
            wv.assign(static_cast<size_t>(K), 0.0);
            for (int k = 0; k < K; ++k) {
                double pf = -sub_p[br.to][static_cast<size_t>(k)] / nph;
                double qf = -sub_q[br.to][static_cast<size_t>(k)] / nph;
                double cap = br.smax_pu * dc.overlay.branch_scale(br.id, k);
                if (std::isfinite(cap))
                    rep.push("line[" + br.id + "," + std::to_string(k) + "]",
                             std::hypot(pf, qf) - cap);
                double r = br.r_diag(0), x = br.x_diag(0);
                double wparent = wsq[bus][static_cast<size_t>(k)];
                double wchild = wparent - 2.0 * (r * pf + x * qf);
                wv[static_cast<size_t>(k)] = wchild;
                const auto& busref = c.bus(br.to);
                rep.push("vmax[" + br.to + "," + std::to_string(k) + "]",
                         wchild - busref.vmax_pu * busref.vmax_pu);
                rep.push("vmin[" + br.to + "," + std::to_string(k) + "]",
                         busref.vmin_pu * busref.vmin_pu - wchild);
            }
            descend(br.to);
        }
    };
    descend(root);
    return rep;
}

// ---------------------------------------------------------------------------
// recourse feasibility oracle

struct RecourseOptions {
    /// When set, recourse setpoints are clamped to [set - dn, set + up].
    const ReserveSchedule* bands = nullptr;
    /// Without bands: forbid shedding beyond the baseline plan (load service
    /// preserved); generation-side devices redispatch freely.
    bool cap_curtailment_at_baseline = true;
};

/// Is there a feasible dispatch under disturbance w, subject to the recourse
/// limits? Optionally returns the recourse setpoints found.
inline bool recourse_feasible(const GridCase& c, const DisturbanceSpec& spec,
                              const std::vector<double>& w,
                              const dispatch::DispatchSolution& sol,
                              const RecourseOptions& opt = {},
                              std::map<std::string, std::vector<double>>* out = nullptr,
                              const conic::SolverSettings& st = {}) {
    DisturbedCase dc = apply_disturbance(c, spec, w);
    conic::ConicProgram prog;
    auto nv = powerflow::build_bfm(dc.grid, prog, powerflow::Model::Linear, "",
                                   &dc.overlay);
    auto dv = dispatch::build_baseline(dc.grid, prog, nv, "", &dc.overlay);

    for (size_t di = 0; di < c.devices.size(); ++di) {
        const auto& d = c.devices[di];
        const auto& slot = dv.slots.at(d.id);
        for (int k = 0; k < c.horizon.steps; ++k) {
            int pvar = slot.p[static_cast<size_t>(k)];
            double lo = prog.lo(pvar), hi = prog.hi(pvar);
            if (opt.bands) {
                double set = opt.bands->setpoint.at(d.id)[static_cast<size_t>(k)];
                double bup = opt.bands->up.at(d.id)[static_cast<size_t>(k)];
                double bdn = opt.bands->dn.at(d.id)[static_cast<size_t>(k)];
                lo = std::max(lo, set - bdn - 1e-9);
                hi = std::min(hi, set + bup + 1e-9);
            } else if (opt.cap_curtailment_at_baseline && d.kind == DeviceKind::Load) {
                double base_lc = sol.series[di].curtail_p_pu[static_cast<size_t>(k)];
                hi = std::min(hi, base_lc + 1e-9);
            }
            if (lo > hi) return false;
            prog.set_bounds(pvar, lo, hi);
        }
    }

    conic::SolveReport rep = conic::solve(prog, st);
    if (rep.status != conic::SolveStatus::Optimal) return false;
    if (out) {
        out->clear();
        for (const auto& d : c.devices) {
            const auto& slot = dv.slots.at(d.id);
            auto& v = (*out)[d.id];
            for (int k = 0; k < c.horizon.steps; ++k)
                v.push_back(rep.x[static_cast<size_t>(slot.p[static_cast<size_t>(k)])]);
        }
    }
    return true;
}

/// Independent re-verification of a robust solution: a fresh feasibility
/// solve per vertex with setpoints clamped to the reserve bands.
inline bool verify_robust(const GridCase& c, const DisturbanceSpec& spec,
                          const RobustSolution& sol,
                          std::vector<int>* failed = nullptr) {
    RecourseOptions opt;
    opt.bands = &sol.schedule;
    bool all_ok = true;
    auto verts = spec.vertices();
    for (size_t vi = 0; vi < verts.size(); ++vi) {
        if (!recourse_feasible(c, spec, verts[vi], sol.base, opt)) {
            all_ok = false;
            if (failed) failed->push_back(static_cast<int>(vi));
        }
    }
    return all_ok;
}

// ---------------------------------------------------------------------------
// feasibility radius

/// Largest feasible step along a direction, by bisection on the recourse
/// oracle. `r_hi` caps the search (box bound). Absolute tolerance on r.
inline double bisect_max_feasible(const std::function<bool(double)>& feasible,
                                  double r_hi, double tol = 1e-4, int max_iter = 60) {
    if (r_hi <= 0.0) return 0.0;
    if (feasible(r_hi)) return r_hi;
    if (!feasible(0.0)) return 0.0;
    double lo = 0.0, hi = r_hi;
    for (int it = 0; it < max_iter; ++it) {
        if (hi - lo <= tol) return lo;
        double mid = 0.5 * (lo + hi);
        if (feasible(mid)) lo = mid;
        else hi = mid;
    }
    if (hi - lo > tol)
        throw BisectionNotConverged("radius bisection: interval " +
                                    std::to_string(hi - lo) + " after max iterations");
    return lo;
}

struct RadiusReport {
    struct Direction {
        std::vector<double> dir;  // +-e_i
        double r = 0.0;
        std::vector<double> certified;  // w_nom + r * dir
    };
    std::vector<Direction> directions;
    double ball_radius = kInf;
    int vertices_checked = 0;
    double margins_max = 0.0;  // margins at w_nom, should be <= 0
};

/// Per-direction feasibility radii around the nominal disturbance. Default
/// directions are +-e_i for every spec dimension. Any convex combination of
/// the certified vertices is recourse-feasible (checked separately).
inline RadiusReport feasibility_radius(const GridCase& c, const DisturbanceSpec& spec,
                                       const dispatch::DispatchSolution& sol,
                                       std::vector<std::vector<double>> directions = {},
                                       double tol = 1e-4) {
    const size_t m = spec.dims.size();
    std::vector<double> w_nom = spec.nominal();
    if (directions.empty()) {
        for (size_t i = 0; i < m; ++i) {
            std::vector<double> e(m, 0.0);
            e[i] = 1.0;
            directions.push_back(e);
            e[i] = -1.0;
            directions.push_back(e);
        }
    }
    RadiusReport rep;
    rep.margins_max = compute_margins(c, spec, sol, w_nom).max_value;
    RecourseOptions opt;  // full generation-side recourse, no new shedding
    for (const auto& dir : directions) {
        // distance to the box boundary along dir
        double r_hi = kInf;
        for (size_t j = 0; j < m; ++j) {
            if (dir[j] > 1e-15)
                r_hi = std::min(r_hi, (spec.dims[j].hi - w_nom[j]) / dir[j]);
            else if (dir[j] < -1e-15)
                r_hi = std::min(r_hi, (spec.dims[j].lo - w_nom[j]) / dir[j]);
        }
        if (!std::isfinite(r_hi)) r_hi = 0.0;
        auto feas = [&](double r) {
            std::vector<double> w = w_nom;
            for (size_t j = 0; j < m; ++j) w[j] += r * dir[j];
            return recourse_feasible(c, spec, w, sol, opt);
        };
        RadiusReport::Direction d;
        d.dir = dir;
        d.r = bisect_max_feasible(feas, r_hi, tol);
        d.certified = w_nom;
        for (size_t j = 0; j < m; ++j) d.certified[j] += d.r * dir[j];
        rep.ball_radius = std::min(rep.ball_radius, d.r);
        rep.directions.push_back(std::move(d));
        ++rep.vertices_checked;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// sensitivity gain

/// Gain matrix K with delta_x = K * delta_w, from the linearized active-set
/// system of a solved program family. `build` must produce structurally
/// identical programs for nearby w (same variables and rows, values may
/// differ). Exact for LP rows while the active set is unchanged.
inline Eigen::MatrixXd
gain_from_family(const std::function<conic::ConicProgram(const std::vector<double>&)>& build,
                 const std::vector<double>& w_nom, const conic::SolveReport& rep,
                 double active_tol = 1e-6, double dual_tol = 1e-7) {
    if (rep.status != conic::SolveStatus::Optimal)
        throw DegenerateActiveSet("sensitivity requires an Optimal solution");
    conic::ConicProgram prog = build(w_nom);
    const int n = prog.num_vars();
    const auto& x = rep.x;
    if (static_cast<int>(x.size()) != n)
        throw DomainError("solution vector does not match the program family");

    struct Row {
        std::vector<std::pair<int, double>> coeffs;
        enum class Kind { Eq, Lo, Hi, Pin, Cone } kind;
        int var = -1;  // for bound rows
    };
    std::vector<Row> rows;
    for (const auto& er : prog.eq_rows())
        rows.push_back({er.coeffs, Row::Kind::Eq, -1});
    for (int i = 0; i < n; ++i) {
        double lo = prog.lo(i), hi = prog.hi(i);
        if (std::isfinite(lo) && lo == hi) {
            rows.push_back({{{i, 1.0}}, Row::Kind::Pin, i});
            continue;
        }
        if (std::isfinite(lo)) {
            double slack = x[static_cast<size_t>(i)] - lo;
            double dual = rep.lo_duals.empty() ? 0.0 : rep.lo_duals[static_cast<size_t>(i)];
            bool active = slack <= active_tol;
            if (active && dual <= dual_tol)
                throw DegenerateActiveSet("weakly active lower bound on '" +
                                          prog.name(i) + "'");
            if (active) rows.push_back({{{i, 1.0}}, Row::Kind::Lo, i});
        }
        if (std::isfinite(hi)) {
            double slack = hi - x[static_cast<size_t>(i)];
            double dual = rep.hi_duals.empty() ? 0.0 : rep.hi_duals[static_cast<size_t>(i)];
            bool active = slack <= active_tol;
            if (active && dual <= dual_tol)
                throw DegenerateActiveSet("weakly active upper bound on '" +
                                          prog.name(i) + "'");
            if (active) rows.push_back({{{i, 1.0}}, Row::Kind::Hi, i});
        }
    }
    for (const auto& cone : prog.cones()) {
        double nrm = 0.0;
        for (size_t j = 1; j < cone.size(); ++j) {
            double v = x[static_cast<size_t>(cone[j])];
            nrm += v * v;
        }
        nrm = std::sqrt(nrm);
        double slack = x[static_cast<size_t>(cone[0])] - nrm;
        if (slack <= active_tol) {
            if (nrm <= active_tol)
                throw DegenerateActiveSet("cone active at its apex");
            Row row;
            row.kind = Row::Kind::Cone;
            row.coeffs.emplace_back(cone[0], -1.0);
            for (size_t j = 1; j < cone.size(); ++j)
                row.coeffs.emplace_back(cone[j], x[static_cast<size_t>(cone[j])] / nrm);
            rows.push_back(std::move(row));
        }
    }

    const int nr = static_cast<int>(rows.size());
    if (nr < n)
        throw DegenerateActiveSet("active system has rank deficit: " +
                                  std::to_string(nr) + " rows for " +
                                  std::to_string(n) + " variables");
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nr, n);
    for (int r = 0; r < nr; ++r)
        for (const auto& [idx, v] : rows[static_cast<size_t>(r)].coeffs)
            M(r, idx) = v;

    // rhs sensitivity by differencing the program family
    const size_t m = w_nom.size();
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(nr, static_cast<int>(m));
    const double delta = 1e-3;
    auto rhs_of = [&](const conic::ConicProgram& p) {
        Eigen::VectorXd rhs(nr);
        for (int r = 0; r < nr; ++r) {
            const auto& row = rows[static_cast<size_t>(r)];
            switch (row.kind) {
            case Row::Kind::Eq:
                rhs[r] = p.eq_rows()[static_cast<size_t>(r)].rhs;
                break;
            case Row::Kind::Pin:
            case Row::Kind::Lo:
                rhs[r] = p.lo(row.var);
                break;
            case Row::Kind::Hi:
                rhs[r] = p.hi(row.var);
                break;
            case Row::Kind::Cone:
                rhs[r] = 0.0;
                break;
            }
        }
        return rhs;
    };
    Eigen::VectorXd rhs0 = rhs_of(prog);
    for (size_t j = 0; j < m; ++j) {
        std::vector<double> wp = w_nom;
        wp[j] += delta;
        conic::ConicProgram pj = build(wp);
        if (pj.num_vars() != n || pj.num_eq() != prog.num_eq())
            throw DegenerateActiveSet("program family is not structurally stable");
        D.col(static_cast<int>(j)) = (rhs_of(pj) - rhs0) / delta;
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
    if (qr.rank() < n)
        throw DegenerateActiveSet("active system is rank deficient (rank " +
                                  std::to_string(qr.rank()) + " of " +
                                  std::to_string(n) + ")");
    Eigen::MatrixXd K = qr.solve(D);
    double resid = (M * K - D).lpNorm<Eigen::Infinity>();
    if (resid > 1e-6)
        throw DegenerateActiveSet("active system inconsistent under perturbation");
    return K;
}

/// Dispatch-level sensitivity: how the full solution vector moves with the
/// disturbance coordinates, at fixed active set.
inline Eigen::MatrixXd sensitivity_gain(const GridCase& c, const DisturbanceSpec& spec,
                                        const conic::SolveReport& rep) {
    auto build = [&](const std::vector<double>& w) {
        DisturbedCase dc = apply_disturbance(c, spec, w);
        conic::ConicProgram prog;
        auto nv = powerflow::build_bfm(dc.grid, prog, powerflow::Model::Linear, "",
                                       &dc.overlay);
        auto dv = dispatch::build_baseline(dc.grid, prog, nv, "", &dc.overlay);
        dispatch::objective_baseline(dc.grid, prog, dv);
        return prog;
    };
    return gain_from_family(build, spec.nominal(), rep);
}

// ---------------------------------------------------------------------------
// reserve-gain tuning

struct TuneResult {
    double alpha = 0.0;
    std::vector<double> w_star;
    Eigen::MatrixXd gain;  // one row per (device, step) input, columns = margins
    std::vector<std::string> input_labels;
};

/// Maximal alpha such that a feedback delta_u = k^T c(w) within the reserve
/// bands restores feasibility at w = w_nom + alpha * dir; the gain is
/// reconstructed from the recourse found at the certified point.
inline TuneResult tune_reserve_gain(const GridCase& c, const DisturbanceSpec& spec,
                                    const RobustSolution& rsol, size_t dim_index,
                                    double sign, double tol = 1e-4) {
    if (dim_index >= spec.dims.size())
        throw DomainError("tune_reserve_gain: direction index out of range");
    const size_t m = spec.dims.size();
    std::vector<double> w_nom = spec.nominal();
    std::vector<double> dir(m, 0.0);
    dir[dim_index] = sign >= 0 ? 1.0 : -1.0;

    double r_hi = dir[dim_index] > 0
                      ? spec.dims[dim_index].hi - w_nom[dim_index]
                      : w_nom[dim_index] - spec.dims[dim_index].lo;
    RecourseOptions opt;
    opt.bands = &rsol.schedule;
    auto feas = [&](double a) {
        std::vector<double> w = w_nom;
        w[dim_index] += a * dir[dim_index];
        return recourse_feasible(c, spec, w, rsol.base, opt);
    };
    if (!feas(0.0))
        throw NoFeasibleGain("nominal point is not recourse-feasible");
    TuneResult out;
    out.alpha = bisect_max_feasible(feas, r_hi, tol);
    out.w_star = w_nom;
    out.w_star[dim_index] += out.alpha * dir[dim_index];

    // margins at the certified disturbance and the recourse that covers it
    MarginReport margins = compute_margins(c, spec, rsol.base, out.w_star);
    std::map<std::string, std::vector<double>> rec;
    recourse_feasible(c, spec, out.w_star, rsol.base, opt, &rec);

    const int K = c.horizon.steps;
    std::vector<double> du;
    for (const auto& d : c.devices) {
        for (int k = 0; k < K; ++k) {
            double base = rsol.schedule.setpoint.at(d.id)[static_cast<size_t>(k)];
            double r = rec.count(d.id) ? rec.at(d.id)[static_cast<size_t>(k)] : base;
            du.push_back(r - base);
            out.input_labels.push_back(d.id + "," + std::to_string(k));
        }
    }
    double cnorm2 = 0.0;
    for (double v : margins.values) cnorm2 += v * v;
    out.gain = Eigen::MatrixXd::Zero(static_cast<int>(du.size()),
                                     static_cast<int>(margins.values.size()));
    if (cnorm2 > 1e-18) {
        for (size_t i = 0; i < du.size(); ++i)
            for (size_t j = 0; j < margins.values.size(); ++j)
                out.gain(static_cast<int>(i), static_cast<int>(j)) =
                    du[i] * margins.values[j] / cnorm2;
    }
    return out;
}

/// JSON report for the verification CLI.
inline json radius_report_to_json(const RadiusReport& rep) {
    json j;
    j["radius"] = rep.ball_radius;
    j["per_direction"] = json::array();
    for (const auto& d : rep.directions)
        j["per_direction"].push_back({{"dir", d.dir}, {"r", d.r}, {"certified", d.certified}});
    j["vertices_checked"] = rep.vertices_checked;
    j["margins_max"] = rep.margins_max;
    return j;
}

inline json schedule_to_json(const ReserveSchedule& s) {
    json j;
    j["steps"] = s.steps;
    j["up"] = s.up;
    j["dn"] = s.dn;
    j["setpoint"] = s.setpoint;
    json totals = json::array();
    for (int k = 0; k < s.steps; ++k)
        totals.push_back({{"step", k}, {"up", s.total_up(k)}, {"dn", s.total_dn(k)}});
    j["totals"] = totals;
    return j;
}

} // namespace gridreserve::robust
