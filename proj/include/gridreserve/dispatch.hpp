#pragma once

// Multi-period dispatch assembly on top of a powerflow build: device
// variables, nodal injection coupling, storage dynamics and the linear cost.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridreserve/conic.hpp"
#include "gridreserve/netmodel.hpp"
#include "gridreserve/powerflow.hpp"
#include "gridreserve/solver.hpp"

namespace gridreserve::dispatch {

using netmodel::Device;
using netmodel::DeviceKind;
using netmodel::GridCase;
using powerflow::NetworkVars;

/// Per-device variable indices, one entry per step.
struct DeviceSlot {
    DeviceKind kind = DeviceKind::Load;
    std::vector<int> p;     // dg: P; pv: injected P; storage: net P_b; load: P_lc
    std::vector<int> q;     // dg/storage: Q; pv: pinned forecast q; load: Q_lc
    std::vector<int> psc;   // pv curtailment
    std::vector<int> pdis, pchg;  // storage split parts
    std::vector<int> e;     // storage SoC, e[k] = E_{k+1}
};

struct DeviceVars {
    std::map<std::string, DeviceSlot> slots;  // device id -> indices
    std::string tag;                          // name prefix used in the program
};

namespace detail {

inline std::string vkey(const std::string& tag, const std::string& dev, int k) {
    return tag + dev + "," + std::to_string(k);
}

} // namespace detail

/// Emits device constraints and couples injections into the network build.
/// `tag` prefixes variable names so several blocks (baseline plus recourse
/// copies) can coexist in one program. `overlay` applies per-step capacity
/// scales for windowed disturbances.
inline DeviceVars build_baseline(const GridCase& c, conic::ConicProgram& prog,
                                 const NetworkVars& nv, const std::string& tag = "",
                                 const CapacityOverlay* overlay = nullptr) {
    using detail::vkey;
    const int K = c.horizon.steps;
    const double dt = c.horizon.dt_hours;
    DeviceVars dv;
    dv.tag = tag;

    // per (bus, phase, step) injection accumulators
    std::vector<std::vector<std::vector<std::vector<std::pair<int, double>>>>> pinj(
        c.buses.size()),
        qinj(c.buses.size());
    std::vector<std::vector<std::vector<double>>> pconst(c.buses.size()),
        qconst(c.buses.size());
    for (size_t bi = 0; bi < c.buses.size(); ++bi) {
        size_t np = c.buses[bi].phases.size();
        pinj[bi].assign(np, std::vector<std::vector<std::pair<int, double>>>(
                                static_cast<size_t>(K)));
        qinj[bi].assign(np, std::vector<std::vector<std::pair<int, double>>>(
                                static_cast<size_t>(K)));
        pconst[bi].assign(np, std::vector<double>(static_cast<size_t>(K), 0.0));
        qconst[bi].assign(np, std::vector<double>(static_cast<size_t>(K), 0.0));
    }

    for (const auto& d : c.devices) {
        DeviceSlot slot;
        slot.kind = d.kind;
        int bi = c.bus_index(d.bus);
        size_t nph = c.buses[static_cast<size_t>(bi)].phases.size();
        const double share = 1.0 / static_cast<double>(nph);

        auto spread = [&](int var, double coeff, bool reactive, int k) {
            for (size_t pi = 0; pi < nph; ++pi)
                (reactive ? qinj : pinj)[static_cast<size_t>(bi)][pi][static_cast<size_t>(k)]
                    .emplace_back(var, coeff * share);
        };
        auto spread_const = [&](double v, bool reactive, int k) {
            for (size_t pi = 0; pi < nph; ++pi)
                (reactive ? qconst : pconst)[static_cast<size_t>(bi)][pi][static_cast<size_t>(k)] +=
                    v * share;
        };

        switch (d.kind) {
        case DeviceKind::Dg: {
            for (int k = 0; k < K; ++k) {
                double cap = d.smax_pu;
                if (overlay) cap *= overlay->device_scale(d.id, k);
                bool offline = std::isfinite(cap) && cap <= 1e-12;
                int p = prog.add_var("Pdg[" + vkey(tag, d.id, k) + "]", 0.0,
                                     offline ? 0.0 : (std::isfinite(cap) ? cap : kInf));
                int q = prog.add_var("Qdg[" + vkey(tag, d.id, k) + "]",
                                     offline ? 0.0 : -kInf, offline ? 0.0 : kInf);
                slot.p.push_back(p);
                slot.q.push_back(q);
                if (std::isfinite(cap) && !offline) {
                    int t = prog.add_var("Sdg[" + vkey(tag, d.id, k) + "]", cap, cap);
                    prog.add_soc({t, p, q});
                }
                spread(p, 1.0, false, k);
                spread(q, 1.0, true, k);
            }
            if (std::isfinite(d.ramp_pu)) {
                for (int k = 1; k < K; ++k) {
                    conic::add_ineq_le(prog, "rampu[" + vkey(tag, d.id, k) + "]",
                                       {{slot.p[static_cast<size_t>(k)], 1.0},
                                        {slot.p[static_cast<size_t>(k - 1)], -1.0}},
                                       d.ramp_pu);
                    conic::add_ineq_le(prog, "rampd[" + vkey(tag, d.id, k) + "]",
                                       {{slot.p[static_cast<size_t>(k)], -1.0},
                                        {slot.p[static_cast<size_t>(k - 1)], 1.0}},
                                       d.ramp_pu);
                }
            }
            break;
        }
        case DeviceKind::Pv: {
            const auto& fc = c.forecast(d.id);
            for (int k = 0; k < K; ++k) {
                double avail = fc.p_pu[static_cast<size_t>(k)];
                double qfix = fc.q_pu[static_cast<size_t>(k)];
                double cap = d.smax_pu;
                if (overlay) cap *= overlay->device_scale(d.id, k);
                bool offline = std::isfinite(cap) && cap <= 1e-12;
                if (offline) qfix = 0.0;
                int p = prog.add_var("Ppv[" + vkey(tag, d.id, k) + "]", 0.0,
                                     offline ? 0.0 : avail);
                int sc = prog.add_var("Psc[" + vkey(tag, d.id, k) + "]", 0.0, avail);
                int q = prog.add_var("Qpv[" + vkey(tag, d.id, k) + "]", qfix, qfix);
                prog.add_eq({{p, 1.0}, {sc, 1.0}}, avail);  // injected + curtailed = available
                slot.p.push_back(p);
                slot.psc.push_back(sc);
                slot.q.push_back(q);
                if (std::isfinite(cap) && !offline) {
                    int t = prog.add_var("Spv[" + vkey(tag, d.id, k) + "]", cap, cap);
                    prog.add_soc({t, p, q});
                }
                spread(p, 1.0, false, k);
                spread_const(qfix, true, k);
            }
            break;
        }
        case DeviceKind::Storage: {
            for (int k = 0; k < K; ++k) {
                double scale = overlay ? overlay->device_scale(d.id, k) : 1.0;
                double pmax = d.pmax_pu * scale;
                double cap = d.smax_pu * scale;
                bool offline = std::isfinite(cap) && cap <= 1e-12;
                int pd = prog.add_var("Pbd[" + vkey(tag, d.id, k) + "]", 0.0, pmax);
                int pc = prog.add_var("Pbc[" + vkey(tag, d.id, k) + "]", 0.0, pmax);
                int pb = prog.add_var("Pb[" + vkey(tag, d.id, k) + "]", -pmax, pmax);
                int qb = prog.add_var("Qb[" + vkey(tag, d.id, k) + "]",
                                      offline ? 0.0 : -kInf, offline ? 0.0 : kInf);
                prog.add_eq({{pb, 1.0}, {pd, -1.0}, {pc, 1.0}}, 0.0);  // Pb = Pdis - Pchg
                slot.pdis.push_back(pd);
                slot.pchg.push_back(pc);
                slot.p.push_back(pb);
                slot.q.push_back(qb);
                if (std::isfinite(cap) && !offline) {
                    int t = prog.add_var("Sb[" + vkey(tag, d.id, k) + "]", cap, cap);
                    prog.add_soc({t, pb, qb});
                }
                int e = prog.add_var("E[" + vkey(tag, d.id, k) + "]", d.emin_pu_h,
                                     d.emax_pu_h);
                slot.e.push_back(e);
                // E_{k+1} = E_k - eta * P_b * dt  (P_b > 0 discharges)
                if (k == 0)
                    prog.add_eq({{e, 1.0}, {pb, d.eta * dt}}, d.e0_pu_h);
                else
                    prog.add_eq({{e, 1.0},
                                 {slot.e[static_cast<size_t>(k - 1)], -1.0},
                                 {pb, d.eta * dt}},
                                0.0);
                spread(pb, 1.0, false, k);
                spread(qb, 1.0, true, k);
            }
            break;
        }
        case DeviceKind::Load: {
            const auto& fc = c.forecast(d.id);
            for (int k = 0; k < K; ++k) {
                double pl = fc.p_pu[static_cast<size_t>(k)];
                double ql = fc.q_pu[static_cast<size_t>(k)];
                double cap = std::min(pl, d.curtail_max_pu);
                int plc = prog.add_var("Plc[" + vkey(tag, d.id, k) + "]", 0.0, cap);
                int qlc = prog.add_var("Qlc[" + vkey(tag, d.id, k) + "]", -kInf, kInf);
                // constant-power-factor shedding: Qlc = (ql/pl) * Plc
                double ratio = pl > 0.0 ? ql / pl : 0.0;
                prog.add_eq({{qlc, 1.0}, {plc, -ratio}}, 0.0);
                slot.p.push_back(plc);
                slot.q.push_back(qlc);
                // consumption enters the injection with negative sign
                spread(plc, 1.0, false, k);
                spread_const(-pl, false, k);
                spread(qlc, 1.0, true, k);
                spread_const(-ql, true, k);
            }
            break;
        }
        }
        dv.slots.emplace(d.id, std::move(slot));
    }

    // tie accumulated injections to the network's net-injection variables
    for (size_t bi = 0; bi < c.buses.size(); ++bi) {
        for (size_t pi = 0; pi < c.buses[bi].phases.size(); ++pi) {
            for (int k = 0; k < K; ++k) {
                auto prow = pinj[bi][pi][static_cast<size_t>(k)];
                prow.emplace_back(nv.pnet[bi][pi][static_cast<size_t>(k)], -1.0);
                prog.add_eq(prow, -pconst[bi][pi][static_cast<size_t>(k)]);
                auto qrow = qinj[bi][pi][static_cast<size_t>(k)];
                qrow.emplace_back(nv.qnet[bi][pi][static_cast<size_t>(k)], -1.0);
                prog.add_eq(qrow, -qconst[bi][pi][static_cast<size_t>(k)]);
            }
        }
    }
    return dv;
}

/// Adds the dispatch cost rows:
///   a1 * P_dg + a2 * P_sc + a3 * P_lc + a4 * Q_lc + a5 * |P_b|.
/// Coefficients come from the device cost blocks and must be nonnegative.
inline void objective_baseline(const GridCase& c, conic::ConicProgram& prog,
                               const DeviceVars& dv, double scale = 1.0) {
    for (const auto& d : c.devices) {
        const auto& cost = d.cost;
        if (cost.p < 0 || cost.curtail_p < 0 || cost.curtail_q < 0 || cost.cycle < 0 ||
            cost.reserve < 0)
            throw NegativeCost("device '" + d.id + "': cost coefficients must be >= 0");
        const auto& slot = dv.slots.at(d.id);
        const int K = c.horizon.steps;
        for (int k = 0; k < K; ++k) {
            switch (d.kind) {
            case DeviceKind::Dg:
                prog.add_cost(slot.p[static_cast<size_t>(k)], scale * cost.p);
                break;
            case DeviceKind::Pv:
                prog.add_cost(slot.psc[static_cast<size_t>(k)], scale * cost.curtail_p);
                break;
            case DeviceKind::Load:
                prog.add_cost(slot.p[static_cast<size_t>(k)], scale * cost.curtail_p);
                prog.add_cost(slot.q[static_cast<size_t>(k)], scale * cost.curtail_q);
                break;
            case DeviceKind::Storage:
                prog.add_cost(slot.pdis[static_cast<size_t>(k)], scale * cost.cycle);
                prog.add_cost(slot.pchg[static_cast<size_t>(k)], scale * cost.cycle);
                break;
            }
        }
    }
}

/// Per-device time series of one dispatch.
struct DeviceSeries {
    std::string id;
    DeviceKind kind = DeviceKind::Load;
    std::vector<double> p_pu, q_pu, soc_pu_h, curtail_p_pu;
};

struct DispatchSolution {
    conic::SolveReport report;
    std::vector<DeviceSeries> series;                 // case device order
    std::map<std::string, double> objective_breakdown;
    std::map<std::string, std::vector<double>> voltage_w;  // "bus.phase" -> W per step
    std::map<std::string, std::vector<double>> flow_p, flow_q;  // "branch.phase"
    double objective = 0.0;
};

/// Pulls the per-device series out of a solved program. Storage SoC is
/// recomputed from the dispatched battery power by the recurrence
/// E_{k+1} = E_k - eta * P_b * dt, so the reported trajectory satisfies it
/// to machine precision.
inline DispatchSolution extract_solution(const GridCase& c,
                                         const NetworkVars& nv, const DeviceVars& dv,
                                         const conic::SolveReport& report) {
    DispatchSolution sol;
    sol.report = report;
    sol.objective = report.objective;
    const auto& x = report.x;
    const int K = c.horizon.steps;
    const double dt = c.horizon.dt_hours;

    double cost_dg = 0, cost_pvc = 0, cost_lcp = 0, cost_lcq = 0, cost_cyc = 0;
    for (const auto& d : c.devices) {
        const auto& slot = dv.slots.at(d.id);
        DeviceSeries s;
        s.id = d.id;
        s.kind = d.kind;
        double e = d.e0_pu_h;
        for (int k = 0; k < K; ++k) {
            double p = 0.0, q = 0.0, curt = 0.0, soc = 0.0;
            switch (d.kind) {
            case DeviceKind::Dg:
                p = x[static_cast<size_t>(slot.p[static_cast<size_t>(k)])];
                q = x[static_cast<size_t>(slot.q[static_cast<size_t>(k)])];
                cost_dg += d.cost.p * p;
                break;
            case DeviceKind::Pv:
                p = x[static_cast<size_t>(slot.p[static_cast<size_t>(k)])];
                q = x[static_cast<size_t>(slot.q[static_cast<size_t>(k)])];
                curt = x[static_cast<size_t>(slot.psc[static_cast<size_t>(k)])];
                cost_pvc += d.cost.curtail_p * curt;
                break;
            case DeviceKind::Storage: {
                p = x[static_cast<size_t>(slot.p[static_cast<size_t>(k)])];
                q = x[static_cast<size_t>(slot.q[static_cast<size_t>(k)])];
                e = e - d.eta * p * dt;
                soc = e;
                cost_cyc += d.cost.cycle *
                            (x[static_cast<size_t>(slot.pdis[static_cast<size_t>(k)])] +
                             x[static_cast<size_t>(slot.pchg[static_cast<size_t>(k)])]);
                break;
            }
            case DeviceKind::Load: {
                curt = x[static_cast<size_t>(slot.p[static_cast<size_t>(k)])];
                double qlc = x[static_cast<size_t>(slot.q[static_cast<size_t>(k)])];
                const auto& fc = c.forecast(d.id);
                p = -(fc.p_pu[static_cast<size_t>(k)] - curt);
                q = -(fc.q_pu[static_cast<size_t>(k)] - qlc);
                cost_lcp += d.cost.curtail_p * curt;
                cost_lcq += d.cost.curtail_q * qlc;
                break;
            }
            }
            s.p_pu.push_back(p);
            s.q_pu.push_back(q);
            s.soc_pu_h.push_back(soc);
            s.curtail_p_pu.push_back(curt);
        }
        sol.series.push_back(std::move(s));
    }
    sol.objective_breakdown = {{"dg_p", cost_dg},
                               {"pv_curtail", cost_pvc},
                               {"load_curtail_p", cost_lcp},
                               {"load_curtail_q", cost_lcq},
                               {"storage_cycle", cost_cyc}};

    for (size_t bi = 0; bi < c.buses.size(); ++bi) {
        const auto& bus = c.buses[bi];
        for (size_t pi = 0; pi < bus.phases.size(); ++pi) {
            std::string label =
                bus.id + "." + std::string(1, static_cast<char>('a' + bus.phases[pi]));
            auto& vec = sol.voltage_w[label];
            for (int k = 0; k < K; ++k)
                vec.push_back(x[static_cast<size_t>(nv.w_at(static_cast<int>(bi),
                                                            static_cast<int>(pi), k))]);
        }
    }
    for (size_t li = 0; li < c.branches.size(); ++li) {
        const auto& br = c.branches[li];
        for (size_t pi = 0; pi < br.phases.size(); ++pi) {
            std::string label =
                br.id + "." + std::string(1, static_cast<char>('a' + br.phases[pi]));
            auto& pv = sol.flow_p[label];
            auto& qv = sol.flow_q[label];
            for (int k = 0; k < K; ++k) {
                pv.push_back(x[static_cast<size_t>(
                    nv.pf_at(static_cast<int>(li), static_cast<int>(pi), k))]);
                qv.push_back(x[static_cast<size_t>(
                    nv.qf_at(static_cast<int>(li), static_cast<int>(pi), k))]);
            }
        }
    }
    return sol;
}

/// First-violated-aggregate diagnosis used when a dispatch is infeasible.
inline std::string diagnose_infeasibility(const GridCase& c) {
    const int K = c.horizon.steps;
    for (int k = 0; k < K; ++k) {
        double demand = 0.0, supply = 0.0, sheddable = 0.0;
        for (const auto& d : c.devices) {
            switch (d.kind) {
            case DeviceKind::Load: {
                double pl = c.forecast(d.id).p_pu[static_cast<size_t>(k)];
                demand += pl;
                sheddable += std::min(pl, d.curtail_max_pu);
                break;
            }
            case DeviceKind::Pv:
                supply += c.forecast(d.id).p_pu[static_cast<size_t>(k)];
                break;
            case DeviceKind::Dg:
                supply += d.smax_pu;
                break;
            case DeviceKind::Storage:
                supply += d.pmax_pu;
                break;
            }
        }
        if (demand - sheddable > supply + 1e-9) {
            std::ostringstream os;
            os << "energy: step " << k << " demand " << demand << " pu exceeds supply "
               << supply << " pu plus max shed " << sheddable << " pu";
            return os.str();
        }
    }
    // line: net downstream demand against the branch limit
    auto children = netmodel::downstream_map(c);
    for (const auto& br : c.branches) {
        if (!std::isfinite(br.smax_pu)) continue;
        // collect downstream buses
        std::vector<std::string> stack{br.to};
        double peak = 0.0;
        std::vector<std::string> buses;
        while (!stack.empty()) {
            std::string cur = stack.back();
            stack.pop_back();
            buses.push_back(cur);
            for (const auto& cid : children[cur])
                stack.push_back(c.branches[static_cast<size_t>(c.branch_index(cid))].to);
        }
        for (int k = 0; k < K; ++k) {
            double need = 0.0;
            for (const auto& bid : buses)
                for (const auto* d : c.devices_at(bid)) {
                    if (d->kind == DeviceKind::Load)
                        need += c.forecast(d->id).p_pu[static_cast<size_t>(k)] -
                                std::min(c.forecast(d->id).p_pu[static_cast<size_t>(k)],
                                         d->curtail_max_pu);
                    else if (d->kind == DeviceKind::Dg)
                        need -= d->smax_pu;
                    else if (d->kind == DeviceKind::Pv)
                        need -= c.forecast(d->id).p_pu[static_cast<size_t>(k)];
                    else
                        need -= d->pmax_pu;
                }
            peak = std::max(peak, need);
        }
        double nph = static_cast<double>(br.phases.size());
        if (peak / nph > br.smax_pu + 1e-9) {
            std::ostringstream os;
            os << "line: branch " << br.id << " downstream demand " << peak
               << " pu exceeds limit " << br.smax_pu << " pu per phase";
            return os.str();
        }
    }
    return "voltage or coupled constraints (no single aggregate identified)";
}

/// One-call baseline dispatch: build, solve, extract.
inline DispatchSolution solve_baseline(const GridCase& c,
                                       powerflow::Model model = powerflow::Model::Linear,
                                       const conic::SolverSettings& st = {}) {
    conic::ConicProgram prog;
    NetworkVars nv = powerflow::build_bfm(c, prog, model);
    DeviceVars dv = build_baseline(c, prog, nv);
    objective_baseline(c, prog, dv);
    conic::SolveReport rep = conic::solve(prog, st);
    if (rep.status != conic::SolveStatus::Optimal)
        throw InfeasibleCase("case '" + c.name + "' " +
                             std::string(conic::to_string(rep.status)) + "; " +
                             diagnose_infeasibility(c));
    return extract_solution(c, nv, dv, rep);
}

/// JSON export of a solution.
inline nlohmann::json solution_to_json(const GridCase& c, const DispatchSolution& sol) {
    nlohmann::json j;
    j["case"] = c.name;
    j["status"] = conic::to_string(sol.report.status);
    j["objective"] = sol.objective;
    j["objective_breakdown"] = sol.objective_breakdown;
    j["iterations"] = sol.report.iterations;
    j["devices"] = nlohmann::json::array();
    for (const auto& s : sol.series) {
        j["devices"].push_back({{"id", s.id},
                                {"kind", netmodel::to_string(s.kind)},
                                {"p_pu", s.p_pu},
                                {"q_pu", s.q_pu},
                                {"soc_pu_h", s.soc_pu_h},
                                {"curtail_p_pu", s.curtail_p_pu}});
    }
    j["voltage_w"] = sol.voltage_w;
    j["flow_p"] = sol.flow_p;
    j["flow_q"] = sol.flow_q;
    return j;
}

/// CSV export, one row per device and step. Fixed column order.
inline std::string solution_to_csv(const GridCase& c, const DispatchSolution& sol) {
    std::ostringstream os;
    os << "case,step,device,kind,p_pu,q_pu,soc_pu_h,curtail_p_pu\n";
    os.precision(17);
    for (const auto& s : sol.series) {
        for (int k = 0; k < c.horizon.steps; ++k) {
            os << c.name << "," << k << "," << s.id << "," << netmodel::to_string(s.kind)
               << "," << s.p_pu[static_cast<size_t>(k)] << ","
               << s.q_pu[static_cast<size_t>(k)] << ","
               << s.soc_pu_h[static_cast<size_t>(k)] << ","
               << s.curtail_p_pu[static_cast<size_t>(k)] << "\n";
        }
    }
    return os.str();
}

} // namespace gridreserve::dispatch
