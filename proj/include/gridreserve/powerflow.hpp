#pragma once

// Branch-flow-model constraint builders on a radial network.
//
// Two variants share the same variable layout:
//  - linear (LinDistFlow): lossless, voltage drop linear in branch P, Q;
//  - SOCP: adds squared-current variables and loss terms, with the rank-1
//    coupling W*I = P^2 + Q^2 relaxed to the second-order cone
//    ||(2P, 2Q, W - I)|| <= W + I.
//
// Each phase is treated as an independent scalar network using the diagonal
// of the branch impedance matrix; off-diagonal coupling is carried in the
// case data but not used here.

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "gridreserve/conic.hpp"
#include "gridreserve/netmodel.hpp"
#include "gridreserve/overlay.hpp"

namespace gridreserve::powerflow {

using netmodel::GridCase;

enum class Model { Linear, Socp };

/// Variable layout of one network build. Indexed by case-order bus/branch
/// positions, phase position within the element's phase list, and step.
struct NetworkVars {
    Model model = Model::Linear;
    int steps = 0;
    // w[bus][phase_pos][k], pnet/qnet likewise
    std::vector<std::vector<std::vector<int>>> w, pnet, qnet;
    // pf/qf/isq[branch][phase_pos][k] (isq only for Socp)
    std::vector<std::vector<std::vector<int>>> pf, qf, isq;

    int w_at(int bus, int ph, int k) const {
        return w[static_cast<size_t>(bus)][static_cast<size_t>(ph)][static_cast<size_t>(k)];
    }
    int pf_at(int br, int ph, int k) const {
        return pf[static_cast<size_t>(br)][static_cast<size_t>(ph)][static_cast<size_t>(k)];
    }
    int qf_at(int br, int ph, int k) const {
        return qf[static_cast<size_t>(br)][static_cast<size_t>(ph)][static_cast<size_t>(k)];
    }
};

namespace detail {

inline int phase_pos(const std::vector<int>& phases, int ph) {
    for (size_t i = 0; i < phases.size(); ++i)
        if (phases[i] == ph) return static_cast<int>(i);
    return -1;
}

inline std::string key(const std::string& a, int ph, int k) {
    return a + "," + std::to_string(ph) + "," + std::to_string(k);
}

} // namespace detail

/// Emits network variables and shared constraint families. The SOC variant
/// adds current variables, loss terms and the relaxation cones. `tag`
/// prefixes variable names so several network blocks (baseline plus recourse
/// copies) can coexist in one program; `overlay` scales branch limits per
/// step.
inline NetworkVars build_bfm(const GridCase& c, conic::ConicProgram& prog, Model model,
                             const std::string& tag = "",
                             const CapacityOverlay* overlay = nullptr) {
    using detail::key;
    NetworkVars nv;
    nv.model = model;
    const int K = c.horizon.steps;
    nv.steps = K;
    auto nm = [&tag](const std::string& base) { return tag + base; };

    auto children = netmodel::downstream_map(c);
    auto parent = netmodel::parent_branch(c);

    nv.w.resize(c.buses.size());
    nv.pnet.resize(c.buses.size());
    nv.qnet.resize(c.buses.size());
    for (size_t bi = 0; bi < c.buses.size(); ++bi) {
        const auto& bus = c.buses[bi];
        nv.w[bi].resize(bus.phases.size());
        nv.pnet[bi].resize(bus.phases.size());
        nv.qnet[bi].resize(bus.phases.size());
        for (size_t pi = 0; pi < bus.phases.size(); ++pi) {
            for (int k = 0; k < K; ++k) {
                double lo = bus.vmin_pu * bus.vmin_pu;
                double hi = bus.vmax_pu * bus.vmax_pu;
                if (bus.is_root) lo = hi = 1.0;  // reference voltage
                nv.w[bi][pi].push_back(
                    prog.add_var(nm("W[" + key(bus.id, bus.phases[pi], k) + "]"), lo, hi));
                nv.pnet[bi][pi].push_back(
                    prog.add_var(nm("Pn[" + key(bus.id, bus.phases[pi], k) + "]"), -kInf, kInf));
                nv.qnet[bi][pi].push_back(
                    prog.add_var(nm("Qn[" + key(bus.id, bus.phases[pi], k) + "]"), -kInf, kInf));
            }
        }
    }

    nv.pf.resize(c.branches.size());
    nv.qf.resize(c.branches.size());
    nv.isq.resize(c.branches.size());
    for (size_t li = 0; li < c.branches.size(); ++li) {
        const auto& br = c.branches[li];
        nv.pf[li].resize(br.phases.size());
        nv.qf[li].resize(br.phases.size());
        nv.isq[li].resize(br.phases.size());
        for (size_t pi = 0; pi < br.phases.size(); ++pi) {
            for (int k = 0; k < K; ++k) {
                nv.pf[li][pi].push_back(
                    prog.add_var(nm("Pf[" + key(br.id, br.phases[pi], k) + "]"), -kInf, kInf));
                nv.qf[li][pi].push_back(
                    prog.add_var(nm("Qf[" + key(br.id, br.phases[pi], k) + "]"), -kInf, kInf));
                if (model == Model::Socp)
                    nv.isq[li][pi].push_back(
                        prog.add_var(nm("I[" + key(br.id, br.phases[pi], k) + "]"), 0.0, kInf));
            }
        }
    }

    // voltage-drop rows and line-limit cones
    for (size_t li = 0; li < c.branches.size(); ++li) {
        const auto& br = c.branches[li];
        int from = c.bus_index(br.from), to = c.bus_index(br.to);
        for (size_t pi = 0; pi < br.phases.size(); ++pi) {
            int ph = br.phases[pi];
            int pf_from = detail::phase_pos(c.buses[static_cast<size_t>(from)].phases, ph);
            int pt_to = detail::phase_pos(c.buses[static_cast<size_t>(to)].phases, ph);
            double r = br.r_diag(static_cast<int>(pi));
            double x = br.x_diag(static_cast<int>(pi));
            for (int k = 0; k < K; ++k) {
                // W_child = W_parent - 2 (r P + x Q) [+ (r^2 + x^2) I for Socp]
                std::vector<std::pair<int, double>> row = {
                    {nv.w_at(to, pt_to, k), 1.0},
                    {nv.w_at(from, pf_from, k), -1.0},
                    {nv.pf_at(static_cast<int>(li), static_cast<int>(pi), k), 2.0 * r},
                    {nv.qf_at(static_cast<int>(li), static_cast<int>(pi), k), 2.0 * x}};
                if (model == Model::Socp)
                    row.emplace_back(nv.isq[li][pi][static_cast<size_t>(k)],
                                     -(r * r + x * x));
                prog.add_eq(row, 0.0);

                double cap = br.smax_pu;
                if (overlay) cap *= overlay->branch_scale(br.id, k);
                if (std::isfinite(cap)) {
                    if (cap <= 1e-12) {
                        prog.set_bounds(nv.pf_at(static_cast<int>(li), static_cast<int>(pi), k), 0.0, 0.0);
                        prog.set_bounds(nv.qf_at(static_cast<int>(li), static_cast<int>(pi), k), 0.0, 0.0);
                    } else {
                        int t = prog.add_var(nm("Smax[" + key(br.id, ph, k) + "]"), cap, cap);
                        prog.add_soc({t, nv.pf_at(static_cast<int>(li), static_cast<int>(pi), k),
                                      nv.qf_at(static_cast<int>(li), static_cast<int>(pi), k)});
                    }
                }

                if (model == Model::Socp) {
                    // W_parent * I >= P^2 + Q^2 as ||(2P, 2Q, W - I)|| <= W + I
                    int i_idx = nv.isq[li][pi][static_cast<size_t>(k)];
                    int u0 = prog.add_var(nm("soc.t[" + key(br.id, ph, k) + "]"), 0.0, kInf);
                    int u1 = prog.add_var(nm("soc.p[" + key(br.id, ph, k) + "]"), -kInf, kInf);
                    int u2 = prog.add_var(nm("soc.q[" + key(br.id, ph, k) + "]"), -kInf, kInf);
                    int u3 = prog.add_var(nm("soc.d[" + key(br.id, ph, k) + "]"), -kInf, kInf);
                    prog.add_eq({{u0, 1.0}, {nv.w_at(from, pf_from, k), -1.0}, {i_idx, -1.0}}, 0.0);
                    prog.add_eq({{u1, 1.0}, {nv.pf_at(static_cast<int>(li), static_cast<int>(pi), k), -2.0}}, 0.0);
                    prog.add_eq({{u2, 1.0}, {nv.qf_at(static_cast<int>(li), static_cast<int>(pi), k), -2.0}}, 0.0);
                    prog.add_eq({{u3, 1.0}, {nv.w_at(from, pf_from, k), -1.0}, {i_idx, 1.0}}, 0.0);
                    prog.add_soc({u0, u1, u2, u3});
                }
            }
        }
    }

    // nodal balance: inflow - sum(child outflows) + net injection = 0
    for (size_t bi = 0; bi < c.buses.size(); ++bi) {
        const auto& bus = c.buses[bi];
        for (size_t pi = 0; pi < bus.phases.size(); ++pi) {
            int ph = bus.phases[pi];
            for (int k = 0; k < K; ++k) {
                std::vector<std::pair<int, double>> prow = {
                    {nv.pnet[bi][pi][static_cast<size_t>(k)], 1.0}};
                std::vector<std::pair<int, double>> qrow = {
                    {nv.qnet[bi][pi][static_cast<size_t>(k)], 1.0}};
                auto it = parent.find(bus.id);
                if (it != parent.end()) {
                    const auto& br = c.branches[static_cast<size_t>(it->second)];
                    int bp = detail::phase_pos(br.phases, ph);
                    if (bp >= 0) {
                        prow.emplace_back(nv.pf_at(it->second, bp, k), 1.0);
                        qrow.emplace_back(nv.qf_at(it->second, bp, k), 1.0);
                        if (model == Model::Socp) {
                            prow.emplace_back(nv.isq[static_cast<size_t>(it->second)][static_cast<size_t>(bp)][static_cast<size_t>(k)],
                                              -br.r_diag(bp));
                            qrow.emplace_back(nv.isq[static_cast<size_t>(it->second)][static_cast<size_t>(bp)][static_cast<size_t>(k)],
                                              -br.x_diag(bp));
                        }
                    }
                }
                for (const auto& child_id : children[bus.id]) {
                    int li = c.branch_index(child_id);
                    const auto& br = c.branches[static_cast<size_t>(li)];
                    int bp = detail::phase_pos(br.phases, ph);
                    if (bp >= 0) {
                        prow.emplace_back(nv.pf_at(li, bp, k), -1.0);
                        qrow.emplace_back(nv.qf_at(li, bp, k), -1.0);
                    }
                }
                prog.add_eq(prow, 0.0);
                prog.add_eq(qrow, 0.0);
            }
        }
    }
    return nv;
}

inline NetworkVars build_linear_bfm(const GridCase& c, conic::ConicProgram& prog) {
    return build_bfm(c, prog, Model::Linear);
}

inline NetworkVars build_socp_bfm(const GridCase& c, conic::ConicProgram& prog) {
    return build_bfm(c, prog, Model::Socp);
}


/// Relaxation-exactness diagnostic: W_parent * I - (P^2 + Q^2) per branch,
/// phase and step. Zero means the cone is tight (rank-1 recovered).
struct RankResidual {
    // residual[branch][phase_pos][k]
    std::vector<std::vector<std::vector<double>>> residual;
    double max_residual = 0.0;
    double min_residual = 0.0;
};

inline RankResidual rank1_residual(const GridCase& c, const NetworkVars& nv,
                                   const conic::SolveReport& report) {
    if (nv.model != Model::Socp)
        throw DomainError("rank1_residual requires a Socp build");
    RankResidual out;
    out.residual.resize(c.branches.size());
    for (size_t li = 0; li < c.branches.size(); ++li) {
        const auto& br = c.branches[li];
        int from = c.bus_index(br.from);
        out.residual[li].resize(br.phases.size());
        for (size_t pi = 0; pi < br.phases.size(); ++pi) {
            int fp = detail::phase_pos(c.buses[static_cast<size_t>(from)].phases,
                                       br.phases[pi]);
            for (int k = 0; k < nv.steps; ++k) {
                double W = report.x[static_cast<size_t>(nv.w_at(from, fp, k))];
                double I = report.x[static_cast<size_t>(nv.isq[li][pi][static_cast<size_t>(k)])];
                double P = report.x[static_cast<size_t>(nv.pf_at(static_cast<int>(li), static_cast<int>(pi), k))];
                double Q = report.x[static_cast<size_t>(nv.qf_at(static_cast<int>(li), static_cast<int>(pi), k))];
                double res = W * I - (P * P + Q * Q);
                out.residual[li][pi].push_back(res);
                out.max_residual = std::max(out.max_residual, res);
                out.min_residual = std::min(out.min_residual, res);
            }
        }
    }
    return out;
}

/// Nodal balance residual recomputed from a solution vector, independent of
/// the solver's own residual accounting. For the linear model this checks
/// inflow - outflows + injection at every bus, phase and step.
inline double nodal_balance_residual(const GridCase& c, const NetworkVars& nv,
                                     const std::vector<double>& x) {
    auto children = netmodel::downstream_map(c);
    auto parent = netmodel::parent_branch(c);
    double worst = 0.0;
    for (size_t bi = 0; bi < c.buses.size(); ++bi) {
        const auto& bus = c.buses[bi];
        for (size_t pi = 0; pi < bus.phases.size(); ++pi) {
            int ph = bus.phases[pi];
            for (int k = 0; k < nv.steps; ++k) {
                double p = x[static_cast<size_t>(nv.pnet[bi][pi][static_cast<size_t>(k)])];
                double q = x[static_cast<size_t>(nv.qnet[bi][pi][static_cast<size_t>(k)])];
                auto it = parent.find(bus.id);
                if (it != parent.end()) {
                    const auto& br = c.branches[static_cast<size_t>(it->second)];
                    int bp = detail::phase_pos(br.phases, ph);
                    if (bp >= 0) {
                        p += x[static_cast<size_t>(nv.pf_at(it->second, bp, k))];
                        q += x[static_cast<size_t>(nv.qf_at(it->second, bp, k))];
                        if (nv.model == Model::Socp) {
                            double I = x[static_cast<size_t>(
                                nv.isq[static_cast<size_t>(it->second)][static_cast<size_t>(bp)][static_cast<size_t>(k)])];
                            p -= br.r_diag(bp) * I;
                            q -= br.x_diag(bp) * I;
                        }
                    }
                }
                for (const auto& child_id : children[bus.id]) {
                    int li = c.branch_index(child_id);
                    const auto& br = c.branches[static_cast<size_t>(li)];
                    int bp = detail::phase_pos(br.phases, ph);
                    if (bp >= 0) {
                        p -= x[static_cast<size_t>(nv.pf_at(li, bp, k))];
                        q -= x[static_cast<size_t>(nv.qf_at(li, bp, k))];
                    }
                }
                worst = std::max({worst, std::fabs(p), std::fabs(q)});
            }
        }
    }
    return worst;
}

} // namespace gridreserve::powerflow
