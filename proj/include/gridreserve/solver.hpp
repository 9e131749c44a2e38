#pragma once

// Embedded primal-dual interior-point solver for programs with linear
// equalities, variable bounds and second-order cones. Uses the homogeneous
// self-dual embedding with Nesterov-Todd scaling and a Mehrotra
// predictor-corrector, so infeasibility and unboundedness are detected via
// certificates instead of heuristics. Sized for desk-scale problems
// (thousands of variables); the KKT systems are solved with a sparse LDL^T
// factorization under static regularization plus iterative refinement.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "gridreserve/conic.hpp"

namespace gridreserve::conic {

struct SolverSettings {
    double tol_feas = 1e-7;   // contract tolerance for classifying Optimal
    double tol_gap = 1e-7;    // relative duality-gap tolerance for Optimal
    int max_iter = 200;
    double target_feas = 1e-10;  // internal convergence target (absolute)
    double target_gap = 1e-10;   // internal relative gap target
    double static_reg = 1e-10;
    int refine_rounds = 2;
    double step_scale = 0.99;
    double cert_tol = 1e-9;  // relative residual for infeasibility certificates
};

namespace detail {

struct StdForm {
    int n = 0;  // variables
    int p = 0;  // equality rows (user rows + pinned variables)
    int m = 0;  // inequality rows (bound rows + cone rows)
    int l = 0;  // size of the nonnegative-orthant block
    Eigen::VectorXd c, b, h;
    Eigen::SparseMatrix<double> A, G;
    std::vector<int> soc_offset;  // row offset of each SOC block within [0, m)
    std::vector<int> soc_dim;
    int user_eq_rows = 0;
    std::vector<std::pair<int, int>> lo_rows, hi_rows;  // (var, G row)
};

inline StdForm build_std_form(const ConicProgram& prog) {
    StdForm f;
    f.n = prog.num_vars();
    f.c = Eigen::VectorXd::Zero(f.n);
    for (int i = 0; i < f.n; ++i) f.c[i] = prog.cost(i);

    std::vector<Eigen::Triplet<double>> at, gt;
    std::vector<double> brhs, hrhs;

    f.user_eq_rows = prog.num_eq();
    for (int r = 0; r < prog.num_eq(); ++r) {
        const auto& row = prog.eq_rows()[static_cast<size_t>(r)];
        for (const auto& [idx, v] : row.coeffs) at.emplace_back(r, idx, v);
        brhs.push_back(row.rhs);
    }
    // Pinned variables (lo == hi) become equality rows; this avoids a pair
    // of simultaneously active inequalities at the same point.
    for (int i = 0; i < f.n; ++i) {
        double lo = prog.lo(i), hi = prog.hi(i);
        if (std::isfinite(lo) && lo == hi) {
            at.emplace_back(static_cast<int>(brhs.size()), i, 1.0);
            brhs.push_back(lo);
        }
    }
    f.p = static_cast<int>(brhs.size());

    int grow = 0;
    for (int i = 0; i < f.n; ++i) {
        double lo = prog.lo(i), hi = prog.hi(i);
        if (std::isfinite(lo) && lo == hi) continue;
        if (std::isfinite(lo)) {  // -x <= -lo
            gt.emplace_back(grow, i, -1.0);
            hrhs.push_back(-lo);
            f.lo_rows.emplace_back(i, grow++);
        }
        if (std::isfinite(hi)) {  // x <= hi
            gt.emplace_back(grow, i, 1.0);
            hrhs.push_back(hi);
            f.hi_rows.emplace_back(i, grow++);
        }
    }
    f.l = grow;
    for (const auto& cone : prog.cones()) {
        f.soc_offset.push_back(grow);
        f.soc_dim.push_back(static_cast<int>(cone.size()));
        for (int idx : cone) {  // s_block = (t, x1..xd)
            gt.emplace_back(grow, idx, -1.0);
            hrhs.push_back(0.0);
            ++grow;
        }
    }
    f.m = grow;

    f.A.resize(f.p, f.n);
    f.A.setFromTriplets(at.begin(), at.end());
    f.G.resize(f.m, f.n);
    f.G.setFromTriplets(gt.begin(), gt.end());
    f.b.resize(f.p);
    for (int i = 0; i < f.p; ++i) f.b[i] = brhs[static_cast<size_t>(i)];
    f.h.resize(f.m);
    for (int i = 0; i < f.m; ++i) f.h[i] = hrhs[static_cast<size_t>(i)];
    return f;
}

// Nesterov-Todd scaling of one iterate. LP entries carry w_i = sqrt(s_i/z_i);
// each SOC block carries the dense scaling matrix W, its square and inverse.
struct Scaling {
    Eigen::VectorXd lp_w, lp_w2;
    std::vector<Eigen::MatrixXd> W, W2, Winv;
    Eigen::VectorXd lambda;  // scaled point, lambda = W z = W^{-1} s
};

inline double jnorm(const Eigen::VectorXd& u) {
    double t = u[0] * u[0] - u.tail(u.size() - 1).squaredNorm();
    return t > 0 ? std::sqrt(t) : -1.0;
}

inline bool compute_scaling(const StdForm& f, const Eigen::VectorXd& s,
                            const Eigen::VectorXd& z, Scaling& sc) {
    sc.lp_w.resize(f.l);
    sc.lp_w2.resize(f.l);
    sc.lambda.resize(f.m);
    for (int i = 0; i < f.l; ++i) {
        if (s[i] <= 0 || z[i] <= 0) return false;
        sc.lp_w2[i] = s[i] / z[i];
        sc.lp_w[i] = std::sqrt(sc.lp_w2[i]);
        sc.lambda[i] = std::sqrt(s[i] * z[i]);
    }
    sc.W.clear();
    sc.W2.clear();
    sc.Winv.clear();
    for (size_t k = 0; k < f.soc_offset.size(); ++k) {
        int off = f.soc_offset[k], d = f.soc_dim[k];
        Eigen::VectorXd sb = s.segment(off, d), zb = z.segment(off, d);
        double rs = jnorm(sb), rz = jnorm(zb);
        if (rs <= 0 || rz <= 0) return false;
        double eta = std::sqrt(rs / rz);
        double gamma = std::sqrt((1.0 + sb.dot(zb) / (rs * rz)) / 2.0);
        Eigen::VectorXd wbar = sb / rs;
        wbar[0] += zb[0] / rz;
        wbar.tail(d - 1) -= zb.tail(d - 1) / rz;
        wbar /= 2.0 * gamma;
        // W = eta * [[w0, w1'], [w1, I + w1 w1'/(1 + w0)]], W^2 = eta^2 (2 wbar wbar' - J)
        Eigen::MatrixXd W(d, d), Winv(d, d);
        const double w0 = wbar[0];
        const Eigen::VectorXd w1 = wbar.tail(d - 1);
        W(0, 0) = w0;
        W.block(0, 1, 1, d - 1) = w1.transpose();
        W.block(1, 0, d - 1, 1) = w1;
        W.block(1, 1, d - 1, d - 1) =
            Eigen::MatrixXd::Identity(d - 1, d - 1) + w1 * w1.transpose() / (1.0 + w0);
        Winv = W;  // M(J wbar): negate the off-diagonal blocks
        Winv.block(0, 1, 1, d - 1) *= -1.0;
        Winv.block(1, 0, d - 1, 1) *= -1.0;
        W *= eta;
        Winv /= eta;
        sc.W.push_back(W);
        sc.Winv.push_back(Winv);
        sc.W2.push_back(W * W);
        sc.lambda.segment(off, d) = W * zb;
    }
    return true;
}

// Jordan product u o v and the inverse arrow solve per cone structure.
inline void jordan_product(const StdForm& f, const Eigen::VectorXd& u,
                           const Eigen::VectorXd& v, Eigen::VectorXd& out) {
    out.resize(f.m);
    for (int i = 0; i < f.l; ++i) out[i] = u[i] * v[i];
    for (size_t k = 0; k < f.soc_offset.size(); ++k) {
        int off = f.soc_offset[k], d = f.soc_dim[k];
        auto ub = u.segment(off, d), vb = v.segment(off, d);
        out[off] = ub.dot(vb);
        out.segment(off + 1, d - 1) =
            ub[0] * vb.tail(d - 1) + vb[0] * ub.tail(d - 1);
    }
}

// Solves arrow(lambda) * v = d blockwise.
inline void arrow_solve(const StdForm& f, const Eigen::VectorXd& lambda,
                        const Eigen::VectorXd& d, Eigen::VectorXd& v) {
    v.resize(f.m);
    for (int i = 0; i < f.l; ++i) v[i] = d[i] / lambda[i];
    for (size_t k = 0; k < f.soc_offset.size(); ++k) {
        int off = f.soc_offset[k], dim = f.soc_dim[k];
        double l0 = lambda[off];
        auto l1 = lambda.segment(off + 1, dim - 1);
        double jl = l0 * l0 - l1.squaredNorm();
        double v0 = (l0 * d[off] - l1.dot(d.segment(off + 1, dim - 1))) / jl;
        v[off] = v0;
        v.segment(off + 1, dim - 1) =
            (d.segment(off + 1, dim - 1) - v0 * l1) / l0;
    }
}

// Applies W or W^{-1} blockwise.
inline void apply_W(const StdForm& f, const Scaling& sc, const Eigen::VectorXd& u,
                    Eigen::VectorXd& out, bool inverse) {
    out.resize(f.m);
    for (int i = 0; i < f.l; ++i) out[i] = inverse ? u[i] / sc.lp_w[i] : u[i] * sc.lp_w[i];
    for (size_t k = 0; k < f.soc_offset.size(); ++k) {
        int off = f.soc_offset[k], d = f.soc_dim[k];
        out.segment(off, d) =
            (inverse ? sc.Winv[k] : sc.W[k]) * u.segment(off, d);
    }
}

// Largest step alpha with u + alpha*du staying in the cone (up to `cap`).
inline double step_to_boundary(const StdForm& f, const Eigen::VectorXd& u,
                               const Eigen::VectorXd& du, double cap) {
    double alpha = cap;
    for (int i = 0; i < f.l; ++i)
        if (du[i] < 0) alpha = std::min(alpha, -u[i] / du[i]);
    for (size_t k = 0; k < f.soc_offset.size(); ++k) {
        int off = f.soc_offset[k], d = f.soc_dim[k];
        auto ub = u.segment(off, d), db = du.segment(off, d);
        double a = db[0] * db[0] - db.tail(d - 1).squaredNorm();
        double bq = ub[0] * db[0] - ub.tail(d - 1).dot(db.tail(d - 1));
        double cq = ub[0] * ub[0] - ub.tail(d - 1).squaredNorm();
        // roots of a t^2 + 2 b t + c = 0; cq > 0 at an interior point
        double root = cap;
        if (std::fabs(a) < 1e-300) {
            if (bq < 0) root = -cq / (2.0 * bq);
        } else {
            double disc = bq * bq - a * cq;
            if (disc >= 0) {
                double sq = std::sqrt(disc);
                double r1 = (-bq - sq) / a, r2 = (-bq + sq) / a;
                if (r1 > r2) std::swap(r1, r2);
                if (r1 > 0) root = r1;
                else if (r2 > 0) root = r2;
            }
        }
        if (root < alpha && ub[0] + root * db[0] >= 0) alpha = std::min(alpha, root);
        // guard the t-component sign as well
        if (db[0] < 0) alpha = std::min(alpha, -ub[0] / db[0]);
    }
    return alpha;
}

// Pure linear-algebra path for programs with no inequality rows at all.
inline SolveReport solve_eq_only(const ConicProgram& prog, const StdForm& f) {
    SolveReport rep;
    rep.x.assign(static_cast<size_t>(f.n), 0.0);
    if (f.p == 0) {
        if (f.c.lpNorm<Eigen::Infinity>() > 0) {
            rep.status = SolveStatus::Unbounded;
            return rep;
        }
        rep.status = SolveStatus::Optimal;
        rep.objective = 0.0;
        rep.primal_residual = rep.bound_violation = rep.cone_violation = 0.0;
        return rep;
    }
    Eigen::MatrixXd Ad = Eigen::MatrixXd(f.A);
    Eigen::VectorXd x = Ad.colPivHouseholderQr().solve(f.b);
    double scale = std::max(1.0, f.b.lpNorm<Eigen::Infinity>());
    if ((Ad * x - f.b).lpNorm<Eigen::Infinity>() > 1e-9 * scale) {
        rep.status = SolveStatus::Infeasible;
        return rep;
    }
    Eigen::VectorXd y = Ad.transpose().colPivHouseholderQr().solve(-f.c);
    double cscale = std::max(1.0, f.c.lpNorm<Eigen::Infinity>());
    if ((Ad.transpose() * y + f.c).lpNorm<Eigen::Infinity>() > 1e-9 * cscale) {
        rep.status = SolveStatus::Unbounded;
        return rep;
    }
    for (int i = 0; i < f.n; ++i) rep.x[static_cast<size_t>(i)] = x[i];
    rep.status = SolveStatus::Optimal;
    rep.objective = prog.objective_value(rep.x);
    rep.primal_residual = prog.eq_residual(rep.x);
    rep.bound_violation = prog.bound_residual(rep.x);
    rep.cone_violation = prog.cone_residual(rep.x);
    rep.eq_duals.assign(y.data(), y.data() + f.user_eq_rows);
    return rep;
}

} // namespace detail

/// Solves the program. Deterministic for fixed inputs and settings.
inline SolveReport solve(const ConicProgram& prog, const SolverSettings& st) {
    using namespace detail;
    StdForm f = build_std_form(prog);
    SolveReport rep;
    rep.x.assign(static_cast<size_t>(f.n), 0.0);

    if (f.n == 0) {
        rep.status = SolveStatus::Optimal;
        rep.objective = 0.0;
        rep.primal_residual = rep.bound_violation = rep.cone_violation = 0.0;
        return rep;
    }
    if (f.m == 0) return solve_eq_only(prog, f);

    const int n = f.n, p = f.p, m = f.m, N = n + p + m;
    const double nu = static_cast<double>(f.l + static_cast<int>(f.soc_dim.size()));

    // unit initialization on the central ray
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n), y = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(m), z = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < f.l; ++i) s[i] = z[i] = 1.0;
    for (size_t k = 0; k < f.soc_offset.size(); ++k) {
        s[f.soc_offset[k]] = 1.0;
        z[f.soc_offset[k]] = 1.0;
    }
    double tau = 1.0, kappa = 1.0;

    Eigen::SparseMatrix<double> K(N, N);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    bool analyzed = false;
    double reg = st.static_reg;

    Scaling sc;
    std::vector<double> best_x(static_cast<size_t>(n), 0.0);
    double best_metric = kInf;
    double best_obj = 0.0;
    std::vector<double> best_y, best_z;
    int small_steps = 0;
    bool force_center = false;

    auto kkt_mul = [&](const Eigen::VectorXd& u, Eigen::VectorXd& out) {
        out.resize(N);
        auto ux = u.head(n);
        auto uy = u.segment(n, p);
        auto uz = u.tail(m);
        out.head(n) = f.A.transpose() * uy + f.G.transpose() * uz;
        out.segment(n, p) = f.A * ux;
        Eigen::VectorXd w2uz(m);
        for (int i = 0; i < f.l; ++i) w2uz[i] = sc.lp_w2[i] * uz[i];
        for (size_t k = 0; k < f.soc_offset.size(); ++k) {
            int off = f.soc_offset[k], d = f.soc_dim[k];
            w2uz.segment(off, d) = sc.W2[k] * uz.segment(off, d);
        }
        out.tail(m) = f.G * ux - w2uz;
    };

    auto kkt_solve = [&](const Eigen::VectorXd& rhs, Eigen::VectorXd& sol) {
        sol = ldlt.solve(rhs);
        for (int r = 0; r < st.refine_rounds; ++r) {
            Eigen::VectorXd resid;
            kkt_mul(sol, resid);
            resid = rhs - resid;
            sol += ldlt.solve(resid);
        }
    };

    auto xi = [&](const Eigen::VectorXd& u) {
        return f.c.dot(u.head(n)) + f.b.dot(u.segment(n, p)) + f.h.dot(u.tail(m));
    };

    int iter = 0;
    for (; iter < st.max_iter; ++iter) {
        // ---- check the normalized candidate ------------------------------
        std::vector<double> xhat(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) xhat[static_cast<size_t>(i)] = x[i] / tau;
        double pres = prog.eq_residual(xhat);
        double bres = prog.bound_residual(xhat);
        double cres = prog.cone_residual(xhat);
        double pobj = prog.objective_value(xhat);
        double gap = s.dot(z) / (tau * tau);
        double dres =
            (f.A.transpose() * (y / tau) + f.G.transpose() * (z / tau) + f.c)
                .lpNorm<Eigen::Infinity>();
        double dscale0 = std::max(1.0, f.c.lpNorm<Eigen::Infinity>());
        double gap_rel = gap / std::max(1.0, std::fabs(pobj));
        double metric = std::max({pres, bres, cres, gap_rel, dres / dscale0});
#ifdef GRIDRESERVE_SOLVER_TRACE
        std::fprintf(stderr, "it=%3d pres=%.1e bres=%.1e gap_rel=%.1e dres=%.1e tau=%.2e kappa=%.2e\n",
                     iter, pres, bres, gap_rel, dres, tau, kappa);
#endif
        if (metric < best_metric) {
            best_metric = metric;
            best_x = xhat;
            best_obj = pobj;
            best_y.assign(y.data(), y.data() + p);
            best_z.assign(z.data(), z.data() + m);
            for (auto& v : best_y) v /= tau;
            for (auto& v : best_z) v /= tau;
        }
        double dscale = std::max(1.0, f.c.lpNorm<Eigen::Infinity>());
        if (pres <= st.target_feas && bres <= st.target_feas &&
            cres <= st.target_feas && gap_rel <= st.target_gap &&
            dres <= 20.0 * st.target_feas * dscale)
            break;

        // ---- infeasibility certificates ----------------------------------
        double ip = f.b.dot(y) + f.h.dot(z);
        if (iter > 0 && ip < -1e-12) {
            Eigen::VectorXd yc = y / (-ip), zc = z / (-ip);
            double certres =
                (f.A.transpose() * yc + f.G.transpose() * zc).lpNorm<Eigen::Infinity>();
            double certscale =
                1.0 + std::max(yc.lpNorm<Eigen::Infinity>(), zc.lpNorm<Eigen::Infinity>());
            if (certres <= st.cert_tol * certscale) {
                rep.status = SolveStatus::Infeasible;
                rep.iterations = iter;
                return rep;
            }
        }
        double dp = f.c.dot(x);
        if (iter > 0 && dp < -1e-12) {
            Eigen::VectorXd xc = x / (-dp);
            Eigen::VectorXd sc2 = s / (-dp);
            double r1 = (f.A * xc).lpNorm<Eigen::Infinity>();
            double r2 = (f.G * xc + sc2).lpNorm<Eigen::Infinity>();
            double certscale = 1.0 + xc.lpNorm<Eigen::Infinity>();
            if (std::max(r1, r2) <= st.cert_tol * certscale) {
                rep.status = SolveStatus::Unbounded;
                rep.iterations = iter;
                return rep;
            }
        }

        // ---- NT scaling and KKT factorization ----------------------------
        if (!compute_scaling(f, s, z, sc)) break;

        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<size_t>(f.A.nonZeros() + f.G.nonZeros()) * 2 +
                     static_cast<size_t>(N) + 16 * f.soc_dim.size());
        for (int i = 0; i < n; ++i) trip.emplace_back(i, i, reg);
        for (int cidx = 0; cidx < f.A.outerSize(); ++cidx)
            for (Eigen::SparseMatrix<double>::InnerIterator it(f.A, cidx); it; ++it) {
                trip.emplace_back(n + static_cast<int>(it.row()), cidx, it.value());
                trip.emplace_back(cidx, n + static_cast<int>(it.row()), it.value());
            }
        for (int i = 0; i < p; ++i) trip.emplace_back(n + i, n + i, -reg);
        for (int cidx = 0; cidx < f.G.outerSize(); ++cidx)
            for (Eigen::SparseMatrix<double>::InnerIterator it(f.G, cidx); it; ++it) {
                trip.emplace_back(n + p + static_cast<int>(it.row()), cidx, it.value());
                trip.emplace_back(cidx, n + p + static_cast<int>(it.row()), it.value());
            }
        for (int i = 0; i < f.l; ++i)
            trip.emplace_back(n + p + i, n + p + i, -sc.lp_w2[i] - reg);
        for (size_t k = 0; k < f.soc_offset.size(); ++k) {
            int off = f.soc_offset[k], d = f.soc_dim[k];
            for (int a = 0; a < d; ++a)
                for (int bcol = 0; bcol < d; ++bcol)
                    trip.emplace_back(n + p + off + a, n + p + off + bcol,
                                      -sc.W2[k](a, bcol) - (a == bcol ? reg : 0.0));
        }
        K.setFromTriplets(trip.begin(), trip.end());
        if (!analyzed) {
            ldlt.analyzePattern(K);
            analyzed = true;
        }
        ldlt.factorize(K);
        if (ldlt.info() != Eigen::Success) {
            reg *= 100.0;
            if (reg > 1e-4) break;
            --iter;
            continue;
        }

        // ---- residuals of the homogeneous model --------------------------
        Eigen::VectorXd rx = f.A.transpose() * y + f.G.transpose() * z + f.c * tau;
        Eigen::VectorXd ry = f.A * x - f.b * tau;
        Eigen::VectorXd rz = f.G * x + s - f.h * tau;
        double rtau = kappa + f.c.dot(x) + f.b.dot(y) + f.h.dot(z);
        double mu = (s.dot(z) + tau * kappa) / (nu + 1.0);

        Eigen::VectorXd sol1, rhs1(N);
        rhs1.head(n) = -f.c;
        rhs1.segment(n, p) = f.b;
        rhs1.tail(m) = f.h;
        kkt_solve(rhs1, sol1);
        double xi1 = xi(sol1);

        auto direction = [&](const Eigen::VectorXd& ds_rhs, double dtk_rhs, double eta,
                             Eigen::VectorXd& dx, Eigen::VectorXd& dy,
                             Eigen::VectorXd& dz, Eigen::VectorXd& ds, double& dtau,
                             double& dkappa) {
            Eigen::VectorXd dtilde;
            arrow_solve(f, sc.lambda, ds_rhs, dtilde);
            Eigen::VectorXd Wdt;
            apply_W(f, sc, dtilde, Wdt, false);
            Eigen::VectorXd rhs2(N);
            rhs2.head(n) = -(1.0 - eta) * rx;
            rhs2.segment(n, p) = -(1.0 - eta) * ry;
            rhs2.tail(m) = -(1.0 - eta) * rz - Wdt;
            Eigen::VectorXd sol2;
            kkt_solve(rhs2, sol2);
            double xi2 = xi(sol2);
            dtau = (dtk_rhs + tau * ((1.0 - eta) * rtau + xi2)) / (kappa - tau * xi1);
            Eigen::VectorXd soln = sol2 + dtau * sol1;
            dx = soln.head(n);
            dy = soln.segment(n, p);
            dz = soln.tail(m);
            Eigen::VectorXd Wdz;
            apply_W(f, sc, dz, Wdz, false);
            Eigen::VectorXd inner = dtilde - Wdz;
            apply_W(f, sc, inner, ds, false);
            dkappa = (dtk_rhs - kappa * dtau) / tau;
        };

        // affine (predictor) direction
        Eigen::VectorXd ll;
        jordan_product(f, sc.lambda, sc.lambda, ll);
        Eigen::VectorXd dxa, dya, dza, dsa;
        double dtaua, dkappaa;
        direction(-ll, -tau * kappa, 0.0, dxa, dya, dza, dsa, dtaua, dkappaa);

        double alpha_aff = step_to_boundary(f, s, dsa, 1.0);
        alpha_aff = std::min(alpha_aff, step_to_boundary(f, z, dza, 1.0));
        if (dtaua < 0) alpha_aff = std::min(alpha_aff, -tau / dtaua);
        if (dkappaa < 0) alpha_aff = std::min(alpha_aff, -kappa / dkappaa);
        double sigma = std::pow(1.0 - alpha_aff, 3);
        sigma = std::clamp(sigma, 0.0, 1.0);

        if (force_center) {
            sigma = std::max(sigma, 0.8);
            force_center = false;
        }

        // combined (corrector) direction with Mehrotra second-order term
        Eigen::VectorXd wids, wdz, corr;
        apply_W(f, sc, dsa, wids, true);
        apply_W(f, sc, dza, wdz, false);
        jordan_product(f, wids, wdz, corr);
        Eigen::VectorXd ds_rhs = -ll - corr;
        for (int i = 0; i < f.l; ++i) ds_rhs[i] += sigma * mu;
        for (size_t k = 0; k < f.soc_offset.size(); ++k)
            ds_rhs[f.soc_offset[k]] += sigma * mu;
        double dtk_rhs = -tau * kappa - dtaua * dkappaa + sigma * mu;

        Eigen::VectorXd dx, dy, dz, ds;
        double dtau, dkappa;
        direction(ds_rhs, dtk_rhs, sigma, dx, dy, dz, ds, dtau, dkappa);

        auto step_of = [&](const Eigen::VectorXd& dss, const Eigen::VectorXd& dzz,
                           double dt, double dk) {
            double a = step_to_boundary(f, s, dss, 1.0 / st.step_scale);
            a = std::min(a, step_to_boundary(f, z, dzz, 1.0 / st.step_scale));
            if (dt < 0) a = std::min(a, -tau / dt);
            if (dk < 0) a = std::min(a, -kappa / dk);
            return std::min(1.0, st.step_scale * a);
        };
        double alpha = step_of(ds, dz, dtau, dkappa);

        // corrector safeguard: when the second-order term blocks the step,
        // fall back to the plain centering direction
        if (alpha < 0.2 * alpha_aff || alpha < 1e-8) {
            Eigen::VectorXd ds_rhs2 = -ll;
            for (int i = 0; i < f.l; ++i) ds_rhs2[i] += sigma * mu;
            for (size_t k = 0; k < f.soc_offset.size(); ++k)
                ds_rhs2[f.soc_offset[k]] += sigma * mu;
            Eigen::VectorXd dx2, dy2, dz2, ds2;
            double dtau2, dkappa2;
            direction(ds_rhs2, -tau * kappa + sigma * mu, sigma, dx2, dy2, dz2, ds2,
                      dtau2, dkappa2);
            double alpha2 = step_of(ds2, dz2, dtau2, dkappa2);
            if (alpha2 > alpha) {
                alpha = alpha2;
                dx = dx2;
                dy = dy2;
                dz = dz2;
                ds = ds2;
                dtau = dtau2;
                dkappa = dkappa2;
            }
        }

        if (alpha < 1e-10) {
            if (++small_steps >= 3) break;
            force_center = true;
        } else {
            small_steps = 0;
        }

        x += alpha * dx;
        y += alpha * dy;
        z += alpha * dz;
        s += alpha * ds;
        tau += alpha * dtau;
        kappa += alpha * dkappa;
    }

    // ---- classification on the best iterate ------------------------------
    rep.iterations = iter;
    rep.x = best_x;
    rep.objective = best_obj;
    rep.primal_residual = prog.eq_residual(best_x);
    rep.bound_violation = prog.bound_residual(best_x);
    rep.cone_violation = prog.cone_residual(best_x);
    bool feas_ok = rep.primal_residual <= st.tol_feas &&
                   rep.bound_violation <= st.tol_feas &&
                   rep.cone_violation <= st.tol_feas;
    bool gap_ok = best_metric <= std::max(st.tol_gap, st.tol_feas);
    if (feas_ok && gap_ok) {
        rep.status = SolveStatus::Optimal;
        // duals of the user-facing rows
        rep.eq_duals.assign(best_y.begin(),
                            best_y.begin() + std::min<size_t>(best_y.size(),
                                                              static_cast<size_t>(f.user_eq_rows)));
        rep.lo_duals.assign(static_cast<size_t>(n), 0.0);
        rep.hi_duals.assign(static_cast<size_t>(n), 0.0);
        for (const auto& [var, row] : f.lo_rows)
            rep.lo_duals[static_cast<size_t>(var)] = best_z[static_cast<size_t>(row)];
        for (const auto& [var, row] : f.hi_rows)
            rep.hi_duals[static_cast<size_t>(var)] = best_z[static_cast<size_t>(row)];
        for (size_t k = 0; k < f.soc_offset.size(); ++k) {
            std::vector<double> zd(best_z.begin() + f.soc_offset[k],
                                   best_z.begin() + f.soc_offset[k] + f.soc_dim[k]);
            rep.cone_duals.push_back(std::move(zd));
        }
    } else {
        rep.status = SolveStatus::NumericalError;
    }
    return rep;
}

inline SolveReport solve(const ConicProgram& prog, double tol_feas = 1e-7,
                         double tol_gap = 1e-7) {
    SolverSettings st;
    st.tol_feas = tol_feas;
    st.tol_gap = tol_gap;
    return solve(prog, st);
}

} // namespace gridreserve::conic
