#pragma once

// Gaussian chance-constraint reformulation of reserve adequacy and
// sample-based VaR/CVaR estimators.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridreserve/robust.hpp"

namespace gridreserve::stochastic {

using netmodel::GridCase;
using nlohmann::json;

/// Standard-normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Standard-normal quantile. Rational initial guess (Acklam) refined by one
/// Halley step against erfc, giving errors far below 1e-9 across (0, 1).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw DomainError("normal_quantile: p must be in (0, 1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double cc[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00, 2.938163982698783e+00};
    static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((cc[0] * q + cc[1]) * q + cc[2]) * q + cc[3]) * q + cc[4]) * q + cc[5]) /
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
    } else if (p <= phigh) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((cc[0] * q + cc[1]) * q + cc[2]) * q + cc[3]) * q + cc[4]) * q + cc[5]) /
            ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
    }
    // Halley refinement on f(x) = Phi(x) - p
    double e = normal_cdf(x) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

struct GaussianModel {
    std::vector<std::string> labels;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    struct Row {
        std::string constraint;
        Eigen::VectorXd A;
    };
    std::vector<Row> rows;

    static GaussianModel from_json(const json& doc) {
        GaussianModel g;
        if (doc.contains("labels"))
            g.labels = doc["labels"].get<std::vector<std::string>>();
        auto mean = doc.at("mean").get<std::vector<double>>();
        const int m = static_cast<int>(mean.size());
        g.mean = Eigen::VectorXd(m);
        for (int i = 0; i < m; ++i) g.mean[i] = mean[static_cast<size_t>(i)];
        g.cov = Eigen::MatrixXd(m, m);
        const auto& jc = doc.at("cov");
        if (static_cast<int>(jc.size()) != m)
            throw ParseError("gaussian model: cov must be m x m");
        for (int i = 0; i < m; ++i) {
            auto row = jc[static_cast<size_t>(i)].get<std::vector<double>>();
            if (static_cast<int>(row.size()) != m)
                throw ParseError("gaussian model: cov must be m x m");
            for (int j = 0; j < m; ++j) g.cov(i, j) = row[static_cast<size_t>(j)];
        }
        for (const auto& jr : doc.at("rows")) {
            Row r;
            r.constraint = jr.at("constraint").get<std::string>();
            auto av = jr.at("A").get<std::vector<double>>();
            if (static_cast<int>(av.size()) != m)
                throw ParseError("gaussian model: row A must have length m");
            r.A = Eigen::VectorXd(m);
            for (int i = 0; i < m; ++i) r.A[i] = av[static_cast<size_t>(i)];
            g.rows.push_back(std::move(r));
        }
        if (g.rows.empty()) throw ParseError("gaussian model: needs at least one row");
        return g;
    }

    static GaussianModel load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open gaussian model '" + path + "'");
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ParseError(std::string("gaussian model: ") + e.what());
        }
        return from_json(doc);
    }
};

/// Deterministic margin of the Gaussian chance constraint
/// P[sum R+ + A w >= 0] >= 1 - alpha:  margin = phi^{-1}(1-alpha) ||A S^{1/2}||.
/// Returned in requirement form, sum R+ >= margin (zero-mean convention; the
/// mean shift is applied by the caller).
inline double gaussian_reserve_row(const Eigen::VectorXd& A, const Eigen::MatrixXd& cov,
                                   double alpha) {
    if (!(alpha > 0.0 && alpha <= 0.5))
        throw DomainError("gaussian_reserve_row: alpha must be in (0, 0.5]");
    if (cov.rows() != cov.cols() || cov.rows() != A.size())
        throw DomainError("gaussian_reserve_row: dimension mismatch");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
        throw NotPSD("covariance eigendecomposition failed");
    if (es.eigenvalues().minCoeff() < -1e-10)
        throw NotPSD("covariance is not positive semidefinite");
    double var = A.dot(cov * A);
    double sd = var > 0.0 ? std::sqrt(var) : 0.0;
    if (alpha == 0.5) return 0.0;  // median case: zero safety factor
    return normal_quantile(1.0 - alpha) * sd;
}

/// Chance-constrained reserve scheduling. The per-step aggregate rows
///   sum R+ >= phi^{-1}(1-alpha/2) sd - A mu
///   sum R- >= phi^{-1}(1-alpha/2) sd + A mu
/// size both tails so the two-sided violation frequency stays at alpha.
inline robust::RobustSolution solve_chance(const GridCase& c, const GaussianModel& g,
                                           double alpha,
                                           const conic::SolverSettings& st = {}) {
    if (!(alpha > 0.0 && alpha < 0.5))
        throw DomainError("solve_chance: alpha must be in (0, 0.5)");
    double req_up = 0.0, req_dn = 0.0;
    for (const auto& row : g.rows) {
        double margin = gaussian_reserve_row(row.A, g.cov, alpha / 2.0);
        double shift = row.A.dot(g.mean);
        req_up = std::max(req_up, margin - shift);
        req_dn = std::max(req_dn, margin + shift);
    }
    req_up = std::max(req_up, 0.0);
    req_dn = std::max(req_dn, 0.0);
    std::vector<double> up(static_cast<size_t>(c.horizon.steps), req_up);
    std::vector<double> dn(static_cast<size_t>(c.horizon.steps), req_dn);
    return robust::solve_with_reserve_requirements(c, up, dn, st);
}

struct RiskEstimate {
    double var_value = 0.0;
    double cvar_value = 0.0;
    double level = 0.0;  // rho
    int samples = 0;
};

/// Empirical VaR/CVaR at level rho. VaR is the (1-rho) empirical quantile
/// with the higher-interpolation convention; CVaR averages all samples at or
/// above it.
inline RiskEstimate estimate_var_cvar(std::vector<double> samples, double rho) {
    if (!(rho > 0.0 && rho <= 1.0))
        throw DomainError("estimate_var_cvar: rho must be in (0, 1]");
    const int n = static_cast<int>(samples.size());
    if (n < static_cast<int>(std::ceil(1.0 / rho)) || n == 0)
        throw InsufficientSamples("need at least ceil(1/rho) = " +
                                  std::to_string(static_cast<int>(std::ceil(1.0 / rho))) +
                                  " samples, got " + std::to_string(n));
    for (double v : samples)
        if (!std::isfinite(v))
            throw DomainError("estimate_var_cvar: samples must be finite");
    std::sort(samples.begin(), samples.end());
    int idx = static_cast<int>(std::ceil((1.0 - rho) * static_cast<double>(n - 1)));
    idx = std::clamp(idx, 0, n - 1);
    RiskEstimate est;
    est.var_value = samples[static_cast<size_t>(idx)];
    auto first = std::lower_bound(samples.begin(), samples.end(), est.var_value);
    est.cvar_value = std::accumulate(first, samples.end(), 0.0) /
                     static_cast<double>(std::distance(first, samples.end()));
    est.level = rho;
    est.samples = n;
    return est;
}

/// CVaR-sized reserves: both pools hold CVaR_rho of the sampled imbalance
/// magnitudes, applied uniformly over the horizon.
inline robust::RobustSolution solve_cvar(const GridCase& c,
                                         const std::vector<double>& imbalance_magnitudes,
                                         double rho,
                                         const conic::SolverSettings& st = {}) {
    RiskEstimate est = estimate_var_cvar(imbalance_magnitudes, rho);
    double req = std::max(0.0, est.cvar_value);
    std::vector<double> up(static_cast<size_t>(c.horizon.steps), req);
    std::vector<double> dn(static_cast<size_t>(c.horizon.steps), req);
    return robust::solve_with_reserve_requirements(c, up, dn, st);
}

} // namespace gridreserve::stochastic
