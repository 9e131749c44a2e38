#pragma once

// Wasserstein ambiguity-set construction from historical samples and the
// deterministic distributionally-robust counterpart. Pipeline:
//   samples -> C -> epsilon(N) -> whitening -> sigma certificate -> vertex
//   set U -> recourse feasibility at every u in U.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gridreserve/robust.hpp"

namespace gridreserve::dro {

using netmodel::GridCase;
using nlohmann::json;

struct SampleSet {
    Eigen::MatrixXd samples;   // N x m
    Eigen::VectorXd mean;      // m
    Eigen::MatrixXd cov;       // m x m, population normalization (1/N)
    Eigen::MatrixXd cov_sqrt;  // symmetric eigenvalue square root
    Eigen::MatrixXd whitened;  // N x m, v = cov^{-1/2} (x - mean)
    std::vector<std::string> labels;

    int count() const { return static_cast<int>(samples.rows()); }
    int dims() const { return static_cast<int>(samples.cols()); }

    static SampleSet from_matrix(const Eigen::MatrixXd& data,
                                 std::vector<std::string> labels = {}) {
        if (data.rows() < 2) throw InsufficientSamples("sample set needs N >= 2");
        SampleSet s;
        s.samples = data;
        s.labels = std::move(labels);
        const int n = static_cast<int>(data.rows());
        const int m = static_cast<int>(data.cols());
        s.mean = data.colwise().mean();
        Eigen::MatrixXd centered = data.rowwise() - s.mean.transpose();
        s.cov = centered.transpose() * centered / static_cast<double>(n);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.cov);
        if (es.info() != Eigen::Success)
            throw NotPSD("sample covariance eigendecomposition failed");
        // eigenvalue floor keeps the whitening defined for degenerate data
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-10);
        s.cov_sqrt = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
                     es.eigenvectors().transpose();
        Eigen::MatrixXd inv_sqrt = es.eigenvectors() *
                                   ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                                   es.eigenvectors().transpose();
        s.whitened = centered * inv_sqrt.transpose();
        (void)m;
        return s;
    }

    static SampleSet from_json(const json& doc) {
        auto rows = doc.at("samples");
        if (!rows.is_array() || rows.empty())
            throw ParseError("sample file: 'samples' must be a nonempty array");
        const int m = doc.at("dims").get<int>();
        Eigen::MatrixXd data(static_cast<int>(rows.size()), m);
        for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
            auto row = rows[static_cast<size_t>(i)].get<std::vector<double>>();
            if (static_cast<int>(row.size()) != m)
                throw ParseError("sample file: row " + std::to_string(i) +
                                 " has wrong dimension");
            for (int j = 0; j < m; ++j) data(i, j) = row[static_cast<size_t>(j)];
        }
        std::vector<std::string> labels;
        if (doc.contains("labels")) labels = doc["labels"].get<std::vector<std::string>>();
        return from_matrix(data, std::move(labels));
    }

    static SampleSet load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open sample file '" + path + "'");
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ParseError(std::string("sample file: ") + e.what());
        }
        return from_json(doc);
    }
};

/// Concentration constant
///   C = 2 inf_{a > 0} sqrt( (1/(2a)) (1 + ln (1/N) sum_k e^{a d_k^2}) ),
/// d_k = ||x_k - mean||_1, minimized over a in [1e-6, alpha_max] by a coarse
/// scan plus golden-section refinement; the exponential sum is log-sum-exp
/// stabilized.
inline double estimate_C(const Eigen::MatrixXd& samples, double alpha_max = 50.0) {
    const int n = static_cast<int>(samples.rows());
    if (n < 1) throw InsufficientSamples("estimate_C needs at least one sample");
    Eigen::VectorXd mean = samples.colwise().mean();
    std::vector<double> d2(static_cast<size_t>(n));
    double d2max = 0.0;
    for (int i = 0; i < n; ++i) {
        double d1 = (samples.row(i).transpose() - mean).lpNorm<1>();
        d2[static_cast<size_t>(i)] = d1 * d1;
        d2max = std::max(d2max, d2[static_cast<size_t>(i)]);
    }
    if (d2max <= 1e-300) return 0.0;  // all samples at the mean

    auto phi = [&](double a) {
        // ln mean exp(a d2) with the max factored out
        double acc = 0.0;
        for (double v : d2) acc += std::exp(a * (v - d2max));
        double lse = a * d2max + std::log(acc / static_cast<double>(n));
        double inner = (1.0 + lse) / (2.0 * a);
        return inner;
    };

    const double a_lo = 1e-6;
    const int scan = 4096;
    double best_a = a_lo, best_v = phi(a_lo);
    for (int i = 1; i <= scan; ++i) {
        double a = a_lo + (alpha_max - a_lo) * static_cast<double>(i) /
                              static_cast<double>(scan);
        double v = phi(a);
        if (v < best_v) {
            best_v = v;
            best_a = a;
        }
    }
    // golden-section refinement within one scan step of the best point
    double step = (alpha_max - a_lo) / static_cast<double>(scan);
    double lo = std::max(a_lo, best_a - step), hi = std::min(alpha_max, best_a + step);
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = phi(x1), f2 = phi(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = phi(x2);
        }
    }
    best_v = std::min({best_v, f1, f2});
    if (best_v < 0.0) throw NonConvergence("estimate_C: negative inner value");
    return 2.0 * std::sqrt(best_v);
}

/// Wasserstein-ball radius epsilon(N) = C sqrt( ln(1/rho) / N ).
inline double wasserstein_radius(double C, int n, double rho) {
    if (!(rho > 0.0 && rho < 1.0))
        throw DomainError("wasserstein_radius: rho must be in (0, 1)");
    if (n < 1) throw DomainError("wasserstein_radius: N must be >= 1");
    if (C < 0.0) throw DomainError("wasserstein_radius: C must be >= 0");
    return C * std::sqrt(std::log(1.0 / rho) / static_cast<double>(n));
}

/// h(sigma, lambda) = lambda eps + (1/N) sum (1 - lambda (sigma - ||v_k||_inf)^+)^+
inline double h_value(const std::vector<double>& vnorms, double eps, double sigma,
                      double lambda) {
    double acc = 0.0;
    for (double a : vnorms) {
        double gap = std::max(0.0, sigma - a);
        acc += std::max(0.0, 1.0 - lambda * gap);
    }
    return lambda * eps + acc / static_cast<double>(vnorms.size());
}

/// Exact inner minimization over lambda >= 0: h is piecewise-linear convex in
/// lambda with breakpoints 1/(sigma - ||v_k||_inf)^+; evaluate all of them.
inline std::pair<double, double> min_h_over_lambda(const std::vector<double>& vnorms,
                                                   double eps, double sigma) {
    double best_l = 0.0, best_h = h_value(vnorms, eps, sigma, 0.0);
    for (double a : vnorms) {
        double gap = sigma - a;
        if (gap > 1e-300) {
            double l = 1.0 / gap;
            double h = h_value(vnorms, eps, sigma, l);
            if (h < best_h) {
                best_h = h;
                best_l = l;
            }
        }
    }
    return {best_h, best_l};
}

struct SigmaResult {
    double sigma = 0.0;
    double lambda = 0.0;
    double certificate = 0.0;  // h(sigma, lambda), must be <= rho
};

/// Minimal certified half-width: min sigma in [0, sigma_max] subject to
/// min_lambda h(sigma, lambda) <= rho, by outer bisection. Returns the
/// certified upper bracket within 1e-6.
inline SigmaResult solve_sigma(const Eigen::MatrixXd& whitened, double eps, double rho,
                               double sigma_max = -1.0) {
    if (!(rho > 0.0 && rho < 1.0))
        throw DomainError("solve_sigma: rho must be in (0, 1)");
    if (eps < 0.0) throw DomainError("solve_sigma: eps must be >= 0");
    const int n = static_cast<int>(whitened.rows());
    if (n < 1) throw InsufficientSamples("solve_sigma needs samples");
    std::vector<double> vnorms(static_cast<size_t>(n));
    double vmax = 0.0;
    for (int i = 0; i < n; ++i) {
        vnorms[static_cast<size_t>(i)] = whitened.row(i).lpNorm<Eigen::Infinity>();
        vmax = std::max(vmax, vnorms[static_cast<size_t>(i)]);
    }
    if (sigma_max <= 0.0) sigma_max = std::max(1.0, 10.0 * vmax);

    auto certified = [&](double sigma) {
        return min_h_over_lambda(vnorms, eps, sigma).first <= rho;
    };
    if (!certified(sigma_max))
        throw NoFeasibleSigma("even sigma_max = " + std::to_string(sigma_max) +
                              " fails the certificate (epsilon too large for rho)");
    double lo = 0.0, hi = sigma_max;
    if (certified(0.0)) hi = 0.0;
    for (int it = 0; it < 100 && hi - lo > 1e-7; ++it) {
        double mid = 0.5 * (lo + hi);
        if (certified(mid)) hi = mid;
        else lo = mid;
    }
    SigmaResult out;
    out.sigma = hi;
    auto [h, l] = min_h_over_lambda(vnorms, eps, hi);
    out.lambda = l;
    out.certificate = h;
    return out;
}

/// Hypercube vertex set: u_i = cov^{1/2} v_i + mean over the 2^m sign
/// patterns (+sigma first, last coordinate varying fastest).
inline std::vector<std::vector<double>> vertex_set(double sigma,
                                                   const Eigen::VectorXd& mean,
                                                   const Eigen::MatrixXd& cov_sqrt) {
    const int m = static_cast<int>(mean.size());
    if (m > 12)
        throw VertexBudgetExceeded("vertex_set: " + std::to_string(m) +
                                   " dimensions exceed the 2^m budget of 12");
    std::vector<std::vector<double>> out;
    const size_t count = size_t{1} << m;
    for (size_t i = 0; i < count; ++i) {
        Eigen::VectorXd v(m);
        for (int j = 0; j < m; ++j) {
            bool flip = (i >> (m - 1 - j)) & 1;
            v[j] = flip ? -sigma : sigma;
        }
        Eigen::VectorXd u = cov_sqrt * v + mean;
        std::vector<double> uv(u.data(), u.data() + m);
        if (std::find(out.begin(), out.end(), uv) == out.end())
            out.push_back(std::move(uv));
    }
    return out;
}

struct AmbiguitySet {
    double C = 0.0;
    double epsilon = 0.0;
    double rho = 0.0;   // violation level driving epsilon(N)
    double beta = 0.0;  // stored confidence alias (see notes in build)
    double sigma = 0.0;
    double lambda = 0.0;
    double certificate = 0.0;
    int samples = 0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov_sqrt;
    std::vector<std::vector<double>> vertices;  // 2^m points in R^m

    json to_json() const {
        json j;
        j["C"] = C;
        j["epsilon"] = epsilon;
        j["rho"] = rho;
        j["beta"] = beta;
        j["sigma"] = sigma;
        j["lambda"] = lambda;
        j["certificate"] = certificate;
        j["samples"] = samples;
        j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
        j["vertices"] = vertices;
        return j;
    }
};

/// Full construction from historical samples. `rho` is used both as the
/// radius driver in epsilon(N) and the certificate level; a distinct
/// confidence beta may be supplied and is recorded alongside.
inline AmbiguitySet build_ambiguity_set(const SampleSet& s, double rho,
                                        double beta = -1.0, double sigma_max = -1.0) {
    AmbiguitySet a;
    a.C = estimate_C(s.samples);
    a.rho = rho;
    a.beta = beta > 0.0 ? beta : rho;
    a.samples = s.count();
    a.epsilon = wasserstein_radius(a.C, s.count(), rho);
    SigmaResult sr = solve_sigma(s.whitened, a.epsilon, rho, sigma_max);
    a.sigma = sr.sigma;
    a.lambda = sr.lambda;
    a.certificate = sr.certificate;
    a.mean = s.mean;
    a.cov_sqrt = s.cov_sqrt;
    a.vertices = vertex_set(a.sigma, s.mean, s.cov_sqrt);
    return a;
}

/// Deterministic DRO counterpart: recourse feasibility at every vertex of U,
/// mapped onto the case through the disturbance spec's channels.
inline robust::RobustSolution solve_dro(const GridCase& c,
                                        const robust::DisturbanceSpec& spec,
                                        const AmbiguitySet& a,
                                        const conic::SolverSettings& st = {}) {
    if (a.vertices.empty()) throw DomainError("solve_dro: ambiguity set has no vertices");
    if (spec.dims.size() != a.vertices.front().size())
        throw DomainError("solve_dro: spec dimensions (" +
                          std::to_string(spec.dims.size()) +
                          ") do not match ambiguity set (" +
                          std::to_string(a.vertices.front().size()) + ")");
    return robust::solve_robust_vertices(c, spec, a.vertices, st);
}

} // namespace gridreserve::dro
