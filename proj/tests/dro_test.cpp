#include <gtest/gtest.h>

#include <cmath>

#include "gridreserve/dro.hpp"
#include "gridreserve/rng.hpp"
#include "test_support.hpp"

using namespace gridreserve;
using namespace gridreserve::dro;
using testsupport::fixture;

namespace {

// dense grid-search oracle for C over alpha in [1e-6, 50]
double grid_search_C(const Eigen::MatrixXd& samples, int points) {
    const int n = static_cast<int>(samples.rows());
    Eigen::VectorXd mean = samples.colwise().mean();
    std::vector<double> d2(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double d1 = (samples.row(i).transpose() - mean).lpNorm<1>();
        d2[static_cast<size_t>(i)] = d1 * d1;
    }
    double best = kInf;
    for (int i = 0; i <= points; ++i) {
        double a = 1e-6 + (50.0 - 1e-6) * static_cast<double>(i) /
                              static_cast<double>(points);
        double acc = 0.0;
        for (double v : d2) acc += std::exp(a * v);
        double inner = (1.0 + std::log(acc / static_cast<double>(n))) / (2.0 * a);
        best = std::min(best, inner);
    }
    return 2.0 * std::sqrt(best);
}

// inner lambda search by golden section, the cross-check for the
// breakpoint-exact minimization
double min_h_by_search(const std::vector<double>& vnorms, double eps, double sigma) {
    double lo = 0.0, hi = 1e6;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = h_value(vnorms, eps, sigma, x1), f2 = h_value(vnorms, eps, sigma, x2);
    for (int it = 0; it < 300; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = h_value(vnorms, eps, sigma, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = h_value(vnorms, eps, sigma, x2);
        }
    }
    return std::min({f1, f2, h_value(vnorms, eps, sigma, 0.0)});
}

} // namespace

TEST(EstimateC, DegenerateSingleSample) {
    Eigen::MatrixXd one(1, 2);
    one << 0.3, -0.7;
    EXPECT_DOUBLE_EQ(estimate_C(one), 0.0);
}

TEST(EstimateC, MatchesGridSearchOnTwoPoint) {
    Eigen::MatrixXd s(2, 1);
    s << -1.0, 1.0;
    double c_impl = estimate_C(s);
    double c_grid = grid_search_C(s, 1000000);
    EXPECT_NEAR(c_impl, c_grid, 1e-4);
}

TEST(EstimateC, MatchesGridSearchOnRandomSets) {
    Rng rng(23);
    for (int trial = 0; trial < 3; ++trial) {
        int n = 20 + static_cast<int>(rng.uniform01() * 30);
        Eigen::MatrixXd s(n, 2);
        for (int i = 0; i < n; ++i) {
            s(i, 0) = rng.normal(0.0, 0.5);
            s(i, 1) = rng.normal(0.1, 0.3);
        }
        double c_impl = estimate_C(s);
        double c_grid = grid_search_C(s, 200000);
        EXPECT_NEAR(c_impl, c_grid, 1e-4) << "trial " << trial;
    }
}

TEST(EstimateC, ScalesLinearlyWithSamples) {
    Rng rng(31);
    Eigen::MatrixXd s(40, 1);
    for (int i = 0; i < 40; ++i) s(i, 0) = rng.normal(0.0, 1.0);
    double c1 = estimate_C(s);
    double c2 = estimate_C(Eigen::MatrixXd(0.5 * s));
    EXPECT_NEAR(c2, 0.5 * c1, 1e-4 * std::max(1.0, c1));
}

TEST(WassersteinRadius, ClosedForm) {
    EXPECT_NEAR(wasserstein_radius(2.0, 100, 0.05),
                2.0 * std::sqrt(std::log(20.0) / 100.0), 1e-15);
    EXPECT_DOUBLE_EQ(wasserstein_radius(0.0, 7, 0.3), 0.0);
    EXPECT_THROW(wasserstein_radius(1.0, 100, 1.5), DomainError);
    EXPECT_THROW(wasserstein_radius(1.0, 100, 0.0), DomainError);
}

TEST(WassersteinRadius, QuadrupleSamplesHalveRadius) {
    double e1 = wasserstein_radius(1.7, 50, 0.05);
    double e4 = wasserstein_radius(1.7, 200, 0.05);
    EXPECT_EQ(e4, 0.5 * e1);  // exact under power-of-two scaling
}

TEST(SolveSigma, AnalyticTwoSampleInstance) {
    // whitened {-1, +1}, eps = 0.1, rho = 0.1: h_min = eps/(sigma-1) at
    // lambda = 1/(sigma-1), certified iff sigma >= 2
    Eigen::MatrixXd v(2, 1);
    v << -1.0, 1.0;
    auto res = solve_sigma(v, 0.1, 0.1);
    EXPECT_NEAR(res.sigma, 2.0, 1e-6);
    EXPECT_NEAR(res.lambda, 1.0 / (res.sigma - 1.0), 1e-4);
    // certificate re-evaluated independently
    EXPECT_LE(h_value({1.0, 1.0}, 0.1, res.sigma, res.lambda), 0.1 + 1e-9);
}

TEST(SolveSigma, ZeroRadiusShrinksToMaxNorm) {
    Eigen::MatrixXd v(3, 1);
    v << -1.0, 0.5, 1.0;
    auto res = solve_sigma(v, 0.0, 0.4);
    EXPECT_NEAR(res.sigma, 1.0, 1e-5);
    EXPECT_LE(res.certificate, 0.4 + 1e-9);
}

TEST(SolveSigma, LambdaZeroNeverCertifies) {
    std::vector<double> vnorms{0.3, 1.2, 0.7};
    EXPECT_DOUBLE_EQ(h_value(vnorms, 0.05, 5.0, 0.0), 1.0);
}

TEST(SolveSigma, BreakpointMinimizationMatchesSearch) {
    Rng rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 5 + static_cast<int>(rng.uniform01() * 40);
        std::vector<double> vnorms;
        for (int i = 0; i < n; ++i) vnorms.push_back(std::fabs(rng.normal(0.0, 1.0)));
        double eps = rng.uniform(0.0, 0.3);
        double sigma = rng.uniform(0.5, 4.0);
        auto [h_bp, l_bp] = min_h_over_lambda(vnorms, eps, sigma);
        double h_gs = min_h_by_search(vnorms, eps, sigma);
        EXPECT_LE(h_bp, h_gs + 1e-6) << "trial " << trial;
        EXPECT_LE(h_value(vnorms, eps, sigma, l_bp), h_bp + 1e-12);
    }
}

TEST(SolveSigma, MonotoneInEpsilonAndRho) {
    Rng rng(5);
    Eigen::MatrixXd v(30, 1);
    for (int i = 0; i < 30; ++i) v(i, 0) = rng.normal(0.0, 1.0);
    double s_small_eps = solve_sigma(v, 0.01, 0.1).sigma;
    double s_big_eps = solve_sigma(v, 0.05, 0.1).sigma;
    EXPECT_GE(s_big_eps, s_small_eps - 1e-6);
    double s_small_rho = solve_sigma(v, 0.02, 0.05).sigma;
    double s_big_rho = solve_sigma(v, 0.02, 0.2).sigma;
    EXPECT_LE(s_big_rho, s_small_rho + 1e-6);
}

TEST(SolveSigma, EmpiricalCoverageWithinRho) {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        int n = 50 + 30 * trial;
        Eigen::MatrixXd v(n, 2);
        for (int i = 0; i < n; ++i) {
            v(i, 0) = rng.normal(0.0, 1.0);
            v(i, 1) = rng.normal(0.0, 1.0);
        }
        double rho = 0.1;
        auto res = solve_sigma(v, 0.02, rho);
        int outside = 0;
        for (int i = 0; i < n; ++i)
            if (v.row(i).lpNorm<Eigen::Infinity>() > res.sigma) ++outside;
        EXPECT_LE(static_cast<double>(outside) / n, rho + 1e-12);
    }
}

TEST(SolveSigma, InfeasibleRadiusThrows) {
    Eigen::MatrixXd v(2, 1);
    v << -1.0, 1.0;
    // with sigma capped at 1.5, h_min = eps/0.5 = 2*eps > rho
    EXPECT_THROW(solve_sigma(v, 0.3, 0.1, 1.5), NoFeasibleSigma);
}

TEST(VertexSet, IdentityWhitening) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
    auto u = vertex_set(1.0, mean, eye);
    ASSERT_EQ(u.size(), 4u);
    EXPECT_EQ(u[0], (std::vector<double>{1.0, 1.0}));
    EXPECT_EQ(u[1], (std::vector<double>{1.0, -1.0}));
    EXPECT_EQ(u[2], (std::vector<double>{-1.0, 1.0}));
    EXPECT_EQ(u[3], (std::vector<double>{-1.0, -1.0}));
}

TEST(VertexSet, AffineMap) {
    Eigen::VectorXd mean(2);
    mean << 1.0, 0.0;
    Eigen::MatrixXd sqrt_cov(2, 2);
    sqrt_cov << 2.0, 0.0, 0.0, 1.0;  // sqrt of diag(4, 1)
    auto u = vertex_set(1.0, mean, sqrt_cov);
    ASSERT_EQ(u.size(), 4u);
    EXPECT_EQ(u[0], (std::vector<double>{3.0, 1.0}));
    EXPECT_EQ(u[1], (std::vector<double>{3.0, -1.0}));
    EXPECT_EQ(u[2], (std::vector<double>{-1.0, 1.0}));
    EXPECT_EQ(u[3], (std::vector<double>{-1.0, -1.0}));
}

TEST(VertexSet, DegenerateSigma) {
    Eigen::VectorXd mean(1);
    mean << 0.4;
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(1, 1);
    auto u = vertex_set(0.0, mean, eye);
    ASSERT_EQ(u.size(), 1u);
    EXPECT_EQ(u[0], (std::vector<double>{0.4}));
}

TEST(VertexSet, BudgetGuard) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(13);
    Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(13, 13);
    EXPECT_THROW(vertex_set(1.0, mean, eye), VertexBudgetExceeded);
}

TEST(SampleSet, WhiteningNormalizes) {
    Rng rng(41);
    Eigen::MatrixXd data(400, 2);
    for (int i = 0; i < 400; ++i) {
        data(i, 0) = rng.normal(1.0, 0.5);
        data(i, 1) = rng.normal(-2.0, 2.0);
    }
    auto s = SampleSet::from_matrix(data);
    Eigen::VectorXd wm = s.whitened.colwise().mean();
    EXPECT_LE(wm.lpNorm<Eigen::Infinity>(), 1e-10);
    Eigen::MatrixXd wc = s.whitened.transpose() * s.whitened / 400.0;
    EXPECT_LE((wc - Eigen::MatrixXd::Identity(2, 2)).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(SampleSet, LoadsFixtureFile) {
    auto s = SampleSet::load(fixture("samples_loaderr.json"));
    EXPECT_EQ(s.count(), 300);
    EXPECT_EQ(s.dims(), 1);
    auto a = build_ambiguity_set(s, 0.05);
    EXPECT_GT(a.C, 0.0);
    EXPECT_GT(a.epsilon, 0.0);
    EXPECT_GT(a.sigma, 0.0);
    EXPECT_LE(a.certificate, 0.05 + 1e-9);
    EXPECT_EQ(a.vertices.size(), 2u);  // m = 1
}

TEST(SolveDro, PointMassEqualsBaseline) {
    auto c = netmodel::load_case(fixture("2bus.json"));
    robust::DisturbanceSpec spec;
    spec.dims.push_back({"ld1", robust::Channel::LoadForecastAdd, -1.0, 1.0, 0, 4});
    AmbiguitySet a;
    a.vertices = {{0.0}};
    auto base = dispatch::solve_baseline(c);
    auto sol = solve_dro(c, spec, a);
    EXPECT_NEAR(sol.base.objective, base.objective, 1e-4);
    EXPECT_NEAR(sol.schedule.total(), 0.0, 1e-5);
}

TEST(SolveDro, DiagonalCovarianceReducesToBox) {
    // with a diagonal covariance the hypercube vertices coincide with the
    // bounding-box corners, so solve_dro must match solve_robust on that box
    auto c = netmodel::load_case(fixture("2bus.json"));
    robust::DisturbanceSpec spec;
    spec.dims.push_back({"ld1", robust::Channel::LoadForecastAdd, -0.3, 0.3, 0, 4});
    AmbiguitySet a;
    a.mean = Eigen::VectorXd::Zero(1);
    a.cov_sqrt = Eigen::MatrixXd::Identity(1, 1);
    a.sigma = 0.3;
    a.vertices = vertex_set(0.3, a.mean, a.cov_sqrt);
    auto dro_sol = solve_dro(c, spec, a);
    auto rob_sol = robust::solve_robust(c, spec);
    EXPECT_NEAR(dro_sol.base.objective, rob_sol.base.objective, 1e-4);
    EXPECT_NEAR(dro_sol.schedule.total(), rob_sol.schedule.total(), 1e-3);
}
