#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include <hpalign/metrics.hpp>
#include <hpalign/synth.hpp>
#include <hpalign/transport.hpp>

#include "oracles.hpp"

using namespace hpalign;

namespace {

Marginals uniform(Eigen::Index cs, Eigen::Index ct)
{
    return {Vector::Constant(cs, 1.0 / static_cast<double>(cs)), Vector::Constant(ct, 1.0 / static_cast<double>(ct))};
}

Marginals random_marginals(Eigen::Index cs, Eigen::Index ct, std::mt19937_64& rng)
{
    return {oracle::random_simplex(cs, rng), oracle::random_simplex(ct, rng)};
}

// Minimizer of <C, T> + tau KL(T || P) over 2x2 plans with the given marginals. A 2x2 plan has
// one free entry x = T(0, 0); the first-order condition in x is monotone, so bisection finds it.
Matrix two_by_two_prox(const Matrix& C, const Matrix& P, double a, double b, double tau)
{
    auto plan = [&](double x) {
        Matrix T(2, 2);
        T << x, a - x, b - x, 1.0 - a - b + x;
        return T;
    };
    auto derivative = [&](double x) {
        const Matrix T = plan(x);
        return C(0, 0) - C(0, 1) - C(1, 0) + C(1, 1) +
               tau * (std::log(T(0, 0) / P(0, 0)) - std::log(T(0, 1) / P(0, 1)) - std::log(T(1, 0) / P(1, 0)) +
                      std::log(T(1, 1) / P(1, 1)));
    };
    double lo = std::max(0.0, a + b - 1.0);
    double hi = std::min(a, b);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (derivative(mid) > 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return plan(0.5 * (lo + hi));
}

HawkesParams permuted_instance(std::size_t c, std::uint64_t seed, std::vector<std::size_t>& perm)
{
    perm = random_permutation(c, seed);
    return generate_source(c, derive_seed(seed, {1}));
}

}  // namespace

TEST(Marginals, Validation)
{
    EXPECT_THROW(Marginals(Vector::Zero(0), Vector::Ones(1)), ValidationError);
    EXPECT_THROW(Marginals(Vector::Constant(2, 0.5), Vector::Constant(2, 0.6)), ValidationError);
    Vector with_zero(2);
    with_zero << 1.0, 0.0;
    EXPECT_THROW(Marginals(with_zero, Vector::Constant(2, 0.5)), ValidationError);
    EXPECT_NO_THROW(uniform(3, 4));
}

TEST(Marginals, EmpiricalHistogramIsSmoothed)
{
    const std::vector<EventSequence> corpus{EventSequence({{0.1, 0}, {0.2, 0}, {0.3, 1}}, 1.0, 3)};
    const Vector u = empirical_marginal(corpus, 3, 0.5);
    EXPECT_NEAR(u(0), 2.5 / 4.5, 1e-15);
    EXPECT_NEAR(u(1), 1.5 / 4.5, 1e-15);
    EXPECT_NEAR(u(2), 0.5 / 4.5, 1e-15);
    const std::vector<EventSequence> empty{EventSequence({}, 1.0, 3)};
    EXPECT_THROW(empirical_marginal(empty, 3), ValidationError);
}

TEST(Cost, FeatureCostExample)
{
    Vector s(2), t(3);
    s << 0.1, 0.5;
    t << 0.1, 0.3, 1.0;
    const Matrix L = feature_cost(s, t);
    EXPECT_DOUBLE_EQ(L(0, 0), 0.0);
    EXPECT_NEAR(L(1, 1), 0.04, 1e-15);
    EXPECT_NEAR(L(0, 2), 0.81, 1e-15);
}

TEST(Cost, RelationalCostMatchesQuadrupleSum)
{
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index cs = 1 + static_cast<Eigen::Index>(rng() % 5);
        const Eigen::Index ct = 1 + static_cast<Eigen::Index>(rng() % 5);
        const Marginals m = random_marginals(cs, ct, rng);
        const TransportPlan plan = oracle::random_plan(m, rng);
        const Matrix As = oracle::random_matrix(cs, cs, 0.0, 1.0, rng);
        const Matrix At = oracle::random_matrix(ct, ct, 0.0, 1.0, rng);
        EXPECT_LE((relational_cost(As, At, plan) - oracle::relational_cost(As, At, plan.coupling)).cwiseAbs().maxCoeff(),
                  1e-10);
    }
}

TEST(Cost, FgwDiscrepancyMatchesBruteForce)
{
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const HawkesParams s = oracle::random_params(3, rng);
        const HawkesParams t = oracle::random_params(4, rng);
        const Marginals m = random_marginals(3, 4, rng);
        const TransportPlan plan = oracle::random_plan(m, rng);
        for (double alpha : {0.0, 0.3, 0.8, 1.0}) {
            EXPECT_NEAR(fgw_discrepancy(s, t, plan, alpha), oracle::fgw(s, t, plan.coupling, alpha), 1e-12);
        }
    }
}

TEST(Cost, IdenticalProcessesHaveZeroDiscrepancyUnderIdentity)
{
    std::mt19937_64 rng(9);
    const HawkesParams p = oracle::random_params(4, rng);
    const Marginals m = uniform(4, 4);
    const TransportPlan diagonal{Matrix::Identity(4, 4) / 4.0, m};
    EXPECT_NEAR(fgw_discrepancy(p, p, diagonal, 0.8), 0.0, 1e-15);
    EXPECT_GT(fgw_discrepancy(p, p, independent_plan(m), 0.8), 0.0);
}

TEST(Cost, RejectsInfeasiblePlanAndBadAlpha)
{
    const Marginals m = uniform(2, 2);
    const TransportPlan bad{Matrix::Constant(2, 2, 0.3), m};
    EXPECT_THROW(relational_cost(Matrix::Zero(2, 2), Matrix::Zero(2, 2), bad), ValidationError);
    const HawkesParams p(Vector::Ones(2), Matrix::Zero(2, 2));
    EXPECT_THROW(fgw_discrepancy(p, p, independent_plan(m), 1.5), ValidationError);
}

TEST(Divergence, KlBasics)
{
    std::mt19937_64 rng(4);
    const Marginals m = random_marginals(3, 3, rng);
    const TransportPlan a = oracle::random_plan(m, rng);
    const TransportPlan b = independent_plan(m);
    EXPECT_NEAR(kl_divergence(a.coupling, a.coupling), 0.0, 1e-15);
    EXPECT_GT(kl_divergence(a.coupling, b.coupling), 0.0);
    double direct = 0.0;
    for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) {
            direct += a.coupling(i, j) * std::log(a.coupling(i, j) / b.coupling(i, j));
        }
    }
    EXPECT_NEAR(kl_divergence(a.coupling, b.coupling), direct, 1e-14);
}

TEST(Sinkhorn, TwoByTwoMatchesOneParameterOracle)
{
    Matrix C(2, 2);
    C << 0.0, 1.0, 1.0, 0.0;
    Vector a(2), b(2);
    a << 0.3, 0.7;
    b << 0.6, 0.4;
    const Marginals m(a, b);
    const TransportPlan prior = independent_plan(m);
    for (double tau : {10.0, 1.0, 0.1, 0.02}) {
        const TransportPlan plan = sinkhorn_prox_step(C, prior, m, tau);
        const Matrix expected = two_by_two_prox(C, prior.coupling, 0.3, 0.6, tau);
        EXPECT_LE((plan.coupling - expected).cwiseAbs().maxCoeff(), 1e-9) << "tau " << tau;
        EXPECT_LE(plan.marginal_error(), 1e-12);
    }
}

TEST(Sinkhorn, LogDomainMatchesOracle)
{
    // exp(-cost / tau) underflows to zero here, so the log-domain path is the only one that works.
    Matrix C(2, 2);
    C << 0.0, 800.0, 900.0, 750.0;
    Vector a(2), b(2);
    a << 0.4, 0.6;
    b << 0.5, 0.5;
    const Marginals m(a, b);
    const TransportPlan prior = independent_plan(m);
    const double tau = 1.0;
    const TransportPlan plan = sinkhorn_prox_step(C, prior, m, tau);
    const Matrix expected = two_by_two_prox(C, prior.coupling, 0.4, 0.5, tau);
    EXPECT_TRUE(plan.coupling.allFinite());
    EXPECT_LE((plan.coupling - expected).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(plan.marginal_error(), 1e-12);
}

TEST(Sinkhorn, AgreesWithClosedFormAtLargeTau)
{
    // As tau grows the step stays at the prior.
    std::mt19937_64 rng(17);
    const Marginals m = random_marginals(4, 5, rng);
    const TransportPlan prior = oracle::random_plan(m, rng);
    const Matrix C = oracle::random_matrix(4, 5, 0.0, 1.0, rng);
    const TransportPlan plan = sinkhorn_prox_step(C, prior, m, 1e9);
    EXPECT_LE((plan.coupling - prior.coupling).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Sinkhorn, RejectsDeadRowsAndBadTau)
{
    const Marginals m = uniform(2, 2);
    Matrix prior(2, 2);
    prior << 0.0, 0.0, 0.5, 0.5;
    EXPECT_THROW(sinkhorn_prox_step(Matrix::Zero(2, 2), TransportPlan{prior, m}, m, 1.0), NumericalError);
    EXPECT_THROW(sinkhorn_prox_step(Matrix::Zero(2, 2), independent_plan(m), m, 0.0), ValidationError);
    EXPECT_THROW(sinkhorn_prox_step(Matrix::Zero(3, 2), independent_plan(m), m, 1.0), ValidationError);
}

TEST(Solver, FeasibleAndMonotoneOnRandomInstances)
{
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index cs = 2 + static_cast<Eigen::Index>(rng() % 6);
        const Eigen::Index ct = 2 + static_cast<Eigen::Index>(rng() % 6);
        const HawkesParams s = oracle::random_params(cs, rng);
        const HawkesParams t = oracle::random_params(ct, rng);
        const Marginals m = random_marginals(cs, ct, rng);
        const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const TransportResult r = solve_transport(s, t, m, alpha, {}, independent_plan(m));
        EXPECT_LE(r.plan.marginal_error(), 1e-6);
        ASSERT_EQ(r.objective_trace.size(), static_cast<std::size_t>(r.outer_iterations) + 1);
        for (std::size_t k = 1; k < r.objective_trace.size(); ++k) {
            EXPECT_LE(r.objective_trace[k], r.objective_trace[k - 1] + 1e-9);
        }
        EXPECT_NEAR(r.objective_trace.back(), oracle::fgw(s, t, r.plan.coupling, alpha), 1e-10);
    }
}

TEST(Solver, ZeroIterationsReturnsInitialPlan)
{
    std::mt19937_64 rng(2);
    const HawkesParams s = oracle::random_params(3, rng);
    const Marginals m = uniform(3, 3);
    TransportOptions opts;
    opts.max_outer_iterations = 0;
    const TransportResult r = solve_transport(s, s, m, 0.5, opts, independent_plan(m));
    EXPECT_EQ(r.plan.coupling, independent_plan(m).coupling);
    EXPECT_EQ(r.objective_trace.size(), 1u);
}

TEST(Solver, RejectsBadInputs)
{
    const HawkesParams p(Vector::Ones(2), Matrix::Zero(2, 2));
    const Marginals m = uniform(2, 2);
    EXPECT_THROW(solve_transport(p, p, m, -0.1, {}, independent_plan(m)), ValidationError);
    EXPECT_THROW(solve_transport(p, p, uniform(3, 2), 0.5, {}, independent_plan(uniform(3, 2))), ValidationError);
    const TransportPlan sparse{Matrix::Identity(2, 2) / 2.0, m};
    EXPECT_THROW(solve_transport(p, p, m, 0.5, {}, sparse), ValidationError);
}

TEST(Solver, WassersteinEndMatchesDirectSinkhornOnFeatureCost)
{
    // At alpha = 0 the cost does not depend on the plan, so k proximal steps from the prior equal
    // one entropic step with tau / k.
    std::mt19937_64 rng(31);
    const HawkesParams s = oracle::random_params(4, rng);
    const HawkesParams t = oracle::random_params(4, rng);
    const Marginals m = random_marginals(4, 4, rng);
    TransportOptions opts;
    opts.tau = 0.05;
    opts.max_outer_iterations = 3;
    opts.outer_tolerance = 0.0;
    opts.sinkhorn.tolerance = 1e-13;
    opts.sinkhorn.max_iterations = 100000;
    const TransportResult r = solve_transport(s, t, m, 0.0, opts, independent_plan(m));
    ASSERT_EQ(r.outer_iterations, 3);
    const TransportPlan direct =
        sinkhorn_prox_step(feature_cost(s.mu, t.mu), independent_plan(m), m, 0.05 / 3.0, opts.sinkhorn);
    EXPECT_LE((r.plan.coupling - direct.coupling).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Solver, EndpointInvariances)
{
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        const HawkesParams s = oracle::random_params(5, rng);
        const HawkesParams t = oracle::random_params(5, rng);
        const Marginals m = random_marginals(5, 5, rng);

        HawkesParams s0 = s, t0 = t;
        s0.A.setZero();
        t0.A.setZero();
        const Matrix w = solve_transport(s, t, m, 0.0, {}, independent_plan(m)).plan.coupling;
        const Matrix w0 = solve_transport(s0, t0, m, 0.0, {}, independent_plan(m)).plan.coupling;
        EXPECT_LE((w - w0).lpNorm<1>(), 1e-8);

        HawkesParams s1 = s, t1 = t;
        s1.mu.array() += 0.7;
        t1.mu.array() += 0.7;
        const Matrix g = solve_transport(s, t, m, 1.0, {}, independent_plan(m)).plan.coupling;
        const Matrix g1 = solve_transport(s1, t1, m, 1.0, {}, independent_plan(m)).plan.coupling;
        EXPECT_LE((g - g1).lpNorm<1>(), 1e-8);
    }
}

TEST(Solver, RecoversBruteForceBestPermutationAtFourTypes)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::vector<std::size_t> perm;
        const HawkesParams source = permuted_instance(4, 500 + seed, perm);
        const HawkesParams target = permute_target(source, Correspondence::from_permutation(perm));
        const Marginals m = uniform(4, 4);

        double best = std::numeric_limits<double>::infinity();
        std::vector<std::size_t> best_perm;
        for (const auto& candidate : oracle::permutations(4)) {
            Matrix P = Matrix::Zero(4, 4);
            for (std::size_t i = 0; i < 4; ++i) {
                P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(candidate[i])) = 0.25;
            }
            const double value = oracle::fgw(source, target, P, 0.8);
            if (value < best) {
                best = value;
                best_perm = candidate;
            }
        }
        EXPECT_EQ(best_perm, perm);

        const TransportResult r = solve_transport(source, target, m, 0.8, {}, independent_plan(m));
        for (Eigen::Index i = 0; i < 4; ++i) {
            Eigen::Index arg = 0;
            r.plan.coupling.row(i).maxCoeff(&arg);
            EXPECT_EQ(static_cast<std::size_t>(arg), best_perm[static_cast<std::size_t>(i)]) << "seed " << seed;
        }
    }
}

TEST(Solver, PlanScalesWithTau)
{
    // Small tau steps further from the prior than large tau.
    std::mt19937_64 rng(77);
    const HawkesParams s = oracle::random_params(4, rng);
    const HawkesParams t = oracle::random_params(4, rng);
    const Marginals m = uniform(4, 4);
    TransportOptions small, large;
    small.tau = 1e-3;
    large.tau = 1e2;
    small.max_outer_iterations = large.max_outer_iterations = 1;
    const TransportPlan prior = independent_plan(m);
    const double near = kl_divergence(solve_transport(s, t, m, 0.0, large, prior).plan.coupling, prior.coupling);
    const double far = kl_divergence(solve_transport(s, t, m, 0.0, small, prior).plan.coupling, prior.coupling);
    EXPECT_LT(near, far);
}

TEST(Sinkhorn, SharpTwoByTwoApproachesIdentity)
{
    Matrix C(2, 2);
    C << 0.0, 1.0, 1.0, 0.0;
    const Marginals m = uniform(2, 2);
    const TransportPlan plan = sinkhorn_prox_step(C, independent_plan(m), m, 0.01);
    EXPECT_LE((plan.coupling - 0.5 * Matrix::Identity(2, 2)).lpNorm<1>(), 1e-3);
    EXPECT_LE((plan.coupling - two_by_two_prox(C, independent_plan(m).coupling, 0.5, 0.5, 0.01)).cwiseAbs().maxCoeff(),
              1e-12);
}

TEST(Solver, ScalingCostsAndTauTogetherLeavesPlanUnchanged)
{
    // mu scales the feature cost by s^2; A scales the relational cost by s^2 as well.
    std::mt19937_64 rng(55);
    const HawkesParams s = oracle::random_params(4, rng);
    const HawkesParams t = oracle::random_params(5, rng);
    const Marginals m(oracle::random_simplex(4, rng), oracle::random_simplex(5, rng));
    const double scale = 3.0;
    HawkesParams s2 = s, t2 = t;
    s2.mu *= scale;
    s2.A *= scale;
    t2.mu *= scale;
    t2.A *= scale;
    TransportOptions a, b;
    a.tau = 0.01;
    b.tau = 0.01 * scale * scale;
    const TransportResult r1 = solve_transport(s, t, m, 0.6, a, independent_plan(m));
    const TransportResult r2 = solve_transport(s2, t2, m, 0.6, b, independent_plan(m));
    EXPECT_LE((r1.plan.coupling - r2.plan.coupling).cwiseAbs().maxCoeff(), 1e-9);
    // The automatic rule has the same property.
    const TransportResult d1 = solve_transport(s, t, m, 0.6, {}, independent_plan(m));
    const TransportResult d2 = solve_transport(s2, t2, m, 0.6, {}, independent_plan(m));
    EXPECT_NEAR(d2.tau, scale * scale * d1.tau, 1e-12 * d2.tau);
    EXPECT_LE((d1.plan.coupling - d2.plan.coupling).cwiseAbs().maxCoeff(), 1e-9);
}
