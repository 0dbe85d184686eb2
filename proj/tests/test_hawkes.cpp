#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include <hpalign/hawkes.hpp>

#include "oracles.hpp"

using namespace hpalign;

namespace {

HawkesParams two_type(double mu0, double mu1, const Matrix& A, double beta = 1.0)
{
    Vector mu(2);
    mu << mu0, mu1;
    return HawkesParams(mu, A, beta);
}

EventSequence random_sequence(std::size_t types, double horizon, std::size_t n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> time(0.0, horizon);
    std::uniform_int_distribution<std::size_t> type(0, types - 1);
    std::vector<Event> events;
    for (std::size_t i = 0; i < n; ++i) {
        events.push_back({time(rng), type(rng)});
    }
    return normalize_events(std::move(events), horizon, types).sequence;
}

}  // namespace

TEST(EventSequence, RejectsInvalidEvents)
{
    EXPECT_THROW(EventSequence({{1.0, 0}, {0.5, 0}}, 2.0, 1), ValidationError);
    EXPECT_THROW(EventSequence({{1.0, 0}, {1.0, 0}}, 2.0, 1), ValidationError);
    EXPECT_THROW(EventSequence({{3.0, 0}}, 2.0, 1), ValidationError);
    EXPECT_THROW(EventSequence({{1.0, 2}}, 2.0, 2), ValidationError);
    EXPECT_THROW(EventSequence({}, 0.0, 2), ValidationError);
    EXPECT_NO_THROW(EventSequence({{0.0, 0}, {2.0, 1}}, 2.0, 2));
}

TEST(EventSequence, NormalizeSortsAndBreaksTies)
{
    const NormalizedSequence n = normalize_events({{2.0, 1}, {1.0, 0}, {1.0, 1}, {1.0, 0}}, 5.0, 2);
    EXPECT_EQ(n.ties_broken, 2u);
    const auto ev = n.sequence.events();
    ASSERT_EQ(ev.size(), 4u);
    EXPECT_EQ(ev[0].time, 1.0);
    EXPECT_EQ(ev[1].time, std::nextafter(1.0, 2.0));
    EXPECT_GT(ev[2].time, ev[1].time);
    EXPECT_LT(ev[2].time, 1.0 + 1e-12);
    EXPECT_EQ(ev[3].time, 2.0);
}

TEST(HawkesParams, ValidatesAndReportsStability)
{
    EXPECT_THROW(two_type(-0.1, 0.1, Matrix::Zero(2, 2)), ValidationError);
    EXPECT_THROW(two_type(0.1, 0.1, Matrix::Constant(2, 2, -0.1)), ValidationError);
    EXPECT_THROW(two_type(0.1, 0.1, Matrix::Zero(2, 2), 0.0), ValidationError);
    EXPECT_THROW(HawkesParams(Vector::Ones(2), Matrix::Zero(3, 3)), ValidationError);

    // Branching matrix A / beta = 0.55 everywhere has spectral radius 1.1.
    const HawkesParams unstable = two_type(0.1, 0.1, Matrix::Constant(2, 2, 1.1), 2.0);
    EXPECT_NEAR(unstable.spectral_radius(), 1.1, 1e-12);
    EXPECT_FALSE(unstable.is_stable());
    EXPECT_TRUE(two_type(0.1, 0.1, Matrix::Constant(2, 2, 0.4)).is_stable());
}

TEST(Intensity, ZeroInfectivityIsBaseRate)
{
    const HawkesParams p = two_type(0.5, 0.1, Matrix::Zero(2, 2));
    const EventSequence s({{0.2, 0}, {0.7, 1}}, 2.0, 2);
    EXPECT_DOUBLE_EQ(intensity_at(p, s, 0, 1.0), 0.5);
}

TEST(Intensity, SingleExcitation)
{
    Matrix A = Matrix::Zero(2, 2);
    A(0, 1) = 0.3;
    const HawkesParams p = two_type(0.2, 0.0, A);
    const EventSequence s({{1.0, 1}}, 3.0, 2);
    // 0.2 + 0.3 exp(-1)
    EXPECT_NEAR(intensity_at(p, s, 0, 2.0), 0.31036383235143270, 1e-15);
    EXPECT_NEAR(intensity_at(p, s, 0, 2.0), oracle::intensity(p, s, 0, 2.0), 1e-15);
}

TEST(Intensity, EmptyHistoryZeroBase)
{
    const HawkesParams p = two_type(0.0, 0.3, Matrix::Constant(2, 2, 0.1));
    const EventSequence s({}, 1.0, 2);
    EXPECT_EQ(intensity_at(p, s, 0, 0.5), 0.0);
}

TEST(Intensity, RejectsBadTypeAndTime)
{
    const HawkesParams p = two_type(0.1, 0.1, Matrix::Zero(2, 2));
    const EventSequence s({}, 1.0, 2);
    EXPECT_THROW(intensity_at(p, s, 2, 0.5), ValidationError);
    EXPECT_THROW(intensity_at(p, s, 0, 1.5), ValidationError);
    EXPECT_THROW(compensator(p, s, 5), ValidationError);
}

TEST(Intensity, RightContinuousAndAboveBase)
{
    std::mt19937_64 rng(11);
    const HawkesParams p = oracle::random_params(3, rng);
    const EventSequence s = random_sequence(3, 10.0, 25, rng);
    for (const Event& e : s.events()) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double at = intensity_at(p, s, c, e.time);
            const double after = intensity_at(p, s, c, std::min(e.time + 1e-9, s.horizon()));
            // The event itself does not count at its own time; it does right after.
            EXPECT_NEAR(after - at, p.A(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(e.type)), 1e-6);
            EXPECT_GE(at, p.mu(static_cast<Eigen::Index>(c)));
        }
    }
}

TEST(Compensator, PoissonIsRateTimesHorizon)
{
    const HawkesParams p = two_type(1.0, 0.0, Matrix::Zero(2, 2));
    const EventSequence s({{0.3, 1}, {1.1, 0}}, 2.0, 2);
    EXPECT_DOUBLE_EQ(compensator(p, s, 0), 2.0);
}

TEST(Compensator, SingleKernelMass)
{
    Matrix A = Matrix::Zero(2, 2);
    A(0, 1) = 1.0;
    const HawkesParams p = two_type(0.0, 0.0, A);
    const EventSequence s({{0.0, 1}}, 1.0, 2);
    EXPECT_NEAR(compensator(p, s, 0), 0.63212055882855767, 1e-15);  // 1 - exp(-1)
}

TEST(Compensator, MatchesQuadrature)
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        HawkesParams p = oracle::random_params(3, rng);
        p.beta = 0.5 + trial;
        const EventSequence s = random_sequence(3, 8.0, 20, rng);
        for (std::size_t c = 0; c < 3; ++c) {
            const double exact = compensator(p, s, c);
            EXPECT_LT(oracle::relative_error(oracle::compensator(p, s, c), exact), 1e-6) << "trial " << trial;
        }
    }
}

TEST(Compensator, MonotoneInHorizonAndRow)
{
    std::mt19937_64 rng(5);
    const HawkesParams p = oracle::random_params(3, rng);
    const EventSequence s = random_sequence(3, 5.0, 15, rng);
    const std::vector<Event> events(s.events().begin(), s.events().end());
    double previous = 0.0;
    for (double horizon : {5.0, 6.0, 8.0, 20.0}) {
        const double value = compensator(p, EventSequence(events, horizon, 3), 1);
        EXPECT_GE(value, previous);
        previous = value;
    }
    HawkesParams bigger = p;
    bigger.A(1, 2) += 0.5;
    EXPECT_GE(compensator(bigger, s, 1), compensator(p, s, 1));
}

TEST(Likelihood, PoissonClosedForm)
{
    const HawkesParams p(Vector::Ones(1), Matrix::Zero(1, 1));
    const std::vector<EventSequence> corpus{EventSequence({{0.5, 0}, {1.5, 0}}, 2.0, 1)};
    // -(2 log 1 - 1 * 2)
    EXPECT_NEAR(neg_log_likelihood(p, corpus), 2.0, 1e-12);
}

TEST(Likelihood, ZeroBaseIsInfeasible)
{
    const HawkesParams p(Vector::Zero(1), Matrix::Zero(1, 1));
    const std::vector<EventSequence> corpus{EventSequence({{0.5, 0}}, 2.0, 1)};
    EXPECT_THROW(neg_log_likelihood(p, corpus), InfeasibleParameters);
}

TEST(Likelihood, RejectsMismatchedTypes)
{
    const HawkesParams p(Vector::Ones(2), Matrix::Zero(2, 2));
    const std::vector<EventSequence> corpus{EventSequence({{0.5, 0}}, 2.0, 3)};
    EXPECT_THROW(neg_log_likelihood(p, corpus), ValidationError);
}

TEST(Likelihood, MatchesQuadratureBruteForce)
{
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const HawkesParams p = oracle::random_params(3, rng);
        std::vector<EventSequence> corpus;
        for (int n = 0; n < 3; ++n) {
            corpus.push_back(random_sequence(3, 4.0 + n, 12, rng));
        }
        EXPECT_LT(oracle::relative_error(oracle::neg_log_likelihood(p, corpus), neg_log_likelihood(p, corpus)), 1e-4);
    }
}

TEST(Likelihood, PoissonMleIsUniqueMinimizer)
{
    std::mt19937_64 rng(21);
    std::vector<EventSequence> corpus{random_sequence(2, 10.0, 30, rng), random_sequence(2, 4.0, 9, rng)};
    const Vector counts = type_counts(corpus, 2);
    const Vector mle = counts / total_horizon(corpus);
    const double best = neg_log_likelihood(HawkesParams(mle, Matrix::Zero(2, 2)), corpus);
    for (double scale : {0.5, 0.9, 0.99, 1.01, 1.1, 2.0}) {
        Vector moved = mle;
        moved(0) *= scale;
        EXPECT_GT(neg_log_likelihood(HawkesParams(moved, Matrix::Zero(2, 2)), corpus), best);
    }
    // Moving toward the MLE decreases the NLL monotonically.
    double previous = std::numeric_limits<double>::infinity();
    for (double w : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const Vector mu = (1.0 - w) * Vector::Constant(2, 0.2) + w * mle;
        const double value = neg_log_likelihood(HawkesParams(mu, Matrix::Zero(2, 2)), corpus);
        EXPECT_LT(value, previous);
        previous = value;
    }
}

TEST(Likelihood, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(13);
    HawkesParams p = oracle::random_params(3, rng);
    std::vector<EventSequence> corpus{random_sequence(3, 6.0, 20, rng), random_sequence(3, 3.0, 8, rng)};
    LikelihoodGradient g;
    const double value = neg_log_likelihood_gradient(p, corpus, g);
    EXPECT_NEAR(value, neg_log_likelihood(p, corpus), 1e-12);
    auto f = [&] { return neg_log_likelihood(p, corpus); };
    for (Eigen::Index i = 0; i < 3; ++i) {
        EXPECT_LT(oracle::relative_error(oracle::central_difference(f, p.mu, i, 0, 1e-5), g.mu(i)), 1e-4);
        for (Eigen::Index j = 0; j < 3; ++j) {
            EXPECT_LT(oracle::relative_error(oracle::central_difference(f, p.A, i, j, 1e-5), g.A(i, j)), 1e-4);
        }
    }
}

TEST(Simulate, ZeroBaseGivesEmptySequence)
{
    const HawkesParams p = two_type(0.0, 0.0, Matrix::Constant(2, 2, 0.3));
    const EventSequence s = simulate(p, 50.0, 4);
    EXPECT_TRUE(s.empty());
    EXPECT_EQ(s.horizon(), 50.0);
}

TEST(Simulate, RejectsUnstableParameters)
{
    const HawkesParams p = two_type(0.1, 0.1, Matrix::Constant(2, 2, 0.6));
    EXPECT_THROW(simulate(p, 10.0, 1), ValidationError);
    EXPECT_THROW(simulate(two_type(0.1, 0.1, Matrix::Zero(2, 2)), 0.0, 1), ValidationError);
}

TEST(Simulate, DeterministicPerSeedAndValid)
{
    std::mt19937_64 rng(2);
    const HawkesParams p = oracle::random_params(4, rng, 0.5, 0.1);
    const EventSequence a = simulate(p, 30.0, 99);
    EXPECT_EQ(a, simulate(p, 30.0, 99));
    EXPECT_NE(a, simulate(p, 30.0, 100));
    // Constructing a copy re-runs every invariant check.
    EXPECT_NO_THROW(EventSequence(std::vector<Event>(a.events().begin(), a.events().end()), 30.0, 4));
}

TEST(Simulate, PoissonCountsFitPoisson)
{
    const HawkesParams p(Vector::Constant(1, 2.0), Matrix::Zero(1, 1));
    std::vector<std::size_t> counts;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        counts.push_back(simulate(p, 100.0, seed).size());
    }
    EXPECT_GT(oracle::poisson_gof_pvalue(counts, 200.0), 0.01);
}

TEST(Simulate, MeanCountMatchesBranchingRate)
{
    Vector mu(3);
    mu << 0.3, 0.5, 0.2;
    Matrix A(3, 3);
    A << 0.2, 0.1, 0.0, 0.05, 0.3, 0.1, 0.1, 0.0, 0.25;
    const HawkesParams p(mu, A, 1.5);
    const double horizon = 200.0;
    const Matrix G = A / 1.5;
    const double expected = horizon * ((Matrix::Identity(3, 3) - G).inverse() * mu).sum();
    std::vector<double> counts;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        counts.push_back(static_cast<double>(simulate(p, horizon, seed).size()));
    }
    const double mean = std::accumulate(counts.begin(), counts.end(), 0.0) / counts.size();
    double var = 0.0;
    for (double c : counts) {
        var += (c - mean) * (c - mean);
    }
    const double se = std::sqrt(var / (counts.size() - 1) / counts.size());
    EXPECT_LT(std::abs(mean - expected), 3.0 * se) << "mean " << mean << " expected " << expected;
}
