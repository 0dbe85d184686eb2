#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace hpalign {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Event {
    double time{0.0};
    std::size_t type{0};

    friend bool operator==(const Event&, const Event&) = default;
};

// Typed events on [0, horizon], strictly increasing in time.
class EventSequence {
public:
    EventSequence() = default;

    EventSequence(std::vector<Event> events, double horizon, std::size_t num_types)
        : events_(std::move(events)), horizon_(horizon), num_types_(num_types)
    {
        detail::require(std::isfinite(horizon_) && horizon_ > 0.0, "sequence horizon must be positive");
        detail::require(num_types_ > 0, "sequence needs at least one event type");
        double previous = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < events_.size(); ++i) {
            const Event& e = events_[i];
            detail::require(e.type < num_types_,
                            "event " + std::to_string(i) + " has type " + std::to_string(e.type) +
                                " outside [0, " + std::to_string(num_types_) + ")");
            detail::require(e.time >= 0.0 && e.time <= horizon_,
                            "event " + std::to_string(i) + " time outside [0, horizon]");
            detail::require(e.time > previous, "event times must be strictly increasing (event " +
                                                   std::to_string(i) + ")");
            previous = e.time;
        }
    }

    [[nodiscard]] std::span<const Event> events() const { return events_; }
    [[nodiscard]] double horizon() const { return horizon_; }
    [[nodiscard]] std::size_t num_types() const { return num_types_; }
    [[nodiscard]] std::size_t size() const { return events_.size(); }
    [[nodiscard]] bool empty() const { return events_.empty(); }

    friend bool operator==(const EventSequence&, const EventSequence&) = default;

private:
    std::vector<Event> events_;
    double horizon_{1.0};
    std::size_t num_types_{1};
};

struct NormalizedSequence {
    EventSequence sequence;
    std::size_t ties_broken{0};
};

// Sorts raw events by time and separates exact ties by nudging the later event to the next
// representable double. The number of nudges is reported so callers can warn.
inline NormalizedSequence normalize_events(std::vector<Event> events, double horizon, std::size_t num_types)
{
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    std::size_t ties = 0;
    for (std::size_t i = 1; i < events.size(); ++i) {
        if (events[i].time <= events[i - 1].time) {
            events[i].time = std::nextafter(events[i - 1].time, std::numeric_limits<double>::infinity());
            ++ties;
        }
    }
    return {EventSequence(std::move(events), horizon, num_types), ties};
}

// Base intensity mu, infectivity A (A(c, c') is the effect of a c' event on type c) and the
// decay rate of the kernel exp(-beta t).
struct HawkesParams {
    Vector mu;
    Matrix A;
    double beta{1.0};

    HawkesParams() = default;
    HawkesParams(Vector mu_, Matrix A_, double beta_ = 1.0) : mu(std::move(mu_)), A(std::move(A_)), beta(beta_)
    {
        validate();
    }

    [[nodiscard]] std::size_t num_types() const { return static_cast<std::size_t>(mu.size()); }

    void validate() const
    {
        detail::require(mu.size() > 0, "base intensity must be non-empty");
        detail::require(A.rows() == mu.size() && A.cols() == mu.size(),
                        "infectivity matrix must be " + std::to_string(mu.size()) + "x" +
                            std::to_string(mu.size()));
        detail::require(std::isfinite(beta) && beta > 0.0, "decay rate beta must be positive");
        detail::require(mu.allFinite() && (mu.array() >= 0.0).all(), "base intensity must be nonnegative");
        detail::require(A.allFinite() && (A.array() >= 0.0).all(), "infectivity must be nonnegative");
    }

    // Expected number of direct offspring of type c from one c' event: A / beta.
    [[nodiscard]] Matrix branching_matrix() const { return A / beta; }

    [[nodiscard]] double spectral_radius() const
    {
        Eigen::EigenSolver<Matrix> solver(branching_matrix(), false);
        return solver.eigenvalues().cwiseAbs().maxCoeff();
    }

    [[nodiscard]] bool is_stable() const { return spectral_radius() < 1.0; }

    // Stationary event rate per type, (I - A/beta)^{-1} mu.
    [[nodiscard]] Vector stationary_rate() const
    {
        const auto n = mu.size();
        const Matrix system = Matrix::Identity(n, n) - branching_matrix();
        return system.partialPivLu().solve(mu);
    }

    friend bool operator==(const HawkesParams& a, const HawkesParams& b)
    {
        return a.beta == b.beta && a.mu == b.mu && a.A == b.A;
    }
};

namespace detail {

inline void check_type(const HawkesParams& params, std::size_t c)
{
    require(c < params.num_types(),
            "type id " + std::to_string(c) + " outside [0, " + std::to_string(params.num_types()) + ")");
}

inline void check_compatible(const HawkesParams& params, const EventSequence& seq)
{
    require(seq.num_types() == params.num_types(),
            "sequence has " + std::to_string(seq.num_types()) + " types but parameters have " +
                std::to_string(params.num_types()));
}

}  // namespace detail

// lambda_c(t) = mu_c + sum_{t_i < t} A(c, c_i) exp(-beta (t - t_i)).
inline double intensity_at(const HawkesParams& params, const EventSequence& seq, std::size_t c, double t)
{
    detail::check_type(params, c);
    detail::check_compatible(params, seq);
    detail::require(t >= 0.0 && t <= seq.horizon(), "time outside [0, horizon]");
    double value = params.mu(static_cast<Eigen::Index>(c));
    for (const Event& e : seq.events()) {
        if (e.time >= t) {
            break;
        }
        value += params.A(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(e.type)) *
                 std::exp(-params.beta * (t - e.time));
    }
    return value;
}

// Closed-form integral of lambda_c over [0, horizon].
inline double compensator(const HawkesParams& params, const EventSequence& seq, std::size_t c)
{
    detail::check_type(params, c);
    detail::check_compatible(params, seq);
    const auto row = static_cast<Eigen::Index>(c);
    const double horizon = seq.horizon();
    double value = params.mu(row) * horizon;
    for (const Event& e : seq.events()) {
        value += params.A(row, static_cast<Eigen::Index>(e.type)) *
                 (-std::expm1(-params.beta * (horizon - e.time))) / params.beta;
    }
    return value;
}

struct LikelihoodGradient {
    Vector mu;
    Matrix A;
};

namespace detail {

// One recursive pass over a sequence. The excitation state holds
// sum_{t_j < t, c_j = c'} exp(-beta (t - t_j)) per source type c'.
inline double sequence_nll(const HawkesParams& params, const EventSequence& seq, LikelihoodGradient* grad)
{
    const auto C = static_cast<Eigen::Index>(params.num_types());
    const double beta = params.beta;
    const double horizon = seq.horizon();
    Vector excitation = Vector::Zero(C);
    double last = 0.0;
    double log_sum = 0.0;
    double kernel_mass = 0.0;

    for (const Event& e : seq.events()) {
        excitation *= std::exp(-beta * (e.time - last));
        last = e.time;
        const auto c = static_cast<Eigen::Index>(e.type);
        const double lambda = params.mu(c) + params.A.row(c).dot(excitation);
        if (!(lambda > 0.0)) {
            throw InfeasibleParameters("intensity is zero at an observed event of type " + std::to_string(e.type) +
                                       " (t = " + std::to_string(e.time) + ")");
        }
        log_sum += std::log(lambda);
        const double tail = -std::expm1(-beta * (horizon - e.time)) / beta;
        kernel_mass += params.A.col(c).sum() * tail;
        if (grad != nullptr) {
            grad->mu(c) -= 1.0 / lambda;
            grad->A.row(c) -= excitation.transpose() / lambda;
            grad->A.col(c).array() += tail;
        }
        excitation(c) += 1.0;
    }
    if (grad != nullptr) {
        grad->mu.array() += horizon;
    }
    return -(log_sum - params.mu.sum() * horizon - kernel_mass);
}

inline void check_corpus(const HawkesParams& params, std::span<const EventSequence> sequences)
{
    for (const EventSequence& seq : sequences) {
        check_compatible(params, seq);
    }
}

}  // namespace detail

// -log L over a corpus of sequences, each with its own horizon.
inline double neg_log_likelihood(const HawkesParams& params, std::span<const EventSequence> sequences)
{
    detail::check_corpus(params, sequences);
    double total = 0.0;
    for (const EventSequence& seq : sequences) {
        total += detail::sequence_nll(params, seq, nullptr);
    }
    return total;
}

// Exact full-batch gradient of neg_log_likelihood; returns the objective as well.
inline double neg_log_likelihood_gradient(const HawkesParams& params, std::span<const EventSequence> sequences,
                                          LikelihoodGradient& grad)
{
    detail::check_corpus(params, sequences);
    const auto C = static_cast<Eigen::Index>(params.num_types());
    grad.mu = Vector::Zero(C);
    grad.A = Matrix::Zero(C, C);
    double total = 0.0;
    for (const EventSequence& seq : sequences) {
        total += detail::sequence_nll(params, seq, &grad);
    }
    return total;
}

inline Vector type_counts(std::span<const EventSequence> sequences, std::size_t num_types)
{
    Vector counts = Vector::Zero(static_cast<Eigen::Index>(num_types));
    for (const EventSequence& seq : sequences) {
        detail::require(seq.num_types() == num_types, "sequences disagree on the number of event types");
        for (const Event& e : seq.events()) {
            counts(static_cast<Eigen::Index>(e.type)) += 1.0;
        }
    }
    return counts;
}

inline double total_horizon(std::span<const EventSequence> sequences)
{
    double total = 0.0;
    for (const EventSequence& seq : sequences) {
        total += seq.horizon();
    }
    return total;
}

inline std::size_t total_events(std::span<const EventSequence> sequences)
{
    std::size_t total = 0;
    for (const EventSequence& seq : sequences) {
        total += seq.size();
    }
    return total;
}

// Ogata thinning. The total intensity only decays between events, so the bound is the total
// intensity right after the previous candidate, recomputed after every candidate.
inline EventSequence simulate(const HawkesParams& params, double horizon, std::uint64_t seed)
{
    params.validate();
    detail::require(std::isfinite(horizon) && horizon > 0.0, "simulation horizon must be positive");
    const double radius = params.spectral_radius();
    detail::require(radius < 1.0, "unstable parameters: branching spectral radius " + std::to_string(radius) +
                                      " >= 1");

    const auto C = static_cast<Eigen::Index>(params.num_types());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    std::vector<Event> events;
    Vector excitation = Vector::Zero(C);
    Vector lambda = params.mu;
    double t = 0.0;

    while (true) {
        const double bound = lambda.sum();
        if (!(bound > 0.0)) {
            break;
        }
        std::exponential_distribution<double> wait(bound);
        const double next = t + wait(rng);
        if (next > horizon) {
            break;
        }
        excitation *= std::exp(-params.beta * (next - t));
        t = next;
        lambda = params.mu + params.A * excitation;
        const double total = lambda.sum();
        const double draw = uniform(rng) * bound;
        if (draw < total && (events.empty() || t > events.back().time)) {
            // draw / bound is uniform on [0, total / bound) given acceptance, so it picks the type.
            Eigen::Index type = 0;
            double cumulative = lambda(0);
            while (type + 1 < C && draw >= cumulative) {
                ++type;
                cumulative += lambda(type);
            }
            events.push_back({t, static_cast<std::size_t>(type)});
            excitation(type) += 1.0;
            lambda += params.A.col(type);
        }
    }
    return EventSequence(std::move(events), horizon, params.num_types());
}

}  // namespace hpalign
