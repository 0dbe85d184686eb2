#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "hawkes.hpp"
#include "random.hpp"
#include "transport.hpp"

namespace hpalign {

struct SgdOptions {
    bool enabled{false};
    std::size_t batch_size{256};
    // Number of most recent history events per sampled event; 0 keeps the whole history.
    std::size_t history_window{0};
};

struct AlignmentConfig {
    double alpha{0.8};
    // Unset: total events / (mean per-type rate)^2, see resolve_gamma.
    std::optional<double> gamma;
    // Unset: chosen per transport solve from the initial fused cost.
    std::optional<double> tau;
    int outer_rounds{10};
    int hp_steps{200};
    // First trial step of the line search; the fixed step in SGD mode.
    double learning_rate{1e-3};
    SgdOptions sgd;
    std::uint64_t seed{0};
    bool warm_start{true};
    bool fit_infectivity{true};
    double beta{1.0};
    // Initial infectivity row mass; A0 = initial_infectivity / C everywhere.
    double initial_infectivity{0.1};
    double marginal_smoothing{kDefaultMarginalSmoothing};
    int transport_iterations{200};
    double transport_tolerance{1e-6};
    int sinkhorn_iterations{1000};
    double sinkhorn_tolerance{1e-8};

    void validate() const
    {
        check_alpha(alpha);
        detail::require(!gamma || (std::isfinite(*gamma) && *gamma >= 0.0), "gamma must be nonnegative");
        detail::require(!tau || (std::isfinite(*tau) && *tau > 0.0), "tau must be positive");
        detail::require(outer_rounds >= 0, "outer_rounds must be nonnegative");
        detail::require(hp_steps >= 0, "hp_steps must be nonnegative");
        detail::require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be positive");
        detail::require(!sgd.enabled || sgd.batch_size > 0, "sgd batch_size must be positive");
        detail::require(std::isfinite(beta) && beta > 0.0, "beta must be positive");
        detail::require(initial_infectivity >= 0.0, "initial_infectivity must be nonnegative");
        detail::require(marginal_smoothing >= 0.0, "marginal_smoothing must be nonnegative");
        detail::require(transport_iterations >= 0, "transport_iterations must be nonnegative");
        detail::require(transport_tolerance > 0.0, "transport_tolerance must be positive");
        detail::require(sinkhorn_iterations > 0, "sinkhorn_iterations must be positive");
        detail::require(sinkhorn_tolerance > 0.0, "sinkhorn_tolerance must be positive");
    }

    [[nodiscard]] TransportOptions transport_options() const
    {
        TransportOptions opts;
        opts.tau = tau;
        opts.max_outer_iterations = transport_iterations;
        opts.outer_tolerance = transport_tolerance;
        opts.sinkhorn.max_iterations = sinkhorn_iterations;
        opts.sinkhorn.tolerance = sinkhorn_tolerance;
        return opts;
    }
};

struct TraceRecord {
    int round{0};
    double nll_source{0.0};
    double nll_target{0.0};
    double fgw{0.0};
    double total{0.0};
};

struct JointState {
    HawkesParams source;
    HawkesParams target;
    TransportPlan plan;
    double gamma{0.0};
    std::vector<TraceRecord> trace;
    // Objective trace of every transport solve, one per round.
    std::vector<std::vector<double>> transport_traces;
};

inline constexpr double kMinBaseIntensity = 1e-8;

struct RegularizerGradient {
    Vector mu_source;
    Matrix A_source;
    Vector mu_target;
    Matrix A_target;
};

// Gradient of <(1 - alpha) L_mu + alpha L_A(T), T> in all four parameter blocks, T held fixed.
inline RegularizerGradient regularizer_gradients(const HawkesParams& source, const HawkesParams& target,
                                                 const TransportPlan& plan, double alpha)
{
    check_alpha(alpha);
    check_plan(plan);
    detail::require(plan.rows() == static_cast<Eigen::Index>(source.num_types()) &&
                        plan.cols() == static_cast<Eigen::Index>(target.num_types()),
                    "plan shape does not match the parameters");
    const Matrix& T = plan.coupling;
    const Vector row_mass = T.rowwise().sum();
    const Vector col_mass = T.colwise().sum().transpose();

    RegularizerGradient g;
    g.mu_source = 2.0 * (1.0 - alpha) * (source.mu.cwiseProduct(row_mass) - T * target.mu);
    g.mu_target = 2.0 * (1.0 - alpha) * (target.mu.cwiseProduct(col_mass) - T.transpose() * source.mu);
    if (alpha > 0.0) {
        g.A_source = 2.0 * alpha *
                     ((row_mass * row_mass.transpose()).cwiseProduct(source.A) - T * target.A * T.transpose());
        g.A_target = 2.0 * alpha *
                     ((col_mass * col_mass.transpose()).cwiseProduct(target.A) - T.transpose() * source.A * T);
    } else {
        g.A_source = Matrix::Zero(source.A.rows(), source.A.cols());
        g.A_target = Matrix::Zero(target.A.rows(), target.A.cols());
    }
    return g;
}

namespace detail {

struct EventRef {
    std::size_t sequence;
    std::size_t index;
};

inline std::vector<EventRef> index_events(std::span<const EventSequence> sequences)
{
    std::vector<EventRef> refs;
    refs.reserve(total_events(sequences));
    for (std::size_t n = 0; n < sequences.size(); ++n) {
        for (std::size_t i = 0; i < sequences[n].size(); ++i) {
            refs.push_back({n, i});
        }
    }
    return refs;
}

}  // namespace detail

// Likelihood gradient. Full-batch mode is exact. SGD mode draws batch_size events without
// replacement, truncates each one's history to the history_window most recent events, and rescales
// the per-event terms by (total events / batch size); the mu part of the compensator is exact.
inline LikelihoodGradient nll_gradients(const HawkesParams& params, std::span<const EventSequence> sequences,
                                        const SgdOptions& sgd = {}, std::mt19937_64* rng = nullptr)
{
    LikelihoodGradient grad;
    if (!sgd.enabled) {
        neg_log_likelihood_gradient(params, sequences, grad);
        return grad;
    }
    detail::check_corpus(params, sequences);
    detail::require(sgd.batch_size > 0, "sgd batch_size must be positive");
    const auto C = static_cast<Eigen::Index>(params.num_types());
    grad.mu = Vector::Constant(C, total_horizon(sequences));
    grad.A = Matrix::Zero(C, C);

    std::vector<detail::EventRef> all = detail::index_events(sequences);
    std::vector<detail::EventRef> batch;
    if (sgd.batch_size >= all.size()) {
        batch = std::move(all);
    } else {
        detail::require(rng != nullptr, "sgd sampling needs a random generator");
        batch.reserve(sgd.batch_size);
        std::sample(all.begin(), all.end(), std::back_inserter(batch), sgd.batch_size, *rng);
    }
    if (batch.empty()) {
        return grad;
    }
    const double scale = static_cast<double>(total_events(sequences)) / static_cast<double>(batch.size());
    const double beta = params.beta;

    Vector excitation(C);
    for (const detail::EventRef& ref : batch) {
        const auto events = sequences[ref.sequence].events();
        const Event& e = events[ref.index];
        const std::size_t first = (sgd.history_window == 0 || ref.index < sgd.history_window)
                                      ? 0
                                      : ref.index - sgd.history_window;
        excitation.setZero();
        for (std::size_t j = first; j < ref.index; ++j) {
            excitation(static_cast<Eigen::Index>(events[j].type)) += std::exp(-beta * (e.time - events[j].time));
        }
        const auto c = static_cast<Eigen::Index>(e.type);
        const double lambda = params.mu(c) + params.A.row(c).dot(excitation);
        if (!(lambda > 0.0)) {
            throw InfeasibleParameters("intensity is zero at a sampled event of type " + std::to_string(e.type));
        }
        grad.mu(c) -= scale / lambda;
        grad.A.row(c) -= (scale / lambda) * excitation.transpose();
        grad.A.col(c).array() += scale * (-std::expm1(-beta * (sequences[ref.sequence].horizon() - e.time)) / beta);
    }
    return grad;
}

namespace detail {

struct ParamPair {
    HawkesParams source;
    HawkesParams target;
};

struct PairGradient {
    Vector mu_source;
    Matrix A_source;
    Vector mu_target;
    Matrix A_target;

    [[nodiscard]] double dot(const PairGradient& o) const
    {
        return mu_source.dot(o.mu_source) + A_source.cwiseProduct(o.A_source).sum() + mu_target.dot(o.mu_target) +
               A_target.cwiseProduct(o.A_target).sum();
    }
};

inline PairGradient difference(const ParamPair& a, const ParamPair& b)
{
    return {a.source.mu - b.source.mu, a.source.A - b.source.A, a.target.mu - b.target.mu,
            a.target.A - b.target.A};
}

inline PairGradient difference(const PairGradient& a, const PairGradient& b)
{
    return {a.mu_source - b.mu_source, a.A_source - b.A_source, a.mu_target - b.mu_target,
            a.A_target - b.A_target};
}

// Gradient step followed by projection onto mu >= kMinBaseIntensity, A >= 0.
inline ParamPair projected_step(const ParamPair& p, const PairGradient& g, double step, bool fit_infectivity)
{
    ParamPair next = p;
    next.source.mu = (p.source.mu - step * g.mu_source).cwiseMax(kMinBaseIntensity);
    next.target.mu = (p.target.mu - step * g.mu_target).cwiseMax(kMinBaseIntensity);
    if (fit_infectivity) {
        next.source.A = (p.source.A - step * g.A_source).cwiseMax(0.0);
        next.target.A = (p.target.A - step * g.A_target).cwiseMax(0.0);
    }
    return next;
}

struct Objective {
    std::span<const EventSequence> source_sequences;
    std::span<const EventSequence> target_sequences;
    const TransportPlan* plan;
    double alpha;
    double gamma;

    [[nodiscard]] double value(const ParamPair& p) const
    {
        double total = neg_log_likelihood(p.source, source_sequences) + neg_log_likelihood(p.target, target_sequences);
        if (gamma > 0.0) {
            total += gamma * fgw_discrepancy(p.source, p.target, *plan, alpha);
        }
        return total;
    }

    PairGradient gradient(const ParamPair& p, const SgdOptions& sgd, std::mt19937_64* rng, bool fit_infectivity,
                          double* value_out) const
    {
        PairGradient g;
        double total = 0.0;
        if (sgd.enabled) {
            LikelihoodGradient gs = nll_gradients(p.source, source_sequences, sgd, rng);
            LikelihoodGradient gt = nll_gradients(p.target, target_sequences, sgd, rng);
            g = {std::move(gs.mu), std::move(gs.A), std::move(gt.mu), std::move(gt.A)};
        } else {
            LikelihoodGradient gs;
            LikelihoodGradient gt;
            total += neg_log_likelihood_gradient(p.source, source_sequences, gs);
            total += neg_log_likelihood_gradient(p.target, target_sequences, gt);
            g = {std::move(gs.mu), std::move(gs.A), std::move(gt.mu), std::move(gt.A)};
        }
        if (gamma > 0.0) {
            const RegularizerGradient r = regularizer_gradients(p.source, p.target, *plan, alpha);
            g.mu_source += gamma * r.mu_source;
            g.A_source += gamma * r.A_source;
            g.mu_target += gamma * r.mu_target;
            g.A_target += gamma * r.A_target;
            if (value_out != nullptr && !sgd.enabled) {
                total += gamma * fgw_discrepancy(p.source, p.target, *plan, alpha);
            }
        }
        if (!fit_infectivity) {
            g.A_source.setZero();
            g.A_target.setZero();
        }
        if (value_out != nullptr) {
            *value_out = total;
        }
        return g;
    }
};

inline double safe_value(const Objective& objective, const ParamPair& p)
{
    try {
        const double v = objective.value(p);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
        return std::numeric_limits<double>::infinity();
    }
}

}  // namespace detail

// Default regularizer weight N / mu_bar^2: N is the event count of both corpora and mu_bar the mean
// per-type event rate. The likelihood curvature in mu is about N / mu_bar^2 per unit of type mass,
// while the FGW term is quadratic in the parameters with unit curvature.
inline double resolve_gamma(const AlignmentConfig& config, std::span<const EventSequence> source_sequences,
                            std::span<const EventSequence> target_sequences)
{
    if (config.gamma) {
        return *config.gamma;
    }
    const auto events_s = static_cast<double>(total_events(source_sequences));
    const auto events_t = static_cast<double>(total_events(target_sequences));
    const double rate_s = events_s / (total_horizon(source_sequences) * static_cast<double>(source_sequences.front().num_types()));
    const double rate_t = events_t / (total_horizon(target_sequences) * static_cast<double>(target_sequences.front().num_types()));
    const double mean_rate = 0.5 * (rate_s + rate_t);
    return (events_s + events_t) / (mean_rate * mean_rate);
}

inline TraceRecord evaluate_objective(const JointState& state, double alpha,
                                      std::span<const EventSequence> source_sequences,
                                      std::span<const EventSequence> target_sequences, int round)
{
    TraceRecord r;
    r.round = round;
    r.nll_source = neg_log_likelihood(state.source, source_sequences);
    r.nll_target = neg_log_likelihood(state.target, target_sequences);
    r.fgw = fgw_discrepancy(state.source, state.target, state.plan, alpha);
    r.total = r.nll_source + r.nll_target + state.gamma * r.fgw;
    return r;
}

// hp_steps of projected gradient descent on NLL_s + NLL_t + gamma <fused cost, T> with the plan frozen.
// Full-batch mode uses Barzilai-Borwein trial steps with Armijo backtracking, so the objective never
// increases; SGD mode takes fixed steps of size learning_rate. inner_trace, when given, receives the
// objective at the start and after every accepted full-batch step.
inline JointState update_hawkes(JointState state, const AlignmentConfig& config,
                                std::span<const EventSequence> source_sequences,
                                std::span<const EventSequence> target_sequences,
                                std::vector<double>* inner_trace = nullptr)
{
    config.validate();
    const detail::Objective objective{source_sequences, target_sequences, &state.plan, config.alpha, state.gamma};
    detail::ParamPair current{state.source, state.target};
    current.source.mu = current.source.mu.cwiseMax(kMinBaseIntensity);
    current.target.mu = current.target.mu.cwiseMax(kMinBaseIntensity);

    const int round = state.trace.empty() ? 0 : state.trace.back().round;
    std::mt19937_64 rng(derive_seed(config.seed, {0x5364ULL, static_cast<std::uint64_t>(round)}));

    if (config.sgd.enabled) {
        for (int step = 0; step < config.hp_steps; ++step) {
            const detail::PairGradient g =
                objective.gradient(current, config.sgd, &rng, config.fit_infectivity, nullptr);
            current = detail::projected_step(current, g, config.learning_rate, config.fit_infectivity);
        }
        if (inner_trace != nullptr) {
            inner_trace->push_back(objective.value(current));
        }
    } else {
        constexpr double armijo = 1e-4;
        constexpr int max_backtracks = 60;
        double value = 0.0;
        detail::PairGradient g = objective.gradient(current, config.sgd, nullptr, config.fit_infectivity, &value);
        if (inner_trace != nullptr) {
            inner_trace->push_back(value);
        }
        double step = config.learning_rate;
        for (int it = 0; it < config.hp_steps; ++it) {
            bool accepted = false;
            detail::ParamPair trial;
            double trial_value = value;
            for (int b = 0; b < max_backtracks; ++b, step *= 0.5) {
                trial = detail::projected_step(current, g, step, config.fit_infectivity);
                const double decrease = g.dot(detail::difference(trial, current));
                if (decrease == 0.0) {
                    break;
                }
                trial_value = detail::safe_value(objective, trial);
                if (trial_value <= value + armijo * decrease) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                break;
            }
            double trial_full = 0.0;
            detail::PairGradient trial_g =
                objective.gradient(trial, config.sgd, nullptr, config.fit_infectivity, &trial_full);
            const detail::PairGradient ds = detail::difference(trial, current);
            const detail::PairGradient dg = detail::difference(trial_g, g);
            const double curvature = ds.dot(dg);
            const double previous = value;
            current = std::move(trial);
            g = std::move(trial_g);
            value = trial_full;
            if (inner_trace != nullptr) {
                inner_trace->push_back(value);
            }
            // Barzilai-Borwein step for the next trial.
            step = curvature > 0.0 ? std::clamp(ds.dot(ds) / curvature, 1e-14, 1e14) : step * 2.0;
            if (previous - value <= 1e-15 * std::abs(previous)) {
                break;
            }
        }
    }
    state.source = std::move(current.source);
    state.target = std::move(current.target);
    return state;
}

// Rate-matched starting point: mu = Poisson MLE per type, uniform small infectivity.
inline HawkesParams initial_params(std::span<const EventSequence> sequences, std::size_t num_types,
                                   const AlignmentConfig& config)
{
    const Vector counts = type_counts(sequences, num_types);
    const double horizon = total_horizon(sequences);
    const auto C = static_cast<Eigen::Index>(num_types);
    return HawkesParams((counts / horizon).cwiseMax(kMinBaseIntensity),
                        Matrix::Constant(C, C, config.initial_infectivity / static_cast<double>(num_types)),
                        config.beta);
}

inline std::size_t corpus_types(std::span<const EventSequence> sequences, const char* side)
{
    detail::require(!sequences.empty(), std::string(side) + " corpus has no sequences");
    const std::size_t C = sequences.front().num_types();
    for (const EventSequence& seq : sequences) {
        detail::require(seq.num_types() == C, std::string(side) + " corpus mixes different type counts");
    }
    detail::require(total_events(sequences) > 0, std::string(side) + " corpus has no events");
    return C;
}

inline JointState initial_state(std::span<const EventSequence> source_sequences,
                                std::span<const EventSequence> target_sequences, const AlignmentConfig& config)
{
    config.validate();
    const std::size_t Cs = corpus_types(source_sequences, "source");
    const std::size_t Ct = corpus_types(target_sequences, "target");
    JointState state;
    state.source = initial_params(source_sequences, Cs, config);
    state.target = initial_params(target_sequences, Ct, config);
    const Marginals marginals(empirical_marginal(source_sequences, Cs, config.marginal_smoothing),
                              empirical_marginal(target_sequences, Ct, config.marginal_smoothing));
    state.plan = independent_plan(marginals);
    state.gamma = resolve_gamma(config, source_sequences, target_sequences);
    state.trace.push_back(evaluate_objective(state, config.alpha, source_sequences, target_sequences, 0));
    return state;
}

// Alternates a transport update and a Hawkes update per round, starting from initial_state.
inline JointState align(std::span<const EventSequence> source_sequences,
                        std::span<const EventSequence> target_sequences, const AlignmentConfig& config)
{
    JointState state = initial_state(source_sequences, target_sequences, config);
    const Marginals marginals = state.plan.marginals;
    const TransportOptions transport = config.transport_options();
    for (int round = 1; round <= config.outer_rounds; ++round) {
        TransportPlan start = config.warm_start ? state.plan : independent_plan(marginals);
        if ((start.coupling.array() <= 0.0).any()) {
            // Underflowed cells would stay dead under the KL proximal term.
            start.coupling = (1.0 - 1e-10) * start.coupling + 1e-10 * independent_plan(marginals).coupling;
        }
        TransportResult solved = solve_transport(state.source, state.target, marginals, config.alpha, transport, start);
        state.plan = std::move(solved.plan);
        state.transport_traces.push_back(std::move(solved.objective_trace));

        state = update_hawkes(std::move(state), config, source_sequences, target_sequences);
        state.trace.push_back(evaluate_objective(state, config.alpha, source_sequences, target_sequences, round));
    }
    return state;
}

}  // namespace hpalign
