#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "hawkes.hpp"

namespace hpalign {

// Event-type distributions of the source (rows) and target (columns) domains.
struct Marginals {
    Vector source;
    Vector target;

    Marginals() = default;
    Marginals(Vector source_, Vector target_) : source(std::move(source_)), target(std::move(target_))
    {
        validate();
    }

    void validate() const
    {
        check(source, "source");
        check(target, "target");
    }

private:
    static void check(const Vector& u, const char* side)
    {
        detail::require(u.size() > 0, std::string(side) + " marginal is empty");
        detail::require(u.allFinite() && (u.array() > 0.0).all(),
                        std::string(side) + " marginal must be strictly positive");
        detail::require(std::abs(u.sum() - 1.0) <= 1e-12, std::string(side) + " marginal must sum to 1");
    }
};

struct TransportPlan {
    Matrix coupling;
    Marginals marginals;

    [[nodiscard]] Eigen::Index rows() const { return coupling.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return coupling.cols(); }

    // L1 violation of both marginal constraints.
    [[nodiscard]] double marginal_error() const
    {
        return (coupling.rowwise().sum() - marginals.source).lpNorm<1>() +
               (coupling.colwise().sum().transpose() - marginals.target).lpNorm<1>();
    }
};

inline constexpr double kFeasibilityTolerance = 1e-6;
inline constexpr double kDefaultMarginalSmoothing = 1e-3;

// Smoothed type histogram: (n_c + eps) / (N + C eps).
inline Vector empirical_marginal(std::span<const EventSequence> sequences, std::size_t num_types,
                                 double smoothing = kDefaultMarginalSmoothing)
{
    detail::require(smoothing >= 0.0, "marginal smoothing must be nonnegative");
    const Vector counts = type_counts(sequences, num_types);
    const double total = counts.sum();
    detail::require(total > 0.0, "cannot estimate a type histogram from a corpus without events");
    return (counts.array() + smoothing) / (total + static_cast<double>(num_types) * smoothing);
}

// Independence coupling u_s u_t^T.
inline TransportPlan independent_plan(const Marginals& marginals)
{
    return {marginals.source * marginals.target.transpose(), marginals};
}

inline void check_plan(const TransportPlan& plan)
{
    detail::require(plan.rows() == plan.marginals.source.size() && plan.cols() == plan.marginals.target.size(),
                    "plan shape does not match its marginals");
    detail::require(plan.coupling.allFinite() && (plan.coupling.array() >= 0.0).all(),
                    "plan entries must be nonnegative");
    const double error = plan.marginal_error();
    detail::require(error <= kFeasibilityTolerance,
                    "plan violates its marginals (L1 error " + std::to_string(error) + ")");
}

inline void check_alpha(double alpha)
{
    detail::require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
}

// L_mu(i, j) = (mu_s(i) - mu_t(j))^2.
inline Matrix feature_cost(const Vector& mu_s, const Vector& mu_t)
{
    return (mu_s.replicate(1, mu_t.size()) - mu_t.transpose().replicate(mu_s.size(), 1)).array().square();
}

// L_A(T)(j, j') = sum_{i, i'} (A_s(i, j) - A_t(i', j'))^2 T(i, i'), expanded as
//   h_s 1^T + 1 h_t^T - 2 A_s^T T A_t,  h_s = (A_s o A_s)^T (T 1),  h_t = (A_t o A_t)^T (T^T 1).
// Cubic in the number of types.
inline Matrix relational_cost(const Matrix& A_s, const Matrix& A_t, const TransportPlan& plan)
{
    detail::require(A_s.rows() == A_s.cols() && A_t.rows() == A_t.cols(), "infectivity matrices must be square");
    detail::require(plan.rows() == A_s.rows() && plan.cols() == A_t.rows(),
                    "plan is " + std::to_string(plan.rows()) + "x" + std::to_string(plan.cols()) +
                        " but infectivities are " + std::to_string(A_s.rows()) + " and " +
                        std::to_string(A_t.rows()));
    check_plan(plan);
    const Vector row_mass = plan.coupling.rowwise().sum();
    const Vector col_mass = plan.coupling.colwise().sum().transpose();
    const Vector h_s = A_s.cwiseAbs2().transpose() * row_mass;
    const Vector h_t = A_t.cwiseAbs2().transpose() * col_mass;
    Matrix cost = -2.0 * (A_s.transpose() * plan.coupling * A_t);
    cost.colwise() += h_s;
    cost.rowwise() += h_t.transpose();
    return cost;
}

inline Matrix fused_cost(const HawkesParams& source, const HawkesParams& target, const TransportPlan& plan,
                         double alpha)
{
    check_alpha(alpha);
    Matrix cost = (1.0 - alpha) * feature_cost(source.mu, target.mu);
    if (alpha > 0.0) {
        cost += alpha * relational_cost(source.A, target.A, plan);
    }
    return cost;
}

// <(1 - alpha) L_mu + alpha L_A(T), T>, quadratic in T.
inline double fgw_discrepancy(const HawkesParams& source, const HawkesParams& target, const TransportPlan& plan,
                              double alpha)
{
    check_alpha(alpha);
    check_plan(plan);
    return fused_cost(source, target, plan, alpha).cwiseProduct(plan.coupling).sum();
}

// Generalized KL: sum T log(T / T0) - T + T0, with 0 log 0 = 0.
inline double kl_divergence(const Matrix& plan, const Matrix& prior)
{
    double total = 0.0;
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
        for (Eigen::Index i = 0; i < plan.rows(); ++i) {
            const double t = plan(i, j);
            const double t0 = prior(i, j);
            if (t > 0.0) {
                total += t * std::log(t / t0) - t + t0;
            } else {
                total += t0;
            }
        }
    }
    return total;
}

struct SinkhornOptions {
    double tolerance{1e-8};
    int max_iterations{1000};
};

namespace detail {

inline double log_sum_exp(const Eigen::Ref<const Vector>& x)
{
    const double top = x.maxCoeff();
    if (!std::isfinite(top)) {
        return top;
    }
    return top + std::log((x.array() - top).exp().sum());
}

inline Matrix sinkhorn_linear(const Matrix& log_kernel, const Marginals& m, const SinkhornOptions& opts)
{
    const Matrix K = log_kernel.array().exp();
    Vector a = Vector::Ones(K.rows());
    Vector b = Vector::Ones(K.cols());
    for (int it = 0; it < opts.max_iterations; ++it) {
        const Vector Kb = K * b;
        if (it > 0) {
            const double error = (a.cwiseProduct(Kb) - m.source).lpNorm<1>();
            if (error < opts.tolerance) {
                break;
            }
        }
        a = m.source.cwiseQuotient(Kb);
        b = m.target.cwiseQuotient(K.transpose() * a);
        if (!a.allFinite() || !b.allFinite()) {
            throw NumericalError("Sinkhorn scaling overflowed; increase tau");
        }
    }
    return a.asDiagonal() * K * b.asDiagonal();
}

// Row-wise log-sum-exp of M; every row must hold at least one finite entry.
inline Vector row_log_sum_exp(const Matrix& M)
{
    const Vector top = M.rowwise().maxCoeff();
    return top.array() + (M.colwise() - top).array().exp().rowwise().sum().log();
}

inline Matrix sinkhorn_log(const Matrix& log_kernel, const Marginals& m, const SinkhornOptions& opts)
{
    const Vector log_us = m.source.array().log();
    const Vector log_ut = m.target.array().log();
    const Matrix log_kernel_t = log_kernel.transpose();
    Vector f = Vector::Zero(log_kernel.rows());
    Vector g = Vector::Zero(log_kernel.cols());
    for (int it = 0; it < opts.max_iterations; ++it) {
        const Vector row_lse = row_log_sum_exp(log_kernel.rowwise() + g.transpose());
        if (it > 0) {
            // Columns are exact after the g update; the row error reuses this pass.
            const double error = ((f + row_lse).array().exp() - m.source.array()).abs().sum();
            if (!std::isfinite(error)) {
                throw NumericalError("log-domain Sinkhorn diverged; increase tau");
            }
            if (error < opts.tolerance) {
                break;
            }
        }
        f = log_us - row_lse;
        g = log_ut - row_log_sum_exp(log_kernel_t.rowwise() + f.transpose());
    }
    return ((log_kernel.colwise() + f).rowwise() + g.transpose()).array().exp();
}

// Moves an approximately scaled plan onto Pi(u_s, u_t) exactly: shrink rows and columns that
// exceed their marginal, then add the rank-one outer product of the remaining deficits.
inline void round_to_marginals(Matrix& plan, const Marginals& m)
{
    const Vector row_scale = m.source.cwiseQuotient(plan.rowwise().sum()).cwiseMin(1.0);
    plan = row_scale.asDiagonal() * plan;
    const Vector col_scale = m.target.cwiseQuotient(plan.colwise().sum().transpose()).cwiseMin(1.0);
    plan = plan * col_scale.asDiagonal();
    const Vector row_deficit = (m.source - plan.rowwise().sum()).cwiseMax(0.0);
    const Vector col_deficit = (m.target - plan.colwise().sum().transpose()).cwiseMax(0.0);
    const double mass = row_deficit.sum();
    if (mass > 0.0) {
        plan += row_deficit * col_deficit.transpose() / mass;
    }
}

}  // namespace detail

// argmin_{T in Pi(u_s, u_t)} <cost, T> + tau KL(T || prior), by Sinkhorn scaling of the kernel
// prior o exp(-cost / tau). Switches to log-domain updates once any kernel entry drops below 1e-300.
// The scaled plan is rounded onto the marginals, so the result is feasible even when the iteration
// cap is hit first.
inline TransportPlan sinkhorn_prox_step(const Matrix& cost, const TransportPlan& prior, const Marginals& marginals,
                                        double tau, const SinkhornOptions& opts = {})
{
    detail::require(std::isfinite(tau) && tau > 0.0, "tau must be positive");
    detail::require(cost.rows() == prior.rows() && cost.cols() == prior.cols(), "cost and prior shapes differ");
    detail::require(cost.rows() == marginals.source.size() && cost.cols() == marginals.target.size(),
                    "cost shape does not match the marginals");
    detail::require(cost.allFinite(), "cost must be finite");
    detail::require((prior.coupling.array() >= 0.0).all(), "prior must be nonnegative");

    const Matrix log_kernel = prior.coupling.array().log() - cost.array() / tau;
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> live = log_kernel.array() > -1e300;
    const bool dead_row = (live.rowwise().count().array() == 0).any();
    const bool dead_col = (live.colwise().count().array() == 0).any();
    if (dead_row || dead_col) {
        throw NumericalError("Sinkhorn kernel has an all-zero row or column; increase tau");
    }

    double smallest = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < log_kernel.cols(); ++j) {
        for (Eigen::Index i = 0; i < log_kernel.rows(); ++i) {
            if (live(i, j)) {
                smallest = std::min(smallest, log_kernel(i, j));
            }
        }
    }
    const bool use_log = smallest < std::log(1e-300) || log_kernel.maxCoeff() > std::log(1e300);

    TransportPlan result{use_log ? detail::sinkhorn_log(log_kernel, marginals, opts)
                                 : detail::sinkhorn_linear(log_kernel, marginals, opts),
                         marginals};
    if (!result.coupling.allFinite()) {
        throw NumericalError("Sinkhorn produced non-finite plan entries; increase tau");
    }
    detail::round_to_marginals(result.coupling, marginals);
    return result;
}

struct TransportOptions {
    // Unset: 0.1 times the mean entry of the fused cost at the initial plan.
    std::optional<double> tau;
    int max_outer_iterations{200};
    double outer_tolerance{1e-6};
    // Ascent guard: on an objective increase the proximal step is retried with doubled tau. An
    // increase below monotone_slack relative to the objective is round-off and ends the solve.
    int max_tau_doublings{30};
    double monotone_slack{1e-12};
    SinkhornOptions sinkhorn;
};

struct TransportResult {
    TransportPlan plan;
    // FGW objective at the initial plan followed by one entry per accepted outer iteration.
    std::vector<double> objective_trace;
    int outer_iterations{0};
    double tau{0.0};
};

inline double default_tau(const Matrix& cost)
{
    const double mean = cost.mean();
    return mean > 0.0 ? 0.1 * mean : 1.0;
}

// Proximal point iterations T <- argmin <C(T_k), T> + tau KL(T || T_k) with the relational cost
// frozen at the current plan.
inline TransportResult solve_transport(const HawkesParams& source, const HawkesParams& target,
                                       const Marginals& marginals, double alpha, const TransportOptions& opts,
                                       const TransportPlan& init)
{
    check_alpha(alpha);
    marginals.validate();
    detail::require(source.num_types() == static_cast<std::size_t>(marginals.source.size()) &&
                        target.num_types() == static_cast<std::size_t>(marginals.target.size()),
                    "parameter dimensions do not match the marginals");
    detail::require(init.rows() == marginals.source.size() && init.cols() == marginals.target.size(),
                    "initial plan shape does not match the marginals");
    detail::require((init.coupling.array() > 0.0).all(), "initial plan must be strictly positive");
    check_plan(init);
    detail::require(opts.max_outer_iterations >= 0, "outer iteration count must be nonnegative");

    TransportResult result;
    result.plan = init;
    Matrix cost = fused_cost(source, target, result.plan, alpha);
    result.tau = opts.tau.value_or(default_tau(cost));
    detail::require(std::isfinite(result.tau) && result.tau > 0.0, "tau must be positive");

    double objective = cost.cwiseProduct(result.plan.coupling).sum();
    result.objective_trace.push_back(objective);

    for (int k = 0; k < opts.max_outer_iterations; ++k) {
        double tau = result.tau;
        std::optional<TransportPlan> accepted;
        double next_objective = objective;
        for (int attempt = 0; attempt <= opts.max_tau_doublings; ++attempt, tau *= 2.0) {
            TransportPlan candidate = sinkhorn_prox_step(cost, result.plan, marginals, tau, opts.sinkhorn);
            const Matrix candidate_cost = fused_cost(source, target, candidate, alpha);
            const double value = candidate_cost.cwiseProduct(candidate.coupling).sum();
            if (value <= objective) {
                accepted = std::move(candidate);
                next_objective = value;
                cost = candidate_cost;
                break;
            }
            // Accepting small ascents lets them accumulate over many iterations.
            if (value <= objective + opts.monotone_slack * std::abs(objective)) {
                break;
            }
        }
        if (!accepted) {
            break;
        }
        const double change = (accepted->coupling - result.plan.coupling).lpNorm<1>();
        result.plan = std::move(*accepted);
        objective = next_objective;
        result.objective_trace.push_back(objective);
        result.outer_iterations = k + 1;
        if (change < opts.outer_tolerance) {
            break;
        }
    }
    return result;
}

}  // namespace hpalign
