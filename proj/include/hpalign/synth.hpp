#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "hawkes.hpp"
#include "joint.hpp"
#include "metrics.hpp"
#include "random.hpp"
#include "transport.hpp"

namespace hpalign {

enum class Method { Empirical, HpWd, HpGwd, Fgwa };

inline constexpr Method kAllMethods[] = {Method::Empirical, Method::HpWd, Method::HpGwd, Method::Fgwa};

inline std::string_view method_name(Method m)
{
    switch (m) {
    case Method::Empirical: return "Empirical";
    case Method::HpWd: return "HP-WD";
    case Method::HpGwd: return "HP-GWD";
    case Method::Fgwa: return "FGWA";
    }
    return "?";
}

inline Method parse_method(std::string_view name)
{
    for (Method m : kAllMethods) {
        if (name == method_name(m)) {
            return m;
        }
    }
    throw ValidationError("unknown method '" + std::string(name) + "' (expected Empirical, HP-WD, HP-GWD or FGWA)");
}

struct TrialSpec {
    std::size_t num_types{10};
    // 0 selects the protocol defaults: num_types sequences of horizon num_types^2.
    std::size_t num_sequences{0};
    double horizon{0.0};
    std::size_t trials{10};
    std::uint64_t seed{0};

    [[nodiscard]] std::size_t sequences_per_domain() const { return num_sequences > 0 ? num_sequences : num_types; }
    [[nodiscard]] double sequence_horizon() const
    {
        return horizon > 0.0 ? horizon : static_cast<double>(num_types * num_types);
    }

    void validate() const
    {
        detail::require(num_types >= 2, "trial needs at least two event types");
        detail::require(trials >= 1, "benchmark needs at least one trial");
        detail::require(horizon >= 0.0, "horizon must be nonnegative (0 selects C^2)");
    }
};

// mu ~ U[0, 1/C], A ~ U[0, 1/C^2], beta = 1; redrawn until the branching matrix is stable.
inline HawkesParams generate_source(std::size_t num_types, std::uint64_t seed)
{
    detail::require(num_types >= 2, "source process needs at least two event types");
    const auto C = static_cast<Eigen::Index>(num_types);
    const double c = static_cast<double>(num_types);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mu_dist(0.0, 1.0 / c);
    std::uniform_real_distribution<double> a_dist(0.0, 1.0 / (c * c));
    while (true) {
        Vector mu(C);
        for (Eigen::Index i = 0; i < C; ++i) {
            mu(i) = mu_dist(rng);
        }
        Matrix A(C, C);
        for (Eigen::Index i = 0; i < C; ++i) {
            for (Eigen::Index j = 0; j < C; ++j) {
                A(i, j) = a_dist(rng);
            }
        }
        HawkesParams params(std::move(mu), std::move(A), 1.0);
        if (params.is_stable()) {
            return params;
        }
    }
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed)
{
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

// mu_t = P^T mu_s, A_t = P^T A_s P for a 0/1 permutation matrix P.
inline HawkesParams permute_target(const HawkesParams& source, const Correspondence& permutation)
{
    detail::require(permutation.is_bijective(), "target construction needs a permutation matrix");
    detail::require(permutation.rows() == static_cast<Eigen::Index>(source.num_types()),
                    "permutation size does not match the number of types");
    const Matrix& P = permutation.matrix();
    return HawkesParams(P.transpose() * source.mu, P.transpose() * source.A * P, source.beta);
}

struct TrialData {
    Correspondence truth;
    HawkesParams source_params;
    HawkesParams target_params;
    std::vector<EventSequence> source;
    std::vector<EventSequence> target;
};

// Everything random about one trial, derived from (spec.seed, trial index) only.
inline TrialData make_trial_data(const TrialSpec& spec, std::size_t trial)
{
    spec.validate();
    const auto t = static_cast<std::uint64_t>(trial);
    TrialData data;
    data.truth = Correspondence::from_permutation(random_permutation(spec.num_types, derive_seed(spec.seed, {t, 1})));
    data.source_params = generate_source(spec.num_types, derive_seed(spec.seed, {t, 2}));
    data.target_params = permute_target(data.source_params, data.truth);
    const std::size_t n = spec.sequences_per_domain();
    const double horizon = spec.sequence_horizon();
    for (std::size_t k = 0; k < n; ++k) {
        data.source.push_back(simulate(data.source_params, horizon, derive_seed(spec.seed, {t, 3, k})));
        data.target.push_back(simulate(data.target_params, horizon, derive_seed(spec.seed, {t, 4, k})));
    }
    return data;
}

struct AlignmentReport {
    Method method{Method::Fgwa};
    std::size_t trial{0};
    double accuracy{0.0};
    double similarity{0.0};
    double entropy{0.0};
    Matrix plan;
    std::vector<std::vector<double>> transport_traces;
};

// Sinkhorn between type histograms with cost (u_s(i) - u_t(j))^2, started from the independence coupling.
inline TransportPlan empirical_alignment(std::span<const EventSequence> source, std::span<const EventSequence> target,
                                         const AlignmentConfig& config)
{
    const std::size_t Cs = corpus_types(source, "source");
    const std::size_t Ct = corpus_types(target, "target");
    const Marginals marginals(empirical_marginal(source, Cs, config.marginal_smoothing),
                              empirical_marginal(target, Ct, config.marginal_smoothing));
    const Matrix cost = feature_cost(marginals.source, marginals.target);
    const double tau = config.tau.value_or(default_tau(cost));
    return sinkhorn_prox_step(cost, independent_plan(marginals), marginals, tau, config.transport_options().sinkhorn);
}

inline AlignmentConfig method_config(Method method, AlignmentConfig config)
{
    if (method == Method::HpWd) {
        config.alpha = 0.0;
    } else if (method == Method::HpGwd) {
        config.alpha = 1.0;
    }
    return config;
}

inline AlignmentReport run_method(const TrialData& data, Method method, const AlignmentConfig& config,
                                  std::size_t trial = 0)
{
    AlignmentReport report;
    report.method = method;
    report.trial = trial;
    if (method == Method::Empirical) {
        report.plan = empirical_alignment(data.source, data.target, config).coupling;
    } else {
        JointState state = align(data.source, data.target, method_config(method, config));
        report.plan = std::move(state.plan.coupling);
        report.transport_traces = std::move(state.transport_traces);
    }
    report.accuracy = top_k_accuracy(data.truth, report.plan, 1);
    report.similarity = cosine_similarity(data.truth, report.plan);
    report.entropy = plan_entropy(report.plan);
    return report;
}

inline AlignmentReport run_trial(const TrialSpec& spec, Method method, const AlignmentConfig& config,
                                 std::size_t trial = 0)
{
    return run_method(make_trial_data(spec, trial), method, config, trial);
}

struct BenchmarkRow {
    Method method{Method::Fgwa};
    double accuracy{0.0};
    double similarity{0.0};
    double entropy{0.0};
};

struct BenchmarkTable {
    std::vector<BenchmarkRow> rows;
    // Trial-major: trial 0 for every method, then trial 1, ...
    std::vector<AlignmentReport> reports;
};

// Every method sees the same corpora within a trial. Trials are distributed over `threads` workers;
// the result does not depend on the thread count.
inline BenchmarkTable run_benchmark(const TrialSpec& spec, std::span<const Method> methods,
                                    const AlignmentConfig& config, unsigned threads = 1)
{
    spec.validate();
    config.validate();
    detail::require(!methods.empty(), "benchmark needs at least one method");
    std::vector<std::vector<AlignmentReport>> per_trial(spec.trials);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        while (true) {
            const std::size_t trial = next.fetch_add(1);
            if (trial >= spec.trials) {
                return;
            }
            try {
                const TrialData data = make_trial_data(spec, trial);
                for (Method m : methods) {
                    per_trial[trial].push_back(run_method(data, m, config, trial));
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next = spec.trials;
            }
        }
    };

    const unsigned workers = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(spec.trials)));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    BenchmarkTable table;
    for (Method m : methods) {
        BenchmarkRow row{m, 0.0, 0.0, 0.0};
        for (const auto& reports : per_trial) {
            for (const AlignmentReport& r : reports) {
                if (r.method == m) {
                    row.accuracy += r.accuracy;
                    row.similarity += r.similarity;
                    row.entropy += r.entropy;
                }
            }
        }
        const auto n = static_cast<double>(spec.trials);
        row.accuracy /= n;
        row.similarity /= n;
        row.entropy /= n;
        table.rows.push_back(row);
    }
    for (auto& reports : per_trial) {
        for (AlignmentReport& r : reports) {
            table.reports.push_back(std::move(r));
        }
    }
    return table;
}

}  // namespace hpalign
