#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "hawkes.hpp"

namespace hpalign {

// Ground-truth 0/1 correspondence between source (rows) and target (columns) types.
class Correspondence {
public:
    Correspondence() = default;

    explicit Correspondence(Matrix matrix) : matrix_(std::move(matrix))
    {
        detail::require(matrix_.size() > 0, "correspondence is empty");
        detail::require(((matrix_.array() == 0.0) || (matrix_.array() == 1.0)).all(),
                        "correspondence entries must be 0 or 1");
        detail::require((matrix_.array() != 0.0).any(), "correspondence needs at least one pair");
    }

    // Row i maps to column targets[i].
    static Correspondence from_permutation(const std::vector<std::size_t>& targets)
    {
        const auto n = static_cast<Eigen::Index>(targets.size());
        Matrix m = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            detail::require(targets[static_cast<std::size_t>(i)] < targets.size(), "permutation index out of range");
            m(i, static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)])) = 1.0;
        }
        Correspondence result(std::move(m));
        detail::require(result.is_bijective(), "not a permutation");
        return result;
    }

    [[nodiscard]] const Matrix& matrix() const { return matrix_; }
    [[nodiscard]] Eigen::Index rows() const { return matrix_.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return matrix_.cols(); }

    [[nodiscard]] bool is_bijective() const
    {
        return matrix_.rows() == matrix_.cols() && (matrix_.rowwise().sum().array() == 1.0).all() &&
               (matrix_.colwise().sum().array() == 1.0).all();
    }

private:
    Matrix matrix_;
};

namespace detail {

inline void check_same_shape(const Matrix& truth, const Matrix& estimate)
{
    require(truth.rows() == estimate.rows() && truth.cols() == estimate.cols(),
            "shape mismatch: truth is " + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()) +
                ", plan is " + std::to_string(estimate.rows()) + "x" + std::to_string(estimate.cols()));
}

}  // namespace detail

// Binary mask of the K largest entries per row; ties go to the lower column index.
inline Matrix top_k_mask(const Matrix& estimate, Eigen::Index k)
{
    detail::require(k >= 1 && k <= estimate.cols(),
                    "k = " + std::to_string(k) + " must lie in [1, " + std::to_string(estimate.cols()) + "]");
    Matrix mask = Matrix::Zero(estimate.rows(), estimate.cols());
    std::vector<Eigen::Index> order(static_cast<std::size_t>(estimate.cols()));
    for (Eigen::Index i = 0; i < estimate.rows(); ++i) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return estimate(i, a) > estimate(i, b); });
        for (Eigen::Index r = 0; r < k; ++r) {
            mask(i, order[static_cast<std::size_t>(r)]) = 1.0;
        }
    }
    return mask;
}

// <T, top_K(T_hat)> / C_s. All-zero truth rows still count in the denominator.
inline double top_k_accuracy(const Correspondence& truth, const Matrix& estimate, Eigen::Index k)
{
    detail::check_same_shape(truth.matrix(), estimate);
    return truth.matrix().cwiseProduct(top_k_mask(estimate, k)).sum() / static_cast<double>(truth.rows());
}

inline double cosine_similarity(const Correspondence& truth, const Matrix& estimate)
{
    detail::check_same_shape(truth.matrix(), estimate);
    const double norm_truth = truth.matrix().norm();
    const double norm_estimate = estimate.norm();
    detail::require(norm_truth > 0.0 && norm_estimate > 0.0, "cosine similarity of an all-zero matrix");
    return truth.matrix().cwiseProduct(estimate).sum() / (norm_truth * norm_estimate);
}

// -sum T log T in nats, 0 log 0 = 0.
inline double plan_entropy(const Matrix& estimate)
{
    detail::require((estimate.array() >= 0.0).all(), "entropy needs nonnegative entries");
    double h = 0.0;
    for (Eigen::Index j = 0; j < estimate.cols(); ++j) {
        for (Eigen::Index i = 0; i < estimate.rows(); ++i) {
            const double t = estimate(i, j);
            if (t > 0.0) {
                h -= t * std::log(t);
            }
        }
    }
    return h;
}

}  // namespace hpalign
