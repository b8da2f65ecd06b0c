#pragma once

// Correlation and covariance matrices from the BART kernel.
//
// For the production estimator every one-point quantity (grid ranks, digamma
// tables, per-depth probabilities) is precomputed once, so the pair loop only
// combines small integers and table lookups.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "grid.hpp"
#include "kernel.hpp"
#include "parallel.hpp"
#include "schedule.hpp"

namespace bartgp {

struct KernelMatrixRequest {
    Eigen::MatrixXd rows;  // one point per row
    Eigen::MatrixXd cols;
    SplitGrid grid;
    AxisWeights weights;
    DepthSchedule sched;
    TruncationSpec spec = TruncationSpec::periodic(kReferenceBaseDepth, kReferenceResets, 1.0);
    double scale = 1.0;        // total prior variance m sigma_mu^2
    double mean_offset = 0.0;  // total prior mean m mu_mu
    bool p0_override = false;  // P_0 -> 1

    [[nodiscard]] DepthSchedule effective_schedule() const {
        return p0_override ? sched.with_root_split() : sched;
    }
};

struct LeafMoments {
    double total_mean = 0;      // m mu_mu
    double total_variance = 0;  // m sigma_mu^2
    double leaf_mean = 0;       // mu_mu
    double leaf_sd = 0;         // sigma_mu
    bool degenerate = false;    // y had zero range
};

/// Prior mean and variance of f matched to the range of the training outcome.
inline LeafMoments derive_leaf_moments(const Eigen::VectorXd& y, double k, int m_trees) {
    detail::require(y.size() >= 1, "derive_leaf_moments: empty outcome");
    detail::require(k > 0, "derive_leaf_moments: k must be > 0");
    detail::require(m_trees >= 1, "derive_leaf_moments: need m >= 1");
    const double hi = y.maxCoeff(), lo = y.minCoeff();
    LeafMoments lm;
    lm.total_mean = (hi + lo) / 2;
    const double sd = (hi - lo) / (2 * k);
    lm.total_variance = sd * sd;
    lm.leaf_mean = lm.total_mean / m_trees;
    lm.leaf_sd = sd / std::sqrt(static_cast<double>(m_trees));
    lm.degenerate = hi == lo;
    return lm;
}

namespace detail {

/// Whether `spec` is the closed-form chain (2, 4, ..., 2r).
inline int depth2_chain_length(const TruncationSpec& spec) {
    for (std::size_t j = 0; j < spec.reset_depths.size(); ++j)
        if (spec.reset_depths[j] != 2 * static_cast<int>(j + 1)) return 0;
    return static_cast<int>(spec.reset_depths.size());
}

/// One-point data: grid ranks of every point, restricted to active axes.
class PairTables {
public:
    PairTables(const SplitGrid& grid, const AxisWeights& w) {
        require(w.dim() == grid.dim(), "kernel matrix: weights and grid dimension differ");
        int n_max = 0;
        for (std::size_t i = 0; i < grid.dim(); ++i) {
            if (w.w[i] <= 0 || grid.size(i) == 0) continue;
            axes_.push_back(i);
            n_.push_back(grid.size(i));
            w_.push_back(w.w[i]);
            n_max = std::max(n_max, grid.size(i));
        }
        psi_ = digamma_table(n_max + 1);
    }

    [[nodiscard]] std::vector<int> ranks(const SplitGrid& grid, const Eigen::MatrixXd& X) const {
        const std::size_t q = axes_.size();
        std::vector<int> r(static_cast<std::size_t>(X.rows()) * q);
        for (Eigen::Index a = 0; a < X.rows(); ++a)
            for (std::size_t k = 0; k < q; ++k) {
                const double v = X(a, static_cast<Eigen::Index>(axes_[k]));
                require(std::isfinite(v), "kernel matrix: non-finite coordinate");
                r[static_cast<std::size_t>(a) * q + k] = grid.rank_below(axes_[k], v);
            }
        return r;
    }

    [[nodiscard]] std::size_t dim() const { return axes_.size(); }
    [[nodiscard]] const std::vector<int>& totals() const { return n_; }
    [[nodiscard]] const std::vector<double>& weights() const { return w_; }
    [[nodiscard]] double psi(int k) const { return psi_[static_cast<std::size_t>(k)]; }

private:
    std::vector<std::size_t> axes_;
    std::vector<int> n_;
    std::vector<double> w_;
    std::vector<double> psi_;
};

}  // namespace detail

/// Correlation matrix between the row and column point sets.
inline Eigen::MatrixXd corr_matrix(const KernelMatrixRequest& req) {
    const std::size_t p = req.grid.dim();
    detail::require(static_cast<std::size_t>(req.rows.cols()) == p && static_cast<std::size_t>(req.cols.cols()) == p,
                    "corr_matrix: point dimension differs from grid");
    req.spec.validate();
    const DepthSchedule sched = req.effective_schedule();
    const Eigen::Index nr = req.rows.rows(), nc = req.cols.rows();
    Eigen::MatrixXd K(nr, nc);
    if (nr == 0 || nc == 0) return K;

    const bool symmetric = nr == nc && req.rows == req.cols;
    const detail::PairTables tables(req.grid, req.weights);
    const auto r_rows = tables.ranks(req.grid, req.rows);
    const auto r_cols = symmetric ? r_rows : tables.ranks(req.grid, req.cols);
    const std::size_t q = tables.dim();
    const int chain = detail::depth2_chain_length(req.spec);
    const auto probs = sched.table(req.spec.max_depth());
    const auto& n = tables.totals();
    const auto& w = tables.weights();

    parallel_for(static_cast<std::size_t>(nr), [&](std::size_t begin, std::size_t end) {
        std::vector<int> lo(q), mid(q), hi(q);
        for (std::size_t a = begin; a < end; ++a) {
            const int* ra = r_rows.data() + a * q;
            const Eigen::Index first = symmetric ? static_cast<Eigen::Index>(a) : 0;
            for (Eigen::Index b = first; b < nc; ++b) {
                const int* rb = r_cols.data() + static_cast<std::size_t>(b) * q;
                bool separated = false;
                for (std::size_t k = 0; k < q; ++k) {
                    const int u = std::min(ra[k], rb[k]), v = std::max(ra[k], rb[k]);
                    lo[k] = u;
                    mid[k] = v - u;
                    hi[k] = n[k] - v;
                    separated = separated || mid[k] != 0;
                }
                double value = 1.0;
                if (separated) {
                    if (chain > 0) {
                        const auto t =
                            detail::depth2_terms(lo, mid, hi, w, [&tables](int k) { return tables.psi(k); });
                        value = detail::chain_depth2(t, probs, chain, req.spec.gamma);
                    } else {
                        detail::ReducedPair pair{lo, mid, hi, w, true};
                        value = detail::chained_pseudo(pair, sched, 0, req.spec, kDefaultRecursionBudget);
                    }
                }
                K(static_cast<Eigen::Index>(a), b) = value;
            }
        }
    });
    if (symmetric) K.triangularView<Eigen::StrictlyLower>() = K.transpose().triangularView<Eigen::StrictlyLower>();
    return K;
}

/// Covariance matrix: scale times the correlation matrix.
inline Eigen::MatrixXd cov_matrix(const KernelMatrixRequest& req) {
    detail::require(req.scale >= 0 && std::isfinite(req.scale), "cov_matrix: scale must be finite and >= 0");
    return req.scale * corr_matrix(req);
}

/// Scalar path: the same kernel, one pair at a time through the public API.
inline double scalar_kernel(const KernelMatrixRequest& req, const Eigen::VectorXd& x, const Eigen::VectorXd& xp) {
    const DepthSchedule sched = req.effective_schedule();
    const auto counts = count_splits(req.grid, x, xp);
    if (detail::depth2_chain_length(req.spec) == kReferenceResets && req.spec.gamma == 1.0)
        return reference_corr(counts, req.weights, sched);
    return fast_pseudo_recursive_corr(counts, req.weights, sched, 0, req.spec);
}

/// Central finite difference of the covariance matrix along a coordinate x,
/// where set(req, x) writes the parameters for that coordinate value.
template <class Set>
Eigen::MatrixXd matrix_grad_fd(const KernelMatrixRequest& req, Set&& set, double x, double step) {
    detail::require(step > 0, "matrix_grad_fd: step must be > 0");
    KernelMatrixRequest plus = req, minus = req;
    set(plus, x + step);
    set(minus, x - step);
    return (cov_matrix(plus) - cov_matrix(minus)) / (2 * step);
}

enum class HyperParam { alpha, beta, log_k };

/// Central finite difference of the covariance matrix with respect to alpha,
/// beta (raw scale) or log k (through scale proportional to k^-2).
inline Eigen::MatrixXd matrix_grad_fd(const KernelMatrixRequest& req, HyperParam param, double step = 1e-5) {
    detail::require(step > 0, "matrix_grad_fd: step must be > 0");
    switch (param) {
        case HyperParam::alpha:
            detail::require(req.sched.alpha - step >= 0 && req.sched.alpha + step <= 1,
                            "matrix_grad_fd: alpha too close to the boundary of [0, 1]");
            return matrix_grad_fd(req, [](KernelMatrixRequest& r, double v) { r.sched.alpha = v; }, req.sched.alpha, step);
        case HyperParam::beta:
            detail::require(req.sched.beta - step >= 0, "matrix_grad_fd: beta too close to 0");
            return matrix_grad_fd(req, [](KernelMatrixRequest& r, double v) { r.sched.beta = v; }, req.sched.beta, step);
        case HyperParam::log_k:
            break;
    }
    // d/dlog k of the k^-2 scale: only the scale moves
    return (-2.0 * req.scale) * corr_matrix(req);
}

}  // namespace bartgp
