#pragma once

// Splitting grids and the per-axis count triples consumed by the kernel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace bartgp {

/// Per-axis sorted cutpoints. Axis i holds n_i strictly increasing values.
class SplitGrid {
public:
    SplitGrid() = default;

    explicit SplitGrid(std::vector<std::vector<double>> axes) : axes_(std::move(axes)) {
        for (const auto& a : axes_) {
            for (std::size_t j = 0; j < a.size(); ++j) {
                detail::require(std::isfinite(a[j]), "SplitGrid: non-finite cutpoint");
                if (j > 0) detail::require(a[j - 1] < a[j], "SplitGrid: cutpoints must be strictly increasing");
            }
        }
    }

    [[nodiscard]] std::size_t dim() const noexcept { return axes_.size(); }
    [[nodiscard]] int size(std::size_t axis) const { return static_cast<int>(axes_.at(axis).size()); }
    [[nodiscard]] std::span<const double> axis(std::size_t i) const { return axes_.at(i); }
    [[nodiscard]] const std::vector<std::vector<double>>& axes() const noexcept { return axes_; }

    /// Number of cutpoints strictly below v on axis i.
    [[nodiscard]] int rank_below(std::size_t i, double v) const {
        const auto& a = axes_[i];
        return static_cast<int>(std::lower_bound(a.begin(), a.end(), v) - a.begin());
    }

private:
    std::vector<std::vector<double>> axes_;
};

/// Count triples (n-, n0, n+) for a point pair, one entry per axis.
struct SplitCounts {
    std::vector<int> below;
    std::vector<int> between;
    std::vector<int> above;

    SplitCounts() = default;
    SplitCounts(std::vector<int> lo, std::vector<int> mid, std::vector<int> hi)
        : below(std::move(lo)), between(std::move(mid)), above(std::move(hi)) {
        detail::require(below.size() == between.size() && between.size() == above.size(),
                        "SplitCounts: ragged count vectors");
        for (std::size_t i = 0; i < below.size(); ++i)
            detail::require(below[i] >= 0 && between[i] >= 0 && above[i] >= 0, "SplitCounts: negative count");
    }

    [[nodiscard]] std::size_t dim() const noexcept { return between.size(); }
    [[nodiscard]] int total(std::size_t i) const { return below[i] + between[i] + above[i]; }
    [[nodiscard]] bool separated() const {
        return std::any_of(between.begin(), between.end(), [](int v) { return v != 0; });
    }

    friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

/// Unnormalized axis selection weights.
struct AxisWeights {
    std::vector<double> w;

    AxisWeights() = default;
    explicit AxisWeights(std::vector<double> v) : w(std::move(v)) {
        for (double x : w) detail::require(std::isfinite(x) && x >= 0, "AxisWeights: weights must be finite and >= 0");
        detail::require(w.empty() || std::any_of(w.begin(), w.end(), [](double x) { return x > 0; }),
                        "AxisWeights: at least one weight must be positive");
    }

    static AxisWeights uniform(std::size_t p) { return AxisWeights(std::vector<double>(p, 1.0)); }
    [[nodiscard]] std::size_t dim() const noexcept { return w.size(); }
};

struct MidpointGrid {};

struct UniformGrid {
    int count = 100;
    double lo = 0.0;
    double hi = 1.0;
};

using GridStrategy = std::variant<MidpointGrid, UniformGrid>;

/// `count` evenly spaced cutpoints strictly inside (lo, hi).
inline std::vector<double> uniform_cutpoints(const UniformGrid& u) {
    detail::require(u.count >= 1, "uniform grid: count must be >= 1");
    detail::require(std::isfinite(u.lo) && std::isfinite(u.hi) && u.lo < u.hi, "uniform grid: need lo < hi");
    std::vector<double> cuts(static_cast<std::size_t>(u.count));
    for (int j = 0; j < u.count; ++j)
        cuts[static_cast<std::size_t>(j)] = u.lo + (u.hi - u.lo) * (j + 1) / (u.count + 1);
    return cuts;
}

/// Midpoints between consecutive unique sorted values; duplicates collapse.
inline std::vector<double> midpoint_cutpoints(std::vector<double> values) {
    for (double v : values) detail::require(std::isfinite(v), "midpoint grid: non-finite value");
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::vector<double> cuts;
    for (std::size_t j = 0; j + 1 < values.size(); ++j) {
        const double m = values[j] + (values[j + 1] - values[j]) / 2;
        if (cuts.empty() || cuts.back() < m) cuts.push_back(m);
    }
    return cuts;
}

inline SplitGrid build_grid(const Eigen::MatrixXd& X, const GridStrategy& strategy) {
    detail::require(X.rows() >= 1 && X.cols() >= 1, "build_grid: empty matrix");
    detail::require(X.allFinite(), "build_grid: non-finite predictor values");
    std::vector<std::vector<double>> axes;
    axes.reserve(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        if (const auto* u = std::get_if<UniformGrid>(&strategy)) {
            axes.push_back(uniform_cutpoints(*u));
        } else {
            std::vector<double> col(X.col(c).data(), X.col(c).data() + X.rows());
            axes.push_back(midpoint_cutpoints(std::move(col)));
        }
    }
    return SplitGrid(std::move(axes));
}

/// Per-axis counts of cutpoints below, between and above a point pair.
///
/// A split at s sends x_i <= s to the left child, so with lo = min and
/// hi = max of the two coordinates:
///   n-  = #{s < lo},  n0 = #{lo <= s < hi},  n+ = #{s >= hi}.
/// Equal coordinates always give n0 = 0.
inline SplitCounts count_splits(const SplitGrid& grid, std::span<const double> x, std::span<const double> xp) {
    detail::require(x.size() == grid.dim() && xp.size() == grid.dim(), "count_splits: dimension mismatch with grid");
    const std::size_t p = grid.dim();
    std::vector<int> lo(p), mid(p), hi(p);
    for (std::size_t i = 0; i < p; ++i) {
        detail::require(std::isfinite(x[i]) && std::isfinite(xp[i]), "count_splits: non-finite coordinate");
        const int a = grid.rank_below(i, std::min(x[i], xp[i]));
        const int b = grid.rank_below(i, std::max(x[i], xp[i]));
        lo[i] = a;
        mid[i] = b - a;
        hi[i] = grid.size(i) - b;
    }
    return SplitCounts(std::move(lo), std::move(mid), std::move(hi));
}

inline SplitCounts count_splits(const SplitGrid& grid, const Eigen::VectorXd& x, const Eigen::VectorXd& xp) {
    return count_splits(grid, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                        std::span<const double>(xp.data(), static_cast<std::size_t>(xp.size())));
}

}  // namespace bartgp
