#pragma once

// Bounding-interval accuracy study: truncation and pseudo-recursive bounds at
// several depths for quasi-random point pairs, a high-accuracy reference
// value K extrapolated from the depth-3 and depth-5 intervals, and the
// position gamma_K of K inside each interval.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "grid.hpp"
#include "kernel.hpp"
#include "parallel.hpp"
#include "qmc.hpp"
#include "schedule.hpp"

namespace bartgp {

/// Extrapolates the depth-3 and depth-5 intervals (lower = truncation with
/// gamma 0, upper = pseudo-recursion with 5 resets) to zero width.
inline double reference_K(double lb3, double ub35, double lb5, double ub55) {
    constexpr double slack = 1e-12;
    detail::require(lb3 <= ub35 + slack && lb5 <= ub55 + slack, "reference_K: inverted bounds");
    const double d35 = ub35 - lb3, d55 = ub55 - lb5;
    if (!(d35 > d55)) return (lb5 + ub55) / 2;
    return (d35 * lb5 - d55 * lb3) / (d35 - d55);
}

/// Position of K in [lower, upper]; empty when the interval is narrower than 1e-12.
inline std::optional<double> gamma_of_K(double K, double lower, double upper) {
    detail::require(upper >= lower - 1e-12, "gamma_of_K: upper < lower");
    const double width = upper - lower;
    if (width < 1e-12) return std::nullopt;
    return (K - lower) / width;
}

/// First value (in increasing order) whose cumulative weight reaches half the total.
inline double weighted_median(std::vector<std::pair<double, double>> value_weight) {
    detail::require(!value_weight.empty(), "weighted_median: no values");
    std::sort(value_weight.begin(), value_weight.end());
    double total = 0;
    for (const auto& [v, w] : value_weight) {
        detail::require(w >= 0 && std::isfinite(w), "weighted_median: weights must be finite and >= 0");
        total += w;
    }
    detail::require(total > 0, "weighted_median: all weights are zero");
    double cum = 0;
    for (const auto& [v, w] : value_weight) {
        cum += w;
        if (cum >= total / 2) return v;
    }
    return value_weight.back().first;
}

struct AccuracyPoint {
    std::map<int, double> lower_by_depth;               // D0 -> k^{D0}_{0,0}
    std::map<int, double> trunc_upper_by_depth;         // D0 -> k^{D0}_{0,1}
    std::map<std::pair<int, int>, double> upper_by_depth_r;  // (D0, r) -> k^{D0,r}_{0,1}
    double K = 0;
    bool skipped = false;  // budget exceeded
};

struct AccuracyConfig {
    std::vector<double> alphas{0.95};
    std::vector<double> betas{2.0};
    std::vector<int> dims{1, 2, 3, 5, 10};
    std::vector<int> base_depths{2};
    std::vector<int> resets{2, 5};
    int n_pairs = 250;
    int splits_per_axis = 10;
    bool root_split = true;  // P_0 -> 1
    std::uint64_t seed = 1;
    long long pair_budget = 50'000'000;

    void validate() const {
        detail::require(!alphas.empty() && !betas.empty() && !dims.empty() && !base_depths.empty() && !resets.empty(),
                        "accuracy: empty sweep");
        detail::require(n_pairs >= 1, "accuracy: need n_pairs >= 1");
        detail::require(splits_per_axis >= 1, "accuracy: need at least one split per axis");
        for (int p : dims) detail::require(p >= 1, "accuracy: dimensions must be >= 1");
        for (int d : base_depths) detail::require(d >= 1, "accuracy: base depths must be >= 1");
        for (int r : resets) detail::require(r >= 1, "accuracy: resets must be >= 1");
        for (double a : alphas) detail::require(a >= 0 && a <= 1, "accuracy: alpha must be in [0, 1]");
        for (double b : betas) detail::require(b >= 0, "accuracy: beta must be >= 0");
    }
};

struct AccuracyRow {
    double alpha = 0, beta = 0;
    int p = 0, base_depth = 0, resets = 0;
    double gamma_bar = std::numeric_limits<double>::quiet_NaN();  // NaN when no pair had a defined gamma_K
    double max_width = 0;
    double max_error = 0;
    int n_pairs = 0;
    int n_skipped = 0;
    int n_gamma_undefined = 0;
    int nesting_violations = 0;
};

/// All bounds for one pair. One block walk per base depth serves every lane:
/// the plain truncation (lane 0 with leaf 1 - P_D0 or 1) and all reset chains.
inline AccuracyPoint accuracy_point(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched,
                                    const std::set<int>& depths, int max_resets, long long budget) {
    AccuracyPoint pt;
    const auto pair = detail::reduce(counts, w);
    if (!pair.separated) {
        for (int D : depths) {
            pt.lower_by_depth[D] = pt.trunc_upper_by_depth[D] = 1.0;
            for (int r = 1; r <= max_resets; ++r) pt.upper_by_depth_r[{D, r}] = 1.0;
        }
        pt.K = 1.0;
        return pt;
    }
    detail::BlockWalker walker(pair, sched, budget);
    for (int D : depths) {
        std::vector<int> starts;
        for (int j = 0; j < max_resets; ++j) starts.push_back(j * D);
        const auto maps = walker.run(D, starts);
        pt.lower_by_depth[D] = maps[0].a + maps[0].b * (1.0 - sched.prob(D));
        pt.trunc_upper_by_depth[D] = maps[0].a + maps[0].b;
        // upper(D, r): compose maps r-1 .. 0 over the leaf value 1
        for (int r = 1; r <= max_resets; ++r) {
            double v = 1.0;
            for (int j = r - 1; j >= 0; --j) v = maps[static_cast<std::size_t>(j)].a + maps[static_cast<std::size_t>(j)].b * v;
            pt.upper_by_depth_r[{D, r}] = v;
        }
    }
    pt.K = reference_K(pt.lower_by_depth.at(3), pt.upper_by_depth_r.at({3, 5}), pt.lower_by_depth.at(5),
                       pt.upper_by_depth_r.at({5, 5}));
    return pt;
}

inline std::vector<AccuracyRow> run_accuracy_sweep(const AccuracyConfig& cfg) {
    cfg.validate();
    std::set<int> depths{1, 2, 3, 4, 5};
    depths.insert(cfg.base_depths.begin(), cfg.base_depths.end());
    const int max_resets = std::max(5, *std::max_element(cfg.resets.begin(), cfg.resets.end()));

    std::vector<AccuracyRow> rows;
    for (double alpha : cfg.alphas)
        for (double beta : cfg.betas)
            for (int p : cfg.dims) {
                DepthSchedule sched(alpha, beta);
                if (cfg.root_split) sched = sched.with_root_split();
                const auto P = static_cast<std::size_t>(p);
                const SplitGrid grid(std::vector<std::vector<double>>(
                    P, uniform_cutpoints(UniformGrid{cfg.splits_per_axis, 0.0, 1.0})));
                const auto w = AxisWeights::uniform(P);
                const Eigen::MatrixXd pts =
                    shifted_sobol(static_cast<std::size_t>(cfg.n_pairs), 2 * P, cfg.seed + static_cast<std::uint64_t>(p));

                std::vector<AccuracyPoint> points(static_cast<std::size_t>(cfg.n_pairs));
                parallel_for(points.size(), [&](std::size_t b, std::size_t e) {
                    for (std::size_t k = b; k < e; ++k) {
                        const Eigen::VectorXd x = pts.row(static_cast<Eigen::Index>(k)).head(p).transpose();
                        const Eigen::VectorXd xp = pts.row(static_cast<Eigen::Index>(k)).tail(p).transpose();
                        try {
                            points[k] = accuracy_point(count_splits(grid, x, xp), w, sched, depths, max_resets,
                                                       cfg.pair_budget);
                        } catch (const BudgetExceeded&) {
                            points[k].skipped = true;
                        }
                    }
                });

                int nesting = 0;
                for (const auto& pt : points) {
                    if (pt.skipped) continue;
                    for (auto it = depths.begin(); std::next(it) != depths.end(); ++it) {
                        const int D = *it, Dn = *std::next(it);
                        if (pt.lower_by_depth.at(Dn) < pt.lower_by_depth.at(D) - 1e-12 ||
                            pt.trunc_upper_by_depth.at(Dn) > pt.trunc_upper_by_depth.at(D) + 1e-12)
                            ++nesting;
                    }
                }
                for (int D0 : cfg.base_depths)
                    for (int r : cfg.resets) {
                        AccuracyRow row;
                        row.alpha = alpha;
                        row.beta = beta;
                        row.p = p;
                        row.base_depth = D0;
                        row.resets = r;
                        row.n_pairs = cfg.n_pairs;
                        row.nesting_violations = nesting;
                        std::vector<std::pair<double, double>> gw;
                        for (const auto& pt : points) {
                            if (pt.skipped) {
                                ++row.n_skipped;
                                continue;
                            }
                            const double lo = pt.lower_by_depth.at(D0), up = pt.upper_by_depth_r.at({D0, r});
                            row.max_width = std::max(row.max_width, up - lo);
                            const double ub55 = pt.upper_by_depth_r.at({5, 5}), lb5 = pt.lower_by_depth.at(5);
                            row.max_error = std::max({row.max_error, std::abs(ub55 - up), std::abs(up - lb5)});
                            if (const auto g = gamma_of_K(pt.K, lo, up)) gw.emplace_back(*g, up - lo);
                            else ++row.n_gamma_undefined;
                        }
                        if (!gw.empty()) row.gamma_bar = weighted_median(gw);
                        rows.push_back(row);
                    }
            }
    return rows;
}

namespace detail {

/// Shortest decimal that reads back to the same double; NA for NaN.
inline std::string shortest(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

}  // namespace detail

inline void write_accuracy_csv(std::ostream& out, const std::vector<AccuracyRow>& rows) {
    using detail::shortest;
    out << "alpha,beta,p,D0,r,gamma_bar,max_width,max_error,n_pairs,n_skipped,n_gamma_undefined,nesting_violations\n";
    for (const auto& r : rows)
        out << shortest(r.alpha) << ',' << shortest(r.beta) << ',' << r.p << ',' << r.base_depth << ',' << r.resets << ','
            << shortest(r.gamma_bar) << ',' << shortest(r.max_width) << ',' << shortest(r.max_error) << ',' << r.n_pairs
            << ',' << r.n_skipped << ',' << r.n_gamma_undefined << ',' << r.nesting_violations << '\n';
}

}  // namespace bartgp
