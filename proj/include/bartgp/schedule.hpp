#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "error.hpp"

namespace bartgp {

/// Probability that a node at depth d is nonterminal: alpha / (1 + d)^beta,
/// unless overridden for that depth.
struct DepthSchedule {
    double alpha = 0.95;
    double beta = 2.0;
    std::map<int, double> overrides;
    /// Substitutes P_0 -> 1, so the kernel spans [0, 1] instead of [1 - alpha, 1].
    bool force_root_split = false;

    DepthSchedule() = default;
    DepthSchedule(double a, double b) : alpha(a), beta(b) { validate(); }

    void validate() const {
        detail::require(alpha >= 0 && alpha <= 1, "DepthSchedule: alpha must be in [0, 1]");
        detail::require(beta >= 0 && !std::isnan(beta), "DepthSchedule: beta must be >= 0");
        for (const auto& [d, v] : overrides) {
            detail::require(d >= 0, "DepthSchedule: override depth must be >= 0");
            detail::require(v >= 0 && v <= 1, "DepthSchedule: override probability must be in [0, 1]");
        }
    }

    [[nodiscard]] double prob(int d) const {
        detail::require(d >= 0, "depth_prob: depth must be >= 0");
        if (d == 0 && force_root_split) return 1.0;
        if (auto it = overrides.find(d); it != overrides.end()) return it->second;
        if (alpha == 0) return 0.0;
        if (std::isinf(beta)) return d == 0 ? alpha : 0.0;
        return alpha / std::pow(1.0 + d, beta);
    }

    /// P_0 .. P_max_depth, for inner loops.
    [[nodiscard]] std::vector<double> table(int max_depth) const {
        std::vector<double> t(static_cast<std::size_t>(max_depth) + 1);
        for (int d = 0; d <= max_depth; ++d) t[static_cast<std::size_t>(d)] = prob(d);
        return t;
    }

    [[nodiscard]] DepthSchedule with_root_split() const {
        DepthSchedule s = *this;
        s.force_root_split = true;
        return s;
    }

    [[nodiscard]] DepthSchedule with_override(int depth, double p) const {
        DepthSchedule s = *this;
        s.overrides[depth] = p;
        s.validate();
        return s;
    }
};

inline double depth_prob(const DepthSchedule& sched, int d) { return sched.prob(d); }

/// Reset depths D_1 < ... < D_r and the leaf interpolation gamma.
struct TruncationSpec {
    std::vector<int> reset_depths;
    double gamma = 1.0;

    TruncationSpec() = default;
    TruncationSpec(std::vector<int> depths, double g) : reset_depths(std::move(depths)), gamma(g) { validate(); }

    /// Shorthand (D0, r) -> (D0, 2 D0, ..., r D0).
    static TruncationSpec periodic(int base_depth, int r, double gamma) {
        detail::require(base_depth >= 1 && r >= 1, "TruncationSpec: need D0 >= 1 and r >= 1");
        std::vector<int> d;
        for (int j = 1; j <= r; ++j) d.push_back(j * base_depth);
        return {std::move(d), gamma};
    }

    void validate() const {
        detail::require(!reset_depths.empty(), "TruncationSpec: need at least one depth");
        detail::require(gamma >= 0 && gamma <= 1, "TruncationSpec: gamma must be in [0, 1]");
        for (std::size_t j = 0; j < reset_depths.size(); ++j) {
            detail::require(reset_depths[j] >= 1, "TruncationSpec: depths must be positive");
            if (j > 0) detail::require(reset_depths[j - 1] < reset_depths[j], "TruncationSpec: depths must increase");
        }
    }

    [[nodiscard]] int max_depth() const { return reset_depths.back(); }
};

}  // namespace bartgp
