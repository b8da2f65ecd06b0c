#pragma once

// BART prior correlation: the exact recursion, its truncated and
// pseudo-recursive bounds, the one- and two-level closed forms, and the
// production estimator built from them.
//
// All entry points take the count triples of a point pair. Axes with zero
// weight or without cutpoints are stripped first; they never influence the
// value.

#include <algorithm>
#include <climits>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "digamma.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "schedule.hpp"

namespace bartgp {

inline constexpr long long kDefaultRecursionBudget = 10'000'000;

/// Lower and upper bounds on the correlation and the truncations behind them.
struct BoundPair {
    double lower = 0.0;
    double upper = 1.0;
    TruncationSpec spec_lower;
    TruncationSpec spec_upper;

    [[nodiscard]] double width() const { return upper - lower; }
    [[nodiscard]] double midpoint() const { return 0.5 * (lower + upper); }
};

namespace detail {

/// Count triples restricted to axes with positive weight and n_i > 0.
struct ReducedPair {
    std::vector<int> lo, mid, hi;
    std::vector<double> w;
    bool separated = false;

    [[nodiscard]] std::size_t dim() const noexcept { return w.size(); }
    [[nodiscard]] int max_total() const {
        int m = 0;
        for (std::size_t i = 0; i < dim(); ++i) m = std::max(m, lo[i] + mid[i] + hi[i]);
        return m;
    }
};

inline ReducedPair reduce(const SplitCounts& c, const AxisWeights& w) {
    require(c.dim() == w.dim(), "kernel: counts and weights have different dimension");
    ReducedPair r;
    for (std::size_t i = 0; i < c.dim(); ++i) {
        if (w.w[i] <= 0 || c.total(i) == 0) continue;
        r.lo.push_back(c.below[i]);
        r.mid.push_back(c.between[i]);
        r.hi.push_back(c.above[i]);
        r.w.push_back(w.w[i]);
        if (c.between[i] != 0) r.separated = true;
    }
    return r;
}

/// Lazily extended cache of P_d.
class ProbCache {
public:
    explicit ProbCache(const DepthSchedule& s) : sched_(s) {}
    double operator()(int d) {
        while (static_cast<int>(p_.size()) <= d) p_.push_back(sched_.prob(static_cast<int>(p_.size())));
        return p_[static_cast<std::size_t>(d)];
    }

private:
    const DepthSchedule& sched_;
    std::vector<double> p_;
};

/// Sum of weights over axes that still have cutpoints.
inline double active_weight(std::span<const int> lo, std::span<const int> mid, std::span<const int> hi,
                            std::span<const double> w) {
    double W = 0;
    for (std::size_t i = 0; i < w.size(); ++i)
        if (lo[i] + mid[i] + hi[i] != 0) W += w[i];
    return W;
}

/// The pair-dependent pieces of the two-level closed form:
///   k_{D-2} = 1 - P_{D-2} [1 - ((1 - P_{D-1}) S + P_{D-1} k_D T) / W].
struct Depth2Terms {
    double W = 0;
    double S = 0;
    double T = 0;

    [[nodiscard]] double value(double p_top, double p_mid, double leaf) const {
        return 1.0 - p_top * (1.0 - ((1.0 - p_mid) * S + p_mid * leaf * T) / W);
    }
};

/// `psi(j)` must return digamma(j) for integer j >= 1. Requires a separated pair.
template <class Psi>
Depth2Terms depth2_terms(std::span<const int> lo, std::span<const int> mid, std::span<const int> hi,
                         std::span<const double> w, Psi&& psi) {
    const std::size_t p = w.size();
    Depth2Terms t;
    for (std::size_t i = 0; i < p; ++i) {
        const int n = lo[i] + mid[i] + hi[i];
        if (n == 0) continue;
        t.W += w[i];
        t.S += w[i] * (1.0 - static_cast<double>(mid[i]) / n);
    }
    const double W = t.W;
    for (std::size_t i = 0; i < p; ++i) {
        const int n = lo[i] + mid[i] + hi[i];
        if (n == 0) continue;
        const double wi = w[i];
        const double frac_mid = static_cast<double>(mid[i]) / n;
        // W(n with n-_i = 0) and W(n with n+_i = 0): axis i drops out when nothing is left on it.
        const double w_lo0 = (mid[i] + hi[i] == 0) ? W - wi : W;
        const double w_hi0 = (mid[i] + lo[i] == 0) ? W - wi : W;
        const double upper_part = (mid[i] + hi[i] > 0) ? static_cast<double>(hi[i]) / (mid[i] + hi[i]) : 0.0;
        const double lower_part = (mid[i] + lo[i] > 0) ? static_cast<double>(lo[i]) / (mid[i] + lo[i]) : 0.0;

        double term = (t.S + wi * frac_mid) * (1.0 / w_lo0 + 1.0 / w_hi0 + (lo[i] + hi[i] - 2) / W);
        term += wi / w_lo0 * (upper_part - 1.0);
        term += wi / w_hi0 * (lower_part - 1.0);
        if (mid[i] != 0) {
            term -= wi * mid[i] / W * (2.0 * psi(n) - psi(1 + mid[i] + lo[i]) - psi(1 + mid[i] + hi[i]));
        }
        t.T += wi / n * term;
    }
    return t;
}

inline double weighted_mid_fraction(std::span<const int> lo, std::span<const int> mid, std::span<const int> hi,
                                    std::span<const double> w) {
    double u = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const int n = lo[i] + mid[i] + hi[i];
        if (n != 0) u += w[i] * mid[i] / n;
    }
    return u;
}

/// Literal walk through the truncated recursion, branching on every
/// decision rule. `stop` = INT_MAX gives the exact recursion.
class RecursionWalk {
public:
    RecursionWalk(ReducedPair pair, const DepthSchedule& sched, long long budget)
        : s_(std::move(pair)), prob_(sched), budget_(budget) {}

    double run(int d, int stop, double leaf) {
        if (!s_.separated) return 1.0;
        return walk(d, stop, leaf);
    }

    [[nodiscard]] long long calls() const { return calls_; }

private:
    double walk(int d, int stop, double leaf) {
        if (++calls_ > budget_) throw BudgetExceeded("kernel recursion exceeded its call budget");
        if (d >= stop) return leaf;
        const double W = active_weight(s_.lo, s_.mid, s_.hi, s_.w);
        double acc = 0;
        for (std::size_t i = 0; i < s_.dim(); ++i) {
            const int n = s_.lo[i] + s_.mid[i] + s_.hi[i];
            if (n == 0) continue;
            double branch = 0;
            const int lo = s_.lo[i];
            for (int k = 0; k < lo; ++k) {
                s_.lo[i] = k;
                branch += walk(d + 1, stop, leaf);
            }
            s_.lo[i] = lo;
            const int hi = s_.hi[i];
            for (int k = 0; k < hi; ++k) {
                s_.hi[i] = k;
                branch += walk(d + 1, stop, leaf);
            }
            s_.hi[i] = hi;
            acc += s_.w[i] / n * branch;
        }
        return 1.0 - prob_(d) * (1.0 - acc / W);
    }

    ReducedPair s_;
    ProbCache prob_;
    long long budget_;
    long long calls_ = 0;
};

/// Literal walk of the pseudo-recursion: children entering an intermediate
/// reset depth see the original counts again.
class PseudoRecursionWalk {
public:
    PseudoRecursionWalk(ReducedPair pair, const DepthSchedule& sched, const TruncationSpec& spec, long long budget)
        : s_(pair), orig_(std::move(pair)), prob_(sched), spec_(spec), budget_(budget) {}

    double run(int d) {
        if (!s_.separated) return 1.0;
        return walk(d);
    }

private:
    [[nodiscard]] bool is_reset(int d) const {
        const auto& r = spec_.reset_depths;
        return std::find(r.begin(), r.end() - 1, d) != r.end() - 1;
    }

    double reset_value(int d) {
        if (auto it = reset_cache_.find(d); it != reset_cache_.end()) return it->second;
        ReducedPair saved = s_;
        s_ = orig_;
        const double v = walk(d);
        s_ = std::move(saved);
        reset_cache_[d] = v;
        return v;
    }

    double child(int d) { return is_reset(d) ? reset_value(d) : walk(d); }

    double walk(int d) {
        if (++calls_ > budget_) throw BudgetExceeded("pseudo-recursion exceeded its call budget");
        const int top = spec_.max_depth();
        if (d >= top) return 1.0 - (1.0 - spec_.gamma) * prob_(top);
        const double W = active_weight(s_.lo, s_.mid, s_.hi, s_.w);
        double acc = 0;
        for (std::size_t i = 0; i < s_.dim(); ++i) {
            const int n = s_.lo[i] + s_.mid[i] + s_.hi[i];
            if (n == 0) continue;
            double branch = 0;
            const int lo = s_.lo[i];
            for (int k = 0; k < lo; ++k) {
                s_.lo[i] = k;
                branch += child(d + 1);
            }
            s_.lo[i] = lo;
            const int hi = s_.hi[i];
            for (int k = 0; k < hi; ++k) {
                s_.hi[i] = k;
                branch += child(d + 1);
            }
            s_.hi[i] = hi;
            acc += s_.w[i] / n * branch;
        }
        return 1.0 - prob_(d) * (1.0 - acc / W);
    }

    ReducedPair s_;
    ReducedPair orig_;
    ProbCache prob_;
    const TruncationSpec& spec_;
    long long budget_;
    long long calls_ = 0;
    std::map<int, double> reset_cache_;
};

/// value = a + b * leaf; the truncated recursion is affine in its leaf value.
struct Affine {
    double a = 0;
    double b = 0;
};

/// Evaluates blocks of the truncated recursion of fixed length L, starting
/// at several depths at once (the counts tree is shared; only P_d differs).
/// The last two levels of every block use the closed form, so only L - 2
/// levels branch.
class BlockWalker {
public:
    BlockWalker(ReducedPair pair, const DepthSchedule& sched, long long budget)
        : s_(std::move(pair)), prob_(sched), budget_(budget), psi_(digamma_table(s_.max_total() + 1)) {}

    /// Affine maps (leaf -> block value) for the blocks [start_j, start_j + L].
    std::vector<Affine> run(int L, std::span<const int> starts) {
        require(L >= 0, "BlockWalker: negative block length");
        std::vector<Affine> out(starts.size(), Affine{0.0, 1.0});
        if (L == 0) return out;
        starts_.assign(starts.begin(), starts.end());
        max_depth_ = 0;
        for (int st : starts_) max_depth_ = std::max(max_depth_, st + L);
        p_.clear();
        for (int d = 0; d <= max_depth_; ++d) p_.push_back(prob_(d));
        scratch_.assign(static_cast<std::size_t>(L + 1), std::vector<Affine>(starts.size()));
        length_ = L;
        walk(0, out);
        return out;
    }

    [[nodiscard]] long long calls() const { return calls_; }

private:
    double P(std::size_t lane, int level) const {
        return p_[static_cast<std::size_t>(starts_[lane] + level)];
    }

    void walk(int level, std::vector<Affine>& out) {
        if (++calls_ > budget_) throw BudgetExceeded("kernel block walk exceeded its call budget");
        const std::size_t lanes = starts_.size();
        const int remaining = length_ - level;
        if (remaining == 1) {
            const double W = active_weight(s_.lo, s_.mid, s_.hi, s_.w);
            const double keep = 1.0 - weighted_mid_fraction(s_.lo, s_.mid, s_.hi, s_.w) / W;
            for (std::size_t j = 0; j < lanes; ++j) {
                const double Pd = P(j, level);
                out[j] = {1.0 - Pd, Pd * keep};
            }
            return;
        }
        if (remaining == 2) {
            const Depth2Terms t = depth2_terms(s_.lo, s_.mid, s_.hi, s_.w,
                                               [this](int k) { return psi_[static_cast<std::size_t>(k)]; });
            for (std::size_t j = 0; j < lanes; ++j) {
                const double Pa = P(j, level);
                const double Pb = P(j, level + 1);
                out[j] = {1.0 - Pa + Pa * (1.0 - Pb) * t.S / t.W, Pa * Pb * t.T / t.W};
            }
            return;
        }
        auto& child = scratch_[static_cast<std::size_t>(level + 1)];
        std::vector<Affine> acc(lanes);
        const double W = active_weight(s_.lo, s_.mid, s_.hi, s_.w);
        for (std::size_t i = 0; i < s_.dim(); ++i) {
            const int n = s_.lo[i] + s_.mid[i] + s_.hi[i];
            if (n == 0) continue;
            const double c = s_.w[i] / n;
            const int lo = s_.lo[i];
            for (int k = 0; k < lo; ++k) {
                s_.lo[i] = k;
                walk(level + 1, child);
                for (std::size_t j = 0; j < lanes; ++j) {
                    acc[j].a += c * child[j].a;
                    acc[j].b += c * child[j].b;
                }
            }
            s_.lo[i] = lo;
            const int hi = s_.hi[i];
            for (int k = 0; k < hi; ++k) {
                s_.hi[i] = k;
                walk(level + 1, child);
                for (std::size_t j = 0; j < lanes; ++j) {
                    acc[j].a += c * child[j].a;
                    acc[j].b += c * child[j].b;
                }
            }
            s_.hi[i] = hi;
        }
        for (std::size_t j = 0; j < lanes; ++j) {
            const double Pd = P(j, level);
            out[j] = {1.0 - Pd + Pd * acc[j].a / W, Pd * acc[j].b / W};
        }
    }

    ReducedPair s_;
    ProbCache prob_;
    long long budget_;
    long long calls_ = 0;
    std::vector<double> psi_;
    std::vector<int> starts_;
    std::vector<double> p_;
    std::vector<std::vector<Affine>> scratch_;
    int length_ = 0;
    int max_depth_ = 0;
};

/// Block boundaries d = b_0 < b_1 < ... < b_m = D_r of a pseudo-recursion started at d.
inline std::vector<int> block_bounds(int d, const TruncationSpec& spec) {
    std::vector<int> b{d};
    for (int D : spec.reset_depths)
        if (D > d) b.push_back(D);
    return b;
}

/// Pseudo-recursive value computed block by block: one shared walk per
/// distinct block length, then the affine maps are chained bottom-up.
inline double chained_pseudo(const ReducedPair& pair, const DepthSchedule& sched, int d, const TruncationSpec& spec,
                             long long budget) {
    if (!pair.separated) return 1.0;
    const auto bounds = block_bounds(d, spec);
    std::map<int, std::vector<int>> by_length;  // length -> block indices
    for (std::size_t t = 0; t + 1 < bounds.size(); ++t) by_length[bounds[t + 1] - bounds[t]].push_back(static_cast<int>(t));
    std::vector<Affine> maps(bounds.size() - 1);
    BlockWalker walker(pair, sched, budget);
    for (const auto& [len, blocks] : by_length) {
        std::vector<int> starts;
        for (int t : blocks) starts.push_back(bounds[static_cast<std::size_t>(t)]);
        const auto res = walker.run(len, starts);
        for (std::size_t j = 0; j < blocks.size(); ++j) maps[static_cast<std::size_t>(blocks[j])] = res[j];
    }
    double v = 1.0 - (1.0 - spec.gamma) * sched.prob(spec.max_depth());
    for (auto it = maps.rbegin(); it != maps.rend(); ++it) v = it->a + it->b * v;
    return v;
}

}  // namespace detail

/// Exact correlation k_d by walking every decision rule. Exponential cost:
/// an oracle for tiny instances only. Throws BudgetExceeded past `budget` calls.
inline double exact_corr(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched, int d = 0,
                         long long budget = kDefaultRecursionBudget) {
    detail::require(d >= 0, "exact_corr: depth must be >= 0");
    detail::RecursionWalk walk(detail::reduce(counts, w), sched, budget);
    return walk.run(d, INT_MAX, 1.0);
}

/// Truncated correlation k^D_{d,gamma}, by literal recursion.
inline double truncated_corr(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched, int d,
                             int max_depth, double gamma, long long budget = kDefaultRecursionBudget) {
    detail::require(d >= 0 && d <= max_depth, "truncated_corr: need 0 <= d <= D");
    detail::require(gamma >= 0 && gamma <= 1, "truncated_corr: gamma must be in [0, 1]");
    detail::RecursionWalk walk(detail::reduce(counts, w), sched, budget);
    return walk.run(d, max_depth, 1.0 - (1.0 - gamma) * sched.prob(max_depth));
}

/// Pseudo-recursive truncated correlation k^{(D_1..D_r)}_{d,gamma}, by literal recursion.
inline double pseudo_recursive_corr(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched, int d,
                                    const TruncationSpec& spec, long long budget = kDefaultRecursionBudget) {
    spec.validate();
    detail::require(d >= 0 && d <= spec.max_depth(), "pseudo_recursive_corr: need 0 <= d <= D_r");
    detail::PseudoRecursionWalk walk(detail::reduce(counts, w), sched, spec, budget);
    return walk.run(d);
}

/// k^D_{d,gamma} with the last two levels in closed form; same value as
/// truncated_corr up to rounding, far cheaper for D - d >= 3.
inline double fast_truncated_corr(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched, int d,
                                  int max_depth, double gamma, long long budget = kDefaultRecursionBudget) {
    detail::require(d >= 0 && d <= max_depth, "fast_truncated_corr: need 0 <= d <= D");
    return detail::chained_pseudo(detail::reduce(counts, w), sched, d, TruncationSpec({max_depth}, gamma), budget);
}

/// k^{(D_1..D_r)}_{d,gamma} evaluated block by block with closed-form tails.
inline double fast_pseudo_recursive_corr(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched,
                                         int d, const TruncationSpec& spec,
                                         long long budget = kDefaultRecursionBudget) {
    spec.validate();
    detail::require(d >= 0 && d <= spec.max_depth(), "fast_pseudo_recursive_corr: need 0 <= d <= D_r");
    return detail::chained_pseudo(detail::reduce(counts, w), sched, d, spec, budget);
}

/// One level in closed form: 1 - P_d (1 - k_next (1 - sum_i w_i n0_i / n_i / W)).
/// With k_next = 1 this is the no-interaction upper bound.
inline double depth1_closed(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched, int d,
                            double k_next) {
    const auto r = detail::reduce(counts, w);
    if (!r.separated) return 1.0;
    const double W = detail::active_weight(r.lo, r.mid, r.hi, r.w);
    const double frac = detail::weighted_mid_fraction(r.lo, r.mid, r.hi, r.w) / W;
    return 1.0 - sched.prob(d) * (1.0 - k_next * (1.0 - frac));
}

/// Two levels in closed form with an explicit value for the level below
/// (k_{d+2}); equals the recursion truncated at d + 2 with that leaf.
inline double depth2_closed_leaf(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched, int d,
                                 double leaf) {
    const auto r = detail::reduce(counts, w);
    if (!r.separated) return 1.0;
    const auto t = detail::depth2_terms(r.lo, r.mid, r.hi, r.w, [](int k) { return digamma(k); });
    return t.value(sched.prob(d), sched.prob(d + 1), leaf);
}

/// k^{d+2}_{d,gamma} in closed form.
inline double depth2_closed(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched, int d,
                            double gamma) {
    detail::require(gamma >= 0 && gamma <= 1, "depth2_closed: gamma must be in [0, 1]");
    return depth2_closed_leaf(counts, w, sched, d, 1.0 - (1.0 - gamma) * sched.prob(d + 2));
}

namespace detail {

/// Closed-form chain k^{2,r}_{0,gamma}: the two-level terms depend only on the
/// counts, so they are computed once and reused at every reset level.
inline double chain_depth2(const Depth2Terms& t, std::span<const double> probs, int levels, double gamma) {
    // probs must hold P_0 .. P_{2 levels}
    double v = 1.0 - (1.0 - gamma) * probs[static_cast<std::size_t>(2 * levels)];
    for (int j = levels - 1; j >= 0; --j)
        v = t.value(probs[static_cast<std::size_t>(2 * j)], probs[static_cast<std::size_t>(2 * j + 1)], v);
    return v;
}

}  // namespace detail

inline constexpr int kReferenceBaseDepth = 2;
inline constexpr int kReferenceResets = 5;

/// Production estimator k^{2,5}_{0,1}, without recursion.
inline double reference_corr(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched) {
    const auto r = detail::reduce(counts, w);
    if (!r.separated) return 1.0;
    const auto t = detail::depth2_terms(r.lo, r.mid, r.hi, r.w, [](int k) { return digamma(k); });
    const auto probs = sched.table(2 * kReferenceResets);
    return detail::chain_depth2(t, probs, kReferenceResets, 1.0);
}

/// [k^{D0}_{0,0}, k^{D0,r}_{0,1}]: the lower bound from plain truncation, the
/// upper bound from the pseudo-recursion.
inline BoundPair bound_pair(const SplitCounts& counts, const AxisWeights& w, const DepthSchedule& sched,
                            int base_depth = 2, int resets = 5, long long budget = kDefaultRecursionBudget) {
    BoundPair b;
    b.spec_lower = TruncationSpec({base_depth}, 0.0);
    b.spec_upper = TruncationSpec::periodic(base_depth, resets, 1.0);
    const auto r = detail::reduce(counts, w);
    b.lower = detail::chained_pseudo(r, sched, 0, b.spec_lower, budget);
    b.upper = detail::chained_pseudo(r, sched, 0, b.spec_upper, budget);
    return b;
}

}  // namespace bartgp
