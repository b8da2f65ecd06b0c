#pragma once

// Fuzzed checks of the qualitative kernel properties and of the bound
// structure, shared by the unit suite and the acceptance binary. Each check
// returns counts of violations instead of asserting.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "bartgp/kernel.hpp"
#include "test_support.hpp"

namespace bartgp::testing {

struct KernelVariant {
    std::string name;
    int max_d = 0;            // largest start depth supported
    int max_per_axis = 6;     // cutpoints per axis in fuzzed counts
    std::size_t max_p = 3;
    bool white_noise = true;  // no leaf deeper than the data can reach
    std::function<double(const SplitCounts&, const AxisWeights&, const DepthSchedule&, int)> k;
};

inline std::vector<KernelVariant> property_variants() {
    return {
        {"exact", 2, 3, 2, true,
         [](const SplitCounts& c, const AxisWeights& w, const DepthSchedule& s, int d) { return exact_corr(c, w, s, d); }},
        {"truncated_lower", 2, 6, 3, true,
         [](const SplitCounts& c, const AxisWeights& w, const DepthSchedule& s, int d) {
             return fast_truncated_corr(c, w, s, d, d + 3, 0.0);
         }},
        {"truncated_upper", 2, 6, 3, false,
         [](const SplitCounts& c, const AxisWeights& w, const DepthSchedule& s, int d) {
             return fast_truncated_corr(c, w, s, d, d + 3, 1.0);
         }},
        {"pseudo_recursive", 1, 6, 3, false,
         [](const SplitCounts& c, const AxisWeights& w, const DepthSchedule& s, int d) {
             return fast_pseudo_recursive_corr(c, w, s, d, TruncationSpec::periodic(2, 3, 1.0));
         }},
        {"reference", 0, 8, 10, false,
         [](const SplitCounts& c, const AxisWeights& w, const DepthSchedule& s, int) { return reference_corr(c, w, s); }},
    };
}

struct Tally {
    int checked = 0;
    int violations = 0;
    double worst = 0;  // largest violation magnitude
    std::string example;

    void record(bool ok, double magnitude, const std::string& what) {
        ++checked;
        if (ok) return;
        ++violations;
        if (magnitude >= worst) {
            worst = magnitude;
            example = what;
        }
    }
};

/// Property number -> tally, for one variant.
using PropertyReport = std::map<int, Tally>;

inline std::string describe(const SplitCounts& c, const DepthSchedule& s, int d) {
    std::string out = "alpha=" + std::to_string(s.alpha) + " beta=" + std::to_string(s.beta) + " d=" + std::to_string(d) + " counts";
    for (std::size_t i = 0; i < c.dim(); ++i)
        out += " (" + std::to_string(c.below[i]) + "," + std::to_string(c.between[i]) + "," + std::to_string(c.above[i]) + ")";
    return out;
}

inline PropertyReport check_properties(const KernelVariant& v, int cases, std::uint64_t seed) {
    constexpr double eq_tol = 1e-12, slack = 1e-12;
    std::mt19937_64 rng(seed);
    PropertyReport rep;
    std::uniform_int_distribution<std::size_t> pdist(1, v.max_p);
    std::uniform_int_distribution<int> ddist(0, v.max_d), bump(1, 2);
    for (int c = 0; c < cases; ++c) {
        const std::size_t p = pdist(rng);
        const int d = ddist(rng);
        auto counts = random_counts(rng, p, v.max_per_axis, false);
        const auto w = random_weights(rng, p);
        DepthSchedule s = random_schedule(rng);
        s.alpha = std::min(s.alpha, 0.99);  // keeps P_{d+1} < 1
        const double Pd = s.prob(d);
        const double k = v.k(counts, w, s, d);
        const std::string tag = describe(counts, s, d);

        // 1: no cutpoint between the points
        auto inside = counts;
        for (std::size_t i = 0; i < p; ++i) {
            inside.below[i] += inside.between[i];
            inside.between[i] = 0;
        }
        const double k1 = v.k(inside, w, s, d);
        rep[1].record(std::abs(k1 - 1) <= eq_tol, std::abs(k1 - 1), tag);

        // 2: every cutpoint between the points
        SplitCounts corner(std::vector<int>(p, 0), std::vector<int>(p), std::vector<int>(p, 0));
        for (std::size_t i = 0; i < p; ++i) corner.between[i] = counts.total(i);
        const double k2 = v.k(corner, w, s, d);
        rep[2].record(std::abs(k2 - (1 - Pd)) <= eq_tol, std::abs(k2 - (1 - Pd)), tag);

        // 3: range
        rep[3].record(k >= 1 - Pd - slack && k <= 1 + slack, std::max(1 - Pd - k, k - 1), tag);

        // 4: k = 1 only without cutpoints in between
        if (counts.separated()) rep[4].record(k < 1, k - 1, tag);

        // 5: k = 1 - P_d only at the corner
        bool at_corner = true;
        for (std::size_t i = 0; i < p; ++i) at_corner = at_corner && counts.below[i] == 0 && counts.above[i] == 0;
        if (!at_corner) rep[5].record(k > 1 - Pd, 1 - Pd - k, tag);

        // 6: more cutpoints outside the pair never lowers k
        const auto axis = std::uniform_int_distribution<std::size_t>(0, p - 1)(rng);
        auto outer = counts;
        (rng() & 1 ? outer.below : outer.above)[axis] += bump(rng);
        const double k6 = v.k(outer, w, s, d);
        rep[6].record(k6 >= k - slack, k - k6, tag);

        // 7: more cutpoints between the pair never raises k
        auto wider = counts;
        wider.between[axis] += bump(rng);
        const double k7 = v.k(wider, w, s, d);
        rep[7].record(k7 <= k + slack, k7 - k, tag);

        // 8: no interactions when the next level cannot split
        const auto flat = s.with_override(d + 1, 0.0);
        double W = 0, frac = 0;
        for (std::size_t i = 0; i < p; ++i) {
            W += w.w[i];
            frac += w.w[i] * counts.between[i] / static_cast<double>(counts.total(i));
        }
        const double k8 = v.k(counts, w, flat, d), want8 = 1 - flat.prob(d) * frac / W;
        rep[8].record(std::abs(k8 - want8) <= eq_tol, std::abs(k8 - want8), tag);

        // 9: white noise when every deeper level splits for sure
        if (v.white_noise) {
            const auto white = DepthSchedule(1.0, 0.0).with_override(d, Pd);
            const double k9 = v.k(counts, w, white, d);
            const double want9 = counts.separated() ? 1 - Pd : 1.0;
            rep[9].record(std::abs(k9 - want9) <= eq_tol, std::abs(k9 - want9), tag);
        }
    }
    return rep;
}

/// Bound-structure checks: 1 nesting across D, 2 gamma affinity, 3 ordering
/// of the pseudo-recursive upper bounds in r, 4 the root-split intercept identity.
inline PropertyReport check_bound_structure(int cases, std::uint64_t seed) {
    constexpr double tol = 1e-12;
    std::mt19937_64 rng(seed);
    PropertyReport rep;
    std::uniform_int_distribution<std::size_t> pdist(1, 3);
    std::uniform_real_distribution<double> g(0.0, 1.0);
    for (int c = 0; c < cases; ++c) {
        const std::size_t p = pdist(rng);
        const auto counts = random_counts(rng, p, 6, false);
        const auto w = random_weights(rng, p);
        const auto s = random_schedule(rng);
        const std::string tag = describe(counts, s, 0);

        double lo_prev = -1, up_prev = 2;
        for (int D = 1; D <= 5; ++D) {
            const double lo = fast_truncated_corr(counts, w, s, 0, D, 0.0);
            const double up = fast_truncated_corr(counts, w, s, 0, D, 1.0);
            const double bad = std::max({lo_prev - lo, up - up_prev, lo - up});
            rep[1].record(bad <= tol, bad, tag + " D=" + std::to_string(D));
            lo_prev = lo;
            up_prev = up;

            const double gamma = g(rng);
            const double mid = fast_truncated_corr(counts, w, s, 0, D, gamma);
            const double err = std::abs(mid - ((1 - gamma) * lo + gamma * up));
            rep[2].record(err <= tol, err, tag + " D=" + std::to_string(D));
        }

        double prev = fast_truncated_corr(counts, w, s, 0, 2, 1.0);
        for (int r = 1; r <= 5; ++r) {
            const double up = fast_pseudo_recursive_corr(counts, w, s, 0, TruncationSpec::periodic(2, r, 1.0));
            rep[3].record(up <= prev + tol, up - prev, tag + " r=" + std::to_string(r));
            prev = up;
        }

        const double plain = fast_truncated_corr(counts, w, s, 0, 2, 1.0);
        const double rooted = fast_truncated_corr(counts, w, s.with_root_split(), 0, 2, 1.0);
        const double err = std::abs(plain - (1 - s.alpha + s.alpha * rooted));
        rep[4].record(err <= tol, err, tag);
    }
    return rep;
}

}  // namespace bartgp::testing
