#pragma once

#include <cmath>
#include <vector>

#include "error.hpp"

namespace bartgp {

/// Digamma function for x > 0.
///
/// Shifts the argument up to x >= 10 with psi(x) = psi(x + 1) - 1/x, then
/// applies the asymptotic series truncated after the x^-12 term. Absolute
/// error is below 1e-14 on [1, inf).
inline double digamma(double x) {
    if (!(x > 0) || !std::isfinite(x)) throw DomainError("digamma: argument must be finite and > 0");
    double shift = 0.0;
    while (x < 10.0) {
        shift -= 1.0 / x;
        x += 1.0;
    }
    const double inv2 = 1.0 / (x * x);
    // Bernoulli coefficients B_2k / (2k): 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760
    const double series =
        inv2 * (1.0 / 12 -
                inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * 691.0 / 32760)))));
    return shift + std::log(x) - 0.5 / x - series;
}

/// Table of psi(1), psi(2), ..., psi(n_max); index j holds psi(j).
/// Entry 0 is unused and left at NaN.
inline std::vector<double> digamma_table(int n_max) {
    std::vector<double> t(static_cast<std::size_t>(n_max) + 1, std::nan(""));
    for (int j = 1; j <= n_max; ++j) t[static_cast<std::size_t>(j)] = digamma(static_cast<double>(j));
    return t;
}

}  // namespace bartgp
