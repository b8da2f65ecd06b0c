#pragma once

// Simple stationary kernels to compare against the BART correlation.

#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <variant>

#include "error.hpp"

namespace bartgp {

/// exp(-eta |x - x'|_1)
struct LaplaceKernel {
    double eta = 1.0;
};

/// Laplace kernel with its minimum over the unit cube subtracted, then
/// rescaled so that k = 1 at coincidence and k = 1 - alpha at opposite corners.
struct ShiftedLaplaceKernel {
    double eta = 1.0;
    double alpha = 0.95;
};

/// 1 - alpha + alpha (1 - |x - x'|_1 / p)^q. Positive semi-definiteness is
/// proven only for integer q.
struct PowerKernel {
    double q = 1.0;
    double alpha = 0.95;
};

using ComparisonKernel = std::variant<LaplaceKernel, ShiftedLaplaceKernel, PowerKernel>;

inline bool psd_proven(const ComparisonKernel& k) {
    if (const auto* pk = std::get_if<PowerKernel>(&k)) return pk->q == std::floor(pk->q);
    return true;
}

inline std::string kernel_name(const ComparisonKernel& k) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, LaplaceKernel>) return "laplace";
            else if constexpr (std::is_same_v<T, ShiftedLaplaceKernel>) return "shifted_laplace";
            else return "power";
        },
        k);
}

inline double comparison_kernel(std::span<const double> x, std::span<const double> xp, const ComparisonKernel& kind) {
    detail::require(x.size() == xp.size(), "comparison_kernel: dimension mismatch");
    detail::require(!x.empty(), "comparison_kernel: need p >= 1");
    const bool unit_cube = !std::holds_alternative<LaplaceKernel>(kind);
    double l1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        detail::require(std::isfinite(x[i]) && std::isfinite(xp[i]), "comparison_kernel: non-finite coordinate");
        if (unit_cube)
            detail::require(x[i] >= 0 && x[i] <= 1 && xp[i] >= 0 && xp[i] <= 1,
                            "comparison_kernel: shifted kernels need points in [0, 1]^p");
        l1 += std::abs(x[i] - xp[i]);
    }
    const double p = static_cast<double>(x.size());
    return std::visit(
        [&](const auto& k) -> double {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, LaplaceKernel>) {
                detail::require(k.eta > 0, "laplace: eta must be > 0");
                return std::exp(-k.eta * l1);
            } else if constexpr (std::is_same_v<T, ShiftedLaplaceKernel>) {
                detail::require(k.eta > 0, "shifted_laplace: eta must be > 0");
                detail::require(k.alpha > 0 && k.alpha <= 1, "shifted_laplace: alpha must be in (0, 1]");
                const double ea = k.eta * k.alpha;
                // alpha / (1 - e^{-ea}) * (e^{-ea l1 / p} - e^{-ea}), written with expm1 for small ea
                const double scale = k.alpha / -std::expm1(-ea);
                const double shifted = std::exp(-ea) * std::expm1(ea * (1.0 - l1 / p));
                return 1.0 - k.alpha + scale * shifted;
            } else {
                detail::require(k.q >= 1, "power: q must be >= 1");
                detail::require(k.alpha >= 0 && k.alpha <= 1, "power: alpha must be in [0, 1]");
                return 1.0 - k.alpha + k.alpha * std::pow(1.0 - l1 / p, k.q);
            }
        },
        kind);
}

}  // namespace bartgp
