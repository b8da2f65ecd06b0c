#pragma once

// Sobol points with a random digital shift: each coordinate's 64-bit integer
// is XORed with a seeded mask, which keeps the net structure.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/sobol.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace bartgp {

/// n points in [0, 1)^dim, one per row.
inline Eigen::MatrixXd shifted_sobol(std::size_t n, std::size_t dim, std::uint64_t seed) {
    detail::require(dim >= 1, "shifted_sobol: need dim >= 1");
    boost::random::sobol engine(dim);
    Stream masks(seed, 0x5b01);
    std::vector<std::uint64_t> shift(dim);
    for (auto& s : shift) s = masks();
    Eigen::MatrixXd P(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            const std::uint64_t v = static_cast<std::uint64_t>(engine()) ^ shift[j];
            P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(v >> 11) * 0x1.0p-53;
        }
    return P;
}

}  // namespace bartgp
