#pragma once

// Gaussian-process regression with the BART kernel: conditioning, the
// posterior of the noise variance, pathwise posterior samples, predictive
// metrics and MAP tuning of the hyperparameters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/minima.hpp>

#include "error.hpp"
#include "grid.hpp"
#include "kmatrix.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace bartgp {

/// lambda nu / sigma^2 ~ chi^2_nu.
struct NoisePrior {
    double nu = 3.0;
    double lambda = 1.0;
    double q = 0.9;

    void validate() const {
        detail::require(nu > 0 && std::isfinite(nu), "noise prior: nu must be > 0");
        detail::require(lambda > 0 && std::isfinite(lambda), "noise prior: lambda must be > 0");
        detail::require(q > 0 && q < 1, "noise prior: q must be in (0, 1)");
    }

    /// log density of sigma^2 (an inverse gamma with shape nu/2, scale nu lambda/2).
    [[nodiscard]] double log_density(double sigma2) const {
        const double a = nu / 2, b = nu * lambda / 2;
        return a * std::log(b) - std::lgamma(a) - (a + 1) * std::log(sigma2) - b / sigma2;
    }

    /// sigma^2 at prior cumulative probability u.
    [[nodiscard]] double quantile(double u) const {
        const boost::math::chi_squared_distribution<double> chi(nu);
        return nu * lambda / boost::math::quantile(boost::math::complement(chi, u));
    }

    /// Prior standard deviation of log sigma^2.
    [[nodiscard]] double log_sd() const { return std::sqrt(boost::math::trigamma(nu / 2)); }
};

struct HyperParams {
    double alpha = 0.95;
    double beta = 2.0;
    double k = 2.0;
    double log_sigma2 = 0.0;

    void validate() const {
        detail::require(alpha > 0 && alpha <= 1, "hyperparameters: alpha must be in (0, 1]");
        detail::require(beta > 0 && std::isfinite(beta), "hyperparameters: beta must be > 0");
        detail::require(k > 0 && std::isfinite(k), "hyperparameters: k must be > 0");
        detail::require(std::isfinite(log_sigma2), "hyperparameters: log sigma^2 must be finite");
    }
};

/// C = O diag(D) O^T with negative eigenvalues clamped to 0.
struct EigenCache {
    Eigen::MatrixXd O;
    Eigen::VectorXd D;

    EigenCache() = default;
    explicit EigenCache(const Eigen::MatrixXd& C) {
        detail::require(C.rows() == C.cols(), "EigenCache: matrix must be square");
        if (C.rows() == 0) return;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
        if (es.info() != Eigen::Success) throw NumericalError("EigenCache: eigendecomposition failed");
        O = es.eigenvectors();
        D = es.eigenvalues().cwiseMax(0.0);
    }

    [[nodiscard]] Eigen::Index size() const { return D.size(); }
    [[nodiscard]] Eigen::MatrixXd reconstruct() const { return O * D.asDiagonal() * O.transpose(); }
};

struct Conditioned {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Posterior of f(x*) given exact observations y = f(x), using a
/// pseudo-inverse of Sxx (eigenvalues below 1e-10 lambda_max dropped).
inline Conditioned condition(const Eigen::VectorXd& mean_train, const Eigen::VectorXd& mean_test,
                             const Eigen::MatrixXd& Sxx, const Eigen::MatrixXd& Sxs, const Eigen::MatrixXd& Sss,
                             const Eigen::VectorXd& y) {
    const Eigen::Index n = y.size(), m = mean_test.size();
    detail::require(mean_train.size() == n && Sxx.rows() == n && Sxx.cols() == n, "condition: training block sizes differ");
    detail::require(Sxs.rows() == n && Sxs.cols() == m && Sss.rows() == m && Sss.cols() == m,
                    "condition: test block sizes differ");
    if (n == 0) return {mean_test, Sss};
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Sxx);
    if (es.info() != Eigen::Success) throw NumericalError("condition: eigendecomposition failed");
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double cut = 1e-10 * std::max(lam.maxCoeff(), 0.0);
    Eigen::VectorXd inv(n);
    for (Eigen::Index i = 0; i < n; ++i) inv(i) = lam(i) > cut ? 1.0 / lam(i) : 0.0;
    const Eigen::MatrixXd A = Sxs.transpose() * es.eigenvectors();  // m x n
    const Eigen::VectorXd r = es.eigenvectors().transpose() * (y - mean_train);
    Conditioned c;
    c.mean = mean_test + A * inv.cwiseProduct(r);
    c.cov = Sss - A * inv.asDiagonal() * A.transpose();
    return c;
}

/// Log posterior of t = log sigma^2 up to a constant: Normal likelihood of y
/// with covariance C + sigma^2 I, the prior of sigma^2, and the Jacobian e^t.
/// O(n) per evaluation after construction.
class NoisePosterior {
public:
    NoisePosterior(const Eigen::VectorXd& y, const EigenCache& eig, const NoisePrior& prior, double prior_mean)
        : d_(eig.D), prior_(prior) {
        detail::require(eig.size() == y.size(), "noise posterior: cache and data sizes differ");
        prior.validate();
        const Eigen::VectorXd r = eig.O.transpose() * (y.array() - prior_mean).matrix();
        r2_ = r.array().square();
        scale_ = std::max(r2_.sum() / std::max<Eigen::Index>(1, y.size()), 1e-300);
    }

    [[nodiscard]] double log_likelihood(double sigma2) const {
        const double n = static_cast<double>(d_.size());
        const Eigen::ArrayXd v = d_.array() + sigma2;
        return -0.5 * (n * std::log(2 * std::numbers::pi) + v.log().sum() + (r2_ / v).sum());
    }

    double operator()(double t) const {
        const double s2 = std::exp(t);
        if (!(s2 > 0) || !std::isfinite(s2)) return -std::numeric_limits<double>::infinity();
        return log_likelihood(s2) + prior_.log_density(s2) + t;
    }

    [[nodiscard]] const NoisePrior& prior() const { return prior_; }
    /// Typical squared residual; a starting scale for searches.
    [[nodiscard]] double residual_scale() const { return scale_; }

private:
    Eigen::VectorXd d_;
    Eigen::ArrayXd r2_;
    NoisePrior prior_;
    double scale_ = 1;
};

inline double noise_logpost(double log_sigma2, const Eigen::VectorXd& y, const EigenCache& eig, const NoisePrior& prior,
                            double prior_mean) {
    return NoisePosterior(y, eig, prior, prior_mean)(log_sigma2);
}

struct NoiseDraws {
    std::vector<double> sigma2;
    double acceptance = 0;
    double mode = 0;  // in log sigma^2
    double lo = 0, hi = 0;  // search bracket in log sigma^2
};

namespace detail {

/// Maximizes f over sorted candidate points, then refines with Brent between
/// the neighbours of the best candidate.
template <class F>
std::pair<double, double> maximize_on(F&& f, const std::vector<double>& pts) {
    std::size_t best_i = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double v = f(pts[i]);
        if (v > best) {
            best = v;
            best_i = i;
        }
    }
    const double a = pts[best_i > 0 ? best_i - 1 : 0], b = pts[std::min(best_i + 1, pts.size() - 1)];
    if (b > a) {
        const auto r = boost::math::tools::brent_find_minima([&](double x) { return -f(x); }, a, b, 50);
        if (-r.second > best) return {r.first, -r.second};
    }
    return {pts[best_i], best};
}

inline std::vector<double> uniform_points(double lo, double hi, int n) {
    std::vector<double> p(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) p[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / n;
    return p;
}

/// Points from `from` towards `to`, cubically denser near `from`.
inline std::vector<double> graded_points(double from, double to, int n) {
    std::vector<double> p;
    for (int i = 1; i <= n; ++i) {
        const double s = static_cast<double>(i) / n;
        p.push_back(from + (to - from) * s * s * s);
    }
    if (to < from) std::reverse(p.begin(), p.end());
    return p;
}

}  // namespace detail

/// Exact draws of sigma^2 by the ratio of uniforms on t = log sigma^2,
/// centred at the mode. The bounding box comes from numerical maximization
/// inside mode +- 40 prior sd; mass escaping that range is an error.
inline NoiseDraws sample_noise_posterior(const NoisePosterior& post, int n_draws, std::uint64_t seed,
                                         long max_tries_per_draw = 10'000) {
    detail::require(n_draws >= 1, "sample_noise_posterior: need n_draws >= 1");
    const double sd = post.prior().log_sd();
    const double span = 40 * sd;

    // locate the mode on a wide window around the data and prior scales
    const double c1 = std::log(post.residual_scale()), c2 = std::log(post.prior().lambda);
    const double wlo = std::min(c1, c2) - span, whi = std::max(c1, c2) + span;
    const auto [mode, lmax] = detail::maximize_on(post, detail::uniform_points(wlo, whi, 4000));
    if (!std::isfinite(lmax)) throw NumericalError("sample_noise_posterior: log posterior is not finite anywhere in the search window");
    NoiseDraws out;
    out.mode = mode;
    out.lo = mode - span;
    out.hi = mode + span;
    const double edge = std::max(post(out.lo), post(out.hi)) - lmax;
    if (edge > -30)
        throw NumericalError("sample_noise_posterior: posterior mass escapes the bracket [" + std::to_string(out.lo) + ", " +
                             std::to_string(out.hi) + "] (edge log density " + std::to_string(edge) + " relative to mode)");

    const auto rel = [&](double t) { return post(t) - lmax; };
    const double g_hi =
        detail::maximize_on([&](double t) { return t <= mode ? -1e300 : std::log(t - mode) + rel(t) / 2; },
                            detail::graded_points(mode, out.hi, 2000))
            .second;
    const double g_lo =
        detail::maximize_on([&](double t) { return t >= mode ? -1e300 : std::log(mode - t) + rel(t) / 2; },
                            detail::graded_points(mode, out.lo, 2000))
            .second;
    // a slightly larger box keeps the method exact if the maxima are a bit off
    const double v_max = 1.01 * std::exp(g_hi), v_min = -1.01 * std::exp(g_lo);
    const double u_max = 1.01;

    Stream rng(seed, 0x5167);
    long tries = 0;
    out.sigma2.reserve(static_cast<std::size_t>(n_draws));
    while (static_cast<int>(out.sigma2.size()) < n_draws) {
        if (++tries > max_tries_per_draw * static_cast<long>(n_draws))
            throw NumericalError("sample_noise_posterior: acceptance rate collapsed");
        const double u = u_max * (1.0 - rng.uniform());
        const double v = v_min + (v_max - v_min) * rng.uniform();
        const double t = mode + v / u;
        if (2 * std::log(u) <= rel(t)) out.sigma2.push_back(std::exp(t));
    }
    out.acceptance = static_cast<double>(n_draws) / static_cast<double>(tries);
    return out;
}

struct PathSamples {
    Eigen::MatrixXd f;            // draws x n_test
    std::vector<double> sigma2;   // noise variance of each draw
};

/// Posterior draws of f at test points by Matheron's rule: a joint prior draw
/// corrected by the observed residual. Both eigendecompositions are computed
/// once and reused for every sigma^2.
inline PathSamples matheron_samples(const Eigen::MatrixXd& joint_cov, const Eigen::VectorXd& joint_mean,
                                    Eigen::Index n_train, const Eigen::VectorXd& y, const std::vector<double>& sigma2,
                                    int n_per_sigma, std::uint64_t seed) {
    const Eigen::Index N = joint_cov.rows();
    detail::require(joint_cov.cols() == N && joint_mean.size() == N, "matheron_samples: joint sizes differ");
    detail::require(n_train >= 0 && n_train <= N && y.size() == n_train, "matheron_samples: training size mismatch");
    detail::require(n_per_sigma >= 1, "matheron_samples: need n_per_sigma >= 1");
    const Eigen::Index m = N - n_train;

    const EigenCache joint(joint_cov);
    const Eigen::MatrixXd root = joint.O * joint.D.cwiseSqrt().asDiagonal();
    const EigenCache train(joint_cov.topLeftCorner(n_train, n_train));
    const Eigen::MatrixXd cross = joint_cov.bottomLeftCorner(m, n_train) * train.O;  // Sigma_*x U

    PathSamples out;
    out.f.resize(static_cast<Eigen::Index>(sigma2.size()) * n_per_sigma, m);
    std::normal_distribution<double> normal;
    Eigen::Index row = 0;
    for (std::size_t s = 0; s < sigma2.size(); ++s) {
        const double s2 = sigma2[s];
        detail::require(s2 > 0 && std::isfinite(s2), "matheron_samples: sigma^2 must be finite and > 0");
        Stream rng(seed, 0x3a7e, s);
        normal.reset();
        const Eigen::VectorXd inv = (train.D.array() + s2).inverse();
        for (int j = 0; j < n_per_sigma; ++j, ++row) {
            Eigen::VectorXd z(N), eps(n_train);
            for (Eigen::Index i = 0; i < N; ++i) z(i) = normal(rng);
            for (Eigen::Index i = 0; i < n_train; ++i) eps(i) = std::sqrt(s2) * normal(rng);
            const Eigen::VectorXd f = joint_mean + root * z;
            const Eigen::VectorXd resid = y - f.head(n_train) - eps;
            out.f.row(row) = (f.tail(m) + cross * inv.cwiseProduct(train.O.transpose() * resid)).transpose();
            out.sigma2.push_back(s2);
        }
    }
    return out;
}

/// Negative mean log predictive density of y_test, averaging the Normal
/// error density over the draws.
inline double log_loss(const Eigen::MatrixXd& f, const std::vector<double>& sigma2, const Eigen::VectorXd& y_test) {
    const Eigen::Index S = f.rows(), m = f.cols();
    detail::require(S >= 1, "log_loss: need at least one draw");
    detail::require(static_cast<Eigen::Index>(sigma2.size()) == S, "log_loss: one sigma^2 per draw");
    detail::require(y_test.size() == m && m >= 1, "log_loss: test size mismatch");
    std::vector<double> l(static_cast<std::size_t>(S));
    for (Eigen::Index s = 0; s < S; ++s) {
        const double s2 = sigma2[static_cast<std::size_t>(s)];
        const double sq = (y_test.transpose() - f.row(s)).squaredNorm();
        l[static_cast<std::size_t>(s)] = -0.5 * static_cast<double>(m) * std::log(2 * std::numbers::pi * s2) - sq / (2 * s2);
    }
    const double mx = *std::max_element(l.begin(), l.end());
    double acc = 0;
    for (double v : l) acc += std::exp(v - mx);
    return -(mx + std::log(acc) - std::log(static_cast<double>(S))) / static_cast<double>(m);
}

struct OlsLambda {
    double lambda = 0;
    double sigma2_hat = 0;
    bool fallback = false;  // rank-deficient design, var(y) used
    bool floored = false;
};

/// lambda such that P(sigma < sigma_hat_OLS) = q under the prior.
inline OlsLambda set_lambda_from_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double nu, double q) {
    const Eigen::Index n = X.rows(), p = X.cols();
    detail::require(y.size() == n, "set_lambda_from_ols: X and y sizes differ");
    detail::require(nu > 0 && q > 0 && q < 1, "set_lambda_from_ols: need nu > 0 and q in (0, 1)");
    detail::require(n > p + 1, "set_lambda_from_ols: need n > p + 1");
    const double var_y = (y.array() - y.mean()).square().sum() / static_cast<double>(n - 1);
    Eigen::MatrixXd A(n, p + 1);
    A.col(0).setOnes();
    A.rightCols(p) = X;
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    OlsLambda out;
    if (qr.rank() < p + 1) {
        out.fallback = true;
        out.sigma2_hat = var_y;
    } else {
        const Eigen::VectorXd resid = y - A * qr.solve(y);
        out.sigma2_hat = resid.squaredNorm() / static_cast<double>(n - p - 1);
    }
    const boost::math::chi_squared_distribution<double> chi(nu);
    out.lambda = out.sigma2_hat * boost::math::quantile(chi, 1 - q) / nu;
    const double floor = 1e-12 * var_y;
    if (!(out.lambda > floor)) {
        out.lambda = floor > 0 ? floor : 1e-12;
        out.floored = true;
    }
    return out;
}

// --------------------------------------------------------------------------
// MAP tuning in standard-normal coordinates

struct GpData {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    SplitGrid grid;
    AxisWeights weights;
    bool p0_override = false;
};

struct PriorMaps {
    NoisePrior noise;
    bool tune_k = true;

    static double Phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

    /// z -> (alpha, beta, k, sigma^2); alpha ~ Beta(2, 1), beta ~ InvGamma(1, 1),
    /// log k ~ N(log 2, 2^2), sigma^2 from the noise prior.
    [[nodiscard]] HyperParams to_params(const std::array<double, 4>& z) const {
        HyperParams h;
        h.alpha = std::sqrt(Phi(z[0]));
        h.beta = -1.0 / std::log(Phi(z[1]));
        h.k = std::exp(std::log(2.0) + 2.0 * z[2]);
        h.log_sigma2 = std::log(noise.quantile(Phi(z[3])));
        return h;
    }

    [[nodiscard]] std::array<double, 4> to_z(const HyperParams& h) const {
        const boost::math::normal_distribution<double> N01;
        const boost::math::chi_squared_distribution<double> chi(noise.nu);
        const double u_sigma = boost::math::cdf(boost::math::complement(chi, noise.nu * noise.lambda / std::exp(h.log_sigma2)));
        return {boost::math::quantile(N01, h.alpha * h.alpha), boost::math::quantile(N01, std::exp(-1.0 / h.beta)),
                (std::log(h.k) - std::log(2.0)) / 2.0, boost::math::quantile(N01, u_sigma)};
    }
};

struct MapFit {
    HyperParams params;
    std::array<double, 4> z{};
    double objective = 0;
    double init_objective = 0;
    double grad_norm = 0;
    int iterations = 0;
    bool converged = false;
    bool degenerate_outcome = false;
    Eigen::Matrix4d inverse_hessian = Eigen::Matrix4d::Zero();  // in z coordinates
    bool laplace_ok = false;
};

struct FitOptions {
    int max_iter = 200;
    double grad_tol = 1e-3;
    double fd_step = 1e-5;
    double z_bound = 8.0;  // Phi(+-8) is still distinguishable from 0 and 1
};

namespace detail {

class MapObjective {
public:
    MapObjective(const GpData& data, const PriorMaps& maps, const FitOptions& opt)
        : data_(data), maps_(maps), opt_(opt) {
        const auto lm = derive_leaf_moments(data.y, 1.0, 1);
        mean_ = lm.total_mean;
        range_sd_ = std::sqrt(lm.total_variance);  // (max - min)/2; divided by k below
        degenerate_ = lm.degenerate;
        base_.rows = data.X;
        base_.cols = data.X;
        base_.grid = data.grid;
        base_.weights = data.weights;
        base_.p0_override = data.p0_override;
    }

    [[nodiscard]] bool degenerate() const { return degenerate_; }

    [[nodiscard]] KernelMatrixRequest request(const HyperParams& h) const {
        KernelMatrixRequest r = base_;
        r.sched = DepthSchedule(h.alpha, h.beta);
        r.scale = 1.0;
        return r;
    }

    /// Objective (log marginal likelihood + log prior in z) and its z-gradient.
    double value_and_grad(const std::array<double, 4>& z, std::array<double, 4>* grad) const {
        const HyperParams h = maps_.to_params(z);
        const auto req = request(h);
        const Eigen::MatrixXd R = corr_matrix(req);
        const double s = std::pow(range_sd_ / h.k, 2);
        const double s2 = std::exp(h.log_sigma2);
        const Eigen::Index n = R.rows();
        Eigen::MatrixXd K = s * R;
        K.diagonal().array() += s2;
        const Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
        const Eigen::VectorXd r = data_.y.array() - mean_;
        const Eigen::VectorXd a = llt.solve(r);
        const double logdet = 2 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        double value = -0.5 * (static_cast<double>(n) * std::log(2 * std::numbers::pi) + logdet + r.dot(a));
        for (int i = 0; i < 4; ++i)
            if (i != 2 || maps_.tune_k) value -= 0.5 * z[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(i)];
        if (!grad) return value;

        const Eigen::MatrixXd Kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
        const auto trace_term = [&](const Eigen::MatrixXd& G) {
            return 0.5 * (a.dot(G * a) - (Kinv.cwiseProduct(G)).sum());
        };
        const double h_fd = opt_.fd_step;
        // alpha and beta move the kernel; finite differences along z
        const auto dR_alpha = matrix_grad_fd(
            req, [&](KernelMatrixRequest& q, double v) { q.sched.alpha = maps_.to_params({v, z[1], z[2], z[3]}).alpha; }, z[0], h_fd);
        const auto dR_beta = matrix_grad_fd(
            req, [&](KernelMatrixRequest& q, double v) { q.sched.beta = maps_.to_params({z[0], v, z[2], z[3]}).beta; }, z[1], h_fd);
        (*grad)[0] = trace_term(s * dR_alpha) - z[0];
        (*grad)[1] = trace_term(s * dR_beta) - z[1];
        // s = (range/k)^2 with log k = log 2 + 2 z_k: ds/dz_k = -4 s
        (*grad)[2] = maps_.tune_k ? trace_term(-4.0 * s * R) - z[2] : 0.0;
        // sigma^2 = nu lambda / chi2_quantile(1 - Phi(z)): analytic chain rule
        const boost::math::chi_squared_distribution<double> chi(maps_.noise.nu);
        const double u = PriorMaps::Phi(z[3]);
        const double qv = boost::math::quantile(boost::math::complement(chi, u));
        const double phi = std::exp(-0.5 * z[3] * z[3]) / std::sqrt(2 * std::numbers::pi);
        const double ds2 = maps_.noise.nu * maps_.noise.lambda / (qv * qv) / boost::math::pdf(chi, qv) * phi;
        (*grad)[3] = 0.5 * ds2 * (a.squaredNorm() - Kinv.trace()) - z[3];
        return value;
    }

private:
    const GpData& data_;
    const PriorMaps& maps_;
    const FitOptions& opt_;
    KernelMatrixRequest base_;
    double mean_ = 0, range_sd_ = 0;
    bool degenerate_ = false;
};

}  // namespace detail

/// Marginal log-likelihood with a dense Cholesky factorization; the
/// reference path for the eigen-based evaluations.
inline double dense_log_marginal(const Eigen::MatrixXd& C, double sigma2, const Eigen::VectorXd& y, double mean) {
    Eigen::MatrixXd K = C;
    K.diagonal().array() += sigma2;
    const Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) throw NumericalError("dense_log_marginal: matrix not positive definite");
    const Eigen::VectorXd r = y.array() - mean;
    const double logdet = 2 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(y.size()) * std::log(2 * std::numbers::pi) + logdet + r.dot(llt.solve(r)));
}

/// Mode of the hyperparameter posterior by BFGS in standard-normal
/// coordinates, plus a finite-difference inverse Hessian at the mode.
inline MapFit fit_map(const GpData& data, const PriorMaps& maps, const HyperParams& init, const FitOptions& opt = {}) {
    detail::require(data.X.rows() >= 3, "fit_map: need at least 3 observations");
    detail::require(data.y.size() == data.X.rows(), "fit_map: X and y sizes differ");
    maps.noise.validate();
    init.validate();
    const detail::MapObjective obj(data, maps, opt);
    MapFit fit;
    fit.degenerate_outcome = obj.degenerate();

    const auto clamp = [&](std::array<double, 4> z) {
        for (auto& v : z) v = std::clamp(v, -opt.z_bound, opt.z_bound);
        if (!maps.tune_k) z[2] = std::clamp(maps.to_z(init)[2], -opt.z_bound, opt.z_bound);
        return z;
    };
    using Vec = Eigen::Vector4d;
    const auto to_vec = [](const std::array<double, 4>& z) { return Vec(z[0], z[1], z[2], z[3]); };
    const auto to_arr = [](const Vec& v) { return std::array<double, 4>{v(0), v(1), v(2), v(3)}; };
    // gradient restricted to directions that stay inside the box
    const auto projected = [&](const std::array<double, 4>& z, Vec g) {
        for (int i = 0; i < 4; ++i)
            if ((z[static_cast<std::size_t>(i)] >= opt.z_bound && g(i) > 0) || (z[static_cast<std::size_t>(i)] <= -opt.z_bound && g(i) < 0))
                g(i) = 0;
        return g;
    };

    std::array<double, 4> z = clamp(maps.to_z(init));
    std::array<double, 4> ga{};
    double f = obj.value_and_grad(z, &ga);
    if (!std::isfinite(f)) throw NumericalError("fit_map: objective not finite at the initial point");
    fit.init_objective = f;
    Vec g = projected(z, to_vec(ga));
    Eigen::Matrix4d H = Eigen::Matrix4d::Identity();  // inverse Hessian of -f
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        if (g.norm() <= opt.grad_tol) {
            fit.converged = true;
            break;
        }
        Vec dir = H * g;  // ascent direction
        if (dir.dot(g) <= 0) {
            H.setIdentity();
            dir = g;
        }
        double step = 1.0;
        const double max_move = dir.cwiseAbs().maxCoeff();
        if (max_move > 2.0) step = 2.0 / max_move;
        std::array<double, 4> zn{};
        double fn = -std::numeric_limits<double>::infinity();
        std::array<double, 4> gn{};
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
            zn = clamp(to_arr(to_vec(z) + step * dir));
            fn = obj.value_and_grad(zn, &gn);
            if (std::isfinite(fn) && fn >= f + 1e-4 * (to_vec(zn) - to_vec(z)).dot(g)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        const Vec sv = to_vec(zn) - to_vec(z);
        const Vec gnv = projected(zn, to_vec(gn));
        const Vec yv = g - gnv;  // gradient change of -f
        const double sy = sv.dot(yv);
        if (sy > 1e-12) {
            const double rho = 1.0 / sy;
            const Eigen::Matrix4d I = Eigen::Matrix4d::Identity();
            H = (I - rho * sv * yv.transpose()) * H * (I - rho * yv * sv.transpose()) + rho * sv * sv.transpose();
        }
        z = zn;
        f = fn;
        g = gnv;
        if (sv.norm() < 1e-12) break;
    }
    fit.iterations = it;
    fit.z = z;
    fit.params = maps.to_params(z);
    if (!maps.tune_k) fit.params.k = init.k;
    fit.objective = f;
    fit.grad_norm = g.norm();
    if (!fit.converged && fit.grad_norm <= opt.grad_tol) fit.converged = true;

    // Laplace information: central differences of the gradient
    Eigen::Matrix4d Hess;
    const double hh = 1e-4;
    for (int j = 0; j < 4; ++j) {
        auto zp = z, zm = z;
        zp[static_cast<std::size_t>(j)] += hh;
        zm[static_cast<std::size_t>(j)] -= hh;
        std::array<double, 4> gp{}, gm{};
        obj.value_and_grad(zp, &gp);
        obj.value_and_grad(zm, &gm);
        for (int i = 0; i < 4; ++i) Hess(i, j) = -(gp[static_cast<std::size_t>(i)] - gm[static_cast<std::size_t>(i)]) / (2 * hh);
    }
    Hess = 0.5 * (Hess + Hess.transpose()).eval();
    const Eigen::LLT<Eigen::Matrix4d> hl(Hess);
    if (hl.info() == Eigen::Success) {
        fit.inverse_hessian = hl.solve(Eigen::Matrix4d::Identity());
        fit.laplace_ok = true;
    }
    return fit;
}

struct PosteriorSummary {
    Eigen::VectorXd mean;          // E[f(x*) | y], iterated over sigma^2 draws
    Eigen::MatrixXd samples;       // draws x n_test
    std::vector<double> sigma2;    // per draw
    std::vector<double> sigma2_draws;
    double acceptance = 0;
    double rmse = std::numeric_limits<double>::quiet_NaN();
    double log_loss = std::numeric_limits<double>::quiet_NaN();
};

struct PredictOptions {
    int n_sigma_draws = 1000;
    int n_f_per_sigma = 20;
    std::uint64_t seed = 1;
};

/// Posterior predictive summary at X_test for fitted hyperparameters.
inline PosteriorSummary predict(const GpData& data, const Eigen::MatrixXd& X_test, const HyperParams& params,
                                const NoisePrior& noise, const PredictOptions& opt,
                                const std::optional<Eigen::VectorXd>& y_test = std::nullopt) {
    params.validate();
    noise.validate();
    const Eigen::Index n = data.X.rows(), m = X_test.rows();
    detail::require(data.y.size() == n && n >= 1, "predict: training sizes differ");
    detail::require(X_test.cols() == data.X.cols(), "predict: test points have the wrong dimension");
    detail::require(!y_test || y_test->size() == m, "predict: y_test size differs from X_test");
    detail::require(opt.n_sigma_draws >= 1 && opt.n_f_per_sigma >= 0, "predict: bad draw counts");

    const auto lm = derive_leaf_moments(data.y, params.k, 1);
    Eigen::MatrixXd joint_pts(n + m, data.X.cols());
    joint_pts << data.X, X_test;
    KernelMatrixRequest req;
    req.rows = joint_pts;
    req.cols = joint_pts;
    req.grid = data.grid;
    req.weights = data.weights;
    req.sched = DepthSchedule(params.alpha, params.beta);
    req.p0_override = data.p0_override;
    req.scale = lm.total_variance;
    req.mean_offset = lm.total_mean;
    const Eigen::MatrixXd C = cov_matrix(req);

    const EigenCache train(C.topLeftCorner(n, n));
    const NoisePosterior post(data.y, train, noise, lm.total_mean);
    const NoiseDraws draws = sample_noise_posterior(post, opt.n_sigma_draws, opt.seed);

    PosteriorSummary out;
    out.sigma2_draws = draws.sigma2;
    out.acceptance = draws.acceptance;
    const Eigen::MatrixXd cross = C.bottomLeftCorner(m, n) * train.O;
    const Eigen::VectorXd r = train.O.transpose() * (data.y.array() - lm.total_mean).matrix();
    out.mean = Eigen::VectorXd::Zero(m);
    for (double s2 : draws.sigma2) out.mean += cross * (r.array() / (train.D.array() + s2)).matrix();
    out.mean = (out.mean / static_cast<double>(draws.sigma2.size())).array() + lm.total_mean;

    if (opt.n_f_per_sigma > 0) {
        const Eigen::VectorXd joint_mean = Eigen::VectorXd::Constant(n + m, lm.total_mean);
        auto ps = matheron_samples(C, joint_mean, n, data.y, draws.sigma2, opt.n_f_per_sigma, opt.seed);
        out.samples = std::move(ps.f);
        out.sigma2 = std::move(ps.sigma2);
    }
    if (y_test && m > 0) {
        out.rmse = std::sqrt((*y_test - out.mean).squaredNorm() / static_cast<double>(m));
        if (out.samples.rows() > 0) out.log_loss = log_loss(out.samples, out.sigma2, *y_test);
    }
    return out;
}

}  // namespace bartgp
