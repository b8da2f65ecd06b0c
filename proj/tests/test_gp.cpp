#include <gtest/gtest.h>

#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "bartgp/gp.hpp"
#include "bartgp/treeprior.hpp"
#include "noise_oracle.hpp"

namespace bartgp {
namespace {

Eigen::MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> z;
    Eigen::MatrixXd A(n, n);
    for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = z(rng);
    return A * A.transpose() / static_cast<double>(n);
}

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> z;
    Eigen::VectorXd v(n);
    for (auto& x : v) x = z(rng);
    return v;
}

TEST(NoisePrior, QuantileMatchesDefinition) {
    const NoisePrior p{3.0, 0.7, 0.9};
    const boost::math::chi_squared_distribution<double> chi(3.0);
    for (double u : {0.1, 0.5, 0.9}) {
        // P(sigma^2 <= s) = P(chi2 >= nu lambda / s)
        const double s = p.quantile(u);
        EXPECT_NEAR(boost::math::cdf(boost::math::complement(chi, 3.0 * 0.7 / s)), u, 1e-12);
    }
}

TEST(NoisePrior, DensityIntegratesToOne) {
    const NoisePrior p{3.0, 0.5, 0.9};
    double total = 0;
    const double h = 1e-3;
    for (double t = -30; t < 30; t += h) total += std::exp(p.log_density(std::exp(t)) + t) * h;
    EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(EigenCache, ReconstructsMatrix) {
    std::mt19937_64 rng(1);
    const auto C = random_spd(rng, 30);
    const EigenCache e(C);
    EXPECT_LE((e.reconstruct() - C).cwiseAbs().maxCoeff(), 1e-8 * C.trace() / 30);
    EXPECT_GE(e.D.minCoeff(), 0.0);
}

TEST(Condition, NoTrainingPointsGivesPrior) {
    Eigen::VectorXd mt(2);
    mt << 1, 2;
    Eigen::MatrixXd Sss(2, 2);
    Sss << 1, 0.5, 0.5, 1;
    const auto c = condition(Eigen::VectorXd(0), mt, Eigen::MatrixXd(0, 0), Eigen::MatrixXd(0, 2), Sss, Eigen::VectorXd(0));
    EXPECT_TRUE(c.mean == mt);
    EXPECT_TRUE(c.cov == Sss);
}

TEST(Condition, NoiselessInterpolation) {
    Eigen::MatrixXd S(1, 1);
    S << 2.0;
    Eigen::VectorXd y(1), m0(1);
    y << 0.7;
    m0 << 0.1;
    const auto c = condition(m0, m0, S, S, S, y);
    EXPECT_NEAR(c.mean(0), 0.7, 1e-12);
    EXPECT_NEAR(c.cov(0, 0), 0.0, 1e-8);
}

TEST(Condition, TwoPointHandSolution) {
    // train at x1 with var 1, test at x2 with var 1, correlation rho
    const double rho = 0.6, y = 1.5, mu = 0.2;
    Eigen::MatrixXd Sxx(1, 1), Sxs(1, 1), Sss(1, 1);
    Sxx << 1;
    Sxs << rho;
    Sss << 1;
    Eigen::VectorXd yy(1), m(1);
    yy << y;
    m << mu;
    const auto c = condition(m, m, Sxx, Sxs, Sss, yy);
    EXPECT_NEAR(c.mean(0), mu + rho * (y - mu), 1e-14);
    EXPECT_NEAR(c.cov(0, 0), 1 - rho * rho, 1e-14);
}

TEST(Condition, RankDeficientUsesPseudoInverse) {
    // two identical training points with consistent observations
    Eigen::MatrixXd Sxx(2, 2), Sxs(2, 1), Sss(1, 1);
    Sxx << 1, 1, 1, 1;
    Sxs << 0.5, 0.5;
    Sss << 1;
    Eigen::VectorXd y(2), mx = Eigen::VectorXd::Zero(2), ms = Eigen::VectorXd::Zero(1);
    y << 2, 2;
    const auto c = condition(mx, ms, Sxx, Sxs, Sss, y);
    EXPECT_NEAR(c.mean(0), 1.0, 1e-10);
    EXPECT_NEAR(c.cov(0, 0), 0.75, 1e-10);
}

TEST(Condition, PosteriorVarianceNeverExceedsPrior) {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        const auto J = random_spd(rng, 12);
        const auto c = condition(Eigen::VectorXd::Zero(8), Eigen::VectorXd::Zero(4), J.topLeftCorner(8, 8),
                                 J.topRightCorner(8, 4), J.bottomRightCorner(4, 4), random_vector(rng, 8));
        for (Eigen::Index i = 0; i < 4; ++i) EXPECT_LE(c.cov(i, i), J(8 + i, 8 + i) + 1e-10);
    }
}

TEST(NoiseLogpost, MatchesDensePath) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        const auto C = random_spd(rng, 25);
        const auto y = random_vector(rng, 25);
        const EigenCache e(C);
        const NoisePrior prior{3.0, 0.4, 0.9};
        for (double s2 : {0.01, 0.3, 2.0}) {
            const double t = std::log(s2);
            const double expected = dense_log_marginal(C, s2, y, 0.3) + prior.log_density(s2) + t;
            EXPECT_NEAR(noise_logpost(t, y, e, prior, 0.3), expected, 1e-8);
            EXPECT_EQ(noise_logpost(t, y, e, prior, 0.3), noise_logpost(t, y, e, prior, 0.3));
        }
    }
}

TEST(NoiseLogpost, LogDetIsSumOfShiftedEigenvalues) {
    std::mt19937_64 rng(4);
    const auto C = random_spd(rng, 10);
    const EigenCache e(C);
    const Eigen::VectorXd y = Eigen::VectorXd::Zero(10);
    const NoisePosterior post(y, e, NoisePrior{}, 0.0);
    const double s2 = 0.5;
    const double expected = -0.5 * (10 * std::log(2 * std::numbers::pi) + (e.D.array() + s2).log().sum());
    EXPECT_NEAR(post.log_likelihood(s2), expected, 1e-12);
}

TEST(SampleNoisePosterior, KolmogorovSmirnovAgainstQuadrature) {
    std::mt19937_64 rng(5);
    const auto C = random_spd(rng, 40);
    Eigen::VectorXd y = random_vector(rng, 40) * 0.8;
    const EigenCache e(C);
    const NoisePosterior post(y, e, NoisePrior{3.0, 0.3, 0.9}, 0.0);
    const auto draws = sample_noise_posterior(post, 10000, 17);
    EXPECT_EQ(draws.sigma2.size(), 10000u);
    EXPECT_GT(draws.acceptance, 0.3);
    EXPECT_LT(testing::ks_distance(post, draws.sigma2, draws.mode - 30, draws.mode + 30), 0.02);
    EXPECT_EQ(sample_noise_posterior(post, 50, 17).sigma2, std::vector<double>(draws.sigma2.begin(), draws.sigma2.begin() + 50));
}

TEST(SampleNoisePosterior, PeakedPosteriorRecoversTruth) {
    std::mt19937_64 rng(6);
    const Eigen::Index n = 2000;
    const double true_s2 = 0.25;
    const EigenCache e(Eigen::MatrixXd::Zero(n, n));
    const Eigen::VectorXd y = random_vector(rng, n) * std::sqrt(true_s2);
    const NoisePosterior post(y, e, NoisePrior{3.0, 1.0, 0.9}, 0.0);
    const auto draws = sample_noise_posterior(post, 2000, 3);
    double mean = 0;
    for (double s : draws.sigma2) mean += s;
    mean /= static_cast<double>(draws.sigma2.size());
    const double post_sd = true_s2 * std::sqrt(2.0 / n);
    EXPECT_NEAR(mean, true_s2, 3 * post_sd + 1e-9);
}

TEST(SampleNoisePosterior, NonFinitePosteriorIsAnError) {
    const EigenCache e(Eigen::MatrixXd::Zero(1, 1));
    Eigen::VectorXd y(1);
    y << std::numeric_limits<double>::quiet_NaN();
    const NoisePosterior post(y, e, NoisePrior{3.0, 1.0, 0.9}, 0.0);
    EXPECT_THROW(sample_noise_posterior(post, 10, 1), NumericalError);
}

TEST(LogLoss, UnitDensityGivesZero) {
    Eigen::MatrixXd f(1, 3);
    f << 0.1, 0.2, 0.3;
    Eigen::VectorXd y(3);
    y << 0.1, 0.2, 0.3;
    const double s2 = 1 / (2 * std::numbers::pi);
    EXPECT_NEAR(log_loss(f, {s2}, y), 0.0, 1e-14);
    Eigen::MatrixXd f2(2, 3);
    f2 << f, f;
    EXPECT_NEAR(log_loss(f2, {s2, s2}, y), 0.0, 1e-14);
}

TEST(LogLoss, MatchesExtendedPrecisionSum) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.05, 2.0);
    for (int rep = 0; rep < 10; ++rep) {
        const Eigen::Index S = 5 + rep, m = 4;
        Eigen::MatrixXd f(S, m);
        for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = u(rng);
        std::vector<double> s2(static_cast<std::size_t>(S));
        for (auto& v : s2) v = u(rng);
        const auto y = random_vector(rng, m);
        long double acc = 0;
        for (Eigen::Index s = 0; s < S; ++s) {
            long double l = 1;
            for (Eigen::Index j = 0; j < m; ++j) {
                const long double v = s2[static_cast<std::size_t>(s)];
                const long double d = y(j) - f(s, j);
                l *= std::exp(-d * d / (2 * v)) / std::sqrt(2 * std::numbers::pi_v<long double> * v);
            }
            acc += l;
        }
        const double expected = static_cast<double>(-std::log(acc / S) / m);
        EXPECT_NEAR(log_loss(f, s2, y), expected, 1e-12);
    }
}

TEST(LogLoss, PermutationInvariantAndNoUnderflow) {
    Eigen::MatrixXd f(2, 2);
    f << 0, 0, 50, 50;
    Eigen::VectorXd y(2);
    y << 50, 50;
    const double a = log_loss(f, {1e-3, 1e-3}, y);
    Eigen::MatrixXd g(2, 2);
    g << 50, 50, 0, 0;
    EXPECT_EQ(a, log_loss(g, {1e-3, 1e-3}, y));
    EXPECT_TRUE(std::isfinite(a));
}

TEST(Matheron, MeanAndCovarianceMatchConditioning) {
    std::mt19937_64 rng(8);
    const Eigen::Index n = 6, m = 3;
    const auto J = random_spd(rng, n + m);
    const auto y = random_vector(rng, n);
    const double s2 = 0.2;
    const auto ps = matheron_samples(J, Eigen::VectorXd::Zero(n + m), n, y, {s2}, 40000, 9);
    Eigen::MatrixXd Sxx = J.topLeftCorner(n, n);
    Sxx.diagonal().array() += s2;
    const auto c = condition(Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(m), Sxx, J.topRightCorner(n, m),
                             J.bottomRightCorner(m, m), y);
    const Eigen::VectorXd mean = ps.f.colwise().mean();
    const Eigen::MatrixXd centred = ps.f.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(ps.f.rows() - 1);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double se = std::sqrt(c.cov(i, i) / static_cast<double>(ps.f.rows()));
        EXPECT_NEAR(mean(i), c.mean(i), 5 * se);
        EXPECT_NEAR(cov(i, i), c.cov(i, i), 5 * c.cov(i, i) * std::sqrt(2.0 / static_cast<double>(ps.f.rows())));
    }
}

TEST(Matheron, HugeNoiseGivesPriorDrawsAndIsSeeded) {
    std::mt19937_64 rng(10);
    const auto J = random_spd(rng, 5);
    const auto y = random_vector(rng, 3);
    const auto a = matheron_samples(J, Eigen::VectorXd::Zero(5), 3, y, {1e12, 1e12}, 3, 4);
    const auto b = matheron_samples(J, Eigen::VectorXd::Zero(5), 3, y, {1e12, 1e12}, 3, 4);
    EXPECT_TRUE(a.f == b.f);
    EXPECT_EQ(a.f.rows(), 6);
    // correction term vanishes: the test part equals the unconditioned joint draw
    const EigenCache joint(J);
    Stream s(4, 0x3a7e, 0);
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(5);
    for (auto& v : z) v = normal(s);
    const Eigen::VectorXd f = joint.O * joint.D.cwiseSqrt().asDiagonal() * z;
    EXPECT_NEAR((a.f.row(0).transpose() - f.tail(2)).cwiseAbs().maxCoeff(), 0.0, 1e-5);
}

TEST(SetLambdaFromOls, QuantileIdentity) {
    std::mt19937_64 rng(11);
    Eigen::MatrixXd X(50, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = random_vector(rng, 1)(0);
    const Eigen::VectorXd y = X.col(0) * 2 + random_vector(rng, 50) * 0.5;
    for (double q : {0.5, 0.9}) {
        const auto r = set_lambda_from_ols(X, y, 3.0, q);
        EXPECT_FALSE(r.fallback);
        const NoisePrior prior{3.0, r.lambda, q};
        const boost::math::chi_squared_distribution<double> chi(3.0);
        // P(sigma^2 < sigma_hat^2) = P(chi2 > nu lambda / sigma_hat^2) = q
        EXPECT_NEAR(boost::math::cdf(boost::math::complement(chi, 3.0 * r.lambda / r.sigma2_hat)), q, 1e-12);
        if (q == 0.5) EXPECT_NEAR(r.lambda, r.sigma2_hat * boost::math::median(chi) / 3.0, 1e-14);
    }
}

TEST(SetLambdaFromOls, ExactFitIsFloored) {
    Eigen::MatrixXd X(10, 1);
    Eigen::VectorXd y(10);
    for (int i = 0; i < 10; ++i) {
        X(i, 0) = i;
        y(i) = 3 * i + 1;
    }
    const auto r = set_lambda_from_ols(X, y, 3.0, 0.9);
    EXPECT_TRUE(r.floored);
    const double var_y = (y.array() - y.mean()).square().sum() / 9;
    EXPECT_DOUBLE_EQ(r.lambda, 1e-12 * var_y);
}

TEST(SetLambdaFromOls, RankDeficientFallsBack) {
    Eigen::MatrixXd X(10, 2);
    Eigen::VectorXd y(10);
    for (int i = 0; i < 10; ++i) {
        X(i, 0) = i;
        X(i, 1) = 2 * i;
        y(i) = std::sin(i);
    }
    const auto r = set_lambda_from_ols(X, y, 3.0, 0.9);
    EXPECT_TRUE(r.fallback);
    EXPECT_NEAR(r.sigma2_hat, (y.array() - y.mean()).square().sum() / 9, 1e-14);
}

TEST(PriorMaps, RoundTrip) {
    const PriorMaps maps{NoisePrior{3.0, 0.2, 0.9}, true};
    const HyperParams h{0.8, 1.7, 3.0, std::log(0.15)};
    const auto back = maps.to_params(maps.to_z(h));
    EXPECT_NEAR(back.alpha, h.alpha, 1e-12);
    EXPECT_NEAR(back.beta, h.beta, 1e-10);
    EXPECT_NEAR(back.k, h.k, 1e-12);
    EXPECT_NEAR(back.log_sigma2, h.log_sigma2, 1e-10);
}

struct Synthetic {
    GpData train;
    Eigen::MatrixXd X_test;
    Eigen::VectorXd y_test;
    double sigma = 0;
};

Synthetic prior_data(std::uint64_t seed, Eigen::Index n, Eigen::Index p, double sigma) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = u(rng);
    const auto grid = build_grid(X, MidpointGrid{});
    const int m = 200;
    const TreeHyper hyper{DepthSchedule(0.95, 2), AxisWeights::uniform(static_cast<std::size_t>(p)), 0.0,
                          1.0 / std::sqrt(static_cast<double>(m))};
    Eigen::VectorXd y = sample_prior_f(X, m, grid, hyper, seed, 0);
    std::normal_distribution<double> z;
    for (auto& v : y) v += sigma * z(rng);
    const Eigen::Index n_test = n / 5;
    Synthetic s;
    s.sigma = sigma;
    s.train.X = X.topRows(n - n_test);
    s.train.y = y.head(n - n_test);
    s.train.grid = build_grid(s.train.X, MidpointGrid{});
    s.train.weights = AxisWeights::uniform(static_cast<std::size_t>(p));
    s.X_test = X.bottomRows(n_test);
    s.y_test = y.tail(n_test);
    return s;
}

TEST(FitMap, GradientMatchesFiniteDifferenceOfObjective) {
    auto s = prior_data(12, 40, 2, 0.3);
    const PriorMaps maps{NoisePrior{3.0, set_lambda_from_ols(s.train.X, s.train.y, 3.0, 0.9).lambda, 0.9}, true};
    const FitOptions opt;
    const detail::MapObjective obj(s.train, maps, opt);
    const std::array<double, 4> z{0.3, -0.2, 0.1, 0.2};
    std::array<double, 4> g{};
    obj.value_and_grad(z, &g);
    for (int i = 0; i < 4; ++i) {
        auto zp = z, zm = z;
        zp[static_cast<std::size_t>(i)] += 1e-5;
        zm[static_cast<std::size_t>(i)] -= 1e-5;
        const double fd = (obj.value_and_grad(zp, nullptr) - obj.value_and_grad(zm, nullptr)) / 2e-5;
        EXPECT_NEAR(g[static_cast<std::size_t>(i)], fd, 1e-4 * std::max(1.0, std::abs(fd))) << i;
    }
}

TEST(FitMap, ConvergesAndImprovesObjective) {
    auto s = prior_data(13, 60, 2, 0.3);
    const PriorMaps maps{NoisePrior{3.0, set_lambda_from_ols(s.train.X, s.train.y, 3.0, 0.9).lambda, 0.9}, true};
    HyperParams init;
    init.log_sigma2 = std::log(maps.noise.lambda);
    const auto fit = fit_map(s.train, maps, init);
    EXPECT_TRUE(fit.converged);
    EXPECT_LE(fit.grad_norm, 1e-3);
    EXPECT_GE(fit.objective, fit.init_objective);
    EXPECT_TRUE(fit.laplace_ok);
}

TEST(FitMap, FlatDataDoesNotCrash) {
    GpData d;
    d.X = Eigen::MatrixXd::Random(10, 1).cwiseAbs();
    d.y = Eigen::VectorXd::Constant(10, 2.0);
    d.grid = build_grid(d.X, MidpointGrid{});
    d.weights = AxisWeights::uniform(1);
    const PriorMaps maps{NoisePrior{3.0, 0.1, 0.9}, true};
    HyperParams init;
    init.log_sigma2 = std::log(0.1);
    const auto fit = fit_map(d, maps, init);
    EXPECT_TRUE(fit.degenerate_outcome);
    EXPECT_LT(fit.params.log_sigma2, init.log_sigma2);
    EXPECT_GE(fit.objective, fit.init_objective);
}

TEST(Predict, InterpolatesWithTinyNoise) {
    GpData d;
    d.X.resize(5, 1);
    d.X << 0.1, 0.3, 0.5, 0.7, 0.9;
    d.y.resize(5);
    d.y << 0.0, 1.0, 0.5, -0.5, 0.2;
    d.grid = build_grid(d.X, MidpointGrid{});
    d.weights = AxisWeights::uniform(1);
    HyperParams h;
    const NoisePrior tight{1000.0, 1e-8, 0.9};
    PredictOptions opt;
    opt.n_sigma_draws = 50;
    opt.n_f_per_sigma = 2;
    const auto r = predict(d, d.X, h, tight, opt, d.y);
    EXPECT_LT(r.rmse, 1e-3);
    EXPECT_TRUE(std::isfinite(r.log_loss));
}

TEST(Predict, SyntheticPriorDataBeatsConstantPredictor) {
    auto s = prior_data(14, 100, 2, 0.3);
    const PriorMaps maps{NoisePrior{3.0, set_lambda_from_ols(s.train.X, s.train.y, 3.0, 0.9).lambda, 0.9}, true};
    HyperParams h;
    h.log_sigma2 = std::log(0.09);
    PredictOptions opt;
    opt.n_sigma_draws = 200;
    opt.n_f_per_sigma = 5;
    const auto r = predict(s.train, s.X_test, h, maps.noise, opt, s.y_test);
    const double sd_test = std::sqrt((s.y_test.array() - s.y_test.mean()).square().mean());
    EXPECT_LT(r.rmse, sd_test);
    EXPECT_TRUE(std::isfinite(r.log_loss));
    EXPECT_EQ(r.samples.rows(), 1000);
    // doubling the sigma^2 draws moves the mean by little
    opt.n_sigma_draws = 400;
    const auto r2 = predict(s.train, s.X_test, h, maps.noise, opt, s.y_test);
    EXPECT_LT((r.mean - r2.mean).cwiseAbs().maxCoeff(), 0.05);
}

}  // namespace
}  // namespace bartgp
