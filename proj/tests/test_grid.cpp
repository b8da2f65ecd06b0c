#include <gtest/gtest.h>

#include <random>

#include "bartgp/grid.hpp"

namespace bartgp {
namespace {

Eigen::MatrixXd column(std::initializer_list<double> v) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

TEST(BuildGrid, MidpointsBetweenUniqueValues) {
    const auto g = build_grid(column({4, 1, 2}), MidpointGrid{});
    ASSERT_EQ(g.size(0), 2);
    EXPECT_DOUBLE_EQ(g.axis(0)[0], 1.5);
    EXPECT_DOUBLE_EQ(g.axis(0)[1], 3.0);
}

TEST(BuildGrid, ConstantColumnHasNoCutpoints) {
    const auto g = build_grid(column({5, 5, 5}), MidpointGrid{});
    EXPECT_EQ(g.size(0), 0);
}

TEST(BuildGrid, UniformHundredInsideUnitInterval) {
    const auto g = build_grid(column({0.3}), UniformGrid{100, 0.0, 1.0});
    ASSERT_EQ(g.size(0), 100);
    EXPECT_GT(g.axis(0).front(), 0.0);
    EXPECT_LT(g.axis(0).back(), 1.0);
    for (int j = 1; j < 100; ++j) EXPECT_NEAR(g.axis(0)[j] - g.axis(0)[j - 1], 1.0 / 101, 1e-15);
}

TEST(BuildGrid, RejectsBadInput) {
    EXPECT_THROW(build_grid(Eigen::MatrixXd(0, 2), MidpointGrid{}), DomainError);
    EXPECT_THROW(build_grid(column({1, std::nan("")}), MidpointGrid{}), DomainError);
    EXPECT_THROW(build_grid(column({1}), UniformGrid{0, 0, 1}), DomainError);
    EXPECT_THROW(build_grid(column({1}), UniformGrid{5, 1, 1}), DomainError);
    EXPECT_THROW(SplitGrid(std::vector<std::vector<double>>{{0.5, 0.5}}), DomainError);
}

TEST(BuildGrid, NearlyEqualValuesDoNotDuplicateCutpoints) {
    const double a = 1.0, b = std::nextafter(1.0, 2.0), c = std::nextafter(b, 2.0);
    const auto g = build_grid(column({a, b, c}), MidpointGrid{});
    for (int j = 1; j < g.size(0); ++j) EXPECT_LT(g.axis(0)[j - 1], g.axis(0)[j]);
}

TEST(CountSplits, IdenticalPointsAreNeverSeparated) {
    SplitGrid g(std::vector<std::vector<double>>{{0.5}});
    const std::vector<double> x{0.2};
    const auto c = count_splits(g, x, x);
    EXPECT_EQ(c.below[0], 0);
    EXPECT_EQ(c.between[0], 0);
    EXPECT_EQ(c.above[0], 1);
}

TEST(CountSplits, DirectCountMatchesScan) {
    SplitGrid g({{0.25, 0.5, 0.75}});
    const std::vector<double> x{0.1}, xp{0.6};
    const auto c = count_splits(g, x, xp);
    EXPECT_EQ(c, SplitCounts({0}, {2}, {1}));
}

TEST(CountSplits, OppositeCornersPutEverythingBetween) {
    SplitGrid g({{0.2, 0.4, 0.6}, {0.5, 0.9}});
    const std::vector<double> lo{0.0, 0.0}, hi{1.0, 1.0};
    const auto c = count_splits(g, lo, hi);
    EXPECT_EQ(c, SplitCounts({0, 0}, {3, 2}, {0, 0}));
}

TEST(CountSplits, CutpointAtUpperCoordinateIsAbove) {
    // x <= s goes left, so a cut at the larger coordinate keeps both together.
    SplitGrid g(std::vector<std::vector<double>>{{0.5}});
    const std::vector<double> x{0.2}, xp{0.5};
    EXPECT_EQ(count_splits(g, x, xp), SplitCounts({0}, {0}, {1}));
    const std::vector<double> y{0.5}, yp{0.7};
    EXPECT_EQ(count_splits(g, y, yp), SplitCounts({0}, {1}, {0}));
}

TEST(CountSplits, DimensionMismatchThrows) {
    SplitGrid g({{0.5}, {0.5}});
    const std::vector<double> x{0.1};
    EXPECT_THROW(count_splits(g, x, x), DomainError);
}

TEST(CountSplits, FuzzSymmetryAndTotals) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-0.2, 1.2);
    std::uniform_int_distribution<int> nd(0, 12);
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<std::vector<double>> axes(3);
        for (auto& a : axes) {
            const int n = nd(rng);
            for (int j = 0; j < n; ++j) a.push_back(u(rng));
            std::sort(a.begin(), a.end());
            a.erase(std::unique(a.begin(), a.end()), a.end());
        }
        SplitGrid g(axes);
        std::vector<double> x(3), xp(3);
        for (auto& v : x) v = u(rng);
        for (auto& v : xp) v = u(rng);
        // occasionally put a coordinate exactly on a cutpoint
        if (rep % 5 == 0 && g.size(0) > 0) x[0] = g.axis(0)[0];
        const auto c = count_splits(g, x, xp);
        EXPECT_EQ(c, count_splits(g, xp, x));
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_EQ(c.total(i), g.size(i));
            int brute = 0;
            for (double s : g.axis(i))
                if ((x[i] <= s) != (xp[i] <= s)) ++brute;
            EXPECT_EQ(c.between[i], brute);
        }
        EXPECT_FALSE(count_splits(g, x, x).separated());
    }
}

}  // namespace
}  // namespace bartgp
