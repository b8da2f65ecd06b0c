#include <gtest/gtest.h>

#include "kernel_properties.hpp"

namespace bartgp::testing {
namespace {

class KernelProperties : public ::testing::TestWithParam<std::size_t> {};

TEST_P(KernelProperties, HoldOnFuzzedCounts) {
    const auto v = property_variants()[GetParam()];
    const auto rep = check_properties(v, 300, 100 + GetParam());
    for (const auto& [prop, t] : rep) {
        EXPECT_GT(t.checked, 0) << v.name << " property " << prop;
        EXPECT_EQ(t.violations, 0) << v.name << " property " << prop << " worst " << t.worst << " at " << t.example;
    }
    EXPECT_EQ(rep.count(9), v.white_noise ? 1u : 0u);
}

INSTANTIATE_TEST_SUITE_P(Variants, KernelProperties, ::testing::Range<std::size_t>(0, 5),
                         [](const auto& info) { return property_variants()[info.param].name; });

TEST(BoundStructure, NestingAffinityOrderingIntercept) {
    const auto rep = check_bound_structure(200, 7);
    ASSERT_EQ(rep.size(), 4u);
    for (const auto& [check, t] : rep) EXPECT_EQ(t.violations, 0) << check << " worst " << t.worst << " at " << t.example;
}

}  // namespace
}  // namespace bartgp::testing
