#include <gtest/gtest.h>

#include "grad_cases.hpp"

namespace floodseg {
namespace {

class NetworkGradients : public ::testing::TestWithParam<std::string> {};

TEST_P(NetworkGradients, MatchFiniteDifferences) {
    for (const auto& c : testing::network_grad_cases()) {
        if (c.name != GetParam()) continue;
        auto r = testing::grad_check(c.loss, c.leaves, c.step, c.max_per_leaf);
        EXPECT_LT(r.max_rel_error, 1e-4);
        EXPECT_GT(r.checked, 0u);
        return;
    }
    FAIL() << "no case named " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(All, NetworkGradients,
                         ::testing::Values("generator", "discriminator", "refiner", "segmentor", "joint_path"));

}  // namespace
}  // namespace floodseg
