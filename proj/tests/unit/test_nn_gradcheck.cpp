#include <gtest/gtest.h>

#include "perfuseg/nn/gradcheck.hpp"

namespace nn = perfuseg::nn;

TEST(GradCheck, EveryOpAgreesWithFiniteDifferences) {
  const auto results = nn::run_gradcheck_suite({});
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) {
    EXPECT_GE(r.trials, 10);
    EXPECT_TRUE(r.passed) << r.op << " max relative error " << r.max_error;
  }
}
