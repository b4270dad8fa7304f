#include <gtest/gtest.h>

#include "gradient_check.hpp"

namespace debias {
namespace {

constexpr double kTol = 1e-5;

class GradientCheck : public ::testing::TestWithParam<LossKind> {};

TEST_P(GradientCheck, LogitGradientMatchesCentralDifferences) {
  const testing::LossFixture f = testing::make_loss_fixture(GetParam(), 5, 3, 24);
  Rng rng(17, "logits");
  for (std::size_t i = 0; i < 24; ++i) {
    const auto w = testing::check_logit_gradient(f, i, rng);
    EXPECT_LT(w.rel, kTol) << "example " << i << " class " << w.index;
  }
}

TEST_P(GradientCheck, ParameterGradientMatchesCentralDifferencesForEveryArch) {
  for (const ModelSpec& spec : testing::all_arch_specs(3)) {
    // 20+ instances: distinct data/parameter draws per architecture.
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
      const auto w = testing::check_parameter_gradient(spec, GetParam(), inst);
      EXPECT_LT(w.rel, kTol) << spec.name << " instance " << inst << " parameter " << w.index
                             << " analytic " << w.analytic << " numeric " << w.numeric;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllLosses, GradientCheck,
                         ::testing::Values(LossKind::kPlainCe, LossKind::kPoe,
                                           LossKind::kReweight, LossKind::kDistill),
                         [](const auto& info) { return to_string(info.param); });

}  // namespace
}  // namespace debias
