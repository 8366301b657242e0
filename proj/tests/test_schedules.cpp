#include <gtest/gtest.h>

#include <cmath>

#include "rrm/schedules.hpp"

using namespace rrm;

TEST(Constants, SpotValues) {
  const auto a = theory_constants(1.0, 0.0, 1, 1, 0.0);
  EXPECT_NEAR(a.H, 9.0 / 8.0, 1e-15);
  EXPECT_NEAR(a.alpha_max, 0.25, 1e-15);
  EXPECT_NEAR(a.D, 10.0, 1e-15);

  const auto b = theory_constants(1.0, 0.0, 2, 2, 0.5);
  EXPECT_NEAR(b.H, 6.0, 1e-12);
  EXPECT_NEAR(b.beta_m, 0.25, 1e-15);

  const auto c = theory_constants(1.0, 0.0, 1, 1, 0.0, 1.0);
  EXPECT_NEAR(c.D, 1.0, 1e-15);
}

TEST(Constants, RejectBadInputs) {
  EXPECT_THROW(theory_constants(0.0, 0.0, 1, 1, 0.0), InvalidInput);
  EXPECT_THROW(theory_constants(1.0, 0.0, 1, 0, 0.0), InvalidInput);
  EXPECT_THROW(theory_constants(1.0, 0.0, 1, 1, 1.0), InvalidInput);
}

TEST(StepSize, BalancedConstant) {
  const auto c = theory_constants(1.0, 0.0, 10, 10, 0.0);
  const double alpha = std::cbrt(10.0 / 1000.0);
  EXPECT_NEAR(balanced_constant_alpha(c, 1000, RateMode::Expectation), alpha, 1e-15);
  const auto spec = ScheduleSpec::constant(alpha);
  for (std::size_t k : {1u, 10u, 1000u})
    EXPECT_NEAR(step_size(spec, c, k), 0.0215443469, 1e-10);
  EXPECT_TRUE(check_guard(spec, c, 1000).empty());
}

TEST(StepSize, Polynomial) {
  const auto c = theory_constants(1.0, 0.0, 10, 10, 0.0);
  const auto spec = ScheduleSpec::polynomial(0.6, 0.25);
  for (std::size_t k : {1u, 2u, 17u, 5000u})
    EXPECT_NEAR(step_size(spec, c, k), 0.025 * std::pow(double(k), -0.6), 1e-15);
}

TEST(StepSize, QuarterEqualsAlphaMaxExactly) {
  for (double beta : {0.0, 0.5, 0.9}) {
    const auto c = theory_constants(3.7, 0.0, 12, 4, beta);
    EXPECT_EQ(raw_step_size(ScheduleSpec::constant(0.25), c, 5), c.alpha_max);
  }
}

TEST(StepSize, InvalidSpecs) {
  EXPECT_THROW(ScheduleSpec::constant(0.0), InvalidInput);
  EXPECT_THROW(ScheduleSpec::polynomial(0.3, 0.25), InvalidInput);
  EXPECT_THROW(ScheduleSpec::polynomial(1.2, 0.25), InvalidInput);
  EXPECT_NO_THROW(ScheduleSpec::polynomial(1.0, 0.25));
  EXPECT_THROW(ScheduleSpec::custom({0.1, 0.2}), InvalidInput);
  EXPECT_THROW(ScheduleSpec::custom({}), InvalidInput);
}

TEST(StepSize, NonincreasingAndClosedFormSum) {
  const auto c = theory_constants(2.0, 0.0, 20, 5, 0.7);
  const auto constant = ScheduleSpec::constant(0.1);
  const auto poly = ScheduleSpec::polynomial(0.8, 0.2);
  double sum = 0.0;
  for (std::size_t k = 1; k <= 500; ++k) {
    EXPECT_LE(step_size(poly, c, k + 1), step_size(poly, c, k));
    EXPECT_EQ(step_size(constant, c, k + 1), step_size(constant, c, k));
    sum += step_size(constant, c, k);
  }
  const double closed = (1.0 - 0.7) * (1.0 - c.beta_m) * 0.1 * 500 / 2.0;
  EXPECT_NEAR(5.0 * sum, closed, 1e-12 * closed);
}

TEST(Guard, StrictRejectsOversizedStep) {
  const auto c = theory_constants(1.0, 0.0, 10, 10, 0.0);
  ScheduleSpec big = ScheduleSpec::custom({0.5});
  EXPECT_THROW(check_guard(big, c, 10), GuardViolation);
  EXPECT_THROW(step_size(big, c, 1), GuardViolation);
  try {
    check_guard(big, c, 10);
  } catch (const GuardViolation& e) {
    EXPECT_NE(std::string(e.what()).find("(1-beta)(1-beta^m)/(4Lm)"), std::string::npos);
  }
  big.guard = TheoryGuard::Warn;
  EXPECT_EQ(check_guard(big, c, 10).size(), 1u);
  EXPECT_EQ(step_size(big, c, 1), 0.5);
  big.guard = TheoryGuard::Off;
  EXPECT_TRUE(check_guard(big, c, 10).empty());
}

TEST(Guard, CorollaryCaps) {
  const auto c = theory_constants(1.0, 0.0, 10, 10, 0.0);
  // n/T = 10/10000 gives a cap of 0.1.
  auto spec = ScheduleSpec::constant(0.2);
  EXPECT_THROW(check_guard(spec, c, 10000), GuardViolation);
  spec.alpha_tilde = 0.1;
  EXPECT_NO_THROW(check_guard(spec, c, 10000));
  spec.mode = RateMode::Sure;
  EXPECT_THROW(check_guard(spec, c, 10000), GuardViolation);
  EXPECT_NEAR(corollary_alpha_cap(spec, c, 8000), 0.05, 1e-15);
}

TEST(ConvergenceConditions, Conditions) {
  const auto c = theory_constants(1.0, 0.0, 10, 10, 0.0);
  const auto poly = check_theorem5_conditions(ScheduleSpec::polynomial(0.6, 0.25), c, 100);
  EXPECT_TRUE(poly.satisfied);
  EXPECT_GT(poly.partial_sum_alpha, 0.0);
  EXPECT_FALSE(check_theorem5_conditions(ScheduleSpec::constant(0.25), c, 100).satisfied);
  EXPECT_TRUE(check_theorem5_conditions(ScheduleSpec::polynomial(1.0, 0.25), c, 100).satisfied);
}

TEST(PredictedEpochs, Expectation) {
  const auto c = theory_constants(1.0, 0.0, 100, 100, 0.0);
  EXPECT_EQ(predicted_epochs(c, 100, 0.1, RateMode::Expectation), 100u);
}

TEST(PredictedEpochs, SureFloor) {
  const auto c = theory_constants(1.0, 0.0, 100, 100, 0.0);
  EXPECT_EQ(predicted_epochs(c, 100, 1e6, RateMode::Sure), 64u);
  const auto m = theory_constants(1.0, 0.0, 50, 50, 0.9);
  EXPECT_EQ(predicted_epochs(m, 50, 1e6, RateMode::Sure),
            static_cast<std::size_t>(std::ceil(64.0 / (1.0 - std::pow(0.9, 50)))));
  EXPECT_LE(momentum_factor(m), 1.006);
  EXPECT_GT(momentum_factor(m), 1.005);
}

TEST(ComplexityBound, RefusesGammaOne) {
  const auto c = theory_constants(1.0, 0.0, 10, 10, 0.0);
  EXPECT_THROW(complexity_bound(ScheduleSpec::polynomial(1.0, 0.25), c, 100, 1.0),
               InvalidInput);
  EXPECT_GT(complexity_bound(ScheduleSpec::polynomial(0.6, 0.25), c, 100, 1.0), 0.0);
  const double constant = complexity_bound(ScheduleSpec::constant(0.1), c, 100, 2.0);
  EXPECT_NEAR(constant, (1.0 / (0.1 * 100) + 3.0 * 0.01 / 10.0) * 32.0, 1e-12);
}
