#include "geomlens/dist.hpp"

#include <gtest/gtest.h>

#include "geomlens/json_io.hpp"
#include "test_helpers.hpp"

namespace geomlens {
namespace {

using testing::feasible_direction;
using testing::random_simplex;

Vec uniform2() { return Vec::Constant(2, 0.5); }

Mat checkerboard2() {
  Mat raw(2, 2);
  raw << 1, -1, -1, 1;
  return raw;
}

TEST(JointDistribution, ValidatesTable) {
  Mat bad_sum(2, 2);
  bad_sum << 0.3, 0.3, 0.3, 0.3;
  EXPECT_THROW(JointDistribution{bad_sum}, InvalidDistribution);

  Mat negative(2, 2);
  negative << 0.6, -0.1, 0.3, 0.2;
  EXPECT_THROW(JointDistribution{negative}, InvalidDistribution);

  // a vanishing column marginal trips the probability floor
  Mat floor_violation(2, 2);
  floor_violation << 0.5, 0.0, 0.5, 0.0;
  EXPECT_THROW(JointDistribution{floor_violation}, InvalidDistribution);
}

TEST(JointDistribution, ConditionalRowsSumToOne) {
  Xoshiro256 rng(3);
  const Vec p_x = random_simplex(rng, 4);
  const Vec p_y = random_simplex(rng, 3);
  const auto dir = feasible_direction(p_x, p_y, 11);
  const JointDistribution j = perturb(p_x, p_y, dir, 0.15);
  for (Index x = 0; x < j.num_x(); ++x) {
    EXPECT_NEAR(j.conditional_y(x).sum(), 1.0, 1e-12);
  }
}

TEST(Chi2MutualInformation, ZeroForProduct) {
  Xoshiro256 rng(5);
  const Vec p_x = random_simplex(rng, 5);
  const Vec p_y = random_simplex(rng, 2);
  EXPECT_NEAR(chi2_mutual_information(product_distribution(p_x, p_y)), 0.0,
              1e-15);
}

// 2x2 with P_XY = [[.25+d, .25-d], [.25-d, .25+d]]: the four-term sum is
// 4 d^2 / 0.25 = 16 d^2, so d = 0.05 gives exactly 0.04.
TEST(Chi2MutualInformation, HandComputedTwoByTwo) {
  const double d = 0.05;
  Mat p(2, 2);
  p << 0.25 + d, 0.25 - d, 0.25 - d, 0.25 + d;
  EXPECT_NEAR(chi2_mutual_information(JointDistribution{p}), 0.04, 1e-12);
}

TEST(MakeDirection, AlreadyCenteredRawIsFixedPoint) {
  const auto dir = make_direction(uniform2(), uniform2(), checkerboard2());
  EXPECT_LT((dir.phi() - checkerboard2()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MakeDirection, ConstantRawDegenerates) {
  EXPECT_THROW(make_direction(uniform2(), uniform2(), Mat::Ones(2, 2)),
               DegenerateDirection);
}

TEST(MakeDirection, SeededRawSatisfiesInvariants) {
  Xoshiro256 rng(21);
  const Vec p_x = random_simplex(rng, 4);
  const Vec p_y = random_simplex(rng, 5);
  const auto dir = make_direction(p_x, p_y, std::uint64_t{7});
  const Mat& phi = dir.phi();
  EXPECT_LT((phi * p_y).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((p_x.transpose() * phi).cwiseAbs().maxCoeff(), 1e-12);
  const double norm2 =
      (p_x.transpose() * phi.array().square().matrix() * p_y).value();
  EXPECT_NEAR(norm2, 1.0, 1e-12);
}

TEST(Perturb, ZeroEpsIsProduct) {
  Xoshiro256 rng(9);
  const Vec p_x = random_simplex(rng, 3);
  const Vec p_y = random_simplex(rng, 4);
  const auto dir = feasible_direction(p_x, p_y, 13);
  const JointDistribution j = perturb(p_x, p_y, dir, 0.0);
  EXPECT_LT((j.pxy() - p_x * p_y.transpose()).cwiseAbs().maxCoeff(), 1e-16);
}

TEST(Perturb, HandComputedTwoByTwo) {
  const auto dir = make_direction(uniform2(), uniform2(), checkerboard2());
  const JointDistribution j = perturb(uniform2(), uniform2(), dir, 0.2);
  Mat expected(2, 2);
  expected << 0.3, 0.2, 0.2, 0.3;
  EXPECT_LT((j.pxy() - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(chi2_mutual_information(j), 0.04, 1e-12);
}

TEST(Perturb, RejectsEpsilonBeyondPositivity) {
  const auto dir = make_direction(uniform2(), uniform2(), checkerboard2());
  EXPECT_THROW(perturb(uniform2(), uniform2(), dir, 1.5), EpsilonTooLarge);
  EXPECT_THROW(perturb(uniform2(), uniform2(), dir, -0.1), EpsilonTooLarge);
}

TEST(Perturb, PreservesMarginalsExactly) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Xoshiro256 rng(seed);
    const Index nx = 2 + static_cast<Index>(rng.next() % 5);
    const Index ny = 2 + static_cast<Index>(rng.next() % 5);
    const Vec p_x = random_simplex(rng, nx);
    const Vec p_y = random_simplex(rng, ny);
    const auto dir = feasible_direction(p_x, p_y, seed * 31 + 7);
    const JointDistribution j = perturb(p_x, p_y, dir, 0.2);
    EXPECT_LT((j.px() - p_x).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((j.py() - p_y).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Perturb, ChiSquaredDialIsExact) {
  const double eps_levels[] = {0.2, 0.1, 0.05, 0.025};
  for (std::uint64_t seed : {10u, 20u, 30u}) {
    Xoshiro256 rng(seed);
    const Index nx = 2 + static_cast<Index>(rng.next() % 5);
    const Index ny = 2 + static_cast<Index>(rng.next() % 5);
    const Vec p_x = random_simplex(rng, nx);
    const Vec p_y = random_simplex(rng, ny);
    const auto dir = feasible_direction(p_x, p_y, seed ^ 0xabcdULL);
    for (double eps : eps_levels) {
      EXPECT_NEAR(chi2_mutual_information(perturb(p_x, p_y, dir, eps)),
                  eps * eps, 1e-12);
    }
  }
  // worked value: eps = 0.1 lands on 0.01
  Xoshiro256 rng(77);
  const Vec p_x = random_simplex(rng, 3);
  const Vec p_y = random_simplex(rng, 3);
  const auto dir = feasible_direction(p_x, p_y, 99);
  EXPECT_NEAR(chi2_mutual_information(perturb(p_x, p_y, dir, 0.1)), 0.01,
              1e-12);
}

// Finite analogue of the conditional-vs-marginal bound:
// sum_y (P_{Y|X=x} - P_Y)^2 <= I_chi2 * max_y P_Y / min_x P_X.
TEST(Perturb, ConditionalDeviationBound) {
  for (std::uint64_t seed : {4u, 14u, 24u}) {
    Xoshiro256 rng(seed);
    const Vec p_x = random_simplex(rng, 4);
    const Vec p_y = random_simplex(rng, 4);
    const auto dir = feasible_direction(p_x, p_y, seed + 5);
    const JointDistribution j = perturb(p_x, p_y, dir, 0.2);
    const double bound = chi2_mutual_information(j) * p_y.maxCoeff() /
                         p_x.minCoeff();
    for (Index x = 0; x < j.num_x(); ++x) {
      const double dev2 = (j.conditional_y(x) - j.py()).squaredNorm();
      EXPECT_LE(dev2, bound + 1e-15);
    }
  }
}

TEST(DistJson, RoundTripsThroughText) {
  Xoshiro256 rng(31);
  const Vec p_x = random_simplex(rng, 3);
  const Vec p_y = random_simplex(rng, 4);
  const auto dir = feasible_direction(p_x, p_y, 17);
  const JointDistribution j = perturb(p_x, p_y, dir, 0.1);
  const std::string text = dist_to_json(j);
  const JointDistribution back = dist_from_json(text);
  EXPECT_LT((back.pxy() - j.pxy()).cwiseAbs().maxCoeff(), 1e-18);
  EXPECT_EQ(back.labels_x(), j.labels_x());
  // 17 significant digits reproduce the same text on a second pass
  EXPECT_EQ(dist_to_json(back), text);
}

}  // namespace
}  // namespace geomlens
