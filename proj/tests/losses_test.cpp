#include "geomlens/losses.hpp"

#include <gtest/gtest.h>

#include "geomlens/prng.hpp"
#include "test_helpers.hpp"

namespace geomlens {
namespace {

using testing::random_matrix;
using testing::random_simplex;

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Hides the closed forms of a wrapped loss so the generic descent path can be
// exercised against a known answer.
class OpaqueLoss final : public Loss {
 public:
  explicit OpaqueLoss(std::shared_ptr<const Loss> inner) : inner_(std::move(inner)) {}
  Index action_dim() const override { return inner_->action_dim(); }
  Index num_labels() const override { return inner_->num_labels(); }
  bool admissible(const Vec& a) const override { return inner_->admissible(a); }
  double loss(Index y, const Vec& a) const override { return inner_->loss(y, a); }
  Vec loss_grad(Index y, const Vec& a) const override { return inner_->loss_grad(y, a); }

 private:
  std::shared_ptr<const Loss> inner_;
};

TEST(LogLossEval, SpotValues) {
  const LogLoss model(2);
  EXPECT_NEAR(model.loss(1, vec2(0.5, 0.5)), std::log(2.0), 1e-12);
  // scale invariance of the normalized likelihood
  EXPECT_DOUBLE_EQ(model.loss(0, vec2(2.0, 2.0)), model.loss(0, vec2(1.0, 1.0)));
  EXPECT_THROW(model.loss(0, vec2(0.0, 1.0)), InadmissibleAction);
  EXPECT_THROW(model.loss(0, vec2(-0.5, 1.0)), InadmissibleAction);
}

TEST(SquaredErrorEval, SpotValues) {
  Mat y_values(2, 2);
  y_values << 1, 0, 0, 1;
  const SquaredError model(y_values);
  EXPECT_DOUBLE_EQ(model.loss(0, vec2(1.0, 0.0)), 0.0);
  EXPECT_DOUBLE_EQ(model.loss(1, vec2(1.0, 0.0)), 1.0);
}

TEST(BayesAction, LogLossReturnsTheDistribution) {
  const LogLoss model(2);
  const BayesSolution sol = bayes_action(model, vec2(0.3, 0.7));
  EXPECT_LT((sol.action - vec2(0.3, 0.7)).norm(), 1e-15);
  EXPECT_EQ(sol.method, BayesSolution::Method::ClosedForm);
  EXPECT_DOUBLE_EQ(sol.gradient_norm, 0.0);
}

TEST(BayesAction, SquaredErrorIsConditionalMean) {
  const SquaredError bernoulli = SquaredError::scalar(vec2(0.0, 1.0));
  EXPECT_NEAR(bayes_action(bernoulli, vec2(0.7, 0.3)).action(0), 0.3, 1e-15);
  const SquaredError pm1 = SquaredError::scalar(vec2(-1.0, 1.0));
  EXPECT_NEAR(bayes_action(pm1, vec2(0.5, 0.5)).action(0), 0.0, 1e-15);
}

TEST(Divergence, ZeroAtBayesAction) {
  const LogLoss model(3);
  Xoshiro256 rng(4);
  const Vec q = random_simplex(rng, 3);
  EXPECT_NEAR(divergence(model, q, bayes_action(model, q).action), 0.0, 1e-14);
}

TEST(Divergence, LogLossEqualsKlAgainstDirectSummation) {
  const LogLoss model(4);
  Xoshiro256 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec q = random_simplex(rng, 4);
    Vec a(4);
    for (Index i = 0; i < 4; ++i) a(i) = rng.uniform(0.2, 2.0);
    const Vec a_normalized = a / a.sum();
    double kl = 0.0;
    for (Index y = 0; y < 4; ++y) kl += q(y) * std::log(q(y) / a_normalized(y));
    EXPECT_NEAR(divergence(model, q, a), kl, 1e-12);
  }
}

TEST(Divergence, SquaredErrorEqualsHalfDistanceToMean) {
  Xoshiro256 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat y_values = random_matrix(rng, 3, 2);
    const SquaredError model(y_values);
    const Vec q = random_simplex(rng, 3);
    const Vec a = random_matrix(rng, 2, 1).col(0);
    const Vec mean = y_values.transpose() * q;  // direct expectation
    EXPECT_NEAR(divergence(model, q, a), 0.5 * (a - mean).squaredNorm(), 1e-13);
  }
}

TEST(Divergence, StrictlyPositiveOffTheBayesSet) {
  const LogLoss model(3);
  Xoshiro256 rng(13);
  const Vec q = random_simplex(rng, 3);
  for (int trial = 0; trial < 20; ++trial) {
    Vec delta(3);
    for (Index i = 0; i < 3; ++i) delta(i) = rng.uniform(-1.0, 1.0);
    // the log-loss Bayes set is the ray {alpha q}; test off-ray directions
    delta -= delta.dot(q) / q.squaredNorm() * q;
    if (delta.norm() < 1e-4) continue;
    delta *= 1e-3 / delta.norm();
    EXPECT_GT(divergence(model, q, q + delta), 0.0);
  }
}

TEST(HessianMl, LogLossClosedForm) {
  const LogLoss model(2);
  const Mat m = hessian_ml(model, vec2(0.5, 0.5));
  Mat expected(2, 2);
  expected << 1, -1, -1, 1;
  EXPECT_LT((m - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(HessianMl, SquaredErrorIsIdentity) {
  Xoshiro256 rng(14);
  const SquaredError model(random_matrix(rng, 4, 3));
  const Mat m = hessian_ml(model, random_simplex(rng, 4));
  EXPECT_LT((m - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(HessianMl, FiniteDifferenceOracleAgrees) {
  const LogLoss model(2);
  const Vec q = vec2(0.5, 0.5);
  const Mat fd = fd_expected_loss_hessian(model, q, q);
  EXPECT_LT((fd - hessian_ml(model, q)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(HessianMl, SymmetricPositiveSemidefinite) {
  Xoshiro256 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const LogLoss model(4);
    const Mat m = hessian_ml(model, random_simplex(rng, 4));
    EXPECT_LT((m - m.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

// Scale invariance of the log loss makes q a null vector of M_L.
TEST(HessianMl, LogLossNullspaceContainsQ) {
  Xoshiro256 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec q = random_simplex(rng, 5);
    const Mat m = hessian_ml(LogLoss(5), q);
    EXPECT_LT((m * q).cwiseAbs().maxCoeff(), 1e-10);
  }
}

// divergence(q, a_q + t v) ~ (1/2) t^2 v' M_L v as t -> 0.
TEST(Divergence, SecondOrderExpansionRatio) {
  Xoshiro256 rng(17);
  const double t = 1e-4;
  for (int trial = 0; trial < 5; ++trial) {
    const Vec q = random_simplex(rng, 3);
    const LogLoss model(3);
    const Mat m = hessian_ml(model, q);
    Vec v(3);
    for (Index i = 0; i < 3; ++i) v(i) = rng.uniform(-1.0, 1.0);
    v -= v.dot(q) / q.squaredNorm() * q;  // keep out of the nullspace
    v.normalize();
    const double quad = 0.5 * t * t * v.dot(m * v);
    const double ratio = divergence(model, q, q + t * v) / quad;
    EXPECT_GT(ratio, 0.99);
    EXPECT_LT(ratio, 1.01);
  }

  Mat y_values(3, 2);
  y_values << 0, 0, 1, 0, 0, 1;
  const SquaredError se(y_values);
  const Vec q = random_simplex(rng, 3);
  Vec v = vec2(0.6, -0.8);
  const Vec a_q = bayes_action(se, q).action;
  const double quad = 0.5 * t * t * v.dot(hessian_ml(se, q) * v);
  EXPECT_NEAR(divergence(se, q, a_q + t * v) / quad, 1.0, 1e-9);
}

// Bayes-action stability in q: exactly 1-Lipschitz for log loss, bounded by
// max||y_vec|| sqrt(|Y|) for squared error.
TEST(BayesAction, LipschitzInTheDistribution) {
  Xoshiro256 rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec q = random_simplex(rng, 4);
    Vec nudge(4);
    for (Index i = 0; i < 4; ++i) nudge(i) = rng.uniform(-1.0, 1.0);
    nudge.array() -= nudge.mean();
    const Vec q2 = q + 1e-3 * nudge / nudge.norm();
    ASSERT_GT(q2.minCoeff(), 0.0);

    const LogLoss log_model(4);
    const double moved = (bayes_action(log_model, q2).action -
                          bayes_action(log_model, q).action).norm();
    EXPECT_NEAR(moved, (q2 - q).norm(), 1e-15);

    const Mat y_values = random_matrix(rng, 4, 2);
    const SquaredError se(y_values);
    const double c = y_values.rowwise().norm().maxCoeff() * 2.0;
    EXPECT_LE((bayes_action(se, q2).action - bayes_action(se, q).action).norm(),
              c * (q2 - q).norm() + 1e-15);
  }
}

TEST(NumericBayes, MatchesClosedFormOnOpaqueLoss) {
  Xoshiro256 rng(19);
  const Vec q = random_simplex(rng, 3);
  const OpaqueLoss opaque(std::make_shared<LogLoss>(3));
  BayesSolverConfig cfg;
  cfg.init = Vec::Constant(3, 1.0 / 3.0);
  const BayesSolution sol = bayes_action(opaque, q, cfg);
  EXPECT_EQ(sol.method, BayesSolution::Method::Numeric);
  EXPECT_LE(sol.gradient_norm, 1e-9);
  // gradient descent converges to some point on the Bayes ray {alpha q}
  const Vec normalized = sol.action / sol.action.sum();
  EXPECT_LT((normalized - q).norm(), 1e-7);
  EXPECT_NEAR(divergence(LogLoss(3), q, sol.action), 0.0, 1e-13);
}

TEST(NumericBayes, IterationCapSurfacesAsNonConvergence) {
  Xoshiro256 rng(21);
  const OpaqueLoss opaque(std::make_shared<LogLoss>(3));
  const Vec q = random_simplex(rng, 3);
  BayesSolverConfig cfg;
  cfg.init = Vec::Constant(3, 2.0);  // far from the Bayes ray
  cfg.max_iterations = 1;
  EXPECT_THROW(bayes_action(opaque, q, cfg), NonConvergence);
}

TEST(NumericBayes, QuadraticConvergesToMean) {
  Xoshiro256 rng(20);
  const Mat y_values = random_matrix(rng, 4, 2);
  const OpaqueLoss opaque(std::make_shared<SquaredError>(y_values));
  const Vec q = random_simplex(rng, 4);
  BayesSolverConfig cfg;
  cfg.init = Vec::Zero(2);
  const BayesSolution sol = bayes_action(opaque, q, cfg);
  EXPECT_LT((sol.action - y_values.transpose() * q).norm(), 1e-9);
}

}  // namespace
}  // namespace geomlens
