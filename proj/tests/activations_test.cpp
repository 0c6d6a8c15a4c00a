#include "geomlens/activations.hpp"

#include <gtest/gtest.h>

#include "geomlens/prng.hpp"

namespace geomlens {
namespace {

std::vector<Activation> all_kinds() {
  return {Activation::identity(), Activation::sigmoid(), Activation::tanh(),
          Activation::leaky_relu(0.01), Activation::softplus()};
}

TEST(Activation, SpotValues) {
  EXPECT_DOUBLE_EQ(Activation::sigmoid().inverse(0.5), 0.0);
  EXPECT_DOUBLE_EQ(Activation::tanh().deriv(0.0), 1.0);
  EXPECT_DOUBLE_EQ(Activation::leaky_relu(0.01).eval(-2.0), -0.02);
  EXPECT_DOUBLE_EQ(Activation::leaky_relu(0.01).deriv(0.0), 1.0);  // right slope
  EXPECT_NEAR(Activation::softplus().eval(0.0), std::log(2.0), 1e-15);
}

TEST(Activation, DerivativeMatchesFiniteDifferences) {
  Xoshiro256 rng(42);
  for (const Activation& act : all_kinds()) {
    for (int i = 0; i < 100; ++i) {
      double z = rng.uniform(-4.0, 4.0);
      if (act.kind() == Activation::Kind::LeakyRelu && std::abs(z) < 1e-3) {
        z += 2e-3;  // keep clear of the kink
      }
      const double h = 1e-6 * std::max(1.0, std::abs(z));
      const double fd = (act.eval(z + h) - act.eval(z - h)) / (2.0 * h);
      const double an = act.deriv(z);
      EXPECT_NEAR(an, fd, 1e-6 * std::max(1.0, std::abs(an)))
          << act.name() << " at z=" << z;
    }
  }
}

TEST(Activation, InverseComposesToIdentity) {
  Xoshiro256 rng(7);
  for (const Activation& act : all_kinds()) {
    for (int i = 0; i < 50; ++i) {
      const double z = rng.uniform(-8.0, 8.0);
      EXPECT_NEAR(act.inverse(act.eval(z)), z, 1e-10) << act.name();
    }
  }
}

TEST(Activation, InverseRejectsOutOfImage) {
  EXPECT_THROW(Activation::sigmoid().inverse(1.5), OutOfImage);
  EXPECT_THROW(Activation::sigmoid().inverse(0.0), OutOfImage);  // open interval
  EXPECT_THROW(Activation::tanh().inverse(-1.0), OutOfImage);
  EXPECT_THROW(Activation::softplus().inverse(-0.2), OutOfImage);
}

TEST(Activation, ParseNamesRoundTrip) {
  for (const Activation& act : all_kinds()) {
    const Activation parsed = Activation::parse(act.name());
    EXPECT_EQ(parsed.kind(), act.kind());
    EXPECT_DOUBLE_EQ(parsed.eval(-1.3), act.eval(-1.3));
  }
  EXPECT_THROW(Activation::parse("relu6"), ConfigError);
  EXPECT_THROW(Activation::parse("leaky_relu:x"), ConfigError);
}

// Vector activation Jacobian is diag(h'(b_i)); checked against finite
// differences of the vector map.
TEST(Activation, VectorJacobianIsDiagonal) {
  const Activation act = Activation::sigmoid();
  Vec b(3);
  b << -0.4, 0.2, 1.1;
  const Vec d = act.deriv(b);
  for (Index i = 0; i < b.size(); ++i) {
    Vec bp = b, bm = b;
    bp(i) += 1e-6;
    bm(i) -= 1e-6;
    const Vec col = (act.eval(bp) - act.eval(bm)) / 2e-6;
    for (Index j = 0; j < b.size(); ++j) {
      EXPECT_NEAR(col(j), i == j ? d(i) : 0.0, 1e-8);
    }
  }
}

TEST(Certify, SigmoidAtZero) {
  const GradientCertificate cert = auto_certify(Activation::sigmoid(), 0.0);
  EXPECT_TRUE(cert.verified);
  EXPECT_DOUBLE_EQ(cert.k_lower, 0.125);  // h'(0)/2
  EXPECT_GT(cert.delta, 0.0);
}

TEST(Certify, ConstantStubFails) {
  const auto constant = [](double) { return 3.0; };
  const GradientCertificate cert =
      certify_assumption1(constant, 0.0, 0.0, 0.5, 200);
  EXPECT_FALSE(cert.verified);
  EXPECT_DOUBLE_EQ(cert.k_lower, 0.0);
}

TEST(Certify, LeakyReluNegativeBranch) {
  const GradientCertificate cert =
      certify_assumption1(Activation::leaky_relu(0.01), -1.0, 0.5, 200);
  EXPECT_TRUE(cert.verified);
  EXPECT_DOUBLE_EQ(cert.k_lower, 0.005);
}

TEST(Certify, TanhVerifiesOnWideInterval) {
  const GradientCertificate cert =
      certify_assumption1(Activation::tanh(), 0.0, 1.0, 300);
  EXPECT_TRUE(cert.verified);
  EXPECT_DOUBLE_EQ(cert.k_lower, 0.5);
}

TEST(Certify, RequiresEnoughProbes) {
  EXPECT_THROW(certify_assumption1(Activation::sigmoid(), 0.0, 0.5, 10),
               ConfigError);
}

}  // namespace
}  // namespace geomlens
