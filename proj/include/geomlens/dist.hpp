#pragma once

#include <string>
#include <utility>
#include <vector>

#include "geomlens/errors.hpp"
#include "geomlens/linalg.hpp"
#include "geomlens/prng.hpp"

namespace geomlens {

/// Finite joint distribution over X x Y with cached marginals and
/// conditionals. Immutable after construction; every downstream geometric
/// quantity is derived from one of these tables.
class JointDistribution {
 public:
  static constexpr double kSumTol = 1e-12;
  static constexpr double kMarginalFloor = 1e-6;

  explicit JointDistribution(Mat p_xy,
                             std::vector<std::string> labels_x = {},
                             std::vector<std::string> labels_y = {})
      : p_xy_(std::move(p_xy)) {
    if (p_xy_.rows() < 1 || p_xy_.cols() < 1) {
      throw InvalidDistribution("joint table must be non-empty");
    }
    if ((p_xy_.array() < 0.0).any()) {
      throw InvalidDistribution("joint table has a negative entry");
    }
    const double total = p_xy_.sum();
    if (std::abs(total - 1.0) > kSumTol) {
      throw InvalidDistribution("joint table does not sum to 1");
    }
    p_x_ = p_xy_.rowwise().sum();
    p_y_ = p_xy_.colwise().sum().transpose();
    if (p_x_.minCoeff() < kMarginalFloor || p_y_.minCoeff() < kMarginalFloor) {
      throw InvalidDistribution("marginal below probability floor");
    }
    p_y_given_x_ = p_xy_.array().colwise() / p_x_.array();
    labels_x_ = std::move(labels_x);
    labels_y_ = std::move(labels_y);
    if (labels_x_.empty()) labels_x_ = default_labels(p_xy_.rows());
    if (labels_y_.empty()) labels_y_ = default_labels(p_xy_.cols());
    if (static_cast<Index>(labels_x_.size()) != p_xy_.rows() ||
        static_cast<Index>(labels_y_.size()) != p_xy_.cols()) {
      throw InvalidDistribution("label count does not match table shape");
    }
  }

  Index num_x() const { return p_xy_.rows(); }
  Index num_y() const { return p_xy_.cols(); }

  const Mat& pxy() const { return p_xy_; }
  const Vec& px() const { return p_x_; }
  const Vec& py() const { return p_y_; }

  /// Row x of the conditional table; a distribution over Y.
  Vec conditional_y(Index x) const { return p_y_given_x_.row(x).transpose(); }
  const Mat& conditionals() const { return p_y_given_x_; }

  const std::vector<std::string>& labels_x() const { return labels_x_; }
  const std::vector<std::string>& labels_y() const { return labels_y_; }

 private:
  static std::vector<std::string> default_labels(Index n) {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) out.push_back(std::to_string(i));
    return out;
  }

  Mat p_xy_;
  Vec p_x_;
  Vec p_y_;
  Mat p_y_given_x_;  // |X| rows, each a distribution over Y
  std::vector<std::string> labels_x_;
  std::vector<std::string> labels_y_;
};

/// Double-centered, unit-normalized perturbation direction phi. Satisfies
///   sum_y P_Y(y) phi(x,y) = 0 for all x,
///   sum_x P_X(x) phi(x,y) = 0 for all y,
///   sum_{x,y} P_X(x) P_Y(y) phi(x,y)^2 = 1.
class PerturbationDirection {
 public:
  const Mat& phi() const { return phi_; }
  double max_abs() const { return phi_.cwiseAbs().maxCoeff(); }

 private:
  friend PerturbationDirection make_direction(const Vec&, const Vec&,
                                              const Mat&);
  explicit PerturbationDirection(Mat phi) : phi_(std::move(phi)) {}
  Mat phi_;
};

/// Neyman chi-squared mutual information of a finite joint:
/// sum_{x,y} (P_XY - P_X P_Y)^2 / (P_X P_Y).
inline double chi2_mutual_information(const JointDistribution& j) {
  double total = 0.0;
  for (Index x = 0; x < j.num_x(); ++x) {
    for (Index y = 0; y < j.num_y(); ++y) {
      const double ref = j.px()(x) * j.py()(y);
      const double diff = j.pxy()(x, y) - ref;
      total += diff * diff / ref;
    }
  }
  return total;
}

/// Projects `raw` onto the space of double-centered matrices under the
/// (P_X, P_Y) weights and rescales to unit normalization.
inline PerturbationDirection make_direction(const Vec& p_x, const Vec& p_y,
                                            const Mat& raw) {
  if (p_x.minCoeff() <= 0.0 || p_y.minCoeff() <= 0.0) {
    throw InvalidDistribution("marginals must be strictly positive");
  }
  if (raw.rows() != p_x.size() || raw.cols() != p_y.size()) {
    throw InvalidDistribution("direction shape does not match marginals");
  }
  Mat phi = raw;
  // Center rows under P_Y, then columns under P_X. Column centering preserves
  // row centering because it subtracts an x-independent profile.
  phi.noalias() -= (phi * p_y) * Vec::Ones(p_y.size()).transpose();
  phi.noalias() -= Vec::Ones(p_x.size()) * (p_x.transpose() * phi);
  const double norm2 = (p_x.transpose() * phi.array().square().matrix() * p_y).value();
  if (norm2 <= 1e-24) {
    throw DegenerateDirection("direction vanishes after double centering");
  }
  phi /= std::sqrt(norm2);
  return PerturbationDirection(std::move(phi));
}

/// Deterministic random direction: raw entries iid uniform in [-1, 1] drawn
/// row-major from xoshiro256**(seed), then centered and normalized.
inline PerturbationDirection make_direction(const Vec& p_x, const Vec& p_y,
                                            std::uint64_t seed) {
  Xoshiro256 rng(seed);
  Mat raw(p_x.size(), p_y.size());
  for (Index x = 0; x < raw.rows(); ++x) {
    for (Index y = 0; y < raw.cols(); ++y) {
      raw(x, y) = rng.uniform(-1.0, 1.0);
    }
  }
  return make_direction(p_x, p_y, raw);
}

/// The multiplicative eps-dependent family
///   P_XY(x,y) = P_X(x) P_Y(y) (1 + eps * phi(x,y)).
/// Marginals are preserved exactly and the chi-squared mutual information
/// equals eps^2, so eps is an exact dial for dependence sweeps.
inline JointDistribution perturb(const Vec& p_x, const Vec& p_y,
                                 const PerturbationDirection& dir,
                                 double eps) {
  if (eps < 0.0) throw EpsilonTooLarge("eps must be non-negative");
  if (eps * dir.max_abs() >= 1.0) {
    throw EpsilonTooLarge("eps * max|phi| >= 1 would produce a non-positive cell");
  }
  Mat p = ((p_x * p_y.transpose()).array() *
           (1.0 + eps * dir.phi().array())).matrix();
  return JointDistribution(std::move(p));
}

inline JointDistribution product_distribution(const Vec& p_x, const Vec& p_y) {
  return JointDistribution(p_x * p_y.transpose());
}

}  // namespace geomlens
