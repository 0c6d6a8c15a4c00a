#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "geomlens/activations.hpp"
#include "geomlens/dist.hpp"
#include "geomlens/geometry.hpp"
#include "geomlens/losses.hpp"
#include "geomlens/prng.hpp"

namespace geomlens::testing {

// Random strictly positive distribution with a sensible floor so fixtures
// stay well conditioned at desk scale.
inline Vec random_simplex(Xoshiro256& rng, Index n, double floor = 0.08) {
  Vec v(n);
  for (Index i = 0; i < n; ++i) v(i) = floor + rng.uniform01();
  return v / v.sum();
}

inline Mat random_matrix(Xoshiro256& rng, Index rows, Index cols,
                         double lo = -1.0, double hi = 1.0) {
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  }
  return m;
}

// Direction whose sup-norm keeps every eps in [0, eps_max) feasible;
// regenerates from the seed stream until that holds.
inline PerturbationDirection feasible_direction(const Vec& p_x, const Vec& p_y,
                                                std::uint64_t seed,
                                                double eps_max = 0.25) {
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    PerturbationDirection dir = make_direction(p_x, p_y, seed + 1000 * attempt);
    if (dir.max_abs() * eps_max < 0.95) return dir;
  }
  throw Error("could not draw a feasible direction");
}

struct Instance {
  JointDistribution joint;
  std::shared_ptr<const Loss> loss;
  Activation act = Activation::identity();
  Mat f_table;  // k x |X|
};

// Seeded random analysis instance; marginals are redrawn until the centered
// direction keeps every eps <= 0.2 feasible. |X| stays above k so feature
// Grams are invertible. kind 0: log loss + sigmoid head; kind 1: squared
// error + identity head; kind 2: squared error + tanh head (nonlinear head,
// labels embedded inside (-1, 1)).
inline Instance random_instance(std::uint64_t seed, int kind, double eps = 0.1,
                                Index k = 2, Index min_ny = 2,
                                Index min_action_dim = 1) {
  Xoshiro256 rng(seed);
  const Index nx_lo = k + 1;
  Index nx = 0;
  Index ny = 0;
  Vec p_x, p_y;
  std::optional<PerturbationDirection> dir;
  for (int attempt = 0; attempt < 256 && !dir; ++attempt) {
    nx = nx_lo + static_cast<Index>(rng.next() % (7 - nx_lo));    // nx_lo..6
    ny = min_ny + static_cast<Index>(rng.next() % (7 - min_ny));  // min_ny..6
    p_x = random_simplex(rng, nx);
    p_y = random_simplex(rng, ny);
    PerturbationDirection candidate =
        make_direction(p_x, p_y, seed + 7919 * attempt);
    if (candidate.max_abs() * 0.25 < 0.95) dir = std::move(candidate);
  }
  if (!dir) throw Error("could not draw a feasible instance");
  JointDistribution joint = perturb(p_x, p_y, *dir, eps);

  std::shared_ptr<const Loss> loss;
  Activation act = Activation::identity();
  const Index n =
      min_action_dim + static_cast<Index>(rng.next() % (4 - min_action_dim));
  if (kind == 0) {
    loss = std::make_shared<LogLoss>(ny);
    act = Activation::sigmoid();
  } else if (kind == 1) {
    loss = std::make_shared<SquaredError>(random_matrix(rng, ny, n));
    act = Activation::identity();
  } else {
    loss = std::make_shared<SquaredError>(
        random_matrix(rng, ny, n, -0.8, 0.8));
    act = Activation::tanh();
  }
  Mat f = random_matrix(rng, k, nx);
  return Instance{std::move(joint), std::move(loss), act, std::move(f)};
}

// Instance whose Btilde generically has rank >= k, so both factor Grams in
// the closed forms stay invertible.
inline Instance full_rank_instance(std::uint64_t seed, int kind,
                                   double eps = 0.1, Index k = 2) {
  return random_instance(seed, kind, eps, k, /*min_ny=*/k + 1,
                         /*min_action_dim=*/k);
}

inline GeometryBundle bundle_of(const Instance& inst) {
  return build_bundle(inst.joint, *inst.loss, inst.act, inst.f_table);
}

}  // namespace geomlens::testing
