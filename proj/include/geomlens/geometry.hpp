#pragma once

#include <utility>

#include "geomlens/activations.hpp"
#include "geomlens/dist.hpp"
#include "geomlens/errors.hpp"
#include "geomlens/losses.hpp"

namespace geomlens {

/// All per-layer matrices of the local analysis for one (distribution, loss,
/// activation, feature table) tuple. Conventions:
///   xi_f(:,x)       = sqrt(P_X(x)) (f(x) - mu_f)
///   b_mat(:,x)      = sqrt(P_X(x)) (a_{P_{Y|X=x}} - mu_a)
///   h(b_tilde)      = a_py                  (coordinatewise inverse)
///   r_l' * r_l      = m_l                   (r = numerical rank rows)
///   b_tilde_mat     = r_l * b_mat
/// Immutable after build; safe to share across sweep workers.
struct GeometryBundle {
  Mat xi_f;         // k x |X|
  Vec mu_f;         // k
  Mat b_mat;        // n x |X|
  Vec mu_a;         // n
  Vec a_py;         // n
  Vec b_tilde;      // n
  Mat m_l;          // n x n
  Mat r_l;          // r x n
  Vec j_diag;       // n, entries h'(b_tilde_i)
  Mat b_tilde_mat;  // r x |X|
  Vec sqrt_px;      // |X|
  Mat bayes_cond;   // n x |X|, column x is a_{P_{Y|X=x}}

  Index feature_dim() const { return xi_f.rows(); }
  Index action_dim() const { return a_py.size(); }
  Index num_x() const { return sqrt_px.size(); }
  Index rank() const { return r_l.rows(); }
};

/// Square-root factor of a symmetric PSD matrix via eigendecomposition:
/// rows sqrt(lambda_i) v_i' for eigenvalues above rel_clamp * lambda_max,
/// descending. Rank-deficient inputs simply produce fewer rows, which plain
/// Cholesky cannot do.
inline Mat psd_sqrt_factor(const Mat& m, double rel_clamp = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  if (es.info() != Eigen::Success) {
    throw Error("eigendecomposition failed on a PSD matrix");
  }
  const Vec& vals = es.eigenvalues();  // ascending
  const double lambda_max = std::max(vals(vals.size() - 1), 0.0);
  const double clamp = rel_clamp * lambda_max;
  Index r = 0;
  for (Index i = 0; i < vals.size(); ++i) {
    if (vals(i) > clamp && vals(i) > 0.0) ++r;
  }
  Mat factor(r, m.rows());
  for (Index out = 0; out < r; ++out) {
    const Index i = vals.size() - 1 - out;  // descending eigenvalues
    Vec v = es.eigenvectors().col(i);
    for (Index j = 0; j < v.size(); ++j) {
      if (std::abs(v(j)) > 1e-12) {
        if (v(j) < 0.0) v = -v;
        break;
      }
    }
    factor.row(out) = std::sqrt(vals(i)) * v.transpose();
  }
  return factor;
}

/// (xi_f, mu_f) of a k x |X| feature table under the P_X weights.
inline std::pair<Mat, Vec> centered_feature_matrix(const Mat& f_table,
                                                   const Vec& p_x) {
  if (f_table.cols() != p_x.size()) {
    throw Error("feature table has wrong number of columns");
  }
  Vec mu = f_table * p_x;
  Mat xi(f_table.rows(), f_table.cols());
  for (Index x = 0; x < f_table.cols(); ++x) {
    xi.col(x) = std::sqrt(p_x(x)) * (f_table.col(x) - mu);
  }
  return {std::move(xi), std::move(mu)};
}

/// Low-level assembly from precomputed Bayes actions. `a_py` is the marginal
/// Bayes action, `bayes_cond` the per-x conditional actions (columns).
inline GeometryBundle assemble_bundle(const JointDistribution& j,
                                      const Loss& model, const Activation& act,
                                      const Mat& f_table, Vec a_py,
                                      Mat bayes_cond) {
  GeometryBundle bundle;
  const Index nx = j.num_x();
  bundle.sqrt_px = j.px().cwiseSqrt();
  bundle.a_py = std::move(a_py);
  bundle.bayes_cond = std::move(bayes_cond);
  bundle.mu_a = bundle.bayes_cond * j.px();
  bundle.b_mat.resize(model.action_dim(), nx);
  for (Index x = 0; x < nx; ++x) {
    bundle.b_mat.col(x) =
        bundle.sqrt_px(x) * (bundle.bayes_cond.col(x) - bundle.mu_a);
  }
  auto [xi_f, mu_f] = centered_feature_matrix(f_table, j.px());
  bundle.xi_f = std::move(xi_f);
  bundle.mu_f = std::move(mu_f);
  bundle.b_tilde = act.inverse(bundle.a_py);  // throws OutOfImage when absent
  bundle.j_diag = act.deriv(bundle.b_tilde);
  bundle.m_l = hessian_ml_at(model, j.py(), bundle.a_py);
  bundle.r_l = psd_sqrt_factor(bundle.m_l);
  bundle.b_tilde_mat = bundle.r_l * bundle.b_mat;
  return bundle;
}

/// Builds the full bundle, solving the marginal and every conditional Bayes
/// problem with the given solver configuration.
inline GeometryBundle build_bundle(const JointDistribution& j,
                                   const Loss& model, const Activation& act,
                                   const Mat& f_table,
                                   const BayesSolverConfig& cfg = {}) {
  Vec a_py = bayes_action(model, j.py(), cfg).action;
  Mat cond(model.action_dim(), j.num_x());
  for (Index x = 0; x < j.num_x(); ++x) {
    cond.col(x) = bayes_action(model, j.conditional_y(x), cfg).action;
  }
  return assemble_bundle(j, model, act, f_table, std::move(a_py),
                         std::move(cond));
}

/// Exact weighted excess risk
///   sum_x P_X(x) D_L(a_{P_{Y|X=x}} || h(W'f(x) + b)),
/// the objective the surrogate approximates. W is k x n.
inline double true_objective(const JointDistribution& j, const Loss& model,
                             const Activation& act, const Mat& f_table,
                             const Mat& w, const Vec& b,
                             const BayesSolverConfig& cfg = {}) {
  double total = 0.0;
  for (Index x = 0; x < j.num_x(); ++x) {
    const Vec pre = w.transpose() * f_table.col(x) + b;
    const Vec action = act.eval(pre);
    total += j.px()(x) * divergence(model, j.conditional_y(x), action, cfg);
  }
  return total;
}

struct SurrogateValue {
  double total = 0.0;
  double frobenius_term = 0.0;  // (1/2) ||b_tilde_mat - xi_w xi_f||_F^2
  double eta_term = 0.0;        // (1/2) eta(d, f)
};

/// Quadratic surrogate of the weighted excess risk at (w, b, f):
///   (1/2) ||Btilde - Xi_W Xi_f||_F^2 + (1/2) eta(d, f)
/// with Xi_W = R_L J W', d = b - b_tilde, and
///   eta = v' M_L v,  v = a_py - mu_a + J d + J W' mu_f.
/// The feature table may differ from the one the bundle was built with.
inline SurrogateValue surrogate_objective(const GeometryBundle& bundle,
                                          const Mat& w, const Vec& b,
                                          const Mat& f_table) {
  auto [xi_f, mu_f] = centered_feature_matrix(f_table, bundle.sqrt_px.cwiseAbs2());
  const Mat xi_w = bundle.r_l * bundle.j_diag.asDiagonal() * w.transpose();
  const Vec d = b - bundle.b_tilde;
  const Vec v = bundle.a_py - bundle.mu_a +
                bundle.j_diag.asDiagonal() * (d + w.transpose() * mu_f);
  SurrogateValue out;
  out.frobenius_term = 0.5 * (bundle.b_tilde_mat - xi_w * xi_f).squaredNorm();
  out.eta_term = 0.5 * v.dot(bundle.m_l * v);
  out.total = out.frobenius_term + out.eta_term;
  return out;
}

}  // namespace geomlens
