#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "geomlens/errors.hpp"
#include "geomlens/geometry.hpp"
#include "geomlens/linalg.hpp"

namespace geomlens {

/// Thin SVD with a deterministic sign convention: the first nonzero entry of
/// each left singular vector is positive.
struct Svd {
  Mat u;      // rows x m
  Vec sigma;  // m, descending
  Mat v;      // cols x m
};

inline Svd deterministic_svd(const Mat& m) {
  Svd out;
  if (m.rows() == 0 || m.cols() == 0) {
    out.u.resize(m.rows(), 0);
    out.sigma.resize(0);
    out.v.resize(m.cols(), 0);
    return out;
  }
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.u = svd.matrixU();
  out.sigma = svd.singularValues();
  out.v = svd.matrixV();
  for (Index i = 0; i < out.sigma.size(); ++i) {
    for (Index j = 0; j < out.u.rows(); ++j) {
      if (std::abs(out.u(j, i)) > 1e-12) {
        if (out.u(j, i) < 0.0) {
          out.u.col(i) = -out.u.col(i);
          out.v.col(i) = -out.v.col(i);
        }
        break;
      }
    }
  }
  return out;
}

struct TruncatedSvd {
  Mat u_k;      // rows x k
  Vec sigma_k;  // k
  Mat v_k;      // cols x k
};

inline TruncatedSvd truncated_svd(const Mat& m, Index k) {
  if (k < 1 || k > std::min(m.rows(), m.cols())) {
    throw RankTooLarge("truncation rank outside [1, min(rows, cols)]");
  }
  const Svd svd = deterministic_svd(m);
  TruncatedSvd out;
  out.u_k = svd.u.leftCols(k);
  out.sigma_k = svd.sigma.head(k);
  out.v_k = svd.v.leftCols(k);
  return out;
}

namespace detail {

// Solve G X = RHS for symmetric positive-definite G with a condition-number
// guard; rank-deficient feature Grams surface as SingularGram.
inline Mat gram_solve(const Mat& gram, const Mat& rhs) {
  Eigen::SelfAdjointEigenSolver<Mat> es(gram);
  if (es.info() != Eigen::Success) throw SingularGram("Gram eigensolve failed");
  const Vec& vals = es.eigenvalues();
  const double vmax = vals(vals.size() - 1);
  const double vmin = vals(0);
  if (vmax <= 0.0 || vmin <= vmax / 1e12) {
    throw SingularGram("Gram matrix numerically singular");
  }
  return es.eigenvectors() *
         vals.cwiseInverse().asDiagonal() *
         (es.eigenvectors().transpose() * rhs);
}

inline Mat pseudo_inverse(const Mat& m, double rel_tol = 1e-12) {
  const Svd svd = deterministic_svd(m);
  if (svd.sigma.size() == 0) return Mat::Zero(m.cols(), m.rows());
  const double cutoff = rel_tol * svd.sigma(0);
  Vec inv = Vec::Zero(svd.sigma.size());
  for (Index i = 0; i < svd.sigma.size(); ++i) {
    if (svd.sigma(i) > cutoff) inv(i) = 1.0 / svd.sigma(i);
  }
  return svd.v * inv.asDiagonal() * svd.u.transpose();
}

inline Vec j_inverse_apply(const GeometryBundle& bundle, const Vec& v) {
  if ((bundle.j_diag.array().abs() <= 0.0).any()) {
    throw SingularGram("activation Jacobian not invertible at b_tilde");
  }
  return v.cwiseQuotient(bundle.j_diag);
}

}  // namespace detail

/// Weight-side closed form for a fixed feature matrix:
///   xi_w = Btilde xi_f' (xi_f xi_f')^-1,
///   d    = -W' mu_f + J^-1 (mu_a - a_py),
/// where W is recovered from xi_w modulo the nullspace of M_L.
struct WeightOpt {
  Mat xi_w;  // r x k
  Vec d;     // n
  Mat w;     // k x n, one representative of the quotient
};

inline WeightOpt optimal_weight(const GeometryBundle& bundle, const Mat& xi_f,
                                const Vec& mu_f) {
  WeightOpt out;
  const Mat gram = xi_f * xi_f.transpose();
  out.xi_w = detail::gram_solve(gram, xi_f * bundle.b_tilde_mat.transpose())
                 .transpose();
  const Mat w_t = detail::pseudo_inverse(bundle.r_l) * out.xi_w;  // n x k, J'd next
  Mat w_transpose(w_t.rows(), w_t.cols());
  for (Index i = 0; i < w_t.rows(); ++i) {
    w_transpose.row(i) = w_t.row(i) / bundle.j_diag(i);
  }
  out.w = w_transpose.transpose();
  out.d = -w_transpose * mu_f +
          detail::j_inverse_apply(bundle, bundle.mu_a - bundle.a_py);
  return out;
}

/// Feature-side closed form for fixed weights:
///   xi_f = (xi_w' xi_w)^-1 xi_w' Btilde,
///   mu_f = -(xi_w' xi_w)^-1 xi_w' R_L (a_py - mu_a + J d).
struct FeatureOpt {
  Mat xi_f;  // k x |X|
  Vec mu_f;  // k
};

inline FeatureOpt optimal_feature(const GeometryBundle& bundle,
                                  const Mat& xi_w, const Vec& d) {
  FeatureOpt out;
  const Mat gram = xi_w.transpose() * xi_w;
  out.xi_f = detail::gram_solve(gram, xi_w.transpose() * bundle.b_tilde_mat);
  const Vec rhs =
      bundle.r_l * (bundle.a_py - bundle.mu_a +
                    bundle.j_diag.asDiagonal() * d);
  out.mu_f = -detail::gram_solve(gram, xi_w.transpose() * rhs);
  return out;
}

/// Per-layer closed-form optimum plus the spectral data that certifies it.
struct LayerAnalysis {
  Mat xi_w_star;           // r x k
  Mat xi_f_star;           // k x |X|
  Vec d_star;              // n
  Vec mu_f_star;           // k
  Vec singular_values;     // all singular values of b_tilde_mat, descending
  Index rank_k = 0;        // requested k
  double ey_bound = 0.0;   // sum_{i>k} sigma_i^2
  double achieved_frobenius = 0.0;  // ||Btilde - xi_w xi_f||_F^2
  int iterations = 0;      // 0 for the direct SVD route
};

namespace detail {

inline double tail_energy(const Vec& sigma, Index k) {
  double s = 0.0;
  for (Index i = k; i < sigma.size(); ++i) s += sigma(i) * sigma(i);
  return s;
}

inline void check_rank(const GeometryBundle& bundle, Index k) {
  if (k < 1 || k > std::min(bundle.action_dim(), bundle.num_x())) {
    throw RankTooLarge("k must lie in [1, min(n, |X|)]");
  }
}

}  // namespace detail

/// Joint optimum: balanced factorization of the best rank-k approximant,
///   xi_w = U_k S_k^{1/2},  xi_f = S_k^{1/2} V_k',
/// with mu_f = 0 and d = J^-1 (mu_a - a_py), which zeroes eta exactly.
inline LayerAnalysis solve_layer(const GeometryBundle& bundle, Index k) {
  detail::check_rank(bundle, k);
  const Svd svd = deterministic_svd(bundle.b_tilde_mat);
  const Index kk = std::min<Index>(k, svd.sigma.size());
  LayerAnalysis out;
  out.rank_k = k;
  out.singular_values = svd.sigma;
  out.xi_w_star = Mat::Zero(bundle.rank(), k);
  out.xi_f_star = Mat::Zero(k, bundle.num_x());
  const Vec sqrt_sigma = svd.sigma.head(kk).cwiseSqrt();
  out.xi_w_star.leftCols(kk) = svd.u.leftCols(kk) * sqrt_sigma.asDiagonal();
  out.xi_f_star.topRows(kk) =
      sqrt_sigma.asDiagonal() * svd.v.leftCols(kk).transpose();
  out.d_star = detail::j_inverse_apply(bundle, bundle.mu_a - bundle.a_py);
  out.mu_f_star = Vec::Zero(k);
  out.ey_bound = detail::tail_energy(svd.sigma, kk);
  out.achieved_frobenius =
      (bundle.b_tilde_mat - out.xi_w_star * out.xi_f_star).squaredNorm();
  return out;
}

/// Alternating least squares on the two factors, i.e. power iteration on the
/// product. Convergence is measured on the product because the factors are
/// gauge-free. Requires a spectral gap at k; a converged product that is not
/// the dominant-subspace one (degenerate init) raises NonConvergence rather
/// than returning silently.
inline LayerAnalysis alternate(const GeometryBundle& bundle, Index k,
                               const Mat& init_xi_f, int max_iter, double tol,
                               std::vector<double>* frobenius_trace = nullptr) {
  detail::check_rank(bundle, k);
  if (init_xi_f.rows() != k || init_xi_f.cols() != bundle.num_x()) {
    throw ConfigError("init feature matrix has the wrong shape");
  }
  const Svd svd = deterministic_svd(bundle.b_tilde_mat);
  const Index nsv = svd.sigma.size();
  const double sigma1 = nsv > 0 ? svd.sigma(0) : 0.0;
  const double sigma_k = k <= nsv ? svd.sigma(k - 1) : 0.0;
  const double sigma_k1 = k + 1 <= nsv ? svd.sigma(k) : 0.0;
  if (sigma_k - sigma_k1 < 1e-3 * sigma1) {
    throw NoGap("spectral gap at k too small for power iteration");
  }

  Mat xi_f = init_xi_f;
  Mat xi_w;
  Mat product = Mat::Zero(bundle.rank(), bundle.num_x());
  bool converged = false;
  int used = 0;
  for (int it = 0; it < max_iter; ++it) {
    xi_w = detail::gram_solve(xi_f * xi_f.transpose(),
                              xi_f * bundle.b_tilde_mat.transpose())
               .transpose();
    xi_f = detail::gram_solve(xi_w.transpose() * xi_w,
                              xi_w.transpose() * bundle.b_tilde_mat);
    const Mat next = xi_w * xi_f;
    if (frobenius_trace) {
      frobenius_trace->push_back(
          0.5 * (bundle.b_tilde_mat - next).squaredNorm());
    }
    used = it + 1;
    if ((next - product).norm() <= tol) {
      product = next;
      converged = true;
      break;
    }
    product = next;
  }
  if (!converged) {
    throw NonConvergence("alternating updates did not converge");
  }
  const Index kk = std::min<Index>(k, nsv);
  const Mat target = svd.u.leftCols(kk) * svd.sigma.head(kk).asDiagonal() *
                     svd.v.leftCols(kk).transpose();
  if ((product - target).norm() > std::max(1e-6, 10.0 * tol)) {
    throw NonConvergence(
        "alternating updates converged away from the dominant subspace");
  }

  LayerAnalysis out;
  out.rank_k = k;
  out.singular_values = svd.sigma;
  out.xi_w_star = xi_w;
  out.xi_f_star = xi_f;
  out.d_star = detail::j_inverse_apply(bundle, bundle.mu_a - bundle.a_py);
  out.mu_f_star = Vec::Zero(k);
  out.ey_bound = detail::tail_energy(svd.sigma, kk);
  out.achieved_frobenius = (bundle.b_tilde_mat - product).squaredNorm();
  out.iterations = used;
  return out;
}

/// Largest principal angle (radians) between the row spaces of `a` and `b`.
inline double max_principal_angle(const Mat& a, const Mat& b,
                                  double rank_tol = 1e-10) {
  const auto basis = [rank_tol](const Mat& m) {
    const Svd svd = deterministic_svd(Mat(m.transpose()));
    Index r = 0;
    const double cutoff =
        svd.sigma.size() > 0 ? rank_tol * std::max(svd.sigma(0), 1.0) : 0.0;
    while (r < svd.sigma.size() && svd.sigma(r) > cutoff) ++r;
    return Mat(svd.u.leftCols(r));
  };
  const Mat qa = basis(a);
  const Mat qb = basis(b);
  if (qa.cols() == 0 || qb.cols() == 0) {
    return qa.cols() == qb.cols() ? 0.0 : M_PI / 2.0;
  }
  const Svd overlap = deterministic_svd(Mat(qa.transpose() * qb));
  const Index pairs = std::min(qa.cols(), qb.cols());
  double min_cos = 1.0;
  for (Index i = 0; i < pairs; ++i) {
    min_cos = std::min(min_cos, overlap.sigma(i));
  }
  if (qa.cols() != qb.cols()) return M_PI / 2.0;
  return std::acos(std::clamp(min_cos, -1.0, 1.0));
}

}  // namespace geomlens
