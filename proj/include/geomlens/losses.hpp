#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <utility>

#include "geomlens/errors.hpp"
#include "geomlens/linalg.hpp"

namespace geomlens {

struct BayesSolverConfig {
  double target_grad_norm = 1e-10;  // descent stops here
  double accept_grad_norm = 1e-9;   // above this at the cap is NonConvergence
  int max_iterations = 100000;
  double armijo_c = 1e-4;
  double backtrack_shrink = 0.5;
  double initial_step = 1.0;
  std::optional<Vec> init;  // required for losses without a closed form
};

struct BayesSolution {
  enum class Method { ClosedForm, Numeric };
  Vec action;
  double risk = 0.0;
  double gradient_norm = 0.0;  // exactly 0 recorded for closed forms
  Method method = Method::ClosedForm;
};

/// Loss interface: evaluation, analytic gradient in the action, and optional
/// closed forms for the Bayes action and the Hessian at the Bayes point.
/// Implementations are immutable and shareable.
class Loss {
 public:
  virtual ~Loss() = default;
  virtual Index action_dim() const = 0;
  virtual Index num_labels() const = 0;
  virtual bool admissible(const Vec& a) const = 0;
  virtual double loss(Index y, const Vec& a) const = 0;
  virtual Vec loss_grad(Index y, const Vec& a) const = 0;
  virtual std::optional<Vec> closed_form_bayes(const Vec&) const {
    return std::nullopt;
  }
  virtual std::optional<Mat> closed_form_hessian(const Vec&) const {
    return std::nullopt;
  }
};

/// Negative log-likelihood of the normalized action,
/// L(y, a) = -log(a_y / sum(a)). Admissible actions have every coordinate
/// positive; the loss is invariant to positive scaling of a.
class LogLoss final : public Loss {
 public:
  explicit LogLoss(Index num_labels) : n_(num_labels) {}

  Index action_dim() const override { return n_; }
  Index num_labels() const override { return n_; }

  bool admissible(const Vec& a) const override {
    return a.size() == n_ && (a.array() > 0.0).all();
  }

  double loss(Index y, const Vec& a) const override {
    check(y, a);
    return -std::log(a(y)) + std::log(a.sum());
  }

  Vec loss_grad(Index y, const Vec& a) const override {
    check(y, a);
    Vec g = Vec::Constant(n_, 1.0 / a.sum());
    g(y) -= 1.0 / a(y);
    return g;
  }

  // Bayes set is the ray {alpha q : alpha > 0}; the alpha = 1 representative
  // is fixed here and everywhere downstream.
  std::optional<Vec> closed_form_bayes(const Vec& q) const override {
    return q;
  }

  // (M_L)_{y,y'} = delta(y,y') / q(y) - 1 at the representative a = q.
  std::optional<Mat> closed_form_hessian(const Vec& q) const override {
    Mat m = Mat::Constant(n_, n_, -1.0);
    m.diagonal() += q.cwiseInverse();
    return m;
  }

 private:
  void check(Index y, const Vec& a) const {
    if (y < 0 || y >= n_) throw InadmissibleAction("label out of range");
    if (!admissible(a)) {
      throw InadmissibleAction("log loss needs strictly positive actions");
    }
  }
  Index n_;
};

/// Half mean-square error against a fixed embedding of the labels,
/// L(y, a) = 0.5 ||y_vec - a||^2 with y_vec the row of `y_values` for y.
class SquaredError final : public Loss {
 public:
  explicit SquaredError(Mat y_values) : y_values_(std::move(y_values)) {}

  /// Scalar labels embedded as 1-vectors.
  static SquaredError scalar(const Vec& y_values) {
    Mat m(y_values.size(), 1);
    m.col(0) = y_values;
    return SquaredError(std::move(m));
  }

  Index action_dim() const override { return y_values_.cols(); }
  Index num_labels() const override { return y_values_.rows(); }
  const Mat& y_values() const { return y_values_; }

  bool admissible(const Vec& a) const override {
    return a.size() == y_values_.cols() && a.allFinite();
  }

  double loss(Index y, const Vec& a) const override {
    check(y, a);
    return 0.5 * (y_values_.row(y).transpose() - a).squaredNorm();
  }

  Vec loss_grad(Index y, const Vec& a) const override {
    check(y, a);
    return a - y_values_.row(y).transpose();
  }

  // a_q = E_q[Y]
  std::optional<Vec> closed_form_bayes(const Vec& q) const override {
    return y_values_.transpose() * q;
  }

  std::optional<Mat> closed_form_hessian(const Vec& q) const override {
    (void)q;
    return Mat::Identity(y_values_.cols(), y_values_.cols());
  }

 private:
  void check(Index y, const Vec& a) const {
    if (y < 0 || y >= num_labels()) throw InadmissibleAction("label out of range");
    if (!admissible(a)) throw InadmissibleAction("action has wrong shape");
  }
  Mat y_values_;  // |Y| x n
};

inline double expected_loss(const Loss& model, const Vec& q, const Vec& a) {
  double total = 0.0;
  for (Index y = 0; y < q.size(); ++y) total += q(y) * model.loss(y, a);
  return total;
}

inline Vec expected_loss_grad(const Loss& model, const Vec& q, const Vec& a) {
  Vec g = Vec::Zero(a.size());
  for (Index y = 0; y < q.size(); ++y) g += q(y) * model.loss_grad(y, a);
  return g;
}

namespace detail {

inline double risk_or_inf(const Loss& model, const Vec& q, const Vec& a) {
  if (!model.admissible(a)) return std::numeric_limits<double>::infinity();
  return expected_loss(model, q, a);
}

// Full-gradient descent with Armijo backtracking. Deterministic; used for
// losses without a closed-form Bayes action. The accepted step size carries
// over between iterations (doubled on success). Once the Armijo margin
// c t |g|^2 falls below the floating-point resolution of the objective, the
// backtracking criterion switches to gradient-norm descent: the objective can
// no longer register the decrease there, but the iterate still contracts and
// the analytic gradient keeps shrinking down to arithmetic noise.
inline BayesSolution numeric_bayes(const Loss& model, const Vec& q,
                                   const BayesSolverConfig& cfg) {
  Vec a = cfg.init ? *cfg.init : Vec::Zero(model.action_dim());
  if (!model.admissible(a)) {
    throw InadmissibleAction("numeric Bayes solver started outside the admissible set");
  }
  double f = expected_loss(model, q, a);
  Vec g = expected_loss_grad(model, q, a);
  double step = cfg.initial_step;
  const double step_cap = cfg.initial_step * 1e8;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const double gn2 = g.squaredNorm();
    if (std::sqrt(gn2) <= cfg.target_grad_norm) break;
    const double resolution = 8.0 * std::numeric_limits<double>::epsilon() *
                              std::max(1.0, std::abs(f));
    bool accepted = false;
    std::optional<Vec> next_grad;
    for (int halvings = 0; halvings < 200; ++halvings) {
      const Vec trial = a - step * g;
      if ((trial.array() == a.array()).all()) break;  // below representable movement
      const double margin = cfg.armijo_c * step * gn2;
      if (margin >= resolution) {
        const double f_trial = risk_or_inf(model, q, trial);
        if (f_trial <= f - margin) {
          a = trial;
          f = f_trial;
          accepted = true;
          break;
        }
      } else if (model.admissible(trial)) {
        Vec g_trial = expected_loss_grad(model, q, trial);
        if (g_trial.squaredNorm() < gn2) {
          a = trial;
          f = expected_loss(model, q, trial);
          next_grad = std::move(g_trial);
          accepted = true;
          break;
        }
      }
      step *= cfg.backtrack_shrink;
    }
    if (!accepted) break;
    step = std::min(step * 2.0, step_cap);
    g = next_grad ? std::move(*next_grad) : expected_loss_grad(model, q, a);
  }
  BayesSolution sol;
  sol.action = a;
  sol.risk = f;
  sol.gradient_norm = g.norm();
  sol.method = BayesSolution::Method::Numeric;
  if (sol.gradient_norm > cfg.accept_grad_norm) {
    throw NonConvergence("numeric Bayes solver stalled with gradient norm " +
                         std::to_string(sol.gradient_norm));
  }
  return sol;
}

}  // namespace detail

/// Minimizer of a |-> E_{Y~q}[L(Y, a)]: closed form when the loss provides
/// one, otherwise deterministic gradient descent.
inline BayesSolution bayes_action(const Loss& model, const Vec& q,
                                  const BayesSolverConfig& cfg = {}) {
  if (q.size() != model.num_labels()) {
    throw InadmissibleAction("distribution size does not match the loss");
  }
  if (q.minCoeff() <= 0.0) {
    throw InvalidDistribution("Bayes action needs a strictly positive distribution");
  }
  if (auto closed = model.closed_form_bayes(q)) {
    BayesSolution sol;
    sol.action = std::move(*closed);
    sol.risk = expected_loss(model, q, sol.action);
    sol.gradient_norm = 0.0;
    sol.method = BayesSolution::Method::ClosedForm;
    return sol;
  }
  return detail::numeric_bayes(model, q, cfg);
}

/// D_L(a_q || a) = E_q[L(Y, a)] - E_q[L(Y, a_q)]; non-negative, zero exactly
/// on the Bayes set.
inline double divergence(const Loss& model, const Vec& q, const Vec& a,
                         const BayesSolverConfig& cfg = {}) {
  const BayesSolution best = bayes_action(model, q, cfg);
  return expected_loss(model, q, a) - best.risk;
}

/// Symmetrized central-difference Hessian of a |-> E_q[L(Y, a)] at `at`.
/// Step per coordinate: cbrt(machine epsilon) * max(1, |a_i|).
inline Mat fd_expected_loss_hessian(const Loss& model, const Vec& q,
                                    const Vec& at) {
  const Index n = at.size();
  const double base = std::cbrt(std::numeric_limits<double>::epsilon());
  Vec h(n);
  for (Index i = 0; i < n; ++i) h(i) = base * std::max(1.0, std::abs(at(i)));
  const auto f = [&](const Vec& a) { return expected_loss(model, q, a); };
  const double f0 = f(at);
  Mat hess(n, n);
  for (Index i = 0; i < n; ++i) {
    Vec ap = at, am = at;
    ap(i) += h(i);
    am(i) -= h(i);
    hess(i, i) = (f(ap) - 2.0 * f0 + f(am)) / (h(i) * h(i));
    for (Index j = i + 1; j < n; ++j) {
      Vec pp = at, pm = at, mp = at, mm = at;
      pp(i) += h(i); pp(j) += h(j);
      pm(i) += h(i); pm(j) -= h(j);
      mp(i) -= h(i); mp(j) += h(j);
      mm(i) -= h(i); mm(j) -= h(j);
      const double v = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h(i) * h(j));
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return 0.5 * (hess + hess.transpose());
}

/// Hessian M_L of the expected loss at the Bayes action: analytic for the
/// closed-form losses, finite differences otherwise.
inline Mat hessian_ml(const Loss& model, const Vec& q,
                      const BayesSolverConfig& cfg = {}) {
  if (auto closed = model.closed_form_hessian(q)) return *closed;
  const BayesSolution sol = bayes_action(model, q, cfg);
  return fd_expected_loss_hessian(model, q, sol.action);
}

/// Same, but at an already-solved Bayes action.
inline Mat hessian_ml_at(const Loss& model, const Vec& q, const Vec& a_q) {
  if (auto closed = model.closed_form_hessian(q)) return *closed;
  return fd_expected_loss_hessian(model, q, a_q);
}

}  // namespace geomlens
