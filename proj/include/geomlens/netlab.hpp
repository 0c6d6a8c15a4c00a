#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "geomlens/activations.hpp"
#include "geomlens/dist.hpp"
#include "geomlens/errors.hpp"
#include "geomlens/losses.hpp"
#include "geomlens/prng.hpp"

namespace geomlens {

// Weight matrices are fan_in x fan_out; a layer maps v to act(w' v + b).
struct NetLayer {
  Mat w;
  Vec b;
  Activation act = Activation::identity();
};

/// Reference feedforward network over a finite input alphabet. The input
/// encoding is fixed to one-hot, so the input layer width always equals |X|.
struct NetworkParams {
  Index input_dim = 0;
  std::vector<NetLayer> hidden;
  NetLayer output;

  void validate() const {
    Index prev = input_dim;
    if (prev < 1) throw ConfigError("network input dimension must be >= 1");
    for (const NetLayer& layer : hidden) {
      if (layer.w.rows() != prev || layer.b.size() != layer.w.cols()) {
        throw ConfigError("hidden layer dimensions are inconsistent");
      }
      if (!layer.w.allFinite() || !layer.b.allFinite()) {
        throw ConfigError("network has non-finite parameters");
      }
      prev = layer.w.cols();
    }
    if (output.w.rows() != prev || output.b.size() != output.w.cols()) {
      throw ConfigError("output layer dimensions are inconsistent");
    }
    if (!output.w.allFinite() || !output.b.allFinite()) {
      throw ConfigError("network has non-finite parameters");
    }
  }

  Index feature_dim() const {
    return hidden.empty() ? input_dim : hidden.back().w.cols();
  }
  Index action_dim() const { return output.w.cols(); }
};

struct ForwardPass {
  std::vector<Vec> features;         // f^(0) .. f^(m)
  std::vector<Vec> pre_activations;  // z^(1) .. z^(m), then the output z
  Vec action;
};

inline ForwardPass forward(const NetworkParams& net, Index x) {
  if (x < 0 || x >= net.input_dim) throw Error("input symbol out of range");
  ForwardPass pass;
  Vec v = Vec::Zero(net.input_dim);
  v(x) = 1.0;
  pass.features.push_back(v);
  for (const NetLayer& layer : net.hidden) {
    Vec z = layer.w.transpose() * v + layer.b;
    v = layer.act.eval(z);
    pass.pre_activations.push_back(std::move(z));
    pass.features.push_back(v);
  }
  Vec z_out = net.output.w.transpose() * v + net.output.b;
  pass.action = net.output.act.eval(z_out);
  pass.pre_activations.push_back(std::move(z_out));
  return pass;
}

/// k_i x |X| table of layer-i features (layer 0 is the one-hot input).
inline Mat feature_table(const NetworkParams& net, std::size_t layer) {
  Mat table;
  for (Index x = 0; x < net.input_dim; ++x) {
    const ForwardPass pass = forward(net, x);
    const Vec& f = pass.features.at(layer);
    if (x == 0) table.resize(f.size(), net.input_dim);
    table.col(x) = f;
  }
  return table;
}

inline Mat action_table(const NetworkParams& net) {
  Mat table(net.action_dim(), net.input_dim);
  for (Index x = 0; x < net.input_dim; ++x) {
    table.col(x) = forward(net, x).action;
  }
  return table;
}

/// Exact empirical risk sum_{x,y} P_XY(x,y) L(y, a(x)); no sampling.
inline double empirical_risk(const NetworkParams& net,
                             const JointDistribution& j, const Loss& model) {
  if (net.input_dim != j.num_x()) throw ConfigError("network/distribution mismatch");
  double total = 0.0;
  for (Index x = 0; x < j.num_x(); ++x) {
    const Vec action = forward(net, x).action;
    for (Index y = 0; y < j.num_y(); ++y) {
      total += j.pxy()(x, y) * model.loss(y, action);
    }
  }
  return total;
}

/// The x-separable floor of the risk: sum_x P_X(x) E[L(Y, a_{P_Y|X=x})].
/// empirical_risk decomposes exactly as this plus the weighted divergence.
inline double lower_bound_risk(const JointDistribution& j, const Loss& model,
                               const BayesSolverConfig& cfg = {}) {
  double total = 0.0;
  for (Index x = 0; x < j.num_x(); ++x) {
    total += j.px()(x) * bayes_action(model, j.conditional_y(x), cfg).risk;
  }
  return total;
}

struct NetGradients {
  std::vector<Mat> hidden_w;
  std::vector<Vec> hidden_b;
  Mat out_w;
  Vec out_b;

  double squared_norm() const {
    double s = out_w.squaredNorm() + out_b.squaredNorm();
    for (const Mat& m : hidden_w) s += m.squaredNorm();
    for (const Vec& v : hidden_b) s += v.squaredNorm();
    return s;
  }
};

/// Analytic full-batch gradient of the empirical risk via backpropagation.
inline NetGradients risk_gradient(const NetworkParams& net,
                                  const JointDistribution& j,
                                  const Loss& model) {
  NetGradients g;
  g.out_w = Mat::Zero(net.output.w.rows(), net.output.w.cols());
  g.out_b = Vec::Zero(net.output.b.size());
  for (const NetLayer& layer : net.hidden) {
    g.hidden_w.push_back(Mat::Zero(layer.w.rows(), layer.w.cols()));
    g.hidden_b.push_back(Vec::Zero(layer.b.size()));
  }
  const std::size_t m = net.hidden.size();
  for (Index x = 0; x < j.num_x(); ++x) {
    const ForwardPass pass = forward(net, x);
    Vec dloss = Vec::Zero(net.action_dim());
    for (Index y = 0; y < j.num_y(); ++y) {
      dloss += j.pxy()(x, y) * model.loss_grad(y, pass.action);
    }
    Vec delta =
        net.output.act.deriv(pass.pre_activations[m]).cwiseProduct(dloss);
    g.out_w.noalias() += pass.features[m] * delta.transpose();
    g.out_b += delta;
    Vec carry = net.output.w * delta;
    for (std::size_t i = m; i-- > 0;) {
      delta = net.hidden[i].act.deriv(pass.pre_activations[i]).cwiseProduct(carry);
      g.hidden_w[i].noalias() += pass.features[i] * delta.transpose();
      g.hidden_b[i] += delta;
      if (i > 0) carry = net.hidden[i].w * delta;
    }
  }
  return g;
}

struct TrainConfig {
  double lr = 0.1;
  int steps = 1000;
  std::uint64_t seed = 0;   // recorded for traceability; training is exact GD
  double armijo_c = 1e-4;
  double shrink = 0.5;
  int max_halvings = 60;
  double divergence_threshold = 1e6;
};

struct TrainResult {
  NetworkParams net;
  std::vector<double> risk_trace;  // initial risk, then one entry per step
  int steps_taken = 0;
};

using TrainObserver =
    std::function<void(int step, const NetworkParams& net, double risk)>;

/// Deterministic full-batch gradient descent with backtracking step control;
/// the risk trace is monotone non-increasing. Training stops early when the
/// line search cannot reduce the risk any further.
inline TrainResult train(NetworkParams net, const JointDistribution& j,
                         const Loss& model, const TrainConfig& cfg,
                         const TrainObserver& observer = nullptr) {
  net.validate();
  const auto apply_step = [](const NetworkParams& base, const NetGradients& g,
                             double t) {
    NetworkParams out = base;
    out.output.w -= t * g.out_w;
    out.output.b -= t * g.out_b;
    for (std::size_t i = 0; i < out.hidden.size(); ++i) {
      out.hidden[i].w -= t * g.hidden_w[i];
      out.hidden[i].b -= t * g.hidden_b[i];
    }
    return out;
  };

  TrainResult result;
  double risk = empirical_risk(net, j, model);
  result.risk_trace.push_back(risk);
  if (observer) observer(0, net, risk);
  // the accepted step size carries over between steps (doubled on success);
  // when the Armijo margin is below the objective's float resolution the
  // acceptance degrades to plain non-increase, as in the Bayes solver
  double t = cfg.lr;
  const double t_cap = cfg.lr * 1e6;
  for (int step = 1; step <= cfg.steps; ++step) {
    if (!std::isfinite(risk) || risk > cfg.divergence_threshold) {
      throw TrainingDivergence("risk exceeded the divergence threshold");
    }
    const NetGradients grad = risk_gradient(net, j, model);
    const double gn2 = grad.squared_norm();
    bool accepted = false;
    for (int h = 0; h <= cfg.max_halvings; ++h) {
      NetworkParams trial = apply_step(net, grad, t);
      double trial_risk;
      try {
        trial_risk = empirical_risk(trial, j, model);
      } catch (const InadmissibleAction&) {
        t *= cfg.shrink;
        continue;
      }
      const double margin = cfg.armijo_c * t * gn2;
      const double resolution = 8.0 * std::numeric_limits<double>::epsilon() *
                                std::max(1.0, std::abs(risk));
      if (trial_risk <= risk - margin ||
          (margin < resolution && trial_risk <= risk)) {
        net = std::move(trial);
        risk = trial_risk;
        accepted = true;
        break;
      }
      t *= cfg.shrink;
    }
    if (!accepted) break;
    t = std::min(t * 2.0, t_cap);
    result.risk_trace.push_back(risk);
    result.steps_taken = step;
    if (observer) observer(step, net, risk);
  }
  result.net = std::move(net);
  return result;
}

/// Seeded uniform initialization in [-s, s] with s = 1 / sqrt(fan_in);
/// biases start at zero. Entries are drawn row-major, layer by layer.
inline NetworkParams init_network(Index num_x,
                                  const std::vector<Index>& hidden_widths,
                                  const std::vector<Activation>& hidden_acts,
                                  Index out_dim, const Activation& out_act,
                                  std::uint64_t seed) {
  if (hidden_acts.size() != hidden_widths.size()) {
    throw ConfigError("one activation per hidden layer required");
  }
  Xoshiro256 rng(seed);
  const auto fill = [&rng](Mat& w) {
    const double s = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-s, s);
    }
  };
  NetworkParams net;
  net.input_dim = num_x;
  Index prev = num_x;
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
    NetLayer layer;
    layer.w.resize(prev, hidden_widths[i]);
    fill(layer.w);
    layer.b = Vec::Zero(hidden_widths[i]);
    layer.act = hidden_acts[i];
    prev = hidden_widths[i];
    net.hidden.push_back(std::move(layer));
  }
  net.output.w.resize(prev, out_dim);
  fill(net.output.w);
  net.output.b = Vec::Zero(out_dim);
  net.output.act = out_act;
  net.validate();
  return net;
}

/// Warm start for local-regime experiments: output bias at b_tilde and the
/// output weights shrunk to O(scale), so all output pre-activations start
/// within O(scale) of b_tilde.
inline void warm_start(NetworkParams& net, const Vec& b_tilde, double scale) {
  if (b_tilde.size() != net.output.b.size()) {
    throw ConfigError("b_tilde size does not match the output layer");
  }
  net.output.b = b_tilde;
  net.output.w *= scale;
}

}  // namespace geomlens
