#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "geomlens/errors.hpp"
#include "geomlens/geometry.hpp"
#include "geomlens/losses.hpp"
#include "geomlens/lowrank.hpp"
#include "geomlens/netlab.hpp"

namespace geomlens {

/// The fixed downstream portion of a network: layers i+1..m and the output
/// layer, ending in a base loss. Defines the composite layer loss
/// L^(i)(y, a) = L(y, g o g^(m) o ... o g^(i+1)(a)).
class DownstreamStack {
 public:
  DownstreamStack(std::vector<NetLayer> layers,
                  std::shared_ptr<const Loss> base)
      : layers_(std::move(layers)), base_(std::move(base)) {
    if (!base_) throw ConfigError("downstream stack needs a base loss");
    Index dim = input_dim();
    for (const NetLayer& layer : layers_) {
      if (layer.w.rows() != dim) {
        throw ConfigError("downstream stack dimensions are inconsistent");
      }
      dim = layer.w.cols();
    }
    if (dim != base_->action_dim()) {
      throw ConfigError("downstream stack output does not match the base loss");
    }
  }

  Index input_dim() const {
    return layers_.empty() ? base_->action_dim() : layers_.front().w.rows();
  }
  const Loss& base_loss() const { return *base_; }
  std::shared_ptr<const Loss> base_loss_ptr() const { return base_; }
  const std::vector<NetLayer>& layers() const { return layers_; }

  bool contains_leaky_relu() const {
    for (const NetLayer& layer : layers_) {
      if (layer.act.kind() == Activation::Kind::LeakyRelu) return true;
    }
    return false;
  }

  Vec forward(const Vec& a) const {
    Vec v = a;
    for (const NetLayer& layer : layers_) {
      v = layer.act.eval(layer.w.transpose() * v + layer.b);
    }
    return v;
  }

  double loss(Index y, const Vec& a) const {
    return base_->loss(y, forward(a));
  }

  /// Analytic chain-rule gradient of the composite loss in the action.
  Vec loss_grad(Index y, const Vec& a) const {
    std::vector<Vec> zs;
    zs.reserve(layers_.size());
    Vec v = a;
    for (const NetLayer& layer : layers_) {
      Vec z = layer.w.transpose() * v + layer.b;
      v = layer.act.eval(z);
      zs.push_back(std::move(z));
    }
    Vec g = base_->loss_grad(y, v);
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = layers_[i].w * layers_[i].act.deriv(zs[i]).cwiseProduct(g);
    }
    return g;
  }

 private:
  std::vector<NetLayer> layers_;
  std::shared_ptr<const Loss> base_;
};

/// The composite layer loss as a Loss, so the Bayes machinery and the bundle
/// builder apply to hidden layers unchanged. No closed forms; the numeric
/// solver and finite-difference Hessians do the work.
class CompositeLoss final : public Loss {
 public:
  explicit CompositeLoss(DownstreamStack stack) : stack_(std::move(stack)) {}

  Index action_dim() const override { return stack_.input_dim(); }
  Index num_labels() const override { return stack_.base_loss().num_labels(); }

  bool admissible(const Vec& a) const override {
    if (a.size() != stack_.input_dim() || !a.allFinite()) return false;
    return stack_.base_loss().admissible(stack_.forward(a));
  }

  double loss(Index y, const Vec& a) const override {
    if (!admissible(a)) {
      throw InadmissibleAction("composite action maps outside the base admissible set");
    }
    return stack_.loss(y, a);
  }

  Vec loss_grad(Index y, const Vec& a) const override {
    if (!admissible(a)) {
      throw InadmissibleAction("composite action maps outside the base admissible set");
    }
    return stack_.loss_grad(y, a);
  }

  const DownstreamStack& stack() const { return stack_; }

 private:
  DownstreamStack stack_;
};

/// Per-layer analysis inputs: the numerically solved Bayes actions of the
/// composite loss, the matching reference bias, and the assembled bundle.
struct LayerTarget {
  Mat bayes_actions;      // k_i x |X|
  Vec bayes_marginal;     // k_i
  Vec b_tilde_i;          // k_i
  Vec column_grad_norms;  // |X|
  double marginal_grad_norm = 0.0;
  GeometryBundle bundle;
};

/// Solves the layer-i Bayes problems (marginal plus one per x) by gradient
/// descent from the downstream-consistent init h_i(0), then assembles the
/// layer bundle with a finite-difference Hessian.
inline LayerTarget layer_target(const JointDistribution& j,
                                const DownstreamStack& stack,
                                const Activation& act_i, const Mat& f_prev,
                                BayesSolverConfig cfg = {}) {
  const CompositeLoss composite{stack};
  const Index k_i = composite.action_dim();
  if (!cfg.init) cfg.init = act_i.eval(Vec::Zero(k_i));

  // Kink avoidance for finite-difference Hessians downstream of a leaky
  // ReLU: nudge near-zero solved coordinates off the kink.
  const auto dekink = [&stack](Vec a) {
    if (!stack.contains_leaky_relu()) return a;
    for (Index i = 0; i < a.size(); ++i) {
      if (std::abs(a(i)) < 1e-8) a(i) += 1e-8;
    }
    return a;
  };

  LayerTarget target;
  BayesSolution marginal;
  try {
    marginal = bayes_action(composite, j.py(), cfg);
  } catch (const NonConvergence& e) {
    throw NonConvergence(std::string("marginal Bayes solve: ") + e.what());
  }
  target.bayes_marginal = dekink(marginal.action);
  target.marginal_grad_norm = marginal.gradient_norm;

  target.bayes_actions.resize(k_i, j.num_x());
  target.column_grad_norms.resize(j.num_x());
  for (Index x = 0; x < j.num_x(); ++x) {
    try {
      const BayesSolution sol = bayes_action(composite, j.conditional_y(x), cfg);
      target.bayes_actions.col(x) = dekink(sol.action);
      target.column_grad_norms(x) = sol.gradient_norm;
    } catch (const NonConvergence& e) {
      throw NonConvergence("Bayes solve for column x=" + std::to_string(x) +
                           ": " + e.what());
    }
  }
  target.bundle = assemble_bundle(j, composite, act_i, f_prev,
                                  target.bayes_marginal, target.bayes_actions);
  target.b_tilde_i = target.bundle.b_tilde;
  return target;
}

/// Layer-i joint optimum; identical machinery as the output layer, applied
/// to the layer bundle. Precondition k_prev <= min(k_i, |X|).
inline LayerAnalysis solve_hidden_layer(const LayerTarget& target,
                                        Index k_prev) {
  return solve_layer(target.bundle, k_prev);
}

/// Downstream stack seen by hidden layer `i` (1-based): layers i+1..m plus
/// the output layer.
inline DownstreamStack downstream_of(const NetworkParams& net,
                                     std::size_t hidden_index,
                                     std::shared_ptr<const Loss> base) {
  if (hidden_index < 1 || hidden_index > net.hidden.size()) {
    throw ConfigError("hidden layer index out of range");
  }
  std::vector<NetLayer> layers(net.hidden.begin() + hidden_index,
                               net.hidden.end());
  layers.push_back(net.output);
  return DownstreamStack(std::move(layers), std::move(base));
}

/// The widest feasible rank per analyzed layer: [output, hidden m, ..., 1].
inline std::vector<Index> default_ranks(const JointDistribution& j,
                                        const NetworkParams& net) {
  std::vector<Index> ranks;
  ranks.push_back(std::min({net.feature_dim(), net.action_dim(), j.num_x()}));
  for (std::size_t i = net.hidden.size(); i >= 1; --i) {
    const Index k_prev = i == 1 ? net.input_dim : net.hidden[i - 2].w.cols();
    const Index k_i = net.hidden[i - 1].w.cols();
    ranks.push_back(std::min({k_prev, k_i, j.num_x()}));
  }
  return ranks;
}

/// Analyzes the output layer and then every hidden layer from the back,
/// holding the downstream weights fixed at the network's values. Returns
/// [output, hidden m, ..., hidden 1]. `ranks` follows the same order; when
/// empty, each layer's own width is used.
inline std::vector<LayerAnalysis> backward_sweep(
    const JointDistribution& j, const NetworkParams& net,
    std::shared_ptr<const Loss> base, std::vector<Index> ranks = {},
    const BayesSolverConfig& cfg = {}) {
  net.validate();
  const std::size_t m = net.hidden.size();
  if (ranks.empty()) ranks = default_ranks(j, net);
  if (ranks.size() != m + 1) {
    throw ConfigError("one rank per analyzed layer required");
  }

  std::vector<LayerAnalysis> analyses;
  const Mat f_last = feature_table(net, m);
  const GeometryBundle output_bundle =
      build_bundle(j, *base, net.output.act, f_last, cfg);
  analyses.push_back(solve_layer(output_bundle, ranks[0]));

  for (std::size_t i = m; i >= 1; --i) {
    const DownstreamStack stack = downstream_of(net, i, base);
    const Mat f_prev = feature_table(net, i - 1);
    const LayerTarget target =
        layer_target(j, stack, net.hidden[i - 1].act, f_prev, cfg);
    analyses.push_back(solve_hidden_layer(target, ranks[m - i + 1]));
  }
  return analyses;
}

}  // namespace geomlens
