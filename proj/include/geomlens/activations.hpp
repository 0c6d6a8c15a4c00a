#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <string_view>

#include "geomlens/errors.hpp"
#include "geomlens/linalg.hpp"

namespace geomlens {

/// Scalar neuron activation with derivative and inverse. A value type; all
/// operations are pure. The inverse is defined on the open image interval and
/// is what turns a Bayes action into its reference bias.
class Activation {
 public:
  enum class Kind { Identity, Sigmoid, Tanh, LeakyRelu, Softplus };

  static Activation identity() { return Activation(Kind::Identity, 0.0); }
  static Activation sigmoid() { return Activation(Kind::Sigmoid, 0.0); }
  static Activation tanh() { return Activation(Kind::Tanh, 0.0); }
  static Activation leaky_relu(double alpha) {
    if (alpha <= 0.0) throw ConfigError("leaky_relu slope must be positive");
    return Activation(Kind::LeakyRelu, alpha);
  }
  static Activation softplus() { return Activation(Kind::Softplus, 0.0); }

  /// Parses CLI names: "identity" | "sigmoid" | "tanh" | "leaky_relu:a" |
  /// "softplus".
  static Activation parse(std::string_view name) {
    if (name == "identity") return identity();
    if (name == "sigmoid") return sigmoid();
    if (name == "tanh") return tanh();
    if (name == "softplus") return softplus();
    constexpr std::string_view prefix = "leaky_relu:";
    if (name.substr(0, prefix.size()) == prefix) {
      const std::string alpha_str(name.substr(prefix.size()));
      try {
        return leaky_relu(std::stod(alpha_str));
      } catch (const std::exception&) {
        throw ConfigError("bad leaky_relu slope: " + alpha_str);
      }
    }
    throw ConfigError("unknown activation: " + std::string(name));
  }

  std::string name() const {
    switch (kind_) {
      case Kind::Identity: return "identity";
      case Kind::Sigmoid: return "sigmoid";
      case Kind::Tanh: return "tanh";
      case Kind::LeakyRelu: return "leaky_relu:" + std::to_string(alpha_);
      case Kind::Softplus: return "softplus";
    }
    return "?";
  }

  Kind kind() const { return kind_; }

  double eval(double z) const {
    switch (kind_) {
      case Kind::Identity: return z;
      case Kind::Sigmoid: return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                          : std::exp(z) / (1.0 + std::exp(z));
      case Kind::Tanh: return std::tanh(z);
      case Kind::LeakyRelu: return z >= 0.0 ? z : alpha_ * z;
      case Kind::Softplus:
        // log(1 + e^z), overflow-safe
        return z > 30.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    }
    return 0.0;
  }

  // Convention: the kink of leaky_relu at 0 reports the right-hand slope 1.
  double deriv(double z) const {
    switch (kind_) {
      case Kind::Identity: return 1.0;
      case Kind::Sigmoid: {
        const double s = eval(z);
        return s * (1.0 - s);
      }
      case Kind::Tanh: {
        const double t = std::tanh(z);
        return 1.0 - t * t;
      }
      case Kind::LeakyRelu: return z >= 0.0 ? 1.0 : alpha_;
      case Kind::Softplus: return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                           : std::exp(z) / (1.0 + std::exp(z));
    }
    return 0.0;
  }

  double inverse(double v) const {
    if (!contains(v)) {
      throw OutOfImage("value " + std::to_string(v) +
                       " outside the open image of " + name());
    }
    switch (kind_) {
      case Kind::Identity: return v;
      case Kind::Sigmoid: return std::log(v / (1.0 - v));
      case Kind::Tanh: return std::atanh(v);
      case Kind::LeakyRelu: return v >= 0.0 ? v : v / alpha_;
      case Kind::Softplus:
        return v > 30.0 ? v + std::log1p(-std::exp(-v)) : std::log(std::expm1(v));
    }
    return 0.0;
  }

  double image_lo() const {
    switch (kind_) {
      case Kind::Sigmoid: return 0.0;
      case Kind::Tanh: return -1.0;
      case Kind::Softplus: return 0.0;
      default: return -std::numeric_limits<double>::infinity();
    }
  }

  double image_hi() const {
    switch (kind_) {
      case Kind::Sigmoid: return 1.0;
      case Kind::Tanh: return 1.0;
      default: return std::numeric_limits<double>::infinity();
    }
  }

  /// Strictly inside the open image interval.
  bool contains(double v) const { return v > image_lo() && v < image_hi(); }

  Vec eval(const Vec& z) const { return apply([this](double v) { return eval(v); }, z); }
  Vec deriv(const Vec& z) const { return apply([this](double v) { return deriv(v); }, z); }
  Vec inverse(const Vec& v) const { return apply([this](double u) { return inverse(u); }, v); }

 private:
  Activation(Kind kind, double alpha) : kind_(kind), alpha_(alpha) {}

  template <typename F>
  static Vec apply(F&& f, const Vec& z) {
    Vec out(z.size());
    for (Index i = 0; i < z.size(); ++i) out(i) = f(z(i));
    return out;
  }

  Kind kind_;
  double alpha_;
};

/// Result of probing the non-vanishing-gradient condition
/// |h(z) - h(center)| >= k_lower |z - center| on (center-delta, center+delta).
struct GradientCertificate {
  double center = 0.0;
  double delta = 0.0;
  double k_lower = 0.0;
  bool verified = false;
};

/// Probes the ratio inequality at `probes` equally spaced points with
/// k_lower = h'(center)/2. Works on arbitrary callables so test stubs
/// (e.g. a constant function) can be certified too.
inline GradientCertificate certify_assumption1(
    const std::function<double(double)>& h, double deriv_at_center,
    double center, double delta, int probes) {
  if (probes < 100) throw ConfigError("certification needs at least 100 probes");
  if (delta <= 0.0) throw ConfigError("delta must be positive");
  GradientCertificate cert;
  cert.center = center;
  cert.delta = delta;
  cert.k_lower = deriv_at_center / 2.0;
  if (cert.k_lower <= 0.0) {
    cert.k_lower = std::max(cert.k_lower, 0.0);
    cert.verified = false;
    return cert;
  }
  const double h_center = h(center);
  bool ok = true;
  for (int i = 0; i < probes && ok; ++i) {
    // midpoints of a uniform grid; never lands exactly on the center
    const double z = center - delta + 2.0 * delta * (i + 0.5) / probes;
    const double lhs = std::abs(h(z) - h_center);
    const double rhs = cert.k_lower * std::abs(z - center);
    ok = lhs + 1e-15 >= rhs;
  }
  cert.verified = ok;
  return cert;
}

inline GradientCertificate certify_assumption1(const Activation& act,
                                               double center, double delta,
                                               int probes) {
  return certify_assumption1([&act](double z) { return act.eval(z); },
                             act.deriv(center), center, delta, probes);
}

/// Shrinks delta geometrically from 1.0 until the certificate verifies or
/// delta drops below 1e-6; returns the last attempt either way.
inline GradientCertificate auto_certify(const Activation& act, double center,
                                        int probes = 256) {
  GradientCertificate cert;
  for (double delta = 1.0; delta >= 1e-6; delta *= 0.5) {
    cert = certify_assumption1(act, center, delta, probes);
    if (cert.verified) return cert;
  }
  return cert;
}

}  // namespace geomlens
