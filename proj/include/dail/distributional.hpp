#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dail/errors.hpp"
#include "dail/tensor.hpp"

namespace dail {

/// Evenly spaced atoms z_i = v_min + i * delta_z, i in [0, m). Both endpoints are exact.
struct Support {
  double v_min = 0.0;
  double v_max = 0.0;
  std::size_t m = 0;
  double delta_z = 0.0;
  std::vector<double> atoms;

  std::size_t size() const { return m; }
  friend bool operator==(const Support& a, const Support& b) {
    return a.v_min == b.v_min && a.v_max == b.v_max && a.m == b.m;
  }
};

inline Support make_support(double v_min, double v_max, std::size_t m) {
  if (!std::isfinite(v_min) || !std::isfinite(v_max) || !(v_min < v_max))
    throw InvalidArgument("support requires finite v_min < v_max");
  if (m < 2) throw InvalidArgument("support requires at least two atoms");
  Support s{v_min, v_max, m, (v_max - v_min) / static_cast<double>(m - 1), {}};
  s.atoms.resize(m);
  for (std::size_t i = 0; i < m; ++i) s.atoms[i] = v_min + static_cast<double>(i) * s.delta_z;
  s.atoms.back() = v_max;
  return s;
}

inline void validate_distribution(std::span<const double> probs, const Support& support) {
  if (probs.size() != support.m) throw ShapeError("distribution length does not match support");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw InvalidArgument("distribution has a negative or NaN probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("distribution does not sum to 1");
}

/// Probabilities over a Support.
struct CategoricalDistribution {
  std::vector<double> probs;

  static CategoricalDistribution point_mass(const Support& s, std::size_t atom) {
    if (atom >= s.m) throw IndexError("atom index out of range");
    CategoricalDistribution d{std::vector<double>(s.m, 0.0)};
    d.probs[atom] = 1.0;
    return d;
  }
  static CategoricalDistribution uniform(const Support& s) {
    return {std::vector<double>(s.m, 1.0 / static_cast<double>(s.m))};
  }
};

inline double expectation(std::span<const double> probs, const Support& support) {
  if (probs.size() != support.m) throw ShapeError("distribution length does not match support");
  double q = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) q += probs[i] * support.atoms[i];
  return q;
}

inline double expectation(const CategoricalDistribution& d, const Support& s) { return expectation(d.probs, s); }

/// Categorical Bellman projection of r + gamma * Z' onto the fixed atoms. Each shifted
/// atom is clamped into [v_min, v_max] and its mass split linearly between the two
/// neighbouring atoms. On terminal transitions all mass sits at the clamped reward.
inline CategoricalDistribution project_target(double r, double gamma, std::span<const double> next_probs,
                                              const Support& support, bool done) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
  if (next_probs.size() != support.m) throw ShapeError("next distribution does not match support");
  const auto last = static_cast<double>(support.m - 1);
  CategoricalDistribution out{std::vector<double>(support.m, 0.0)};

  const auto deposit = [&](double tz, double mass) {
    tz = std::clamp(tz, support.v_min, support.v_max);
    double b = std::clamp((tz - support.v_min) / support.delta_z, 0.0, last);
    const double nearest = std::round(b);
    // Landing on an atom up to rounding noise puts all mass on it.
    if (std::abs(b - nearest) < 1e-10) b = nearest;
    const auto lo = static_cast<std::size_t>(std::floor(b));
    const auto hi = static_cast<std::size_t>(std::ceil(b));
    if (lo == hi) {
      out.probs[lo] += mass;
    } else {
      out.probs[lo] += mass * (static_cast<double>(hi) - b);
      out.probs[hi] += mass * (b - static_cast<double>(lo));
    }
  };

  if (done) {
    const double mass = std::accumulate(next_probs.begin(), next_probs.end(), 0.0);
    deposit(r, mass);
    return out;
  }
  for (std::size_t j = 0; j < support.m; ++j) {
    if (next_probs[j] == 0.0) continue;
    deposit(r + gamma * support.atoms[j], next_probs[j]);
  }
  return out;
}

/// KL(target || softmax(logits)), 0 log 0 = 0.
inline double kl_loss(std::span<const double> target, std::span<const double> logits) {
  if (target.size() != logits.size()) throw ShapeError("kl_loss length mismatch");
  const auto logp = log_softmax(logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target[i] > 0.0) kl += target[i] * (std::log(target[i]) - logp[i]);
  return kl;
}

/// W1 on a shared support: delta_z * sum_i |CDF_a(z_i) - CDF_b(z_i)|.
inline double wasserstein1(std::span<const double> a, std::span<const double> b, const Support& support) {
  if (a.size() != support.m || b.size() != support.m)
    throw InvalidArgument("wasserstein1 requires both distributions on the same support");
  double ca = 0.0, cb = 0.0, acc = 0.0;
  for (std::size_t i = 0; i + 1 < support.m; ++i) {
    ca += a[i];
    cb += b[i];
    acc += std::abs(ca - cb);
  }
  return support.delta_z * acc;
}

inline double wasserstein1(const CategoricalDistribution& a, const CategoricalDistribution& b,
                           const Support& support) {
  return wasserstein1(a.probs, b.probs, support);
}

/// Checked overload for distributions carrying their own supports.
inline double wasserstein1(const CategoricalDistribution& a, const Support& sa, const CategoricalDistribution& b,
                           const Support& sb) {
  if (!(sa == sb)) throw InvalidArgument("wasserstein1: support mismatch");
  return wasserstein1(a.probs, b.probs, sa);
}

}  // namespace dail
