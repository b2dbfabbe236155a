#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>

#include "sfada/errors.hpp"

namespace sfada {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Floor applied inside every log; together with the 0*log(0) = 0 convention
/// it keeps hard labels and tau -> 0 limits exact.
inline constexpr double kLogFloor = 1e-12;

/// Tolerance on the simplex-sum invariant of ProbVector.
inline constexpr double kSimplexTol = 1e-9;

inline bool all_finite(const Vec& v) { return v.allFinite(); }

/// Discrete distribution over classes. Construction validates the simplex
/// invariants, so a ProbVector in hand is always safe to take logs of.
class ProbVector {
 public:
  explicit ProbVector(Vec probs) : p_(std::move(probs)) {
    if (p_.size() == 0) throw InvalidInputError("ProbVector: empty vector");
    if (!all_finite(p_)) throw InvalidInputError("ProbVector: non-finite entry");
    if (p_.minCoeff() < 0.0)
      throw InvalidInputError("ProbVector: negative entry");
    if (std::abs(p_.sum() - 1.0) > kSimplexTol)
      throw InvalidInputError("ProbVector: entries do not sum to 1");
  }

  const Vec& vec() const { return p_; }
  double operator[](Eigen::Index k) const { return p_[k]; }
  Eigen::Index size() const { return p_.size(); }

  /// Index of the largest entry; first one wins on ties.
  Eigen::Index argmax() const {
    Eigen::Index k = 0;
    p_.maxCoeff(&k);
    return k;
  }

 private:
  Vec p_;
};

inline ProbVector one_hot(Eigen::Index num_classes, Eigen::Index k) {
  if (k < 0 || k >= num_classes)
    throw InvalidParameterError("one_hot: class index out of range");
  Vec p = Vec::Zero(num_classes);
  p[k] = 1.0;
  return ProbVector(std::move(p));
}

inline ProbVector uniform_prob(Eigen::Index num_classes) {
  return ProbVector(Vec::Constant(num_classes, 1.0 / static_cast<double>(num_classes)));
}

/// Temperature softmax, evaluated with max subtraction in the log domain.
inline ProbVector softmax(const Vec& logits, double tau) {
  if (!(tau > 0.0)) throw InvalidParameterError("softmax: tau must be > 0");
  if (logits.size() == 0) throw InvalidInputError("softmax: empty logits");
  if (!all_finite(logits)) throw InvalidInputError("softmax: non-finite logits");
  const Vec scaled = logits / tau;
  const double peak = scaled.maxCoeff();
  Vec e = (scaled.array() - peak).exp();
  e /= e.sum();
  return ProbVector(std::move(e));
}

/// H(target, pred) = -sum_k target_k * log(pred_k), with pred floored at
/// kLogFloor and 0*log(0) = 0.
inline double cross_entropy(const ProbVector& target, const ProbVector& pred) {
  if (target.size() != pred.size())
    throw ShapeError("cross_entropy: dimension mismatch");
  double h = 0.0;
  for (Eigen::Index k = 0; k < target.size(); ++k) {
    const double t = target[k];
    if (t > 0.0) h -= t * std::log(std::max(pred[k], kLogFloor));
  }
  return h;
}

/// Shannon entropy; by definition the self cross-entropy.
inline double entropy(const ProbVector& p) { return cross_entropy(p, p); }

inline double cosine_sim(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw InvalidInputError("cosine_sim: zero-norm input");
  const double s = a.dot(b) / (na * nb);
  return std::clamp(s, -1.0, 1.0);
}

/// KL(p || q) = sum_k p_k log(p_k / q_k), q floored at kLogFloor.
inline double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size())
    throw ShapeError("kl_divergence: dimension mismatch");
  double d = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double pk = p[k];
    if (pk > 0.0) d += pk * (std::log(pk) - std::log(std::max(q[k], kLogFloor)));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Shared backward helpers. All analytic gradients in the library funnel
// through these, which is what makes the finite-difference suite meaningful.
// ---------------------------------------------------------------------------

/// dL/dscores for L = weight * H(target, softmax(scores / tau)).
/// Matches the log-floored cross_entropy above: components already clipped by
/// the floor contribute no gradient through their own log.
inline Vec ce_softmax_score_grad(const ProbVector& p, const ProbVector& target,
                                 double tau, double weight) {
  Vec dldp = Vec::Zero(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double t = target[k];
    if (t > 0.0 && p[k] >= kLogFloor) dldp[k] = -t / p[k];
  }
  const double inner = p.vec().dot(dldp);
  return (weight / tau) * (p.vec().cwiseProduct(dldp) - inner * p.vec());
}

/// dH/dscores for H(softmax(scores)), tau = 1.
inline Vec entropy_score_grad(const ProbVector& p) {
  Vec logp = p.vec().array().max(kLogFloor).log();
  const double mean_log = p.vec().dot(logp);
  return p.vec().cwiseProduct(Vec::Constant(p.size(), mean_log) - logp);
}

struct GradientReport {
  Vec analytic;
  Vec numeric;
  double max_rel_err = 0.0;
};

/// Central-difference audit of an analytic gradient.
/// max_rel_err = max_i |ga_i - gn_i| / max(1e-8, |ga_i| + |gn_i|).
inline GradientReport check_gradient(
    const std::function<double(const Vec&)>& loss, const Vec& analytic,
    const Vec& point, double step) {
  if (!(step >= 1e-7 && step <= 1e-3))
    throw InvalidParameterError("check_gradient: step outside [1e-7, 1e-3]");
  if (analytic.size() != point.size())
    throw ShapeError("check_gradient: gradient/point dimension mismatch");
  GradientReport report;
  report.analytic = analytic;
  report.numeric = Vec::Zero(point.size());
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    Vec x = point;
    x[i] = point[i] + step;
    const double up = loss(x);
    x[i] = point[i] - step;
    const double down = loss(x);
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("check_gradient: non-finite loss evaluation");
    report.numeric[i] = (up - down) / (2.0 * step);
    const double denom =
        std::max(1e-8, std::abs(analytic[i]) + std::abs(report.numeric[i]));
    report.max_rel_err = std::max(
        report.max_rel_err, std::abs(analytic[i] - report.numeric[i]) / denom);
  }
  return report;
}

}  // namespace sfada
