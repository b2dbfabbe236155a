#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "sfada/dataset.hpp"
#include "sfada/errors.hpp"
#include "sfada/numerics.hpp"
#include "sfada/rng.hpp"

namespace sfada {

inline constexpr int kHiddenDim = 32;
inline constexpr double kSgdMomentum = 0.9;

struct TrainConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  int epochs = 50;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0))
      throw InvalidParameterError("train: learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw InvalidParameterError("train: momentum outside [0, 1)");
    if (weight_decay < 0.0)
      throw InvalidParameterError("train: weight_decay must be >= 0");
    if (epochs < 1) throw InvalidParameterError("train: epochs must be >= 1");
    if (batch_size < 1)
      throw InvalidParameterError("train: batch_size must be >= 1");
  }
};

/// Two-layer tanh classifier: input d -> hidden h -> C logits. The hidden
/// activations double as the feature space for k-center queries.
class ClassifierModel {
 public:
  Mat w1;  // h x d
  Vec b1;  // h
  Mat w2;  // C x h
  Vec b2;  // C

  ClassifierModel() = default;

  /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], fully seeded.
  ClassifierModel(int in_dim, int hidden_dim, int num_classes,
                  std::uint64_t seed)
      : w1(hidden_dim, in_dim),
        b1(Vec::Zero(hidden_dim)),
        w2(num_classes, hidden_dim),
        b2(Vec::Zero(num_classes)),
        seed_(seed) {
    Rng rng(derive_seed(seed, 7));
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (int i = 0; i < hidden_dim; ++i)
      for (int j = 0; j < in_dim; ++j) w1(i, j) = rng.uniform(-s1, s1);
    for (int i = 0; i < hidden_dim; ++i) b1[i] = rng.uniform(-s1, s1);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    for (int i = 0; i < num_classes; ++i)
      for (int j = 0; j < hidden_dim; ++j) w2(i, j) = rng.uniform(-s2, s2);
    for (int i = 0; i < num_classes; ++i) b2[i] = rng.uniform(-s2, s2);
  }

  int in_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int num_classes() const { return static_cast<int>(w2.rows()); }
  std::uint64_t seed() const { return seed_; }

  Vec hidden(const Vec& x) const {
    if (x.size() != w1.cols()) throw ShapeError("classifier: input dimension");
    return (w1 * x + b1).array().tanh();
  }

  Vec logits(const Vec& x) const { return w2 * hidden(x) + b2; }

  ProbVector predict(const Vec& x, double tau) const {
    return softmax(logits(x), tau);
  }

  /// Hidden-layer activations, the model's penultimate features.
  Vec penultimate(const Vec& x) const { return hidden(x); }

  /// Independent copy; the original is untouched by mutations of the clone.
  ClassifierModel clone() const { return *this; }

  int parameter_count() const {
    return static_cast<int>(w1.size() + b1.size() + w2.size() + b2.size());
  }

  Vec flatten() const {
    Vec out(parameter_count());
    Eigen::Index at = 0;
    for (Eigen::Index j = 0; j < w1.cols(); ++j)
      for (Eigen::Index i = 0; i < w1.rows(); ++i) out[at++] = w1(i, j);
    for (Eigen::Index i = 0; i < b1.size(); ++i) out[at++] = b1[i];
    for (Eigen::Index j = 0; j < w2.cols(); ++j)
      for (Eigen::Index i = 0; i < w2.rows(); ++i) out[at++] = w2(i, j);
    for (Eigen::Index i = 0; i < b2.size(); ++i) out[at++] = b2[i];
    return out;
  }

  void unflatten(const Vec& params) {
    if (params.size() != parameter_count())
      throw ShapeError("classifier: parameter vector size mismatch");
    Eigen::Index at = 0;
    for (Eigen::Index j = 0; j < w1.cols(); ++j)
      for (Eigen::Index i = 0; i < w1.rows(); ++i) w1(i, j) = params[at++];
    for (Eigen::Index i = 0; i < b1.size(); ++i) b1[i] = params[at++];
    for (Eigen::Index j = 0; j < w2.cols(); ++j)
      for (Eigen::Index i = 0; i < w2.rows(); ++i) w2(i, j) = params[at++];
    for (Eigen::Index i = 0; i < b2.size(); ++i) b2[i] = params[at++];
  }

 private:
  std::uint64_t seed_ = 0;
};

/// Parameter-shaped gradient accumulator.
struct ModelGrad {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;

  explicit ModelGrad(const ClassifierModel& m)
      : w1(Mat::Zero(m.w1.rows(), m.w1.cols())),
        b1(Vec::Zero(m.b1.size())),
        w2(Mat::Zero(m.w2.rows(), m.w2.cols())),
        b2(Vec::Zero(m.b2.size())) {}

  void scale(double s) {
    w1 *= s;
    b1 *= s;
    w2 *= s;
    b2 *= s;
  }
};

/// Backpropagate one sample's dL/dlogits into the accumulator.
inline void accumulate_logit_grad(const ClassifierModel& model, const Vec& x,
                                  const Vec& dlogits, ModelGrad& grad) {
  const Vec a = model.hidden(x);
  grad.w2 += dlogits * a.transpose();
  grad.b2 += dlogits;
  const Vec da = model.w2.transpose() * dlogits;
  const Vec dpre = da.cwiseProduct(Vec::Ones(a.size()) - a.cwiseProduct(a));
  grad.w1 += dpre * x.transpose();
  grad.b1 += dpre;
}

/// Mean cross-entropy over `indices` plus an L2 penalty on the weight
/// matrices: the objective train_source descends.
inline double supervised_loss(const ClassifierModel& model,
                              const DomainDataset& ds,
                              const std::vector<int>& indices,
                              double weight_decay) {
  if (indices.empty()) throw InvalidInputError("supervised_loss: empty batch");
  double total = 0.0;
  for (int i : indices) {
    const ProbVector p = model.predict(ds.sample(i), 1.0);
    total += cross_entropy(one_hot(model.num_classes(), ds.labels[i]), p);
  }
  double loss = total / static_cast<double>(indices.size());
  loss += 0.5 * weight_decay *
          (model.w1.squaredNorm() + model.w2.squaredNorm());
  return loss;
}

inline ModelGrad supervised_loss_grad(const ClassifierModel& model,
                                      const DomainDataset& ds,
                                      const std::vector<int>& indices,
                                      double weight_decay) {
  ModelGrad grad(model);
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (int i : indices) {
    const Vec x = ds.sample(i);
    const ProbVector p = model.predict(x, 1.0);
    const Vec dlogits = ce_softmax_score_grad(
        p, one_hot(model.num_classes(), ds.labels[i]), 1.0, inv);
    accumulate_logit_grad(model, x, dlogits, grad);
  }
  grad.w1 += weight_decay * model.w1;
  grad.w2 += weight_decay * model.w2;
  return grad;
}

/// SGD + momentum step, shared by every training loop in the library.
struct MomentumState {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;

  explicit MomentumState(const ClassifierModel& m)
      : w1(Mat::Zero(m.w1.rows(), m.w1.cols())),
        b1(Vec::Zero(m.b1.size())),
        w2(Mat::Zero(m.w2.rows(), m.w2.cols())),
        b2(Vec::Zero(m.b2.size())) {}

  void step(ClassifierModel& model, const ModelGrad& grad, double lr,
            double momentum) {
    w1 = momentum * w1 - lr * grad.w1;
    b1 = momentum * b1 - lr * grad.b1;
    w2 = momentum * w2 - lr * grad.w2;
    b2 = momentum * b2 - lr * grad.b2;
    model.w1 += w1;
    model.b1 += b1;
    model.w2 += w2;
    model.b2 += b2;
  }
};

struct TrainResult {
  ClassifierModel model;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
};

/// Mini-batch SGD on the supervised objective; fully deterministic per seed.
inline TrainResult train_source(const DomainDataset& ds,
                                const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  TrainResult result;
  result.model =
      ClassifierModel(ds.dim(), kHiddenDim, ds.num_classes, cfg.seed);
  MomentumState momentum(result.model);
  Rng rng(derive_seed(cfg.seed, 11));

  std::vector<int> order(ds.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_size);
      const std::vector<int> batch(order.begin() + at, order.begin() + end);
      const double loss =
          supervised_loss(result.model, ds, batch, cfg.weight_decay);
      if (!std::isfinite(loss))
        throw NumericError("train_source: non-finite loss at epoch " +
                           std::to_string(epoch));
      const ModelGrad grad =
          supervised_loss_grad(result.model, ds, batch, cfg.weight_decay);
      momentum.step(result.model, grad, cfg.learning_rate, cfg.momentum);
      epoch_loss += loss;
      ++batches;
    }
    result.epoch_losses.push_back(epoch_loss / batches);
  }
  result.final_loss = result.epoch_losses.back();
  return result;
}

/// Fraction of samples whose argmax prediction matches the dataset label.
/// Touches nothing but the classifier, which is what the discard rule needs.
inline double accuracy(const ClassifierModel& model, const DomainDataset& ds) {
  int hits = 0;
  for (int i = 0; i < ds.size(); ++i) {
    Eigen::Index k = 0;
    model.logits(ds.sample(i)).maxCoeff(&k);
    hits += (static_cast<int>(k) == ds.labels[i]);
  }
  return static_cast<double>(hits) / ds.size();
}

// ---------------------------------------------------------------------------
// Flat-text persistence: header with architecture + seed, then one %.17g
// parameter per line in flatten() order.
// ---------------------------------------------------------------------------

inline void save_model(const ClassifierModel& model,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInputError("save_model: cannot open " + path.string());
  out << "classifier " << model.in_dim() << ' ' << model.hidden_dim() << ' '
      << model.num_classes() << ' ' << model.seed() << '\n';
  const Vec params = model.flatten();
  for (Eigen::Index i = 0; i < params.size(); ++i)
    out << detail::format_double(params[i]) << '\n';
}

inline ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_model: cannot open " + path.string());
  std::string magic;
  int d = 0, h = 0, c = 0;
  std::uint64_t seed = 0;
  if (!(in >> magic >> d >> h >> c >> seed) || magic != "classifier" || d < 1 ||
      h < 1 || c < 2)
    throw ParseError("load_model: malformed header in " + path.string());
  ClassifierModel model(d, h, c, seed);
  Vec params(model.parameter_count());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    std::string token;
    if (!(in >> token))
      throw ParseError("load_model: truncated parameter block at entry " +
                       std::to_string(i));
    params[i] = detail::parse_double(token, static_cast<std::size_t>(i) + 2, 1);
  }
  model.unflatten(params);
  if (!params.allFinite())
    throw ParseError("load_model: non-finite parameter in " + path.string());
  return model;
}

}  // namespace sfada
