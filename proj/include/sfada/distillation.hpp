#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sfada/classifier.hpp"
#include "sfada/dataset.hpp"
#include "sfada/errors.hpp"
#include "sfada/numerics.hpp"
#include "sfada/prompt_tuning.hpp"
#include "sfada/surrogate.hpp"

namespace sfada {

/// Teacher distribution and its contribution weight for one sample.
struct TeacherSignal {
  ProbVector distribution;
  double weight;
};

struct AdlConfig {
  double beta_q = 3.0;
  double beta = 0.3;
  int top_n = 16;
  int epochs = 15;
  int batch_size = 64;
  double target_lr = 1e-2;
  double prompt_lr = 2e-3;
  double tau_hard = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta > 0.0) || beta_q < beta)
      throw InvalidParameterError("adl: requires beta_q >= beta > 0");
    if (top_n < 1) throw InvalidParameterError("adl: top_n must be >= 1");
    if (epochs < 1) throw InvalidParameterError("adl: epochs must be >= 1");
    if (batch_size < 1)
      throw InvalidParameterError("adl: batch_size must be >= 1");
    if (!(target_lr > 0.0) || !(prompt_lr > 0.0))
      throw InvalidParameterError("adl: learning rates must be > 0");
    if (!(tau_hard > 0.0) || tau_hard > 1e-6)
      throw InvalidParameterError("adl: tau_hard must lie in (0, 1e-6]");
  }
};

/// Queried samples teach with their ground-truth one-hot at weight beta_q;
/// everything else teaches with the tempered teacher output at weight beta.
inline TeacherSignal teacher_signal(const Vec& teacher_scores, bool is_queried,
                                    std::optional<int> oracle_label,
                                    double tau_b, const AdlConfig& cfg) {
  if (is_queried) {
    if (!oracle_label.has_value())
      throw ContractError("teacher_signal: queried sample without a label");
    return {one_hot(teacher_scores.size(), *oracle_label), cfg.beta_q};
  }
  return {softmax(teacher_scores, tau_b), cfg.beta};
}

/// X_top: per predicted class, the top_n samples with the largest maximum
/// class probability. Ties break toward the smaller index; classes nobody is
/// assigned to contribute nothing. Returned in ascending index order.
inline std::vector<std::size_t> select_top_confident(
    const ClassifierModel& target_model, const DomainDataset& pool,
    int top_n) {
  if (pool.size() == 0)
    throw InvalidInputError("select_top_confident: empty pool");
  const int classes = target_model.num_classes();
  std::vector<std::vector<std::pair<double, std::size_t>>> per_class(classes);
  for (int i = 0; i < pool.size(); ++i) {
    const ProbVector p = target_model.predict(pool.sample(i), 1.0);
    const Eigen::Index k = p.argmax();
    per_class[k].push_back({p[k], static_cast<std::size_t>(i)});
  }
  std::vector<std::size_t> selected;
  for (int k = 0; k < classes; ++k) {
    auto& bucket = per_class[k];
    std::sort(bucket.begin(), bucket.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const std::size_t take = std::min<std::size_t>(bucket.size(), top_n);
    for (std::size_t i = 0; i < take; ++i) selected.push_back(bucket[i].second);
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

/// Hard pseudo-label from the bank: argmax cosine similarity, the tau -> 0
/// limit of the tempered teacher.
inline int vil_hard_label(const PromptBank& bank, const Vec& encoded) {
  const Vec f = detail::normalize_unit(encoded);
  const Mat w = bank.embeddings();
  Eigen::Index best = 0;
  (w * f).maxCoeff(&best);
  return static_cast<int>(best);
}

namespace detail {

inline std::vector<int> queried_label_map(const DomainDataset& target,
                                          const std::vector<LabeledExample>& queried) {
  std::vector<int> label_of(target.size(), -1);
  for (const LabeledExample& ex : queried) {
    if (ex.index >= static_cast<std::size_t>(target.size()))
      throw InvalidParameterError("queried index out of range");
    label_of[ex.index] = ex.label;
  }
  return label_of;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reporting losses (Eqs. of the training objective, evaluated standalone).
// ---------------------------------------------------------------------------

/// Distillation onto the surrogate over X_top union T_q at student
/// temperature 1: mean of W(x) * H(teacher(x), softmax(sims(x))).
inline double loss_dist_v_from_t(const PromptBank& bank,
                                 const FrozenEncoder& enc,
                                 const ClassifierModel& target_model,
                                 const DomainDataset& target,
                                 const std::vector<std::size_t>& x_top,
                                 const std::vector<LabeledExample>& queried,
                                 const AdlConfig& cfg) {
  const std::vector<int> label_of = detail::queried_label_map(target, queried);
  std::vector<std::size_t> members;
  for (const LabeledExample& ex : queried) members.push_back(ex.index);
  for (std::size_t i : x_top)
    if (label_of[i] < 0) members.push_back(i);
  if (members.empty())
    throw InvalidInputError("loss_dist_v_from_t: empty X_top union T_q");

  double total = 0.0;
  for (std::size_t i : members) {
    const Vec x = target.sample(static_cast<int>(i));
    const bool is_queried = label_of[i] >= 0;
    const TeacherSignal teacher = teacher_signal(
        target_model.logits(x), is_queried,
        is_queried ? std::optional<int>(label_of[i]) : std::nullopt, 1.0, cfg);
    const ProbVector student = softmax(bank.embeddings() * enc.encode(x), 1.0);
    total += teacher.weight * cross_entropy(teacher.distribution, student);
  }
  return total / static_cast<double>(members.size());
}

/// Distillation onto the target model over the whole pool: queried samples
/// teach their one-hot at beta_q, the rest teach the surrogate's hard
/// pseudo-label at beta; student temperature 1.
inline double loss_dist_t_from_v(const ClassifierModel& target_model,
                                 const PromptBank& bank,
                                 const FrozenEncoder& enc,
                                 const DomainDataset& target,
                                 const std::vector<LabeledExample>& queried,
                                 const AdlConfig& cfg) {
  const std::vector<int> label_of = detail::queried_label_map(target, queried);
  double total = 0.0;
  for (int i = 0; i < target.size(); ++i) {
    const Vec x = target.sample(i);
    const ProbVector student = target_model.predict(x, 1.0);
    if (label_of[i] >= 0) {
      total += cfg.beta_q * cross_entropy(
                               one_hot(target.num_classes, label_of[i]), student);
    } else {
      const int pseudo = vil_hard_label(bank, enc.encode(x));
      total += cfg.beta *
               cross_entropy(one_hot(target.num_classes, pseudo), student);
    }
  }
  return total / static_cast<double>(target.size());
}

/// Mean prediction entropy over a batch.
inline double loss_ent(const ClassifierModel& target_model,
                       const DomainDataset& ds,
                       const std::vector<std::size_t>& batch) {
  if (batch.empty()) throw InvalidInputError("loss_ent: empty batch");
  double total = 0.0;
  for (std::size_t i : batch)
    total += entropy(target_model.predict(ds.sample(static_cast<int>(i)), 1.0));
  return total / static_cast<double>(batch.size());
}

/// Diversity penalty: sum_k phat_k log phat_k over the batch-mean prediction.
/// Equals KL(phat, uniform) - log C up to floating error.
inline double loss_div(const ClassifierModel& target_model,
                       const DomainDataset& ds,
                       const std::vector<std::size_t>& batch) {
  if (batch.empty()) throw InvalidInputError("loss_div: empty batch");
  Vec mean = Vec::Zero(target_model.num_classes());
  for (std::size_t i : batch)
    mean += target_model.predict(ds.sample(static_cast<int>(i)), 1.0).vec();
  mean /= static_cast<double>(batch.size());
  double total = 0.0;
  for (Eigen::Index k = 0; k < mean.size(); ++k)
    if (mean[k] > 0.0) total += mean[k] * std::log(std::max(mean[k], kLogFloor));
  return total;
}

inline std::vector<std::size_t> all_indices(const DomainDataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

/// L_T = L_dist(T<-V) + L_ent + L_div, every term over the full pool.
inline double loss_target_objective(const ClassifierModel& target_model,
                                    const PromptBank& bank,
                                    const FrozenEncoder& enc,
                                    const DomainDataset& target,
                                    const std::vector<LabeledExample>& queried,
                                    const AdlConfig& cfg) {
  const std::vector<std::size_t> pool = all_indices(target);
  return loss_dist_t_from_v(target_model, bank, enc, target, queried, cfg) +
         loss_ent(target_model, target, pool) +
         loss_div(target_model, target, pool);
}

/// L_V = L_dist(V<-T) + L_kg.
inline double loss_prompt_objective(const PromptBank& bank,
                                    const FrozenEncoder& enc,
                                    const ClassifierModel& target_model,
                                    const DomainDataset& target,
                                    const std::vector<std::size_t>& x_top,
                                    const std::vector<LabeledExample>& queried,
                                    const AdlConfig& cfg) {
  return loss_dist_v_from_t(bank, enc, target_model, target, x_top, queried,
                            cfg) +
         bank.kg_loss();
}

// ---------------------------------------------------------------------------
// Batch-level loss/gradient used by the adaptation loops.
// ---------------------------------------------------------------------------

struct TargetBatchLoss {
  double dist = 0.0;
  double ent = 0.0;
  double div = 0.0;
  double total() const { return dist + ent + div; }
};

/// Weighted distillation + entropy + diversity over one batch, with teachers
/// aligned to `batch`. Gradient goes through all three terms.
inline TargetBatchLoss target_batch_loss(const ClassifierModel& model,
                                         const DomainDataset& ds,
                                         const std::vector<std::size_t>& batch,
                                         const std::vector<TeacherSignal>& teachers,
                                         ModelGrad* grad_out) {
  if (batch.empty()) throw InvalidInputError("target_batch_loss: empty batch");
  if (teachers.size() != batch.size())
    throw ShapeError("target_batch_loss: teacher/batch size mismatch");

  const std::size_t n = batch.size();
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<ProbVector> probs;
  probs.reserve(n);
  Vec mean = Vec::Zero(model.num_classes());
  TargetBatchLoss loss;
  for (std::size_t j = 0; j < n; ++j) {
    const ProbVector p =
        model.predict(ds.sample(static_cast<int>(batch[j])), 1.0);
    loss.dist +=
        teachers[j].weight * cross_entropy(teachers[j].distribution, p);
    loss.ent += entropy(p);
    mean += p.vec();
    probs.push_back(p);
  }
  loss.dist *= inv;
  loss.ent *= inv;
  mean *= inv;
  for (Eigen::Index k = 0; k < mean.size(); ++k)
    if (mean[k] > 0.0)
      loss.div += mean[k] * std::log(std::max(mean[k], kLogFloor));

  if (grad_out) {
    const Vec log_mean = mean.array().max(kLogFloor).log();
    for (std::size_t j = 0; j < n; ++j) {
      const ProbVector& p = probs[j];
      Vec dlogits = ce_softmax_score_grad(p, teachers[j].distribution, 1.0,
                                          teachers[j].weight * inv);
      dlogits += inv * entropy_score_grad(p);
      // d/dlogits of sum_k mean_k log mean_k with mean the batch average.
      const double inner = p.vec().dot(log_mean);
      dlogits += inv * p.vec().cwiseProduct(
                           log_mean - Vec::Constant(p.size(), inner));
      accumulate_logit_grad(model, ds.sample(static_cast<int>(batch[j])),
                            dlogits, *grad_out);
    }
  }
  return loss;
}

/// Analytic gradient of the full-pool L_T with respect to the classifier
/// parameters (used by the finite-difference suite).
inline ModelGrad loss_target_objective_grad(
    const ClassifierModel& target_model, const PromptBank& bank,
    const FrozenEncoder& enc, const DomainDataset& target,
    const std::vector<LabeledExample>& queried, const AdlConfig& cfg) {
  const std::vector<int> label_of = detail::queried_label_map(target, queried);
  const std::vector<std::size_t> pool = all_indices(target);
  std::vector<TeacherSignal> teachers;
  teachers.reserve(pool.size());
  for (std::size_t i : pool) {
    if (label_of[i] >= 0) {
      teachers.push_back({one_hot(target.num_classes, label_of[i]), cfg.beta_q});
    } else {
      const int pseudo =
          vil_hard_label(bank, enc.encode(target.sample(static_cast<int>(i))));
      teachers.push_back({one_hot(target.num_classes, pseudo), cfg.beta});
    }
  }
  ModelGrad grad(target_model);
  target_batch_loss(target_model, target, pool, teachers, &grad);
  return grad;
}

/// Analytic gradient of L_V with respect to the context rows.
inline PromptGrad loss_prompt_objective_grad(
    const PromptBank& bank, const FrozenEncoder& enc,
    const ClassifierModel& target_model, const DomainDataset& target,
    const std::vector<std::size_t>& x_top,
    const std::vector<LabeledExample>& queried, const AdlConfig& cfg) {
  const std::vector<int> label_of = detail::queried_label_map(target, queried);
  std::vector<std::size_t> members;
  for (const LabeledExample& ex : queried) members.push_back(ex.index);
  for (std::size_t i : x_top)
    if (label_of[i] < 0) members.push_back(i);
  if (members.empty())
    throw InvalidInputError("loss_prompt_objective_grad: empty union");

  Mat encoded(members.size(), enc.feature_dim());
  std::vector<ProbVector> teachers;
  Vec weights(members.size());
  for (std::size_t j = 0; j < members.size(); ++j) {
    const std::size_t i = members[j];
    encoded.row(j) = enc.encode(target.sample(static_cast<int>(i))).transpose();
    if (label_of[i] >= 0) {
      teachers.push_back(one_hot(target.num_classes, label_of[i]));
      weights[j] = cfg.beta_q;
    } else {
      teachers.push_back(
          target_model.predict(target.sample(static_cast<int>(i)), 1.0));
      weights[j] = cfg.beta;
    }
  }
  return prompt_loss_grad(bank, encoded, teachers, weights, 1.0, 1.0);
}

// ---------------------------------------------------------------------------
// The alternating adaptation loop.
// ---------------------------------------------------------------------------

/// Cosine decay for the target model; the prompt rate stays flat.
inline double adl_target_lr_at_epoch(const AdlConfig& cfg, int epoch) {
  const double t = static_cast<double>(epoch - 1) / cfg.epochs;
  return cfg.target_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

struct AdlEpochLog {
  int epoch = 0;
  double target_lr = 0.0;
  double prompt_lr = 0.0;
  // T-phase batch means.
  double loss_dist_tv = 0.0;
  double loss_ent = 0.0;
  double loss_div = 0.0;
  double loss_t = 0.0;
  // V-phase batch means; NaN when the phase is disabled.
  double loss_dist_vt = std::numeric_limits<double>::quiet_NaN();
  double loss_kg = std::numeric_limits<double>::quiet_NaN();
  double loss_v = std::numeric_limits<double>::quiet_NaN();
  // Snapshot at epoch start, before any update.
  double target_accuracy = 0.0;
  double surrogate_accuracy = std::numeric_limits<double>::quiet_NaN();
  double agreement = std::numeric_limits<double>::quiet_NaN();
};

/// Running audit of every teacher signal the loop emits: the weight scheme
/// admits exactly beta_q on queried samples and beta elsewhere.
struct WeightAudit {
  std::size_t queried_signals = 0;
  std::size_t unlabeled_signals = 0;
  std::size_t violations = 0;
  std::vector<double> distinct_weights;

  void record(bool is_queried, double weight, const AdlConfig& cfg) {
    (is_queried ? queried_signals : unlabeled_signals) += 1;
    if (weight != (is_queried ? cfg.beta_q : cfg.beta)) ++violations;
    if (std::find(distinct_weights.begin(), distinct_weights.end(), weight) ==
        distinct_weights.end())
      distinct_weights.push_back(weight);
  }
};

struct AdaptResult {
  ClassifierModel model;
  PromptBank bank;
  std::vector<AdlEpochLog> log;
  WeightAudit audit;
};

/// One adaptation run. Per epoch: refresh X_top and the surrogate's hard
/// pseudo-labels, one pass of mini-batch updates on the target model with the
/// bank frozen, then (unless disabled) one pass of context updates with the
/// target model frozen. Deterministic for a fixed config and seed. The
/// returned model alone carries the inference path; target labels are read
/// only for the epoch metrics.
inline AdaptResult adapt(ClassifierModel model, PromptBank bank,
                         const FrozenEncoder& enc, const DomainDataset& target,
                         const std::vector<LabeledExample>& queried,
                         const AdlConfig& cfg, bool update_prompts = true) {
  cfg.validate();
  const std::vector<int> label_of = detail::queried_label_map(target, queried);
  const int n = target.size();

  const Mat encoded = enc.encode_all(target);
  AdaptResult result{std::move(model), std::move(bank), {}, {}};
  MomentumState model_momentum(result.model);
  Mat context_velocity =
      Mat::Zero(result.bank.context_len(), result.bank.feature_dim());
  Rng rng(derive_seed(cfg.seed, 61));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    AdlEpochLog log;
    log.epoch = epoch;
    log.target_lr = adl_target_lr_at_epoch(cfg, epoch);
    log.prompt_lr = cfg.prompt_lr;

    // (1) Refresh teachers: surrogate hard labels and X_top, once per epoch.
    const Mat embeddings = result.bank.embeddings();
    std::vector<int> pseudo(n);
    std::vector<std::pair<double, int>> confidence(n);  // (max prob, argmax)
    int target_hits = 0, surrogate_hits = 0, agree = 0;
    for (int i = 0; i < n; ++i) {
      Eigen::Index vil_argmax = 0;
      (embeddings * encoded.row(i).transpose()).maxCoeff(&vil_argmax);
      pseudo[i] = static_cast<int>(vil_argmax);
      const ProbVector p = result.model.predict(target.sample(i), 1.0);
      const Eigen::Index k = p.argmax();
      confidence[i] = {p[k], static_cast<int>(k)};
      target_hits += (static_cast<int>(k) == target.labels[i]);
      surrogate_hits += (pseudo[i] == target.labels[i]);
      agree += (pseudo[i] == static_cast<int>(k));
    }
    log.target_accuracy = static_cast<double>(target_hits) / n;
    log.surrogate_accuracy = static_cast<double>(surrogate_hits) / n;
    log.agreement = static_cast<double>(agree) / n;

    std::vector<std::vector<std::pair<double, std::size_t>>> per_class(
        target.num_classes);
    for (int i = 0; i < n; ++i)
      per_class[confidence[i].second].push_back(
          {confidence[i].first, static_cast<std::size_t>(i)});
    std::vector<std::size_t> x_top;
    for (auto& bucket : per_class) {
      std::sort(bucket.begin(), bucket.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t i = 0; i < std::min<std::size_t>(bucket.size(), cfg.top_n); ++i)
        x_top.push_back(bucket[i].second);
    }
    std::sort(x_top.begin(), x_top.end());

    // (2) Target-model pass; the bank stays untouched.
    std::vector<std::size_t> order = all_indices(target);
    rng.shuffle(order);
    double sum_dist = 0.0, sum_ent = 0.0, sum_div = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_size);
      const std::vector<std::size_t> batch(order.begin() + at,
                                           order.begin() + end);
      std::vector<TeacherSignal> teachers;
      teachers.reserve(batch.size());
      for (std::size_t i : batch) {
        const bool is_queried = label_of[i] >= 0;
        TeacherSignal signal =
            is_queried
                ? teacher_signal(Vec::Zero(target.num_classes), true,
                                 label_of[i], 1.0, cfg)
                : TeacherSignal{one_hot(target.num_classes, pseudo[i]),
                                cfg.beta};
        result.audit.record(is_queried, signal.weight, cfg);
        teachers.push_back(std::move(signal));
      }
      ModelGrad grad(result.model);
      const TargetBatchLoss batch_loss =
          target_batch_loss(result.model, target, batch, teachers, &grad);
      if (!std::isfinite(batch_loss.total()))
        throw NumericError("adapt: non-finite target loss at epoch " +
                           std::to_string(epoch) + " (target phase)");
      model_momentum.step(result.model, grad, log.target_lr, kSgdMomentum);
      sum_dist += batch_loss.dist;
      sum_ent += batch_loss.ent;
      sum_div += batch_loss.div;
      ++batches;
    }
    log.loss_dist_tv = sum_dist / batches;
    log.loss_ent = sum_ent / batches;
    log.loss_div = sum_div / batches;
    log.loss_t = log.loss_dist_tv + log.loss_ent + log.loss_div;

    // (3) Context pass over X_top union T_q; the target model stays frozen.
    if (update_prompts) {
      std::vector<std::size_t> members;
      for (const LabeledExample& ex : queried) members.push_back(ex.index);
      for (std::size_t i : x_top)
        if (label_of[i] < 0) members.push_back(i);
      rng.shuffle(members);

      double sum_vt = 0.0, sum_kg = 0.0;
      int vbatches = 0;
      for (std::size_t at = 0; at < members.size(); at += cfg.batch_size) {
        const std::size_t end = std::min(members.size(), at + cfg.batch_size);
        Mat batch_f(end - at, enc.feature_dim());
        std::vector<ProbVector> teachers;
        Vec weights(end - at);
        for (std::size_t j = at; j < end; ++j) {
          const std::size_t i = members[j];
          batch_f.row(j - at) = encoded.row(i);
          const bool is_queried = label_of[i] >= 0;
          const TeacherSignal signal = teacher_signal(
              result.model.logits(target.sample(static_cast<int>(i))),
              is_queried,
              is_queried ? std::optional<int>(label_of[i]) : std::nullopt, 1.0,
              cfg);
          result.audit.record(is_queried, signal.weight, cfg);
          teachers.push_back(signal.distribution);
          weights[j - at] = signal.weight;
        }
        const PromptGrad grad = prompt_loss_grad(result.bank, batch_f,
                                                 teachers, weights, 1.0, 1.0);
        if (!std::isfinite(grad.ce_term) || !std::isfinite(grad.kg_term))
          throw NumericError("adapt: non-finite prompt loss at epoch " +
                             std::to_string(epoch) + " (prompt phase)");
        context_velocity =
            kPromptMomentum * context_velocity - cfg.prompt_lr * grad.context_grad;
        result.bank.set_context(result.bank.context() + context_velocity);
        sum_vt += grad.ce_term;
        sum_kg += grad.kg_term;
        ++vbatches;
      }
      log.loss_dist_vt = sum_vt / vbatches;
      log.loss_kg = sum_kg / vbatches;
      log.loss_v = log.loss_dist_vt + log.loss_kg;
    }

    result.log.push_back(log);
  }
  return result;
}

/// Surrogate-free baseline: fine-tune on the queried set alone, minimizing
/// the plain cross-entropy against the oracle labels plus the entropy and
/// diversity terms over those same batches. The unlabeled pool is never
/// touched, which is exactly what separates this variant from distillation.
inline AdaptResult finetune_active_only(ClassifierModel model,
                                        const DomainDataset& target,
                                        const std::vector<LabeledExample>& queried,
                                        const AdlConfig& cfg) {
  cfg.validate();
  if (queried.empty())
    throw InvalidInputError("finetune_active_only: empty queried set");
  detail::queried_label_map(target, queried);  // range check
  AdaptResult result{std::move(model),
                     PromptBank(target.num_classes, 2, 1, 1.0, 0), {}, {}};
  MomentumState momentum(result.model);
  Rng rng(derive_seed(cfg.seed, 61));
  const int n = target.size();

  std::vector<std::size_t> order(queried.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    AdlEpochLog log;
    log.epoch = epoch;
    log.target_lr = adl_target_lr_at_epoch(cfg, epoch);
    int hits = 0;
    for (int i = 0; i < n; ++i) {
      Eigen::Index k = 0;
      result.model.logits(target.sample(i)).maxCoeff(&k);
      hits += (static_cast<int>(k) == target.labels[i]);
    }
    log.target_accuracy = static_cast<double>(hits) / n;

    rng.shuffle(order);
    double sum_dist = 0.0, sum_ent = 0.0, sum_div = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), at + cfg.batch_size);
      std::vector<std::size_t> batch;
      std::vector<TeacherSignal> teachers;
      for (std::size_t j = at; j < end; ++j) {
        batch.push_back(queried[order[j]].index);
        teachers.push_back({one_hot(target.num_classes, queried[order[j]].label), 1.0});
      }
      ModelGrad grad(result.model);
      const TargetBatchLoss batch_loss =
          target_batch_loss(result.model, target, batch, teachers, &grad);
      if (!std::isfinite(batch_loss.total()))
        throw NumericError("finetune_active_only: non-finite loss at epoch " +
                           std::to_string(epoch));
      momentum.step(result.model, grad, log.target_lr, kSgdMomentum);
      sum_dist += batch_loss.dist;
      sum_ent += batch_loss.ent;
      sum_div += batch_loss.div;
      ++batches;
    }
    log.loss_dist_tv = sum_dist / batches;
    log.loss_ent = sum_ent / batches;
    log.loss_div = sum_div / batches;
    log.loss_t = log.loss_dist_tv + log.loss_ent + log.loss_div;
    result.log.push_back(log);
  }
  return result;
}

}  // namespace sfada
