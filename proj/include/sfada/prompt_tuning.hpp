#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "sfada/dataset.hpp"
#include "sfada/errors.hpp"
#include "sfada/surrogate.hpp"

namespace sfada {

/// Queried sets up to this size are tuned with full-batch steps.
inline constexpr int kPromptFullBatchLimit = 256;
inline constexpr double kPromptMomentum = 0.9;

struct DfsConfig {
  double base_lr = 2e-3;
  double warmup_lr = 1e-5;
  int epochs = 50;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(base_lr > 0.0) || !(warmup_lr > 0.0))
      throw InvalidParameterError("dfs: learning rates must be > 0");
    if (warmup_lr > base_lr)
      throw InvalidParameterError("dfs: warmup_lr must not exceed base_lr");
    if (epochs < 1) throw InvalidParameterError("dfs: epochs must be >= 1");
    if (batch_size < 1)
      throw InvalidParameterError("dfs: batch_size must be >= 1");
  }
};

/// Epoch 1 runs at the warmup rate, then cosine annealing carries the base
/// rate to zero over the remaining epochs.
inline double prompt_lr_at_epoch(const DfsConfig& cfg, int epoch) {
  if (epoch < 1 || epoch > cfg.epochs)
    throw InvalidParameterError("dfs: epoch out of range");
  if (epoch == 1) return cfg.warmup_lr;
  if (cfg.epochs == 2) return cfg.base_lr;
  const double t = static_cast<double>(epoch - 2) / (cfg.epochs - 2);
  return cfg.base_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

struct SupervisionLoss {
  double ce = 0.0;
  double kg = 0.0;
  double total() const { return ce + kg; }
};

/// L_C on the queried set: mean cross-entropy of the surrogate against the
/// oracle labels plus the anchor regularizer, reported separately.
inline SupervisionLoss loss_supervised_prompts(
    const PromptBank& bank, const FrozenEncoder& enc,
    const DomainDataset& target, const std::vector<LabeledExample>& queried) {
  if (queried.empty())
    throw InvalidInputError("loss_supervised_prompts: empty queried set");
  SupervisionLoss loss;
  for (const LabeledExample& ex : queried) {
    const ProbVector p =
        bank.predict(enc, target.sample(static_cast<int>(ex.index)));
    loss.ce += cross_entropy(one_hot(bank.num_classes(), ex.label), p);
  }
  loss.ce /= static_cast<double>(queried.size());
  loss.kg = bank.kg_loss();
  return loss;
}

struct DfsEpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_kg = 0.0;
};

struct DfsResult {
  PromptBank bank;
  std::vector<DfsEpochLog> log;
};

/// Gradient descent with momentum on the context vectors only; every frozen
/// field of the bank comes back bitwise unchanged.
inline DfsResult tune_prompts(PromptBank bank, const FrozenEncoder& enc,
                              const DomainDataset& target,
                              const std::vector<LabeledExample>& queried,
                              const DfsConfig& cfg) {
  cfg.validate();
  if (queried.empty())
    throw InvalidInputError("tune_prompts: empty queried set");

  const int n = static_cast<int>(queried.size());
  Mat encoded(n, enc.feature_dim());
  std::vector<ProbVector> teachers;
  teachers.reserve(n);
  for (int i = 0; i < n; ++i) {
    encoded.row(i) =
        enc.encode(target.sample(static_cast<int>(queried[i].index))).transpose();
    teachers.push_back(one_hot(bank.num_classes(), queried[i].label));
  }

  DfsResult result{std::move(bank), {}};
  Mat velocity = Mat::Zero(result.bank.context_len(), result.bank.feature_dim());
  Rng rng(derive_seed(cfg.seed, 51));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int batch_size = n <= kPromptFullBatchLimit ? n : cfg.batch_size;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = prompt_lr_at_epoch(cfg, epoch);
    if (batch_size < n) rng.shuffle(order);
    double epoch_ce = 0.0;
    double epoch_kg = 0.0;
    int batches = 0;
    for (int at = 0; at < n; at += batch_size) {
      const int end = std::min(n, at + batch_size);
      Mat batch_f(end - at, enc.feature_dim());
      std::vector<ProbVector> batch_t;
      batch_t.reserve(end - at);
      for (int i = at; i < end; ++i) {
        batch_f.row(i - at) = encoded.row(order[i]);
        batch_t.push_back(teachers[order[i]]);
      }
      const PromptGrad grad =
          prompt_loss_grad(result.bank, batch_f, batch_t, Vec::Ones(end - at),
                           1.0, result.bank.tau());
      if (!std::isfinite(grad.ce_term) || !std::isfinite(grad.kg_term))
        throw NumericError("tune_prompts: non-finite loss at epoch " +
                           std::to_string(epoch));
      velocity = kPromptMomentum * velocity - lr * grad.context_grad;
      result.bank.set_context(result.bank.context() + velocity);
      epoch_ce += grad.ce_term;
      epoch_kg += grad.kg_term;
      ++batches;
    }
    result.log.push_back(
        {epoch, lr, epoch_ce / batches, epoch_kg / batches});
  }
  return result;
}

}  // namespace sfada
