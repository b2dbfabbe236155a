#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "sfada/classifier.hpp"
#include "sfada/dataset.hpp"
#include "sfada/errors.hpp"
#include "sfada/numerics.hpp"
#include "sfada/rng.hpp"

namespace sfada {

/// One-shot active selection. Computed once from the raw source model before
/// any adaptation; recomputing later must return the identical set.
struct QueryResult {
  std::vector<std::size_t> indices;
  std::string strategy_name;
  std::size_t budget_used = 0;
};

/// floor(rho * n), floored again at one sample for any positive rho.
inline std::size_t query_budget(double rho, std::size_t n) {
  if (!(rho > 0.0 && rho < 1.0))
    throw InvalidParameterError("query: rho must lie in (0, 1)");
  const auto b = static_cast<std::size_t>(std::floor(rho * static_cast<double>(n)));
  return std::max<std::size_t>(1, b);
}

/// Greedy k-center selection. The first center is the point farthest from
/// the pool centroid; each later center maximizes the distance to the chosen
/// set. All ties break toward the smaller index.
inline std::vector<std::size_t> kcenter_greedy(const std::vector<Vec>& features,
                                               std::size_t budget,
                                               std::uint64_t /*seed*/ = 0) {
  const std::size_t n = features.size();
  if (n == 0) throw InvalidInputError("kcenter_greedy: empty pool");
  if (budget > n)
    throw InvalidParameterError("kcenter_greedy: budget exceeds pool size");

  Vec centroid = Vec::Zero(features[0].size());
  for (const Vec& f : features) centroid += f;
  centroid /= static_cast<double>(n);

  std::vector<std::size_t> chosen;
  std::vector<double> min_dist(n);
  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (features[i] - centroid).norm();
    if (d > best) {
      best = d;
      first = i;
    }
  }
  chosen.push_back(first);
  for (std::size_t i = 0; i < n; ++i)
    min_dist[i] = (features[i] - features[first]).norm();

  while (chosen.size() < budget) {
    std::size_t next = 0;
    best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (min_dist[i] > best) {
        best = min_dist[i];
        next = i;
      }
    }
    chosen.push_back(next);
    for (std::size_t i = 0; i < n; ++i)
      min_dist[i] = std::min(min_dist[i], (features[i] - features[next]).norm());
  }
  return chosen;
}

namespace detail {

/// Stable pick of the `budget` smallest scores, ties toward smaller index.
inline std::vector<std::size_t> lowest_scores(const std::vector<double>& scores,
                                              std::size_t budget) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  order.resize(budget);
  return order;
}

}  // namespace detail

/// Spend the budget: ask the oracle for every selected index.
inline std::vector<LabeledExample> reveal_labels(LabelingOracle& oracle,
                                                 const QueryResult& selection) {
  std::vector<LabeledExample> out;
  out.reserve(selection.indices.size());
  for (std::size_t index : selection.indices)
    out.push_back({index, oracle.reveal(index)});
  return out;
}

/// Strategy dispatch. Reads only source-model outputs and unlabeled target
/// features; ground-truth labels are out of reach here by construction.
inline QueryResult query(const std::string& strategy,
                         const ClassifierModel& source,
                         const DomainDataset& target, double rho,
                         std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(target.size());
  const std::size_t budget = query_budget(rho, n);

  QueryResult result;
  result.strategy_name = strategy;
  result.budget_used = budget;

  if (strategy == "random") {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 41));
    rng.shuffle(order);
    order.resize(budget);
    result.indices = order;
  } else if (strategy == "entropy") {
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i)
      scores[i] = -entropy(source.predict(target.sample(static_cast<int>(i)), 1.0));
    result.indices = detail::lowest_scores(scores, budget);
  } else if (strategy == "margin") {
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vec p = source.predict(target.sample(static_cast<int>(i)), 1.0).vec();
      std::sort(p.data(), p.data() + p.size(), std::greater<double>());
      scores[i] = p[0] - p[1];
    }
    result.indices = detail::lowest_scores(scores, budget);
  } else if (strategy == "kcenter") {
    std::vector<Vec> features;
    features.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      features.push_back(source.penultimate(target.sample(static_cast<int>(i))));
    result.indices = kcenter_greedy(features, budget, seed);
  } else {
    throw InvalidParameterError("query: unknown strategy '" + strategy + "'");
  }
  return result;
}

}  // namespace sfada
