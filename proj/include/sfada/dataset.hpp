#pragma once

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfada/errors.hpp"
#include "sfada/numerics.hpp"
#include "sfada/rng.hpp"

namespace sfada {

/// A labeled pool from one domain. Features are one sample per row.
struct DomainDataset {
  Mat features;
  std::vector<int> labels;
  int num_classes = 0;
  std::string domain_tag;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  Vec sample(int i) const { return features.row(i).transpose(); }

  void validate() const {
    if (num_classes < 2) throw DataError("dataset: needs at least 2 classes");
    if (features.rows() == 0 || features.cols() == 0)
      throw DataError("dataset: empty feature matrix");
    if (static_cast<std::size_t>(features.rows()) != labels.size())
      throw DataError("dataset: sample/label count mismatch");
    if (!features.allFinite()) throw DataError("dataset: non-finite feature");
    std::vector<int> counts(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes)
        throw DataError("dataset: label out of range at row " +
                        std::to_string(i));
      ++counts[labels[i]];
    }
    for (int k = 0; k < num_classes; ++k)
      if (counts[k] == 0)
        throw DataError("dataset: class " + std::to_string(k) +
                        " has no samples");
  }

  /// Per-class sample counts.
  std::vector<int> class_counts() const {
    std::vector<int> counts(num_classes, 0);
    for (int label : labels) ++counts[label];
    return counts;
  }
};

/// Affine covariate shift applied to target samples, plus source-side label
/// corruption and class-prior skew.
struct ShiftSpec {
  double rotation_angle = 0.0;  // radians, in the (0,1) coordinate plane
  Vec translation;              // empty means zero
  double scale = 1.0;
  double label_noise = 0.0;  // source labels only
  double class_prior_skew = 0.0;

  static ShiftSpec identity() { return ShiftSpec{}; }

  void validate(int dim) const {
    if (!(scale > 0.0)) throw InvalidParameterError("shift: scale must be > 0");
    if (label_noise < 0.0 || label_noise >= 0.5)
      throw InvalidParameterError("shift: label_noise outside [0, 0.5)");
    if (class_prior_skew < 0.0)
      throw InvalidParameterError("shift: class_prior_skew must be >= 0");
    if (translation.size() != 0 && translation.size() != dim)
      throw InvalidParameterError("shift: translation dimension mismatch");
  }
};

// ---------------------------------------------------------------------------
// Mixture layout. Class means sit on a scaled simplex when the dimension
// allows (one axis per class, all pairs equidistant at kMixtureSpacing),
// otherwise on a circle in the (0,1) plane with the same nearest-neighbor
// spacing. Published so tests can run density-argmax oracles on the exact
// mixture the generator sampled.
// ---------------------------------------------------------------------------

inline constexpr double kMixtureSpacing = 3.0;
inline constexpr double kSourceStd = 1.0;
inline constexpr double kFoundationVarFactor = 3.0;

struct MixtureSpec {
  Mat means;  // one row per class
  Vec priors;
  double stddev = 1.0;
};

inline Mat class_means(int classes, int dim) {
  Mat means = Mat::Zero(classes, dim);
  if (classes <= dim) {
    // Centered simplex: mu_k = s * (e_k - 1/C), pairwise distance s * sqrt2.
    const double s = kMixtureSpacing / std::numbers::sqrt2;
    for (int k = 0; k < classes; ++k) {
      for (int j = 0; j < classes; ++j) means(k, j) = -s / classes;
      means(k, k) += s;
    }
  } else {
    const double radius =
        kMixtureSpacing / (2.0 * std::sin(std::numbers::pi / classes));
    for (int k = 0; k < classes; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / classes;
      means(k, 0) = radius * std::cos(phi);
      means(k, 1) = radius * std::sin(phi);
    }
  }
  return means;
}

inline Vec class_priors(int classes, double skew) {
  Vec priors(classes);
  for (int k = 0; k < classes; ++k) priors[k] = std::exp(-skew * k);
  priors /= priors.sum();
  return priors;
}

inline MixtureSpec source_mixture_spec(int classes, int dim,
                                       double class_prior_skew = 0.0) {
  return MixtureSpec{class_means(classes, dim),
                     class_priors(classes, class_prior_skew), kSourceStd};
}

/// Rotation by `angle` on every disjoint coordinate pair-plane
/// (0,1), (2,3), ..., so the shift reaches all classes of the simplex layout.
inline Mat rotation_matrix(int dim, double angle) {
  Mat rot = Mat::Identity(dim, dim);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (int p = 0; p + 1 < dim; p += 2) {
    rot(p, p) = c;
    rot(p, p + 1) = -s;
    rot(p + 1, p) = s;
    rot(p + 1, p + 1) = c;
  }
  return rot;
}

inline Vec apply_shift(const ShiftSpec& shift, const Mat& rot, const Vec& x) {
  Vec out = shift.scale * (rot * x);
  if (shift.translation.size() > 0) out += shift.translation;
  return out;
}

/// Mixture the target samples are actually drawn from (source mixture pushed
/// through the shift map).
inline MixtureSpec target_mixture_spec(int classes, int dim,
                                       const ShiftSpec& shift) {
  MixtureSpec spec = source_mixture_spec(classes, dim, shift.class_prior_skew);
  const Mat rot = rotation_matrix(dim, shift.rotation_angle);
  for (int k = 0; k < classes; ++k)
    spec.means.row(k) =
        apply_shift(shift, rot, spec.means.row(k).transpose()).transpose();
  spec.stddev = kSourceStd * shift.scale;
  return spec;
}

namespace detail {

/// Largest-remainder apportionment with a floor of one sample per class.
inline std::vector<int> apportion(const Vec& priors, int n) {
  const int classes = static_cast<int>(priors.size());
  std::vector<int> counts(classes);
  std::vector<std::pair<double, int>> fractional;
  int assigned = 0;
  for (int k = 0; k < classes; ++k) {
    const double exact = priors[k] * n;
    counts[k] = static_cast<int>(std::floor(exact));
    assigned += counts[k];
    fractional.emplace_back(exact - counts[k], k);
  }
  std::sort(fractional.begin(), fractional.end(), [](auto a, auto b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < n - assigned; ++i) ++counts[fractional[i % classes].second];
  for (int k = 0; k < classes; ++k) {
    while (counts[k] == 0) {
      const int donor = static_cast<int>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[k];
    }
  }
  return counts;
}

inline DomainDataset sample_mixture(const MixtureSpec& mixture, int n,
                                    const std::string& tag,
                                    std::uint64_t master_seed,
                                    std::uint64_t stream) {
  Rng rng(derive_seed(master_seed, stream));
  const int classes = static_cast<int>(mixture.means.rows());
  const int dim = static_cast<int>(mixture.means.cols());
  const std::vector<int> counts = apportion(mixture.priors, n);

  std::vector<int> labels;
  labels.reserve(n);
  for (int k = 0; k < classes; ++k)
    labels.insert(labels.end(), counts[k], k);
  rng.shuffle(labels);

  DomainDataset ds;
  ds.features = Mat(n, dim);
  ds.labels = std::move(labels);
  ds.num_classes = classes;
  ds.domain_tag = tag;
  ds.seed = master_seed;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j)
      ds.features(i, j) =
          mixture.means(ds.labels[i], j) + mixture.stddev * rng.normal();
  }
  return ds;
}

}  // namespace detail

struct DomainTriple {
  DomainDataset source;
  DomainDataset target;
  DomainDataset foundation;
};

/// Seeded construction of the source/target/foundation pools:
///  - source: the base Gaussian mixture (optionally label-corrupted),
///  - target: fresh draws from the base mixture pushed through the shift map,
///  - foundation: same class means with 3x the class-conditional variance,
///    standing in for the surrogate's broad pretraining corpus.
inline DomainTriple generate_domain_pair(int classes, int dim, int n_source,
                                         int n_target, const ShiftSpec& shift,
                                         std::uint64_t seed) {
  if (classes < 2) throw InvalidParameterError("generate: classes must be >= 2");
  if (dim < 2) throw InvalidParameterError("generate: dim must be >= 2");
  if (n_source < 10 * classes || n_target < 10 * classes)
    throw InvalidParameterError(
        "generate: n_source and n_target must be >= 10 * classes");
  shift.validate(dim);

  const MixtureSpec base = source_mixture_spec(classes, dim, shift.class_prior_skew);

  DomainTriple out;
  out.source = detail::sample_mixture(base, n_source, "source", seed, 1);
  out.target = detail::sample_mixture(base, n_target, "target", seed, 2);

  const Mat rot = rotation_matrix(dim, shift.rotation_angle);
  for (int i = 0; i < out.target.size(); ++i)
    out.target.features.row(i) =
        apply_shift(shift, rot, out.target.sample(i)).transpose();

  MixtureSpec broad = base;
  broad.stddev = kSourceStd * std::sqrt(kFoundationVarFactor);
  out.foundation = detail::sample_mixture(broad, n_source, "foundation", seed, 3);

  if (shift.label_noise > 0.0) {
    Rng noise_rng(derive_seed(seed, 4));
    for (int& label : out.source.labels) {
      if (noise_rng.uniform() < shift.label_noise) {
        const int offset =
            1 + static_cast<int>(noise_rng.uniform_int(classes - 1));
        label = (label + offset) % classes;
      }
    }
  }

  out.source.validate();
  out.target.validate();
  out.foundation.validate();
  return out;
}

/// A target-pool index together with the label the oracle revealed for it.
struct LabeledExample {
  std::size_t index = 0;
  int label = 0;
};

/// Labeling authority. Ground-truth labels live only behind reveal(), which
/// logs every query and enforces the one-shot budget.
class LabelingOracle {
 public:
  LabelingOracle(std::vector<int> hidden_labels, std::size_t budget)
      : hidden_labels_(std::move(hidden_labels)),
        queried_(hidden_labels_.size(), false),
        budget_(budget) {}

  /// oracle_label: reveal the label of one not-yet-queried sample.
  int reveal(std::size_t index) {
    if (index >= hidden_labels_.size())
      throw InvalidParameterError("oracle: index out of range");
    if (queried_[index])
      throw DuplicateQueryError("oracle: index " + std::to_string(index) +
                                " already queried");
    if (query_log_.size() >= budget_)
      throw BudgetExhaustedError("oracle: labeling budget exhausted");
    queried_[index] = true;
    query_log_.push_back(index);
    return hidden_labels_[index];
  }

  const std::vector<std::size_t>& query_log() const { return query_log_; }
  std::size_t budget() const { return budget_; }

 private:
  std::vector<int> hidden_labels_;
  std::vector<bool> queried_;
  std::vector<std::size_t> query_log_;
  std::size_t budget_;
};

// ---------------------------------------------------------------------------
// Plain-text serialization: one header line `C,d,n,domain_tag,seed`, then one
// `label,f_0,...,f_{d-1}` row per sample. %.17g keeps the round trip
// bit-exact while staying diffable.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& token, std::size_t line,
                           std::size_t field) {
  try {
    std::size_t pos = 0;
    const double value = std::stod(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw ParseError("dataset file line " + std::to_string(line) + ", field " +
                     std::to_string(field) + ": bad number '" + token + "'");
  }
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

inline void save_dataset(const DomainDataset& ds,
                         const std::filesystem::path& path) {
  ds.validate();
  if (ds.domain_tag.find(',') != std::string::npos ||
      ds.domain_tag.find('\n') != std::string::npos)
    throw InvalidParameterError("save_dataset: domain_tag contains a delimiter");
  std::ofstream out(path);
  if (!out) throw InvalidInputError("save_dataset: cannot open " + path.string());
  out << ds.num_classes << ',' << ds.dim() << ',' << ds.size() << ','
      << ds.domain_tag << ',' << ds.seed << '\n';
  for (int i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (int j = 0; j < ds.dim(); ++j)
      out << ',' << detail::format_double(ds.features(i, j));
    out << '\n';
  }
  if (!out) throw InvalidInputError("save_dataset: write failed on " + path.string());
}

inline DomainDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_dataset: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("dataset file line 1: missing header");
  const auto header = detail::split_csv(line);
  if (header.size() != 5)
    throw ParseError("dataset file line 1: expected 5 header fields, got " +
                     std::to_string(header.size()));
  DomainDataset ds;
  long n = 0;
  try {
    ds.num_classes = std::stoi(header[0]);
    const int dim = std::stoi(header[1]);
    n = std::stol(header[2]);
    ds.domain_tag = header[3];
    ds.seed = std::stoull(header[4]);
    if (ds.num_classes < 2 || dim < 1 || n < 1)
      throw std::invalid_argument("header");
    ds.features = Mat(n, dim);
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("dataset file line 1: malformed header '" + line + "'");
  }
  ds.labels.resize(n);
  for (long i = 0; i < n; ++i) {
    const std::size_t line_no = static_cast<std::size_t>(i) + 2;
    if (!std::getline(in, line))
      throw ParseError("dataset file line " + std::to_string(line_no) +
                       ": unexpected end of file (expected " +
                       std::to_string(n) + " rows)");
    const auto fields = detail::split_csv(line);
    if (fields.size() != static_cast<std::size_t>(ds.features.cols()) + 1)
      throw ParseError("dataset file line " + std::to_string(line_no) +
                       ": expected " + std::to_string(ds.features.cols() + 1) +
                       " fields, got " + std::to_string(fields.size()));
    try {
      ds.labels[i] = std::stoi(fields[0]);
    } catch (const std::exception&) {
      throw ParseError("dataset file line " + std::to_string(line_no) +
                       ", field 1: bad label '" + fields[0] + "'");
    }
    if (ds.labels[i] < 0 || ds.labels[i] >= ds.num_classes)
      throw DataError("dataset file row " + std::to_string(i) + " (line " +
                      std::to_string(line_no) + "): label " +
                      std::to_string(ds.labels[i]) + " out of range [0, " +
                      std::to_string(ds.num_classes) + ")");
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j)
      ds.features(i, j) = detail::parse_double(
          fields[static_cast<std::size_t>(j) + 1], line_no,
          static_cast<std::size_t>(j) + 2);
  }
  ds.validate();
  return ds;
}

}  // namespace sfada
