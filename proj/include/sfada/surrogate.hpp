#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sfada/dataset.hpp"
#include "sfada/errors.hpp"
#include "sfada/numerics.hpp"
#include "sfada/rng.hpp"

namespace sfada {

inline constexpr int kSurrogateDim = 64;
inline constexpr int kContextLen = 16;
inline constexpr double kSurrogateTau = 0.05;

namespace detail {

inline Vec normalize_unit(const Vec& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw InvalidInputError("normalize: zero-norm vector");
  return v / n;
}

/// Median pairwise Euclidean distance, stride-subsampled to at most 512 rows.
inline double median_pairwise_distance(const Mat& points) {
  const Eigen::Index n = points.rows();
  const Eigen::Index stride = std::max<Eigen::Index>(1, n / 512);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; i += stride) keep.push_back(i);
  std::vector<double> dists;
  dists.reserve(keep.size() * (keep.size() - 1) / 2);
  for (std::size_t a = 0; a < keep.size(); ++a)
    for (std::size_t b = a + 1; b < keep.size(); ++b)
      dists.push_back((points.row(keep[a]) - points.row(keep[b])).norm());
  if (dists.empty()) throw InvalidInputError("median distance: too few points");
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  return dists[dists.size() / 2];
}

}  // namespace detail

/// Random-Fourier-feature image encoder. Weights are drawn once from the
/// foundation corpus statistics and never change afterwards; encode output is
/// always L2-normalized. The call counter exists so the harness can assert
/// that evaluation after adaptation never touches the surrogate.
class FrozenEncoder {
 public:
  FrozenEncoder(const DomainDataset& foundation, int feature_dim,
                std::uint64_t seed)
      : length_scale_(detail::median_pairwise_distance(foundation.features)) {
    if (feature_dim < 1)
      throw InvalidParameterError("encoder: feature_dim must be >= 1");
    Rng rng(derive_seed(seed, 21));
    omega_ = Mat(feature_dim, foundation.dim());
    phase_ = Vec(feature_dim);
    const double sigma = 1.0 / length_scale_;
    for (int i = 0; i < feature_dim; ++i)
      for (int j = 0; j < foundation.dim(); ++j)
        omega_(i, j) = sigma * rng.normal();
    for (int i = 0; i < feature_dim; ++i)
      phase_[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  /// Direct construction from explicit weights (tests, hand-set oracles).
  FrozenEncoder(Mat omega, Vec phase)
      : omega_(std::move(omega)), phase_(std::move(phase)), length_scale_(1.0) {
    if (omega_.rows() != phase_.size())
      throw ShapeError("encoder: omega/phase dimension mismatch");
  }

  FrozenEncoder(const FrozenEncoder& other)
      : omega_(other.omega_),
        phase_(other.phase_),
        length_scale_(other.length_scale_),
        calls_(other.calls_.load()) {}
  FrozenEncoder& operator=(const FrozenEncoder& other) {
    omega_ = other.omega_;
    phase_ = other.phase_;
    length_scale_ = other.length_scale_;
    calls_.store(other.calls_.load());
    return *this;
  }

  int input_dim() const { return static_cast<int>(omega_.cols()); }
  int feature_dim() const { return static_cast<int>(omega_.rows()); }
  double length_scale() const { return length_scale_; }

  /// z = normalize(cos(omega * x + phase)).
  Vec encode(const Vec& x) const {
    if (x.size() != omega_.cols())
      throw ShapeError("encoder: input dimension mismatch");
    ++calls_;
    return detail::normalize_unit(((omega_ * x + phase_).array().cos()).matrix());
  }

  /// One row of encoded features per dataset row.
  Mat encode_all(const DomainDataset& ds) const {
    Mat out(ds.size(), feature_dim());
    for (int i = 0; i < ds.size(); ++i)
      out.row(i) = encode(ds.sample(i)).transpose();
    return out;
  }

  std::uint64_t encode_calls() const { return calls_.load(); }

 private:
  Mat omega_;
  Vec phase_;
  double length_scale_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

/// Learnable context vectors plus everything frozen around them: class
/// tokens, the mixing map, the temperature and the anchor embeddings.
class PromptBank {
 public:
  /// Seeded construction; class tokens and anchors are filled by
  /// init_anchors() before first use.
  PromptBank(int num_classes, int feature_dim, int context_len, double tau,
             std::uint64_t seed)
      : tau_(tau), seed_(seed) {
    if (num_classes < 2)
      throw InvalidParameterError("prompt bank: needs >= 2 classes");
    if (context_len < 1)
      throw InvalidParameterError("prompt bank: context_len must be >= 1");
    if (!(tau > 0.0)) throw InvalidParameterError("prompt bank: tau must be > 0");
    class_tokens_ = Mat::Zero(num_classes, feature_dim);
    anchors_ = Mat::Zero(num_classes, feature_dim);
    context_ = Mat::Zero(context_len, feature_dim);
    mixing_ = random_orthogonal(feature_dim, derive_seed(seed, 31));
    initialized_ = false;
  }

  /// Direct construction from explicit fields (tests, hand-set oracles).
  PromptBank(Mat class_tokens, Mat mixing, Mat context, double tau,
             std::uint64_t seed = 0)
      : class_tokens_(std::move(class_tokens)),
        mixing_(std::move(mixing)),
        context_(std::move(context)),
        tau_(tau),
        seed_(seed),
        initialized_(true) {
    anchors_ = Mat(class_tokens_.rows(), class_tokens_.cols());
    for (Eigen::Index k = 0; k < class_tokens_.rows(); ++k)
      anchors_.row(k) =
          detail::normalize_unit(class_tokens_.row(k).transpose()).transpose();
  }

  int num_classes() const { return static_cast<int>(class_tokens_.rows()); }
  int feature_dim() const { return static_cast<int>(class_tokens_.cols()); }
  int context_len() const { return static_cast<int>(context_.rows()); }
  double tau() const { return tau_; }
  std::uint64_t seed() const { return seed_; }

  const Mat& class_tokens() const { return class_tokens_; }
  const Mat& mixing() const { return mixing_; }
  const Mat& anchors() const { return anchors_; }
  const Mat& context() const { return context_; }

  /// The only mutation the adaptation losses are allowed to make.
  void set_context(Mat v) {
    if (v.rows() != context_.rows() || v.cols() != context_.cols())
      throw ShapeError("prompt bank: context shape mismatch");
    context_ = std::move(v);
  }

  /// Class tokens from foundation class means in encoder space; anchors are
  /// their normalized copies and the context starts at zero.
  void init_anchors(const DomainDataset& foundation, const FrozenEncoder& enc) {
    if (foundation.num_classes != num_classes())
      throw DataError("init_anchors: class count mismatch");
    Mat sums = Mat::Zero(num_classes(), feature_dim());
    std::vector<int> counts(num_classes(), 0);
    for (int i = 0; i < foundation.size(); ++i) {
      sums.row(foundation.labels[i]) += enc.encode(foundation.sample(i)).transpose();
      ++counts[foundation.labels[i]];
    }
    for (int k = 0; k < num_classes(); ++k) {
      if (counts[k] == 0)
        throw DataError("init_anchors: foundation corpus has no samples of class " +
                        std::to_string(k));
      class_tokens_.row(k) =
          detail::normalize_unit(sums.row(k).transpose() / counts[k]).transpose();
      anchors_.row(k) =
          detail::normalize_unit(class_tokens_.row(k).transpose()).transpose();
    }
    context_.setZero();
    initialized_ = true;
  }

  bool initialized() const { return initialized_; }

  /// w_k = normalize(c_k + P * mean(v)). With v = 0 this reproduces the
  /// anchor computation bit for bit.
  Vec text_embed(int k) const {
    if (k < 0 || k >= num_classes())
      throw InvalidParameterError("text_embed: class index out of range");
    require_init();
    return detail::normalize_unit(class_tokens_.row(k).transpose() +
                                  mixing_ * mean_context());
  }

  /// All class embeddings, one row per class.
  Mat embeddings() const {
    require_init();
    const Vec shift = mixing_ * mean_context();
    Mat w(num_classes(), feature_dim());
    for (int k = 0; k < num_classes(); ++k)
      w.row(k) =
          detail::normalize_unit(class_tokens_.row(k).transpose() + shift)
              .transpose();
    return w;
  }

  /// p_V(x): softmax over cosine similarities between the encoded image and
  /// the class embeddings, at the bank temperature.
  ProbVector predict_encoded(const Vec& image_features) const {
    const Vec f = detail::normalize_unit(image_features);
    const Mat w = embeddings();
    Vec sims(num_classes());
    for (int k = 0; k < num_classes(); ++k) sims[k] = f.dot(w.row(k).transpose());
    return softmax(sims, tau_);
  }

  ProbVector predict(const FrozenEncoder& enc, const Vec& x) const {
    return predict_encoded(enc.encode(x));
  }

  /// (1/C) sum_k ||w_k - w0_k||^2; exactly zero at the anchors.
  double kg_loss() const {
    require_init();
    const Mat w = embeddings();
    return (w - anchors_).rowwise().squaredNorm().sum() / num_classes();
  }

  /// Replace the anchor block verbatim (deserialization only, where the
  /// on-disk anchors are authoritative).
  void overwrite_anchors(Mat anchors) {
    if (anchors.rows() != class_tokens_.rows() ||
        anchors.cols() != class_tokens_.cols())
      throw ShapeError("prompt bank: anchor shape mismatch");
    anchors_ = std::move(anchors);
  }

  static Mat random_orthogonal(int dim, std::uint64_t seed) {
    Rng rng(seed);
    Mat g(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(dim, dim);
    const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < dim; ++j)
      if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
  }

 private:
  void require_init() const {
    if (!initialized_)
      throw ContractError("prompt bank: anchors not initialized");
  }

  Vec mean_context() const { return context_.colwise().mean().transpose(); }

  Mat class_tokens_;  // frozen
  Mat mixing_;        // frozen
  Mat anchors_;       // frozen
  Mat context_;       // learnable
  double tau_;        // frozen
  std::uint64_t seed_ = 0;
  bool initialized_ = false;
};

/// Loss and analytic gradient of a weighted cross-entropy through the bank,
/// taken with respect to the context rows only:
///   L = (1/N) sum_i W_i * H(t_i, softmax(f_i . w / student_tau))
///       + kg_scale * L_kg.
/// student_tau is the bank temperature when the bank is predicting (Eq-1
/// style) and 1 when it is the distillation student.
struct PromptGrad {
  double ce_term = 0.0;
  double kg_term = 0.0;
  Mat context_grad;
};

inline PromptGrad prompt_loss_grad(const PromptBank& bank, const Mat& encoded,
                                   const std::vector<ProbVector>& teachers,
                                   const Vec& weights, double kg_scale,
                                   double student_tau) {
  const Eigen::Index n = encoded.rows();
  if (n == 0) throw InvalidInputError("prompt_loss_grad: empty batch");
  if (static_cast<Eigen::Index>(teachers.size()) != n || weights.size() != n)
    throw ShapeError("prompt_loss_grad: batch size mismatch");
  if (!(student_tau > 0.0))
    throw InvalidParameterError("prompt_loss_grad: student_tau must be > 0");

  const int classes = bank.num_classes();
  const double tau = student_tau;
  const Vec shift = bank.mixing() * bank.context().colwise().mean().transpose();

  Mat w(classes, bank.feature_dim());
  std::vector<double> u_norm(classes);
  for (int k = 0; k < classes; ++k) {
    const Vec u = bank.class_tokens().row(k).transpose() + shift;
    u_norm[k] = u.norm();
    if (!(u_norm[k] > 0.0))
      throw NumericError("prompt_loss_grad: zero-norm embedding");
    w.row(k) = (u / u_norm[k]).transpose();
  }

  PromptGrad out;
  Mat w_grad = Mat::Zero(classes, bank.feature_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec f = detail::normalize_unit(encoded.row(i).transpose());
    const Vec sims = w * f;
    const ProbVector p = softmax(sims, tau);
    out.ce_term += weights[i] * cross_entropy(teachers[i], p);
    const Vec dsims =
        ce_softmax_score_grad(p, teachers[i], tau, weights[i] / n);
    w_grad += dsims * f.transpose();
  }
  out.ce_term /= static_cast<double>(n);

  out.kg_term = (w - bank.anchors()).rowwise().squaredNorm().sum() / classes;
  if (kg_scale != 0.0)
    w_grad += (2.0 * kg_scale / classes) * (w - bank.anchors());

  // Through w_k = u_k / ||u_k||, then u_k = c_k + P * mean(v).
  Vec shift_grad = Vec::Zero(bank.feature_dim());
  for (int k = 0; k < classes; ++k) {
    const Vec g = w_grad.row(k).transpose();
    const Vec wk = w.row(k).transpose();
    shift_grad += (g - wk * wk.dot(g)) / u_norm[k];
  }
  const Vec mean_grad = bank.mixing().transpose() * shift_grad;

  out.context_grad = Mat(bank.context_len(), bank.feature_dim());
  for (int r = 0; r < bank.context_len(); ++r)
    out.context_grad.row(r) = (mean_grad / bank.context_len()).transpose();
  return out;
}

/// Fraction of samples whose highest-similarity class embedding matches the
/// dataset label (temperature-independent).
inline double surrogate_accuracy(const PromptBank& bank,
                                 const FrozenEncoder& enc,
                                 const DomainDataset& ds) {
  const Mat w = bank.embeddings();
  int hits = 0;
  for (int i = 0; i < ds.size(); ++i) {
    Eigen::Index k = 0;
    (w * enc.encode(ds.sample(i))).maxCoeff(&k);
    hits += (static_cast<int>(k) == ds.labels[i]);
  }
  return static_cast<double>(hits) / ds.size();
}

// ---------------------------------------------------------------------------
// Persistence: flat text with the frozen and learnable sections marked.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_matrix(std::ofstream& out, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

inline Mat read_matrix(std::ifstream& in, Eigen::Index rows, Eigen::Index cols,
                       const std::string& what) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::string token;
      if (!(in >> token))
        throw ParseError("prompt bank file: truncated " + what + " block");
      m(i, j) = parse_double(token, 0, 0);
    }
  return m;
}

inline void expect_section(std::ifstream& in, const std::string& name,
                           const std::string& kind) {
  std::string a, b;
  if (!(in >> a >> b) || a != name || b != kind)
    throw ParseError("prompt bank file: expected section '" + name + " " +
                     kind + "'");
}

}  // namespace detail

inline void save_prompt_bank(const PromptBank& bank,
                             const std::filesystem::path& path) {
  if (!bank.initialized())
    throw ContractError("save_prompt_bank: anchors not initialized");
  std::ofstream out(path);
  if (!out)
    throw InvalidInputError("save_prompt_bank: cannot open " + path.string());
  out << "promptbank " << bank.num_classes() << ' ' << bank.feature_dim()
      << ' ' << bank.context_len() << ' ' << detail::format_double(bank.tau())
      << ' ' << bank.seed() << '\n';
  out << "class_tokens frozen\n";
  detail::write_matrix(out, bank.class_tokens());
  out << "mixing frozen\n";
  detail::write_matrix(out, bank.mixing());
  out << "anchors frozen\n";
  detail::write_matrix(out, bank.anchors());
  out << "context learnable\n";
  detail::write_matrix(out, bank.context());
}

inline PromptBank load_prompt_bank(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_prompt_bank: cannot open " + path.string());
  std::string magic;
  int classes = 0, dim = 0, context_len = 0;
  std::string tau_token;
  std::uint64_t seed = 0;
  if (!(in >> magic >> classes >> dim >> context_len >> tau_token >> seed) ||
      magic != "promptbank" || classes < 2 || dim < 1 || context_len < 1)
    throw ParseError("load_prompt_bank: malformed header in " + path.string());
  const double tau = detail::parse_double(tau_token, 1, 5);

  detail::expect_section(in, "class_tokens", "frozen");
  const Mat tokens = detail::read_matrix(in, classes, dim, "class_tokens");
  detail::expect_section(in, "mixing", "frozen");
  const Mat mixing = detail::read_matrix(in, dim, dim, "mixing");
  detail::expect_section(in, "anchors", "frozen");
  const Mat anchors = detail::read_matrix(in, classes, dim, "anchors");
  detail::expect_section(in, "context", "learnable");
  const Mat context = detail::read_matrix(in, context_len, dim, "context");

  PromptBank bank(tokens, mixing, context, tau, seed);
  bank.overwrite_anchors(anchors);
  return bank;
}

}  // namespace sfada
