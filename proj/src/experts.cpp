#include "expertgen/experts.hpp"

#include <cmath>
#include <map>
#include <random>
#include <string>

#include "expertgen/errors.hpp"

namespace expertgen {

namespace {

Mat gaussian_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      m(i, j) = normal(rng);
    }
  }
  return m;
}

// Adds seeded noise with standard deviation relative_scale * rms(m).
Mat perturb(const Mat& m, double relative_scale, std::mt19937_64& rng) {
  if (!(relative_scale >= 0.0) || !std::isfinite(relative_scale)) {
    throw ExpertError("perturbation scale must be finite and >= 0");
  }
  const double rms = std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
  return m + gaussian_matrix(static_cast<int>(m.rows()), static_cast<int>(m.cols()), relative_scale * rms, rng);
}

Vec softmax(const Vec& logits) {
  const double top = logits.maxCoeff();
  Vec p = (logits.array() - top).exp().matrix();
  return p / p.sum();
}

double cross_entropy(const Vec& logits, int label) {
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return lse - logits(label);
}

int argmax(const Vec& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

void check_finite_matrix(const Mat& m, const char* what) {
  if (m.size() == 0) {
    throw ExpertError(std::string(what) + " must be nonempty");
  }
  if (!m.allFinite()) {
    throw ExpertError(std::string(what) + " has non-finite entries");
  }
}

}  // namespace

std::string_view to_string(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::kEmbedding:
      return "embedding";
    case ExpertKind::kClassifier:
      return "classifier";
    case ExpertKind::kRegressor:
      return "regressor";
    case ExpertKind::kDense:
      return "dense";
  }
  return "unknown";
}

ExpertKind parse_expert_kind(std::string_view name) {
  if (name == "embedding") return ExpertKind::kEmbedding;
  if (name == "classifier") return ExpertKind::kClassifier;
  if (name == "regressor") return ExpertKind::kRegressor;
  if (name == "dense") return ExpertKind::kDense;
  throw ConfigError("unknown expert kind '" + std::string(name) + "'");
}

void ExpertModel::check_input(const Vec& x) const {
  if (x.size() != input_dim()) {
    throw ExpertError("expert input has dimension " + std::to_string(x.size()) + ", expected " +
                      std::to_string(input_dim()));
  }
}

// ---- embedding ----

EmbeddingExpert::EmbeddingExpert(Mat projection) : projection_(std::move(projection)) {
  check_finite_matrix(projection_, "embedding projection");
}

EmbeddingExpert EmbeddingExpert::random(int embed_dim, int input_dim, std::uint64_t seed) {
  if (embed_dim < 1 || input_dim < 1) {
    throw ExpertError("embedding dimensions must be >= 1");
  }
  std::mt19937_64 rng(seed);
  return EmbeddingExpert(gaussian_matrix(embed_dim, input_dim, 1.0 / std::sqrt(input_dim), rng));
}

Vec EmbeddingExpert::embed(const Vec& x) const {
  check_input(x);
  const Vec y = projection_ * x;
  const double n = y.norm();
  if (!(n > 0.0)) {
    throw ExpertError("embedding is undefined: Wx = 0");
  }
  return y / n;
}

const Vec& EmbeddingExpert::target_of(const GuidanceTarget& target) const {
  check_target(target);
  return std::get<EmbeddingTarget>(target).embedding;
}

void EmbeddingExpert::check_target(const GuidanceTarget& target) const {
  const auto* t = std::get_if<EmbeddingTarget>(&target);
  if (t == nullptr) {
    throw ExpertError("embedding expert needs an embedding target");
  }
  if (t->embedding.size() != embed_dim()) {
    throw ExpertError("embedding target dimension mismatch");
  }
  if (std::abs(t->embedding.norm() - 1.0) > 1e-9) {
    throw ExpertError("embedding target must have unit norm");
  }
}

double EmbeddingExpert::loss(const Vec& x, const GuidanceTarget& target) const {
  return 1.0 - embed(x).dot(target_of(target));
}

Vec EmbeddingExpert::grad(const Vec& x, const GuidanceTarget& target) const {
  const Vec& e = target_of(target);
  check_input(x);
  const Vec y = projection_ * x;
  const double n = y.norm();
  if (!(n > 0.0)) {
    throw ExpertError("embedding is undefined: Wx = 0");
  }
  const Vec u = y / n;
  const Vec dy = -(e - u.dot(e) * u) / n;
  return projection_.transpose() * dy;
}

double EmbeddingExpert::evaluate(const Vec& x, const GuidanceTarget& target) const {
  return embed(x).dot(target_of(target));
}

std::unique_ptr<ExpertModel> EmbeddingExpert::perturbed_copy(std::uint64_t seed, double relative_scale) const {
  std::mt19937_64 rng(seed);
  return std::make_unique<EmbeddingExpert>(perturb(projection_, relative_scale, rng));
}

// ---- classifier ----

ClassifierExpert::ClassifierExpert(Mat logits) : logits_(std::move(logits)) {
  check_finite_matrix(logits_, "classifier logit matrix");
  if (logits_.rows() < 2) {
    throw ExpertError("classifier needs at least two classes");
  }
}

ClassifierExpert ClassifierExpert::random(int n_classes, int input_dim, std::uint64_t seed) {
  if (n_classes < 2 || input_dim < 1) {
    throw ExpertError("classifier needs >= 2 classes and input_dim >= 1");
  }
  std::mt19937_64 rng(seed);
  return ClassifierExpert(gaussian_matrix(n_classes, input_dim, 1.0 / std::sqrt(input_dim), rng));
}

ClassifierExpert ClassifierExpert::from_mixture(const GaussianMixture& mixture, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ExpertError("classifier scale must be positive");
  }
  const auto labels = mixture.labels();
  const int n_classes = static_cast<int>(labels.size());
  for (int y = 0; y < n_classes; ++y) {
    if (labels[static_cast<std::size_t>(y)] != y) {
      throw ExpertError("label-tied classifier needs mixture labels 0..K-1");
    }
  }
  Mat v = Mat::Zero(n_classes, mixture.dim());
  std::vector<double> mass(static_cast<std::size_t>(n_classes), 0.0);
  for (const auto& c : mixture.components()) {
    v.row(c.label) += c.weight * c.mean.transpose();
    mass[static_cast<std::size_t>(c.label)] += c.weight;
  }
  for (int y = 0; y < n_classes; ++y) {
    v.row(y) *= scale / mass[static_cast<std::size_t>(y)];
  }
  return ClassifierExpert(std::move(v));
}

void ClassifierExpert::check_target(const GuidanceTarget& target) const {
  const auto* t = std::get_if<ClassTarget>(&target);
  if (t == nullptr) {
    throw ExpertError("classifier expert needs a class target");
  }
  if (t->label < 0 || t->label >= n_classes()) {
    throw ExpertError("class target " + std::to_string(t->label) + " outside [0, " +
                      std::to_string(n_classes()) + ")");
  }
}

int ClassifierExpert::label_of(const GuidanceTarget& target) const {
  check_target(target);
  return std::get<ClassTarget>(target).label;
}

Vec ClassifierExpert::probabilities(const Vec& x) const {
  check_input(x);
  return softmax(logits_ * x);
}

int ClassifierExpert::predict(const Vec& x) const {
  check_input(x);
  return argmax(logits_ * x);
}

double ClassifierExpert::loss(const Vec& x, const GuidanceTarget& target) const {
  const int y = label_of(target);
  check_input(x);
  return cross_entropy(logits_ * x, y);
}

Vec ClassifierExpert::grad(const Vec& x, const GuidanceTarget& target) const {
  const int y = label_of(target);
  Vec p = probabilities(x);
  p(y) -= 1.0;
  return logits_.transpose() * p;
}

double ClassifierExpert::evaluate(const Vec& x, const GuidanceTarget& target) const {
  return predict(x) == label_of(target) ? 1.0 : 0.0;
}

std::unique_ptr<ExpertModel> ClassifierExpert::perturbed_copy(std::uint64_t seed, double relative_scale) const {
  std::mt19937_64 rng(seed);
  return std::make_unique<ClassifierExpert>(perturb(logits_, relative_scale, rng));
}

// ---- regressor ----

RegressorExpert::RegressorExpert(Vec weights, double bias) : weights_(std::move(weights)), bias_(bias) {
  check_finite_matrix(weights_, "regressor weights");
  if (!std::isfinite(bias_)) {
    throw ExpertError("regressor bias must be finite");
  }
}

RegressorExpert RegressorExpert::random(int input_dim, std::uint64_t seed, double bias) {
  if (input_dim < 1) {
    throw ExpertError("regressor input_dim must be >= 1");
  }
  std::mt19937_64 rng(seed);
  return RegressorExpert(gaussian_matrix(input_dim, 1, 1.0 / std::sqrt(input_dim), rng), bias);
}

void RegressorExpert::check_target(const GuidanceTarget& target) const {
  const auto* t = std::get_if<AgeTarget>(&target);
  if (t == nullptr) {
    throw ExpertError("regressor expert needs a scalar target");
  }
  if (!std::isfinite(t->value)) {
    throw ExpertError("regressor target must be finite");
  }
}

double RegressorExpert::target_of(const GuidanceTarget& target) const {
  check_target(target);
  return std::get<AgeTarget>(target).value;
}

double RegressorExpert::predict(const Vec& x) const {
  check_input(x);
  return weights_.dot(x) + bias_;
}

double RegressorExpert::loss(const Vec& x, const GuidanceTarget& target) const {
  return std::abs(predict(x) - target_of(target));
}

Vec RegressorExpert::grad(const Vec& x, const GuidanceTarget& target) const {
  const double r = predict(x) - target_of(target);
  if (r > 0.0) return weights_;
  if (r < 0.0) return -weights_;
  return Vec::Zero(weights_.size());
}

double RegressorExpert::evaluate(const Vec& x, const GuidanceTarget& target) const {
  return loss(x, target);
}

std::unique_ptr<ExpertModel> RegressorExpert::perturbed_copy(std::uint64_t seed, double relative_scale) const {
  std::mt19937_64 rng(seed);
  return std::make_unique<RegressorExpert>(perturb(weights_, relative_scale, rng), bias_);
}

// ---- dense ----

DenseExpert::DenseExpert(std::vector<Mat> patch_logits) : patches_(std::move(patch_logits)) {
  if (patches_.empty()) {
    throw ExpertError("dense expert needs at least one patch");
  }
  patch_size_ = static_cast<int>(patches_.front().cols());
  const auto n_classes = patches_.front().rows();
  for (const auto& p : patches_) {
    check_finite_matrix(p, "patch logit matrix");
    if (p.cols() != patch_size_ || p.rows() != n_classes) {
      throw ExpertError("all patch logit matrices must share one shape");
    }
  }
  if (n_classes < 2) {
    throw ExpertError("dense expert needs at least two classes per patch");
  }
  input_dim_ = patch_size_ * n_patches();
}

DenseExpert DenseExpert::random(int n_patches, int n_classes, int input_dim, std::uint64_t seed) {
  if (n_patches < 1 || n_classes < 2 || input_dim < 1) {
    throw ExpertError("dense expert needs n_patches >= 1, n_classes >= 2, input_dim >= 1");
  }
  if (input_dim % n_patches != 0) {
    throw ConfigError("input dimension " + std::to_string(input_dim) + " is not divisible into " +
                      std::to_string(n_patches) + " patches");
  }
  const int size = input_dim / n_patches;
  std::mt19937_64 rng(seed);
  std::vector<Mat> patches;
  patches.reserve(static_cast<std::size_t>(n_patches));
  for (int i = 0; i < n_patches; ++i) {
    patches.push_back(gaussian_matrix(n_classes, size, 1.0 / std::sqrt(size), rng));
  }
  return DenseExpert(std::move(patches));
}

void DenseExpert::check_target(const GuidanceTarget& target) const {
  const auto* t = std::get_if<DenseTarget>(&target);
  if (t == nullptr) {
    throw ExpertError("dense expert needs per-patch labels");
  }
  if (static_cast<int>(t->labels.size()) != n_patches()) {
    throw ExpertError("dense target needs one label per patch");
  }
  const auto k = patches_.front().rows();
  for (int y : t->labels) {
    if (y < 0 || y >= k) {
      throw ExpertError("dense target label " + std::to_string(y) + " out of range");
    }
  }
}

const std::vector<int>& DenseExpert::labels_of(const GuidanceTarget& target) const {
  check_target(target);
  return std::get<DenseTarget>(target).labels;
}

std::vector<int> DenseExpert::predict(const Vec& x) const {
  check_input(x);
  std::vector<int> out;
  out.reserve(patches_.size());
  for (int i = 0; i < n_patches(); ++i) {
    out.push_back(argmax(patches_[static_cast<std::size_t>(i)] * x.segment(i * patch_size_, patch_size_)));
  }
  return out;
}

double DenseExpert::loss(const Vec& x, const GuidanceTarget& target) const {
  const auto& labels = labels_of(target);
  check_input(x);
  double total = 0.0;
  for (int i = 0; i < n_patches(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    total += cross_entropy(patches_[iu] * x.segment(i * patch_size_, patch_size_), labels[iu]);
  }
  return total;
}

Vec DenseExpert::grad(const Vec& x, const GuidanceTarget& target) const {
  const auto& labels = labels_of(target);
  check_input(x);
  Vec g(input_dim_);
  for (int i = 0; i < n_patches(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    Vec p = softmax(patches_[iu] * x.segment(i * patch_size_, patch_size_));
    p(labels[iu]) -= 1.0;
    g.segment(i * patch_size_, patch_size_) = patches_[iu].transpose() * p;
  }
  return g;
}

double DenseExpert::evaluate(const Vec& x, const GuidanceTarget& target) const {
  const auto& labels = labels_of(target);
  const auto pred = predict(x);
  int hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    hits += pred[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::unique_ptr<ExpertModel> DenseExpert::perturbed_copy(std::uint64_t seed, double relative_scale) const {
  std::mt19937_64 rng(seed);
  std::vector<Mat> out;
  out.reserve(patches_.size());
  for (const auto& p : patches_) {
    out.push_back(perturb(p, relative_scale, rng));
  }
  return std::make_unique<DenseExpert>(std::move(out));
}

// ---- multi ----

MultiExpert::MultiExpert(std::vector<Entry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) {
    throw ExpertError("multi-expert needs at least one entry");
  }
  const int d = entries_.front().expert ? entries_.front().expert->input_dim() : 0;
  for (const auto& e : entries_) {
    if (!e.expert) {
      throw ExpertError("multi-expert entry has no expert");
    }
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
      throw ExpertError("multi-expert weights must be finite and >= 0");
    }
    if (e.expert->input_dim() != d) {
      throw ExpertError("multi-expert entries disagree on input dimension");
    }
    e.expert->check_target(e.target);
  }
}

double MultiExpert::loss(const Vec& x) const {
  double total = 0.0;
  for (const auto& e : entries_) {
    total += e.weight * e.expert->loss(x, e.target);
  }
  return total;
}

Vec MultiExpert::grad(const Vec& x) const {
  Vec g = Vec::Zero(x.size());
  for (const auto& e : entries_) {
    g.noalias() += e.weight * e.expert->grad(x, e.target);
  }
  return g;
}

std::unique_ptr<ExpertModel> held_out_evaluator(const ExpertModel& guide, std::uint64_t seed,
                                                double relative_scale) {
  return guide.perturbed_copy(seed, relative_scale);
}

}  // namespace expertgen
