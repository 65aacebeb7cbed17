#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "expertgen/mixture.hpp"

namespace expertgen {

enum class ExpertKind { kEmbedding, kClassifier, kRegressor, kDense };

std::string_view to_string(ExpertKind kind);
ExpertKind parse_expert_kind(std::string_view name);

struct EmbeddingTarget {
  Vec embedding;  // unit norm
};
struct ClassTarget {
  int label = 0;
};
struct AgeTarget {
  double value = 0.0;
};
struct DenseTarget {
  std::vector<int> labels;  // one per patch
};

using GuidanceTarget = std::variant<EmbeddingTarget, ClassTarget, AgeTarget, DenseTarget>;

/// Frozen, differentiable analytic expert. loss/grad drive guidance, evaluate() is
/// the task metric reported for generated samples.
class ExpertModel {
 public:
  virtual ~ExpertModel() = default;

  virtual ExpertKind kind() const noexcept = 0;
  virtual int input_dim() const noexcept = 0;

  virtual double loss(const Vec& x, const GuidanceTarget& target) const = 0;
  virtual Vec grad(const Vec& x, const GuidanceTarget& target) const = 0;
  virtual double evaluate(const Vec& x, const GuidanceTarget& target) const = 0;

  /// True when larger evaluate() values are better (all kinds except regression).
  virtual bool higher_is_better() const noexcept { return true; }

  /// Same kind and shapes, weights perturbed by seeded noise of relative size `relative_scale`.
  virtual std::unique_ptr<ExpertModel> perturbed_copy(std::uint64_t seed, double relative_scale) const = 0;

  /// Throws ExpertError if the target variant or its contents do not fit this expert.
  virtual void check_target(const GuidanceTarget& target) const = 0;

 protected:
  void check_input(const Vec& x) const;
};

/// Identity-style expert: loss 1 - cos(Wx, e), metric cos(Wx, e).
class EmbeddingExpert final : public ExpertModel {
 public:
  explicit EmbeddingExpert(Mat projection);
  static EmbeddingExpert random(int embed_dim, int input_dim, std::uint64_t seed);

  ExpertKind kind() const noexcept override { return ExpertKind::kEmbedding; }
  int input_dim() const noexcept override { return static_cast<int>(projection_.cols()); }
  int embed_dim() const noexcept { return static_cast<int>(projection_.rows()); }
  const Mat& projection() const noexcept { return projection_; }

  /// Unit embedding Wx / |Wx|; throws ExpertError when Wx = 0.
  Vec embed(const Vec& x) const;

  double loss(const Vec& x, const GuidanceTarget& target) const override;
  Vec grad(const Vec& x, const GuidanceTarget& target) const override;
  double evaluate(const Vec& x, const GuidanceTarget& target) const override;
  std::unique_ptr<ExpertModel> perturbed_copy(std::uint64_t seed, double relative_scale) const override;
  void check_target(const GuidanceTarget& target) const override;

 private:
  const Vec& target_of(const GuidanceTarget& target) const;
  Mat projection_;
};

/// Attribute-style expert: softmax(Vx), loss -log p_y, metric 1[argmax = y].
class ClassifierExpert final : public ExpertModel {
 public:
  explicit ClassifierExpert(Mat logits);
  static ClassifierExpert random(int n_classes, int input_dim, std::uint64_t seed);
  /// Row y is scale * (mean of the components labelled y); labels must be 0..K-1.
  static ClassifierExpert from_mixture(const GaussianMixture& mixture, double scale);

  ExpertKind kind() const noexcept override { return ExpertKind::kClassifier; }
  int input_dim() const noexcept override { return static_cast<int>(logits_.cols()); }
  int n_classes() const noexcept { return static_cast<int>(logits_.rows()); }
  const Mat& logits() const noexcept { return logits_; }

  Vec probabilities(const Vec& x) const;
  int predict(const Vec& x) const;

  double loss(const Vec& x, const GuidanceTarget& target) const override;
  Vec grad(const Vec& x, const GuidanceTarget& target) const override;
  double evaluate(const Vec& x, const GuidanceTarget& target) const override;
  std::unique_ptr<ExpertModel> perturbed_copy(std::uint64_t seed, double relative_scale) const override;
  void check_target(const GuidanceTarget& target) const override;

 private:
  int label_of(const GuidanceTarget& target) const;
  Mat logits_;
};

/// Age-style expert: a = w.x + b, loss and metric |a - a_gt|; subgradient 0 at the kink.
class RegressorExpert final : public ExpertModel {
 public:
  RegressorExpert(Vec weights, double bias);
  static RegressorExpert random(int input_dim, std::uint64_t seed, double bias = 0.0);

  ExpertKind kind() const noexcept override { return ExpertKind::kRegressor; }
  int input_dim() const noexcept override { return static_cast<int>(weights_.size()); }
  bool higher_is_better() const noexcept override { return false; }
  const Vec& weights() const noexcept { return weights_; }
  double bias() const noexcept { return bias_; }

  double predict(const Vec& x) const;

  double loss(const Vec& x, const GuidanceTarget& target) const override;
  Vec grad(const Vec& x, const GuidanceTarget& target) const override;
  double evaluate(const Vec& x, const GuidanceTarget& target) const override;
  std::unique_ptr<ExpertModel> perturbed_copy(std::uint64_t seed, double relative_scale) const override;
  void check_target(const GuidanceTarget& target) const override;

 private:
  double target_of(const GuidanceTarget& target) const;
  Vec weights_;
  double bias_;
};

/// Segmentation-style expert: the input is split into P equal contiguous patches, each
/// with its own logit matrix. Loss is the summed cross-entropy, metric the patch accuracy.
class DenseExpert final : public ExpertModel {
 public:
  explicit DenseExpert(std::vector<Mat> patch_logits);
  static DenseExpert random(int n_patches, int n_classes, int input_dim, std::uint64_t seed);

  ExpertKind kind() const noexcept override { return ExpertKind::kDense; }
  int input_dim() const noexcept override { return input_dim_; }
  int n_patches() const noexcept { return static_cast<int>(patches_.size()); }
  int patch_size() const noexcept { return patch_size_; }
  const std::vector<Mat>& patch_logits() const noexcept { return patches_; }

  std::vector<int> predict(const Vec& x) const;

  double loss(const Vec& x, const GuidanceTarget& target) const override;
  Vec grad(const Vec& x, const GuidanceTarget& target) const override;
  double evaluate(const Vec& x, const GuidanceTarget& target) const override;
  std::unique_ptr<ExpertModel> perturbed_copy(std::uint64_t seed, double relative_scale) const override;
  void check_target(const GuidanceTarget& target) const override;

 private:
  const std::vector<int>& labels_of(const GuidanceTarget& target) const;
  std::vector<Mat> patches_;
  int patch_size_ = 0;
  int input_dim_ = 0;
};

/// Weighted sum of experts, each bound to its own target.
class MultiExpert {
 public:
  struct Entry {
    std::shared_ptr<const ExpertModel> expert;
    GuidanceTarget target;
    double weight = 1.0;
    std::string name;
  };

  explicit MultiExpert(std::vector<Entry> entries);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  int input_dim() const noexcept { return entries_.front().expert->input_dim(); }

  double loss(const Vec& x) const;
  Vec grad(const Vec& x) const;

 private:
  std::vector<Entry> entries_;
};

/// Evaluation-only expert of the same kind and shape as `guide`, with weights
/// perturbed by noise drawn from `seed`. Never used for guidance.
std::unique_ptr<ExpertModel> held_out_evaluator(const ExpertModel& guide, std::uint64_t seed,
                                                double relative_scale = 0.3);

}  // namespace expertgen
