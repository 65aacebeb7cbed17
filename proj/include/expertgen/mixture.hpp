#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "expertgen/schedule.hpp"

namespace expertgen {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct GaussianComponent {
  double weight = 0.0;
  Vec mean;
  Mat covariance;
  int label = 0;
};

/// Ground-truth data distribution: a finite mixture of full-covariance Gaussians.
class GaussianMixture {
 public:
  /// Validates weights (positive, sum to 1 within 1e-12), shapes, and that
  /// every covariance is symmetric positive definite. Throws ParameterError.
  explicit GaussianMixture(std::vector<GaussianComponent> components);

  int dim() const noexcept { return dim_; }
  int size() const noexcept { return static_cast<int>(components_.size()); }
  const GaussianComponent& component(int k) const { return components_.at(static_cast<std::size_t>(k)); }
  const std::vector<GaussianComponent>& components() const noexcept { return components_; }

  /// Distinct labels in ascending order.
  std::vector<int> labels() const;

 private:
  std::vector<GaussianComponent> components_;
  int dim_ = 0;
};

/// Coarse class conditioning: an optional set of admissible component labels.
class Conditioning {
 public:
  Conditioning() = default;

  static Conditioning unrestricted() { return {}; }
  static Conditioning labels(std::vector<int> allowed);

  bool restricted() const noexcept { return allowed_.has_value(); }
  bool allows(int label) const;
  const std::optional<std::vector<int>>& allowed_labels() const noexcept { return allowed_; }

 private:
  std::optional<std::vector<int>> allowed_;
};

/// Closed-form oracle for a mixture under a noise schedule.
///
/// The noised marginal at step t has components N(sqrt(ab) mu_k, ab Sigma_k + (1-ab) I).
/// Precision, gain and normaliser of every (component, t) pair are computed once at
/// construction; the object is immutable afterwards and safe to share across threads.
class MixtureOracle {
 public:
  MixtureOracle(GaussianMixture mixture, NoiseSchedule schedule);

  const GaussianMixture& mixture() const noexcept { return mixture_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  int dim() const noexcept { return mixture_.dim(); }

  double noised_log_density(const Vec& z, int t, const Conditioning& cond) const;
  Vec score(const Vec& z, int t, const Conditioning& cond) const;
  /// E[z_0 | z_t = z] under the conditional mixture.
  Vec posterior_mean(const Vec& z, int t, const Conditioning& cond) const;

  /// Negative log density under the clean, unconditional mixture.
  double clean_nll(const Vec& x) const;

  /// n i.i.d. draws (rows) from the conditional mixture; deterministic in seed.
  Mat sample(const Conditioning& cond, std::uint64_t seed, int n) const;

  /// Component index with the smallest Mahalanobis distance to x (clean covariances).
  int nearest_component(const Vec& x) const;

  /// Log of the renormalised weights; -inf for excluded components.
  /// Throws ConditioningError when cond selects nothing.
  std::vector<double> log_weights(const Conditioning& cond) const;

 private:
  struct NoisedComponent {
    Vec shifted_mean;  // sqrt(ab) mu
    Mat precision;     // (ab Sigma + (1-ab) I)^-1
    Mat gain;          // sqrt(ab) Sigma precision
    double log_norm;   // -0.5 (d log 2pi + log det)
  };

  const NoisedComponent& noised(int k, int t) const {
    return table_[static_cast<std::size_t>(t) * static_cast<std::size_t>(mixture_.size()) +
                  static_cast<std::size_t>(k)];
  }

  // Per-component log joint terms log w_k + log N_k(z); returns the max for log-sum-exp.
  double log_terms(const Vec& z, int t, const std::vector<double>& log_w, std::vector<double>& out,
                   std::vector<Vec>* diffs) const;

  GaussianMixture mixture_;
  NoiseSchedule schedule_;
  std::vector<NoisedComponent> table_;
  std::vector<Eigen::LLT<Mat>> clean_chol_;
  std::vector<double> clean_log_weights_;
};

}  // namespace expertgen
