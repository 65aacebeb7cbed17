#pragma once

#include <cstdint>
#include <memory>
#include <string_view>

#include "expertgen/mixture.hpp"

namespace expertgen {

enum class BackendKind { kPosteriorMean, kConsistency };

std::string_view to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view name);

/// x0-predictor over a known mixture. Implementations hold no mutable state, so a
/// single instance can serve any number of concurrent sampling chains.
class Denoiser {
 public:
  explicit Denoiser(std::shared_ptr<const MixtureOracle> oracle) : oracle_(std::move(oracle)) {}
  virtual ~Denoiser() = default;

  virtual BackendKind kind() const noexcept = 0;
  virtual Vec predict_x0(const Vec& z, int t, const Conditioning& cond) const = 0;

  const MixtureOracle& oracle() const noexcept { return *oracle_; }
  const NoiseSchedule& schedule() const noexcept { return oracle_->schedule(); }

 private:
  std::shared_ptr<const MixtureOracle> oracle_;
};

/// Bayes-optimal denoiser E[z_0 | z_t]: the iterative-prediction backend.
class PosteriorMeanDenoiser final : public Denoiser {
 public:
  using Denoiser::Denoiser;

  BackendKind kind() const noexcept override { return BackendKind::kPosteriorMean; }
  Vec predict_x0(const Vec& z, int t, const Conditioning& cond) const override;
};

/// Exact consistency function: the probability-flow endpoint reached by n_substeps
/// deterministic DDIM transitions from (z, t) to 0 with the posterior-mean denoiser.
class ConsistencyDenoiser final : public Denoiser {
 public:
  ConsistencyDenoiser(std::shared_ptr<const MixtureOracle> oracle, int n_substeps = 50);

  BackendKind kind() const noexcept override { return BackendKind::kConsistency; }
  Vec predict_x0(const Vec& z, int t, const Conditioning& cond) const override;

  int n_substeps() const noexcept { return n_substeps_; }

 private:
  int n_substeps_;
};

std::unique_ptr<Denoiser> make_denoiser(BackendKind kind, std::shared_ptr<const MixtureOracle> oracle,
                                        int n_substeps = 50);

/// eps = (z - sqrt(ab) x0) / sqrt(1 - ab). Throws DomainError at t = 0.
Vec eps_from_x0(const NoiseSchedule& schedule, const Vec& z, int t, const Vec& x0);

/// x0 = (z - sqrt(1 - ab) eps) / sqrt(ab).
Vec x0_from_eps(const NoiseSchedule& schedule, const Vec& z, int t, const Vec& eps);

/// Noise prediction of a backend, obtained by inverting its x0-prediction.
Vec predict_eps(const Denoiser& backend, const Vec& z, int t, const Conditioning& cond);

/// Deterministic DDIM transition t -> s (0 <= s < t):
/// z_s = sqrt(ab_s) x0(eps_hat) + sqrt(1 - ab_s) eps_hat.
Vec ddim_step(const Vec& z_t, int t, int s, const Vec& eps_hat, const NoiseSchedule& schedule);

/// Linear latent-to-observation map x = D z. Identity unless a matrix is supplied.
class Decoder {
 public:
  static Decoder identity(int dim);
  /// Matrix is (obs_dim x latent_dim) and must have full column rank.
  static Decoder linear(Mat matrix);
  /// Seeded Gaussian matrix scaled by 1/sqrt(latent_dim); obs_dim >= latent_dim.
  static Decoder random(int latent_dim, int obs_dim, std::uint64_t seed);

  bool is_identity() const noexcept { return identity_; }
  int latent_dim() const noexcept { return latent_dim_; }
  int obs_dim() const noexcept { return obs_dim_; }
  const Mat& matrix() const noexcept { return matrix_; }

  Vec decode(const Vec& z0_hat) const;
  /// D^T g: pulls an observation-space gradient back to latent space.
  Vec pull_back(const Vec& obs_grad) const;

 private:
  Decoder(Mat matrix, bool identity);

  Mat matrix_;
  bool identity_ = true;
  int latent_dim_ = 0;
  int obs_dim_ = 0;
};

}  // namespace expertgen
