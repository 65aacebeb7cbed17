#include "expertgen/denoiser.hpp"

#include <cmath>
#include <random>
#include <string>

#include "expertgen/errors.hpp"

namespace expertgen {

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::kPosteriorMean:
      return "posterior";
    case BackendKind::kConsistency:
      return "consistency";
  }
  return "unknown";
}

BackendKind parse_backend_kind(std::string_view name) {
  if (name == "posterior") {
    return BackendKind::kPosteriorMean;
  }
  if (name == "consistency") {
    return BackendKind::kConsistency;
  }
  throw ParameterError("unknown backend '" + std::string(name) + "' (posterior|consistency)");
}

Vec PosteriorMeanDenoiser::predict_x0(const Vec& z, int t, const Conditioning& cond) const {
  return oracle().posterior_mean(z, t, cond);
}

ConsistencyDenoiser::ConsistencyDenoiser(std::shared_ptr<const MixtureOracle> oracle, int n_substeps)
    : Denoiser(std::move(oracle)), n_substeps_(n_substeps) {
  if (n_substeps_ < 1) {
    throw ParameterError("n_substeps must be >= 1");
  }
}

Vec ConsistencyDenoiser::predict_x0(const Vec& z, int t, const Conditioning& cond) const {
  schedule().check_timestep(t);
  const auto path = make_descent_path(t, n_substeps_);
  Vec state = z;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const int from = path[i];
    const int to = path[i + 1];
    const Vec x0 = oracle().posterior_mean(state, from, cond);
    if (to == 0) {
      return x0;
    }
    const Vec eps = eps_from_x0(schedule(), state, from, x0);
    state = schedule().sqrt_alpha_bar(to) * x0 + schedule().sqrt_one_minus_alpha_bar(to) * eps;
  }
  return state;
}

std::unique_ptr<Denoiser> make_denoiser(BackendKind kind, std::shared_ptr<const MixtureOracle> oracle,
                                        int n_substeps) {
  switch (kind) {
    case BackendKind::kPosteriorMean:
      return std::make_unique<PosteriorMeanDenoiser>(std::move(oracle));
    case BackendKind::kConsistency:
      return std::make_unique<ConsistencyDenoiser>(std::move(oracle), n_substeps);
  }
  throw ParameterError("unknown backend kind");
}

Vec eps_from_x0(const NoiseSchedule& schedule, const Vec& z, int t, const Vec& x0) {
  schedule.check_timestep(t);
  if (t == 0) {
    throw DomainError("noise prediction is undefined at t = 0");
  }
  return (z - schedule.sqrt_alpha_bar(t) * x0) / schedule.sqrt_one_minus_alpha_bar(t);
}

Vec x0_from_eps(const NoiseSchedule& schedule, const Vec& z, int t, const Vec& eps) {
  return (z - schedule.sqrt_one_minus_alpha_bar(t) * eps) / schedule.sqrt_alpha_bar(t);
}

Vec predict_eps(const Denoiser& backend, const Vec& z, int t, const Conditioning& cond) {
  backend.schedule().check_timestep(t);
  if (t == 0) {
    throw DomainError("noise prediction is undefined at t = 0");
  }
  return eps_from_x0(backend.schedule(), z, t, backend.predict_x0(z, t, cond));
}

Vec ddim_step(const Vec& z_t, int t, int s, const Vec& eps_hat, const NoiseSchedule& schedule) {
  schedule.check_timestep(t);
  schedule.check_timestep(s);
  if (s >= t) {
    throw ParameterError("ddim_step needs s < t (got s=" + std::to_string(s) + ", t=" +
                         std::to_string(t) + ")");
  }
  if (z_t.size() != eps_hat.size()) {
    throw ParameterError("ddim_step: state and noise dimensions differ");
  }
  const Vec x0 = x0_from_eps(schedule, z_t, t, eps_hat);
  if (s == 0) {
    return x0;
  }
  return schedule.sqrt_alpha_bar(s) * x0 + schedule.sqrt_one_minus_alpha_bar(s) * eps_hat;
}

Decoder::Decoder(Mat matrix, bool identity)
    : matrix_(std::move(matrix)),
      identity_(identity),
      latent_dim_(static_cast<int>(matrix_.cols())),
      obs_dim_(static_cast<int>(matrix_.rows())) {}

Decoder Decoder::identity(int dim) {
  if (dim < 1) {
    throw ParameterError("decoder dimension must be >= 1");
  }
  return Decoder(Mat::Identity(dim, dim), true);
}

Decoder Decoder::linear(Mat matrix) {
  if (matrix.rows() < matrix.cols() || matrix.cols() < 1) {
    throw ParameterError("decoder matrix must be obs_dim x latent_dim with obs_dim >= latent_dim");
  }
  if (!matrix.allFinite()) {
    throw ParameterError("decoder matrix has non-finite entries");
  }
  Eigen::ColPivHouseholderQR<Mat> qr(matrix);
  if (qr.rank() != matrix.cols()) {
    throw ParameterError("decoder matrix must have full column rank");
  }
  return Decoder(std::move(matrix), false);
}

Decoder Decoder::random(int latent_dim, int obs_dim, std::uint64_t seed) {
  if (latent_dim < 1 || obs_dim < latent_dim) {
    throw ParameterError("random decoder needs 1 <= latent_dim <= obs_dim");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(latent_dim)));
  Mat m(obs_dim, latent_dim);
  for (int j = 0; j < latent_dim; ++j) {
    for (int i = 0; i < obs_dim; ++i) {
      m(i, j) = normal(rng);
    }
  }
  return linear(std::move(m));
}

Vec Decoder::decode(const Vec& z0_hat) const {
  if (z0_hat.size() != latent_dim_) {
    throw ParameterError("decoder input dimension mismatch");
  }
  if (identity_) {
    return z0_hat;
  }
  return matrix_ * z0_hat;
}

Vec Decoder::pull_back(const Vec& obs_grad) const {
  if (obs_grad.size() != obs_dim_) {
    throw ParameterError("decoder gradient dimension mismatch");
  }
  if (identity_) {
    return obs_grad;
  }
  return matrix_.transpose() * obs_grad;
}

}  // namespace expertgen
