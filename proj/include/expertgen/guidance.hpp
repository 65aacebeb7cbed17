#pragma once

#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "expertgen/denoiser.hpp"
#include "expertgen/experts.hpp"

namespace expertgen {

enum class GradMode {
  kZtFiniteDiff,  // central differences of L(D(x0_hat(z_t))) w.r.t. z_t
  kX0Analytic,    // expert gradient at x0_hat pulled back through the decoder only
};

/// Which noise prediction drives the DDIM update.
enum class EpsSource {
  kPosterior,  // posterior-mean noise prediction; the backend only supplies x0_hat
  kBackend,    // noise prediction obtained by inverting the backend's own x0_hat
};

std::string_view to_string(GradMode mode);
GradMode parse_grad_mode(std::string_view name);
std::string_view to_string(EpsSource source);
EpsSource parse_eps_source(std::string_view name);

struct GuidanceConfig {
  double w = 200.0;
  double tau = 5e-4;
  int t_thre = 800;
  int n_steps = 16;
  GradMode grad_mode = GradMode::kZtFiniteDiff;
  double fd_step = 1e-4;
  std::uint64_t seed = 0;
  EpsSource eps_source = EpsSource::kPosterior;

  /// Throws ParameterError on w < 0, tau <= 0, t_thre outside [0, t_max], n_steps outside [1, t_max],
  /// or fd_step <= 0.
  void validate(const NoiseSchedule& schedule) const;
};

/// Everything a chain reads. Shared, immutable; one instance may serve many chains at once.
struct GuidanceSetup {
  std::shared_ptr<const Denoiser> backend;
  Decoder decoder = Decoder::identity(1);
  Conditioning cond;
  std::shared_ptr<const MultiExpert> experts;  // null for unguided sampling

  const MixtureOracle& oracle() const { return backend->oracle(); }
  const NoiseSchedule& schedule() const { return backend->schedule(); }
  void validate() const;
};

struct StepRecord {
  int t = 0;
  int s = 0;
  Vec z_t;
  Vec x0_hat;       // backend prediction at (z_t, t)
  Vec observation;  // decode(x0_hat)
  double loss = 0.0;               // only checked for finiteness on guided steps
  double grad_norm = 0.0;         // raw gradient, before clipping
  double clipped_fraction = 0.0;  // share of components hit by the clip
  double max_abs_clipped = 0.0;
  double applied_weight = 0.0;  // 0 during warmup
};

struct SamplerTrace {
  std::vector<StepRecord> steps;
};

struct GuidedSample {
  Vec latent;       // final z_0
  Vec observation;  // decode(z_0)
  SamplerTrace trace;
};

/// Seed of chain `chain` in a run seeded with `seed` (splitmix64 mixing).
std::uint64_t chain_seed(std::uint64_t seed, std::uint64_t chain);

/// Loss of the decoded backend prediction at (z, t); throws GuidanceError if not finite.
double guidance_loss(const GuidanceSetup& setup, const Vec& z, int t);

/// Gradient used by the guided update at (z_t, t >= 1).
Vec expert_gradient(const GuidanceSetup& setup, const Vec& z_t, int t, const GuidanceConfig& config);

/// eps_bar = eps_hat + w sqrt(1 - ab_t) clip(grad, -tau, tau).
Vec guided_epsilon(const Vec& eps_hat, const Vec& grad, int t, double w, double tau, const NoiseSchedule& schedule);

/// 0 for t > t_thre, w otherwise.
double warmup_weight(int t, const GuidanceConfig& config);

/// One chain: z_T ~ N(0, I) from chain_seed(config.seed, chain), then the guided DDIM loop.
GuidedSample sample_guided(const GuidanceSetup& setup, const GuidanceConfig& config, std::uint64_t chain = 0,
                           bool keep_trace = true);

struct BatchResult {
  Mat latents;       // one row per chain
  Mat observations;  // one row per chain
  std::vector<SamplerTrace> traces;  // empty unless requested
};

/// Chains first_chain .. first_chain + n_chains - 1, run one after another.
BatchResult sample_guided_batch_serial(const GuidanceSetup& setup, const GuidanceConfig& config, int n_chains,
                                       bool keep_traces = false, std::uint64_t first_chain = 0);

/// Same chains spread over OpenMP threads. Bitwise identical to the serial version.
BatchResult sample_guided_batch(const GuidanceSetup& setup, const GuidanceConfig& config, int n_chains,
                                bool keep_traces = false, std::uint64_t first_chain = 0);

}  // namespace expertgen
