#include "expertgen/guidance.hpp"

#include <cmath>
#include <exception>
#include <random>
#include <string>

#include "expertgen/errors.hpp"

namespace expertgen {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Vec trajectory_eps(const GuidanceSetup& setup, const Vec& z, int t, const Vec& x0_hat,
                   const GuidanceConfig& config) {
  if (config.eps_source == EpsSource::kBackend || setup.backend->kind() == BackendKind::kPosteriorMean) {
    return eps_from_x0(setup.schedule(), z, t, x0_hat);
  }
  return eps_from_x0(setup.schedule(), z, t, setup.oracle().posterior_mean(z, t, setup.cond));
}

double checked_loss(const GuidanceSetup& setup, const Vec& observation, int t) {
  const double l = setup.experts->loss(observation);
  if (!std::isfinite(l)) {
    throw GuidanceError("expert loss is not finite", t);
  }
  return l;
}

void fill_batch_row(BatchResult& out, int row, GuidedSample&& sample, bool keep_traces) {
  out.latents.row(row) = sample.latent.transpose();
  out.observations.row(row) = sample.observation.transpose();
  if (keep_traces) {
    out.traces[static_cast<std::size_t>(row)] = std::move(sample.trace);
  }
}

BatchResult empty_batch(const GuidanceSetup& setup, int n_chains, bool keep_traces) {
  setup.validate();
  if (n_chains < 0) {
    throw ParameterError("chain count must be >= 0");
  }
  BatchResult out;
  out.latents.resize(n_chains, setup.oracle().dim());
  out.observations.resize(n_chains, setup.decoder.obs_dim());
  if (keep_traces) {
    out.traces.resize(static_cast<std::size_t>(n_chains));
  }
  return out;
}

}  // namespace

std::string_view to_string(GradMode mode) {
  return mode == GradMode::kZtFiniteDiff ? "zt_fd" : "x0_analytic";
}

GradMode parse_grad_mode(std::string_view name) {
  if (name == "zt_fd") return GradMode::kZtFiniteDiff;
  if (name == "x0_analytic") return GradMode::kX0Analytic;
  throw ParameterError("unknown grad_mode '" + std::string(name) + "' (zt_fd|x0_analytic)");
}

std::string_view to_string(EpsSource source) {
  return source == EpsSource::kPosterior ? "posterior" : "backend";
}

EpsSource parse_eps_source(std::string_view name) {
  if (name == "posterior") return EpsSource::kPosterior;
  if (name == "backend") return EpsSource::kBackend;
  throw ParameterError("unknown eps_source '" + std::string(name) + "' (posterior|backend)");
}

void GuidanceConfig::validate(const NoiseSchedule& schedule) const {
  if (!(w >= 0.0) || !std::isfinite(w)) {
    throw ParameterError("guidance weight w must be finite and >= 0");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("clip threshold tau must be finite and > 0");
  }
  if (t_thre < 0 || t_thre > schedule.t_max()) {
    throw ParameterError("t_thre must lie in [0, " + std::to_string(schedule.t_max()) + "]");
  }
  if (n_steps < 1 || n_steps > schedule.t_max()) {
    throw ParameterError("n_steps must lie in [1, " + std::to_string(schedule.t_max()) + "]");
  }
  if (!(fd_step > 0.0) || !std::isfinite(fd_step)) {
    throw ParameterError("fd_step must be finite and > 0");
  }
}

void GuidanceSetup::validate() const {
  if (!backend) {
    throw ParameterError("guidance setup has no backend");
  }
  if (decoder.latent_dim() != backend->oracle().dim()) {
    throw ParameterError("decoder latent dimension does not match the mixture");
  }
  if (experts && experts->input_dim() != decoder.obs_dim()) {
    throw ParameterError("expert input dimension does not match the decoder output");
  }
  backend->oracle().log_weights(cond);
}

std::uint64_t chain_seed(std::uint64_t seed, std::uint64_t chain) {
  return splitmix64(splitmix64(seed) ^ chain);
}

double guidance_loss(const GuidanceSetup& setup, const Vec& z, int t) {
  if (!setup.experts) {
    return 0.0;
  }
  return checked_loss(setup, setup.decoder.decode(setup.backend->predict_x0(z, t, setup.cond)), t);
}

Vec expert_gradient(const GuidanceSetup& setup, const Vec& z_t, int t, const GuidanceConfig& config) {
  setup.schedule().check_timestep(t);
  if (t == 0) {
    throw DomainError("expert gradient needs t >= 1");
  }
  const int d = static_cast<int>(z_t.size());
  if (!setup.experts) {
    return Vec::Zero(d);
  }
  if (config.grad_mode == GradMode::kX0Analytic) {
    const Vec obs = setup.decoder.decode(setup.backend->predict_x0(z_t, t, setup.cond));
    checked_loss(setup, obs, t);
    const Vec g = setup.decoder.pull_back(setup.experts->grad(obs));
    if (!g.allFinite()) {
      throw GuidanceError("expert gradient is not finite", t);
    }
    return g;
  }
  Vec g(d);
  Vec probe = z_t;
  for (int i = 0; i < d; ++i) {
    const double h = config.fd_step * (1.0 + std::abs(z_t(i)));
    probe(i) = z_t(i) + h;
    const double up = guidance_loss(setup, probe, t);
    probe(i) = z_t(i) - h;
    const double down = guidance_loss(setup, probe, t);
    probe(i) = z_t(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

Vec guided_epsilon(const Vec& eps_hat, const Vec& grad, int t, double w, double tau, const NoiseSchedule& schedule) {
  if (eps_hat.size() != grad.size()) {
    throw ParameterError("guided_epsilon: noise and gradient dimensions differ");
  }
  return eps_hat + (w * schedule.sqrt_one_minus_alpha_bar(t)) * grad.cwiseMax(-tau).cwiseMin(tau);
}

double warmup_weight(int t, const GuidanceConfig& config) {
  return t > config.t_thre ? 0.0 : config.w;
}

GuidedSample sample_guided(const GuidanceSetup& setup, const GuidanceConfig& config, std::uint64_t chain,
                           bool keep_trace) {
  const auto& schedule = setup.schedule();
  config.validate(schedule);
  const TimestepGrid grid = make_ddim_grid(schedule, config.n_steps);
  const int d = setup.oracle().dim();

  std::mt19937_64 rng(chain_seed(config.seed, chain));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec z(d);
  for (int i = 0; i < d; ++i) {
    z(i) = normal(rng);
  }

  GuidedSample out;
  if (keep_trace) {
    out.trace.steps.reserve(static_cast<std::size_t>(grid.size()));
  }
  for (int i = 0; i < grid.size(); ++i) {
    const int t = grid[i];
    const int s = grid.next(i);
    const Vec x0_hat = setup.backend->predict_x0(z, t, setup.cond);
    Vec eps = trajectory_eps(setup, z, t, x0_hat, config);
    const double weight = setup.experts ? warmup_weight(t, config) : 0.0;

    StepRecord rec;
    if (keep_trace || weight > 0.0) {
      rec.t = t;
      rec.s = s;
      rec.applied_weight = weight;
      if (setup.experts) {
        rec.observation = setup.decoder.decode(x0_hat);
        rec.loss = weight > 0.0 ? checked_loss(setup, rec.observation, t) : setup.experts->loss(rec.observation);
      }
    }
    if (weight > 0.0) {
      const Vec g = expert_gradient(setup, z, t, config);
      const Vec clipped = g.cwiseMax(-config.tau).cwiseMin(config.tau);
      rec.grad_norm = g.norm();
      rec.clipped_fraction = static_cast<double>((g.array().abs() > config.tau).count()) / static_cast<double>(d);
      rec.max_abs_clipped = clipped.cwiseAbs().maxCoeff();
      eps = guided_epsilon(eps, g, t, weight, config.tau, schedule);
    }
    if (keep_trace) {
      rec.z_t = z;
      rec.x0_hat = x0_hat;
      if (!setup.experts) {
        rec.observation = setup.decoder.decode(x0_hat);
      }
      out.trace.steps.push_back(std::move(rec));
    }
    z = ddim_step(z, t, s, eps, schedule);
  }
  out.observation = setup.decoder.decode(z);
  out.latent = std::move(z);
  return out;
}

BatchResult sample_guided_batch_serial(const GuidanceSetup& setup, const GuidanceConfig& config, int n_chains,
                                       bool keep_traces, std::uint64_t first_chain) {
  BatchResult out = empty_batch(setup, n_chains, keep_traces);
  for (int c = 0; c < n_chains; ++c) {
    fill_batch_row(out, c, sample_guided(setup, config, first_chain + static_cast<std::uint64_t>(c), keep_traces),
                   keep_traces);
  }
  return out;
}

BatchResult sample_guided_batch(const GuidanceSetup& setup, const GuidanceConfig& config, int n_chains,
                                bool keep_traces, std::uint64_t first_chain) {
  BatchResult out = empty_batch(setup, n_chains, keep_traces);
  config.validate(setup.schedule());
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chains));

#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < n_chains; ++c) {
    try {
      fill_batch_row(out, c,
                     sample_guided(setup, config, first_chain + static_cast<std::uint64_t>(c), keep_traces),
                     keep_traces);
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  }

  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return out;
}

}  // namespace expertgen
