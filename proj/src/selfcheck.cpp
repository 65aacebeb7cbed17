#include "expertgen/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "expertgen/errors.hpp"

namespace expertgen {

namespace {

Vec gaussian_vec(int d, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = normal(rng);
  return v;
}

CheckResult finish(std::string name, double worst, double tol, std::string detail = {}) {
  return CheckResult{std::move(name), worst <= tol, worst, tol, std::move(detail)};
}

bool traces_equal(const std::vector<SamplerTrace>& a, const std::vector<SamplerTrace>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t c = 0; c < a.size(); ++c) {
    if (a[c].steps.size() != b[c].steps.size()) return false;
    for (std::size_t i = 0; i < a[c].steps.size(); ++i) {
      const auto& x = a[c].steps[i];
      const auto& y = b[c].steps[i];
      if (x.t != y.t || x.z_t != y.z_t || x.x0_hat != y.x0_hat || x.loss != y.loss || x.grad_norm != y.grad_norm ||
          x.applied_weight != y.applied_weight) {
        return false;
      }
    }
  }
  return true;
}

// Random instance of every expert kind plus the experiment's own experts.
std::vector<std::pair<std::shared_ptr<const ExpertModel>, GuidanceTarget>> gradient_subjects(const Experiment& ex,
                                                                                             std::uint64_t seed) {
  const int m = ex.decoder.obs_dim();
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::shared_ptr<const ExpertModel>, GuidanceTarget>> out;
  Vec e = gaussian_vec(6, 1.0, rng);
  out.emplace_back(std::make_shared<EmbeddingExpert>(EmbeddingExpert::random(6, m, seed + 1)),
                   EmbeddingTarget{e / e.norm()});
  out.emplace_back(std::make_shared<ClassifierExpert>(ClassifierExpert::random(4, m, seed + 2)), ClassTarget{1});
  out.emplace_back(std::make_shared<RegressorExpert>(RegressorExpert::random(m, seed + 3, 0.5)), AgeTarget{0.25});
  const int patches = m % 2 == 0 ? 2 : 1;
  out.emplace_back(std::make_shared<DenseExpert>(DenseExpert::random(patches, 3, m, seed + 4)),
                   DenseTarget{std::vector<int>(static_cast<std::size_t>(patches), 2)});
  for (const auto& b : ex.experts) {
    out.emplace_back(b.model, b.settings.target);
  }
  return out;
}

}  // namespace

Vec fd_gradient(const ExpertModel& expert, const GuidanceTarget& target, const Vec& x, double h_rel) {
  Vec g(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = h_rel * (1.0 + std::abs(x(i)));
    probe(i) = x(i) + h;
    const double up = expert.loss(probe, target);
    probe(i) = x(i) - h;
    const double down = expert.loss(probe, target);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

double gradient_error(const ExpertModel& expert, const GuidanceTarget& target, const Vec& x) {
  const Vec g = expert.grad(x, target);
  const Vec fd = fd_gradient(expert, target, x);
  return (fd - g).cwiseAbs().maxCoeff() / std::max(g.cwiseAbs().maxCoeff(), 1e-3);
}

std::vector<CheckResult> run_selfcheck(const Experiment& ex, std::uint64_t seed) {
  std::vector<CheckResult> results;
  const auto& oracle = *ex.oracle;
  const auto& schedule = oracle.schedule();
  const int d = oracle.dim();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_t(1, schedule.t_max());

  {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const int t = pick_t(rng);
      const Vec z = gaussian_vec(d, 1.5, rng);
      const Vec pm = oracle.posterior_mean(z, t, ex.config.cond);
      const Vec tw = (z + (1.0 - schedule.alpha_bar(t)) * oracle.score(z, t, ex.config.cond)) / schedule.sqrt_alpha_bar(t);
      worst = std::max(worst, (pm - tw).norm() / std::max(pm.norm(), 1.0));
    }
    results.push_back(finish("tweedie_identity", worst, 1e-8, "1000 random (z, t)"));
  }

  {
    double worst = 0.0;
    const TimestepGrid grid = make_ddim_grid(schedule, ex.config.guidance.n_steps);
    for (BackendKind kind : {BackendKind::kPosteriorMean, BackendKind::kConsistency}) {
      const auto backend = make_denoiser(kind, ex.oracle, ex.config.n_substeps);
      for (int i = 0; i < grid.size(); ++i) {
        const int t = grid[i];
        const Vec z = gaussian_vec(d, 1.0, rng);
        const Vec x0 = backend->predict_x0(z, t, ex.config.cond);
        const Vec eps = predict_eps(*backend, z, t, ex.config.cond);
        const Vec back = schedule.sqrt_alpha_bar(t) * x0 + schedule.sqrt_one_minus_alpha_bar(t) * eps;
        worst = std::max(worst, (back - z).cwiseAbs().maxCoeff());
      }
    }
    results.push_back(finish("x0_eps_round_trip", worst, 1e-10, "both backends, every grid step"));
  }

  {
    const auto subjects = gradient_subjects(ex, seed ^ 0x9E3779B97F4A7C15ULL);
    const int m = ex.decoder.obs_dim();
    for (const auto& [expert, target] : subjects) {
      double worst = 0.0;
      int checked = 0;
      while (checked < 100) {
        const Vec x = gaussian_vec(m, 1.0, rng);
        if (expert->kind() == ExpertKind::kRegressor) {
          const auto& reg = static_cast<const RegressorExpert&>(*expert);
          const double r = reg.predict(x) - std::get<AgeTarget>(target).value;
          if (std::abs(r) < 1e-3) continue;
        }
        worst = std::max(worst, gradient_error(*expert, target, x));
        ++checked;
      }
      results.push_back(finish("fd_gradient_" + std::string(to_string(expert->kind())), worst, 1e-5, "100 points"));
    }
  }

  {
    GuidanceSetup setup = ex.guided_setup();
    if (!setup.experts) {
      std::vector<std::string> names;
      for (const auto& b : ex.experts) names.push_back(b.settings.name);
      if (!names.empty()) setup = ex.guided_setup(names);
    }
    if (setup.experts) {
      GuidanceConfig cfg = ex.config.guidance;
      cfg.seed = seed;
      const auto first = sample_guided_batch(setup, cfg, 4, true);
      const auto second = sample_guided_batch(setup, cfg, 4, true);
      double worst = 0.0;
      for (const auto& tr : first.traces) {
        for (const auto& s : tr.steps) worst = std::max(worst, s.max_abs_clipped);
      }
      results.push_back(finish("clip_bound", worst, cfg.tau, "4 traced chains, every step"));
      const bool same = traces_equal(first.traces, second.traces) && first.observations == second.observations;
      results.push_back(CheckResult{"determinism", same, same ? 0.0 : 1.0, 0.0, "two identical traced runs"});
    } else {
      results.push_back(CheckResult{"clip_bound", true, 0.0, ex.config.guidance.tau, "no experts configured"});
      const auto a = sample_guided_batch(setup, ex.config.guidance, 4, true);
      const auto b = sample_guided_batch(setup, ex.config.guidance, 4, true);
      const bool same = traces_equal(a.traces, b.traces) && a.observations == b.observations;
      results.push_back(CheckResult{"determinism", same, same ? 0.0 : 1.0, 0.0, "two identical traced runs"});
    }
  }
  return results;
}

}  // namespace expertgen
