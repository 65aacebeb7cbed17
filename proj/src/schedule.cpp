#include "expertgen/schedule.hpp"

#include <cmath>
#include <string>

#include "expertgen/errors.hpp"

namespace expertgen {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.size() < 2) {
    throw ParameterError("schedule needs t_max >= 1");
  }
  if (alpha_bar_[0] != 1.0) {
    throw ParameterError("alpha_bar[0] must be exactly 1");
  }
  for (std::size_t t = 1; t < alpha_bar_.size(); ++t) {
    if (!(alpha_bar_[t] > 0.0) || !(alpha_bar_[t] < alpha_bar_[t - 1])) {
      throw ParameterError("alpha_bar must be positive and strictly decreasing (t=" +
                           std::to_string(t) + ")");
    }
  }
  sqrt_alpha_bar_.reserve(alpha_bar_.size());
  sqrt_one_minus_.reserve(alpha_bar_.size());
  for (double a : alpha_bar_) {
    sqrt_alpha_bar_.push_back(std::sqrt(a));
    sqrt_one_minus_.push_back(std::sqrt(1.0 - a));
  }
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 0 || t > t_max()) {
    throw ParameterError("timestep " + std::to_string(t) + " outside [0, " +
                         std::to_string(t_max()) + "]");
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  check_timestep(t);
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::sqrt_alpha_bar(int t) const {
  check_timestep(t);
  return sqrt_alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const {
  check_timestep(t);
  return sqrt_one_minus_[static_cast<std::size_t>(t)];
}

NoiseSchedule make_linear_schedule(int t_max, double beta_start, double beta_end) {
  if (t_max < 1) {
    throw ParameterError("t_max must be >= 1");
  }
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ParameterError("need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> alpha_bar(static_cast<std::size_t>(t_max) + 1);
  alpha_bar[0] = 1.0;
  double prod = 1.0;
  for (int i = 1; i <= t_max; ++i) {
    const double frac = t_max == 1 ? 0.0 : static_cast<double>(i - 1) / (t_max - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - beta;
    alpha_bar[static_cast<std::size_t>(i)] = prod;
  }
  return NoiseSchedule(std::move(alpha_bar));
}

TimestepGrid::TimestepGrid(std::vector<int> steps, int t_max) : steps_(std::move(steps)) {
  if (steps_.empty()) {
    throw ParameterError("timestep grid must be nonempty");
  }
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (steps_[i] < 1 || steps_[i] > t_max) {
      throw ParameterError("grid timestep outside [1, t_max]");
    }
    if (i > 0 && steps_[i] >= steps_[i - 1]) {
      throw ParameterError("grid must be strictly decreasing");
    }
  }
}

TimestepGrid make_ddim_grid(const NoiseSchedule& schedule, int n_steps) {
  const int t_max = schedule.t_max();
  if (n_steps < 1 || n_steps > t_max) {
    throw ParameterError("n_steps must lie in [1, t_max], got " + std::to_string(n_steps));
  }
  std::vector<int> steps;
  steps.reserve(static_cast<std::size_t>(n_steps));
  if (n_steps == 1) {
    steps.push_back(t_max);
  } else {
    const double spacing = static_cast<double>(t_max - 1) / (n_steps - 1);
    for (int i = 0; i < n_steps; ++i) {
      steps.push_back(static_cast<int>(std::floor(t_max - i * spacing + 0.5)));
    }
  }
  return TimestepGrid(std::move(steps), t_max);
}

std::vector<int> make_descent_path(int t, int n_substeps) {
  if (n_substeps < 1) {
    throw ParameterError("n_substeps must be >= 1");
  }
  if (t < 0) {
    throw ParameterError("negative timestep");
  }
  std::vector<int> path{t};
  for (int i = 1; i <= n_substeps; ++i) {
    const int p = static_cast<int>(std::floor(t * (1.0 - static_cast<double>(i) / n_substeps) + 0.5));
    if (p < path.back()) {
      path.push_back(p);
    }
  }
  return path;
}

}  // namespace expertgen
