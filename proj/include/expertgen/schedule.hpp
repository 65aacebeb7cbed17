#pragma once

#include <span>
#include <vector>

namespace expertgen {

/// Discrete variance-preserving noising schedule over integer timesteps 0..t_max.
///
/// alpha_bar(0) == 1 and alpha_bar is strictly decreasing, so
/// z_t = sqrt(alpha_bar(t)) z_0 + sqrt(1 - alpha_bar(t)) eps.
class NoiseSchedule {
 public:
  /// Takes the full table alpha_bar[0..t_max]; throws ParameterError if the
  /// invariants (alpha_bar[0] = 1, strictly decreasing, positive) do not hold.
  explicit NoiseSchedule(std::vector<double> alpha_bar);

  int t_max() const noexcept { return static_cast<int>(alpha_bar_.size()) - 1; }

  double alpha_bar(int t) const;
  double sqrt_alpha_bar(int t) const;
  double sqrt_one_minus_alpha_bar(int t) const;

  std::span<const double> alpha_bar_table() const noexcept { return alpha_bar_; }

  /// Throws ParameterError unless 0 <= t <= t_max.
  void check_timestep(int t) const;

 private:
  std::vector<double> alpha_bar_;
  std::vector<double> sqrt_alpha_bar_;
  std::vector<double> sqrt_one_minus_;
};

/// alpha_bar[t] = prod_{i<=t} (1 - beta_i), beta linearly spaced over [beta_start, beta_end].
NoiseSchedule make_linear_schedule(int t_max, double beta_start, double beta_end);

/// Strictly decreasing timesteps in [1, t_max]; the sampler's last transition targets t = 0.
class TimestepGrid {
 public:
  explicit TimestepGrid(std::vector<int> steps, int t_max);

  std::span<const int> steps() const noexcept { return steps_; }
  int size() const noexcept { return static_cast<int>(steps_.size()); }
  int operator[](int i) const { return steps_.at(static_cast<std::size_t>(i)); }

  /// Target of the transition leaving step i (0 after the last step).
  int next(int i) const { return i + 1 < size() ? steps_[static_cast<std::size_t>(i) + 1] : 0; }

 private:
  std::vector<int> steps_;
};

/// n_steps timesteps evenly spaced over [1, t_max] (rounded), descending from t_max.
TimestepGrid make_ddim_grid(const NoiseSchedule& schedule, int n_steps);

/// Evenly spaced descent path t = p_0 > p_1 > ... > p_k = 0 with at most n_substeps
/// transitions; duplicates produced by rounding are dropped.
std::vector<int> make_descent_path(int t, int n_substeps);

}  // namespace expertgen
