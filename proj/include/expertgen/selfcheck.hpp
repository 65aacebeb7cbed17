#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "expertgen/config.hpp"

namespace expertgen {

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;      // largest observed error
  double tolerance = 0.0;
  std::string detail;
};

/// Central-difference gradient of the expert loss with h_i = h_rel (1 + |x_i|).
Vec fd_gradient(const ExpertModel& expert, const GuidanceTarget& target, const Vec& x, double h_rel = 1e-5);

/// max_i |fd_i - g_i| / max(max_i |g_i|, 1e-3).
double gradient_error(const ExpertModel& expert, const GuidanceTarget& target, const Vec& x);

/// Oracle suite over an experiment: Tweedie identity, x0/eps round trip for both backends,
/// expert gradients against finite differences, clip bounds and determinism of traced runs.
std::vector<CheckResult> run_selfcheck(const Experiment& ex, std::uint64_t seed);

}  // namespace expertgen
