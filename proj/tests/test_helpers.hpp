#pragma once

#include <memory>
#include <random>

#include "expertgen/mixture.hpp"

namespace testing {

using expertgen::Mat;
using expertgen::Vec;

inline expertgen::NoiseSchedule default_schedule() { return expertgen::make_linear_schedule(1000, 1e-4, 0.02); }

inline std::shared_ptr<const expertgen::MixtureOracle> make_oracle(std::vector<expertgen::GaussianComponent> comps) {
  return std::make_shared<const expertgen::MixtureOracle>(expertgen::GaussianMixture(std::move(comps)),
                                                          default_schedule());
}

inline std::shared_ptr<const expertgen::MixtureOracle> standard_normal(int d) {
  return make_oracle({{1.0, Vec::Zero(d), Mat::Identity(d, d), 0}});
}

// Fixed full-covariance pair used by several oracles.
inline std::vector<expertgen::GaussianComponent> fixed_pair() {
  Mat s0(2, 2), s1(2, 2);
  s0 << 0.6, 0.2, 0.2, 0.4;
  s1 << 0.3, -0.1, -0.1, 0.5;
  return {{0.3, (Vec(2) << 0.5, -1.0).finished(), s0, 0}, {0.7, (Vec(2) << -1.2, 0.8).finished(), s1, 1}};
}

inline Vec gaussian(int d, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, scale);
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

// Random SPD matrix with eigenvalues roughly in [0.2, 1.5].
inline Mat random_spd(int d, std::mt19937_64& rng) {
  Mat a(d, d);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = n(rng);
  Mat s = 0.3 * a * a.transpose() / d + 0.2 * Mat::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

inline std::vector<expertgen::GaussianComponent> random_mixture(int d, int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> w(static_cast<std::size_t>(k));
  double total = 0.0;
  for (auto& x : w) total += (x = u(rng));
  std::vector<expertgen::GaussianComponent> out;
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    double wi = w[static_cast<std::size_t>(i)] / total;
    if (i == k - 1) wi = 1.0 - acc;
    acc += wi;
    out.push_back({wi, gaussian(d, 1.5, rng), random_spd(d, rng), i});
  }
  return out;
}

}  // namespace testing
