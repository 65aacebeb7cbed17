#include "expertgen/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <string>

#include "expertgen/errors.hpp"

namespace expertgen {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& terms, double max_term) {
  if (max_term == kNegInf) {
    return kNegInf;
  }
  double acc = 0.0;
  for (double v : terms) {
    acc += std::exp(v - max_term);
  }
  return max_term + std::log(acc);
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components)
    : components_(std::move(components)) {
  if (components_.empty()) {
    throw ParameterError("mixture needs at least one component");
  }
  dim_ = static_cast<int>(components_.front().mean.size());
  if (dim_ < 1) {
    throw ParameterError("mixture dimension must be >= 1");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& c = components_[k];
    const std::string where = "component " + std::to_string(k);
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
      throw ParameterError(where + ": weight must be positive");
    }
    if (c.mean.size() != dim_ || c.covariance.rows() != dim_ || c.covariance.cols() != dim_) {
      throw ParameterError(where + ": dimension mismatch");
    }
    if (!c.mean.allFinite() || !c.covariance.allFinite()) {
      throw ParameterError(where + ": non-finite parameters");
    }
    const double scale = std::max(1.0, c.covariance.cwiseAbs().maxCoeff());
    if ((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw ParameterError(where + ": covariance is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(c.covariance, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0)) {
      throw ParameterError(where + ": covariance is not positive definite");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ParameterError("mixture weights must sum to 1 (got " + std::to_string(total) + ")");
  }
}

std::vector<int> GaussianMixture::labels() const {
  std::set<int> seen;
  for (const auto& c : components_) {
    seen.insert(c.label);
  }
  return {seen.begin(), seen.end()};
}

Conditioning Conditioning::labels(std::vector<int> allowed) {
  std::sort(allowed.begin(), allowed.end());
  allowed.erase(std::unique(allowed.begin(), allowed.end()), allowed.end());
  Conditioning c;
  c.allowed_ = std::move(allowed);
  return c;
}

bool Conditioning::allows(int label) const {
  return !allowed_ || std::binary_search(allowed_->begin(), allowed_->end(), label);
}

MixtureOracle::MixtureOracle(GaussianMixture mixture, NoiseSchedule schedule)
    : mixture_(std::move(mixture)), schedule_(std::move(schedule)) {
  const int d = mixture_.dim();
  const int n_comp = mixture_.size();
  const Mat eye = Mat::Identity(d, d);
  const double log_2pi = std::log(2.0 * std::numbers::pi);

  table_.reserve(static_cast<std::size_t>(schedule_.t_max() + 1) * static_cast<std::size_t>(n_comp));
  for (int t = 0; t <= schedule_.t_max(); ++t) {
    const double ab = schedule_.alpha_bar(t);
    const double sab = schedule_.sqrt_alpha_bar(t);
    for (int k = 0; k < n_comp; ++k) {
      const auto& c = mixture_.component(k);
      const Mat cov = ab * c.covariance + (1.0 - ab) * eye;
      Eigen::LLT<Mat> llt(cov);
      if (llt.info() != Eigen::Success) {
        throw ParameterError("noised covariance lost positive definiteness");
      }
      Mat precision = llt.solve(eye);
      precision = 0.5 * (precision + precision.transpose()).eval();
      const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      table_.push_back(NoisedComponent{
          sab * c.mean,
          precision,
          sab * c.covariance * precision,
          -0.5 * (d * log_2pi + log_det),
      });
    }
  }

  clean_chol_.reserve(static_cast<std::size_t>(n_comp));
  for (const auto& c : mixture_.components()) {
    clean_chol_.emplace_back(c.covariance);
  }
  clean_log_weights_ = log_weights(Conditioning::unrestricted());
}

std::vector<double> MixtureOracle::log_weights(const Conditioning& cond) const {
  double total = 0.0;
  for (const auto& c : mixture_.components()) {
    if (cond.allows(c.label)) {
      total += c.weight;
    }
  }
  if (!(total > 0.0)) {
    throw ConditioningError("conditioning selects no mixture component");
  }
  const double log_total = std::log(total);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(mixture_.size()));
  for (const auto& c : mixture_.components()) {
    out.push_back(cond.allows(c.label) ? std::log(c.weight) - log_total : kNegInf);
  }
  return out;
}

double MixtureOracle::log_terms(const Vec& z, int t, const std::vector<double>& log_w,
                                std::vector<double>& out, std::vector<Vec>* diffs) const {
  if (z.size() != dim()) {
    throw ParameterError("state dimension mismatch");
  }
  schedule_.check_timestep(t);
  out.assign(log_w.size(), kNegInf);
  if (diffs != nullptr) {
    diffs->resize(log_w.size());
  }
  double best = kNegInf;
  for (int k = 0; k < mixture_.size(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (log_w[ku] == kNegInf) {
      continue;
    }
    const auto& nc = noised(k, t);
    Vec diff = z - nc.shifted_mean;
    const double quad = diff.dot(nc.precision * diff);
    out[ku] = log_w[ku] + nc.log_norm - 0.5 * quad;
    best = std::max(best, out[ku]);
    if (diffs != nullptr) {
      (*diffs)[ku] = std::move(diff);
    }
  }
  return best;
}

double MixtureOracle::noised_log_density(const Vec& z, int t, const Conditioning& cond) const {
  const auto log_w = log_weights(cond);
  std::vector<double> terms;
  const double best = log_terms(z, t, log_w, terms, nullptr);
  return log_sum_exp(terms, best);
}

Vec MixtureOracle::score(const Vec& z, int t, const Conditioning& cond) const {
  const auto log_w = log_weights(cond);
  std::vector<double> terms;
  std::vector<Vec> diffs;
  const double best = log_terms(z, t, log_w, terms, &diffs);
  const double lse = log_sum_exp(terms, best);
  Vec out = Vec::Zero(dim());
  for (int k = 0; k < mixture_.size(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (terms[ku] == kNegInf) {
      continue;
    }
    const double r = std::exp(terms[ku] - lse);
    out.noalias() -= r * (noised(k, t).precision * diffs[ku]);
  }
  return out;
}

Vec MixtureOracle::posterior_mean(const Vec& z, int t, const Conditioning& cond) const {
  const auto log_w = log_weights(cond);
  std::vector<double> terms;
  std::vector<Vec> diffs;
  const double best = log_terms(z, t, log_w, terms, &diffs);
  if (t == 0) {
    return z;
  }
  const double lse = log_sum_exp(terms, best);
  Vec out = Vec::Zero(dim());
  for (int k = 0; k < mixture_.size(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    if (terms[ku] == kNegInf) {
      continue;
    }
    const double r = std::exp(terms[ku] - lse);
    const auto& nc = noised(k, t);
    out.noalias() += r * (mixture_.component(k).mean + nc.gain * diffs[ku]);
  }
  return out;
}

double MixtureOracle::clean_nll(const Vec& x) const {
  std::vector<double> terms;
  const double best = log_terms(x, 0, clean_log_weights_, terms, nullptr);
  return -log_sum_exp(terms, best);
}

Mat MixtureOracle::sample(const Conditioning& cond, std::uint64_t seed, int n) const {
  if (n < 0) {
    throw ParameterError("sample count must be >= 0");
  }
  const auto log_w = log_weights(cond);
  std::vector<double> probs;
  probs.reserve(log_w.size());
  for (double lw : log_w) {
    probs.push_back(lw == kNegInf ? 0.0 : std::exp(lw));
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(probs.begin(), probs.end());
  std::normal_distribution<double> normal(0.0, 1.0);

  const int d = dim();
  Mat out(n, d);
  Vec xi(d);
  for (int i = 0; i < n; ++i) {
    const int k = pick(rng);
    for (int j = 0; j < d; ++j) {
      xi(j) = normal(rng);
    }
    const auto ku = static_cast<std::size_t>(k);
    out.row(i) = (mixture_.component(k).mean + clean_chol_[ku].matrixL() * xi).transpose();
  }
  return out;
}

int MixtureOracle::nearest_component(const Vec& x) const {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int k = 0; k < mixture_.size(); ++k) {
    const Vec diff = x - mixture_.component(k).mean;
    const double dist = diff.dot(clean_chol_[static_cast<std::size_t>(k)].solve(diff));
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

}  // namespace expertgen
