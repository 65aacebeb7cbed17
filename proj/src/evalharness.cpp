#include "expertgen/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "expertgen/errors.hpp"

namespace expertgen {

namespace {

Mat unit_directions(int dim, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat dirs(dim, n);
  for (int p = 0; p < n; ++p) {
    double norm = 0.0;
    while (!(norm > 0.0)) {
      for (int j = 0; j < dim; ++j) {
        dirs(j, p) = normal(rng);
      }
      norm = dirs.col(p).norm();
    }
    dirs.col(p) /= norm;
  }
  return dirs;
}

void check_sw_inputs(const Mat& a, const Mat& b, int n_projections) {
  if (a.rows() < 1 || b.rows() < 1) {
    throw ParameterError("sliced_wasserstein needs nonempty sample sets");
  }
  if (a.cols() != b.cols()) {
    throw ParameterError("sliced_wasserstein: dimension mismatch (" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()) + ")");
  }
  if (n_projections < 1) {
    throw ParameterError("n_projections must be >= 1");
  }
}

double projected_w2(const Mat& a, const Mat& b, const Vec& dir) {
  const Vec pa = a * dir;
  const Vec pb = b * dir;
  return wasserstein2_squared_1d({pa.data(), pa.data() + pa.size()}, {pb.data(), pb.data() + pb.size()});
}

double finish_sw(const std::vector<double>& per_projection) {
  double total = 0.0;
  for (double v : per_projection) {
    total += v;
  }
  return std::sqrt(total / static_cast<double>(per_projection.size()));
}

Mat rows_of(const std::vector<SamplerTrace>& traces, int step, bool observation) {
  const auto& first = traces.front().steps[static_cast<std::size_t>(step)];
  const auto cols = observation ? first.observation.size() : first.x0_hat.size();
  Mat out(static_cast<Eigen::Index>(traces.size()), cols);
  for (std::size_t c = 0; c < traces.size(); ++c) {
    const auto& rec = traces[c].steps[static_cast<std::size_t>(step)];
    out.row(static_cast<Eigen::Index>(c)) = (observation ? rec.observation : rec.x0_hat).transpose();
  }
  return out;
}

double safe_cosine(const EmbeddingExpert& embedding, const Vec& x, const Vec& final_embed) {
  try {
    return embedding.embed(x).dot(final_embed);
  } catch (const ExpertError&) {
    return 0.0;
  }
}

}  // namespace

double wasserstein2_squared_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) {
    throw ParameterError("wasserstein2_squared_1d needs nonempty inputs");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto n = static_cast<std::int64_t>(a.size());
  const auto m = static_cast<std::int64_t>(b.size());
  if (n == m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double diff = a[i] - b[i];
      acc += diff * diff;
    }
    return acc / static_cast<double>(n);
  }
  // Quantile functions are step functions with jumps at i/n and j/m; integrate on the common
  // refinement, measured in units of 1/(n m) so the breakpoint comparisons are exact.
  double acc = 0.0;
  std::int64_t i = 0;
  std::int64_t j = 0;
  std::int64_t u = 0;
  while (i < n && j < m) {
    const std::int64_t end_a = (i + 1) * m;
    const std::int64_t end_b = (j + 1) * n;
    const std::int64_t next = std::min(end_a, end_b);
    const double diff = a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(j)];
    acc += static_cast<double>(next - u) * diff * diff;
    u = next;
    if (end_a == next) ++i;
    if (end_b == next) ++j;
  }
  return acc / (static_cast<double>(n) * static_cast<double>(m));
}

double sliced_wasserstein_serial(const Mat& a, const Mat& b, int n_projections, std::uint64_t seed) {
  check_sw_inputs(a, b, n_projections);
  const Mat dirs = unit_directions(static_cast<int>(a.cols()), n_projections, seed);
  std::vector<double> w2(static_cast<std::size_t>(n_projections));
  for (int p = 0; p < n_projections; ++p) {
    w2[static_cast<std::size_t>(p)] = projected_w2(a, b, dirs.col(p));
  }
  return finish_sw(w2);
}

double sliced_wasserstein(const Mat& a, const Mat& b, int n_projections, std::uint64_t seed) {
  check_sw_inputs(a, b, n_projections);
  const Mat dirs = unit_directions(static_cast<int>(a.cols()), n_projections, seed);
  std::vector<double> w2(static_cast<std::size_t>(n_projections));
#pragma omp parallel for schedule(static)
  for (int p = 0; p < n_projections; ++p) {
    w2[static_cast<std::size_t>(p)] = projected_w2(a, b, dirs.col(p));
  }
  return finish_sw(w2);
}

double default_penalty_value(ExpertKind kind, double regression_penalty) {
  return kind == ExpertKind::kRegressor ? regression_penalty : 0.0;
}

MetricReport evaluate_batch(const Mat& latents, const Mat& observations, const MixtureOracle& oracle,
                            const ExpertModel& expert, const GuidanceTarget& target, const EvalParams& params,
                            const Mat* reference) {
  if (latents.rows() < 1) {
    throw ParameterError("evaluate_batch needs at least one sample");
  }
  if (observations.rows() != latents.rows()) {
    throw ParameterError("evaluate_batch: latent and observation counts differ");
  }
  expert.check_target(target);
  MetricReport r;
  r.name = std::string(to_string(expert.kind()));
  r.n_samples = static_cast<int>(latents.rows());
  double metric = 0.0;
  double nll = 0.0;
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    const double sample_nll = oracle.clean_nll(latents.row(i).transpose());
    nll += sample_nll;
    if (!(sample_nll <= params.penalty_threshold)) {
      ++r.penalty_count;
      metric += params.penalty_value;
    } else {
      metric += expert.evaluate(observations.row(i).transpose(), target);
    }
  }
  r.task_metric = metric / r.n_samples;
  r.mean_nll = nll / r.n_samples;
  r.sw = reference != nullptr ? sliced_wasserstein(latents, *reference, params.n_projections, params.sw_seed)
                              : std::numeric_limits<double>::quiet_NaN();
  return r;
}

double nll_percentile(const MixtureOracle& oracle, double q, int n, std::uint64_t seed) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw ParameterError("percentile must lie in [0, 1]");
  }
  if (n < 1) {
    throw ParameterError("nll_percentile needs n >= 1");
  }
  const Mat x = oracle.sample(Conditioning::unrestricted(), seed, n);
  std::vector<double> nll(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nll[static_cast<std::size_t>(i)] = oracle.clean_nll(x.row(i).transpose());
  }
  std::sort(nll.begin(), nll.end());
  const double pos = q * (n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, nll.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return nll[lo] + frac * (nll[hi] - nll[lo]);
}

const TrajectoryRow& TrajectoryReport::at(int step, BackendKind backend) const {
  for (const auto& r : rows) {
    if (r.step == step && r.backend == backend) {
      return r;
    }
  }
  throw ParameterError("trajectory report has no row for step " + std::to_string(step) + " / " +
                       std::string(to_string(backend)));
}

int TrajectoryReport::n_steps() const {
  int n = 0;
  for (const auto& r : rows) {
    n = std::max(n, r.step + 1);
  }
  return n;
}

TrajectoryReport trajectory_analysis(std::shared_ptr<const MixtureOracle> oracle, const Decoder& decoder,
                                     const Conditioning& cond, const std::vector<BackendKind>& backends,
                                     int n_substeps, const GuidanceConfig& config, const EmbeddingExpert& embedding,
                                     const TrajectoryParams& params) {
  if (params.n_chains < 2) {
    throw ParameterError("trajectory analysis needs at least two chains");
  }
  if (backends.empty()) {
    throw ParameterError("trajectory analysis needs at least one backend");
  }
  if (embedding.input_dim() != decoder.obs_dim()) {
    throw ParameterError("embedding input dimension does not match the decoder output");
  }
  GuidanceConfig cfg = config;
  cfg.seed = params.seed;
  cfg.w = 0.0;

  const Mat reference = oracle->sample(cond, chain_seed(params.seed, 0xA11CE), params.n_chains);
  const Mat second = oracle->sample(cond, chain_seed(params.seed, 0xB0B), params.n_chains);
  const std::uint64_t sw_seed = chain_seed(params.seed, 0x5EED);

  TrajectoryReport report;
  report.baseline_sw = sliced_wasserstein(reference, second, params.n_projections, sw_seed);

  std::vector<BatchResult> runs;
  runs.reserve(backends.size());
  for (BackendKind kind : backends) {
    GuidanceSetup setup{make_denoiser(kind, oracle, n_substeps), decoder, cond, nullptr};
    runs.push_back(sample_guided_batch(setup, cfg, params.n_chains, true));
  }

  const int n_steps = static_cast<int>(runs.front().traces.front().steps.size());
  for (int step = 0; step < n_steps; ++step) {
    for (std::size_t b = 0; b < backends.size(); ++b) {
      const auto& run = runs[b];
      TrajectoryRow row;
      row.step = step;
      row.t = run.traces.front().steps[static_cast<std::size_t>(step)].t;
      row.backend = backends[b];
      row.sw = sliced_wasserstein(rows_of(run.traces, step, false), reference, params.n_projections, sw_seed);
      double cos_sum = 0.0;
      for (int c = 0; c < params.n_chains; ++c) {
        const Vec final_embed = embedding.embed(run.observations.row(c).transpose());
        const auto& rec = run.traces[static_cast<std::size_t>(c)].steps[static_cast<std::size_t>(step)];
        cos_sum += safe_cosine(embedding, rec.observation, final_embed);
      }
      row.cosine = cos_sum / params.n_chains;
      report.rows.push_back(row);
    }
  }
  return report;
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kTThre:
      return "t_thre";
    case SweepAxis::kW:
      return "w";
    case SweepAxis::kTau:
      return "tau";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "t_thre") return SweepAxis::kTThre;
  if (name == "w") return SweepAxis::kW;
  if (name == "tau") return SweepAxis::kTau;
  throw ParameterError("unknown sweep axis '" + std::string(name) + "' (t_thre|w|tau)");
}

GuidanceConfig with_axis_value(const GuidanceConfig& base, SweepAxis axis, double value) {
  GuidanceConfig cfg = base;
  switch (axis) {
    case SweepAxis::kTThre:
      if (value != std::floor(value)) {
        throw ParameterError("t_thre sweep values must be integers");
      }
      cfg.t_thre = static_cast<int>(value);
      break;
    case SweepAxis::kW:
      cfg.w = value;
      break;
    case SweepAxis::kTau:
      cfg.tau = value;
      break;
  }
  return cfg;
}

std::vector<SweepRow> run_sweep(const GuidanceSetup& setup, SweepAxis axis, const std::vector<double>& values,
                                const GuidanceConfig& base, int n_seeds, const std::vector<EvalParams>& params,
                                const Mat* reference) {
  if (!setup.experts) {
    throw ParameterError("a sweep needs at least one expert");
  }
  const auto& entries = setup.experts->entries();
  if (params.size() != entries.size()) {
    throw ParameterError("run_sweep needs one EvalParams per expert entry");
  }
  std::vector<SweepRow> rows;
  rows.reserve(values.size());
  for (double v : values) {
    const GuidanceConfig cfg = with_axis_value(base, axis, v);
    cfg.validate(setup.schedule());
    const BatchResult batch = sample_guided_batch(setup, cfg, n_seeds);
    SweepRow row;
    row.axis = axis;
    row.value = v;
    for (std::size_t e = 0; e < entries.size(); ++e) {
      MetricReport r = evaluate_batch(batch.latents, batch.observations, setup.oracle(), *entries[e].expert,
                                      entries[e].target, params[e], reference);
      if (!entries[e].name.empty()) {
        r.name = entries[e].name;
      }
      row.reports.push_back(std::move(r));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<InvarianceRow> evaluator_invariance(const Mat& latents, const Mat& observations,
                                                const MixtureOracle& oracle, const ExpertModel& guide,
                                                const std::vector<const ExpertModel*>& held_out,
                                                const GuidanceTarget& target, const EvalParams& params) {
  if (held_out.empty()) {
    throw ParameterError("evaluator_invariance needs at least one held-out evaluator");
  }
  std::vector<InvarianceRow> rows;
  rows.push_back({"guide", evaluate_batch(latents, observations, oracle, guide, target, params)});
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    if (held_out[i] == nullptr || held_out[i]->kind() != guide.kind()) {
      throw ParameterError("held-out evaluators must match the guidance expert's kind");
    }
    rows.push_back({"held_out_" + std::to_string(i + 1),
                    evaluate_batch(latents, observations, oracle, *held_out[i], target, params)});
  }
  return rows;
}

}  // namespace expertgen
