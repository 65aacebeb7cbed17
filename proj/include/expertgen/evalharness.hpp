#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "expertgen/guidance.hpp"

namespace expertgen {

/// Sliced 2-Wasserstein distance sqrt(mean_theta W2^2(theta.a, theta.b)) between the rows of a
/// and b over n_projections seeded unit directions. Unequal sample counts are handled by exact
/// quantile-function matching. Projections are evaluated in parallel; the result does not
/// depend on the thread count.
double sliced_wasserstein(const Mat& a, const Mat& b, int n_projections, std::uint64_t seed);

/// Same value, single-threaded.
double sliced_wasserstein_serial(const Mat& a, const Mat& b, int n_projections, std::uint64_t seed);

/// Exact squared 2-Wasserstein distance between two 1-D empirical measures (inputs need not be sorted).
double wasserstein2_squared_1d(std::vector<double> a, std::vector<double> b);

struct EvalParams {
  double penalty_threshold = 0.0;  // clean NLL above which a sample counts as a failure
  double penalty_value = 0.0;      // metric assigned to failed samples
  int n_projections = 256;
  std::uint64_t sw_seed = 0;
};

/// Worst-case metric for an expert kind: 0 for accuracy and similarity, `regression_penalty` for
/// regression error.
double default_penalty_value(ExpertKind kind, double regression_penalty);

struct MetricReport {
  std::string name;
  double task_metric = 0.0;  // mean over samples, penalties included
  double mean_nll = 0.0;     // quality, lower is better
  double sw = 0.0;           // NaN when no reference batch was supplied
  int penalty_count = 0;
  int n_samples = 0;
  std::string fingerprint;
};

/// latents are rows in mixture space, observations the decoded rows fed to the expert.
MetricReport evaluate_batch(const Mat& latents, const Mat& observations, const MixtureOracle& oracle,
                            const ExpertModel& expert, const GuidanceTarget& target, const EvalParams& params,
                            const Mat* reference = nullptr);

/// q-quantile (linear interpolation, q in [0, 1]) of clean NLL over n unconditional true samples.
double nll_percentile(const MixtureOracle& oracle, double q, int n, std::uint64_t seed);

struct TrajectoryRow {
  int step = 0;  // 0-based grid index
  int t = 0;
  BackendKind backend = BackendKind::kPosteriorMean;
  double sw = 0.0;
  double cosine = 0.0;
};

struct TrajectoryReport {
  std::vector<TrajectoryRow> rows;  // step-major, backends in the order requested
  double baseline_sw = 0.0;         // two independent true batches of the chain count

  const TrajectoryRow& at(int step, BackendKind backend) const;
  int n_steps() const;
};

struct TrajectoryParams {
  int n_chains = 256;
  int n_projections = 256;
  std::uint64_t seed = 0;  // chain seeds and reference batches derive from it
};

/// Unguided chains per backend from shared seeds; per step, SW of the latent x0_hat batch
/// against a true reference batch, and mean cosine between embed(decode(x0_hat)) and the embedding
/// of the chain's own final output.
TrajectoryReport trajectory_analysis(std::shared_ptr<const MixtureOracle> oracle, const Decoder& decoder,
                                     const Conditioning& cond, const std::vector<BackendKind>& backends,
                                     int n_substeps, const GuidanceConfig& config, const EmbeddingExpert& embedding,
                                     const TrajectoryParams& params);

enum class SweepAxis { kTThre, kW, kTau };

std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view name);

struct SweepRow {
  SweepAxis axis = SweepAxis::kW;
  double value = 0.0;
  std::vector<MetricReport> reports;  // one per expert entry
};

/// One guided batch of n_seeds chains per value, evaluated against every expert entry of setup.
std::vector<SweepRow> run_sweep(const GuidanceSetup& setup, SweepAxis axis, const std::vector<double>& values,
                                const GuidanceConfig& base, int n_seeds, const std::vector<EvalParams>& params,
                                const Mat* reference = nullptr);

/// Applies a sweep value to a copy of the config.
GuidanceConfig with_axis_value(const GuidanceConfig& base, SweepAxis axis, double value);

struct InvarianceRow {
  std::string evaluator;
  MetricReport report;
};

/// The same batch scored by the guidance expert and by each held-out evaluator.
std::vector<InvarianceRow> evaluator_invariance(const Mat& latents, const Mat& observations,
                                                const MixtureOracle& oracle, const ExpertModel& guide,
                                                const std::vector<const ExpertModel*>& held_out,
                                                const GuidanceTarget& target, const EvalParams& params);

}  // namespace expertgen
