#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "expertgen/evalharness.hpp"

namespace expertgen {

struct ScheduleSettings {
  int t_max = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct DecoderSettings {
  std::string kind = "identity";  // identity | random | matrix
  int obs_dim = 0;                // random only
  std::uint64_t seed = 0;         // random only
  std::optional<Mat> matrix;      // matrix only, obs_dim x latent_dim
};

struct ExpertSettings {
  std::string name;
  ExpertKind kind = ExpertKind::kClassifier;
  double weight = 1.0;
  bool guide = true;  // false: evaluated but never used for guidance

  std::string init = "random";  // random | mixture (classifier) | explicit
  std::uint64_t seed = 0;
  double scale = 1.0;   // mixture-tied classifier scale
  int n_classes = 0;    // random classifier / dense
  int embed_dim = 0;    // random embedding
  int n_patches = 1;    // dense
  double bias = 0.0;    // regressor
  std::optional<Mat> matrix;       // explicit embedding projection / classifier logits
  std::optional<Vec> weights;      // explicit regressor weights
  std::vector<Mat> patch_matrices;  // explicit dense patches

  GuidanceTarget target;
  std::vector<std::uint64_t> held_out_seeds;
  double held_out_scale = 0.3;
};

struct EvaluationSettings {
  std::optional<double> penalty_threshold;  // computed from true samples when absent
  double penalty_quantile = 0.99;
  int penalty_samples = 100000;
  std::uint64_t penalty_seed = 99;
  double regression_penalty = 10.0;
  int n_projections = 256;
  int n_chains = 200;
  int reference_samples = 2000;
};

struct TrajectorySettings {
  int n_chains = 256;
  int n_projections = 256;
  std::string embedding;  // name of an embedding expert; a seeded one is made when empty
  int embed_dim = 8;
  std::uint64_t embed_seed = 11;
};

struct SweepSettings {
  std::string axis = "tau";
  std::vector<double> values;
  int n_seeds = 200;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  ScheduleSettings schedule;
  std::vector<GaussianComponent> components;
  Conditioning cond;
  BackendKind backend = BackendKind::kConsistency;
  int n_substeps = 50;
  DecoderSettings decoder;
  std::vector<ExpertSettings> experts;
  GuidanceConfig guidance;
  EvaluationSettings evaluation;
  TrajectorySettings trajectory;
  SweepSettings sweep;

  /// Resolved configuration as a JSON tree (written to the run manifest).
  nlohmann::json to_json() const;
};

/// Reads the experiment tables from a parsed TOML tree. Unknown keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& root);
ExperimentConfig load_config(const std::string& path);

struct BuiltExpert {
  ExpertSettings settings;
  std::shared_ptr<const ExpertModel> model;
  std::vector<std::shared_ptr<const ExpertModel>> held_out;
  EvalParams eval;
};

/// Live objects assembled from a validated config.
struct Experiment {
  ExperimentConfig config;
  std::shared_ptr<const MixtureOracle> oracle;
  Decoder decoder = Decoder::identity(1);
  std::shared_ptr<const Denoiser> backend;
  std::vector<BuiltExpert> experts;
  double penalty_threshold = 0.0;

  /// Conditioned setup steered by every expert with guide = true.
  GuidanceSetup guided_setup() const;
  /// Conditioned setup steered by the named experts only.
  GuidanceSetup guided_setup(const std::vector<std::string>& names) const;
  /// No experts; conditioned when `conditioned` is true, unrestricted otherwise.
  GuidanceSetup unguided_setup(bool conditioned) const;

  const BuiltExpert& expert(const std::string& name) const;
  /// Unconditional true samples used as the SW reference.
  Mat reference_batch() const;
};

/// Builds and cross-validates everything (dimensions, labels, targets, seeds). Throws
/// ConfigError / ParameterError / ExpertError before any sampling happens.
Experiment build_experiment(ExperimentConfig config);

}  // namespace expertgen
