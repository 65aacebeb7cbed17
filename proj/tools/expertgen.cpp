// expertgen: command-line driver for sampling, guidance, trajectory analysis, sweeps and self-checks.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "expertgen/config.hpp"
#include "expertgen/errors.hpp"
#include "expertgen/report.hpp"
#include "expertgen/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace expertgen;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitGuidance = 2;
constexpr int kExitSelfcheck = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> backend;
  std::optional<double> w;
  std::optional<double> tau;
  std::optional<int> t_thre;
  std::optional<int> steps;
  std::optional<int> chains;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment TOML file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "run seed (overrides config)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--backend", f.backend, "posterior | consistency");
  cmd->add_option("--w", f.w, "guidance weight");
  cmd->add_option("--tau", f.tau, "gradient clip threshold");
  cmd->add_option("--t-thre", f.t_thre, "warmup threshold timestep");
  cmd->add_option("--steps", f.steps, "DDIM steps");
  cmd->add_option("--chains", f.chains, "number of chains (overrides evaluation.n_chains)");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig c = load_config(f.config);
  if (f.seed) {
    c.seed = *f.seed;
    c.guidance.seed = *f.seed;
  }
  if (f.backend) c.backend = parse_backend_kind(*f.backend);
  if (f.w) c.guidance.w = *f.w;
  if (f.tau) c.guidance.tau = *f.tau;
  if (f.t_thre) c.guidance.t_thre = *f.t_thre;
  if (f.steps) c.guidance.n_steps = *f.steps;
  if (f.chains) c.evaluation.n_chains = *f.chains;
  if (f.out) {
    c.out_dir = *f.out;
  } else if (const char* env = std::getenv("EXPERTGEN_OUT_DIR"); env != nullptr && *env != '\0') {
    c.out_dir = env;
  } else if (c.out_dir.empty()) {
    c.out_dir = "expertgen_out";
  }
  return c;
}

std::string in_dir(const Experiment& ex, const std::string& name) {
  return (fs::path(ex.config.out_dir) / name).string();
}

// Hash of the resolved config minus the output location.
std::string run_fingerprint(const Experiment& ex) {
  nlohmann::json j = ex.config.to_json();
  j.erase("out_dir");
  return fingerprint(j);
}

nlohmann::json manifest(const Experiment& ex, const std::string& command, const std::vector<std::string>& files) {
  nlohmann::json m;
  m["command"] = command;
  m["config"] = ex.config.to_json();
  m["penalty_threshold"] = ex.penalty_threshold;
  m["fingerprint"] = run_fingerprint(ex);
  m["files"] = files;
  return m;
}

std::vector<MetricReport> score_all(const Experiment& ex, const BatchResult& batch, const Mat& reference) {
  std::vector<MetricReport> out;
  const std::string fp = run_fingerprint(ex);
  for (const auto& e : ex.experts) {
    auto r = evaluate_batch(batch.latents, batch.observations, *ex.oracle, *e.model, e.settings.target, e.eval, &reference);
    r.name = e.settings.name;
    r.fingerprint = fp;
    out.push_back(std::move(r));
  }
  if (out.empty()) {
    MetricReport r;
    r.name = "quality";
    r.n_samples = static_cast<int>(batch.latents.rows());
    double nll = 0.0;
    for (Eigen::Index i = 0; i < batch.latents.rows(); ++i) nll += ex.oracle->clean_nll(batch.latents.row(i).transpose());
    r.mean_nll = nll / r.n_samples;
    r.sw = sliced_wasserstein(batch.latents, reference, ex.config.evaluation.n_projections, chain_seed(ex.config.seed, 0x5E5));
    r.fingerprint = fp;
    out.push_back(r);
  }
  return out;
}

void print_metrics(const std::vector<MetricReport>& reports) {
  std::printf("%-14s %12s %10s %10s %8s\n", "expert", "metric", "mean_nll", "sw", "penalty");
  for (const auto& r : reports) {
    std::printf("%-14s %12.6f %10.4f %10.4f %5d/%d\n", r.name.c_str(), r.task_metric, r.mean_nll, r.sw, r.penalty_count,
                r.n_samples);
  }
}

int cmd_sample(const CommonFlags& f, bool unconditional) {
  const Experiment ex = build_experiment(resolve(f));
  const auto setup = ex.unguided_setup(!unconditional);
  const auto batch = sample_guided_batch(setup, ex.config.guidance, ex.config.evaluation.n_chains);
  const Mat reference = ex.reference_batch();
  std::vector<std::string> files{"samples.csv", "metrics.csv"};
  write_samples_csv(in_dir(ex, "samples.csv"), batch.observations);
  const auto reports = score_all(ex, batch, reference);
  write_metrics_csv(in_dir(ex, "metrics.csv"), reports);
  if (ex.oracle->dim() == 2) {
    write_scatter_svg(in_dir(ex, "samples.svg"), batch.latents, ex.oracle->mixture());
    files.push_back("samples.svg");
  }
  write_manifest(in_dir(ex, "manifest.json"), manifest(ex, "sample", files));
  print_metrics(reports);
  return kExitOk;
}

int cmd_guide(const CommonFlags& f, const std::vector<std::string>& experts) {
  const Experiment ex = build_experiment(resolve(f));
  const auto setup = experts.empty() ? ex.guided_setup() : ex.guided_setup(experts);
  const auto batch = sample_guided_batch(setup, ex.config.guidance, ex.config.evaluation.n_chains, true);
  const Mat reference = ex.reference_batch();
  std::vector<std::string> files{"samples.csv", "trace.csv", "metrics.csv"};
  write_samples_csv(in_dir(ex, "samples.csv"), batch.observations);
  write_trace_csv(in_dir(ex, "trace.csv"), batch.traces);
  const auto reports = score_all(ex, batch, reference);
  write_metrics_csv(in_dir(ex, "metrics.csv"), reports);

  std::vector<InvarianceRow> inv;
  for (const auto& e : ex.experts) {
    if (e.held_out.empty()) continue;
    std::vector<const ExpertModel*> held;
    for (const auto& h : e.held_out) held.push_back(h.get());
    for (auto& row : evaluator_invariance(batch.latents, batch.observations, *ex.oracle, *e.model, held, e.settings.target, e.eval)) {
      row.evaluator = e.settings.name + ":" + row.evaluator;
      inv.push_back(std::move(row));
    }
  }
  if (!inv.empty()) {
    write_invariance_csv(in_dir(ex, "invariance.csv"), inv);
    files.push_back("invariance.csv");
  }
  if (ex.oracle->dim() == 2) {
    write_scatter_svg(in_dir(ex, "samples.svg"), batch.latents, ex.oracle->mixture());
    files.push_back("samples.svg");
  }
  write_manifest(in_dir(ex, "manifest.json"), manifest(ex, "guide", files));
  print_metrics(reports);
  return kExitOk;
}

int cmd_trajectory(const CommonFlags& f) {
  const Experiment ex = build_experiment(resolve(f));
  const auto& tc = ex.config.trajectory;
  std::shared_ptr<const EmbeddingExpert> embedding;
  if (!tc.embedding.empty()) {
    embedding = std::dynamic_pointer_cast<const EmbeddingExpert>(ex.expert(tc.embedding).model);
  } else {
    embedding = std::make_shared<EmbeddingExpert>(EmbeddingExpert::random(tc.embed_dim, ex.decoder.obs_dim(), tc.embed_seed));
  }
  const TrajectoryParams params{tc.n_chains, tc.n_projections, ex.config.seed};
  const auto report = trajectory_analysis(ex.oracle, ex.decoder, ex.config.cond,
                                          {BackendKind::kPosteriorMean, BackendKind::kConsistency},
                                          ex.config.n_substeps, ex.config.guidance, *embedding, params);
  write_trajectory_csv(in_dir(ex, "trajectory.csv"), report);
  write_trajectory_svg(in_dir(ex, "trajectory.svg"), report);
  write_manifest(in_dir(ex, "manifest.json"), manifest(ex, "trajectory", {"trajectory.csv", "trajectory.svg"}));
  std::printf("baseline sw %.4f\n%4s %5s %12s %8s %8s\n", report.baseline_sw, "step", "t", "backend", "sw", "cosine");
  for (const auto& r : report.rows) {
    std::printf("%4d %5d %12s %8.4f %8.4f\n", r.step, r.t, std::string(to_string(r.backend)).c_str(), r.sw, r.cosine);
  }
  return kExitOk;
}

int cmd_sweep(const CommonFlags& f, const std::optional<std::string>& axis, const std::vector<double>& values) {
  ExperimentConfig cfg = resolve(f);
  if (axis) cfg.sweep.axis = *axis;
  if (!values.empty()) cfg.sweep.values = values;
  if (cfg.sweep.values.empty()) throw ConfigError("sweep needs values (sweep.values or --values)");
  const Experiment ex = build_experiment(cfg);
  const auto setup = ex.guided_setup();
  if (!setup.experts) throw ConfigError("sweep needs at least one guiding expert");
  std::vector<EvalParams> params;
  for (const auto& e : setup.experts->entries()) params.push_back(ex.expert(e.name).eval);
  const Mat reference = ex.reference_batch();
  const auto rows = run_sweep(setup, parse_sweep_axis(ex.config.sweep.axis), ex.config.sweep.values, ex.config.guidance,
                              ex.config.sweep.n_seeds, params, &reference);
  write_sweep_csv(in_dir(ex, "sweep.csv"), rows);
  write_manifest(in_dir(ex, "manifest.json"), manifest(ex, "sweep", {"sweep.csv"}));
  std::printf("%8s %12s %14s %12s %10s %8s\n", "axis", "value", "expert", "metric", "mean_nll", "penalty");
  for (const auto& row : rows) {
    for (const auto& r : row.reports) {
      std::printf("%8s %12.6g %14s %12.6f %10.4f %8d\n", std::string(to_string(row.axis)).c_str(), row.value,
                  r.name.c_str(), r.task_metric, r.mean_nll, r.penalty_count);
    }
  }
  return kExitOk;
}

int cmd_selfcheck(const CommonFlags& f) {
  const Experiment ex = build_experiment(resolve(f));
  const auto results = run_selfcheck(ex, ex.config.seed);
  bool ok = true;
  std::printf("%-24s %-6s %12s %12s  %s\n", "check", "result", "worst", "tolerance", "detail");
  for (const auto& r : results) {
    std::printf("%-24s %-6s %12.3e %12.3e  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.worst, r.tolerance,
                r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitSelfcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ExpertGen-style guided sampling over an analytic Gaussian-mixture model"};
  app.require_subcommand(1);

  CommonFlags sample_f, guide_f, traj_f, sweep_f, check_f;
  bool unconditional = false;
  std::vector<std::string> guide_experts;
  std::optional<std::string> sweep_axis;
  std::vector<double> sweep_values;

  auto* sample = app.add_subcommand("sample", "unguided generation");
  add_common(sample, sample_f);
  sample->add_flag("--unconditional", unconditional, "ignore the configured conditioning");

  auto* guide = app.add_subcommand("guide", "expert-guided generation");
  add_common(guide, guide_f);
  guide->add_option("--experts", guide_experts, "names of guiding experts (default: all with guide = true)")
      ->delimiter(',');

  auto* traj = app.add_subcommand("trajectory", "intermediate-prediction quality per backend");
  add_common(traj, traj_f);

  auto* sweep = app.add_subcommand("sweep", "ablation over t_thre, w or tau");
  add_common(sweep, sweep_f);
  sweep->add_option("--axis", sweep_axis, "t_thre | w | tau");
  sweep->add_option("--values", sweep_values, "comma-separated axis values")->delimiter(',');

  auto* check = app.add_subcommand("selfcheck", "oracle suite");
  add_common(check, check_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*sample) return cmd_sample(sample_f, unconditional);
    if (*guide) return cmd_guide(guide_f, guide_experts);
    if (*traj) return cmd_trajectory(traj_f);
    if (*sweep) return cmd_sweep(sweep_f, sweep_axis, sweep_values);
    if (*check) return cmd_selfcheck(check_f);
  } catch (const GuidanceError& e) {
    std::cerr << "guidance error: " << e.what() << '\n';
    return kExitGuidance;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}
