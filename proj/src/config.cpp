#include "expertgen/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "expertgen/errors.hpp"
#include "expertgen/toml_lite.hpp"

namespace expertgen {

namespace {

using nlohmann::json;

void allow_keys(const json& table, const std::string& where, std::initializer_list<const char*> keys) {
  if (!table.is_object()) {
    throw ConfigError("'" + where + "' must be a table");
  }
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : table.items()) {
    if (allowed.count(k) == 0) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) {
    throw ConfigError("'" + key + "' must be a number");
  }
  return v.get<double>();
}

std::int64_t as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) {
    throw ConfigError("'" + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

std::uint64_t as_seed(const json& v, const std::string& key) {
  const auto s = as_int(v, key);
  if (s < 0) {
    throw ConfigError("'" + key + "' must be >= 0");
  }
  return static_cast<std::uint64_t>(s);
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) {
    throw ConfigError("'" + key + "' must be a string");
  }
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) {
    throw ConfigError("'" + key + "' must be true or false");
  }
  return v.get<bool>();
}

Vec as_vector(const json& v, const std::string& key) {
  if (!v.is_array() || v.empty()) {
    throw ConfigError("'" + key + "' must be a nonempty array of numbers");
  }
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = as_double(v[i], key);
  }
  return out;
}

Mat as_matrix(const json& v, const std::string& key) {
  if (!v.is_array() || v.empty() || !v.front().is_array()) {
    throw ConfigError("'" + key + "' must be a nonempty array of rows");
  }
  const auto cols = v.front().size();
  Mat out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < v.size(); ++r) {
    const Vec row = as_vector(v[r], key);
    if (static_cast<std::size_t>(row.size()) != cols) {
      throw ConfigError("'" + key + "' rows have different lengths");
    }
    out.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return out;
}

std::vector<int> as_int_list(const json& v, const std::string& key) {
  if (!v.is_array()) {
    throw ConfigError("'" + key + "' must be an array of integers");
  }
  std::vector<int> out;
  for (const auto& x : v) {
    out.push_back(static_cast<int>(as_int(x, key)));
  }
  return out;
}

json vec_json(const Vec& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

json mat_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rows.push_back(vec_json(m.row(r).transpose()));
  }
  return rows;
}

json target_json(const GuidanceTarget& t) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, EmbeddingTarget>) {
          return vec_json(v.embedding);
        } else if constexpr (std::is_same_v<T, ClassTarget>) {
          return v.label;
        } else if constexpr (std::is_same_v<T, AgeTarget>) {
          return v.value;
        } else {
          return v.labels;
        }
      },
      t);
}

GaussianComponent parse_component(const json& c, std::size_t index) {
  const std::string where = "component[" + std::to_string(index) + "]";
  allow_keys(c, where, {"weight", "mean", "cov_diag", "cov", "label"});
  if (!c.contains("weight") || !c.contains("mean")) {
    throw ConfigError(where + " needs weight and mean");
  }
  GaussianComponent out;
  out.weight = as_double(c["weight"], "weight");
  out.mean = as_vector(c["mean"], "mean");
  out.label = c.contains("label") ? static_cast<int>(as_int(c["label"], "label")) : static_cast<int>(index);
  if (c.contains("cov_diag") == c.contains("cov")) {
    throw ConfigError(where + " needs exactly one of cov_diag or cov");
  }
  if (c.contains("cov_diag")) {
    out.covariance = as_vector(c["cov_diag"], "cov_diag").asDiagonal();
  } else {
    out.covariance = as_matrix(c["cov"], "cov");
  }
  return out;
}

GuidanceTarget parse_target(ExpertKind kind, const json& v) {
  switch (kind) {
    case ExpertKind::kEmbedding: {
      Vec e = as_vector(v, "target");
      const double n = e.norm();
      if (!(n > 0.0)) {
        throw ConfigError("embedding target must be nonzero");
      }
      return EmbeddingTarget{e / n};
    }
    case ExpertKind::kClassifier:
      return ClassTarget{static_cast<int>(as_int(v, "target"))};
    case ExpertKind::kRegressor:
      return AgeTarget{as_double(v, "target")};
    case ExpertKind::kDense:
      return DenseTarget{as_int_list(v, "target")};
  }
  throw ConfigError("unknown expert kind");
}

ExpertSettings parse_expert(const json& e, std::size_t index) {
  const std::string where = "expert[" + std::to_string(index) + "]";
  allow_keys(e, where,
             {"name", "kind", "weight", "guide", "init", "seed", "scale", "n_classes", "embed_dim", "n_patches",
              "bias", "matrix", "weights", "patches", "target", "held_out_seeds", "held_out_scale"});
  if (!e.contains("kind") || !e.contains("target")) {
    throw ConfigError(where + " needs kind and target");
  }
  ExpertSettings s;
  s.kind = parse_expert_kind(as_string(e["kind"], "kind"));
  s.name = e.contains("name") ? as_string(e["name"], "name") : std::string(to_string(s.kind));
  if (e.contains("weight")) s.weight = as_double(e["weight"], "weight");
  if (e.contains("guide")) s.guide = as_bool(e["guide"], "guide");
  if (e.contains("init")) s.init = as_string(e["init"], "init");
  if (e.contains("seed")) s.seed = as_seed(e["seed"], "seed");
  if (e.contains("scale")) s.scale = as_double(e["scale"], "scale");
  if (e.contains("n_classes")) s.n_classes = static_cast<int>(as_int(e["n_classes"], "n_classes"));
  if (e.contains("embed_dim")) s.embed_dim = static_cast<int>(as_int(e["embed_dim"], "embed_dim"));
  if (e.contains("n_patches")) s.n_patches = static_cast<int>(as_int(e["n_patches"], "n_patches"));
  if (e.contains("bias")) s.bias = as_double(e["bias"], "bias");
  if (e.contains("matrix")) s.matrix = as_matrix(e["matrix"], "matrix");
  if (e.contains("weights")) s.weights = as_vector(e["weights"], "weights");
  if (e.contains("patches")) {
    if (!e["patches"].is_array()) throw ConfigError("'patches' must be an array of matrices");
    for (const auto& p : e["patches"]) s.patch_matrices.push_back(as_matrix(p, "patches"));
  }
  s.target = parse_target(s.kind, e["target"]);
  if (e.contains("held_out_seeds")) {
    if (!e["held_out_seeds"].is_array()) throw ConfigError("'held_out_seeds' must be an array");
    for (const auto& v : e["held_out_seeds"]) s.held_out_seeds.push_back(as_seed(v, "held_out_seeds"));
  }
  if (e.contains("held_out_scale")) s.held_out_scale = as_double(e["held_out_scale"], "held_out_scale");
  if (s.init != "random" && s.init != "mixture" && s.init != "explicit") {
    throw ConfigError(where + ": init must be random, mixture or explicit");
  }
  if (s.init == "mixture" && s.kind != ExpertKind::kClassifier) {
    throw ConfigError(where + ": init = \"mixture\" is only defined for classifiers");
  }
  return s;
}

std::shared_ptr<const ExpertModel> make_expert(const ExpertSettings& s, const GaussianMixture& mixture, int obs_dim) {
  const bool expl = s.init == "explicit";
  switch (s.kind) {
    case ExpertKind::kEmbedding:
      if (expl) {
        if (!s.matrix) throw ConfigError("expert '" + s.name + "': explicit embedding needs matrix");
        return std::make_shared<EmbeddingExpert>(*s.matrix);
      }
      return std::make_shared<EmbeddingExpert>(EmbeddingExpert::random(s.embed_dim, obs_dim, s.seed));
    case ExpertKind::kClassifier:
      if (expl) {
        if (!s.matrix) throw ConfigError("expert '" + s.name + "': explicit classifier needs matrix");
        return std::make_shared<ClassifierExpert>(*s.matrix);
      }
      if (s.init == "mixture") {
        if (obs_dim != mixture.dim()) {
          throw ConfigError("expert '" + s.name + "': mixture-tied classifier needs an identity-sized decoder");
        }
        return std::make_shared<ClassifierExpert>(ClassifierExpert::from_mixture(mixture, s.scale));
      }
      return std::make_shared<ClassifierExpert>(ClassifierExpert::random(s.n_classes, obs_dim, s.seed));
    case ExpertKind::kRegressor:
      if (expl) {
        if (!s.weights) throw ConfigError("expert '" + s.name + "': explicit regressor needs weights");
        return std::make_shared<RegressorExpert>(*s.weights, s.bias);
      }
      return std::make_shared<RegressorExpert>(RegressorExpert::random(obs_dim, s.seed, s.bias));
    case ExpertKind::kDense:
      if (expl) {
        if (s.patch_matrices.empty()) throw ConfigError("expert '" + s.name + "': explicit dense needs patches");
        return std::make_shared<DenseExpert>(s.patch_matrices);
      }
      return std::make_shared<DenseExpert>(DenseExpert::random(s.n_patches, s.n_classes, obs_dim, s.seed));
  }
  throw ConfigError("unknown expert kind");
}

}  // namespace

ExperimentConfig parse_config(const json& root) {
  allow_keys(root, "top level",
             {"seed", "out_dir", "schedule", "component", "conditioning", "backend", "decoder", "expert", "guidance",
              "evaluation", "trajectory", "sweep"});
  ExperimentConfig c;
  if (root.contains("seed")) c.seed = as_seed(root["seed"], "seed");
  c.guidance.seed = c.seed;
  if (root.contains("out_dir")) c.out_dir = as_string(root["out_dir"], "out_dir");

  if (root.contains("schedule")) {
    const auto& s = root["schedule"];
    allow_keys(s, "schedule", {"t_max", "beta_start", "beta_end"});
    if (s.contains("t_max")) c.schedule.t_max = static_cast<int>(as_int(s["t_max"], "t_max"));
    if (s.contains("beta_start")) c.schedule.beta_start = as_double(s["beta_start"], "beta_start");
    if (s.contains("beta_end")) c.schedule.beta_end = as_double(s["beta_end"], "beta_end");
  }

  if (!root.contains("component") || !root["component"].is_array() || root["component"].empty()) {
    throw ConfigError("config needs at least one [[component]]");
  }
  for (std::size_t i = 0; i < root["component"].size(); ++i) {
    c.components.push_back(parse_component(root["component"][i], i));
  }

  if (root.contains("conditioning")) {
    const auto& s = root["conditioning"];
    allow_keys(s, "conditioning", {"labels"});
    if (s.contains("labels")) c.cond = Conditioning::labels(as_int_list(s["labels"], "labels"));
  }

  if (root.contains("backend")) {
    const auto& s = root["backend"];
    allow_keys(s, "backend", {"kind", "n_substeps"});
    if (s.contains("kind")) c.backend = parse_backend_kind(as_string(s["kind"], "backend.kind"));
    if (s.contains("n_substeps")) c.n_substeps = static_cast<int>(as_int(s["n_substeps"], "n_substeps"));
  }

  if (root.contains("decoder")) {
    const auto& s = root["decoder"];
    allow_keys(s, "decoder", {"kind", "obs_dim", "seed", "matrix"});
    if (s.contains("kind")) c.decoder.kind = as_string(s["kind"], "decoder.kind");
    if (s.contains("obs_dim")) c.decoder.obs_dim = static_cast<int>(as_int(s["obs_dim"], "obs_dim"));
    if (s.contains("seed")) c.decoder.seed = as_seed(s["seed"], "decoder.seed");
    if (s.contains("matrix")) c.decoder.matrix = as_matrix(s["matrix"], "decoder.matrix");
    if (c.decoder.kind != "identity" && c.decoder.kind != "random" && c.decoder.kind != "matrix") {
      throw ConfigError("decoder.kind must be identity, random or matrix");
    }
  }

  if (root.contains("expert")) {
    if (!root["expert"].is_array()) throw ConfigError("experts must be given as [[expert]] tables");
    for (std::size_t i = 0; i < root["expert"].size(); ++i) {
      c.experts.push_back(parse_expert(root["expert"][i], i));
    }
  }

  if (root.contains("guidance")) {
    const auto& s = root["guidance"];
    allow_keys(s, "guidance", {"w", "tau", "t_thre", "n_steps", "grad_mode", "fd_step", "eps_source", "seed"});
    auto& g = c.guidance;
    if (s.contains("w")) g.w = as_double(s["w"], "w");
    if (s.contains("tau")) g.tau = as_double(s["tau"], "tau");
    if (s.contains("t_thre")) g.t_thre = static_cast<int>(as_int(s["t_thre"], "t_thre"));
    if (s.contains("n_steps")) g.n_steps = static_cast<int>(as_int(s["n_steps"], "n_steps"));
    if (s.contains("grad_mode")) g.grad_mode = parse_grad_mode(as_string(s["grad_mode"], "grad_mode"));
    if (s.contains("fd_step")) g.fd_step = as_double(s["fd_step"], "fd_step");
    if (s.contains("eps_source")) g.eps_source = parse_eps_source(as_string(s["eps_source"], "eps_source"));
    if (s.contains("seed")) g.seed = as_seed(s["seed"], "guidance.seed");
  }

  if (root.contains("evaluation")) {
    const auto& s = root["evaluation"];
    allow_keys(s, "evaluation",
               {"penalty_threshold", "penalty_quantile", "penalty_samples", "penalty_seed", "regression_penalty",
                "n_projections", "n_chains", "reference_samples"});
    auto& e = c.evaluation;
    if (s.contains("penalty_threshold")) e.penalty_threshold = as_double(s["penalty_threshold"], "penalty_threshold");
    if (s.contains("penalty_quantile")) e.penalty_quantile = as_double(s["penalty_quantile"], "penalty_quantile");
    if (s.contains("penalty_samples")) e.penalty_samples = static_cast<int>(as_int(s["penalty_samples"], "penalty_samples"));
    if (s.contains("penalty_seed")) e.penalty_seed = as_seed(s["penalty_seed"], "penalty_seed");
    if (s.contains("regression_penalty")) e.regression_penalty = as_double(s["regression_penalty"], "regression_penalty");
    if (s.contains("n_projections")) e.n_projections = static_cast<int>(as_int(s["n_projections"], "n_projections"));
    if (s.contains("n_chains")) e.n_chains = static_cast<int>(as_int(s["n_chains"], "n_chains"));
    if (s.contains("reference_samples")) e.reference_samples = static_cast<int>(as_int(s["reference_samples"], "reference_samples"));
  }

  if (root.contains("trajectory")) {
    const auto& s = root["trajectory"];
    allow_keys(s, "trajectory", {"n_chains", "n_projections", "embedding", "embed_dim", "embed_seed"});
    auto& t = c.trajectory;
    if (s.contains("n_chains")) t.n_chains = static_cast<int>(as_int(s["n_chains"], "trajectory.n_chains"));
    if (s.contains("n_projections")) t.n_projections = static_cast<int>(as_int(s["n_projections"], "trajectory.n_projections"));
    if (s.contains("embedding")) t.embedding = as_string(s["embedding"], "trajectory.embedding");
    if (s.contains("embed_dim")) t.embed_dim = static_cast<int>(as_int(s["embed_dim"], "embed_dim"));
    if (s.contains("embed_seed")) t.embed_seed = as_seed(s["embed_seed"], "embed_seed");
  }

  if (root.contains("sweep")) {
    const auto& s = root["sweep"];
    allow_keys(s, "sweep", {"axis", "values", "n_seeds"});
    if (s.contains("axis")) c.sweep.axis = as_string(s["axis"], "sweep.axis");
    if (s.contains("values")) {
      const Vec v = as_vector(s["values"], "sweep.values");
      c.sweep.values.assign(v.data(), v.data() + v.size());
    }
    if (s.contains("n_seeds")) c.sweep.n_seeds = static_cast<int>(as_int(s["n_seeds"], "sweep.n_seeds"));
    parse_sweep_axis(c.sweep.axis);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  return parse_config(load_toml_file(path));
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["schedule"] = {{"t_max", schedule.t_max}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}};
  json comps = json::array();
  for (const auto& c : components) {
    comps.push_back({{"weight", c.weight}, {"mean", vec_json(c.mean)}, {"cov", mat_json(c.covariance)}, {"label", c.label}});
  }
  j["component"] = comps;
  j["conditioning"] = cond.restricted() ? json{{"labels", *cond.allowed_labels()}} : json{{"labels", "all"}};
  j["backend"] = {{"kind", std::string(to_string(backend))}, {"n_substeps", n_substeps}};
  json dec = {{"kind", decoder.kind}};
  if (decoder.kind == "random") {
    dec["obs_dim"] = decoder.obs_dim;
    dec["seed"] = decoder.seed;
  }
  if (decoder.matrix) dec["matrix"] = mat_json(*decoder.matrix);
  j["decoder"] = dec;
  json exps = json::array();
  for (const auto& e : experts) {
    json x = {{"name", e.name}, {"kind", std::string(to_string(e.kind))}, {"weight", e.weight}, {"guide", e.guide},
              {"init", e.init},  {"seed", e.seed},  {"target", target_json(e.target)},
              {"held_out_seeds", e.held_out_seeds}, {"held_out_scale", e.held_out_scale}};
    if (e.kind == ExpertKind::kClassifier) {
      x["scale"] = e.scale;
      x["n_classes"] = e.n_classes;
    }
    if (e.kind == ExpertKind::kEmbedding) x["embed_dim"] = e.embed_dim;
    if (e.kind == ExpertKind::kDense) {
      x["n_patches"] = e.n_patches;
      x["n_classes"] = e.n_classes;
    }
    if (e.kind == ExpertKind::kRegressor) x["bias"] = e.bias;
    if (e.matrix) x["matrix"] = mat_json(*e.matrix);
    if (e.weights) x["weights"] = vec_json(*e.weights);
    exps.push_back(std::move(x));
  }
  j["expert"] = exps;
  j["guidance"] = {{"w", guidance.w},
                   {"tau", guidance.tau},
                   {"t_thre", guidance.t_thre},
                   {"n_steps", guidance.n_steps},
                   {"grad_mode", std::string(to_string(guidance.grad_mode))},
                   {"fd_step", guidance.fd_step},
                   {"eps_source", std::string(to_string(guidance.eps_source))},
                   {"seed", guidance.seed}};
  json ev = {{"penalty_quantile", evaluation.penalty_quantile},
             {"penalty_samples", evaluation.penalty_samples},
             {"penalty_seed", evaluation.penalty_seed},
             {"regression_penalty", evaluation.regression_penalty},
             {"n_projections", evaluation.n_projections},
             {"n_chains", evaluation.n_chains},
             {"reference_samples", evaluation.reference_samples}};
  if (evaluation.penalty_threshold) ev["penalty_threshold"] = *evaluation.penalty_threshold;
  j["evaluation"] = ev;
  j["trajectory"] = {{"n_chains", trajectory.n_chains},
                     {"n_projections", trajectory.n_projections},
                     {"embedding", trajectory.embedding},
                     {"embed_dim", trajectory.embed_dim},
                     {"embed_seed", trajectory.embed_seed}};
  j["sweep"] = {{"axis", sweep.axis}, {"values", sweep.values}, {"n_seeds", sweep.n_seeds}};
  return j;
}

GuidanceSetup Experiment::guided_setup() const {
  std::vector<std::string> names;
  for (const auto& e : experts) {
    if (e.settings.guide) names.push_back(e.settings.name);
  }
  return guided_setup(names);
}

GuidanceSetup Experiment::guided_setup(const std::vector<std::string>& names) const {
  std::vector<MultiExpert::Entry> entries;
  for (const auto& n : names) {
    const auto& e = expert(n);
    entries.push_back({e.model, e.settings.target, e.settings.weight, e.settings.name});
  }
  GuidanceSetup setup{backend, decoder, config.cond, nullptr};
  if (!entries.empty()) {
    setup.experts = std::make_shared<const MultiExpert>(std::move(entries));
  }
  return setup;
}

GuidanceSetup Experiment::unguided_setup(bool conditioned) const {
  return GuidanceSetup{backend, decoder, conditioned ? config.cond : Conditioning::unrestricted(), nullptr};
}

const BuiltExpert& Experiment::expert(const std::string& name) const {
  for (const auto& e : experts) {
    if (e.settings.name == name) return e;
  }
  throw ConfigError("no expert named '" + name + "'");
}

Mat Experiment::reference_batch() const {
  return oracle->sample(Conditioning::unrestricted(), chain_seed(config.seed, 0xEEF), config.evaluation.reference_samples);
}

Experiment build_experiment(ExperimentConfig config) {
  Experiment ex;
  const auto& ev = config.evaluation;
  if (config.n_substeps < 1) throw ConfigError("backend.n_substeps must be >= 1");
  if (ev.n_projections < 1 || ev.n_chains < 1 || ev.reference_samples < 1 || ev.penalty_samples < 1) {
    throw ConfigError("evaluation counts must be >= 1");
  }
  if (!(ev.penalty_quantile >= 0.0 && ev.penalty_quantile <= 1.0)) {
    throw ConfigError("evaluation.penalty_quantile must lie in [0, 1]");
  }
  if (config.trajectory.n_chains < 2 || config.trajectory.n_projections < 1) {
    throw ConfigError("trajectory needs n_chains >= 2 and n_projections >= 1");
  }
  if (config.sweep.n_seeds < 1) throw ConfigError("sweep.n_seeds must be >= 1");

  auto schedule = make_linear_schedule(config.schedule.t_max, config.schedule.beta_start, config.schedule.beta_end);
  config.guidance.validate(schedule);
  GaussianMixture mixture(config.components);
  ex.oracle = std::make_shared<const MixtureOracle>(std::move(mixture), std::move(schedule));
  ex.oracle->log_weights(config.cond);

  const int d = ex.oracle->dim();
  if (config.decoder.kind == "identity") {
    ex.decoder = Decoder::identity(d);
  } else if (config.decoder.kind == "random") {
    ex.decoder = Decoder::random(d, config.decoder.obs_dim, config.decoder.seed);
  } else {
    if (!config.decoder.matrix) throw ConfigError("decoder.kind = \"matrix\" needs decoder.matrix");
    if (config.decoder.matrix->cols() != d) throw ConfigError("decoder.matrix must have one column per latent dimension");
    ex.decoder = Decoder::linear(*config.decoder.matrix);
  }
  ex.backend = make_denoiser(config.backend, ex.oracle, config.n_substeps);

  ex.penalty_threshold = ev.penalty_threshold
                             ? *ev.penalty_threshold
                             : nll_percentile(*ex.oracle, ev.penalty_quantile, ev.penalty_samples, ev.penalty_seed);

  std::set<std::string> names;
  for (const auto& settings : config.experts) {
    if (!names.insert(settings.name).second) throw ConfigError("duplicate expert name '" + settings.name + "'");
    if (!(settings.weight >= 0.0) || !std::isfinite(settings.weight)) {
      throw ConfigError("expert '" + settings.name + "': weight must be finite and >= 0");
    }
    BuiltExpert b;
    b.settings = settings;
    b.model = make_expert(settings, ex.oracle->mixture(), ex.decoder.obs_dim());
    if (b.model->input_dim() != ex.decoder.obs_dim()) {
      throw ConfigError("expert '" + settings.name + "' input dimension " + std::to_string(b.model->input_dim()) +
                        " does not match the decoder output " + std::to_string(ex.decoder.obs_dim()));
    }
    try {
      b.model->check_target(settings.target);
    } catch (const ExpertError& e) {
      throw ConfigError("expert '" + settings.name + "': " + e.what());
    }
    for (auto seed : settings.held_out_seeds) {
      b.held_out.push_back(held_out_evaluator(*b.model, seed, settings.held_out_scale));
    }
    b.eval.penalty_threshold = ex.penalty_threshold;
    b.eval.penalty_value = default_penalty_value(settings.kind, ev.regression_penalty);
    b.eval.n_projections = ev.n_projections;
    b.eval.sw_seed = chain_seed(config.seed, 0x5E5);
    ex.experts.push_back(std::move(b));
  }
  if (!config.trajectory.embedding.empty()) {
    if (ex.expert(config.trajectory.embedding).settings.kind != ExpertKind::kEmbedding) {
      throw ConfigError("trajectory.embedding must name an embedding expert");
    }
  } else if (config.trajectory.embed_dim < 1) {
    throw ConfigError("trajectory.embed_dim must be >= 1");
  }
  ex.config = std::move(config);
  return ex;
}

}  // namespace expertgen
