#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "expertgen/config.hpp"
#include "expertgen/errors.hpp"
#include "expertgen/guidance.hpp"
#include "test_helpers.hpp"

using namespace expertgen;
using namespace testing;

namespace {

// L(x) = |x - c|^2, or a constant / NaN for the degenerate cases.
class QuadraticExpert final : public ExpertModel {
 public:
  enum Mode { kQuadratic, kConstant, kNan };
  QuadraticExpert(Vec c, Mode mode = kQuadratic) : c_(std::move(c)), mode_(mode) {}
  ExpertKind kind() const noexcept override { return ExpertKind::kRegressor; }
  int input_dim() const noexcept override { return static_cast<int>(c_.size()); }
  double loss(const Vec& x, const GuidanceTarget&) const override {
    if (mode_ == kNan) return std::numeric_limits<double>::quiet_NaN();
    if (mode_ == kConstant) return 3.0;
    return (x - c_).squaredNorm();
  }
  Vec grad(const Vec& x, const GuidanceTarget&) const override {
    if (mode_ == kConstant) return Vec::Zero(x.size());
    return 2.0 * (x - c_);
  }
  double evaluate(const Vec& x, const GuidanceTarget& t) const override { return loss(x, t); }
  std::unique_ptr<ExpertModel> perturbed_copy(std::uint64_t, double) const override {
    return std::make_unique<QuadraticExpert>(c_, mode_);
  }
  void check_target(const GuidanceTarget&) const override {}

 private:
  Vec c_;
  Mode mode_;
};

GuidanceSetup setup_with(std::shared_ptr<const MixtureOracle> o, BackendKind kind,
                         std::shared_ptr<const ExpertModel> expert, GuidanceTarget target = AgeTarget{0.0}) {
  GuidanceSetup s{make_denoiser(kind, o), Decoder::identity(o->dim()), {}, nullptr};
  if (expert) s.experts = std::make_shared<MultiExpert>(std::vector<MultiExpert::Entry>{{expert, target, 1.0, "e"}});
  return s;
}

bool same_batch(const BatchResult& a, const BatchResult& b) {
  if (a.latents != b.latents || a.observations != b.observations || a.traces.size() != b.traces.size()) return false;
  for (std::size_t c = 0; c < a.traces.size(); ++c) {
    const auto& x = a.traces[c].steps;
    const auto& y = b.traces[c].steps;
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].z_t != y[i].z_t || x[i].x0_hat != y[i].x0_hat || x[i].loss != y[i].loss ||
          x[i].grad_norm != y[i].grad_norm || x[i].applied_weight != y[i].applied_weight) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("mode names and config validation") {
  CHECK(parse_grad_mode("zt_fd") == GradMode::kZtFiniteDiff);
  CHECK(parse_grad_mode("x0_analytic") == GradMode::kX0Analytic);
  CHECK(parse_eps_source(to_string(EpsSource::kBackend)) == EpsSource::kBackend);
  CHECK_THROWS_AS(parse_grad_mode("autodiff"), ParameterError);
  const auto s = default_schedule();
  GuidanceConfig c;
  CHECK_NOTHROW(c.validate(s));
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(s), ParameterError);
  c = GuidanceConfig{};
  c.t_thre = 1001;
  CHECK_THROWS_AS(c.validate(s), ParameterError);
  c = GuidanceConfig{};
  c.w = -1.0;
  CHECK_THROWS_AS(c.validate(s), ParameterError);
  c = GuidanceConfig{};
  c.n_steps = 0;
  CHECK_THROWS_AS(c.validate(s), ParameterError);
}

TEST_CASE("guided epsilon by hand") {
  const NoiseSchedule s({1.0, 0.5});
  const Vec eps = Vec::Zero(2);
  const Vec g = (Vec(2) << 1e-3, -2e-4).finished();
  const Vec out = guided_epsilon(eps, g, 1, 200.0, 5e-4, s);
  // eps_bar = eps + w sqrt(1 - ab) clip(g): positive sign so that x0 moves down the loss.
  CHECK(std::abs(out(0) - 0.070711) < 1e-6);
  CHECK(std::abs(out(1) - -0.028284) < 1e-6);
  const Vec e = (Vec(2) << 0.3, -0.7).finished();
  CHECK(guided_epsilon(e, g, 1, 0.0, 5e-4, s) == e);
  CHECK(guided_epsilon(e, Vec::Zero(2), 1, 200.0, 5e-4, s) == e);
}

TEST_CASE("warmup gate") {
  GuidanceConfig c;
  c.w = 200.0;
  c.t_thre = 800;
  CHECK(warmup_weight(900, c) == 0.0);
  CHECK(warmup_weight(801, c) == 0.0);
  CHECK(warmup_weight(800, c) == 200.0);
  CHECK(warmup_weight(1, c) == 200.0);
  c.t_thre = 1000;
  const auto grid = make_ddim_grid(default_schedule(), 16);
  for (int t : grid.steps()) CHECK(warmup_weight(t, c) == 200.0);
}

TEST_CASE("chain seeds") {
  CHECK(chain_seed(1, 0) == chain_seed(1, 0));
  CHECK(chain_seed(1, 0) != chain_seed(1, 1));
  CHECK(chain_seed(1, 0) != chain_seed(2, 0));
}

TEST_CASE("constant loss gives a zero gradient in both modes") {
  const auto o = make_oracle(fixed_pair());
  const auto s = setup_with(o, BackendKind::kConsistency, std::make_shared<QuadraticExpert>(Vec::Zero(2), QuadraticExpert::kConstant));
  GuidanceConfig c;
  for (GradMode m : {GradMode::kZtFiniteDiff, GradMode::kX0Analytic}) {
    c.grad_mode = m;
    CHECK(expert_gradient(s, (Vec(2) << 0.2, 0.4).finished(), 500, c).norm() == 0.0);
  }
}

TEST_CASE("chain rule through a standard normal posterior mean") {
  const auto o = standard_normal(3);
  const Vec c = (Vec(3) << 0.5, -1.0, 0.25).finished();
  const auto expert = std::make_shared<QuadraticExpert>(c);
  const auto s = setup_with(o, BackendKind::kPosteriorMean, expert);
  GuidanceConfig cfg;
  std::mt19937_64 rng(3);
  for (int t : {1, 5, 100, 600, 1000}) {
    const Vec z = gaussian(3, 1.0, rng);
    const double r = o->schedule().sqrt_alpha_bar(t);
    const Vec expected = r * expert->grad(r * z, AgeTarget{});
    const Vec got = expert_gradient(s, z, t, cfg);
    CHECK((got - expected).norm() <= 1e-6 * std::max(expected.norm(), 1.0));
  }
}

TEST_CASE("finite-difference gradient against the analytic composite on a correlated gaussian") {
  std::mt19937_64 rng(21);
  const int d = 4;
  const Mat sigma = random_spd(d, rng);
  const Vec mu = gaussian(d, 1.0, rng);
  const auto o = make_oracle({{1.0, mu, sigma, 0}});
  const Vec c = gaussian(d, 1.0, rng);
  const auto expert = std::make_shared<QuadraticExpert>(c);
  const auto s = setup_with(o, BackendKind::kPosteriorMean, expert);
  GuidanceConfig cfg;
  for (int t : {10, 200, 500, 800, 1000}) {
    const double ab = o->schedule().alpha_bar(t);
    const Mat P = (ab * sigma + (1.0 - ab) * Mat::Identity(d, d)).inverse();
    const Mat J = std::sqrt(ab) * sigma * P;
    const Vec z = gaussian(d, 1.0, rng);
    const Vec x0 = mu + J * (z - std::sqrt(ab) * mu);
    CHECK((o->posterior_mean(z, t, Conditioning::unrestricted()) - x0).norm() < 1e-10);
    const Vec expected = J.transpose() * 2.0 * (x0 - c);
    const Vec got = expert_gradient(s, z, t, cfg);
    CHECK((got - expected).norm() <= 1e-4 * expected.norm());
    cfg.grad_mode = GradMode::kX0Analytic;
    CHECK((expert_gradient(s, z, t, cfg) - 2.0 * (x0 - c)).norm() <= 1e-12 * std::max(1.0, x0.norm()));
    cfg.grad_mode = GradMode::kZtFiniteDiff;
  }
}

TEST_CASE("a small guided update does not raise the loss at the re-predicted x0") {
  std::mt19937_64 rng(4);
  const auto o = make_oracle(random_mixture(3, 3, rng));
  auto cls = std::make_shared<ClassifierExpert>(ClassifierExpert::random(3, 3, 9));
  const auto s = setup_with(o, BackendKind::kPosteriorMean, cls, ClassTarget{1});
  GuidanceConfig cfg;
  cfg.grad_mode = GradMode::kX0Analytic;
  cfg.w = 1.0;
  double worst = -1.0;
  for (int i = 0; i < 100; ++i) {
    const int t = 1 + static_cast<int>(rng() % 1000);
    const Vec z = gaussian(3, 1.0, rng);
    const Vec x0 = s.backend->predict_x0(z, t, s.cond);
    const Vec eps = predict_eps(*s.backend, z, t, s.cond);
    const Vec g = expert_gradient(s, z, t, cfg);
    const Vec bar = guided_epsilon(eps, g, t, cfg.w, cfg.tau, o->schedule());
    const Vec x0_new = x0_from_eps(o->schedule(), z, t, bar);
    worst = std::max(worst, cls->loss(x0_new, ClassTarget{1}) - cls->loss(x0, ClassTarget{1}));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("trace invariants") {
  const Experiment ex = build_experiment(load_config(EXPERTGEN_CONFIG_DIR "/benchmark2d.toml"));
  const auto setup = ex.guided_setup();
  GuidanceConfig cfg = ex.config.guidance;
  const auto a = sample_guided_batch(setup, cfg, 8, true);
  const auto b = sample_guided_batch(setup, cfg, 8, true);
  CHECK(same_batch(a, b));
  int guided = 0;
  for (const auto& tr : a.traces) {
    REQUIRE(tr.steps.size() == 16);
    for (const auto& st : tr.steps) {
      CHECK(st.max_abs_clipped <= cfg.tau);
      CHECK(st.applied_weight == (st.t > cfg.t_thre ? 0.0 : cfg.w));
      guided += st.applied_weight > 0 ? 1 : 0;
    }
    CHECK(tr.steps.back().s == 0);
  }
  CHECK(guided == 8 * 13);
  CHECK(a.observations.row(3) == sample_guided(setup, cfg, 3).observation.transpose());
}

TEST_CASE("degenerate guidance reproduces unguided sampling bit for bit") {
  const Experiment ex = build_experiment(load_config(EXPERTGEN_CONFIG_DIR "/attribute16d.toml"));
  const auto plain = sample_guided_batch(ex.unguided_setup(true), ex.config.guidance, 16, true);
  GuidanceConfig off = ex.config.guidance;
  off.w = 0.0;
  CHECK(sample_guided_batch(ex.guided_setup(), off, 16).latents == plain.latents);
  off = ex.config.guidance;
  off.t_thre = 0;
  CHECK(sample_guided_batch(ex.guided_setup(), off, 16).latents == plain.latents);
  off.grad_mode = GradMode::kX0Analytic;
  CHECK(sample_guided_batch(ex.guided_setup(), off, 16).observations == plain.observations);
  CHECK(sample_guided_batch(ex.guided_setup(), ex.config.guidance, 16).latents != plain.latents);
}

TEST_CASE("parallel batch equals serial batch") {
  const Experiment ex = build_experiment(load_config(EXPERTGEN_CONFIG_DIR "/attribute16d.toml"));
  const auto setup = ex.guided_setup();
  const auto p = sample_guided_batch(setup, ex.config.guidance, 12, true, 5);
  const auto s = sample_guided_batch_serial(setup, ex.config.guidance, 12, true, 5);
  CHECK(same_batch(p, s));
  CHECK(p.latents.row(0) == sample_guided(setup, ex.config.guidance, 5).latent.transpose());
}

TEST_CASE("non-finite loss aborts with the step") {
  const auto o = make_oracle(fixed_pair());
  const auto s = setup_with(o, BackendKind::kPosteriorMean, std::make_shared<QuadraticExpert>(Vec::Zero(2), QuadraticExpert::kNan));
  GuidanceConfig cfg;
  try {
    sample_guided(s, cfg, 0);
    FAIL("expected a GuidanceError");
  } catch (const GuidanceError& e) {
    CHECK(e.timestep() == 800);
  }
  CHECK_THROWS_AS(sample_guided_batch(s, cfg, 3), GuidanceError);
}

TEST_CASE("classifier guidance toward label 2 on the four-component benchmark") {
  const Experiment ex = build_experiment(load_config(EXPERTGEN_CONFIG_DIR "/attribute16d.toml"));
  const auto setup = ex.guided_setup({"attribute"});
  const auto batch = sample_guided_batch(setup, ex.config.guidance, 200);
  const auto& cls = static_cast<const ClassifierExpert&>(*ex.expert("attribute").model);
  int hits = 0;
  for (Eigen::Index i = 0; i < 200; ++i) hits += cls.predict(batch.observations.row(i).transpose()) == 2 ? 1 : 0;
  MESSAGE("argmax = 2 for " << hits << " of 200");
  CHECK(hits >= 180);
}
