#include <doctest.h>

#include <cmath>
#include <random>

#include "expertgen/denoiser.hpp"
#include "expertgen/errors.hpp"
#include "expertgen/evalharness.hpp"
#include "expertgen/guidance.hpp"
#include "test_helpers.hpp"

using namespace expertgen;
using namespace testing;

namespace {

std::shared_ptr<const MixtureOracle> benchmark_pair() {
  const Mat cov = 0.25 * Mat::Identity(2, 2);
  return make_oracle({{0.5, (Vec(2) << 1.0, -2.0).finished(), cov, 0}, {0.5, (Vec(2) << 1.0, 2.0).finished(), cov, 1}});
}

}  // namespace

TEST_CASE("backend names") {
  CHECK(parse_backend_kind("posterior") == BackendKind::kPosteriorMean);
  CHECK(parse_backend_kind("consistency") == BackendKind::kConsistency);
  CHECK(parse_backend_kind(to_string(BackendKind::kConsistency)) == BackendKind::kConsistency);
  CHECK_THROWS_AS(parse_backend_kind("lcm"), ParameterError);
  CHECK_THROWS_AS(ConsistencyDenoiser(standard_normal(2), 0), ParameterError);
}

TEST_CASE("ddim step by hand") {
  const NoiseSchedule s({1.0, 0.81, 0.25});
  const Vec z = (Vec(2) << 1.0, 0.0).finished();
  const Vec eps = (Vec(2) << 0.5, 0.5).finished();
  const Vec x0 = x0_from_eps(s, z, 2, eps);
  CHECK(x0(0) == doctest::Approx(1.1340).epsilon(1e-4));
  CHECK(x0(1) == doctest::Approx(-0.8660).epsilon(1e-4));
  const Vec out = ddim_step(z, 2, 1, eps, s);
  CHECK(std::abs(out(0) - 1.2386) < 1e-3);
  CHECK(std::abs(out(1) - -0.5615) < 1e-3);
  CHECK((ddim_step(z, 2, 0, eps, s) - x0).norm() < 1e-15);
  CHECK((ddim_step(z, 2, 1, Vec::Zero(2), s) - std::sqrt(0.81 / 0.25) * z).norm() < 1e-15);
  CHECK_THROWS_AS(ddim_step(z, 1, 1, eps, s), ParameterError);
  CHECK_THROWS_AS(ddim_step(z, 1, 2, eps, s), ParameterError);
  CHECK_THROWS_AS(ddim_step(z, 2, 1, Vec::Zero(3), s), ParameterError);
}

TEST_CASE("eps and x0 conversions") {
  const auto sched = default_schedule();
  std::mt19937_64 rng(5);
  for (int t : {1, 10, 500, 1000}) {
    const Vec z = gaussian(3, 1.0, rng);
    CHECK(eps_from_x0(sched, z, t, z / sched.sqrt_alpha_bar(t)).norm() < 1e-12);
    const Vec x0 = gaussian(3, 1.0, rng);
    const Vec eps = eps_from_x0(sched, z, t, x0);
    CHECK((sched.sqrt_alpha_bar(t) * x0 + sched.sqrt_one_minus_alpha_bar(t) * eps - z).norm() < 1e-12);
  }
  CHECK_THROWS_AS(eps_from_x0(sched, Vec::Zero(2), 0, Vec::Zero(2)), DomainError);
  const auto o = standard_normal(2);
  CHECK_THROWS_AS(predict_eps(PosteriorMeanDenoiser(o), Vec::Zero(2), 0, Conditioning::unrestricted()), DomainError);
}

TEST_CASE("posterior backend on a standard normal") {
  const auto o = standard_normal(2);
  const PosteriorMeanDenoiser pm(o);
  const auto& s = o->schedule();
  std::mt19937_64 rng(2);
  for (int t : {1, 300, 900, 1000}) {
    const Vec z = gaussian(2, 1.0, rng);
    CHECK((pm.predict_x0(z, t, Conditioning::unrestricted()) - s.sqrt_alpha_bar(t) * z).norm() < 1e-12);
    CHECK((predict_eps(pm, z, t, Conditioning::unrestricted()) - s.sqrt_one_minus_alpha_bar(t) * z).norm() < 1e-12);
  }
  const Vec z = gaussian(2, 1.0, rng);
  CHECK(pm.predict_x0(z, 0, Conditioning::unrestricted()) == z);
  ConsistencyDenoiser cd(o);
  CHECK(cd.predict_x0(z, 0, Conditioning::unrestricted()) == z);
}

TEST_CASE("posterior backend delegates to the oracle") {
  const auto o = make_oracle(fixed_pair());
  const PosteriorMeanDenoiser pm(o);
  const Vec z = (Vec(2) << 0.3, -1.1).finished();
  CHECK(pm.predict_x0(z, 420, Conditioning::unrestricted()) == o->posterior_mean(z, 420, Conditioning::unrestricted()));
}

TEST_CASE("consistency endpoint on unit gaussian data is the product of substep rotations") {
  // Each substep maps z to cos(theta_t - theta_s) z with theta = acos(sqrt(ab)).
  const auto o = standard_normal(3);
  const ConsistencyDenoiser cd(o, 50);
  const auto& s = o->schedule();
  std::mt19937_64 rng(8);
  double worst_shrink = 0.0;
  for (int i = 0; i < 200; ++i) {
    const int t = 1 + static_cast<int>(rng() % 1000);
    const Vec z = gaussian(3, 1.0, rng);
    const auto path = make_descent_path(t, 50);
    double factor = 1.0;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      factor *= std::cos(std::acos(s.sqrt_alpha_bar(path[k + 1])) - std::acos(s.sqrt_alpha_bar(path[k])));
    }
    const Vec end = cd.predict_x0(z, t, Conditioning::unrestricted());
    CHECK((end - factor * z).norm() <= 1e-12 * z.norm());
    if (t <= 500) worst_shrink = std::max(worst_shrink, (end - z).norm() / z.norm());
  }
  CHECK(worst_shrink <= 0.02);
  // From t_max the shrinkage is about 3.6%; no 50-step grid gets below 1 - cos(theta_T / 50)^50.
  const Vec z = Vec::Ones(3);
  const double full = (cd.predict_x0(z, 1000, Conditioning::unrestricted()) - z).norm() / z.norm();
  CHECK(full == doctest::Approx(0.036449016282233515).epsilon(1e-6));
}

TEST_CASE("consistency endpoints land on a component") {
  const Mat cov = 0.1 * Mat::Identity(2, 2);
  const Vec m = (Vec(2) << 4.0, 0.0).finished();
  const auto o = make_oracle({{0.5, m, cov, 0}, {0.5, -m, cov, 1}});
  const ConsistencyDenoiser cd(o);
  const int t = 900;
  const auto& s = o->schedule();
  const Mat x0 = o->sample(Conditioning::unrestricted(), 17, 1000);
  std::mt19937_64 rng(18);
  int inside = 0;
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const Vec zt = s.sqrt_alpha_bar(t) * x0.row(i).transpose() + s.sqrt_one_minus_alpha_bar(t) * gaussian(2, 1.0, rng);
    const Vec end = cd.predict_x0(zt, t, Conditioning::unrestricted());
    const double r = std::min((end - m).norm(), (end + m).norm()) / std::sqrt(0.1);
    inside += r <= 3.0 ? 1 : 0;
  }
  CHECK(inside >= 990);
}

TEST_CASE("round trip for both backends at every grid step") {
  const auto o = make_oracle(fixed_pair());
  const auto grid = make_ddim_grid(o->schedule(), 16);
  std::mt19937_64 rng(4);
  for (BackendKind kind : {BackendKind::kPosteriorMean, BackendKind::kConsistency}) {
    const auto b = make_denoiser(kind, o);
    for (int t : grid.steps()) {
      const Vec z = gaussian(2, 1.0, rng);
      const Vec x0 = b->predict_x0(z, t, Conditioning::unrestricted());
      const Vec eps = predict_eps(*b, z, t, Conditioning::unrestricted());
      const auto& s = o->schedule();
      CHECK((s.sqrt_alpha_bar(t) * x0 + s.sqrt_one_minus_alpha_bar(t) * eps - z).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("consistency predictions agree along one trajectory") {
  const auto o = benchmark_pair();
  const PosteriorMeanDenoiser pm(o);
  const ConsistencyDenoiser cd(o);
  const auto path = make_descent_path(1000, 50);
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int chain = 0; chain < 20; ++chain) {
    Vec z = gaussian(2, 1.0, rng);
    const Vec first = cd.predict_x0(z, path.front(), Conditioning::unrestricted());
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      const int t = path[i];
      const int s = path[i + 1];
      const Vec f_t = cd.predict_x0(z, t, Conditioning::unrestricted());
      z = ddim_step(z, t, s, predict_eps(pm, z, t, Conditioning::unrestricted()), o->schedule());
      const Vec f_s = cd.predict_x0(z, s, Conditioning::unrestricted());
      worst = std::max(worst, (f_t - f_s).norm() / f_t.norm());
      worst = std::max(worst, (first - f_s).norm() / first.norm());
    }
  }
  CHECK(worst <= 0.05);
}

TEST_CASE("single step with the consistency backend matches the data distribution") {
  const auto o = benchmark_pair();
  GuidanceSetup setup{make_denoiser(BackendKind::kConsistency, o), Decoder::identity(2), {}, nullptr};
  GuidanceConfig cfg;
  cfg.n_steps = 1;
  cfg.seed = 31;
  cfg.eps_source = EpsSource::kBackend;
  const int n = 1000;
  const Mat gen = sample_guided_batch(setup, cfg, n).latents;
  const Mat a = o->sample(Conditioning::unrestricted(), 32, n);
  const Mat b = o->sample(Conditioning::unrestricted(), 33, n);
  const double baseline = sliced_wasserstein(a, b, 128, 1);
  CHECK(sliced_wasserstein(gen, a, 128, 1) <= 3.0 * baseline);
}

TEST_CASE("decoders") {
  const Vec z = (Vec(3) << 0.5, -1.0, 2.0).finished();
  const Decoder id = Decoder::identity(3);
  CHECK(id.decode(z) == z);
  CHECK(id.pull_back(z) == z);
  const Decoder r = Decoder::random(3, 5, 9);
  CHECK(r.obs_dim() == 5);
  CHECK(r.decode(Vec::Zero(3)).norm() == 0.0);
  CHECK((r.decode(z) - r.matrix() * z).norm() < 1e-12);
  const Vec g = (Vec(5) << 1, 2, 3, 4, 5).finished();
  CHECK((r.pull_back(g) - r.matrix().transpose() * g).norm() < 1e-12);
  CHECK(Decoder::random(3, 5, 9).matrix() == r.matrix());
  CHECK_THROWS_AS(Decoder::random(4, 3, 1), ParameterError);
  Mat rank_deficient = Mat::Zero(3, 2);
  rank_deficient(0, 0) = 1.0;
  rank_deficient(1, 0) = 1.0;
  CHECK_THROWS_AS(Decoder::linear(rank_deficient), ParameterError);
  CHECK_THROWS_AS(id.decode(Vec::Zero(2)), ParameterError);
}
