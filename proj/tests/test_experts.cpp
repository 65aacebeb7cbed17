#include <doctest.h>

#include <cmath>
#include <random>

#include "expertgen/config.hpp"
#include "expertgen/errors.hpp"
#include "expertgen/experts.hpp"
#include "expertgen/selfcheck.hpp"
#include "test_helpers.hpp"

using namespace expertgen;
using namespace testing;

namespace {

Vec unit(Vec v) { return v / v.norm(); }

template <class Expert, class Target>
double worst_fd_error(const Expert& e, const Target& target, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) worst = std::max(worst, gradient_error(e, target, gaussian(d, 1.0, rng)));
  return worst;
}

}  // namespace

TEST_CASE("expert kind names") {
  for (auto k : {ExpertKind::kEmbedding, ExpertKind::kClassifier, ExpertKind::kRegressor, ExpertKind::kDense}) {
    CHECK(parse_expert_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_expert_kind("segmenter"), ConfigError);
}

TEST_CASE("embedding expert") {
  Mat W = Mat::Identity(3, 3);
  const EmbeddingExpert e(W);
  const EmbeddingTarget t{(Vec(3) << 1.0, 0.0, 0.0).finished()};
  const Vec aligned = (Vec(3) << 2.5, 0.0, 0.0).finished();
  CHECK(e.loss(aligned, t) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(e.evaluate(aligned, t) == doctest::Approx(1.0));
  CHECK(e.loss((Vec(3) << 0.0, 1.0, -2.0).finished(), t) == doctest::Approx(1.0));
  CHECK_THROWS_AS(e.embed(Vec::Zero(3)), ExpertError);
  CHECK_THROWS_AS(e.loss(aligned, ClassTarget{0}), ExpertError);
  CHECK_THROWS_AS(e.loss(aligned, EmbeddingTarget{(Vec(3) << 1.0, 1.0, 0.0).finished()}), ExpertError);
  CHECK_THROWS_AS(e.loss(Vec::Zero(4), t), ExpertError);

  std::mt19937_64 rng(1);
  const auto r = EmbeddingExpert::random(6, 4, 3);
  CHECK(worst_fd_error(r, EmbeddingTarget{unit(gaussian(6, 1.0, rng))}, 4, 10) <= 1e-5);
}

TEST_CASE("classifier expert") {
  Mat V = Mat::Zero(3, 2);
  V(1, 0) = 20.0;
  const ClassifierExpert c(V);
  const Vec x = (Vec(2) << 1.0, 0.0).finished();
  CHECK(c.loss(x, ClassTarget{1}) <= 1e-8);
  CHECK(c.evaluate(x, ClassTarget{1}) == 1.0);
  CHECK(c.evaluate(x, ClassTarget{0}) == 0.0);
  CHECK(c.loss(Vec::Zero(2), ClassTarget{2}) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK_THROWS_AS(c.loss(x, ClassTarget{3}), ExpertError);
  CHECK_THROWS_AS(c.loss(x, AgeTarget{1.0}), ExpertError);
  CHECK(c.probabilities(Vec::Zero(2)).sum() == doctest::Approx(1.0));

  const auto r = ClassifierExpert::random(5, 4, 4);
  CHECK(worst_fd_error(r, ClassTarget{3}, 4, 11) <= 1e-5);
}

TEST_CASE("classifier decisions ignore a common logit shift") {
  // Adding a constant row offset c.x to every logit leaves argmax and loss unchanged.
  const auto r = ClassifierExpert::random(4, 3, 5);
  Mat shifted = r.logits();
  const Vec c = (Vec(3) << 0.7, -2.0, 1.3).finished();
  for (Eigen::Index k = 0; k < shifted.rows(); ++k) shifted.row(k) += c.transpose();
  const ClassifierExpert s(shifted);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const Vec x = gaussian(3, 1.0, rng);
    CHECK(s.predict(x) == r.predict(x));
    CHECK(s.evaluate(x, ClassTarget{2}) == r.evaluate(x, ClassTarget{2}));
    CHECK(s.loss(x, ClassTarget{2}) == doctest::Approx(r.loss(x, ClassTarget{2})).epsilon(1e-10));
  }
}

TEST_CASE("label-tied classifier") {
  std::vector<GaussianComponent> comps = {
      {0.25, (Vec(2) << 2.0, 0.0).finished(), Mat::Identity(2, 2), 1},
      {0.25, (Vec(2) << 4.0, 0.0).finished(), Mat::Identity(2, 2), 1},
      {0.5, (Vec(2) << -3.0, 0.0).finished(), Mat::Identity(2, 2), 0},
  };
  const auto c = ClassifierExpert::from_mixture(GaussianMixture(comps), 2.0);
  CHECK(c.n_classes() == 2);
  CHECK(c.logits()(1, 0) == doctest::Approx(6.0));
  CHECK(c.logits()(0, 0) == doctest::Approx(-6.0));
  comps[2].label = 2;
  CHECK_THROWS_AS(ClassifierExpert::from_mixture(GaussianMixture(comps), 1.0), ExpertError);
}

TEST_CASE("regressor expert") {
  const RegressorExpert r((Vec(2) << 0.5, -1.5).finished(), 0.25);
  const Vec x = (Vec(2) << 1.0, 1.0).finished();
  const double a = r.predict(x);
  CHECK(a == doctest::Approx(-0.75));
  CHECK(r.loss(x, AgeTarget{a}) == 0.0);
  CHECK(r.grad(x, AgeTarget{a}).norm() == 0.0);
  CHECK(r.loss(x, AgeTarget{a - 1.0}) == doctest::Approx(1.0));
  CHECK(r.grad(x, AgeTarget{a - 1.0}) == r.weights());
  CHECK(r.grad(x, AgeTarget{a + 1.0}) == -r.weights());
  CHECK_FALSE(r.higher_is_better());

  const auto rr = RegressorExpert::random(5, 6, 0.3);
  std::mt19937_64 rng(12);
  double worst = 0.0;
  int n = 0;
  while (n < 100) {
    const Vec p = gaussian(5, 1.0, rng);
    if (std::abs(rr.predict(p) - 0.1) < 1e-3) continue;
    worst = std::max(worst, gradient_error(rr, AgeTarget{0.1}, p));
    ++n;
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("dense expert") {
  CHECK_THROWS_AS(DenseExpert::random(3, 2, 8, 1), ConfigError);
  const auto d = DenseExpert::random(2, 3, 6, 7);
  CHECK(d.patch_size() == 3);
  CHECK(worst_fd_error(d, DenseTarget{{2, 0}}, 6, 13) <= 1e-5);
  CHECK_THROWS_AS(d.loss(Vec::Zero(6), DenseTarget{{1}}), ExpertError);

  std::vector<Mat> strong(2, Mat::Zero(2, 2));
  strong[0](1, 0) = 30.0;
  strong[1](0, 1) = 30.0;
  const DenseExpert s(strong);
  const Vec x = (Vec(4) << 1.0, 0.0, 0.0, 1.0).finished();
  CHECK(s.loss(x, DenseTarget{{1, 0}}) < 1e-10);
  CHECK(s.evaluate(x, DenseTarget{{1, 0}}) == 1.0);
  CHECK(s.evaluate(x, DenseTarget{{1, 1}}) == 0.5);

  const auto c = ClassifierExpert::random(4, 5, 8);
  const DenseExpert one({c.logits()});
  std::mt19937_64 rng(14);
  for (int i = 0; i < 20; ++i) {
    const Vec p = gaussian(5, 1.0, rng);
    CHECK(one.loss(p, DenseTarget{{2}}) == c.loss(p, ClassTarget{2}));
    CHECK(one.grad(p, DenseTarget{{2}}) == c.grad(p, ClassTarget{2}));
    CHECK(one.evaluate(p, DenseTarget{{2}}) == c.evaluate(p, ClassTarget{2}));
  }
}

TEST_CASE("multi expert") {
  std::mt19937_64 rng(15);
  auto emb = std::make_shared<EmbeddingExpert>(EmbeddingExpert::random(5, 4, 1));
  auto cls = std::make_shared<ClassifierExpert>(ClassifierExpert::random(3, 4, 2));
  const EmbeddingTarget et{unit(gaussian(5, 1.0, rng))};

  const MultiExpert single({{cls, ClassTarget{1}, 1.0, "c"}});
  const MultiExpert dup({{cls, ClassTarget{1}, 0.3, "a"}, {cls, ClassTarget{1}, 1.7, "b"}});
  const MultiExpert pair({{emb, et, 0.8, "e"}, {cls, ClassTarget{0}, 1.5, "c"}});
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec x = gaussian(4, 1.0, rng);
    CHECK(single.loss(x) == cls->loss(x, ClassTarget{1}));
    CHECK(single.grad(x) == cls->grad(x, ClassTarget{1}));
    CHECK((dup.grad(x) - 2.0 * cls->grad(x, ClassTarget{1})).norm() <= 1e-14);
    const Vec g = pair.grad(x);
    CHECK(g == 0.8 * emb->grad(x, et) + 1.5 * cls->grad(x, ClassTarget{0}));
    Vec fd(4);
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-5 * (1 + std::abs(x(j)));
      Vec up = x, dn = x;
      up(j) += h;
      dn(j) -= h;
      fd(j) = (pair.loss(up) - pair.loss(dn)) / (2 * h);
    }
    worst = std::max(worst, (fd - g).cwiseAbs().maxCoeff() / std::max(g.cwiseAbs().maxCoeff(), 1e-3));
  }
  CHECK(worst <= 1e-5);
  CHECK_THROWS(MultiExpert({}));
  auto wide = std::make_shared<ClassifierExpert>(ClassifierExpert::random(3, 5, 2));
  CHECK_THROWS(MultiExpert({{cls, ClassTarget{1}, 1.0, "a"}, {wide, ClassTarget{1}, 1.0, "b"}}));
}

TEST_CASE("held-out evaluators") {
  const auto c = ClassifierExpert::random(3, 4, 2);
  const auto a = held_out_evaluator(c, 101);
  const auto b = held_out_evaluator(c, 101);
  const auto other = held_out_evaluator(c, 102);
  const auto& la = static_cast<const ClassifierExpert&>(*a).logits();
  CHECK(la == static_cast<const ClassifierExpert&>(*b).logits());
  CHECK(la != static_cast<const ClassifierExpert&>(*other).logits());
  CHECK(la != c.logits());
  CHECK(a->kind() == ExpertKind::kClassifier);
  const auto same = held_out_evaluator(c, 5, 0.0);
  CHECK(static_cast<const ClassifierExpert&>(*same).logits() == c.logits());
}

TEST_CASE("held-out classifier agrees with the guide on true samples") {
  // Monte Carlo baseline recorded before the build: mean 0.943, range [0.896, 0.957].
  const Experiment ex = build_experiment(load_config(EXPERTGEN_CONFIG_DIR "/attribute16d.toml"));
  const auto& attr = ex.expert("attribute");
  const Mat x = ex.oracle->sample(Conditioning::unrestricted(), 77, 4000);
  const auto& guide = static_cast<const ClassifierExpert&>(*attr.model);
  REQUIRE(attr.held_out.size() == 2);
  for (const auto& h : attr.held_out) {
    const auto& ho = static_cast<const ClassifierExpert&>(*h);
    int agree = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vec row = x.row(i).transpose();
      agree += guide.predict(row) == ho.predict(row) ? 1 : 0;
    }
    const double rate = agree / static_cast<double>(x.rows());
    CHECK(rate >= 0.88);
    CHECK(rate <= 0.97);
  }
}
