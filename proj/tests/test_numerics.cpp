#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sfada/numerics.hpp"
#include "sfada/rng.hpp"

using namespace sfada;

namespace {

Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

ProbVector random_simplex(Rng& rng, int c) {
  Vec z(c);
  for (int k = 0; k < c; ++k) z[k] = rng.uniform(-3.0, 3.0);
  return softmax(z, 1.0);
}

}  // namespace

TEST_CASE("softmax matches analytic and oracle values", "[numerics]") {
  SECTION("symmetry") {
    const ProbVector p = softmax(make_vec({0.0, 0.0, 0.0}), 1.0);
    for (int k = 0; k < 3; ++k) REQUIRE(p[k] == Catch::Approx(1.0 / 3.0).margin(1e-15));
  }
  SECTION("hard-label limit") {
    const ProbVector p = softmax(make_vec({1.0, 0.0}), 1e-8);
    REQUIRE(std::abs(p[0] - 1.0) < 1e-12);
    REQUIRE(std::abs(p[1]) < 1e-12);
  }
  SECTION("high-precision reference") {
    // Frozen from a 40-digit evaluation of exp(z_k) / sum exp(z_i).
    const ProbVector p = softmax(make_vec({1.0, 2.0, 3.0}), 1.0);
    REQUIRE(p[0] == Catch::Approx(0.090030573170380457998).epsilon(1e-14));
    REQUIRE(p[1] == Catch::Approx(0.24472847105479765247).epsilon(1e-14));
    REQUIRE(p[2] == Catch::Approx(0.66524095577482188953).epsilon(1e-14));
  }
  SECTION("rejects non-positive temperature") {
    REQUIRE_THROWS_AS(softmax(make_vec({1.0, 2.0}), 0.0), InvalidParameterError);
    REQUIRE_THROWS_AS(softmax(make_vec({1.0, 2.0}), -1.0), InvalidParameterError);
  }
  SECTION("no overflow at extreme logit/tau ratios") {
    const ProbVector p = softmax(make_vec({1e4, -1e4, 0.0}), 1.0);
    REQUIRE(all_finite(p.vec()));
    REQUIRE(p[0] == Catch::Approx(1.0));
  }
}

TEST_CASE("softmax invariants hold on random draws", "[numerics][property]") {
  Rng rng(20240811);
  for (int trial = 0; trial < 500; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_int(6));
    Vec z(c);
    for (int k = 0; k < c; ++k) z[k] = rng.uniform(-10.0, 10.0);
    const double tau = std::pow(10.0, rng.uniform(-8.0, 3.0));

    const ProbVector p = softmax(z, tau);
    REQUIRE(std::abs(p.vec().sum() - 1.0) <= 1e-9);

    Eigen::Index logit_argmax = 0;
    z.maxCoeff(&logit_argmax);
    REQUIRE(p.argmax() == logit_argmax);
  }
  // Shift invariance stays below 1e-12 componentwise.
  for (int trial = 0; trial < 500; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_int(6));
    Vec z(c);
    for (int k = 0; k < c; ++k) z[k] = rng.uniform(-10.0, 10.0);
    const double tau = std::pow(10.0, rng.uniform(-3.0, 3.0));
    const double shift = rng.uniform(-10.0, 10.0);
    const ProbVector a = softmax(z, tau);
    const ProbVector b = softmax(z.array() + shift, tau);
    REQUIRE((a.vec() - b.vec()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("cross_entropy values and contracts", "[numerics]") {
  const ProbVector e1 = one_hot(4, 0);
  REQUIRE(cross_entropy(e1, e1) == 0.0);
  REQUIRE(cross_entropy(e1, uniform_prob(4)) ==
          Catch::Approx(std::log(4.0)).epsilon(1e-14));
  // Frozen from a 40-digit evaluation of -(0.5 log 0.9 + 0.5 log 0.1).
  const ProbVector t(make_vec({0.5, 0.5}));
  const ProbVector q(make_vec({0.9, 0.1}));
  REQUIRE(cross_entropy(t, q) ==
          Catch::Approx(1.2039728043259359926).epsilon(1e-14));
  REQUIRE_THROWS_AS(cross_entropy(e1, t), ShapeError);
}

TEST_CASE("entropy values", "[numerics]") {
  REQUIRE(entropy(uniform_prob(5)) == Catch::Approx(std::log(5.0)).epsilon(1e-14));
  REQUIRE(entropy(one_hot(3, 1)) == 0.0);
  // Frozen from a 40-digit evaluation.
  REQUIRE(entropy(ProbVector(make_vec({0.7, 0.2, 0.1}))) ==
          Catch::Approx(0.80181855254333730856).epsilon(1e-14));
}

TEST_CASE("cosine similarity", "[numerics]") {
  Rng rng(7);
  Vec v(6);
  for (int i = 0; i < 6; ++i) v[i] = rng.normal();
  REQUIRE(cosine_sim(v, v) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(cosine_sim(make_vec({1.0, 0.0}), make_vec({0.0, 1.0})) == 0.0);
  // Frozen: 11 / (5 * sqrt(5)).
  REQUIRE(cosine_sim(make_vec({1.0, 2.0}), make_vec({3.0, 4.0})) ==
          Catch::Approx(0.98386991009990746642).epsilon(1e-14));
  REQUIRE_THROWS_AS(cosine_sim(make_vec({0.0, 0.0}), make_vec({1.0, 0.0})),
                    InvalidInputError);
  REQUIRE_THROWS_AS(cosine_sim(make_vec({1.0}), make_vec({1.0, 0.0})), ShapeError);
}

TEST_CASE("kl divergence", "[numerics]") {
  Rng rng(11);
  const ProbVector p = random_simplex(rng, 5);
  REQUIRE(kl_divergence(p, p) == 0.0);
  REQUIRE(kl_divergence(one_hot(6, 0), uniform_prob(6)) ==
          Catch::Approx(std::log(6.0)).epsilon(1e-14));
  // Frozen from a 40-digit evaluation.
  REQUIRE(kl_divergence(ProbVector(make_vec({0.6, 0.4})),
                        ProbVector(make_vec({0.5, 0.5}))) ==
          Catch::Approx(0.020135513550688873421).epsilon(1e-13));
  REQUIRE_THROWS_AS(kl_divergence(one_hot(2, 0), uniform_prob(3)), ShapeError);
}

TEST_CASE("Gibbs inequality on random simplex pairs", "[numerics][property]") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_int(7));
    const ProbVector p = random_simplex(rng, c);
    const ProbVector q = random_simplex(rng, c);
    REQUIRE(cross_entropy(p, q) >= entropy(p) - 1e-12);
  }
}

TEST_CASE("kl-to-uniform identity", "[numerics][property]") {
  Rng rng(123);
  for (int trial = 0; trial < 300; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_int(7));
    const ProbVector p = random_simplex(rng, c);
    double sum_plogp = 0.0;
    for (int k = 0; k < c; ++k) sum_plogp += p[k] * std::log(p[k]);
    const double lhs = kl_divergence(p, uniform_prob(c)) - std::log(double(c));
    REQUIRE(std::abs(lhs - sum_plogp) < 1e-10);
  }
}

TEST_CASE("check_gradient validates closed forms", "[numerics]") {
  SECTION("quadratic") {
    const Vec point = make_vec({1.0, 2.0});
    const auto loss = [](const Vec& x) { return x.squaredNorm(); };
    const GradientReport report =
        check_gradient(loss, 2.0 * point, point, 1e-5);
    REQUIRE(report.analytic[0] == 2.0);
    REQUIRE(report.analytic[1] == 4.0);
    REQUIRE(report.max_rel_err < 1e-6);
  }
  SECTION("cross entropy through softmax") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Vec z(4);
      for (int i = 0; i < 4; ++i) z[i] = rng.uniform(-2.0, 2.0);
      const ProbVector target = one_hot(4, 0);
      const auto loss = [&](const Vec& x) {
        return cross_entropy(target, softmax(x, 1.0));
      };
      const Vec analytic =
          ce_softmax_score_grad(softmax(z, 1.0), target, 1.0, 1.0);
      REQUIRE(check_gradient(loss, analytic, z, 1e-5).max_rel_err < 1e-4);
    }
  }
  SECTION("constant loss") {
    const auto loss = [](const Vec&) { return 3.5; };
    const GradientReport report =
        check_gradient(loss, Vec::Zero(3), Vec::Zero(3), 1e-5);
    REQUIRE(report.max_rel_err == 0.0);
    REQUIRE(report.numeric.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("step range enforced") {
    const auto loss = [](const Vec& x) { return x.sum(); };
    REQUIRE_THROWS_AS(check_gradient(loss, Vec::Ones(2), Vec::Zero(2), 1e-2),
                      InvalidParameterError);
  }
  SECTION("non-finite loss is reported") {
    const auto loss = [](const Vec& x) { return std::log(x[0]); };
    REQUIRE_THROWS_AS(
        check_gradient(loss, Vec::Ones(1), Vec::Zero(1), 1e-5),
        NumericError);
  }
}

TEST_CASE("entropy score gradient matches finite differences", "[numerics]") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Vec z(5);
    for (int i = 0; i < 5; ++i) z[i] = rng.uniform(-2.0, 2.0);
    const auto loss = [](const Vec& x) { return entropy(softmax(x, 1.0)); };
    const Vec analytic = entropy_score_grad(softmax(z, 1.0));
    REQUIRE(check_gradient(loss, analytic, z, 1e-5).max_rel_err < 1e-4);
  }
}

TEST_CASE("prob vector rejects invalid content", "[numerics]") {
  REQUIRE_THROWS_AS(ProbVector(make_vec({0.5, 0.6})), InvalidInputError);
  REQUIRE_THROWS_AS(ProbVector(make_vec({1.2, -0.2})), InvalidInputError);
  REQUIRE_THROWS_AS(ProbVector(Vec()), InvalidInputError);
}
