#include <doctest.h>

#include <cmath>
#include <random>

#include "mae/distributions.hpp"
#include "mae/errors.hpp"
#include "oracles.hpp"

using namespace mae;

namespace {

DiagGaussian random_gaussian(std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mean(-2, 2);
  std::uniform_real_distribution<double> lv(-2, 2);
  std::vector<double> m(k), v(k);
  for (std::size_t i = 0; i < k; ++i) {
    m[i] = mean(rng);
    v[i] = lv(rng);
  }
  return DiagGaussian::make(m, v);
}

}  // namespace

TEST_CASE("kl of a gaussian with itself is zero") {
  std::mt19937_64 rng(1);
  const auto q = random_gaussian(5, rng);
  const auto kl = kl_diag(q, q);
  CHECK(kl.total == 0.0);
  for (double v : kl.per_dim) CHECK(v == 0.0);
}

TEST_CASE("unit mean shift gives one half") {
  const auto kl = kl_diag(DiagGaussian::make({0.0}, {0.0}), DiagGaussian::make({1.0}, {0.0}));
  CHECK(kl.total == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("variance four against standard normal") {
  const double expected = oracle::kl_quadrature(0, 4, 0, 1);
  CHECK(expected == doctest::Approx(0.806853).epsilon(1e-6));
  const auto kl = kl_diag(DiagGaussian::make({0.0}, {std::log(4.0)}), DiagGaussian::standard(1));
  CHECK(std::abs(kl.total - expected) <= 1e-10);
}

TEST_CASE("closed form against quadrature on random pairs") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_gaussian(1, rng);
    const auto b = random_gaussian(1, rng);
    const double quad =
        oracle::kl_quadrature(a.mean[0], std::exp(a.log_var[0]), b.mean[0], std::exp(b.log_var[0]));
    CHECK(std::abs(kl_diag(a, b).total - quad) <= 1e-6);
  }
}

TEST_CASE("kl is nonnegative, asymmetric and sums its per-dim parts") {
  std::mt19937_64 rng(3);
  bool saw_asymmetry = false;
  for (int i = 0; i < 200; ++i) {
    const auto a = random_gaussian(4, rng);
    const auto b = random_gaussian(4, rng);
    const auto kl = kl_diag(a, b);
    CHECK(kl.total > 0.0);
    double s = 0.0;
    for (double v : kl.per_dim) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(kl.total == s);
    saw_asymmetry = saw_asymmetry || std::abs(kl.total - kl_diag(b, a).total) > 1e-6;
  }
  CHECK(saw_asymmetry);
}

TEST_CASE("kl is invariant under elementwise affine maps") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> scale(0.3, 3.0);
  std::uniform_real_distribution<double> shift(-3, 3);
  std::bernoulli_distribution flip(0.5);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_gaussian(3, rng);
    const auto b = random_gaussian(3, rng);
    DiagGaussian ta = a, tb = b;
    for (std::size_t k = 0; k < 3; ++k) {
      const double s = (flip(rng) ? -1 : 1) * scale(rng);
      const double t = shift(rng);
      ta.mean[k] = s * a.mean[k] + t;
      tb.mean[k] = s * b.mean[k] + t;
      ta.log_var[k] = a.log_var[k] + 2 * std::log(std::abs(s));
      tb.log_var[k] = b.log_var[k] + 2 * std::log(std::abs(s));
    }
    CHECK(std::abs(kl_diag(ta, tb).total - kl_diag(a, b).total) <= 1e-10);
  }
}

TEST_CASE("kl to standard normal") {
  CHECK(kl_to_standard(DiagGaussian::standard(3)) == 0.0);
  CHECK(kl_to_standard(DiagGaussian::make({1, 0}, {0, 0})) == doctest::Approx(0.5).epsilon(1e-15));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto q = random_gaussian(6, rng);
    CHECK(kl_to_standard(q) == doctest::Approx(kl_diag(q, DiagGaussian::standard(6)).total).epsilon(1e-13));
  }
}

TEST_CASE("log variance is clamped and dimensions are checked") {
  const auto q = DiagGaussian::make({0, 0}, {-20, 20});
  CHECK(q.log_var[0] == kLogVarMin);
  CHECK(q.log_var[1] == kLogVarMax);
  CHECK_THROWS_AS(DiagGaussian::make({0}, {0, 0}), ShapeError);
  CHECK_THROWS_AS(kl_diag(DiagGaussian::standard(2), DiagGaussian::standard(3)), ShapeError);
}

TEST_CASE("reparameterized samples") {
  const auto q = DiagGaussian::make({1.0, -2.0}, {0.0, 0.0});
  CHECK(reparam_sample(q, std::vector<double>{0, 0}).z == q.mean);
  CHECK(reparam_sample(q, std::vector<double>{1, 1}).z == std::vector<double>{2.0, -1.0});

  const auto wide = DiagGaussian::make({0.7}, {std::log(2.25)});
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += reparam_sample(wide, std::vector<double>{normal(rng)}).z[0];
  const double se = 1.5 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(s / n - 0.7) <= 4 * se);
}

TEST_CASE("gaussian log density") {
  CHECK(standard_normal_log_density(std::vector<double>{0.0}) == doctest::Approx(-0.918939).epsilon(1e-6));
  const auto q = DiagGaussian::make({0.4}, {std::log(0.3)});
  const double mass = oracle::integrate([&](double z) { return std::exp(log_density(q, std::vector<double>{z})); },
                                        -10, 10);
  CHECK(std::abs(mass - 1.0) <= 1e-6);
  const double at_mean = log_density(q, q.mean);
  for (double dz : {-0.1, -1e-3, 1e-3, 0.1}) CHECK(log_density(q, std::vector<double>{0.4 + dz}) < at_mean);
}

TEST_CASE("bernoulli log likelihood") {
  const std::vector<double> x{1, 0, 1, 1, 0};
  CHECK(bernoulli_log_likelihood(std::vector<double>(5, 0.0), x) ==
        doctest::Approx(-5 * std::log(2.0)).epsilon(1e-15));
  CHECK(std::abs(bernoulli_log_likelihood(std::vector<double>{20.0}, std::vector<double>{1.0})) <= 1e-8);
  CHECK_THROWS_AS(bernoulli_log_likelihood(std::vector<double>{0.0}, std::vector<double>{0.5}), ContractError);

  std::mt19937_64 rng(7);
  const auto logits = oracle::random_tensor({5}, rng, -4, 4).values();
  double direct = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double p = oracle::sigmoid(logits[i]);
    direct += x[i] * std::log(p) + (1 - x[i]) * std::log(1 - p);
  }
  CHECK(bernoulli_log_likelihood(logits, x) == doctest::Approx(direct).epsilon(1e-13));
}

TEST_CASE("graph kl gradients against finite differences") {
  std::mt19937_64 rng(9);
  std::vector<Tensor> point;
  for (int i = 0; i < 4; ++i) point.push_back(oracle::random_tensor({2, 3}, rng, -1.5, 1.5));
  const auto r = ad::grad_check(
      [](ad::Tape&, const std::vector<ad::Var>& p) {
        return ad::sum(graph::kl_diag({p[0], p[1]}, {p[2], p[3]}));
      },
      point, 1e-5);
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("graph kernels agree with the plain versions") {
  std::mt19937_64 rng(10);
  const auto a = random_gaussian(3, rng);
  const auto b = random_gaussian(3, rng);
  ad::Tape tape;
  auto node = [&](const DiagGaussian& g) {
    return GaussianNode{tape.input("m", Tensor({1, 3}, g.mean)), tape.input("v", Tensor({1, 3}, g.log_var))};
  };
  const GaussianNode na = node(a), nb = node(b);
  CHECK(ad::sum(graph::kl_diag(na, nb)).value().item() == doctest::Approx(kl_diag(a, b).total).epsilon(1e-14));
  CHECK(ad::sum(graph::kl_to_standard(na)).value().item() == doctest::Approx(kl_to_standard(a)).epsilon(1e-14));
  const std::vector<double> z{0.1, -0.2, 0.3};
  CHECK(graph::log_density(na, tape.input("z", Tensor({1, 3}, z))).value().item() ==
        doctest::Approx(log_density(a, z)).epsilon(1e-14));
}
