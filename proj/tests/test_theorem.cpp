#include <doctest.h>

#include <cmath>
#include <random>

#include "mae/errors.hpp"
#include "mae/theorem.hpp"

using namespace mae;

namespace {

DiscreteJointModel two_atom() {
  return {{0.5, 0.5}, Tensor({2, 2}, {0.8, 0.2, 0.2, 0.8})};
}

// The four ordered pairs of the two-atom model written out.
double two_atom_mpd() {
  const double kl = 0.8 * std::log(0.8 / 0.2) + 0.2 * std::log(0.2 / 0.8);
  return 0.25 * (0 + kl + kl + 0);
}

}  // namespace

TEST_CASE("two-atom model by enumeration") {
  const DiscreteJointModel m = two_atom();
  CHECK(std::abs(two_atom_mpd() - 0.415888308335967) <= 1e-12);
  CHECK(std::abs(mpd_exact(m) - two_atom_mpd()) <= 1e-12);

  const auto qz = marginal_q_z(m);
  CHECK(qz[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(qz[1] == doctest::Approx(0.5).epsilon(1e-15));

  // Both KL sums against the uniform marginal.
  const double mi = 0.8 * std::log(0.8 / 0.5) + 0.2 * std::log(0.2 / 0.5);
  const double rev = 0.5 * std::log(0.5 / 0.8) + 0.5 * std::log(0.5 / 0.2);
  const MiTerms t = mi_terms(m);
  CHECK(std::abs(t.mi_kl - mi) <= 1e-12);
  CHECK(std::abs(t.reverse_kl - rev) <= 1e-12);
  CHECK(std::abs(t.mi_kl - 0.192745) <= 1e-6);
  CHECK(std::abs(t.reverse_kl - 0.223144) <= 1e-6);

  const OracleReport r = verify_theorem1(m, 1e-12);
  CHECK(r.passed);
  CHECK(r.gap <= 1e-12);
  CHECK(r.gap == std::abs(r.mpd_exact - r.symmetric_sum));
}

TEST_CASE("identical rows give zero everywhere") {
  const DiscreteJointModel m{{0.2, 0.3, 0.5}, Tensor({3, 2}, {0.6, 0.4, 0.6, 0.4, 0.6, 0.4})};
  CHECK(mpd_exact(m) == doctest::Approx(0.0).epsilon(1e-15));
  const auto qz = marginal_q_z(m);
  CHECK(qz[0] == doctest::Approx(0.6).epsilon(1e-15));
  const OracleReport r = verify_theorem1(m, 1e-12);
  CHECK(std::abs(r.mi_kl) <= 1e-15);
  CHECK(std::abs(r.reverse_kl) <= 1e-15);
  CHECK(r.passed);
}

TEST_CASE("single atom and point-mass inputs") {
  const DiscreteJointModel one{{1.0}, Tensor({1, 3}, {0.2, 0.3, 0.5})};
  CHECK(mpd_exact(one) == 0.0);
  CHECK(marginal_q_z(one) == std::vector<double>{0.2, 0.3, 0.5});
}

TEST_CASE("softened deterministic posteriors approach the entropy of p(x)") {
  // q rows on nearly disjoint supports: mi_kl -> H(p_x) as the mass leak -> 0.
  const std::vector<double> px{0.2, 0.3, 0.5};
  double h = 0;
  for (double p : px) h -= p * std::log(p);
  double prev_gap = 1e9;
  for (double e : {1e-2, 1e-4, 1e-6, 1e-8}) {
    Tensor q({3, 3}, e / 2);
    for (std::size_t i = 0; i < 3; ++i) q.at(i, i) = 1 - e;
    const MiTerms t = mi_terms({px, q});
    const double gap = std::abs(t.mi_kl - h);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 1e-5);
}

TEST_CASE("random models satisfy the identity") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> size(1, 8);
  for (int trial = 0; trial < 200; ++trial) {
    const DiscreteJointModel m = DiscreteJointModel::random(size(rng), size(rng), rng);
    CHECK_NOTHROW(m.validate());
    const OracleReport r = verify_theorem1(m, 1e-10);
    CHECK(r.gap <= 1e-10);
    CHECK(r.mpd_exact >= r.mi_kl - 1e-12);
    CHECK(r.mi_kl >= -1e-15);
    CHECK(r.reverse_kl >= -1e-15);
    CHECK(std::abs(pairwise_cross_entropy(m) - marginal_cross_entropy(m)) <= 1e-12);
    double total = 0;
    for (double v : marginal_q_z(m)) total += v;
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("invalid models are rejected") {
  CHECK_THROWS_AS((DiscreteJointModel{{0.5, 0.6}, Tensor({2, 2}, 0.5)}.validate()), ContractError);
  CHECK_THROWS_AS((DiscreteJointModel{{0.5, 0.5}, Tensor({2, 2}, {1.0, 0.0, 0.5, 0.5})}.validate()), ContractError);
  CHECK_THROWS_AS((DiscreteJointModel{{0.5, 0.5}, Tensor({2, 2}, {0.7, 0.7, 0.5, 0.5})}.validate()), ContractError);
}

TEST_CASE("discrete divergences") {
  const std::vector<double> p{0.1, 0.9}, q{0.5, 0.5};
  CHECK(kl_discrete(p, q) == doctest::Approx(0.1 * std::log(0.2) + 0.9 * std::log(1.8)).epsilon(1e-14));
  CHECK(cross_entropy(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(kl_discrete(p, p) == 0.0);
}
