#include "mae/theorem.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mae/errors.hpp"

namespace mae {

namespace {

constexpr double kSumTolerance = 1e-12;

std::span<const double> row(const Tensor& t, std::size_t r) { return t.data().subspan(r * t.dim(1), t.dim(1)); }

void check_distribution(std::span<const double> p, const std::string& what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ContractError(what + " has a non-positive entry");
    total += v;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw ContractError(what + " sums to " + std::to_string(total) + ", not 1");
  }
}

void renormalize_with_floor(std::span<double> p, double floor) {
  for (double& v : p) v = std::max(v, floor);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= total;
}

}  // namespace

void DiscreteJointModel::validate() const {
  if (p_x.empty()) throw ContractError("discrete model without x atoms");
  if (q_z_given_x.rank() != 2 || q_z_given_x.dim(0) != p_x.size()) {
    throw ShapeError("q(z|x) must be [|X|, |Z|] with one row per x atom");
  }
  check_distribution(p_x, "p(x)");
  for (std::size_t x = 0; x < num_x(); ++x) check_distribution(row(q_z_given_x, x), "q(z|x=" + std::to_string(x) + ")");
}

DiscreteJointModel DiscreteJointModel::random(std::size_t nx, std::size_t nz, std::mt19937_64& rng,
                                              double floor) {
  if (nx == 0 || nz == 0) throw ContractError("discrete model sizes must be positive");
  std::gamma_distribution<double> gamma(1.0, 1.0);
  DiscreteJointModel m;
  m.p_x.resize(nx);
  for (double& v : m.p_x) v = gamma(rng);
  double total = std::accumulate(m.p_x.begin(), m.p_x.end(), 0.0);
  for (double& v : m.p_x) v /= total;
  renormalize_with_floor(m.p_x, floor);

  m.q_z_given_x = Tensor({nx, nz});
  for (std::size_t x = 0; x < nx; ++x) {
    auto r = m.q_z_given_x.data().subspan(x * nz, nz);
    for (double& v : r) v = gamma(rng);
    total = std::accumulate(r.begin(), r.end(), 0.0);
    for (double& v : r) v /= total;
    renormalize_with_floor(r, floor);
  }
  return m;
}

double kl_discrete(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_discrete: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(q[i] > 0.0)) throw ContractError("kl_discrete: zero entry in second argument");
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

double cross_entropy(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("cross_entropy: length mismatch");
  double h = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(q[i]);
  }
  return h;
}

double mpd_exact(const DiscreteJointModel& model) {
  model.validate();
  double total = 0.0;
  for (std::size_t a = 0; a < model.num_x(); ++a) {
    for (std::size_t b = 0; b < model.num_x(); ++b) {
      total += model.p_x[a] * model.p_x[b] * kl_discrete(row(model.q_z_given_x, a), row(model.q_z_given_x, b));
    }
  }
  return total;
}

std::vector<double> marginal_q_z(const DiscreteJointModel& model) {
  model.validate();
  std::vector<double> q(model.num_z(), 0.0);
  for (std::size_t x = 0; x < model.num_x(); ++x) {
    const auto r = row(model.q_z_given_x, x);
    for (std::size_t z = 0; z < q.size(); ++z) q[z] += model.p_x[x] * r[z];
  }
  return q;
}

MiTerms mi_terms(const DiscreteJointModel& model) {
  const std::vector<double> qz = marginal_q_z(model);
  MiTerms out;
  for (std::size_t x = 0; x < model.num_x(); ++x) {
    const auto r = row(model.q_z_given_x, x);
    out.mi_kl += model.p_x[x] * kl_discrete(r, qz);
    out.reverse_kl += model.p_x[x] * kl_discrete(qz, r);
  }
  return out;
}

double pairwise_cross_entropy(const DiscreteJointModel& model) {
  model.validate();
  double total = 0.0;
  for (std::size_t a = 0; a < model.num_x(); ++a) {
    for (std::size_t b = 0; b < model.num_x(); ++b) {
      total += model.p_x[a] * model.p_x[b] * cross_entropy(row(model.q_z_given_x, a), row(model.q_z_given_x, b));
    }
  }
  return total;
}

double marginal_cross_entropy(const DiscreteJointModel& model) {
  const std::vector<double> qz = marginal_q_z(model);
  double total = 0.0;
  for (std::size_t x = 0; x < model.num_x(); ++x) total += model.p_x[x] * cross_entropy(qz, row(model.q_z_given_x, x));
  return total;
}

OracleReport verify_theorem1(const DiscreteJointModel& model, double tol) {
  OracleReport r;
  r.mpd_exact = mpd_exact(model);
  const MiTerms mi = mi_terms(model);
  r.mi_kl = mi.mi_kl;
  r.reverse_kl = mi.reverse_kl;
  r.symmetric_sum = mi.mi_kl + mi.reverse_kl;
  r.gap = std::abs(r.mpd_exact - r.symmetric_sum);
  r.passed = r.gap <= tol;
  return r;
}

}  // namespace mae
