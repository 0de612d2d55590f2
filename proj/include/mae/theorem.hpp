#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "mae/tensor.hpp"

namespace mae {

// Finite joint p(x) q(z|x). q_z_given_x is [|X|, |Z|], row-stochastic.
struct DiscreteJointModel {
  std::vector<double> p_x;
  Tensor q_z_given_x;

  std::size_t num_x() const { return p_x.size(); }
  std::size_t num_z() const { return q_z_given_x.dim(1); }

  // Throws ContractError unless every entry is positive and every
  // distribution sums to 1 within 1e-12.
  void validate() const;

  // Dirichlet(1) rows and p_x, floored at `floor` and renormalized.
  static DiscreteJointModel random(std::size_t nx, std::size_t nz, std::mt19937_64& rng,
                                   double floor = 1e-3);
};

double kl_discrete(std::span<const double> p, std::span<const double> q);
double cross_entropy(std::span<const double> p, std::span<const double> q);

// Sum over all ordered (x1, x2), self pairs included, of
// p(x1) p(x2) KL(q(.|x1) || q(.|x2)).
double mpd_exact(const DiscreteJointModel& model);

std::vector<double> marginal_q_z(const DiscreteJointModel& model);

struct MiTerms {
  double mi_kl = 0.0;       // E_x KL(q(z|x) || q(z))
  double reverse_kl = 0.0;  // E_x KL(q(z) || q(z|x))
};
MiTerms mi_terms(const DiscreteJointModel& model);

// E_{x1,x2} H(q(.|x1), q(.|x2)) and E_x H(q_z, q(.|x)); equal for any model.
double pairwise_cross_entropy(const DiscreteJointModel& model);
double marginal_cross_entropy(const DiscreteJointModel& model);

struct OracleReport {
  double mpd_exact = 0.0;
  double mi_kl = 0.0;
  double reverse_kl = 0.0;
  double symmetric_sum = 0.0;
  double gap = 0.0;
  bool passed = false;
};

OracleReport verify_theorem1(const DiscreteJointModel& model, double tol);

}  // namespace mae
