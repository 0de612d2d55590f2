#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mae/autodiff.hpp"

namespace mae {

inline constexpr double kLogVarMin = -7.0;
inline constexpr double kLogVarMax = 7.0;
inline constexpr double kLog2Pi = 1.8378770664093454836;

// Fully factorized Gaussian N(mean, diag(exp(log_var))).
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_var;

  // Validates lengths and finiteness and clamps log_var into [-7, 7].
  static DiagGaussian make(std::vector<double> mean, std::vector<double> log_var);
  static DiagGaussian standard(std::size_t dim);

  std::size_t dim() const { return mean.size(); }
  bool operator==(const DiagGaussian&) const = default;
};

struct LatentCode {
  std::vector<double> z;
};

struct KlResult {
  double total = 0.0;
  std::vector<double> per_dim;
};

KlResult kl_diag(const DiagGaussian& q1, const DiagGaussian& q2);
double kl_to_standard(const DiagGaussian& q);
// z = mean + exp(log_var / 2) * eps.
LatentCode reparam_sample(const DiagGaussian& q, std::span<const double> eps);
double log_density(const DiagGaussian& q, std::span<const double> z);
double standard_normal_log_density(std::span<const double> z);
// Sum over pixels of log Bernoulli(x | sigmoid(logit)); x must be 0/1.
double bernoulli_log_likelihood(std::span<const double> logits, std::span<const double> x);

// Batched posterior on a tape: mean and log_var nodes of identical shape
// (typically [B, K]).
struct GaussianNode {
  ad::Var mean;
  ad::Var log_var;
};

namespace graph {

// Per-dimension KL(q1 || q2); operands broadcast against each other.
ad::Var kl_diag(const GaussianNode& q1, const GaussianNode& q2);
// Per-dimension KL(q || N(0, I)).
ad::Var kl_to_standard(const GaussianNode& q);
ad::Var reparam_sample(const GaussianNode& q, const ad::Var& eps);
// Log-density summed over the last axis.
ad::Var log_density(const GaussianNode& q, const ad::Var& z);
ad::Var standard_normal_log_density(const ad::Var& z);
// Log-likelihood summed over the last axis, written as x*l - softplus(l).
ad::Var bernoulli_log_likelihood(const ad::Var& logits, const ad::Var& x);

}  // namespace graph

}  // namespace mae
