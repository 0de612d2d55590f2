#pragma once

#include <span>
#include <vector>

#include "mae/autodiff.hpp"
#include "mae/distributions.hpp"
#include "mae/model.hpp"

namespace mae {

// Regularization weights of the combined objective.
struct RegWeights {
  double eta = 0.0;    // diversity
  double gamma = 0.0;  // smoothness
};

// Scalar values of every loss term, in nats per datum.
struct LossBreakdown {
  double elbo = 0.0;
  double reconstruction_error = 0.0;
  double kl = 0.0;  // raw KL, even when free bits shape the objective
  double l_diverse = 0.0;
  double l_smooth = 0.0;
  double mpd = 0.0;
  double total = 0.0;
};

inline constexpr double kSmoothEpsilon = 1e-8;

struct ElboGraph {
  ad::Var elbo;          // RE + objective KL
  ad::Var re;            // mean over batch of -log p(x|z)
  ad::Var kl;            // raw KL, mean over batch
  ad::Var kl_objective;  // KL as used by the objective (free bits applied)
  GaussianNode posteriors;
};

// Negative ELBO with one reparameterized sample per row. `noise` is standard
// normal [B, K]. A positive `free_bits` floors each latent dimension's
// batch-mean KL (standard prior) or the total KL at free_bits * K (flow prior).
ElboGraph elbo_loss(const ModelGraph& model, const ad::Var& x, const ad::Var& noise,
                    double free_bits = 0.0);

// Per-dimension KL(q_i || q_j) for every ordered pair, shape [B, B, K].
ad::Var pairwise_kl(const GaussianNode& q);
// Constant [B, B] with zeros on the diagonal and ones elsewhere.
Tensor off_diagonal_mask(std::size_t batch);

// Mean total KL over the B(B-1) ordered pairs of distinct rows.
ad::Var mpd_estimate(const GaussianNode& q);
// Mean over distinct ordered pairs of sum_k softplus(-KL_k).
ad::Var diverse_loss(const GaussianNode& q);
// sqrt(population variance + 1e-8) of the distinct-pair total KLs.
ad::Var smooth_loss(const GaussianNode& q);

struct MaeGraph {
  ElboGraph elbo;
  ad::Var l_diverse;
  ad::Var l_smooth;
  ad::Var mpd;
  ad::Var total;

  LossBreakdown values() const;
};

// total = elbo + eta * l_diverse + gamma * l_smooth. Terms with zero weight
// are still computed for reporting but kept out of `total`. A single-row
// batch has no pairs: the pair nodes stay invalid and report as 0.
MaeGraph mae_loss(const ModelGraph& model, const ad::Var& x, const ad::Var& noise,
                  const RegWeights& weights, double free_bits = 0.0);

// Evaluates mae_loss on a fresh tape.
LossBreakdown evaluate_mae(const VaeModel& model, const Tensor& x, const Tensor& noise,
                           const RegWeights& weights, double free_bits = 0.0);

double free_bits_kl(std::span<const double> kl_per_dim, double lambda);
ad::Var free_bits_kl(const ad::Var& kl_per_dim, double lambda);

// Plain-value versions over explicit posteriors (B >= 2).
double mpd_estimate(const std::vector<DiagGaussian>& posteriors);
double diverse_loss(const std::vector<DiagGaussian>& posteriors);
double smooth_loss(const std::vector<DiagGaussian>& posteriors);
// sqrt(population variance + 1e-8) of a list of pair KLs.
double pair_kl_std(std::span<const double> pair_kls);

}  // namespace mae
