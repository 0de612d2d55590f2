#include "mae/objectives.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "mae/errors.hpp"

namespace mae {

namespace {

std::size_t batch_size(const GaussianNode& q, const char* what) {
  if (q.mean.shape().size() != 2) {
    throw ShapeError(std::string(what) + ": posteriors must be [B, K], got " +
                     to_string(q.mean.shape()));
  }
  const std::size_t b = q.mean.shape()[0];
  if (b < 2) throw ContractError(std::string(what) + ": needs at least 2 posteriors, got " + std::to_string(b));
  return b;
}

double pair_count(std::size_t b) { return static_cast<double>(b * (b - 1)); }

GaussianNode to_node(ad::Tape& tape, const std::vector<DiagGaussian>& posteriors) {
  if (posteriors.empty()) throw ContractError("empty posterior list");
  const std::size_t B = posteriors.size();
  const std::size_t K = posteriors.front().dim();
  Tensor mean({B, K});
  Tensor log_var({B, K});
  for (std::size_t b = 0; b < B; ++b) {
    if (posteriors[b].dim() != K) throw ShapeError("posteriors with different latent sizes");
    for (std::size_t k = 0; k < K; ++k) {
      mean.at(b, k) = posteriors[b].mean[k];
      log_var.at(b, k) = posteriors[b].log_var[k];
    }
  }
  return GaussianNode{tape.input("mean", std::move(mean)), tape.input("log_var", std::move(log_var))};
}

}  // namespace

ElboGraph elbo_loss(const ModelGraph& model, const ad::Var& x, const ad::Var& noise,
                    double free_bits) {
  if (free_bits < 0) throw ContractError("free bits must be nonnegative");
  const auto& c = model.model().config();
  if (noise.shape() != Shape{x.shape().at(0), c.latent_dim}) {
    throw ShapeError("elbo_loss: noise shape " + to_string(noise.shape()) + " does not match batch");
  }
  ElboGraph out;
  out.posteriors = model.encode(x);
  const ad::Var z = graph::reparam_sample(out.posteriors, noise);
  const ad::Var logits = model.decode(z, x);
  out.re = -ad::mean(graph::bernoulli_log_likelihood(logits, x));

  if (c.prior == PriorKind::kStandardNormal) {
    const ad::Var kl_per_dim = ad::mean(graph::kl_to_standard(out.posteriors), 0);
    out.kl = ad::sum(kl_per_dim);
    out.kl_objective = free_bits > 0 ? free_bits_kl(kl_per_dim, free_bits) : out.kl;
  } else {
    const ad::Var log_q = graph::log_density(out.posteriors, z);
    const ad::Var log_p = model.prior_log_density(z);
    out.kl = ad::mean(log_q - log_p);
    out.kl_objective = free_bits > 0
                           ? ad::clamp(out.kl, free_bits * static_cast<double>(c.latent_dim),
                                       std::numeric_limits<double>::max())
                           : out.kl;
  }
  out.elbo = out.re + out.kl_objective;
  return out;
}

Tensor off_diagonal_mask(std::size_t batch) {
  Tensor mask({batch, batch}, 1.0);
  for (std::size_t i = 0; i < batch; ++i) mask.at(i, i) = 0.0;
  return mask;
}

ad::Var pairwise_kl(const GaussianNode& q) {
  const std::size_t B = batch_size(q, "pairwise_kl");
  const std::size_t K = q.mean.shape()[1];
  const GaussianNode first{ad::reshape(q.mean, {B, 1, K}), ad::reshape(q.log_var, {B, 1, K})};
  const GaussianNode second{ad::reshape(q.mean, {1, B, K}), ad::reshape(q.log_var, {1, B, K})};
  return graph::kl_diag(first, second);
}

namespace {

// Total KL per ordered pair [B, B] and the off-diagonal mask.
std::pair<ad::Var, ad::Var> pair_totals(const GaussianNode& q, const char* what) {
  const std::size_t B = batch_size(q, what);
  const ad::Var totals = ad::sum(pairwise_kl(q), 2);
  return {totals, q.mean.tape().constant(off_diagonal_mask(B))};
}

}  // namespace

ad::Var mpd_estimate(const GaussianNode& q) {
  auto [totals, mask] = pair_totals(q, "mpd_estimate");
  const double m = pair_count(q.mean.shape()[0]);
  return (1.0 / m) * ad::sum(totals * mask);
}

ad::Var diverse_loss(const GaussianNode& q) {
  const std::size_t B = batch_size(q, "diverse_loss");
  const ad::Var per_pair = ad::sum(ad::softplus(-pairwise_kl(q)), 2);
  const ad::Var mask = q.mean.tape().constant(off_diagonal_mask(B));
  return (1.0 / pair_count(B)) * ad::sum(per_pair * mask);
}

ad::Var smooth_loss(const GaussianNode& q) {
  auto [totals, mask] = pair_totals(q, "smooth_loss");
  const double m = pair_count(q.mean.shape()[0]);
  const ad::Var mean = (1.0 / m) * ad::sum(totals * mask);
  const ad::Var variance = (1.0 / m) * ad::sum(ad::square(totals - mean) * mask);
  return ad::sqrt(variance + kSmoothEpsilon);
}

LossBreakdown MaeGraph::values() const {
  LossBreakdown v;
  v.elbo = elbo.elbo.value().item();
  v.reconstruction_error = elbo.re.value().item();
  v.kl = elbo.kl.value().item();
  if (l_diverse.valid()) {
    v.l_diverse = l_diverse.value().item();
    v.l_smooth = l_smooth.value().item();
    v.mpd = mpd.value().item();
  }
  v.total = total.value().item();
  return v;
}

MaeGraph mae_loss(const ModelGraph& model, const ad::Var& x, const ad::Var& noise,
                  const RegWeights& weights, double free_bits) {
  if (weights.eta < 0 || weights.gamma < 0) throw ContractError("regularization weights must be nonnegative");
  MaeGraph out;
  out.elbo = elbo_loss(model, x, noise, free_bits);
  const GaussianNode& q = out.elbo.posteriors;
  out.total = out.elbo.elbo;
  if (x.shape().at(0) < 2) {
    if (weights.eta > 0 || weights.gamma > 0) throw ContractError("mae_loss: pair terms need a batch of at least 2");
    return out;
  }
  out.l_diverse = diverse_loss(q);
  out.l_smooth = smooth_loss(q);
  out.mpd = mpd_estimate(q);
  if (weights.eta > 0) out.total = out.total + weights.eta * out.l_diverse;
  if (weights.gamma > 0) out.total = out.total + weights.gamma * out.l_smooth;
  return out;
}

LossBreakdown evaluate_mae(const VaeModel& model, const Tensor& x, const Tensor& noise,
                           const RegWeights& weights, double free_bits) {
  ad::Tape tape;
  ModelGraph g(model, tape);
  return mae_loss(g, tape.input("x", x), tape.input("noise", noise), weights, free_bits).values();
}

double free_bits_kl(std::span<const double> kl_per_dim, double lambda) {
  if (lambda < 0) throw ContractError("free bits lambda must be nonnegative");
  double total = 0.0;
  for (double kl : kl_per_dim) total += std::max(kl, lambda);
  return total;
}

ad::Var free_bits_kl(const ad::Var& kl_per_dim, double lambda) {
  if (lambda < 0) throw ContractError("free bits lambda must be nonnegative");
  return ad::sum(ad::clamp(kl_per_dim, lambda, std::numeric_limits<double>::max()));
}

double mpd_estimate(const std::vector<DiagGaussian>& posteriors) {
  ad::Tape tape;
  return mpd_estimate(to_node(tape, posteriors)).value().item();
}

double diverse_loss(const std::vector<DiagGaussian>& posteriors) {
  ad::Tape tape;
  return diverse_loss(to_node(tape, posteriors)).value().item();
}

double smooth_loss(const std::vector<DiagGaussian>& posteriors) {
  ad::Tape tape;
  return smooth_loss(to_node(tape, posteriors)).value().item();
}

double pair_kl_std(std::span<const double> pair_kls) {
  if (pair_kls.empty()) throw ContractError("pair_kl_std of an empty list");
  const double n = static_cast<double>(pair_kls.size());
  double mean = 0.0;
  for (double v : pair_kls) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : pair_kls) var += (v - mean) * (v - mean);
  return std::sqrt(var / n + kSmoothEpsilon);
}

}  // namespace mae
