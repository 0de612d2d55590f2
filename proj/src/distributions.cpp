#include "mae/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mae/errors.hpp"

namespace mae {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length " + std::to_string(a) + " vs " +
                     std::to_string(b));
  }
}

}  // namespace

DiagGaussian DiagGaussian::make(std::vector<double> mean, std::vector<double> log_var) {
  require_same_length(mean.size(), log_var.size(), "DiagGaussian");
  for (std::size_t k = 0; k < mean.size(); ++k) {
    if (!std::isfinite(mean[k]) || !std::isfinite(log_var[k])) {
      throw NumericError("DiagGaussian with non-finite parameters");
    }
    log_var[k] = std::clamp(log_var[k], kLogVarMin, kLogVarMax);
  }
  return DiagGaussian{std::move(mean), std::move(log_var)};
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
  return DiagGaussian{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
}

KlResult kl_diag(const DiagGaussian& q1, const DiagGaussian& q2) {
  require_same_length(q1.dim(), q2.dim(), "kl_diag");
  KlResult out;
  out.per_dim.resize(q1.dim());
  for (std::size_t k = 0; k < q1.dim(); ++k) {
    // 0.5 [ r - 1 - log r + (m1 - m2)^2 / v2 ] with r = v1 / v2.
    const double d = q1.log_var[k] - q2.log_var[k];
    const double diff = q1.mean[k] - q2.mean[k];
    const double kl = 0.5 * ((std::expm1(d) - d) + diff * diff * std::exp(-q2.log_var[k]));
    out.per_dim[k] = std::max(kl, 0.0);
    out.total += out.per_dim[k];
  }
  return out;
}

double kl_to_standard(const DiagGaussian& q) {
  double total = 0.0;
  for (std::size_t k = 0; k < q.dim(); ++k) {
    const double lv = q.log_var[k];
    total += 0.5 * (q.mean[k] * q.mean[k] + (std::expm1(lv) - lv));
  }
  return std::max(total, 0.0);
}

LatentCode reparam_sample(const DiagGaussian& q, std::span<const double> eps) {
  require_same_length(q.dim(), eps.size(), "reparam_sample");
  LatentCode code;
  code.z.resize(q.dim());
  for (std::size_t k = 0; k < q.dim(); ++k) {
    code.z[k] = q.mean[k] + std::exp(0.5 * q.log_var[k]) * eps[k];
  }
  return code;
}

double log_density(const DiagGaussian& q, std::span<const double> z) {
  require_same_length(q.dim(), z.size(), "log_density");
  double total = 0.0;
  for (std::size_t k = 0; k < q.dim(); ++k) {
    const double diff = z[k] - q.mean[k];
    total += -0.5 * kLog2Pi - 0.5 * q.log_var[k] - 0.5 * diff * diff * std::exp(-q.log_var[k]);
  }
  return total;
}

double standard_normal_log_density(std::span<const double> z) {
  double total = 0.0;
  for (double v : z) total += -0.5 * kLog2Pi - 0.5 * v * v;
  return total;
}

double bernoulli_log_likelihood(std::span<const double> logits, std::span<const double> x) {
  require_same_length(logits.size(), x.size(), "bernoulli_log_likelihood");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0 && x[i] != 1.0) {
      throw ContractError("bernoulli_log_likelihood: pixel " + std::to_string(i) +
                          " is not binary");
    }
    total += x[i] * logits[i] - ad::softplus(logits[i]);
  }
  return total;
}

namespace graph {

ad::Var kl_diag(const GaussianNode& q1, const GaussianNode& q2) {
  const ad::Var d = q1.log_var - q2.log_var;
  const ad::Var diff = q1.mean - q2.mean;
  return 0.5 * ((ad::exp(d) - 1.0 - d) + ad::square(diff) * ad::exp(-q2.log_var));
}

ad::Var kl_to_standard(const GaussianNode& q) {
  return 0.5 * (ad::square(q.mean) + ad::exp(q.log_var) - 1.0 - q.log_var);
}

ad::Var reparam_sample(const GaussianNode& q, const ad::Var& eps) {
  return q.mean + ad::exp(0.5 * q.log_var) * eps;
}

ad::Var log_density(const GaussianNode& q, const ad::Var& z) {
  const ad::Var diff = z - q.mean;
  const ad::Var terms = -0.5 * q.log_var - 0.5 * ad::square(diff) * ad::exp(-q.log_var);
  const std::size_t last = terms.shape().size() - 1;
  const double dim = static_cast<double>(terms.shape()[last]);
  return ad::sum(terms, last) + (-0.5 * kLog2Pi * dim);
}

ad::Var standard_normal_log_density(const ad::Var& z) {
  const std::size_t last = z.shape().size() - 1;
  const double dim = static_cast<double>(z.shape()[last]);
  return ad::sum(-0.5 * ad::square(z), last) + (-0.5 * kLog2Pi * dim);
}

ad::Var bernoulli_log_likelihood(const ad::Var& logits, const ad::Var& x) {
  const ad::Var terms = x * logits - ad::softplus(logits);
  return ad::sum(terms, terms.shape().size() - 1);
}

}  // namespace graph

}  // namespace mae
