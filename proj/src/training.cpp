#include "mae/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mae/errors.hpp"

namespace mae {

void adam_step(AdamState& state, ParameterSet& params, const ParameterSet& grads,
               const AdamConfig& config) {
  if (!(config.learning_rate > 0) || !(config.eps > 0)) throw ContractError("adam: rates must be positive");
  if (!(config.beta1 >= 0 && config.beta1 < 1 && config.beta2 >= 0 && config.beta2 < 1)) {
    throw ContractError("adam: betas must lie in [0, 1)");
  }
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("adam: gradient for unknown parameter " + name);
    if (it->second.shape() != g.shape()) {
      throw ShapeError("adam: gradient shape " + to_string(g.shape()) + " for parameter " + name + " of shape " +
                       to_string(it->second.shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [mi, m_new] = state.m.try_emplace(name, g.shape(), 0.0);
    auto [vi, v_new] = state.v.try_emplace(name, g.shape(), 0.0);
    auto m = mi->second.data();
    auto v = vi->second.data();
    auto pv = p.data();
    auto gv = g.data();
    for (std::size_t i = 0; i < gv.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gv[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gv[i] * gv[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      pv[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

void polyak_update(ParameterSet& avg, const ParameterSet& params, double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw ContractError("polyak alpha must lie in [0, 1]");
  if (avg.size() != params.size()) throw ShapeError("polyak: parameter sets differ");
  for (auto& [name, a] : avg) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("polyak: missing parameter " + name);
    if (it->second.shape() != a.shape()) throw ShapeError("polyak: shape mismatch for " + name);
    auto av = a.data();
    auto pv = it->second.data();
    for (std::size_t i = 0; i < av.size(); ++i) av[i] = alpha * av[i] + (1.0 - alpha) * pv[i];
  }
}

double clip_global_norm(ParameterSet& grads, double max_norm) {
  double ss = 0.0;
  for (const auto& [_, g] : grads) {
    for (double v : g.data()) ss += v * v;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (double& v : g.data()) v *= scale;
    }
  }
  return norm;
}

void TrainConfig::validate() const {
  if (weights.eta < 0 || weights.gamma < 0) throw ConfigError("eta and gamma must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if ((weights.eta > 0 || weights.gamma > 0) && batch_size < 2) {
    throw ConfigError("batch_size must be at least 2 when eta or gamma is positive");
  }
  if (!(adam.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(adam.eps > 0)) throw ConfigError("adam eps must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (free_bits < 0) throw ConfigError("free_bits must be nonnegative");
  if (!(polyak_alpha >= 0 && polyak_alpha <= 1)) throw ConfigError("polyak_alpha must lie in [0, 1]");
  if (checkpoint_every > 0 && checkpoint_path.empty()) throw ConfigError("checkpoint_every needs a checkpoint path");
}

namespace {

// Batch boundaries for one epoch. With pair losses a trailing single-row
// batch is merged into the previous one.
std::vector<std::size_t> batch_bounds(std::size_t n, std::size_t batch, bool need_pairs) {
  std::vector<std::size_t> bounds{0};
  for (std::size_t b = batch; b < n; b += batch) bounds.push_back(b);
  bounds.push_back(n);
  if (need_pairs && bounds.size() > 2 && n - bounds[bounds.size() - 2] < 2) {
    bounds.erase(bounds.end() - 2);
  }
  return bounds;
}

void check_components(const LossBreakdown& v, long epoch, std::size_t step) {
  const std::pair<const char*, double> parts[] = {
      {"reconstruction error", v.reconstruction_error}, {"kl", v.kl},
      {"l_diverse", v.l_diverse}, {"l_smooth", v.l_smooth}, {"total", v.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw NumericError("non-finite " + std::string(name) + " at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step));
    }
  }
}

Tensor rows(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t cols = t.dim(1);
  Tensor out({idx.size(), cols});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(t.data().data() + idx[r] * cols, cols, out.data().data() + r * cols);
  }
  return out;
}

}  // namespace

TrainResult train(const VaeModel& initial, const Dataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (data.size() == 0) throw ContractError("train: empty dataset");
  if (data.dim() != initial.config().data_dim) {
    throw ShapeError("train: dataset dimension " + std::to_string(data.dim()) + " does not match model " +
                     std::to_string(initial.config().data_dim));
  }
  const bool need_pairs = config.weights.eta > 0 || config.weights.gamma > 0;
  if (need_pairs && data.size() < 2) throw ContractError("train: pair losses need at least two data points");

  TrainResult result{initial, initial, {}};
  ParameterSet& params = result.model.params();
  AdamState adam;

  const std::size_t N = data.size();
  const std::size_t K = initial.config().latent_dim;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Fixed evaluation slice so history rows are comparable across epochs.
  const std::size_t eval_n = std::min(config.history_eval_size, N);
  Tensor eval_binary;
  if (eval_n > 0) {
    std::vector<std::size_t> head(eval_n);
    std::iota(head.begin(), head.end(), std::size_t{0});
    std::mt19937_64 eval_rng(config.seed ^ 0x5bd1e995ULL);
    const Tensor raw = rows(data.images, head);
    eval_binary = config.binarize ? dynamic_binarize(raw, eval_rng) : raw;
  }

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bounds = batch_bounds(N, config.batch_size, need_pairs);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const Tensor epoch_data = config.binarize ? dynamic_binarize(data.images, rng) : data.images;
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t b = 0; b + 1 < bounds.size(); ++b, ++step) {
      const std::span<const std::size_t> idx(order.data() + bounds[b], bounds[b + 1] - bounds[b]);
      Tensor noise({idx.size(), K});
      for (double& v : noise.data()) v = normal(rng);

      ad::Tape tape;
      ParameterSet grads;
      try {
        const ModelGraph g(result.model, tape);
        const MaeGraph loss =
            mae_loss(g, tape.input("x", rows(epoch_data, idx)), tape.input("noise", noise), config.weights,
                     config.free_bits);
        check_components(loss.values(), static_cast<long>(epoch), step);
        grads = tape.backward(loss.total);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           ": " + e.what());
      }
      for (const auto& [name, grad] : grads) {
        if (!grad.all_finite()) throw NumericError("non-finite gradient for " + name + " at step " + std::to_string(step));
      }
      clip_global_norm(grads, config.clip_norm);
      adam_step(adam, params, grads, config.adam);
      polyak_update(result.polyak.params(), params, config.polyak_alpha);
    }

    MetricsRecord rec;
    if (eval_n > 0) {
      rec = diagnostics(result.model, eval_binary, config.history_iw_samples, config.seed + epoch,
                        std::max<std::size_t>(2, std::min<std::size_t>(100, eval_n)));
    }
    rec.epoch = static_cast<long>(epoch);
    result.history.push_back(rec);
    if (config.on_epoch) config.on_epoch(rec);
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      save_checkpoint(result.polyak, config.checkpoint_path);
    }
  }
  return result;
}

}  // namespace mae
