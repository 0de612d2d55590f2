#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mae/data.hpp"
#include "mae/evaluation.hpp"
#include "mae/model.hpp"
#include "mae/objectives.hpp"

namespace mae {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParameterSet m;
  ParameterSet v;
  long step = 0;
};

// Bias-corrected Adam. Moments are created on first use; a gradient map
// must cover exactly the parameters being updated.
void adam_step(AdamState& state, ParameterSet& params, const ParameterSet& grads,
               const AdamConfig& config);

// avg <- alpha * avg + (1 - alpha) * params
void polyak_update(ParameterSet& avg, const ParameterSet& params, double alpha);

// Rescales grads in place so that their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(ParameterSet& grads, double max_norm);

struct TrainConfig {
  RegWeights weights;
  AdamConfig adam;
  std::size_t batch_size = 100;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  double free_bits = 0.0;  // nats per latent dim; 0 disables
  double polyak_alpha = 0.999;
  double clip_norm = 5.0;  // <= 0 disables
  bool binarize = true;    // resample binary pixels every epoch

  // Per-epoch history row computed on the first rows of the training data
  // with the current (not averaged) parameters. history_iw_samples = 0
  // leaves nll_iw as NaN.
  std::size_t history_eval_size = 100;
  std::size_t history_iw_samples = 0;

  std::size_t checkpoint_every = 0;  // epochs; 0 disables
  std::string checkpoint_path;

  std::function<void(const MetricsRecord&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  VaeModel model;
  VaeModel polyak;
  std::vector<MetricsRecord> history;
};

// Minibatch training with Adam, gradient clipping and Polyak averaging.
// Deterministic for a fixed seed. A non-finite loss aborts with a
// NumericError naming the component that went bad.
TrainResult train(const VaeModel& initial, const Dataset& data, const TrainConfig& config);

}  // namespace mae
