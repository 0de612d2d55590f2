#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "mae/model.hpp"
#include "mae/tensor.hpp"

namespace mae {

// One evaluation row, nats per datum. nll_iw is NaN when not evaluated.
struct MetricsRecord {
  long epoch = -1;
  double elbo = 0.0;
  double re = 0.0;
  double kl = 0.0;
  double mpd = 0.0;
  double std = 0.0;
  double l_diverse = 0.0;
  double l_smooth = 0.0;
  double nll_iw = std::numeric_limits<double>::quiet_NaN();
  std::size_t data_count = 0;
  std::size_t importance_samples = 0;
};

// Overflow-safe log(mean(exp(v))).
double log_mean_exp(std::span<const double> values);

// -log_mean_exp of log importance weights.
double iw_nll_from_log_weights(std::span<const double> log_weights);

// -log mean_s p(x, z_s) / q(z_s | x) with z_s ~ q(.|x), S >= 1.
double iw_nll(const VaeModel& model, std::span<const double> x, std::size_t samples,
              std::mt19937_64& rng);

struct NllSummary {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> per_datum;
};

// iw_nll for every row of `binary` [N, D]; datum i uses a stream seeded by
// (seed, i).
NllSummary iw_nll_dataset(const VaeModel& model, const Tensor& binary, std::size_t samples,
                          std::uint64_t seed);

// Per-datum single-sample negative ELBO (RE + KL) with the same streams.
NllSummary elbo_dataset(const VaeModel& model, const Tensor& binary, std::uint64_t seed);

// RE and KL averaged over the data with fresh noise; MPD, STD and the pair
// losses averaged over shuffled minibatches of `pair_batch` rows (self-pairs
// excluded); nll_iw over the data with `samples` importance samples.
MetricsRecord diagnostics(const VaeModel& model, const Tensor& binary, std::size_t samples,
                          std::uint64_t seed, std::size_t pair_batch = 100);

// Posterior means, one row per datum: [N, K].
Tensor extract_representations(const VaeModel& model, const Tensor& images);

struct KMeansResult {
  std::vector<std::size_t> assignments;
  Tensor heads;  // [clusters, dim]
  std::vector<double> distortion;  // after each Lloyd iteration
  std::size_t iterations = 0;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

// k-means++ seeding followed by Lloyd iterations until the assignment is a
// fixpoint or max_iter is reached. Empty clusters keep their previous head.
KMeansResult kmeans(const Tensor& points, std::size_t clusters, std::uint64_t seed,
                    std::size_t max_iter = 300);

// Cluster c is labelled with the label of the training representation
// nearest to its head; returns the fraction of assignments whose cluster
// label matches eval_labels.
double cluster_accuracy(const Tensor& heads, const std::vector<std::size_t>& assignments,
                        const Tensor& train_reps, const std::vector<int>& train_labels,
                        const std::vector<int>& eval_labels);

// Majority vote over the k nearest training rows; ties go to the label with
// the smallest summed distance.
std::vector<int> knn_predict(const Tensor& train_reps, const std::vector<int>& train_labels,
                             const Tensor& test_reps, std::size_t k);
double knn_classify(const Tensor& train_reps, const std::vector<int>& train_labels,
                    const Tensor& test_reps, const std::vector<int>& test_labels, std::size_t k);

struct ProbeOptions {
  double l2 = 1e-4;
  std::size_t iterations = 500;
  double step_size = 0.5;
};

struct ProbeResult {
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::vector<double> loss_history;  // regularized training loss before each step
};

// Multinomial logistic regression on standardized features, fit by
// full-batch gradient descent.
ProbeResult logistic_probe(const Tensor& train_reps, const std::vector<int>& train_labels,
                           const Tensor& test_reps, const std::vector<int>& test_labels,
                           const ProbeOptions& options = {});

// `budget` indices drawn as evenly as possible across classes; budget 0 or
// >= N selects everything.
std::vector<std::size_t> stratified_subset(const std::vector<int>& labels, std::size_t budget,
                                           std::uint64_t seed);

}  // namespace mae
