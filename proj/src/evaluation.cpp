#include "mae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mae/errors.hpp"
#include "mae/objectives.hpp"

namespace mae {

namespace {

std::mt19937_64 datum_stream(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::span<const double> row_of(const Tensor& t, std::size_t r) {
  return t.data().subspan(r * t.dim(1), t.dim(1));
}

Tensor gather_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t cols = t.dim(1);
  std::vector<double> values(t.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                             t.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return Tensor({end - begin, cols}, std::move(values));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t cols = t.dim(1);
  Tensor out({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(t.data().data() + rows[r] * cols, cols, out.data().data() + r * cols);
  }
  return out;
}

std::pair<double, double> mean_and_standard_error(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " must be a [N, dim] matrix");
}

}  // namespace

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw ContractError("log_mean_exp of an empty list");
  const double peak = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - peak);
  return peak + std::log(acc / static_cast<double>(values.size()));
}

double iw_nll_from_log_weights(std::span<const double> log_weights) {
  return -log_mean_exp(log_weights);
}

double iw_nll(const VaeModel& model, std::span<const double> x, std::size_t samples,
              std::mt19937_64& rng) {
  if (samples < 1) throw ContractError("iw_nll needs at least one importance sample");
  const auto& c = model.config();
  if (x.size() != c.data_dim) throw ShapeError("iw_nll: datum length mismatch");

  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor eps({samples, c.latent_dim});
  for (auto& v : eps.data()) v = normal(rng);
  Tensor xs({samples, c.data_dim});
  for (std::size_t s = 0; s < samples; ++s) std::copy(x.begin(), x.end(), xs.data().data() + s * c.data_dim);

  ad::Tape tape;
  ModelGraph g(model, tape);
  const ad::Var x_one = tape.input("x1", Tensor({1, c.data_dim}, std::vector<double>(x.begin(), x.end())));
  const ad::Var x_rep = tape.input("x", xs);
  const GaussianNode q = g.encode(x_one);
  const ad::Var z = graph::reparam_sample(q, tape.input("eps", eps));
  const ad::Var log_px_z = graph::bernoulli_log_likelihood(g.decode(z, x_rep), x_rep);
  const ad::Var log_w = log_px_z + g.prior_log_density(z) - graph::log_density(q, z);
  return iw_nll_from_log_weights(log_w.value().data());
}

NllSummary iw_nll_dataset(const VaeModel& model, const Tensor& binary, std::size_t samples,
                          std::uint64_t seed) {
  require_matrix(binary, "iw_nll_dataset input");
  NllSummary out;
  out.per_datum.reserve(binary.dim(0));
  for (std::size_t i = 0; i < binary.dim(0); ++i) {
    auto rng = datum_stream(seed, i);
    out.per_datum.push_back(iw_nll(model, row_of(binary, i), samples, rng));
  }
  std::tie(out.mean, out.standard_error) = mean_and_standard_error(out.per_datum);
  return out;
}

namespace {

struct RowTerms {
  std::vector<double> re;
  std::vector<double> kl;
};

// Per-row reconstruction error and KL for rows [begin, end).
RowTerms row_terms(const VaeModel& model, const Tensor& binary, std::size_t begin, std::size_t end,
                   std::uint64_t seed) {
  const auto& c = model.config();
  const std::size_t n = end - begin;
  Tensor eps({n, c.latent_dim});
  for (std::size_t r = 0; r < n; ++r) {
    auto rng = datum_stream(seed, begin + r);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < c.latent_dim; ++k) eps.at(r, k) = normal(rng);
  }
  ad::Tape tape;
  ModelGraph g(model, tape);
  const ad::Var x = tape.input("x", gather_rows(binary, begin, end));
  const GaussianNode q = g.encode(x);
  const ad::Var z = graph::reparam_sample(q, tape.input("eps", eps));
  const ad::Var re = -graph::bernoulli_log_likelihood(g.decode(z, x), x);
  const ad::Var kl = c.prior == PriorKind::kStandardNormal
                         ? ad::sum(graph::kl_to_standard(q), 1)
                         : graph::log_density(q, z) - g.prior_log_density(z);
  return RowTerms{re.value().values(), kl.value().values()};
}

constexpr std::size_t kEvalChunk = 100;

}  // namespace

NllSummary elbo_dataset(const VaeModel& model, const Tensor& binary, std::uint64_t seed) {
  require_matrix(binary, "elbo_dataset input");
  NllSummary out;
  for (std::size_t begin = 0; begin < binary.dim(0); begin += kEvalChunk) {
    const std::size_t end = std::min(binary.dim(0), begin + kEvalChunk);
    const RowTerms t = row_terms(model, binary, begin, end, seed);
    for (std::size_t r = 0; r < t.re.size(); ++r) out.per_datum.push_back(t.re[r] + t.kl[r]);
  }
  std::tie(out.mean, out.standard_error) = mean_and_standard_error(out.per_datum);
  return out;
}

MetricsRecord diagnostics(const VaeModel& model, const Tensor& binary, std::size_t samples,
                          std::uint64_t seed, std::size_t pair_batch) {
  require_matrix(binary, "diagnostics input");
  const std::size_t N = binary.dim(0);
  if (N == 0) throw ContractError("diagnostics on an empty dataset");
  if (pair_batch < 2) throw ContractError("diagnostics pair batch must be at least 2");

  MetricsRecord rec;
  rec.data_count = N;
  rec.importance_samples = samples;

  double re_sum = 0.0;
  double kl_sum = 0.0;
  for (std::size_t begin = 0; begin < N; begin += kEvalChunk) {
    const std::size_t end = std::min(N, begin + kEvalChunk);
    const RowTerms t = row_terms(model, binary, begin, end, seed);
    for (std::size_t r = 0; r < t.re.size(); ++r) {
      re_sum += t.re[r];
      kl_sum += t.kl[r];
    }
  }
  rec.re = re_sum / static_cast<double>(N);
  rec.kl = kl_sum / static_cast<double>(N);
  rec.elbo = rec.re + rec.kl;

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  double weight_sum = 0.0;
  for (std::size_t begin = 0; begin < N; begin += pair_batch) {
    const std::size_t end = std::min(N, begin + pair_batch);
    if (end - begin < 2) continue;
    ad::Tape tape;
    ModelGraph g(model, tape);
    const std::span<const std::size_t> rows(order.data() + begin, end - begin);
    const GaussianNode q = g.encode(tape.input("x", gather_rows(binary, rows)));
    const double w = static_cast<double>(end - begin);
    rec.mpd += w * mpd_estimate(q).value().item();
    rec.std += w * smooth_loss(q).value().item();
    rec.l_diverse += w * diverse_loss(q).value().item();
    weight_sum += w;
  }
  if (weight_sum > 0) {
    rec.mpd /= weight_sum;
    rec.std /= weight_sum;
    rec.l_diverse /= weight_sum;
  }
  rec.l_smooth = rec.std;

  if (samples > 0) rec.nll_iw = iw_nll_dataset(model, binary, samples, seed).mean;
  return rec;
}

Tensor extract_representations(const VaeModel& model, const Tensor& images) {
  require_matrix(images, "representation input");
  const std::size_t N = images.dim(0);
  const std::size_t K = model.config().latent_dim;
  Tensor reps({N, K});
  for (std::size_t begin = 0; begin < N; begin += kEvalChunk) {
    const std::size_t end = std::min(N, begin + kEvalChunk);
    const EncodedBatch q = encode_batch(model, gather_rows(images, begin, end));
    std::copy(q.mean.data().begin(), q.mean.data().end(), reps.data().data() + begin * K);
  }
  return reps;
}

// --- clustering ------------------------------------------------------------

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

namespace {

std::size_t nearest_row(const Tensor& rows, std::span<const double> point) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows.dim(0); ++r) {
    const double d = squared_distance(row_of(rows, r), point);
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, std::size_t clusters, std::uint64_t seed,
                    std::size_t max_iter) {
  require_matrix(points, "kmeans points");
  const std::size_t N = points.dim(0);
  const std::size_t F = points.dim(1);
  if (clusters == 0) throw ContractError("kmeans needs at least one cluster");
  if (clusters > N) {
    throw ContractError("kmeans: " + std::to_string(clusters) + " clusters for " + std::to_string(N) +
                        " points");
  }

  std::mt19937_64 rng(seed);
  KMeansResult out;
  out.heads = Tensor({clusters, F});
  std::vector<bool> chosen(N, false);
  std::vector<double> nearest(N, std::numeric_limits<double>::infinity());

  auto place_head = [&](std::size_t c, std::size_t idx) {
    chosen[idx] = true;
    std::copy_n(points.data().data() + idx * F, F, out.heads.data().data() + c * F);
    for (std::size_t i = 0; i < N; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(row_of(points, i), row_of(out.heads, c)));
    }
  };

  place_head(0, std::uniform_int_distribution<std::size_t>(0, N - 1)(rng));
  for (std::size_t c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) total += chosen[i] ? 0.0 : nearest[i];
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = N;
      for (std::size_t i = 0; i < N; ++i) {
        if (chosen[i]) continue;
        u -= nearest[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
      if (pick == N) {
        for (std::size_t i = N; i-- > 0;) {
          if (!chosen[i] && nearest[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // Every remaining point coincides with a head; take any unchosen one.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < N; ++i) {
        if (!chosen[i]) free.push_back(i);
      }
      pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    }
    place_head(c, pick);
  }

  out.assignments.assign(N, clusters);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t a = nearest_row(out.heads, row_of(points, i));
      if (a != out.assignments[i]) {
        out.assignments[i] = a;
        changed = true;
      }
    }
    if (!changed) break;

    Tensor sums({clusters, F}, 0.0);
    std::vector<std::size_t> counts(clusters, 0);
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t a = out.assignments[i];
      ++counts[a];
      for (std::size_t f = 0; f < F; ++f) sums.at(a, f) += points.at(i, f);
    }
    for (std::size_t c = 0; c < clusters; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t f = 0; f < F; ++f) out.heads.at(c, f) = sums.at(c, f) / static_cast<double>(counts[c]);
    }
    double distortion = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      distortion += squared_distance(row_of(points, i), row_of(out.heads, out.assignments[i]));
    }
    out.distortion.push_back(distortion);
    out.iterations = iter + 1;
  }
  return out;
}

double cluster_accuracy(const Tensor& heads, const std::vector<std::size_t>& assignments,
                        const Tensor& train_reps, const std::vector<int>& train_labels,
                        const std::vector<int>& eval_labels) {
  require_matrix(heads, "cluster heads");
  require_matrix(train_reps, "training representations");
  if (assignments.size() != eval_labels.size()) throw ShapeError("assignments and eval labels differ in length");
  if (train_reps.dim(0) != train_labels.size()) throw ShapeError("training reps and labels differ in length");
  if (heads.dim(1) != train_reps.dim(1)) throw ShapeError("heads and training reps differ in width");
  if (assignments.empty()) throw ContractError("cluster_accuracy over zero points");

  std::vector<int> cluster_label(heads.dim(0));
  for (std::size_t c = 0; c < heads.dim(0); ++c) {
    cluster_label[c] = train_labels[nearest_row(train_reps, row_of(heads, c))];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] >= heads.dim(0)) throw ContractError("assignment refers to a missing cluster");
    if (cluster_label[assignments[i]] == eval_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(assignments.size());
}

// --- KNN -------------------------------------------------------------------

std::vector<int> knn_predict(const Tensor& train_reps, const std::vector<int>& train_labels,
                             const Tensor& test_reps, std::size_t k) {
  require_matrix(train_reps, "training representations");
  require_matrix(test_reps, "test representations");
  const std::size_t N = train_reps.dim(0);
  if (N == 0 || train_labels.empty()) throw ContractError("knn with an empty training set");
  if (train_labels.size() != N) throw ShapeError("training reps and labels differ in length");
  if (k == 0 || k > N) throw ContractError("knn: k must be in [1, #train]");

  std::vector<int> predictions;
  std::vector<std::pair<double, std::size_t>> dist(N);
  for (std::size_t t = 0; t < test_reps.dim(0); ++t) {
    for (std::size_t i = 0; i < N; ++i) dist[i] = {squared_distance(row_of(train_reps, i), row_of(test_reps, t)), i};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::map<int, std::pair<std::size_t, double>> votes;  // label -> (count, summed distance)
    for (std::size_t j = 0; j < k; ++j) {
      auto& v = votes[train_labels[dist[j].second]];
      ++v.first;
      v.second += std::sqrt(dist[j].first);
    }
    auto best = votes.begin();
    for (auto it = votes.begin(); it != votes.end(); ++it) {
      const bool more = it->second.first > best->second.first;
      const bool tie_closer = it->second.first == best->second.first && it->second.second < best->second.second;
      if (more || tie_closer) best = it;
    }
    predictions.push_back(best->first);
  }
  return predictions;
}

double knn_classify(const Tensor& train_reps, const std::vector<int>& train_labels,
                    const Tensor& test_reps, const std::vector<int>& test_labels, std::size_t k) {
  if (test_labels.size() != test_reps.dim(0)) throw ShapeError("test reps and labels differ in length");
  const auto pred = knn_predict(train_reps, train_labels, test_reps, k);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// --- logistic probe --------------------------------------------------------

ProbeResult logistic_probe(const Tensor& train_reps, const std::vector<int>& train_labels,
                           const Tensor& test_reps, const std::vector<int>& test_labels,
                           const ProbeOptions& options) {
  require_matrix(train_reps, "training representations");
  require_matrix(test_reps, "test representations");
  const std::size_t N = train_reps.dim(0);
  const std::size_t F = train_reps.dim(1);
  if (train_labels.size() != N) throw ShapeError("training reps and labels differ in length");
  if (test_labels.size() != test_reps.dim(0)) throw ShapeError("test reps and labels differ in length");
  if (test_reps.dim(1) != F) throw ShapeError("train and test representations differ in width");
  {
    std::vector<int> distinct(train_labels);
    std::sort(distinct.begin(), distinct.end());
    if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
      throw ContractError("logistic_probe needs at least two classes in the training set");
    }
  }
  int max_label = 0;
  for (int l : train_labels) max_label = std::max(max_label, l);
  for (int l : test_labels) max_label = std::max(max_label, l);
  const std::size_t C = static_cast<std::size_t>(max_label) + 1;

  std::vector<double> mu(F, 0.0);
  std::vector<double> sd(F, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t f = 0; f < F; ++f) mu[f] += train_reps.at(i, f);
  }
  for (auto& m : mu) m /= static_cast<double>(N);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t f = 0; f < F; ++f) sd[f] += (train_reps.at(i, f) - mu[f]) * (train_reps.at(i, f) - mu[f]);
  }
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(N));
    if (s < 1e-12) s = 1.0;
  }
  auto standardized = [&](const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.dim(0); ++i) {
      for (std::size_t f = 0; f < F; ++f) out.at(i, f) = (t.at(i, f) - mu[f]) / sd[f];
    }
    return out;
  };
  const Tensor xtr = standardized(train_reps);
  const Tensor xte = standardized(test_reps);

  Tensor w({F, C}, 0.0);
  std::vector<double> b(C, 0.0);
  std::vector<double> probs(C);

  auto softmax_row = [&](const Tensor& x, std::size_t i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      double s = b[c];
      for (std::size_t f = 0; f < F; ++f) s += x.at(i, f) * w.at(f, c);
      probs[c] = s;
      peak = std::max(peak, s);
    }
    double z = 0.0;
    for (auto& p : probs) {
      p = std::exp(p - peak);
      z += p;
    }
    for (auto& p : probs) p /= z;
  };

  ProbeResult result;
  Tensor gw({F, C});
  std::vector<double> gb(C);
  for (std::size_t iter = 0; iter < options.iterations; ++iter) {
    gw.fill(0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      softmax_row(xtr, i);
      const auto y = static_cast<std::size_t>(train_labels[i]);
      loss -= std::log(std::max(probs[y], 1e-300));
      for (std::size_t c = 0; c < C; ++c) {
        const double d = probs[c] - (c == y ? 1.0 : 0.0);
        gb[c] += d;
        for (std::size_t f = 0; f < F; ++f) gw.at(f, c) += d * xtr.at(i, f);
      }
    }
    double reg = 0.0;
    for (double v : w.data()) reg += v * v;
    result.loss_history.push_back(loss / static_cast<double>(N) + 0.5 * options.l2 * reg);
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t c = 0; c < C; ++c) {
        const double grad = gw.at(f, c) / static_cast<double>(N) + options.l2 * w.at(f, c);
        w.at(f, c) -= options.step_size * grad;
      }
    }
    for (std::size_t c = 0; c < C; ++c) b[c] -= options.step_size * gb[c] / static_cast<double>(N);
  }

  auto accuracy = [&](const Tensor& x, const std::vector<int>& labels) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      softmax_row(x, i);
      const auto pred = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      correct += pred == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(x.dim(0));
  };
  result.train_accuracy = accuracy(xtr, train_labels);
  result.test_accuracy = accuracy(xte, test_labels);
  return result;
}

std::vector<std::size_t> stratified_subset(const std::vector<int>& labels, std::size_t budget,
                                           std::uint64_t seed) {
  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (budget == 0 || budget >= labels.size()) return all;

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& [_, idx] : by_class) std::shuffle(idx.begin(), idx.end(), rng);

  std::vector<std::size_t> picked;
  for (std::size_t round = 0; picked.size() < budget; ++round) {
    for (auto& [_, idx] : by_class) {
      if (round < idx.size() && picked.size() < budget) picked.push_back(idx[round]);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace mae
