#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "mae/data.hpp"
#include "mae/errors.hpp"
#include "mae/evaluation.hpp"
#include "mae/training.hpp"
#include "model_oracles.hpp"
#include "oracles.hpp"

using namespace mae;

namespace {

ModelConfig toy_config(std::size_t d, std::size_t k) {
  ModelConfig c;
  c.data_dim = d;
  c.latent_dim = k;
  c.encoder_hidden = {8};
  c.decoder_hidden = {8};
  c.decoder = DecoderKind::kFactorized;
  return c;
}

Tensor binary_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  Tensor t({n, d});
  for (auto& v : t.data()) v = coin(rng) ? 1.0 : 0.0;
  return t;
}

double plain_kl(const DiagGaussian& a, const DiagGaussian& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    const double v1 = std::exp(a.log_var[k]), v2 = std::exp(b.log_var[k]);
    const double d = a.mean[k] - b.mean[k];
    s += 0.5 * (std::log(v2 / v1) + (v1 + d * d) / v2 - 1);
  }
  return s;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.data().begin() + r * t.dim(1), t.data().begin() + (r + 1) * t.dim(1)};
}

}  // namespace

TEST_CASE("log mean exp") {
  const std::vector<double> small{0.1, -0.4, 1.3};
  const double naive = std::log((std::exp(0.1) + std::exp(-0.4) + std::exp(1.3)) / 3);
  CHECK(log_mean_exp(small) == doctest::Approx(naive).epsilon(1e-14));
  const std::vector<double> big{1000.0, 1000.0};
  CHECK(log_mean_exp(big) == 1000.0);
  const std::vector<double> tiny{-2000.0, -2000.0 + std::log(3.0)};
  CHECK(log_mean_exp(tiny) == doctest::Approx(-2000.0 + std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(log_mean_exp(std::vector<double>{}), ContractError);
}

TEST_CASE("collapsed model gives the exact marginal for any sample count") {
  VaeModel m = VaeModel::create(toy_config(4, 2), 1);
  m.set_zero();
  m.params().at("dec.b_out") = Tensor::vector({0.3, -1.2, 2.0, 0.0});
  const std::vector<double> x{1, 0, 1, 1};
  double expect = 0;  // -log p(x) with independent sigmoid pixels
  const double b[] = {0.3, -1.2, 2.0, 0.0};
  for (int i = 0; i < 4; ++i) expect -= x[i] ? std::log(oracle::sigmoid(b[i])) : std::log(1 - oracle::sigmoid(b[i]));
  for (std::size_t s : {1u, 7u, 64u}) {
    std::mt19937_64 rng(s);
    CHECK(iw_nll(m, x, s, rng) == doctest::Approx(expect).epsilon(1e-12));
  }
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(iw_nll(m, x, 0, rng), ContractError);
}

TEST_CASE("importance weighted estimate converges to the quadrature marginal") {
  // One latent dimension, so p(x) = integral of N(z) p(x|z) by quadrature.
  VaeModel m = VaeModel::create(toy_config(3, 1), 2);
  std::mt19937_64 jitter_rng(5);
  oracle::jitter(m, 0.5, jitter_rng);
  const std::vector<double> x{1, 0, 1};
  const double px = oracle::integrate(
      [&](double z) {
        const auto logits = decode_factorized(m, std::vector<double>{z});
        double like = 1;
        for (int i = 0; i < 3; ++i) like *= x[i] ? oracle::sigmoid(logits[i]) : 1 - oracle::sigmoid(logits[i]);
        return oracle::gaussian_pdf(z, 0, 1) * like;
      },
      -12, 12);
  const double exact = -std::log(px);

  std::vector<double> runs;
  for (int r = 0; r < 20; ++r) {
    std::mt19937_64 rng(100 + r);
    runs.push_back(iw_nll(m, x, 1024, rng));
  }
  double mean = 0;
  for (double v : runs) mean += v / 20;
  double ss = 0;
  for (double v : runs) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / 19 / 20);
  CHECK(std::abs(mean - exact) <= 3 * se + 1e-9);
}

TEST_CASE("importance weighting tightens the bound on a trained model") {
  const Dataset d = synth_mixture(3, 3, 40, 0.1, 7);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 20;
  tc.seed = 3;
  const VaeModel m = train(VaeModel::create(toy_config(9, 2), 3), d, tc).polyak;
  std::mt19937_64 rng(4);
  const Tensor x = dynamic_binarize(d.images, rng);
  const NllSummary s1 = iw_nll_dataset(m, x, 1, 9);
  const NllSummary s64 = iw_nll_dataset(m, x, 64, 10);
  const NllSummary elbo = elbo_dataset(m, x, 11);
  CHECK(s64.mean <= s1.mean + 3 * std::hypot(s1.standard_error, s64.standard_error));
  CHECK(s64.mean <= elbo.mean + 3 * std::hypot(elbo.standard_error, s64.standard_error));
  // Per-datum streams make the result independent of the other rows.
  const NllSummary again = iw_nll_dataset(m, x, 64, 10);
  CHECK(again.per_datum == s64.per_datum);
}

TEST_CASE("diagnostics on a collapsed model") {
  VaeModel m = VaeModel::create(toy_config(5, 3), 3);
  m.set_zero();
  std::mt19937_64 rng(1);
  const MetricsRecord r = diagnostics(m, binary_rows(30, 5, rng), 4, 2, 10);
  CHECK(r.kl == 0.0);
  CHECK(r.mpd == 0.0);
  CHECK(r.std == doctest::Approx(1e-4).epsilon(1e-6));  // sqrt of the variance floor
  CHECK(r.re == doctest::Approx(5 * std::log(2.0)).epsilon(1e-12));
  CHECK(r.nll_iw == doctest::Approx(5 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("diagnostics fields are consistent and match all-pairs enumeration") {
  VaeModel m = VaeModel::create(toy_config(6, 2), 4);
  std::mt19937_64 rng(2);
  oracle::jitter(m, 0.3, rng);
  const Tensor x = binary_rows(12, 6, rng);
  const MetricsRecord r = diagnostics(m, x, 0, 5, 100);
  CHECK(std::abs(r.elbo - (r.re + r.kl)) <= 1e-9);
  CHECK(std::isnan(r.nll_iw));

  double mpd = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = 0; j < 12; ++j) {
      if (i != j) mpd += plain_kl(encode(m, row(x, i)), encode(m, row(x, j)));
    }
  }
  mpd /= 12.0 * 11.0;
  CHECK(r.mpd == doctest::Approx(mpd).epsilon(1e-12));
}

TEST_CASE("representations are posterior means") {
  VaeModel m = VaeModel::create(toy_config(6, 3), 5);
  std::mt19937_64 rng(3);
  Tensor x = binary_rows(150, 6, rng);
  for (std::size_t c = 0; c < 6; ++c) x.at(149, c) = x.at(3, c);
  const Tensor reps = extract_representations(m, x);
  CHECK(reps.shape() == Shape{150, 3});
  CHECK(row(reps, 149) == row(reps, 3));
  for (std::size_t i : {0u, 77u, 120u}) CHECK(row(reps, i) == encode(m, row(x, i)).mean);
  m.set_zero();
  const Tensor zero = extract_representations(m, x);
  CHECK(zero == Tensor({150, 3}, 0.0));
}

TEST_CASE("kmeans recovers separated clouds") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.1);
  Tensor pts({40, 2});
  for (std::size_t i = 0; i < 40; ++i) {
    pts.at(i, 0) = (i < 20 ? -5.0 : 5.0) + n(rng);
    pts.at(i, 1) = n(rng);
  }
  const KMeansResult r = kmeans(pts, 2, 1);
  for (std::size_t i = 0; i < 40; ++i) CHECK((r.assignments[i] == r.assignments[0]) == (i < 20));
  CHECK_THROWS_AS(kmeans(pts, 41, 1), ContractError);
}

TEST_CASE("kmeans with one cluster per point") {
  std::mt19937_64 rng(5);
  const Tensor pts = oracle::random_tensor({7, 3}, rng);
  const KMeansResult r = kmeans(pts, 7, 2);
  CHECK(std::set<std::size_t>(r.assignments.begin(), r.assignments.end()).size() == 7);
  CHECK(r.distortion.back() == 0.0);
}

TEST_CASE("kmeans distortion never increases") {
  std::mt19937_64 rng(6);
  const Tensor pts = oracle::random_tensor({300, 4}, rng);
  const KMeansResult r = kmeans(pts, 8, 3);
  REQUIRE(r.distortion.size() >= 2);
  for (std::size_t i = 1; i < r.distortion.size(); ++i) CHECK(r.distortion[i] <= r.distortion[i - 1] + 1e-12);

  // Final distortion recomputed from the returned heads.
  double d = 0;
  for (std::size_t i = 0; i < 300; ++i) d += squared_distance(row(pts, i), row(r.heads, r.assignments[i]));
  CHECK(d == doctest::Approx(r.distortion.back()).epsilon(1e-9));
}

TEST_CASE("cluster accuracy") {
  const Tensor train_reps({4, 1}, {0.0, 0.1, 10.0, 10.1});
  const std::vector<int> train_labels{0, 0, 1, 1};

  // Perfect clustering.
  const Tensor heads({2, 1}, {10.05, 0.05});
  CHECK(cluster_accuracy(heads, {1, 1, 0, 0}, train_reps, train_labels, {0, 0, 1, 1}) == 1.0);

  // One cluster over two balanced classes.
  const Tensor one({1, 1}, {0.2});
  CHECK(cluster_accuracy(one, {0, 0, 0, 0}, train_reps, train_labels, {0, 0, 1, 1}) == 0.5);

  // Three clusters labelled by hand: head 0 -> nearest is 0.1 (label 0),
  // head 1 -> 10.0 (label 1), head 2 at 4.0 -> 0.1 (label 0).
  const Tensor three({3, 1}, {0.3, 9.0, 4.0});
  const std::vector<std::size_t> assign{0, 1, 2, 2, 1, 0};
  const std::vector<int> truth{0, 1, 1, 0, 0, 0};
  // predicted labels 0 1 0 0 1 0 -> matches at 0, 1, 3, 5
  CHECK(cluster_accuracy(three, assign, train_reps, train_labels, truth) == doctest::Approx(4.0 / 6.0));
}

TEST_CASE("knn classification") {
  std::mt19937_64 rng(7);
  const Tensor train = oracle::random_tensor({30, 2}, rng);
  std::vector<int> labels(30);
  for (std::size_t i = 0; i < 30; ++i) labels[i] = static_cast<int>(i % 3);

  const Tensor dup({1, 2}, row(train, 17));
  CHECK(knn_predict(train, labels, dup, 1) == std::vector<int>{labels[17]});

  const std::vector<int> same(30, 2);
  const Tensor probe = oracle::random_tensor({5, 2}, rng);
  CHECK(knn_predict(train, same, probe, 10) == std::vector<int>(5, 2));

  // Exhaustive vote: sort by distance, count the first k, break ties by
  // summed distance.
  const Tensor test = oracle::random_tensor({25, 2}, rng);
  const auto got = knn_predict(train, labels, test, 3);
  for (std::size_t t = 0; t < 25; ++t) {
    std::vector<std::pair<double, int>> d;
    for (std::size_t i = 0; i < 30; ++i) d.push_back({std::sqrt(squared_distance(row(test, t), row(train, i))), labels[i]});
    std::sort(d.begin(), d.end());
    std::map<int, std::pair<int, double>> votes;
    for (int i = 0; i < 3; ++i) {
      votes[d[i].second].first += 1;
      votes[d[i].second].second += d[i].first;
    }
    int best = -1;
    for (const auto& [label, v] : votes) {
      if (best < 0 || v.first > votes[best].first ||
          (v.first == votes[best].first && v.second < votes[best].second)) {
        best = label;
      }
    }
    CHECK(got[t] == best);
  }
  CHECK(knn_classify(train, labels, dup, {labels[17]}, 1) == 1.0);
  CHECK_THROWS(knn_predict(Tensor({0, 2}), {}, dup, 1));
}

TEST_CASE("logistic probe") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.3);
  Tensor x({60, 2});
  std::vector<int> y(60);
  for (std::size_t i = 0; i < 60; ++i) {
    y[i] = static_cast<int>(i % 2);
    x.at(i, 0) = (y[i] ? 2.0 : -2.0) + n(rng);
    x.at(i, 1) = n(rng);
  }
  const ProbeResult fit = logistic_probe(x, y, x, y);
  CHECK(fit.train_accuracy == 1.0);

  // Zero iterations: all logits tie, every prediction is class 0.
  const ProbeResult none = logistic_probe(x, y, x, y, {1e-4, 0, 0.5});
  CHECK(none.test_accuracy == doctest::Approx(0.5));

  const ProbeResult slow = logistic_probe(x, y, x, y, {1e-4, 100, 0.05});
  for (std::size_t i = 1; i < slow.loss_history.size(); ++i) {
    CHECK(slow.loss_history[i] <= slow.loss_history[i - 1]);
  }
  CHECK_THROWS(logistic_probe(x, std::vector<int>(60, 1), x, y));
}

TEST_CASE("stratified label budgets") {
  std::vector<int> labels;
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 25; ++i) labels.push_back(c);
  }
  const auto pick = stratified_subset(labels, 20, 3);
  REQUIRE(pick.size() == 20);
  std::map<int, int> count;
  for (auto i : pick) ++count[labels[i]];
  for (int c = 0; c < 4; ++c) CHECK(count[c] == 5);
  CHECK(std::set<std::size_t>(pick.begin(), pick.end()).size() == 20);
  CHECK(stratified_subset(labels, 0, 3).size() == 100);
  CHECK(stratified_subset(labels, 20, 3) == pick);
}
