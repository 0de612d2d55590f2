// Command-line front end: one verb per experiment, each driven by a flat
// key=value config plus --set overrides.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "mae/config.hpp"
#include "mae/data.hpp"
#include "mae/errors.hpp"
#include "mae/evaluation.hpp"
#include "mae/io.hpp"
#include "mae/model.hpp"
#include "mae/theorem.hpp"
#include "mae/training.hpp"

namespace {

using namespace mae;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitVerification = 3;

std::string out_path(const RunConfig& rc, const std::string& suffix) {
  return (std::filesystem::path(rc.output_dir) / (rc.experiment + suffix)).string();
}

void ensure_output_dir(const RunConfig& rc) {
  std::error_code ec;
  std::filesystem::create_directories(rc.output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + rc.output_dir + "': " + ec.message());
}

Dataset load_split(const std::string& images, const std::string& labels, const std::string& split) {
  if (images.empty()) throw ConfigError(split + "_images is not set");
  Dataset d = load_idx_dataset(images, labels, split);
  d.validate();
  return d;
}

// Test split when configured, otherwise the training split.
Dataset load_eval_split(const RunConfig& rc) {
  Dataset d = rc.test_images.empty() ? load_split(rc.train_images, rc.train_labels, "train")
                                     : load_split(rc.test_images, rc.test_labels, "test");
  if (rc.eval_limit > 0 && rc.eval_limit < d.size()) {
    std::vector<std::size_t> head(rc.eval_limit);
    for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
    d = d.subset(head);
  }
  return d;
}

VaeModel load_model(const RunConfig& rc) {
  if (rc.checkpoint.empty()) throw ConfigError("checkpoint is not set");
  return load_checkpoint(rc.checkpoint);
}

Tensor binarized(const Dataset& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return dynamic_binarize(d.images, rng);
}

std::vector<int> require_labels(const Dataset& d) {
  if (!d.has_labels()) throw ConfigError(d.split + " split has no labels");
  return d.labels;
}

int cmd_synth(const RunConfig& rc) {
  ensure_output_dir(rc);
  const auto& s = rc.synth;
  const Dataset all = synth_mixture(s.clusters, s.side, s.per_cluster + s.test_per_cluster, s.flip, rc.train.seed);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (std::size_t c = 0; c < s.clusters; ++c) {
    const std::size_t base = c * (s.per_cluster + s.test_per_cluster);
    for (std::size_t i = 0; i < s.per_cluster; ++i) train_idx.push_back(base + i);
    for (std::size_t i = 0; i < s.test_per_cluster; ++i) test_idx.push_back(base + s.per_cluster + i);
  }
  save_idx_dataset(all.subset(train_idx), out_path(rc, "-train-images.idx"), out_path(rc, "-train-labels.idx"));
  std::cout << "wrote " << train_idx.size() << " training images to " << out_path(rc, "-train-images.idx") << "\n";
  if (!test_idx.empty()) {
    save_idx_dataset(all.subset(test_idx), out_path(rc, "-test-images.idx"), out_path(rc, "-test-labels.idx"));
    std::cout << "wrote " << test_idx.size() << " test images to " << out_path(rc, "-test-images.idx") << "\n";
  }
  return kExitOk;
}

int cmd_train(const RunConfig& rc) {
  ensure_output_dir(rc);
  const Dataset train_data = load_split(rc.train_images, rc.train_labels, "train");
  ModelConfig mc = rc.model;
  mc.data_dim = train_data.dim();
  TrainConfig tc = rc.train;
  if (tc.checkpoint_every > 0) tc.checkpoint_path = out_path(rc, ".ckpt");
  tc.on_epoch = [](const MetricsRecord& r) {
    std::fprintf(stderr, "epoch %ld  elbo %.4f  re %.4f  kl %.4f  mpd %.4f  std %.4f\n", r.epoch, r.elbo, r.re, r.kl,
                 r.mpd, r.std);
  };
  VaeModel initial = VaeModel::create(mc, rc.model_seed);
  if (rc.zero_latent_init) initial.zero_latent_paths();
  const TrainResult result = train(initial, train_data, tc);
  save_checkpoint(result.polyak, out_path(rc, ".ckpt"));
  write_metrics_csv(out_path(rc, "-metrics.csv"), result.history);
  std::cout << "checkpoint " << out_path(rc, ".ckpt") << "\nmetrics " << out_path(rc, "-metrics.csv") << "\n";
  return kExitOk;
}

int cmd_eval_nll(const RunConfig& rc) {
  ensure_output_dir(rc);
  const VaeModel model = load_model(rc);
  const Dataset data = load_eval_split(rc);
  std::vector<MetricsRecord> rows;
  for (std::size_t seed : rc.eval_seeds) {
    const Tensor x = binarized(data, seed);
    const NllSummary elbo = elbo_dataset(model, x, seed);
    const NllSummary nll = iw_nll_dataset(model, x, rc.importance_samples, seed);
    std::printf("seed %zu  elbo %.4f +- %.4f  nll_iw(S=%zu) %.4f +- %.4f\n", seed, elbo.mean, elbo.standard_error,
                rc.importance_samples, nll.mean, nll.standard_error);
    MetricsRecord r;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.re = r.kl = r.mpd = r.std = r.l_diverse = r.l_smooth = nan;
    r.elbo = elbo.mean;
    r.nll_iw = nll.mean;
    rows.push_back(r);
  }
  write_metrics_csv(out_path(rc, "-nll.csv"), rows);
  return kExitOk;
}

int cmd_diagnose(const RunConfig& rc) {
  ensure_output_dir(rc);
  const VaeModel model = load_model(rc);
  const Dataset data = load_eval_split(rc);
  std::vector<MetricsRecord> rows;
  std::printf("%6s %10s %10s %10s %10s %10s %10s\n", "seed", "re", "kl", "mpd", "std", "elbo", "nll_iw");
  for (std::size_t seed : rc.eval_seeds) {
    const MetricsRecord r = diagnostics(model, binarized(data, seed), rc.importance_samples, seed);
    std::printf("%6zu %10.4f %10.4f %10.4f %10.4f %10.4f %10.4f\n", seed, r.re, r.kl, r.mpd, r.std, r.elbo, r.nll_iw);
    rows.push_back(r);
  }
  write_metrics_csv(out_path(rc, "-diagnostics.csv"), rows);
  return kExitOk;
}

int cmd_cluster(const RunConfig& rc) {
  ensure_output_dir(rc);
  const VaeModel model = load_model(rc);
  const Dataset train_data = load_split(rc.train_images, rc.train_labels, "train");
  const Dataset eval_data = load_eval_split(rc);
  const Tensor train_reps = extract_representations(model, train_data.images);
  const Tensor eval_reps = extract_representations(model, eval_data.images);
  const auto train_labels = require_labels(train_data);
  const auto eval_labels = require_labels(eval_data);
  std::vector<ResultRow> rows;
  for (std::size_t seed : rc.eval_seeds) {
    const KMeansResult km = kmeans(eval_reps, rc.clusters, seed);
    const double acc = cluster_accuracy(km.heads, km.assignments, train_reps, train_labels, eval_labels);
    std::printf("kmeans K=%zu seed %zu  accuracy %.4f\n", rc.clusters, seed, acc);
    rows.push_back({"cluster", rc.experiment, seed, std::to_string(rc.clusters), acc});
  }
  write_results_csv(out_path(rc, "-cluster.csv"), rows);
  return kExitOk;
}

int cmd_classify(const RunConfig& rc) {
  ensure_output_dir(rc);
  const VaeModel model = load_model(rc);
  const Dataset train_data = load_split(rc.train_images, rc.train_labels, "train");
  const Dataset eval_data = load_eval_split(rc);
  const Tensor train_reps = extract_representations(model, train_data.images);
  const Tensor eval_reps = extract_representations(model, eval_data.images);
  const auto train_labels = require_labels(train_data);
  const auto eval_labels = require_labels(eval_data);
  std::vector<ResultRow> rows;
  for (std::size_t budget : rc.label_budgets) {
    const std::string param = budget == 0 ? "all" : std::to_string(budget);
    for (std::size_t seed : rc.eval_seeds) {
      const auto idx = stratified_subset(train_labels, budget, seed);
      const Dataset sub = train_data.subset(idx);
      const Tensor sub_reps = extract_representations(model, sub.images);
      const double knn = knn_classify(sub_reps, sub.labels, eval_reps, eval_labels, std::min(rc.knn_k, sub.size()));
      const double logistic = logistic_probe(sub_reps, sub.labels, eval_reps, eval_labels, rc.probe).test_accuracy;
      std::printf("labels %s seed %zu  knn %.4f  logistic %.4f\n", param.c_str(), seed, knn, logistic);
      rows.push_back({"knn", rc.experiment, seed, param, knn});
      rows.push_back({"logistic", rc.experiment, seed, param, logistic});
    }
  }
  write_results_csv(out_path(rc, "-classify.csv"), rows);
  return kExitOk;
}

// Decoder reconstructions drawn from the posterior mean code.
Tensor reconstruct(const VaeModel& model, const Tensor& x, std::uint64_t seed) {
  const EncodedBatch q = encode_batch(model, x);
  std::mt19937_64 rng(seed);
  return sample_pixels(model, q.mean, rng);
}

int cmd_reconstruct(const RunConfig& rc) {
  ensure_output_dir(rc);
  const VaeModel a = load_model(rc);
  const Dataset data = load_eval_split(rc);
  const std::size_t n = std::min(rc.sample_count, data.size());
  std::vector<std::size_t> head(n);
  for (std::size_t i = 0; i < n; ++i) head[i] = i;
  const Tensor x = binarized(data.subset(head), rc.eval_seeds.front());

  std::vector<Tensor> panels{x, reconstruct(a, x, rc.eval_seeds.front())};
  if (!rc.compare_checkpoint.empty()) {
    panels.push_back(reconstruct(load_checkpoint(rc.compare_checkpoint), x, rc.eval_seeds.front()));
  }
  const std::size_t D = data.dim();
  Tensor tiles({n * panels.size(), D});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < panels.size(); ++p) {
      for (std::size_t d = 0; d < D; ++d) tiles.at(i * panels.size() + p, d) = panels[p].at(i, d);
    }
  }
  write_image_grid(out_path(rc, "-reconstruct.pgm"), tiles, data.rows, data.cols, panels.size());
  std::cout << "grid " << out_path(rc, "-reconstruct.pgm") << "\n";
  return kExitOk;
}

int cmd_sample(const RunConfig& rc) {
  ensure_output_dir(rc);
  const VaeModel model = load_model(rc);
  if (rc.sample_count == 0) throw ConfigError("sample_count must be positive");
  std::size_t side = 1;
  while (side * side < model.config().data_dim) ++side;
  if (side * side != model.config().data_dim) throw ConfigError("sample grids need square images");
  std::mt19937_64 rng(rc.eval_seeds.front());
  const Tensor z = sample_prior(model, rc.sample_count, rng);
  write_image_grid(out_path(rc, "-samples.pgm"), sample_pixels(model, z, rng), side, side, rc.grid_columns);
  std::cout << "grid " << out_path(rc, "-samples.pgm") << "\n";
  return kExitOk;
}

int cmd_verify_theorem(const RunConfig& rc) {
  std::vector<std::pair<std::string, OracleReport>> reports;
  DiscreteJointModel worked;
  worked.p_x = {0.5, 0.5};
  worked.q_z_given_x = Tensor::matrix({{0.8, 0.2}, {0.2, 0.8}});
  reports.emplace_back("worked 2x2", verify_theorem1(worked, rc.theorem_tol));

  std::mt19937_64 rng(rc.train.seed);
  std::uniform_int_distribution<std::size_t> atoms(1, rc.theorem_max_atoms);
  for (std::size_t t = 0; t < rc.theorem_trials; ++t) {
    const std::size_t nx = atoms(rng);
    const std::size_t nz = atoms(rng);
    reports.emplace_back("random " + std::to_string(nx) + "x" + std::to_string(nz),
                         verify_theorem1(DiscreteJointModel::random(nx, nz, rng), rc.theorem_tol));
  }

  bool all_passed = true;
  std::printf("%-14s %14s %14s %14s %14s %10s  %s\n", "model", "mpd_exact", "mi_kl", "reverse_kl", "symmetric_sum",
              "gap", "status");
  for (const auto& [name, r] : reports) {
    std::printf("%-14s %14.9f %14.9f %14.9f %14.9f %10.2e  %s\n", name.c_str(), r.mpd_exact, r.mi_kl, r.reverse_kl,
                r.symmetric_sum, r.gap, r.passed ? "ok" : "FAIL");
    all_passed = all_passed && r.passed;
  }
  return all_passed ? kExitOk : kExitVerification;
}

}  // namespace

// Training allocates and frees the same large buffers every step; keep them
// in the heap instead of returning them to the OS each time.
void retain_freed_memory() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

int main(int argc, char** argv) {
  retain_freed_memory();
  CLI::App app{"Mutual posterior-divergence VAE experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;

  struct Verb {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
  };
  const Verb verbs[] = {
      {"train", "train a model and write its checkpoint and metrics", cmd_train},
      {"eval-nll", "importance-weighted NLL of a checkpoint", cmd_eval_nll},
      {"diagnose", "RE / KL / MPD / STD / ELBO / NLL table", cmd_diagnose},
      {"cluster", "K-Means accuracy on posterior means", cmd_cluster},
      {"classify", "KNN and logistic probes at several label budgets", cmd_classify},
      {"reconstruct", "reconstruction grid: original | model | comparison model", cmd_reconstruct},
      {"sample", "grid of samples from the prior", cmd_sample},
      {"verify-theorem", "exact check of MPD against the symmetric MI form", cmd_verify_theorem},
      {"synth-data", "write a synthetic binary mixture as IDX files", cmd_synth},
  };
  std::vector<std::pair<CLI::App*, const Verb*>> subs;
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    sub->add_option("-c,--config", config_path, "key = value config file");
    sub->add_option("-s,--set", overrides, "key=value override (repeatable)");
    subs.emplace_back(sub, &v);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
    for (const auto& o : overrides) kv.set(o);
    const RunConfig rc = to_run_config(kv);
    for (const auto& [sub, verb] : subs) {
      if (sub->parsed()) return verb->run(rc);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
