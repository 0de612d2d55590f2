#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mae/model.hpp"
#include "mae/training.hpp"

namespace mae {

// Flat `key = value` text. '#' starts a comment; blank lines are ignored.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KeyValueConfig load(const std::string& path);

  // `key=value` override; replaces any earlier value.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  // Throws ConfigError naming every key outside `known`.
  void reject_unknown(const std::set<std::string>& known) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct SynthConfig {
  std::size_t clusters = 10;
  std::size_t side = 16;
  std::size_t per_cluster = 500;
  std::size_t test_per_cluster = 100;
  double flip = 0.05;
};

// Everything a CLI verb may need. Unset paths are empty.
struct RunConfig {
  std::string experiment = "run";
  std::string output_dir = ".";
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::string checkpoint;          // model to evaluate
  std::string compare_checkpoint;  // second model for reconstruction triptychs

  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed = 0;
  bool zero_latent_init = false;  // start training from the collapsed point

  std::size_t importance_samples = 512;
  std::vector<std::size_t> eval_seeds{0};
  std::size_t eval_limit = 0;  // 0 = whole split
  std::size_t clusters = 10;
  std::size_t knn_k = 10;
  std::vector<std::size_t> label_budgets{100, 1000, 0};  // 0 = all labels
  ProbeOptions probe;
  std::size_t grid_columns = 10;
  std::size_t sample_count = 100;

  std::size_t theorem_trials = 50;
  std::size_t theorem_max_atoms = 8;
  double theorem_tol = 1e-10;

  SynthConfig synth;
};

const std::set<std::string>& run_config_keys();
RunConfig to_run_config(const KeyValueConfig& kv);

}  // namespace mae
