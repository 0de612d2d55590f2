#include "mae/config.hpp"

#include <cctype>
#include <cstdlib>
#include <sstream>

#include "mae/errors.hpp"
#include "mae/fileutil.hpp"

namespace mae {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::pair<std::string, std::string> split_assignment(const std::string& text, const std::string& where) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key = value, got '" + text + "'");
  std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {key, trim(text.substr(eq + 1))};
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(n);
    auto [key, value] = split_assignment(line, where);
    if (cfg.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  try {
    return parse(read_file(path), path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

void KeyValueConfig::set(const std::string& assignment) {
  auto [key, value] = split_assignment(assignment, "--set");
  values_[key] = value;
}

void KeyValueConfig::reject_unknown(const std::set<std::string>& known) const {
  std::string unknown;
  for (const auto& [key, _] : values_) {
    if (!known.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  }
  if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown);
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (it->second.empty() || *end != '\0') throw ConfigError(key + ": expected a number, got '" + it->second + "'");
  return v;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  char* end = nullptr;
  const long long v = std::strtoll(it->second.c_str(), &end, 10);
  if (it->second.empty() || *end != '\0') throw ConfigError(key + ": expected an integer, got '" + it->second + "'");
  return v;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(key + ": must be nonnegative");
  return static_cast<std::size_t>(v);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> KeyValueConfig::get_sizes(const std::string& key,
                                                   const std::vector<std::size_t>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::size_t> out;
  std::istringstream in(it->second);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    char* end = nullptr;
    const long long v = std::strtoll(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0' || v < 0) {
      throw ConfigError(key + ": expected a comma-separated list of nonnegative integers");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys{
      "experiment", "output_dir", "train_images", "train_labels", "test_images", "test_labels", "checkpoint",
      "compare_checkpoint", "latent_dim", "encoder_hidden", "decoder_hidden", "decoder", "decoder_direct",
      "prior", "flow_count", "flow_hidden", "model_seed", "zero_latent_init", "eta", "gamma", "learning_rate",
      "beta1", "beta2", "adam_eps", "batch_size", "epochs", "seed", "free_bits", "polyak_alpha", "clip_norm",
      "binarize", "history_eval_size", "history_iw_samples", "checkpoint_every", "importance_samples",
      "eval_seeds", "eval_limit", "clusters", "knn_k", "label_budgets", "probe_l2", "probe_iterations",
      "probe_step_size", "grid_columns", "sample_count", "theorem_trials", "theorem_max_atoms", "theorem_tol",
      "synth_clusters", "synth_side", "synth_per_cluster", "synth_test_per_cluster", "synth_flip"
  };
  return keys;
}

RunConfig to_run_config(const KeyValueConfig& kv) {
  kv.reject_unknown(run_config_keys());
  RunConfig rc;
  rc.experiment = kv.get_string("experiment", rc.experiment);
  rc.output_dir = kv.get_string("output_dir", rc.output_dir);
  rc.train_images = kv.get_string("train_images", "");
  rc.train_labels = kv.get_string("train_labels", "");
  rc.test_images = kv.get_string("test_images", "");
  rc.test_labels = kv.get_string("test_labels", "");
  rc.checkpoint = kv.get_string("checkpoint", "");
  rc.compare_checkpoint = kv.get_string("compare_checkpoint", "");

  auto& m = rc.model;
  m.latent_dim = kv.get_size("latent_dim", m.latent_dim);
  m.encoder_hidden = kv.get_sizes("encoder_hidden", m.encoder_hidden);
  m.decoder_hidden = kv.get_sizes("decoder_hidden", m.decoder_hidden);
  m.decoder = parse_decoder_kind(kv.get_string("decoder", to_string(m.decoder)));
  m.prior = parse_prior_kind(kv.get_string("prior", to_string(m.prior)));
  m.decoder_direct = kv.get_bool("decoder_direct", m.decoder_direct);
  m.flow_count = kv.get_size("flow_count", m.flow_count);
  m.flow_hidden = kv.get_size("flow_hidden", m.flow_hidden);
  rc.model_seed = kv.get_size("model_seed", rc.model_seed);
  rc.zero_latent_init = kv.get_bool("zero_latent_init", rc.zero_latent_init);
  if (m.latent_dim == 0) throw ConfigError("latent_dim must be positive");

  auto& t = rc.train;
  t.weights.eta = kv.get_double("eta", t.weights.eta);
  t.weights.gamma = kv.get_double("gamma", t.weights.gamma);
  t.adam.learning_rate = kv.get_double("learning_rate", t.adam.learning_rate);
  t.adam.beta1 = kv.get_double("beta1", t.adam.beta1);
  t.adam.beta2 = kv.get_double("beta2", t.adam.beta2);
  t.adam.eps = kv.get_double("adam_eps", t.adam.eps);
  t.batch_size = kv.get_size("batch_size", t.batch_size);
  t.epochs = kv.get_size("epochs", t.epochs);
  t.seed = kv.get_size("seed", t.seed);
  t.free_bits = kv.get_double("free_bits", t.free_bits);
  t.polyak_alpha = kv.get_double("polyak_alpha", t.polyak_alpha);
  t.clip_norm = kv.get_double("clip_norm", t.clip_norm);
  t.binarize = kv.get_bool("binarize", t.binarize);
  t.history_eval_size = kv.get_size("history_eval_size", t.history_eval_size);
  t.history_iw_samples = kv.get_size("history_iw_samples", t.history_iw_samples);
  t.checkpoint_every = kv.get_size("checkpoint_every", t.checkpoint_every);
  t.validate();

  rc.importance_samples = kv.get_size("importance_samples", rc.importance_samples);
  if (rc.importance_samples == 0) throw ConfigError("importance_samples must be positive");
  rc.eval_seeds = kv.get_sizes("eval_seeds", rc.eval_seeds);
  if (rc.eval_seeds.empty()) throw ConfigError("eval_seeds must list at least one seed");
  rc.eval_limit = kv.get_size("eval_limit", rc.eval_limit);
  rc.clusters = kv.get_size("clusters", rc.clusters);
  rc.knn_k = kv.get_size("knn_k", rc.knn_k);
  rc.label_budgets = kv.get_sizes("label_budgets", rc.label_budgets);
  rc.probe.l2 = kv.get_double("probe_l2", rc.probe.l2);
  rc.probe.iterations = kv.get_size("probe_iterations", rc.probe.iterations);
  rc.probe.step_size = kv.get_double("probe_step_size", rc.probe.step_size);
  rc.grid_columns = kv.get_size("grid_columns", rc.grid_columns);
  rc.sample_count = kv.get_size("sample_count", rc.sample_count);

  rc.theorem_trials = kv.get_size("theorem_trials", rc.theorem_trials);
  rc.theorem_max_atoms = kv.get_size("theorem_max_atoms", rc.theorem_max_atoms);
  rc.theorem_tol = kv.get_double("theorem_tol", rc.theorem_tol);
  if (rc.theorem_max_atoms == 0) throw ConfigError("theorem_max_atoms must be positive");

  auto& s = rc.synth;
  s.clusters = kv.get_size("synth_clusters", s.clusters);
  s.side = kv.get_size("synth_side", s.side);
  s.per_cluster = kv.get_size("synth_per_cluster", s.per_cluster);
  s.test_per_cluster = kv.get_size("synth_test_per_cluster", s.test_per_cluster);
  s.flip = kv.get_double("synth_flip", s.flip);
  return rc;
}

}  // namespace mae
