#include "mae/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>

#include "mae/errors.hpp"
#include "mae/fileutil.hpp"

namespace mae {

std::string to_string(DecoderKind kind) {
  return kind == DecoderKind::kFactorized ? "factorized" : "autoregressive";
}

std::string to_string(PriorKind kind) {
  return kind == PriorKind::kStandardNormal ? "standard" : "flow";
}

DecoderKind parse_decoder_kind(const std::string& text) {
  if (text == "factorized") return DecoderKind::kFactorized;
  if (text == "autoregressive") return DecoderKind::kAutoregressive;
  throw ConfigError("unknown decoder kind '" + text + "'");
}

PriorKind parse_prior_kind(const std::string& text) {
  if (text == "standard") return PriorKind::kStandardNormal;
  if (text == "flow") return PriorKind::kAffineArFlow;
  throw ConfigError("unknown prior kind '" + text + "'");
}

// --- MADE masks ------------------------------------------------------------

MadeMasks MadeMasks::build(std::vector<std::size_t> ordering,
                           const std::vector<std::size_t>& hidden_sizes) {
  const std::size_t n = ordering.size();
  if (n == 0) throw ContractError("MADE over zero units");
  MadeMasks m;
  m.input_degrees.assign(n, 0);
  for (std::size_t p = 0; p < n; ++p) {
    if (ordering[p] >= n || m.input_degrees[ordering[p]] != 0) {
      throw ContractError("MADE ordering is not a permutation");
    }
    m.input_degrees[ordering[p]] = p + 1;
  }
  m.ordering = std::move(ordering);

  // Hidden degrees cycle through 0..n-1; degree-0 units see no inputs and
  // may feed every output.
  for (std::size_t size : hidden_sizes) {
    std::vector<std::size_t> deg(size);
    for (std::size_t k = 0; k < size; ++k) deg[k] = k % n;
    m.hidden_degrees.push_back(std::move(deg));
  }

  const std::vector<std::size_t>* prev = &m.input_degrees;
  for (const auto& deg : m.hidden_degrees) {
    Tensor mask({prev->size(), deg.size()});
    for (std::size_t a = 0; a < prev->size(); ++a) {
      for (std::size_t b = 0; b < deg.size(); ++b) mask.at(a, b) = deg[b] >= (*prev)[a] ? 1.0 : 0.0;
    }
    m.masks.push_back(std::move(mask));
    prev = &deg;
  }
  Tensor out({prev->size(), n});
  for (std::size_t a = 0; a < prev->size(); ++a) {
    for (std::size_t i = 0; i < n; ++i) out.at(a, i) = m.input_degrees[i] > (*prev)[a] ? 1.0 : 0.0;
  }
  m.masks.push_back(std::move(out));
  m.direct = Tensor({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) m.direct.at(j, i) = m.input_degrees[j] < m.input_degrees[i] ? 1.0 : 0.0;
  }
  return m;
}

Tensor MadeMasks::connectivity() const {
  Tensor acc = masks.front();
  for (std::size_t l = 1; l < masks.size(); ++l) {
    const Tensor& next = masks[l];
    Tensor prod({acc.dim(0), next.dim(1)});
    for (std::size_t i = 0; i < acc.dim(0); ++i) {
      for (std::size_t k = 0; k < acc.dim(1); ++k) {
        if (acc.at(i, k) == 0.0) continue;
        for (std::size_t j = 0; j < next.dim(1); ++j) {
          if (next.at(k, j) != 0.0) prod.at(i, j) = 1.0;
        }
      }
    }
    acc = std::move(prod);
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (direct.size() == acc.size() && direct[i] != 0.0) acc[i] = 1.0;
  }
  return acc;
}

// --- VaeModel --------------------------------------------------------------

namespace {

std::string layer_name(const std::string& prefix, const std::string& kind, std::size_t layer) {
  return prefix + "." + kind + std::to_string(layer);
}

std::vector<std::size_t> iota_order(std::size_t n, bool reversed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (reversed) std::reverse(order.begin(), order.end());
  return order;
}

void validate(const ModelConfig& c) {
  if (c.data_dim == 0) throw ConfigError("data_dim must be positive");
  if (c.latent_dim == 0) throw ConfigError("latent_dim must be positive");
  for (auto h : c.encoder_hidden) {
    if (h == 0) throw ConfigError("encoder hidden widths must be positive");
  }
  for (auto h : c.decoder_hidden) {
    if (h == 0) throw ConfigError("decoder hidden widths must be positive");
  }
  if (c.prior == PriorKind::kAffineArFlow && (c.flow_count == 0 || c.flow_hidden == 0)) {
    throw ConfigError("flow prior needs flow_count and flow_hidden > 0");
  }
}

}  // namespace

std::map<std::string, Shape> VaeModel::parameter_shapes(const ModelConfig& c) {
  validate(c);
  std::map<std::string, Shape> shapes;
  const std::size_t D = c.data_dim;
  const std::size_t K = c.latent_dim;

  std::size_t fan_in = D;
  for (std::size_t l = 0; l < c.encoder_hidden.size(); ++l) {
    shapes[layer_name("enc", "w", l)] = {fan_in, c.encoder_hidden[l]};
    shapes[layer_name("enc", "b", l)] = {c.encoder_hidden[l]};
    fan_in = c.encoder_hidden[l];
  }
  shapes["enc.w_out"] = {fan_in, 2 * K};
  shapes["enc.b_out"] = {2 * K};

  fan_in = c.decoder == DecoderKind::kFactorized ? K : D;
  for (std::size_t l = 0; l < c.decoder_hidden.size(); ++l) {
    shapes[layer_name("dec", "w", l)] = {fan_in, c.decoder_hidden[l]};
    shapes[layer_name("dec", "b", l)] = {c.decoder_hidden[l]};
    if (c.decoder == DecoderKind::kAutoregressive) {
      shapes[layer_name("dec", "v", l)] = {K, c.decoder_hidden[l]};
    }
    fan_in = c.decoder_hidden[l];
  }
  shapes["dec.w_out"] = {fan_in, D};
  shapes["dec.b_out"] = {D};
  if (c.decoder == DecoderKind::kAutoregressive) shapes["dec.v_out"] = {K, D};
  if (c.decoder == DecoderKind::kAutoregressive && c.decoder_direct) shapes["dec.direct"] = {D, D};

  if (c.prior == PriorKind::kAffineArFlow) {
    for (std::size_t f = 0; f < c.flow_count; ++f) {
      const std::string p = "flow" + std::to_string(f);
      shapes[p + ".w0"] = {K, c.flow_hidden};
      shapes[p + ".b0"] = {c.flow_hidden};
      shapes[p + ".w_shift"] = {c.flow_hidden, K};
      shapes[p + ".b_shift"] = {K};
      shapes[p + ".w_scale"] = {c.flow_hidden, K};
      shapes[p + ".b_scale"] = {K};
    }
  }
  return shapes;
}

VaeModel::VaeModel(ModelConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto shapes = parameter_shapes(config_);
  if (shapes.size() != params_.size()) {
    throw ShapeError("model expects " + std::to_string(shapes.size()) + " parameter tensors, got " +
                     std::to_string(params_.size()));
  }
  for (const auto& [name, shape] : shapes) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ShapeError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + name + "' has shape " + to_string(it->second.shape()) +
                       ", expected " + to_string(shape));
    }
  }
  build_masks();
}

void VaeModel::build_masks() {
  if (config_.decoder == DecoderKind::kAutoregressive) {
    decoder_masks_ = MadeMasks::build(iota_order(config_.data_dim, false), config_.decoder_hidden);
  }
  flow_masks_.clear();
  if (config_.prior == PriorKind::kAffineArFlow) {
    for (std::size_t f = 0; f < config_.flow_count; ++f) {
      flow_masks_.push_back(
          MadeMasks::build(iota_order(config_.latent_dim, f % 2 == 1), {config_.flow_hidden}));
    }
  }
}

VaeModel VaeModel::create(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParameterSet params;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Tensor t(shape, 0.0);
    const bool is_weight = shape.size() == 2;
    const bool flow_output = name.find("flow") == 0 &&
                             (name.find("w_shift") != std::string::npos ||
                              name.find("w_scale") != std::string::npos);
    if (is_weight && !flow_output) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (auto& v : t.data()) v = scale * normal(rng);
    }
    params.emplace(name, std::move(t));
  }
  return VaeModel(config, std::move(params));
}

void VaeModel::set_zero() {
  for (auto& [_, t] : params_) t.fill(0.0);
}

void VaeModel::zero_latent_paths() {
  for (auto& [name, t] : params_) {
    if (name.rfind("enc.w_out", 0) == 0 || name.rfind("enc.b_out", 0) == 0 || name.rfind("dec.v", 0) == 0) t.fill(0.0);
  }
}

// --- ModelGraph ------------------------------------------------------------

ModelGraph::ModelGraph(const VaeModel& model, ad::Tape& tape) : model_(model), tape_(tape) {
  for (const auto& [name, value] : model.params()) vars_.emplace(name, tape.parameter(name, value));
}

const ad::Var& ModelGraph::param(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("model has no parameter '" + name + "'");
  return it->second;
}

namespace {

void require_columns(const ad::Var& v, std::size_t cols, const char* what) {
  if (v.shape().size() != 2 || v.shape()[1] != cols) {
    throw ShapeError(std::string(what) + ": expected [B, " + std::to_string(cols) + "], got " +
                     to_string(v.shape()));
  }
}

}  // namespace

GaussianNode ModelGraph::encode(const ad::Var& x) const {
  const auto& c = model_.config();
  require_columns(x, c.data_dim, "encode");
  ad::Var h = x;
  for (std::size_t l = 0; l < c.encoder_hidden.size(); ++l) {
    h = ad::tanh(ad::matmul(h, param(layer_name("enc", "w", l))) + param(layer_name("enc", "b", l)));
  }
  const ad::Var out = ad::matmul(h, param("enc.w_out")) + param("enc.b_out");
  const std::size_t K = c.latent_dim;
  return GaussianNode{ad::slice(out, 1, 0, K),
                      ad::clamp(ad::slice(out, 1, K, 2 * K), kLogVarMin, kLogVarMax)};
}

ad::Var ModelGraph::decode_factorized(const ad::Var& z) const {
  const auto& c = model_.config();
  if (c.decoder != DecoderKind::kFactorized) throw ContractError("model decoder is not factorized");
  require_columns(z, c.latent_dim, "decode_factorized");
  ad::Var h = z;
  for (std::size_t l = 0; l < c.decoder_hidden.size(); ++l) {
    h = ad::tanh(ad::matmul(h, param(layer_name("dec", "w", l))) + param(layer_name("dec", "b", l)));
  }
  return ad::matmul(h, param("dec.w_out")) + param("dec.b_out");
}

ad::Var ModelGraph::decode_autoregressive(const ad::Var& z, const ad::Var& x) const {
  const auto& c = model_.config();
  if (c.decoder != DecoderKind::kAutoregressive) {
    throw ContractError("model decoder is not autoregressive");
  }
  require_columns(z, c.latent_dim, "decode_autoregressive");
  require_columns(x, c.data_dim, "decode_autoregressive");
  if (z.shape()[0] != x.shape()[0]) throw ShapeError("decode_autoregressive: batch size mismatch");
  const MadeMasks& masks = model_.decoder_masks();
  ad::Var h = x;
  for (std::size_t l = 0; l < c.decoder_hidden.size(); ++l) {
    const ad::Var pre = ad::matmul(h, ad::mask_multiply(param(layer_name("dec", "w", l)), masks.masks[l])) +
                        ad::matmul(z, param(layer_name("dec", "v", l))) +
                        param(layer_name("dec", "b", l));
    h = ad::tanh(pre);
  }
  ad::Var logits = ad::matmul(h, ad::mask_multiply(param("dec.w_out"), masks.masks.back())) +
                   ad::matmul(z, param("dec.v_out")) + param("dec.b_out");
  if (c.decoder_direct) logits = logits + ad::matmul(x, ad::mask_multiply(param("dec.direct"), masks.direct));
  return logits;
}

ad::Var ModelGraph::decode(const ad::Var& z, const ad::Var& x) const {
  return model_.config().decoder == DecoderKind::kFactorized ? decode_factorized(z)
                                                              : decode_autoregressive(z, x);
}

namespace {

struct ShiftScale {
  ad::Var shift;
  ad::Var log_scale;
};

ShiftScale flow_network(const ModelGraph& g, std::size_t flow, const ad::Var& u) {
  const MadeMasks& masks = g.model().flow_masks(flow);
  const std::string p = "flow" + std::to_string(flow);
  const ad::Var h = ad::tanh(ad::matmul(u, ad::mask_multiply(g.param(p + ".w0"), masks.masks[0])) +
                             g.param(p + ".b0"));
  const ad::Var shift =
      ad::matmul(h, ad::mask_multiply(g.param(p + ".w_shift"), masks.masks[1])) + g.param(p + ".b_shift");
  const ad::Var log_scale = ad::clamp(
      ad::matmul(h, ad::mask_multiply(g.param(p + ".w_scale"), masks.masks[1])) + g.param(p + ".b_scale"),
      kFlowLogScaleMin, kFlowLogScaleMax);
  return {shift, log_scale};
}

}  // namespace

std::pair<ad::Var, ad::Var> ModelGraph::flow_step(std::size_t flow, const ad::Var& u) const {
  const ShiftScale ss = flow_network(*this, flow, u);
  const ad::Var out = (u - ss.shift) * ad::exp(-ss.log_scale);
  return {out, ad::sum(-ss.log_scale, 1)};
}

ad::Var ModelGraph::prior_log_density(const ad::Var& z) const {
  const auto& c = model_.config();
  require_columns(z, c.latent_dim, "prior_log_density");
  if (c.prior == PriorKind::kStandardNormal) return graph::standard_normal_log_density(z);
  ad::Var u = z;
  ad::Var log_det;
  for (std::size_t f = 0; f < c.flow_count; ++f) {
    auto [next, ld] = flow_step(f, u);
    u = next;
    log_det = f == 0 ? ld : log_det + ld;
  }
  return graph::standard_normal_log_density(u) + log_det;
}

// --- single-datum conveniences ---------------------------------------------

namespace {

Tensor row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::vector<double> to_vector(const Tensor& t) { return t.values(); }

}  // namespace

DiagGaussian encode(const VaeModel& model, std::span<const double> x) {
  if (x.size() != model.config().data_dim) {
    throw ShapeError("encode: input length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(model.config().data_dim));
  }
  ad::Tape tape;
  ModelGraph g(model, tape);
  const GaussianNode q = g.encode(tape.input("x", row(x)));
  return DiagGaussian{to_vector(q.mean.value()), to_vector(q.log_var.value())};
}

EncodedBatch encode_batch(const VaeModel& model, const Tensor& x) {
  ad::Tape tape;
  ModelGraph g(model, tape);
  const GaussianNode q = g.encode(tape.input("x", x));
  return EncodedBatch{q.mean.value(), q.log_var.value()};
}

std::vector<double> decode_factorized(const VaeModel& model, std::span<const double> z) {
  if (z.size() != model.config().latent_dim) throw ShapeError("decode_factorized: latent length mismatch");
  ad::Tape tape;
  ModelGraph g(model, tape);
  return to_vector(g.decode_factorized(tape.input("z", row(z))).value());
}

std::vector<double> decode_autoregressive(const VaeModel& model, std::span<const double> z,
                                          std::span<const double> x) {
  if (z.size() != model.config().latent_dim) throw ShapeError("decode_autoregressive: latent length mismatch");
  if (x.size() != model.config().data_dim) throw ShapeError("decode_autoregressive: data length mismatch");
  ad::Tape tape;
  ModelGraph g(model, tape);
  return to_vector(g.decode_autoregressive(tape.input("z", row(z)), tape.input("x", row(x))).value());
}

double prior_log_density(const VaeModel& model, std::span<const double> z) {
  if (z.size() != model.config().latent_dim) throw ShapeError("prior_log_density: latent length mismatch");
  ad::Tape tape;
  ModelGraph g(model, tape);
  return g.prior_log_density(tape.input("z", row(z))).value().item();
}

Tensor sample_pixels(const VaeModel& model, const Tensor& z, std::mt19937_64& rng) {
  const auto& c = model.config();
  if (z.rank() != 2 || z.dim(1) != c.latent_dim) throw ShapeError("sample_pixels: z must be [n, K]");
  const std::size_t n = z.dim(0);
  const std::size_t D = c.data_dim;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Tensor x({n, D}, 0.0);

  auto logits_for = [&](const Tensor& current) {
    ad::Tape tape;
    ModelGraph g(model, tape);
    return g.decode(tape.input("z", z), tape.input("x", current)).value();
  };

  if (c.decoder == DecoderKind::kFactorized) {
    const Tensor logits = logits_for(x);
    for (std::size_t i = 0; i < logits.size(); ++i) x[i] = uniform(rng) < ad::sigmoid(logits[i]) ? 1.0 : 0.0;
    return x;
  }
  for (std::size_t pos = 0; pos < D; ++pos) {
    const std::size_t pixel = model.decoder_masks().ordering[pos];
    const Tensor logits = logits_for(x);
    for (std::size_t r = 0; r < n; ++r) {
      x.at(r, pixel) = uniform(rng) < ad::sigmoid(logits.at(r, pixel)) ? 1.0 : 0.0;
    }
  }
  return x;
}

std::vector<double> sample_autoregressive(const VaeModel& model, std::span<const double> z,
                                          std::mt19937_64& rng) {
  return to_vector(sample_pixels(model, row(z), rng));
}

Tensor sample_prior(const VaeModel& model, std::size_t count, std::mt19937_64& rng) {
  const auto& c = model.config();
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor target({count, c.latent_dim});
  for (auto& v : target.data()) v = normal(rng);
  if (c.prior == PriorKind::kStandardNormal) return target;

  // Invert flows last-to-first. Each pass fixes at least one more position
  // of the autoregressive order, so latent_dim passes suffice.
  for (std::size_t f = c.flow_count; f-- > 0;) {
    Tensor u({count, c.latent_dim}, 0.0);
    for (std::size_t pass = 0; pass < c.latent_dim; ++pass) {
      ad::Tape tape;
      ModelGraph g(model, tape);
      const ShiftScale ss = flow_network(g, f, tape.input("u", u));
      for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = target[i] * std::exp(ss.log_scale.value()[i]) + ss.shift.value()[i];
      }
    }
    target = std::move(u);
  }
  return target;
}

// --- checkpoints -----------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "mae-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out.empty() ? "-" : out;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  if (s == "-") return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoul(item));
  return out;
}

}  // namespace

void save_checkpoint(const VaeModel& model, const std::string& path) {
  const auto& c = model.config();
  std::ostringstream out;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "data_dim " << c.data_dim << '\n';
  out << "latent_dim " << c.latent_dim << '\n';
  out << "encoder_hidden " << join_sizes(c.encoder_hidden) << '\n';
  out << "decoder_hidden " << join_sizes(c.decoder_hidden) << '\n';
  out << "decoder " << to_string(c.decoder) << '\n';
  out << "decoder_direct " << (c.decoder_direct ? 1 : 0) << '\n';
  out << "prior " << to_string(c.prior) << '\n';
  out << "flow_count " << c.flow_count << '\n';
  out << "flow_hidden " << c.flow_hidden << '\n';
  out << "tensors " << model.params().size() << '\n';
  out << std::hexfloat;
  for (const auto& [name, t] : model.params()) {
    out << "tensor " << name << ' ' << t.rank();
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << t[i];
    out << '\n';
  }
  out << "end\n";
  write_file_atomic(path, out.str());
}

VaeModel load_checkpoint(const std::string& path) {
  std::istringstream in(read_file(path));
  auto fail = [&](const std::string& msg) { return IoError("checkpoint '" + path + "': " + msg); };
  auto expect_key = [&](const std::string& key) {
    std::string k;
    if (!(in >> k) || k != key) throw fail("expected '" + key + "'");
  };

  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw fail("bad header");
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));

  ModelConfig c;
  std::string text;
  expect_key("data_dim");
  in >> c.data_dim;
  expect_key("latent_dim");
  in >> c.latent_dim;
  expect_key("encoder_hidden");
  in >> text;
  c.encoder_hidden = split_sizes(text);
  expect_key("decoder_hidden");
  in >> text;
  c.decoder_hidden = split_sizes(text);
  expect_key("decoder");
  in >> text;
  c.decoder = parse_decoder_kind(text);
  expect_key("decoder_direct");
  in >> c.decoder_direct;
  expect_key("prior");
  in >> text;
  c.prior = parse_prior_kind(text);
  expect_key("flow_count");
  in >> c.flow_count;
  expect_key("flow_hidden");
  in >> c.flow_hidden;
  std::size_t count = 0;
  expect_key("tensors");
  in >> count;
  if (!in) throw fail("truncated header");

  ParameterSet params;
  for (std::size_t t = 0; t < count; ++t) {
    expect_key("tensor");
    std::string name;
    std::size_t rank = 0;
    in >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) in >> d;
    if (!in) throw fail("truncated tensor header for '" + name + "'");
    std::vector<double> values(numel(shape));
    for (auto& v : values) {
      std::string token;
      if (!(in >> token)) throw fail("truncated values for '" + name + "'");
      char* end = nullptr;
      v = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') throw fail("bad number '" + token + "'");
    }
    params.emplace(name, Tensor(std::move(shape), std::move(values)));
  }
  expect_key("end");
  return VaeModel(c, std::move(params));
}

}  // namespace mae
