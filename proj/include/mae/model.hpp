#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mae/autodiff.hpp"
#include "mae/distributions.hpp"
#include "mae/tensor.hpp"

namespace mae {

enum class DecoderKind { kFactorized, kAutoregressive };
enum class PriorKind { kStandardNormal, kAffineArFlow };

std::string to_string(DecoderKind kind);
std::string to_string(PriorKind kind);
DecoderKind parse_decoder_kind(const std::string& text);
PriorKind parse_prior_kind(const std::string& text);

using ParameterSet = std::map<std::string, Tensor>;

// Binary masks for a MADE network. Unit u of the input sits at position
// order-position(u); masks[l] has shape [fan_in, fan_out] of layer l and the
// last mask feeds the output layer, whose units share the input degrees.
struct MadeMasks {
  std::vector<std::size_t> ordering;       // ordering[p] = unit at position p
  std::vector<std::size_t> input_degrees;  // 1-based position of each unit
  std::vector<std::vector<std::size_t>> hidden_degrees;
  std::vector<Tensor> masks;
  Tensor direct;  // [n, n] input-to-output skip mask


  static MadeMasks build(std::vector<std::size_t> ordering,
                         const std::vector<std::size_t>& hidden_sizes);

  // Boolean product of all masks, OR the direct mask: entry (j, i) is 1 iff
  // a path from input j to output i exists.
  Tensor connectivity() const;
};

struct ModelConfig {
  std::size_t data_dim = 0;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> encoder_hidden{256, 256};
  std::vector<std::size_t> decoder_hidden{256};
  DecoderKind decoder = DecoderKind::kFactorized;
  bool decoder_direct = false;  // masked linear input-to-output path (autoregressive only)
  PriorKind prior = PriorKind::kStandardNormal;
  std::size_t flow_count = 2;
  std::size_t flow_hidden = 32;

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kFlowLogScaleMin = -5.0;
inline constexpr double kFlowLogScaleMax = 5.0;

// Encoder (tanh MLP, D -> 2K), decoder and prior parameters.
class VaeModel {
 public:
  VaeModel() = default;
  VaeModel(ModelConfig config, ParameterSet params);

  static VaeModel create(const ModelConfig& config, std::uint64_t seed);
  // Shapes of every parameter for `config`.
  static std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  const MadeMasks& decoder_masks() const { return decoder_masks_; }
  const MadeMasks& flow_masks(std::size_t flow) const { return flow_masks_.at(flow); }

  void set_zero();
  // Zeroes the encoder output layer and every path from z into the decoder,
  // so training starts at the collapsed point q(z|x) = p(z).
  void zero_latent_paths();

 private:
  void build_masks();

  ModelConfig config_;
  ParameterSet params_;
  MadeMasks decoder_masks_;
  std::vector<MadeMasks> flow_masks_;
};

// A model's parameters bound as leaves on a tape, with the network pieces
// expressed as graph ops. Batched inputs are row-major [B, ...].
class ModelGraph {
 public:
  ModelGraph(const VaeModel& model, ad::Tape& tape);

  const VaeModel& model() const { return model_; }
  ad::Tape& tape() const { return tape_; }
  const ad::Var& param(const std::string& name) const;

  GaussianNode encode(const ad::Var& x) const;
  ad::Var decode_factorized(const ad::Var& z) const;
  // Teacher-forced logits; logit i sees x only through positions before i.
  ad::Var decode_autoregressive(const ad::Var& z, const ad::Var& x) const;
  ad::Var decode(const ad::Var& z, const ad::Var& x) const;
  // log p(z) per row, shape [B].
  ad::Var prior_log_density(const ad::Var& z) const;

  // One flow step in the density direction: u -> (u - shift(u)) * exp(-s(u)).
  // Returns the transformed value and the per-row log-determinant [B].
  std::pair<ad::Var, ad::Var> flow_step(std::size_t flow, const ad::Var& u) const;

 private:
  const VaeModel& model_;
  ad::Tape& tape_;
  std::map<std::string, ad::Var> vars_;
};

// Single-datum conveniences that build a throwaway tape.
DiagGaussian encode(const VaeModel& model, std::span<const double> x);
std::vector<double> decode_factorized(const VaeModel& model, std::span<const double> z);
std::vector<double> decode_autoregressive(const VaeModel& model, std::span<const double> z,
                                          std::span<const double> x);
double prior_log_density(const VaeModel& model, std::span<const double> z);

struct EncodedBatch {
  Tensor mean;     // [B, K]
  Tensor log_var;  // [B, K]
};
EncodedBatch encode_batch(const VaeModel& model, const Tensor& x);

// Ancestral sampling of binary pixels in mask order, one pass per pixel.
// For the factorized decoder every pixel is drawn from one pass.
std::vector<double> sample_autoregressive(const VaeModel& model, std::span<const double> z,
                                          std::mt19937_64& rng);
Tensor sample_pixels(const VaeModel& model, const Tensor& z, std::mt19937_64& rng);
// z ~ prior; flow priors are inverted sequentially.
Tensor sample_prior(const VaeModel& model, std::size_t count, std::mt19937_64& rng);

// Versioned text checkpoint; values are written as hex floats so that a
// round-trip is bit-exact.
void save_checkpoint(const VaeModel& model, const std::string& path);
VaeModel load_checkpoint(const std::string& path);

}  // namespace mae
