#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mae/errors.hpp"
#include "mae/tensor.hpp"

namespace mae {

// N x D intensities in [0, 1] with optional integer labels.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string split = "train";
  std::size_t rows = 0;  // image height
  std::size_t cols = 0;  // image width

  std::size_t size() const { return images.dim(0); }
  std::size_t dim() const { return images.dim(1); }
  bool has_labels() const { return !labels.empty(); }
  std::size_t num_classes() const;
  // Rows `indices` of the dataset, labels included.
  Dataset subset(const std::vector<std::size_t>& indices) const;
  void validate() const;
};

class IdxBadMagic : public IoError {
 public:
  using IoError::IoError;
};
class IdxTruncated : public IoError {
 public:
  using IoError::IoError;
};
class IdxUnsupportedType : public IoError {
 public:
  using IoError::IoError;
};

// Raw unsigned-byte IDX payload with its big-endian header dimensions.
struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;
};

IdxArray parse_idx(const std::string& contents, const std::string& origin = "<memory>");
IdxArray read_idx_raw(const std::string& path);
// Unsigned-byte IDX file scaled by 1/255. Shape follows the header.
Tensor read_idx(const std::string& path);
std::string encode_idx(const IdxArray& array);
void write_idx(const std::string& path, const IdxArray& array);

// Images from an idx3 file flattened to [N, rows*cols]; labels from an
// optional idx1 file.
Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         const std::string& split);
void save_idx_dataset(const Dataset& data, const std::string& images_path,
                      const std::string& labels_path);

// Each pixel drawn from Bernoulli(intensity).
Tensor dynamic_binarize(const Tensor& images, std::mt19937_64& rng);

// n_clusters random binary side x side prototypes; every datum is a prototype
// with pixels flipped independently at flip_prob.
Dataset synth_mixture(std::size_t n_clusters, std::size_t side, std::size_t n_per_cluster,
                      double flip_prob, std::uint64_t seed);

}  // namespace mae
