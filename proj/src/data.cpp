#include "mae/data.hpp"

#include <algorithm>
#include <cmath>

#include "mae/fileutil.hpp"

namespace mae {

std::size_t Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ContractError("empty dataset subset");
  const std::size_t D = dim();
  Tensor images_out({indices.size(), D});
  Dataset out;
  out.split = split;
  out.rows = rows;
  out.cols = cols;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    if (src >= size()) throw ContractError("subset index out of range");
    std::copy_n(images.data().data() + src * D, D, images_out.data().data() + r * D);
    if (has_labels()) out.labels.push_back(labels[src]);
  }
  out.images = std::move(images_out);
  return out;
}

void Dataset::validate() const {
  if (images.rank() != 2) throw ShapeError("dataset images must be [N, D]");
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("dataset intensity outside [0, 1]");
  }
  if (has_labels()) {
    if (labels.size() != size()) throw ShapeError("label count does not match image count");
    for (int l : labels) {
      if (l < 0) throw ContractError("negative label");
    }
  }
}

// --- IDX -------------------------------------------------------------------

namespace {

constexpr std::uint8_t kIdxUnsignedByte = 0x08;

std::uint32_t read_be32(const std::string& s, std::size_t offset) {
  return (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[offset])) << 24) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[offset + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[offset + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[offset + 3]));
}

void write_be32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

}  // namespace

IdxArray parse_idx(const std::string& contents, const std::string& origin) {
  if (contents.size() < 4) throw IdxTruncated(origin + ": shorter than the IDX magic number");
  if (contents[0] != 0 || contents[1] != 0) throw IdxBadMagic(origin + ": bad IDX magic");
  const auto type = static_cast<std::uint8_t>(contents[2]);
  const auto rank = static_cast<std::uint8_t>(contents[3]);
  if (type != kIdxUnsignedByte) {
    throw IdxUnsupportedType(origin + ": unsupported IDX element type 0x" +
                             std::to_string(static_cast<int>(type)));
  }
  if (rank == 0) throw IdxBadMagic(origin + ": IDX with zero dimensions");
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(rank);
  if (contents.size() < header) throw IdxTruncated(origin + ": truncated IDX header");

  IdxArray out;
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t extent = read_be32(contents, 4 + 4 * d);
    if (extent == 0) throw IdxBadMagic(origin + ": IDX dimension of size zero");
    out.dims.push_back(extent);
    count *= extent;
  }
  if (contents.size() < header + count) {
    throw IdxTruncated(origin + ": IDX payload has " + std::to_string(contents.size() - header) +
                       " bytes, header promises " + std::to_string(count));
  }
  out.bytes.assign(contents.begin() + static_cast<std::ptrdiff_t>(header),
                   contents.begin() + static_cast<std::ptrdiff_t>(header + count));
  return out;
}

IdxArray read_idx_raw(const std::string& path) { return parse_idx(read_file(path), path); }

Tensor read_idx(const std::string& path) {
  IdxArray raw = read_idx_raw(path);
  std::vector<double> values(raw.bytes.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = raw.bytes[i] / 255.0;
  return Tensor(raw.dims, std::move(values));
}

std::string encode_idx(const IdxArray& array) {
  if (array.dims.empty() || array.dims.size() > 255) throw ContractError("IDX rank must be 1..255");
  std::size_t count = 1;
  for (auto d : array.dims) count *= d;
  if (count != array.bytes.size()) throw ShapeError("IDX dims do not match payload size");
  std::string out;
  out.reserve(4 + 4 * array.dims.size() + count);
  out.push_back(0);
  out.push_back(0);
  out.push_back(static_cast<char>(kIdxUnsignedByte));
  out.push_back(static_cast<char>(array.dims.size()));
  for (auto d : array.dims) write_be32(out, static_cast<std::uint32_t>(d));
  out.append(reinterpret_cast<const char*>(array.bytes.data()), array.bytes.size());
  return out;
}

void write_idx(const std::string& path, const IdxArray& array) {
  write_file_atomic(path, encode_idx(array));
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         const std::string& split) {
  IdxArray raw = read_idx_raw(images_path);
  if (raw.dims.size() < 2) throw ShapeError(images_path + ": expected an image array");
  Dataset data;
  data.split = split;
  const std::size_t n = raw.dims[0];
  data.rows = raw.dims.size() >= 3 ? raw.dims[1] : 1;
  data.cols = raw.dims.back();
  const std::size_t dim = raw.bytes.size() / n;
  std::vector<double> values(raw.bytes.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = raw.bytes[i] / 255.0;
  data.images = Tensor({n, dim}, std::move(values));
  if (!labels_path.empty()) {
    IdxArray labels = read_idx_raw(labels_path);
    if (labels.dims.size() != 1 || labels.dims[0] != n) {
      throw ShapeError(labels_path + ": label count does not match " + images_path);
    }
    data.labels.assign(labels.bytes.begin(), labels.bytes.end());
  }
  return data;
}

void save_idx_dataset(const Dataset& data, const std::string& images_path,
                      const std::string& labels_path) {
  IdxArray images;
  images.dims = {data.size(), data.rows, data.cols};
  if (data.rows * data.cols != data.dim()) images.dims = {data.size(), data.dim()};
  images.bytes.resize(data.images.size());
  for (std::size_t i = 0; i < images.bytes.size(); ++i) {
    images.bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(data.images[i], 0.0, 1.0) * 255.0));
  }
  write_idx(images_path, images);
  if (!labels_path.empty() && data.has_labels()) {
    IdxArray labels;
    labels.dims = {data.size()};
    for (int l : data.labels) {
      if (l < 0 || l > 255) throw ContractError("label does not fit an unsigned byte");
      labels.bytes.push_back(static_cast<std::uint8_t>(l));
    }
    write_idx(labels_path, labels);
  }
}

// --- binarization and synthetic data ---------------------------------------

Tensor dynamic_binarize(const Tensor& images, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Tensor out(images.shape());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double p = images[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ContractError("dynamic_binarize: intensity " + std::to_string(p) + " outside [0, 1]");
    }
    // Draw for every pixel so the stream position does not depend on values.
    const double u = uniform(rng);
    out[i] = u < p ? 1.0 : 0.0;
  }
  return out;
}

Dataset synth_mixture(std::size_t n_clusters, std::size_t side, std::size_t n_per_cluster,
                      double flip_prob, std::uint64_t seed) {
  if (n_clusters == 0 || side == 0 || n_per_cluster == 0) {
    throw ContractError("synth_mixture: sizes must be positive");
  }
  if (!(flip_prob >= 0.0 && flip_prob < 0.5)) throw ContractError("synth_mixture: flip_prob must be in [0, 0.5)");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution flip(flip_prob);
  const std::size_t D = side * side;

  std::vector<std::vector<double>> prototypes(n_clusters, std::vector<double>(D));
  for (auto& proto : prototypes) {
    for (auto& v : proto) v = coin(rng) ? 1.0 : 0.0;
  }

  Dataset data;
  data.rows = side;
  data.cols = side;
  data.images = Tensor({n_clusters * n_per_cluster, D});
  std::size_t r = 0;
  for (std::size_t c = 0; c < n_clusters; ++c) {
    for (std::size_t i = 0; i < n_per_cluster; ++i, ++r) {
      for (std::size_t d = 0; d < D; ++d) {
        const double v = prototypes[c][d];
        data.images.at(r, d) = flip(rng) ? 1.0 - v : v;
      }
      data.labels.push_back(static_cast<int>(c));
    }
  }
  return data;
}

}  // namespace mae
