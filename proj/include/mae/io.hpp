#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mae/evaluation.hpp"
#include "mae/tensor.hpp"

namespace mae {

inline constexpr const char* kMetricsHeader = "epoch,elbo,re,kl,mpd,std,l_diverse,l_smooth,nll_iw";
inline constexpr const char* kResultsHeader = "experiment,name,seed,param,accuracy";

std::string format_metrics_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> parse_metrics_csv(const std::string& text);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

struct ResultRow {
  std::string experiment;
  std::string name;
  std::uint64_t seed = 0;
  std::string param;  // cluster count or label budget
  double accuracy = 0.0;

  bool operator==(const ResultRow&) const = default;
};

std::string format_results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(const std::string& text);
void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);

inline constexpr std::uint8_t kGridSeparator = 128;

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Tiles the rows of `images` ([n, rows*cols], values in [0, 1]) into a
// grid `columns` wide with 1-pixel separators and a 1-pixel border.
GrayImage tile_images(const Tensor& images, std::size_t rows, std::size_t cols, std::size_t columns);
std::string encode_pgm(const GrayImage& image);
GrayImage parse_pgm(const std::string& contents);
void write_image_grid(const std::string& path, const Tensor& images, std::size_t rows, std::size_t cols,
                      std::size_t columns);

}  // namespace mae
