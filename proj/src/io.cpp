#include "mae/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "mae/errors.hpp"
#include "mae/fileutil.hpp"

namespace mae {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& field, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size()) {
    throw IoError("line " + std::to_string(line) + ": bad number '" + field + "'");
  }
  return v;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::string> data_lines(const std::string& text, const char* header) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) throw IoError(std::string("expected CSV header '") + header + "'");
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::string format_metrics_csv(const std::vector<MetricsRecord>& records) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch);
    for (double v : {r.elbo, r.re, r.kl, r.mpd, r.std, r.l_diverse, r.l_smooth, r.nll_iw}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& text) {
  std::vector<MetricsRecord> out;
  std::size_t line_no = 1;
  for (const auto& line : data_lines(text, kMetricsHeader)) {
    ++line_no;
    const auto cells = split_line(line);
    if (cells.size() != 9) throw IoError("line " + std::to_string(line_no) + ": expected 9 fields");
    MetricsRecord r;
    r.epoch = static_cast<long>(parse_double(cells[0], line_no));
    double* fields[] = {&r.elbo, &r.re, &r.kl, &r.mpd, &r.std, &r.l_diverse, &r.l_smooth, &r.nll_iw};
    for (std::size_t i = 0; i < 8; ++i) *fields[i] = parse_double(cells[i + 1], line_no);
    out.push_back(r);
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
  write_file_atomic(path, format_metrics_csv(records));
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  try {
    return parse_metrics_csv(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::string format_results_csv(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) {
    for (const auto& field : {r.experiment, r.name, r.param}) {
      if (field.find_first_of(",\n") != std::string::npos) throw IoError("results field contains a separator: " + field);
    }
    out += r.experiment + ',' + r.name + ',' + std::to_string(r.seed) + ',' + r.param + ',' +
           format_double(r.accuracy) + '\n';
  }
  return out;
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::vector<ResultRow> out;
  std::size_t line_no = 1;
  for (const auto& line : data_lines(text, kResultsHeader)) {
    ++line_no;
    const auto cells = split_line(line);
    if (cells.size() != 5) throw IoError("line " + std::to_string(line_no) + ": expected 5 fields");
    out.push_back(ResultRow{cells[0], cells[1], std::stoull(cells[2]), cells[3], parse_double(cells[4], line_no)});
  }
  return out;
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  write_file_atomic(path, format_results_csv(rows));
}

GrayImage tile_images(const Tensor& images, std::size_t rows, std::size_t cols, std::size_t columns) {
  if (images.rank() != 2) throw ShapeError("image grid input must be [n, rows*cols]");
  if (rows * cols != images.dim(1)) throw ShapeError("image grid: rows*cols does not match image size");
  if (columns == 0) throw ContractError("image grid needs at least one column");
  const std::size_t n = images.dim(0);
  const std::size_t grid_cols = std::min(columns, n);
  const std::size_t grid_rows = (n + columns - 1) / columns;

  GrayImage img;
  img.width = grid_cols * (cols + 1) + 1;
  img.height = grid_rows * (rows + 1) + 1;
  img.pixels.assign(img.width * img.height, kGridSeparator);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t top = (i / columns) * (rows + 1) + 1;
    const std::size_t left = (i % columns) * (cols + 1) + 1;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = std::clamp(images.at(i, r * cols + c), 0.0, 1.0);
        img.pixels[(top + r) * img.width + left + c] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
    }
  }
  return img;
}

std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

GrayImage parse_pgm(const std::string& contents) {
  std::istringstream in(contents);
  std::string magic;
  int maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || !in || maxval != 255) throw IoError("not an 8-bit binary PGM");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (contents.size() < offset + img.width * img.height) throw IoError("truncated PGM payload");
  img.pixels.assign(contents.begin() + static_cast<std::ptrdiff_t>(offset),
                    contents.begin() + static_cast<std::ptrdiff_t>(offset + img.width * img.height));
  return img;
}

void write_image_grid(const std::string& path, const Tensor& images, std::size_t rows, std::size_t cols,
                      std::size_t columns) {
  write_file_atomic(path, encode_pgm(tile_images(images, rows, cols, columns)));
}

}  // namespace mae
