#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dmsa/tensor.hpp"

namespace dmsa {

/// Binary PPM (P6, maxval 255), interleaved RGB.
struct PpmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Binary PGM (P5, maxval <= 255).
struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 255;
  std::vector<std::uint8_t> pixels;
};

/// Integer class label per pixel, row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t i, std::size_t j) const { return labels[i * width + j]; }
  bool operator==(const LabelMap&) const = default;
};

PpmImage parse_ppm(std::string_view bytes);
std::string encode_ppm(const PpmImage& image);
PgmImage parse_pgm(std::string_view bytes);
std::string encode_pgm(const PgmImage& image);

PpmImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const PpmImage& image);
PgmImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const PgmImage& image);

/// [3,H,W] tensor with values v / 255.
Tensor ppm_to_tensor(const PpmImage& image);
/// Rounds clamp(v, 0, 1) * 255.
PpmImage tensor_to_ppm(const Tensor& image);

/// Label masks are stored with maxval = classes - 1.
PgmImage labels_to_pgm(const LabelMap& labels, std::size_t classes);
LabelMap pgm_to_labels(const PgmImage& pgm);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dmsa
