#include "dmsa/netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dmsa {

namespace {

// Header reader for the "magic width height maxval" preamble. Comments run
// from '#' to end of line; exactly one whitespace byte follows maxval.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view magic() {
    if (bytes_.size() < 2) throw FormatError("netpbm: file too short for a magic number");
    pos_ = 2;
    return bytes_.substr(0, 2);
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError(std::string("netpbm: expected ") + what + " in header");
    }
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 30)) throw FormatError(std::string("netpbm: ") + what + " too large");
      ++pos_;
    }
    return v;
  }

  std::string_view payload() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw FormatError("netpbm: missing whitespace after maxval");
    }
    return bytes_.substr(pos_ + 1);
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

PpmImage parse_ppm(std::string_view bytes) {
  HeaderReader r(bytes);
  if (r.magic() != "P6") throw FormatError("ppm: only binary P6 images are supported");
  PpmImage img;
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (img.width == 0 || img.height == 0) throw FormatError("ppm: zero image extent");
  if (maxval != 255) throw FormatError("ppm: maxval must be 255, got " + std::to_string(maxval));
  auto data = r.payload();
  const std::size_t need = img.width * img.height * 3;
  if (data.size() < need) {
    throw FormatError("ppm: truncated pixel data (" + std::to_string(data.size()) + " of " + std::to_string(need) +
                      " bytes)");
  }
  img.rgb.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(need));
  return img;
}

std::string encode_ppm(const PpmImage& image) {
  if (image.rgb.size() != image.width * image.height * 3) throw FormatError("ppm: pixel buffer size mismatch");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(image.rgb.begin(), image.rgb.end());
  return out;
}

PgmImage parse_pgm(std::string_view bytes) {
  HeaderReader r(bytes);
  if (r.magic() != "P5") throw FormatError("pgm: only binary P5 images are supported");
  PgmImage img;
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (img.width == 0 || img.height == 0) throw FormatError("pgm: zero image extent");
  if (maxval < 1 || maxval > 255) throw FormatError("pgm: maxval must be in 1..255, got " + std::to_string(maxval));
  img.maxval = static_cast<unsigned>(maxval);
  auto data = r.payload();
  const std::size_t need = img.width * img.height;
  if (data.size() < need) {
    throw FormatError("pgm: truncated pixel data (" + std::to_string(data.size()) + " of " + std::to_string(need) +
                      " bytes)");
  }
  img.pixels.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(need));
  for (auto v : img.pixels)
    if (v > img.maxval) throw FormatError("pgm: pixel value exceeds maxval");
  return img;
}

std::string encode_pgm(const PgmImage& image) {
  if (image.pixels.size() != image.width * image.height) throw FormatError("pgm: pixel buffer size mismatch");
  if (image.maxval < 1 || image.maxval > 255) throw FormatError("pgm: maxval must be in 1..255");
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                    std::to_string(image.maxval) + "\n";
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

PpmImage read_ppm(const std::filesystem::path& path) { return parse_ppm(read_file(path)); }
void write_ppm(const std::filesystem::path& path, const PpmImage& image) { write_file(path, encode_ppm(image)); }
PgmImage read_pgm(const std::filesystem::path& path) { return parse_pgm(read_file(path)); }
void write_pgm(const std::filesystem::path& path, const PgmImage& image) { write_file(path, encode_pgm(image)); }

Tensor ppm_to_tensor(const PpmImage& image) {
  const std::size_t plane = image.width * image.height;
  std::vector<double> v(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * plane + p] = image.rgb[p * 3 + c] / 255.0;
  return Tensor({3, image.height, image.width}, std::move(v));
}

PpmImage tensor_to_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("ppm: image must be [3,H,W], got " + shape_str(image.shape()));
  PpmImage out;
  out.height = image.dim(1);
  out.width = image.dim(2);
  const std::size_t plane = out.width * out.height;
  out.rgb.resize(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * plane + p], 0.0, 1.0);
      out.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return out;
}

PgmImage labels_to_pgm(const LabelMap& labels, std::size_t classes) {
  if (classes < 2 || classes > 256) throw FormatError("pgm: class count must be in 2..256");
  PgmImage out;
  out.width = labels.width;
  out.height = labels.height;
  out.maxval = static_cast<unsigned>(classes - 1);
  for (auto v : labels.labels)
    if (v >= classes) throw FormatError("pgm: label " + std::to_string(v) + " outside " + std::to_string(classes) + " classes");
  out.pixels = labels.labels;
  return out;
}

LabelMap pgm_to_labels(const PgmImage& pgm) { return {pgm.height, pgm.width, pgm.pixels}; }

}  // namespace dmsa
