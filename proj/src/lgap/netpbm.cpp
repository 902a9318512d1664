#include "lgap/netpbm.hpp"

#include "lgap/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace lgap {
namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t parse_size(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoul(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("malformed netpbm header in " + path.string());
  }
}

}  // namespace

PixelImage read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = next_token(in);
  std::size_t channels = 0;
  bool binary = false;
  if (magic == "P5") { channels = 1; binary = true; }
  else if (magic == "P6") { channels = 3; binary = true; }
  else if (magic == "P2") { channels = 1; }
  else if (magic == "P3") { channels = 3; }
  else throw IoError(path.string() + " is not a PGM/PPM image");

  const std::size_t width = parse_size(next_token(in), path);
  const std::size_t height = parse_size(next_token(in), path);
  const std::size_t maxval = parse_size(next_token(in), path);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw IoError("unsupported netpbm geometry in " + path.string());
  }
  PixelImage img{{channels, height, width}, std::vector<double>(channels * height * width)};
  const std::size_t pixels = height * width;
  const double scale = static_cast<double>(maxval);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::size_t v = 0;
      if (binary) {
        const int hi = in.get();
        if (hi == EOF) throw IoError("truncated image data in " + path.string());
        v = static_cast<std::size_t>(hi);
        if (maxval > 255) {
          const int lo = in.get();
          if (lo == EOF) throw IoError("truncated image data in " + path.string());
          v = (v << 8) | static_cast<std::size_t>(lo);
        }
      } else {
        v = parse_size(next_token(in), path);
      }
      if (v > maxval) throw IoError("pixel exceeds maxval in " + path.string());
      img.values[c * pixels + p] = static_cast<double>(v) / scale;
    }
  }
  return img;
}

void write_netpbm(const std::filesystem::path& path, const SampleShape& shape,
                  const double* values) {
  if (shape.channels != 1 && shape.channels != 3) {
    throw ShapeError("netpbm output needs 1 or 3 channels, got " + shape.str());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << (shape.channels == 1 ? "P5" : "P6") << "\n"
      << shape.width << " " << shape.height << "\n255\n";
  const std::size_t pixels = shape.height * shape.width;
  std::string buf(pixels * shape.channels, '\0');
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const double v = std::clamp(values[c * pixels + p], 0.0, 1.0);
      buf[p * shape.channels + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace lgap
