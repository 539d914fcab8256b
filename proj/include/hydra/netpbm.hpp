#pragma once

// Minimal binary PPM (P6) / PGM (P5) reader and writer, 8-bit only.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "hydra/errors.hpp"

namespace hydra::netpbm {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t channel) const { return pixels[(y * width + x) * 3 + channel]; }
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

namespace detail {

inline void skip_space_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_header_int(std::istream& in) {
  skip_space_and_comments(in);
  std::size_t v = 0;
  if (!(in >> v)) throw FormatError("netpbm: malformed header");
  return v;
}

struct Header {
  std::size_t width, height;
};

inline Header read_header(std::istream& in, const char* magic) {
  char m[2] = {0, 0};
  in.read(m, 2);
  if (!in || m[0] != magic[0] || m[1] != magic[1]) {
    throw FormatError(std::string("netpbm: expected magic ") + magic);
  }
  Header h{read_header_int(in), read_header_int(in)};
  const std::size_t maxval = read_header_int(in);
  if (h.width == 0 || h.height == 0) throw FormatError("netpbm: empty image");
  if (maxval == 0 || maxval > 255) throw FormatError("netpbm: only 8-bit images are supported");
  in.get();  // single whitespace before the raster
  return h;
}

}  // namespace detail

inline RgbImage read_ppm(std::istream& in) {
  const auto h = detail::read_header(in, "P6");
  RgbImage img{h.width, h.height, std::vector<std::uint8_t>(h.width * h.height * 3)};
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw FormatError("ppm: truncated raster");
  return img;
}

inline GrayImage read_pgm(std::istream& in) {
  const auto h = detail::read_header(in, "P5");
  GrayImage img{h.width, h.height, std::vector<std::uint8_t>(h.width * h.height)};
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw FormatError("pgm: truncated raster");
  return img;
}

inline void write_ppm(std::ostream& out, const RgbImage& img) {
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline void write_pgm(std::ostream& out, const GrayImage& img) {
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline RgbImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("ppm: cannot open " + path);
  return read_ppm(in);
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("pgm: cannot open " + path);
  return read_pgm(in);
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("ppm: cannot write " + path);
  write_ppm(out, img);
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("pgm: cannot write " + path);
  write_pgm(out, img);
}

}  // namespace hydra::netpbm
