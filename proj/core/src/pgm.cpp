#include "freehand/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace freehand {

std::uint16_t to_u16(double value, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("pgm: empty value range");
  const double t = std::clamp((value - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(t * 65535.0));
}

void write_pgm16(const std::filesystem::path& path, std::size_t rows, std::size_t cols, std::span<const double> values,
                 double lo, double hi) {
  if (values.size() != rows * cols) throw std::invalid_argument("pgm: value count does not match image size");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "P5\n" << cols << ' ' << rows << "\n65535\n";
  for (double v : values) {
    const std::uint16_t s = to_u16(v, lo, hi);
    const char bytes[2] = {static_cast<char>(s >> 8), static_cast<char>(s & 0xff)};
    os.write(bytes, 2);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Pgm16 read_pgm16(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  Pgm16 img;
  is >> magic >> img.cols >> img.rows >> maxval;
  if (magic != "P5" || maxval != 65535) throw std::runtime_error("pgm: not a 16-bit P5 file");
  is.get();
  img.samples.resize(img.rows * img.cols);
  for (auto& s : img.samples) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    s = static_cast<std::uint16_t>((b[0] << 8) | b[1]);
  }
  if (!is) throw std::runtime_error("pgm: truncated file");
  return img;
}

}  // namespace freehand
