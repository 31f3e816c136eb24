#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace freehand {

/// Maps [lo, hi] affinely onto [0, 65535] (clamped, rounded to nearest).
std::uint16_t to_u16(double value, double lo, double hi);

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples).
void write_pgm16(const std::filesystem::path& path, std::size_t rows, std::size_t cols, std::span<const double> values,
                 double lo, double hi);

struct Pgm16 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint16_t> samples;
};

Pgm16 read_pgm16(const std::filesystem::path& path);

}  // namespace freehand
