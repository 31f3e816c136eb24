#pragma once

#include "freehand/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <vector>

namespace freehand {

enum class CorrNormalization {
  kNcc,  ///< zero-mean, unit-norm patches over channels x patch area
  kDot,  ///< raw inner product divided by the patch element count
};

/// Free parameters of the patch-wise correlation. Both extents are odd so
/// the RoI and the patch have a centre.
struct CorrConfig {
  std::size_t roi_extent = 9;
  std::size_t patch_extent = 5;
  std::size_t roi_stride = 7;
  CorrNormalization normalization = CorrNormalization::kNcc;

  void validate() const;
  /// Side of each correlation array: roi_extent - patch_extent + 1.
  std::size_t displacement_extent() const { return roi_extent - patch_extent + 1; }
};

/// RoI layout on an H x W map. The grid is inset (centred) so every window
/// lies inside the map.
struct RoiGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t row_offset = 0;
  std::size_t col_offset = 0;

  std::size_t count() const { return rows * cols; }
};

RoiGrid roi_grid(std::size_t height, std::size_t width, const CorrConfig& cfg);

/// Stacked correlation arrays, `values` shaped (n_rois, d, d). Entry (u, v)
/// of an array compares the centre patch of the first map with the patch of
/// the second map whose top-left corner sits at (u, v) inside the RoI, so
/// the centre entry is the zero-displacement comparison.
struct CorrelationVolume {
  RoiGrid grid;
  std::size_t d = 0;
  ad::Tensor values;

  double at(std::size_t roi, std::size_t u, std::size_t v) const;
  /// (u, v) of the largest entry of one array; ties go to the first in
  /// row-major order.
  std::pair<std::size_t, std::size_t> argmax(std::size_t roi) const;
};

/// a, b: (C, H, W). Differentiable in both inputs.
CorrelationVolume correlate(const ad::Tensor& a, const ad::Tensor& b, const CorrConfig& cfg);

/// Batched form used by the network: a, b (N, C, H, W) -> (N, d*d, rows, cols),
/// i.e. each displacement becomes a channel on the RoI grid.
ad::Tensor correlate_batch(const ad::Tensor& a, const ad::Tensor& b, const CorrConfig& cfg);

/// Per-RoI mean correlation, row-major over the RoI grid.
std::vector<double> mean_map(const CorrelationVolume& vol);

/// 16-bit binary PGM of the mean map with [-1, 1] mapped affinely to [0, 65535].
void write_mean_map_pgm(const std::filesystem::path& path, const CorrelationVolume& vol);

}  // namespace freehand
