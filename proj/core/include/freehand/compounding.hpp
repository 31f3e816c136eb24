#pragma once

#include "freehand/pose.hpp"
#include "freehand/scan_sim.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace freehand {

/// Splat accumulator, x fastest. origin_mm is the centre of voxel (0, 0, 0).
struct VolumeGrid {
  std::size_t nx = 0, ny = 0, nz = 0;
  double voxel_mm = 0;
  Eigen::Vector3d origin_mm = Eigen::Vector3d::Zero();
  std::vector<double> sum;
  std::vector<std::uint32_t> count;

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (k * ny + j) * nx + i; }
  std::size_t size() const { return sum.size(); }
  double mean(std::size_t idx) const { return count[idx] ? sum[idx] / count[idx] : 0.0; }
  double mean(std::size_t i, std::size_t j, std::size_t k) const { return mean(index(i, j, k)); }
  std::size_t occupied() const;
  /// Voxel index range [lo, hi] along each axis that holds at least one sample.
  std::array<std::pair<std::size_t, std::size_t>, 3> occupied_bounds() const;
};

/// Nearest-voxel splat of every pixel through its frame transform. The box
/// is fitted to the mapped points with one empty voxel of margin per side.
VolumeGrid compound(const ScanSequence& scan, const Trajectory& traj, double voxel_mm);

/// Empty voxels with a filled voxel within `radius_voxels` (Euclidean) take
/// the inverse-distance-weighted mean of those neighbours.
VolumeGrid fill_holes(const VolumeGrid& vol, double radius_voxels);

/// FVL1: magic, u32 nx ny nz, f32 voxel, f32 origin xyz, f32 means (x fastest).
void write_fvl(const std::filesystem::path& path, const VolumeGrid& vol);

struct FvlVolume {
  std::size_t nx = 0, ny = 0, nz = 0;
  float voxel_mm = 0;
  std::array<float, 3> origin_mm{};
  std::vector<float> values;
};
FvlVolume read_fvl(const std::filesystem::path& path);

/// JSON sidecar: geometry, occupancy and any provenance entries.
void write_volume_sidecar(const std::filesystem::path& path, const VolumeGrid& vol,
                          const std::map<std::string, std::string>& provenance);

}  // namespace freehand
