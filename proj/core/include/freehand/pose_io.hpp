#pragma once

#include "freehand/pose.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace freehand {

/// CSV header used for every pose file.
inline constexpr const char* kPoseCsvHeader = "frame,tx_mm,ty_mm,tz_mm,rx_deg,ry_deg,rz_deg";

/// Writes one row per pose with 17 significant digits so values round-trip.
void write_pose_csv(std::ostream& os, const std::vector<PoseVector>& poses);
void write_pose_csv(const std::filesystem::path& path, const std::vector<PoseVector>& poses);

/// Throws std::runtime_error on malformed input (wrong header, column count,
/// non-numeric field or out-of-order frame index).
std::vector<PoseVector> read_pose_csv(std::istream& is);
std::vector<PoseVector> read_pose_csv(const std::filesystem::path& path);

std::vector<PoseVector> poses_of(const Trajectory& traj);
Trajectory trajectory_of(const std::vector<PoseVector>& poses);

}  // namespace freehand
