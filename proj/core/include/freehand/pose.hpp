#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <vector>

namespace freehand {

/// 6-DoF pose or motion: translations in millimetres along the axial (x),
/// lateral (y) and elevational (z) axes, rotations in degrees about the same
/// axes (pitch, yaw, roll).
struct PoseVector {
  double tx = 0.0;
  double ty = 0.0;
  double tz = 0.0;
  double rx = 0.0;
  double ry = 0.0;
  double rz = 0.0;

  static PoseVector from_array(const std::array<double, 6>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  std::array<double, 6> to_array() const { return {tx, ty, tz, rx, ry, rz}; }

  double operator[](std::size_t k) const;
  double& operator[](std::size_t k);

  bool is_finite() const;

  friend bool operator==(const PoseVector&, const PoseVector&) = default;
};

/// Rigid transform x -> R x + t. Rotation is orthonormal with det +1.
struct TransformSE3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static TransformSE3 identity() { return {}; }
  static TransformSE3 from_matrix(const Eigen::Matrix4d& m);

  Eigen::Matrix4d matrix() const;
  TransformSE3 inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  /// Orthonormality and determinant within the given tolerance.
  bool is_valid(double tol = 1e-9) const;
};

/// this ∘ other, i.e. apply `other` first.
TransformSE3 operator*(const TransformSE3& a, const TransformSE3& b);

/// Absolute transforms; element 0 is the identity.
using Trajectory = std::vector<TransformSE3>;

/// Euler convention: R = Rz(rz) * Ry(ry) * Rx(rx), angles in degrees.
TransformSE3 pose_to_transform(const PoseVector& p);

struct PoseExtraction {
  PoseVector pose;
  bool gimbal_lock = false;
};

/// Inverse of pose_to_transform. At |ry| = 90° the roll/pitch split is
/// ambiguous: rx is pinned to 0, the remaining rotation lands in rz and the
/// result is flagged.
PoseExtraction extract_pose(const TransformSE3& T);

/// extract_pose without the flag.
PoseVector transform_to_pose(const TransformSE3& T);

/// next ∘ current⁻¹, so that relative_transform(a, b) * a == b.
TransformSE3 relative_transform(const TransformSE3& current, const TransformSE3& next);

/// Cumulative product T_{n+1} = ΔT_n T_n with T_0 = I. Rotations are
/// re-orthonormalised every kReorthonormalizeEvery compositions.
Trajectory accumulate(const std::vector<TransformSE3>& relatives);

/// Relative transforms between consecutive trajectory elements.
std::vector<TransformSE3> relatives_of(const Trajectory& traj);

inline constexpr std::size_t kReorthonormalizeEvery = 64;

/// Nearest rotation in the Frobenius sense (polar decomposition).
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m);

/// Wraps degrees into (-180, 180].
double normalize_degrees(double deg);

/// Pixel grid of a B-mode frame. Rows run along the axial axis, columns along
/// the lateral axis; the frame origin is the image centre.
struct ImageGeometry {
  std::size_t rows = 256;
  std::size_t cols = 256;
  double pitch_axial_mm = 0.1484;
  double pitch_lateral_mm = 0.1484;

  void validate() const;
  /// In-plane position of pixel (r, c) in the frame's local coordinates.
  Eigen::Vector3d local_point(double r, double c) const;
};

enum class GridDensity {
  kAllPixels,       ///< every pixel, row-major
  kCornersCenter,   ///< four corners then the centre
};

std::vector<Eigen::Vector3d> local_grid(const ImageGeometry& geom, GridDensity density);

/// Grid points of a frame mapped through T (millimetres).
std::vector<Eigen::Vector3d> frame_grid_points(const TransformSE3& T, const ImageGeometry& geom,
                                               GridDensity density = GridDensity::kAllPixels);

}  // namespace freehand
