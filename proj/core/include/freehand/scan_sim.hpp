#pragma once

#include "freehand/pose.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace freehand {

/// Anechoic-or-not cylinder running along the elevational (z) axis.
struct Tube {
  double center_x_mm = 0;  // axial
  double center_y_mm = 0;  // lateral
  double radius_mm = 1;
  double amplitude = 0;
};

struct Inclusion {
  Eigen::Vector3d center_mm = Eigen::Vector3d::Zero();
  Eigen::Vector3d radii_mm = Eigen::Vector3d::Ones();
  double amplitude = 2;
};

struct PhantomSpec {
  Eigen::Vector3d min_mm{-10, -10, -5};
  Eigen::Vector3d max_mm{10, 10, 35};
  double voxel_mm = 0.1;
  /// Gaussian PSF standard deviations (mm) along axial, lateral, elevational.
  Eigen::Vector3d psf_sigma_mm{0.15, 0.3, 0.4};
  std::vector<Tube> tubes;
  std::vector<Inclusion> inclusions;

  void validate() const;
};

/// Speckle envelope field on a regular grid, x (axial) fastest.
struct Phantom {
  std::size_t nx = 0, ny = 0, nz = 0;
  double voxel_mm = 0;
  Eigen::Vector3d origin_mm = Eigen::Vector3d::Zero();  // centre of voxel (0, 0, 0)
  std::vector<float> values;

  float at(std::size_t i, std::size_t j, std::size_t k) const { return values[(k * ny + j) * nx + i]; }
  bool contains(const Eigen::Vector3d& p) const;
  /// Trilinear sample; p must satisfy contains(p).
  double sample(const Eigen::Vector3d& p) const;
};

/// Complex Gaussian scatterers weighted by the structure amplitude, blurred by
/// the separable PSF; the envelope is scaled to a mean of about 0.25.
Phantom make_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Bounding box of every frame of `traj` plus `margin_mm` on each side.
PhantomSpec phantom_spec_for(const Trajectory& traj, const ImageGeometry& geom, double margin_mm = 1.0);

enum class TrajectoryShape { kLinear, kSCurve, kCCurve };

TrajectoryShape parse_shape(const std::string& name);
std::string shape_name(TrajectoryShape s);

struct TrajectorySpec {
  TrajectoryShape shape = TrajectoryShape::kLinear;
  double length_mm = 20;             // nominal elevational travel
  std::size_t n_frames = 100;
  double lateral_amplitude_mm = 0;   // ty amplitude for the curved shapes
  double speed_variation = 0;        // a in z(u) = L (u + a sin(2πfu) / 2πf), |a| < 1
  double speed_cycles = 1;           // f
  /// Gaussian jitter σ per component (mm, mm, mm, °, °, °). tz jitter acts on
  /// the per-frame increment, the others on the absolute pose.
  PoseVector noise;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrajectoryResult {
  Trajectory absolute;
  std::vector<PoseVector> relative;
};

TrajectoryResult make_trajectory(const TrajectorySpec& spec);

struct ScanSequence {
  ImageGeometry geom;
  double frame_rate_hz = 30;
  std::size_t n_frames = 0;
  std::vector<float> frames;  // N x rows x cols, row-major, values in [0, 1]
  Trajectory truth;
  std::vector<PoseVector> relative;
  std::string subject;

  std::size_t frame_size() const { return geom.rows * geom.cols; }
  std::span<const float> frame(std::size_t i) const { return {frames.data() + i * frame_size(), frame_size()}; }
  std::span<float> frame(std::size_t i) { return {frames.data() + i * frame_size(), frame_size()}; }
};

/// Samples the phantom on every frame plane. Throws std::out_of_range naming
/// the first frame that leaves the phantom.
ScanSequence slice(const Phantom& phantom, const Trajectory& traj, const ImageGeometry& geom,
                   double frame_rate_hz = 30.0);

/// Convenience: trajectory, auto-fitted phantom and slices in one call.
struct SimulationSpec {
  TrajectorySpec trajectory;
  ImageGeometry geom{64, 64, 0.1484, 0.1484};
  double voxel_mm = 0.1;
  std::size_t n_tubes = 1;
  double frame_rate_hz = 30;
  std::uint64_t phantom_seed = 0;
};

ScanSequence simulate_scan(const SimulationSpec& spec, const std::string& subject = "subject-0");

/// Randomised dataset member `index`: shape cycles linear / s_curve / c_curve,
/// mean elevational speed drawn from [0.1, 0.35] mm per frame, lateral
/// amplitude from [0.5, 2] mm, mild Gaussian jitter on every component.
SimulationSpec dataset_scan_spec(std::uint64_t seed, std::size_t index, std::size_t n_frames = 48,
                                 std::size_t frame_extent = 64);

}  // namespace freehand
