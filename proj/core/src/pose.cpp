#include "freehand/pose.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace freehand {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Singularity band around |ry| = 90°, in degrees.
constexpr double kGimbalBandDeg = 1e-7;

Eigen::Matrix3d rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

Eigen::Matrix3d rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

Eigen::Matrix3d rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

}  // namespace

double PoseVector::operator[](std::size_t k) const {
  switch (k) {
    case 0: return tx;
    case 1: return ty;
    case 2: return tz;
    case 3: return rx;
    case 4: return ry;
    case 5: return rz;
    default: throw std::out_of_range("PoseVector index " + std::to_string(k));
  }
}

double& PoseVector::operator[](std::size_t k) {
  switch (k) {
    case 0: return tx;
    case 1: return ty;
    case 2: return tz;
    case 3: return rx;
    case 4: return ry;
    case 5: return rz;
    default: throw std::out_of_range("PoseVector index " + std::to_string(k));
  }
}

bool PoseVector::is_finite() const {
  for (double v : to_array()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

TransformSE3 TransformSE3::from_matrix(const Eigen::Matrix4d& m) {
  TransformSE3 T;
  T.rotation = m.topLeftCorner<3, 3>();
  T.translation = m.topRightCorner<3, 1>();
  return T;
}

Eigen::Matrix4d TransformSE3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

TransformSE3 TransformSE3::inverse() const {
  TransformSE3 inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

bool TransformSE3::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

TransformSE3 operator*(const TransformSE3& a, const TransformSE3& b) {
  TransformSE3 out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

double normalize_degrees(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r <= -180.0) r += 360.0;
  if (r > 180.0) r -= 360.0;
  return r;
}

TransformSE3 pose_to_transform(const PoseVector& p) {
  if (!p.is_finite()) throw std::invalid_argument("pose_to_transform: non-finite pose component");
  TransformSE3 T;
  T.rotation = rot_z(p.rz * kDegToRad) * rot_y(p.ry * kDegToRad) * rot_x(p.rx * kDegToRad);
  T.translation = {p.tx, p.ty, p.tz};
  return T;
}

PoseExtraction extract_pose(const TransformSE3& T) {
  const Eigen::Matrix3d& R = T.rotation;
  PoseExtraction out;
  out.pose.tx = T.translation.x();
  out.pose.ty = T.translation.y();
  out.pose.tz = T.translation.z();

  const double ry = std::atan2(-R(2, 0), std::hypot(R(0, 0), R(1, 0)));
  const double ry_deg = ry * kRadToDeg;
  if (std::abs(90.0 - std::abs(ry_deg)) <= kGimbalBandDeg) {
    // Rz * Ry(±90°) leaves only rz - (±)rx observable; pin rx to zero.
    out.gimbal_lock = true;
    out.pose.ry = ry_deg > 0 ? 90.0 : -90.0;
    out.pose.rx = 0.0;
    out.pose.rz = normalize_degrees(std::atan2(-R(0, 1), R(1, 1)) * kRadToDeg);
    return out;
  }
  out.pose.rx = normalize_degrees(std::atan2(R(2, 1), R(2, 2)) * kRadToDeg);
  out.pose.ry = normalize_degrees(ry_deg);
  out.pose.rz = normalize_degrees(std::atan2(R(1, 0), R(0, 0)) * kRadToDeg);
  return out;
}

PoseVector transform_to_pose(const TransformSE3& T) { return extract_pose(T).pose; }

TransformSE3 relative_transform(const TransformSE3& current, const TransformSE3& next) {
  return next * current.inverse();
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

Trajectory accumulate(const std::vector<TransformSE3>& relatives) {
  if (relatives.empty()) throw std::invalid_argument("accumulate: empty list of relative transforms");
  Trajectory traj;
  traj.reserve(relatives.size() + 1);
  traj.push_back(TransformSE3::identity());
  for (std::size_t i = 0; i < relatives.size(); ++i) {
    TransformSE3 next = relatives[i] * traj.back();
    if ((i + 1) % kReorthonormalizeEvery == 0) next.rotation = orthonormalize(next.rotation);
    traj.push_back(next);
  }
  return traj;
}

std::vector<TransformSE3> relatives_of(const Trajectory& traj) {
  std::vector<TransformSE3> rel;
  if (traj.size() < 2) return rel;
  rel.reserve(traj.size() - 1);
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) rel.push_back(relative_transform(traj[i], traj[i + 1]));
  return rel;
}

void ImageGeometry::validate() const {
  if (rows == 0 || cols == 0) throw std::invalid_argument("image geometry: empty pixel grid");
  if (!(pitch_axial_mm > 0.0) || !(pitch_lateral_mm > 0.0) || !std::isfinite(pitch_axial_mm) ||
      !std::isfinite(pitch_lateral_mm)) {
    throw std::invalid_argument("image geometry: pixel pitch must be positive");
  }
}

Eigen::Vector3d ImageGeometry::local_point(double r, double c) const {
  return {(r - 0.5 * static_cast<double>(rows - 1)) * pitch_axial_mm,
          (c - 0.5 * static_cast<double>(cols - 1)) * pitch_lateral_mm, 0.0};
}

std::vector<Eigen::Vector3d> local_grid(const ImageGeometry& geom, GridDensity density) {
  geom.validate();
  std::vector<Eigen::Vector3d> pts;
  if (density == GridDensity::kAllPixels) {
    pts.reserve(geom.rows * geom.cols);
    for (std::size_t r = 0; r < geom.rows; ++r)
      for (std::size_t c = 0; c < geom.cols; ++c)
        pts.push_back(geom.local_point(static_cast<double>(r), static_cast<double>(c)));
    return pts;
  }
  const double rmax = static_cast<double>(geom.rows - 1);
  const double cmax = static_cast<double>(geom.cols - 1);
  pts = {geom.local_point(0, 0), geom.local_point(0, cmax), geom.local_point(rmax, 0),
         geom.local_point(rmax, cmax), geom.local_point(0.5 * rmax, 0.5 * cmax)};
  return pts;
}

std::vector<Eigen::Vector3d> frame_grid_points(const TransformSE3& T, const ImageGeometry& geom,
                                               GridDensity density) {
  auto pts = local_grid(geom, density);
  for (auto& p : pts) p = T.apply(p);
  return pts;
}

}  // namespace freehand
