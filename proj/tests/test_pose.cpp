#include "freehand/pose.hpp"
#include "freehand/pose_io.hpp"

#include <Eigen/LU>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace freehand;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Hand-written elementary rotations; independent of the library.
Eigen::Matrix3d rot_x(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}
Eigen::Matrix3d rot_y(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  Eigen::Matrix3d m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}
Eigen::Matrix3d rot_z(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  Eigen::Matrix3d m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

Eigen::Matrix4d homogeneous(const PoseVector& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rot_z(p.rz) * rot_y(p.ry) * rot_x(p.rx);
  m.topRightCorner<3, 1>() = Eigen::Vector3d(p.tx, p.ty, p.tz);
  return m;
}

PoseVector random_pose(std::mt19937_64& rng, double t = 40, double a = 60) {
  std::uniform_real_distribution<double> ut(-t, t), ua(-a, a);
  return {ut(rng), ut(rng), ut(rng), ua(rng), ua(rng), ua(rng)};
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(PoseToTransform, ZeroPoseIsIdentity) {
  const auto T = pose_to_transform({});
  EXPECT_EQ(T.matrix(), Eigen::Matrix4d::Identity());
}

TEST(PoseToTransform, PureTranslation) {
  const auto T = pose_to_transform({1, 2, 3, 0, 0, 0});
  EXPECT_EQ(T.rotation, Eigen::Matrix3d::Identity());
  EXPECT_EQ(T.translation, Eigen::Vector3d(1, 2, 3));
}

TEST(PoseToTransform, NinetyDegreesAboutX) {
  Eigen::Matrix3d expected;
  expected << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  EXPECT_LT(max_abs(pose_to_transform({0, 0, 0, 90, 0, 0}).rotation - expected), 1e-15);
}

TEST(PoseToTransform, MatchesHandComposedEuler) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_pose(rng, 40, 170);
    EXPECT_LT(max_abs(pose_to_transform(p).matrix() - homogeneous(p)), 1e-12);
  }
}

TEST(PoseToTransform, RejectsNonFinite) {
  EXPECT_THROW(pose_to_transform({0, 0, 0, std::nan(""), 0, 0}), std::invalid_argument);
  EXPECT_THROW(pose_to_transform({INFINITY, 0, 0, 0, 0, 0}), std::invalid_argument);
}

TEST(TransformToPose, IdentityIsZero) { EXPECT_EQ(transform_to_pose(TransformSE3::identity()), PoseVector{}); }

TEST(TransformToPose, RandomRoundTrip) {
  std::mt19937_64 rng(11);
  double pose_err = 0, mat_err = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_pose(rng);
    const auto T = pose_to_transform(p);
    const auto q = transform_to_pose(T);
    for (std::size_t k = 0; k < 6; ++k) pose_err = std::max(pose_err, std::abs(p[k] - q[k]));
    mat_err = std::max(mat_err, max_abs(pose_to_transform(q).matrix() - T.matrix()));
  }
  EXPECT_LT(pose_err, 1e-9);
  EXPECT_LT(mat_err, 1e-9);
}

TEST(TransformToPose, GimbalLockFlagged) {
  for (double ry : {90.0, -90.0}) {
    const auto ex = extract_pose(pose_to_transform({0, 0, 0, 0, ry, 0}));
    EXPECT_TRUE(ex.gimbal_lock);
    EXPECT_EQ(ex.pose.rx, 0.0);
    EXPECT_NEAR(ex.pose.ry, ry, 1e-9);
  }
  EXPECT_FALSE(extract_pose(pose_to_transform({0, 0, 0, 0, 89.9, 0})).gimbal_lock);
}

TEST(TransformToPose, GimbalLockTieBreakReproducesRotation) {
  // At lock only rz ± rx is observable; rx pinned to 0 must still rebuild R.
  const auto T = pose_to_transform({1, 2, 3, 25, 90, -40});
  const auto ex = extract_pose(T);
  ASSERT_TRUE(ex.gimbal_lock);
  EXPECT_LT(max_abs(pose_to_transform(ex.pose).matrix() - T.matrix()), 1e-6);
}

TEST(RelativeTransform, SameIsIdentity) {
  std::mt19937_64 rng(5);
  const auto T = pose_to_transform(random_pose(rng));
  EXPECT_LT(max_abs(relative_transform(T, T).matrix() - Eigen::Matrix4d::Identity()), 1e-12);
}

TEST(RelativeTransform, FromIdentityIsTarget) {
  std::mt19937_64 rng(6);
  const auto T = pose_to_transform(random_pose(rng));
  EXPECT_LT(max_abs(relative_transform(TransformSE3::identity(), T).matrix() - T.matrix()), 1e-12);
}

TEST(RelativeTransform, MultipliesBack) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Matrix4d a = homogeneous(random_pose(rng)), b = homogeneous(random_pose(rng));
    const auto d = relative_transform(TransformSE3::from_matrix(a), TransformSE3::from_matrix(b));
    EXPECT_LT(max_abs(d.matrix() * a - b), 1e-9);
    EXPECT_LT(max_abs(d.matrix() - b * a.inverse()), 1e-9);
  }
}

TEST(Accumulate, IdentitiesStayIdentity) {
  const auto traj = accumulate({TransformSE3::identity(), TransformSE3::identity(), TransformSE3::identity()});
  ASSERT_EQ(traj.size(), 4u);
  for (const auto& T : traj) EXPECT_EQ(T.matrix(), Eigen::Matrix4d::Identity());
}

TEST(Accumulate, ConstantElevationalStep) {
  const auto traj = accumulate(std::vector<TransformSE3>(10, pose_to_transform({0, 0, 0.2, 0, 0, 0})));
  ASSERT_EQ(traj.size(), 11u);
  EXPECT_NEAR(traj.back().translation.z(), 2.0, 1e-12);
  EXPECT_EQ(traj.back().translation.x(), 0.0);
}

TEST(Accumulate, MatchesLeftFold) {
  std::mt19937_64 rng(8);
  std::vector<TransformSE3> rel;
  std::vector<Eigen::Matrix4d> mats;
  for (int i = 0; i < 50; ++i) {
    const auto p = random_pose(rng, 2, 5);
    rel.push_back(pose_to_transform(p));
    mats.push_back(homogeneous(p));
  }
  const auto traj = accumulate(rel);
  Eigen::Matrix4d acc = Eigen::Matrix4d::Identity();
  EXPECT_EQ(traj[0].matrix(), acc);
  for (std::size_t n = 0; n < mats.size(); ++n) {
    acc = mats[n] * acc;
    EXPECT_LT(max_abs(traj[n + 1].matrix() - acc), 1e-9);
  }
}

TEST(Accumulate, SplitChainComposes) {
  std::mt19937_64 rng(9);
  std::vector<TransformSE3> rel;
  for (int i = 0; i < 40; ++i) rel.push_back(pose_to_transform(random_pose(rng, 3, 10)));
  const auto full = accumulate(rel);
  for (std::size_t cut : {1u, 13u, 39u}) {
    const auto head = accumulate({rel.begin(), rel.begin() + cut});
    const auto tail = accumulate({rel.begin() + cut, rel.end()});
    EXPECT_LT(max_abs((tail.back() * head.back()).matrix() - full.back().matrix()), 1e-9);
  }
}

TEST(Accumulate, RelativesReaccumulate) {
  std::mt19937_64 rng(10);
  Trajectory traj{TransformSE3::identity()};
  for (int i = 0; i < 30; ++i) traj.push_back(pose_to_transform(random_pose(rng)));
  const auto again = accumulate(relatives_of(traj));
  for (std::size_t i = 0; i < traj.size(); ++i) EXPECT_LT(max_abs(again[i].matrix() - traj[i].matrix()), 1e-9);
}

TEST(Accumulate, OrthonormalAfterTenThousandSteps) {
  std::mt19937_64 rng(12);
  std::vector<TransformSE3> rel;
  for (int i = 0; i < 10000; ++i) rel.push_back(pose_to_transform(random_pose(rng, 0.1, 3)));
  const auto traj = accumulate(rel);
  const Eigen::Matrix3d R = traj.back().rotation;
  EXPECT_LT(max_abs(R.transpose() * R - Eigen::Matrix3d::Identity()), 1e-7);
  EXPECT_NEAR(R.determinant(), 1.0, 1e-7);
}

TEST(Accumulate, EmptyThrows) { EXPECT_THROW(accumulate({}), std::invalid_argument); }

TEST(FrameGrid, IdentitySpacingMatchesPitch) {
  const ImageGeometry g{2, 2, 0.1484, 0.1484};
  const auto pts = frame_grid_points(TransformSE3::identity(), g);
  ASSERT_EQ(pts.size(), 4u);
  EXPECT_NEAR((pts[1] - pts[0]).norm(), 0.1484, 1e-15);
  EXPECT_NEAR((pts[2] - pts[0]).norm(), 0.1484, 1e-15);
  for (const auto& p : pts) EXPECT_EQ(p.z(), 0.0);
}

TEST(FrameGrid, TranslationShiftsEveryPoint) {
  const ImageGeometry g{3, 4, 0.2, 0.3};
  const auto base = frame_grid_points(TransformSE3::identity(), g);
  const auto moved = frame_grid_points(pose_to_transform({1, -2, 5, 0, 0, 0}), g);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_LT((moved[i] - base[i] - Eigen::Vector3d(1, -2, 5)).norm(), 1e-15);
}

TEST(FrameGrid, RollRotatesCornersInPlane) {
  const ImageGeometry g{2, 2, 1.0, 1.0};
  const auto pts = frame_grid_points(pose_to_transform({0, 0, 0, 0, 0, 90}), g, GridDensity::kCornersCenter);
  // Corners (±0.5, ±0.5) rotated by +90° about z: (x, y) -> (-y, x).
  const double c[4][2] = {{-0.5, -0.5}, {-0.5, 0.5}, {0.5, -0.5}, {0.5, 0.5}};
  ASSERT_EQ(pts.size(), 5u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(pts[i].x(), -c[i][1], 1e-15);
    EXPECT_NEAR(pts[i].y(), c[i][0], 1e-15);
    EXPECT_EQ(pts[i].z(), 0.0);
  }
  EXPECT_LT(pts[4].norm(), 1e-15);
}

TEST(FrameGrid, RejectsNonPositivePitch) {
  EXPECT_THROW(frame_grid_points(TransformSE3::identity(), ImageGeometry{2, 2, 0.0, 0.1}), std::invalid_argument);
}

TEST(Angles, NormalizeIntoHalfOpenRange) {
  EXPECT_EQ(normalize_degrees(180.0), 180.0);
  EXPECT_EQ(normalize_degrees(-180.0), 180.0);
  EXPECT_NEAR(normalize_degrees(190.0), -170.0, 1e-12);
  EXPECT_NEAR(normalize_degrees(-725.0), -5.0, 1e-12);
}

TEST(PoseCsv, RoundTripIsExact) {
  std::mt19937_64 rng(13);
  std::vector<PoseVector> poses;
  for (int i = 0; i < 20; ++i) poses.push_back(random_pose(rng));
  std::stringstream ss;
  write_pose_csv(ss, poses);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), kPoseCsvHeader);
  EXPECT_EQ(read_pose_csv(ss), poses);
}

TEST(PoseCsv, RejectsMalformed) {
  std::stringstream bad_header("frame,tx\n0,1\n");
  EXPECT_THROW(read_pose_csv(bad_header), std::runtime_error);
  std::stringstream short_row(std::string(kPoseCsvHeader) + "\n0,1,2,3\n");
  EXPECT_THROW(read_pose_csv(short_row), std::runtime_error);
  std::stringstream order(std::string(kPoseCsvHeader) + "\n1,0,0,0,0,0,0\n");
  EXPECT_THROW(read_pose_csv(order), std::runtime_error);
}
