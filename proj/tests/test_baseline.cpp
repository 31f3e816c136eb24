#include "freehand/baseline.hpp"
#include "freehand/scan_sim.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace freehand;
namespace fs = std::filesystem;

namespace {

const ImageGeometry kGeom{64, 64, 0.1484, 0.1484};

DecorrModel calibrated() {
  static const DecorrModel m =
      calibrate(make_calibration_pairs(kGeom, {0.05, 0.1, 0.2, 0.3, 0.45, 0.6, 0.8}, 4, 21));
  return m;
}

// Two frames related by an exact in-plane pixel shift plus an elevational step.
ScanSequence shifted_pair(int dr, int dc, double tz, std::uint64_t seed) {
  const Trajectory t{TransformSE3::identity(),
                     pose_to_transform({dr * kGeom.pitch_axial_mm, dc * kGeom.pitch_lateral_mm, tz, 0, 0, 0})};
  const Phantom ph = make_phantom(phantom_spec_for(t, kGeom, 1.5), seed);
  return slice(ph, t, kGeom);
}

}  // namespace

TEST(Calibration, TableIsMonotone) {
  const DecorrModel m = calibrated();
  ASSERT_EQ(m.table.size(), 8u);
  EXPECT_EQ(m.table.front(), std::make_pair(1.0, 0.0));
  for (std::size_t i = 1; i < m.table.size(); ++i) {
    EXPECT_LT(m.table[i].first, m.table[i - 1].first);
    EXPECT_GT(m.table[i].second, m.table[i - 1].second);
  }
  EXPECT_LT(m.min_ncc(), 0.3);
  EXPECT_DOUBLE_EQ(m.max_gap(), 0.8);
}

TEST(Calibration, LookupInvertsTableAndIsMonotone) {
  const DecorrModel m = calibrated();
  for (const auto& [ncc, gap] : m.table) EXPECT_NEAR(m.lookup(ncc), gap, 1e-12);
  double prev = -1;
  for (double ncc = 1.0; ncc > m.min_ncc(); ncc -= 0.01) {
    const double g = m.lookup(ncc);
    EXPECT_GE(g, prev);
    prev = g;
  }
  bool clamped = false;
  EXPECT_EQ(m.lookup(m.min_ncc() - 0.1, &clamped), m.max_gap());
  EXPECT_TRUE(clamped);
  m.lookup(0.99, &clamped);
  EXPECT_FALSE(clamped);
}

TEST(Calibration, LinearInterpolationByHand) {
  DecorrModel m;
  m.table = {{1.0, 0.0}, {0.8, 0.1}, {0.4, 0.5}};
  EXPECT_NEAR(m.lookup(0.9), 0.05, 1e-15);
  EXPECT_NEAR(m.lookup(0.6), 0.3, 1e-15);
  EXPECT_EQ(m.lookup(1.2), 0.0);
}

TEST(Calibration, RejectsTooFewOrNonMonotone) {
  auto pairs = make_calibration_pairs(kGeom, {0.1, 0.4}, 4, 3);
  EXPECT_THROW(calibrate(pairs), std::invalid_argument);
  // Two unrelated random pairs labelled as tiny gaps break monotonicity.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  for (int k = 0; k < 6; ++k) {
    CalibrationPair p;
    p.rows = p.cols = 64;
    p.a.resize(64 * 64);
    p.b.resize(64 * 64);
    for (auto& x : p.a) x = u(rng);
    for (auto& x : p.b) x = u(rng);
    p.gap_mm = 0.01;
    pairs.push_back(p);
  }
  try {
    calibrate(pairs);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("calibration failed"), std::string::npos);
  }
}

TEST(InPlane, RecoversIntegerShiftsExactly) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> d(-5, 5);
  for (int trial = 0; trial < 12; ++trial) {
    const int dr = d(rng), dc = d(rng);
    const ScanSequence s = shifted_pair(dr, dc, 0.0, 100 + trial);
    const auto sh = estimate_inplane(frame_view(s, 0), frame_view(s, 1), 6);
    EXPECT_EQ(sh.row, dr);
    EXPECT_EQ(sh.col, dc);
    EXPECT_EQ(sh.sub_row, dr);
    EXPECT_EQ(sh.sub_col, dc);
    EXPECT_GT(sh.peak_ncc, 1 - 1e-9);
  }
}

TEST(InPlane, IntegerPeakSurvivesElevationalDecorrelation) {
  for (int trial = 0; trial < 8; ++trial) {
    const int dr = trial % 5 - 2, dc = 3 - trial % 7;
    const ScanSequence s = shifted_pair(dr, dc, 0.2, 200 + trial);
    const auto sh = estimate_inplane(frame_view(s, 0), frame_view(s, 1), 6);
    EXPECT_EQ(sh.row, dr);
    EXPECT_EQ(sh.col, dc);
    EXPECT_LE(std::abs(sh.sub_row - dr), 0.5);
    EXPECT_LE(std::abs(sh.sub_col - dc), 0.5);
  }
}

TEST(InPlane, RejectsMismatchedOrSmallFrames) {
  std::vector<float> a(64 * 64), b(32 * 32);
  EXPECT_THROW(estimate_inplane({a, 64, 64}, {b, 32, 32}, 3), std::invalid_argument);
  EXPECT_THROW(estimate_inplane({b, 32, 32}, {b, 32, 32}, 15), std::invalid_argument);
}

TEST(Step, ElevationalEstimateTracksGap) {
  const DecorrModel m = calibrated();
  double prev = 0;
  for (double tz : {0.05, 0.15, 0.3, 0.5}) {
    double mean = 0;
    for (int k = 0; k < 4; ++k) {
      const ScanSequence s = shifted_pair(1, -2, tz, 300 + k);
      const auto st = estimate_step(frame_view(s, 0), frame_view(s, 1), kGeom, m);
      EXPECT_EQ(st.motion.rx, 0.0);
      EXPECT_EQ(st.motion.ry, 0.0);
      EXPECT_EQ(st.motion.rz, 0.0);
      EXPECT_EQ(st.shift.row, 1);
      EXPECT_EQ(st.shift.col, -2);
      EXPECT_NEAR(st.motion.tx, 1 * kGeom.pitch_axial_mm, 0.5 * kGeom.pitch_axial_mm);
      mean += st.motion.tz / 4;
    }
    EXPECT_NEAR(mean, tz, 0.35 * tz + 0.03) << tz;
    EXPECT_GT(mean, prev);
    prev = mean;
  }
}

TEST(Step, EstimateScanLength) {
  const ScanSequence s = simulate_scan(dataset_scan_spec(4, 0, 6));
  EXPECT_EQ(estimate_scan(s, calibrated()).size(), 5u);
}

TEST(CalibrationCsv, RoundTripAndValidation) {
  const DecorrModel m = calibrated();
  const auto dir = fs::temp_directory_path() / "freehand_calib";
  fs::create_directories(dir);
  write_calibration_csv(dir / "c.csv", m);
  const DecorrModel back = read_calibration_csv(dir / "c.csv");
  ASSERT_EQ(back.table.size(), m.table.size());
  for (std::size_t i = 0; i < m.table.size(); ++i) {
    EXPECT_EQ(back.table[i].first, m.table[i].first);
    EXPECT_EQ(back.table[i].second, m.table[i].second);
  }
  std::ofstream(dir / "bad.csv") << "ncc,gap_mm\n1,0\n0.5,0.2\n0.7,0.3\n";
  EXPECT_THROW(read_calibration_csv(dir / "bad.csv"), std::runtime_error);
  std::ofstream(dir / "hdr.csv") << "a,b\n1,0\n";
  EXPECT_THROW(read_calibration_csv(dir / "hdr.csv"), std::runtime_error);
  fs::remove_all(dir);
}
