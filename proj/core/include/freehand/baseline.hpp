#pragma once

#include "freehand/pose.hpp"
#include "freehand/scan_sim.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace freehand {

/// A 2-D frame view, row-major.
struct FrameView {
  std::span<const float> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct BaselineConfig {
  std::size_t search_radius_px = 6;
  std::size_t patch_grid = 5;
  std::size_t patch_extent = 32;
};

/// Monotone NCC -> elevational gap table, sorted by increasing gap
/// (decreasing NCC). The first entry is the (1, 0) anchor.
struct DecorrModel {
  std::vector<std::pair<double, double>> table;  // (ncc, gap_mm)
  BaselineConfig config;

  double min_ncc() const { return table.back().first; }
  double max_gap() const { return table.back().second; }
  /// Piecewise-linear inverse lookup; NCC below the floor clamps to the
  /// largest gap and sets *clamped.
  double lookup(double ncc, bool* clamped = nullptr) const;
};

struct CalibrationPair {
  std::vector<float> a, b;
  std::size_t rows = 0, cols = 0;
  double gap_mm = 0;
};

/// Averages patch NCC per distinct gap; throws std::runtime_error when the
/// averaged curve is not strictly decreasing. Needs >= 10 pairs.
DecorrModel calibrate(const std::vector<CalibrationPair>& pairs, const BaselineConfig& cfg = {});

/// Pairs of frames separated by pure elevational gaps, sliced from a fresh
/// phantom. `per_gap` pairs are drawn at each gap.
std::vector<CalibrationPair> make_calibration_pairs(const ImageGeometry& geom, const std::vector<double>& gaps_mm,
                                                    std::size_t per_gap, std::uint64_t seed);

struct InPlaneShift {
  int row = 0, col = 0;           // integer NCC argmax
  double sub_row = 0, sub_col = 0;  // refined, pixels
  double peak_ncc = 0;
};

/// Finds (dr, dc) with f_next(r, c) ≈ f_i(r + dr, c + dc) by exhaustive NCC of
/// the central template of f_next within ±search_radius, then a 3-point
/// parabola per axis. A perfect peak skips refinement so exact shifts stay exact.
InPlaneShift estimate_inplane(const FrameView& f_i, const FrameView& f_next, std::size_t search_radius);

/// Mean NCC over the patch grid after removing the integer shift.
double residual_ncc(const FrameView& f_i, const FrameView& f_next, int dr, int dc, const BaselineConfig& cfg);

struct BaselineStep {
  PoseVector motion;  // rotations are always 0
  InPlaneShift shift;
  double ncc = 0;
  bool flagged = false;  // NCC below the calibrated floor
};

BaselineStep estimate_step(const FrameView& f_i, const FrameView& f_next, const ImageGeometry& geom,
                           const DecorrModel& model);

std::vector<BaselineStep> estimate_scan(const ScanSequence& scan, const DecorrModel& model);

inline constexpr const char* kCalibrationCsvHeader = "ncc,gap_mm";
void write_calibration_csv(const std::filesystem::path& path, const DecorrModel& model);
DecorrModel read_calibration_csv(const std::filesystem::path& path, const BaselineConfig& cfg = {});

FrameView frame_view(const ScanSequence& scan, std::size_t i);

}  // namespace freehand
