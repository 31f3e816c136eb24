#pragma once

#include "freehand/pose.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace freehand {

struct MetricsReport {
  double rAE = 0;  // mean |Δθ − Δθ̂| over all components and steps (mm and ° mixed)
  double aAE = 0;  // same on absolute poses, frames 1..N-1
  double rFE = 0;  // mean grid-point distance of relative frames (mm)
  double aFE = 0;  // mean grid-point distance of absolute frames (mm)
  double corr = 0;
  double fd = 0;   // aFE of the last frame (mm)
  double fdr = 0;  // 100 * fd / true path length (%)

  double aAE_translation = 0;
  double aAE_rotation = 0;

  /// Per-frame absolute frame errors, index 0 = frame 0.
  std::vector<double> aFE_series;
};

/// Mean absolute error over all six components and steps.
double relative_errors(const std::vector<PoseVector>& truth, const std::vector<PoseVector>& pred);

/// Grid points are the four frame corners and the centre. aAE and aFE average
/// over frames 1..N-1 since frame 0 is the identity in both trajectories.
MetricsReport accumulated_errors(const Trajectory& truth, const Trajectory& pred, const ImageGeometry& geom);

/// Full report from absolute trajectories; relatives are extracted from them.
MetricsReport evaluate(const Trajectory& truth, const Trajectory& pred, const ImageGeometry& geom);

/// Polyline length of the frame-centre path.
double path_length(const Trajectory& traj);

/// Flat object with exactly rAE, aAE, rFE, aFE, corr, fd, fdr.
std::string metrics_json(const MetricsReport& r);
inline constexpr const char* kMetricsCsvHeader = "rAE,aAE,rFE,aFE,corr,fd,fdr";
std::string metrics_csv_row(const MetricsReport& r);

}  // namespace freehand
