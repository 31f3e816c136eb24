#include "freehand/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace freehand {

namespace {

void check_pair(const char* what, std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
}

double component_error(const PoseVector& a, const PoseVector& b, std::size_t k) {
  const double d = a[k] - b[k];
  return k < 3 ? std::abs(d) : std::abs(normalize_degrees(d));
}

double grid_error(const TransformSE3& a, const TransformSE3& b, const std::vector<Eigen::Vector3d>& grid) {
  double s = 0;
  for (const auto& p : grid) s += (a.apply(p) - b.apply(p)).norm();
  return s / static_cast<double>(grid.size());
}

}  // namespace

double relative_errors(const std::vector<PoseVector>& truth, const std::vector<PoseVector>& pred) {
  check_pair("relative_errors", truth.size(), pred.size());
  if (truth.empty()) throw std::invalid_argument("relative_errors: empty sequence");
  double s = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    for (std::size_t k = 0; k < 6; ++k) s += component_error(truth[i], pred[i], k);
  return s / (6.0 * static_cast<double>(truth.size()));
}

double path_length(const Trajectory& traj) {
  double len = 0;
  for (std::size_t i = 1; i < traj.size(); ++i) len += (traj[i].translation - traj[i - 1].translation).norm();
  return len;
}

MetricsReport accumulated_errors(const Trajectory& truth, const Trajectory& pred, const ImageGeometry& geom) {
  check_pair("accumulated_errors", truth.size(), pred.size());
  if (truth.size() < 2) throw std::invalid_argument("accumulated_errors: trajectories need at least 2 frames");
  geom.validate();
  const auto grid = local_grid(geom, GridDensity::kCornersCenter);
  const std::size_t n = truth.size();

  MetricsReport r;
  r.aFE_series.assign(n, 0.0);
  double ae = 0, ae_t = 0, ae_r = 0, fe = 0;
  for (std::size_t i = 0; i < n; ++i) {
    r.aFE_series[i] = grid_error(truth[i], pred[i], grid);
    if (i == 0) continue;
    const PoseVector pt = transform_to_pose(truth[i]);
    const PoseVector pp = transform_to_pose(pred[i]);
    for (std::size_t k = 0; k < 6; ++k) {
      const double e = component_error(pt, pp, k);
      ae += e;
      (k < 3 ? ae_t : ae_r) += e;
    }
    fe += r.aFE_series[i];
  }
  const double frames = static_cast<double>(n - 1);
  r.aAE = ae / (6.0 * frames);
  r.aAE_translation = ae_t / (3.0 * frames);
  r.aAE_rotation = ae_r / (3.0 * frames);
  r.aFE = fe / frames;

  const auto rel_t = relatives_of(truth);
  const auto rel_p = relatives_of(pred);
  double rfe = 0;
  for (std::size_t i = 0; i < rel_t.size(); ++i) rfe += grid_error(rel_t[i], rel_p[i], grid);
  r.rFE = rfe / static_cast<double>(rel_t.size());

  r.fd = r.aFE_series.back();
  const double len = path_length(truth);
  if (!(len > 0)) throw std::invalid_argument("accumulated_errors: true trajectory has zero length, drift rate undefined");
  r.fdr = 100.0 * r.fd / len;

  // Cosine of the mean-centred centre-point series, flattened over frames and axes.
  Eigen::Vector3d mt = Eigen::Vector3d::Zero(), mp = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mt += truth[i].translation;
    mp += pred[i].translation;
  }
  mt /= static_cast<double>(n);
  mp /= static_cast<double>(n);
  double dot = 0, nt = 0, np = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d a = truth[i].translation - mt, b = pred[i].translation - mp;
    dot += a.dot(b);
    nt += a.squaredNorm();
    np += b.squaredNorm();
  }
  if (nt == 0 && np == 0) r.corr = 1.0;
  else if (nt == 0 || np == 0) r.corr = 0.0;
  else r.corr = dot / std::sqrt(nt * np);
  return r;
}

MetricsReport evaluate(const Trajectory& truth, const Trajectory& pred, const ImageGeometry& geom) {
  MetricsReport r = accumulated_errors(truth, pred, geom);
  const auto rel_t = relatives_of(truth);
  const auto rel_p = relatives_of(pred);
  std::vector<PoseVector> pt, pp;
  for (std::size_t i = 0; i < rel_t.size(); ++i) {
    pt.push_back(transform_to_pose(rel_t[i]));
    pp.push_back(transform_to_pose(rel_p[i]));
  }
  r.rAE = relative_errors(pt, pp);
  return r;
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["rAE"] = r.rAE;
  j["aAE"] = r.aAE;
  j["rFE"] = r.rFE;
  j["aFE"] = r.aFE;
  j["corr"] = r.corr;
  j["fd"] = r.fd;
  j["fdr"] = r.fdr;
  return j.dump(2) + "\n";
}

std::string metrics_csv_row(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.rAE, r.aAE, r.rFE, r.aFE, r.corr,
                r.fd, r.fdr);
  return buf;
}

}  // namespace freehand
