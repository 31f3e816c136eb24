#include "freehand/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace freehand {

namespace {

// NCC of two equally sized windows; 0 when either is constant.
double window_ncc(const FrameView& a, std::size_t ra, std::size_t ca, const FrameView& b, std::size_t rb,
                  std::size_t cb, std::size_t h, std::size_t w) {
  double sa = 0, sb = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      sa += a.at(ra + r, ca + c);
      sb += b.at(rb + r, cb + c);
    }
  const double n = static_cast<double>(h * w);
  const double ma = sa / n, mb = sb / n;
  double dot = 0, na = 0, nb = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double x = a.at(ra + r, ca + c) - ma, y = b.at(rb + r, cb + c) - mb;
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
  return na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0;
}

double parabola_offset(double cm, double c0, double cp) {
  const double denom = cm - 2.0 * c0 + cp;
  if (!(denom < 0)) return 0.0;
  return std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
}

void check_same(const FrameView& a, const FrameView& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument("baseline: frame shapes " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                " and " + std::to_string(b.rows) + "x" + std::to_string(b.cols) + " differ");
  }
}

}  // namespace

double DecorrModel::lookup(double ncc, bool* clamped) const {
  if (table.size() < 2) throw std::logic_error("decorrelation table is empty");
  if (clamped) *clamped = false;
  if (ncc >= table.front().first) return table.front().second;
  if (ncc <= table.back().first) {
    if (clamped) *clamped = ncc < table.back().first;
    return table.back().second;
  }
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto [n1, g1] = table[i];
    if (ncc >= n1) {
      const auto [n0, g0] = table[i - 1];
      return g0 + (g1 - g0) * (n0 - ncc) / (n0 - n1);
    }
  }
  return table.back().second;
}

InPlaneShift estimate_inplane(const FrameView& f_i, const FrameView& f_next, std::size_t radius) {
  check_same(f_i, f_next);
  if (f_i.rows <= 2 * radius + 2 || f_i.cols <= 2 * radius + 2) {
    throw std::invalid_argument("baseline: frame too small for search radius " + std::to_string(radius));
  }
  const std::size_t h = f_i.rows - 2 * radius, w = f_i.cols - 2 * radius;
  const int m = static_cast<int>(radius);
  const std::size_t side = 2 * radius + 1;
  std::vector<double> score(side * side);
  InPlaneShift best;
  best.peak_ncc = -2;
  for (int dr = -m; dr <= m; ++dr)
    for (int dc = -m; dc <= m; ++dc) {
      const double s = window_ncc(f_next, radius, radius, f_i, radius + dr, radius + dc, h, w);
      score[(dr + m) * side + (dc + m)] = s;
      if (s > best.peak_ncc) {
        best.peak_ncc = s;
        best.row = dr;
        best.col = dc;
      }
    }
  best.sub_row = best.row;
  best.sub_col = best.col;
  if (best.peak_ncc >= 1.0 - 1e-9) return best;
  auto at = [&](int r, int c) { return score[(r + m) * side + (c + m)]; };
  if (best.row > -m && best.row < m)
    best.sub_row += parabola_offset(at(best.row - 1, best.col), best.peak_ncc, at(best.row + 1, best.col));
  if (best.col > -m && best.col < m)
    best.sub_col += parabola_offset(at(best.row, best.col - 1), best.peak_ncc, at(best.row, best.col + 1));
  return best;
}

double residual_ncc(const FrameView& f_i, const FrameView& f_next, int dr, int dc, const BaselineConfig& cfg) {
  check_same(f_i, f_next);
  // f_next(r, c) pairs with f_i(r + dr, c + dc); keep both windows inside.
  const std::size_t r0 = static_cast<std::size_t>(std::max(0, -dr)), c0 = static_cast<std::size_t>(std::max(0, -dc));
  const std::size_t avail_r = f_i.rows - static_cast<std::size_t>(std::abs(dr));
  const std::size_t avail_c = f_i.cols - static_cast<std::size_t>(std::abs(dc));
  const std::size_t p = cfg.patch_extent;
  if (avail_r < p || avail_c < p) throw std::invalid_argument("baseline: patch larger than the overlap of the frames");
  const std::size_t g = cfg.patch_grid;
  double sum = 0;
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = 0; j < g; ++j) {
      const std::size_t rr = r0 + (g > 1 ? i * (avail_r - p) / (g - 1) : (avail_r - p) / 2);
      const std::size_t cc = c0 + (g > 1 ? j * (avail_c - p) / (g - 1) : (avail_c - p) / 2);
      sum += window_ncc(f_next, rr, cc, f_i, rr + dr, cc + dc, p, p);
    }
  return sum / static_cast<double>(g * g);
}

DecorrModel calibrate(const std::vector<CalibrationPair>& pairs, const BaselineConfig& cfg) {
  if (pairs.size() < 10) {
    throw std::invalid_argument("calibrate: needs at least 10 pairs, got " + std::to_string(pairs.size()));
  }
  std::map<double, std::pair<double, std::size_t>> by_gap;
  for (const auto& pr : pairs) {
    const FrameView a{pr.a, pr.rows, pr.cols}, b{pr.b, pr.rows, pr.cols};
    auto& acc = by_gap[pr.gap_mm];
    acc.first += residual_ncc(a, b, 0, 0, cfg);
    acc.second += 1;
  }
  DecorrModel model;
  model.config = cfg;
  if (by_gap.begin()->first > 0) model.table.emplace_back(1.0, 0.0);
  for (const auto& [gap, acc] : by_gap) model.table.emplace_back(acc.first / static_cast<double>(acc.second), gap);
  for (std::size_t i = 1; i < model.table.size(); ++i) {
    if (!(model.table[i].first < model.table[i - 1].first)) {
      char msg[200];
      std::snprintf(msg, sizeof(msg), "calibration failed: NCC %.4f at %.3f mm does not drop below %.4f at %.3f mm",
                    model.table[i].first, model.table[i].second, model.table[i - 1].first, model.table[i - 1].second);
      throw std::runtime_error(msg);
    }
  }
  return model;
}

std::vector<CalibrationPair> make_calibration_pairs(const ImageGeometry& geom, const std::vector<double>& gaps_mm,
                                                    std::size_t per_gap, std::uint64_t seed) {
  if (gaps_mm.empty() || per_gap == 0) throw std::invalid_argument("make_calibration_pairs: nothing to generate");
  const double max_gap = *std::max_element(gaps_mm.begin(), gaps_mm.end());
  // Base planes 1 mm apart are practically independent speckle realisations.
  const double spacing = 1.0;
  const double span = spacing * static_cast<double>(per_gap) + max_gap;
  Trajectory ends{TransformSE3::identity(), pose_to_transform({0, 0, span, 0, 0, 0})};
  PhantomSpec ps = phantom_spec_for(ends, geom);
  const Phantom phantom = make_phantom(ps, seed);

  std::vector<CalibrationPair> out;
  for (std::size_t g = 0; g < gaps_mm.size(); ++g)
    for (std::size_t j = 0; j < per_gap; ++j) {
      const double z0 = spacing * static_cast<double>(j) + 0.01 * static_cast<double>(g % 7);
      Trajectory t{pose_to_transform({0, 0, z0, 0, 0, 0}), pose_to_transform({0, 0, z0 + gaps_mm[g], 0, 0, 0})};
      ScanSequence s = slice(phantom, t, geom);
      CalibrationPair pr;
      pr.rows = geom.rows;
      pr.cols = geom.cols;
      pr.gap_mm = gaps_mm[g];
      pr.a.assign(s.frame(0).begin(), s.frame(0).end());
      pr.b.assign(s.frame(1).begin(), s.frame(1).end());
      out.push_back(std::move(pr));
    }
  return out;
}

BaselineStep estimate_step(const FrameView& f_i, const FrameView& f_next, const ImageGeometry& geom,
                           const DecorrModel& model) {
  BaselineStep step;
  step.shift = estimate_inplane(f_i, f_next, model.config.search_radius_px);
  step.motion.tx = step.shift.sub_row * geom.pitch_axial_mm;
  step.motion.ty = step.shift.sub_col * geom.pitch_lateral_mm;
  step.ncc = residual_ncc(f_i, f_next, step.shift.row, step.shift.col, model.config);
  step.motion.tz = model.lookup(step.ncc, &step.flagged);
  return step;
}

FrameView frame_view(const ScanSequence& scan, std::size_t i) { return {scan.frame(i), scan.geom.rows, scan.geom.cols}; }

std::vector<BaselineStep> estimate_scan(const ScanSequence& scan, const DecorrModel& model) {
  std::vector<BaselineStep> out;
  for (std::size_t i = 0; i + 1 < scan.n_frames; ++i)
    out.push_back(estimate_step(frame_view(scan, i), frame_view(scan, i + 1), scan.geom, model));
  return out;
}

void write_calibration_csv(const std::filesystem::path& path, const DecorrModel& model) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << kCalibrationCsvHeader << "\n";
  char buf[96];
  for (const auto& [ncc, gap] : model.table) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", ncc, gap);
    os << buf;
  }
}

DecorrModel read_calibration_csv(const std::filesystem::path& path, const BaselineConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCalibrationCsvHeader) throw std::runtime_error(path.string() + ": expected header '" + kCalibrationCsvHeader + "'");
  DecorrModel model;
  model.config = cfg;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    model.table.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  if (model.table.size() < 2) throw std::runtime_error(path.string() + ": table needs at least two rows");
  for (std::size_t i = 1; i < model.table.size(); ++i)
    if (!(model.table[i].first < model.table[i - 1].first) || !(model.table[i].second > model.table[i - 1].second))
      throw std::runtime_error(path.string() + ": table is not monotone");
  return model;
}

}  // namespace freehand
