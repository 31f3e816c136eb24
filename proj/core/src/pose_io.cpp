#include "freehand/pose_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace freehand {

namespace {

std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

double parse_double(const std::string& field, std::size_t line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw std::runtime_error("pose csv line " + std::to_string(line) + ": bad number '" + field + "'");
  }
  return v;
}

}  // namespace

void write_pose_csv(std::ostream& os, const std::vector<PoseVector>& poses) {
  os << kPoseCsvHeader << '\n';
  for (std::size_t i = 0; i < poses.size(); ++i) {
    os << i;
    for (double v : poses[i].to_array()) os << ',' << format_double(v);
    os << '\n';
  }
}

void write_pose_csv(const std::filesystem::path& path, const std::vector<PoseVector>& poses) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_pose_csv(os, poses);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<PoseVector> read_pose_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("pose csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPoseCsvHeader) throw std::runtime_error("pose csv: unexpected header '" + line + "'");

  std::vector<PoseVector> poses;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 7) {
      throw std::runtime_error("pose csv line " + std::to_string(lineno) + ": expected 7 fields");
    }
    const double frame = parse_double(fields[0], lineno);
    if (frame != static_cast<double>(poses.size())) {
      throw std::runtime_error("pose csv line " + std::to_string(lineno) + ": frame index out of order");
    }
    PoseVector p;
    for (std::size_t k = 0; k < 6; ++k) p[k] = parse_double(fields[k + 1], lineno);
    poses.push_back(p);
  }
  return poses;
}

std::vector<PoseVector> read_pose_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_pose_csv(is);
}

std::vector<PoseVector> poses_of(const Trajectory& traj) {
  std::vector<PoseVector> out;
  out.reserve(traj.size());
  for (const auto& T : traj) out.push_back(transform_to_pose(T));
  return out;
}

Trajectory trajectory_of(const std::vector<PoseVector>& poses) {
  Trajectory traj;
  traj.reserve(poses.size());
  for (const auto& p : poses) traj.push_back(pose_to_transform(p));
  return traj;
}

}  // namespace freehand
