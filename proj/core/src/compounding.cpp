#include "freehand/compounding.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace freehand {

static_assert(std::endian::native == std::endian::little, "FVL1 I/O assumes a little-endian host");

std::size_t VolumeGrid::occupied() const {
  return static_cast<std::size_t>(std::count_if(count.begin(), count.end(), [](auto c) { return c > 0; }));
}

std::array<std::pair<std::size_t, std::size_t>, 3> VolumeGrid::occupied_bounds() const {
  std::array<std::pair<std::size_t, std::size_t>, 3> b;
  b.fill({std::numeric_limits<std::size_t>::max(), 0});
  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) {
        if (!count[index(i, j, k)]) continue;
        const std::size_t v[3] = {i, j, k};
        for (int a = 0; a < 3; ++a) {
          b[a].first = std::min(b[a].first, v[a]);
          b[a].second = std::max(b[a].second, v[a]);
        }
      }
  return b;
}

VolumeGrid compound(const ScanSequence& scan, const Trajectory& traj, double voxel_mm) {
  if (scan.n_frames == 0) throw std::invalid_argument("compound: empty scan");
  if (traj.size() != scan.n_frames) {
    throw std::invalid_argument("compound: " + std::to_string(traj.size()) + " poses for " +
                                std::to_string(scan.n_frames) + " frames");
  }
  if (!(voxel_mm > 0)) throw std::invalid_argument("compound: voxel size must be positive");

  std::vector<std::vector<Eigen::Vector3d>> points(scan.n_frames);
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (std::size_t f = 0; f < scan.n_frames; ++f) {
    points[f] = frame_grid_points(traj[f], scan.geom);
    for (const auto& p : points[f]) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  }
  VolumeGrid vol;
  vol.voxel_mm = voxel_mm;
  vol.origin_mm = lo.array() - voxel_mm;
  const Eigen::Vector3d ext = (hi - lo) / voxel_mm;
  vol.nx = static_cast<std::size_t>(std::lround(ext.x())) + 3;
  vol.ny = static_cast<std::size_t>(std::lround(ext.y())) + 3;
  vol.nz = static_cast<std::size_t>(std::lround(ext.z())) + 3;
  vol.sum.assign(vol.nx * vol.ny * vol.nz, 0.0);
  vol.count.assign(vol.sum.size(), 0);

  for (std::size_t f = 0; f < scan.n_frames; ++f) {
    const auto px = scan.frame(f);
    for (std::size_t n = 0; n < points[f].size(); ++n) {
      const Eigen::Vector3d q = (points[f][n] - vol.origin_mm) / voxel_mm;
      const auto i = static_cast<std::size_t>(std::lround(q.x()));
      const auto j = static_cast<std::size_t>(std::lround(q.y()));
      const auto k = static_cast<std::size_t>(std::lround(q.z()));
      const std::size_t idx = vol.index(i, j, k);
      vol.sum[idx] += px[n];
      vol.count[idx] += 1;
    }
  }
  return vol;
}

VolumeGrid fill_holes(const VolumeGrid& vol, double radius_voxels) {
  if (!(radius_voxels >= 1)) throw std::invalid_argument("fill_holes: radius must be at least 1 voxel");
  VolumeGrid out = vol;
  const int r = static_cast<int>(std::floor(radius_voxels));
  const double r2 = radius_voxels * radius_voxels;
  struct Offset {
    int di, dj, dk;
    double w;
  };
  std::vector<Offset> offsets;
  for (int dk = -r; dk <= r; ++dk)
    for (int dj = -r; dj <= r; ++dj)
      for (int di = -r; di <= r; ++di) {
        const double d2 = di * di + dj * dj + dk * dk;
        if (d2 > 0 && d2 <= r2) offsets.push_back({di, dj, dk, 1.0 / std::sqrt(d2)});
      }
  const auto nx = static_cast<int>(vol.nx), ny = static_cast<int>(vol.ny), nz = static_cast<int>(vol.nz);
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const std::size_t idx = vol.index(i, j, k);
        if (vol.count[idx]) continue;
        double ws = 0, vs = 0;
        for (const auto& o : offsets) {
          const int a = i + o.di, b = j + o.dj, c = k + o.dk;
          if (a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz) continue;
          const std::size_t n = vol.index(a, b, c);
          if (!vol.count[n]) continue;
          ws += o.w;
          vs += o.w * vol.mean(n);
        }
        if (ws > 0) {
          out.sum[idx] = vs / ws;
          out.count[idx] = 1;
        }
      }
  return out;
}

void write_fvl(const std::filesystem::path& path, const VolumeGrid& vol) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  auto put = [&](auto v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
  os.write("FVL1", 4);
  put(static_cast<std::uint32_t>(vol.nx));
  put(static_cast<std::uint32_t>(vol.ny));
  put(static_cast<std::uint32_t>(vol.nz));
  put(static_cast<float>(vol.voxel_mm));
  for (int a = 0; a < 3; ++a) put(static_cast<float>(vol.origin_mm[a]));
  std::vector<float> values(vol.size());
  for (std::size_t n = 0; n < values.size(); ++n) values[n] = static_cast<float>(vol.mean(n));
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

FvlVolume read_fvl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  auto get = [&](auto& v) {
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error(path.string() + ": truncated");
  };
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FVL1", 4) != 0) throw std::runtime_error(path.string() + ": bad magic");
  FvlVolume v;
  std::uint32_t d[3];
  for (auto& x : d) get(x);
  v.nx = d[0];
  v.ny = d[1];
  v.nz = d[2];
  get(v.voxel_mm);
  for (auto& o : v.origin_mm) get(o);
  v.values.resize(v.nx * v.ny * v.nz);
  if (!is.read(reinterpret_cast<char*>(v.values.data()), static_cast<std::streamsize>(v.values.size() * sizeof(float))))
    throw std::runtime_error(path.string() + ": truncated voxel data");
  return v;
}

void write_volume_sidecar(const std::filesystem::path& path, const VolumeGrid& vol,
                          const std::map<std::string, std::string>& provenance) {
  nlohmann::ordered_json j;
  j["format"] = "FVL1";
  j["dims"] = {vol.nx, vol.ny, vol.nz};
  j["voxel_mm"] = vol.voxel_mm;
  j["origin_mm"] = {vol.origin_mm.x(), vol.origin_mm.y(), vol.origin_mm.z()};
  j["occupied_voxels"] = vol.occupied();
  j["total_voxels"] = vol.size();
  for (const auto& [k, v] : provenance) j[k] = v;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << j.dump(2) << "\n";
}

}  // namespace freehand
