#include "freehand/scan_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace freehand {

namespace {

std::vector<double> gaussian_kernel(double sigma_vox) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma_vox));
  std::vector<double> k(2 * radius + 1);
  double s = 0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-0.5 * d * d / (sigma_vox * sigma_vox));
    s += k[i];
  }
  for (auto& v : k) v /= s;
  return k;
}

struct Grid3 {
  std::size_t nx, ny, nz;
  std::vector<float> v;
  float& at(std::size_t i, std::size_t j, std::size_t k) { return v[(k * ny + j) * nx + i]; }
  float at(std::size_t i, std::size_t j, std::size_t k) const { return v[(k * ny + j) * nx + i]; }
};

// "Valid" 1-D convolution along one axis: that axis shrinks by kernel size - 1.
Grid3 convolve_axis(const Grid3& in, const std::vector<double>& ker, int axis) {
  const std::size_t kn = ker.size();
  Grid3 out{in.nx, in.ny, in.nz, {}};
  if (axis == 0) out.nx -= kn - 1;
  if (axis == 1) out.ny -= kn - 1;
  if (axis == 2) out.nz -= kn - 1;
  out.v.assign(out.nx * out.ny * out.nz, 0.0f);
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? in.nx : in.nx * in.ny;
  for (std::size_t k = 0; k < out.nz; ++k)
    for (std::size_t j = 0; j < out.ny; ++j) {
      const float* src = &in.v[(k * in.ny + j) * in.nx];
      float* dst = &out.v[(k * out.ny + j) * out.nx];
      for (std::size_t i = 0; i < out.nx; ++i) {
        double acc = 0;
        const float* p = src + i;
        for (std::size_t t = 0; t < kn; ++t) acc += ker[t] * p[t * stride];
        dst[i] = static_cast<float>(acc);
      }
    }
  return out;
}

double kernel_energy(const std::vector<double>& k) {
  double s = 0;
  for (double v : k) s += v * v;
  return s;
}

double structure_amplitude(const PhantomSpec& spec, const Eigen::Vector3d& p) {
  double a = 1.0;
  for (const auto& t : spec.tubes) {
    const double dx = p.x() - t.center_x_mm, dy = p.y() - t.center_y_mm;
    if (dx * dx + dy * dy <= t.radius_mm * t.radius_mm) a = t.amplitude;
  }
  for (const auto& inc : spec.inclusions) {
    const Eigen::Vector3d q = (p - inc.center_mm).cwiseQuotient(inc.radii_mm);
    if (q.squaredNorm() <= 1.0) a = inc.amplitude;
  }
  return a;
}

}  // namespace

void PhantomSpec::validate() const {
  if (!(voxel_mm > 0)) throw std::invalid_argument("phantom voxel size must be positive");
  for (int a = 0; a < 3; ++a) {
    if (!(psf_sigma_mm[a] > 0)) throw std::invalid_argument("phantom PSF sigma must be positive");
    if (!(max_mm[a] > min_mm[a])) throw std::invalid_argument("phantom extent must be positive on every axis");
    if (max_mm[a] - min_mm[a] < 6.0 * psf_sigma_mm[a]) {
      throw std::invalid_argument("phantom extent smaller than the point-spread kernel");
    }
  }
  for (const auto& t : tubes)
    if (t.amplitude < 0 || !(t.radius_mm > 0)) throw std::invalid_argument("tube needs positive radius, nonnegative amplitude");
  for (const auto& i : inclusions)
    if (i.amplitude < 0 || !(i.radii_mm.minCoeff() > 0)) throw std::invalid_argument("inclusion needs positive radii");
}

bool Phantom::contains(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d f = (p - origin_mm) / voxel_mm;
  return f.x() >= 0 && f.y() >= 0 && f.z() >= 0 && f.x() <= static_cast<double>(nx - 1) &&
         f.y() <= static_cast<double>(ny - 1) && f.z() <= static_cast<double>(nz - 1);
}

double Phantom::sample(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d f = (p - origin_mm) / voxel_mm;
  auto split = [](double x, std::size_t n, std::size_t& i0, double& w) {
    double fl = std::floor(x);
    if (fl >= static_cast<double>(n - 1)) fl = static_cast<double>(n >= 2 ? n - 2 : 0);
    i0 = static_cast<std::size_t>(std::max(0.0, fl));
    w = n >= 2 ? x - static_cast<double>(i0) : 0.0;
  };
  std::size_t i, j, k;
  double wx, wy, wz;
  split(f.x(), nx, i, wx);
  split(f.y(), ny, j, wy);
  split(f.z(), nz, k, wz);
  const std::size_t i1 = std::min(i + 1, nx - 1), j1 = std::min(j + 1, ny - 1), k1 = std::min(k + 1, nz - 1);
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  const double c00 = lerp(at(i, j, k), at(i1, j, k), wx);
  const double c10 = lerp(at(i, j1, k), at(i1, j1, k), wx);
  const double c01 = lerp(at(i, j, k1), at(i1, j, k1), wx);
  const double c11 = lerp(at(i, j1, k1), at(i1, j1, k1), wx);
  return lerp(lerp(c00, c10, wy), lerp(c01, c11, wy), wz);
}

Phantom make_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Phantom ph;
  ph.voxel_mm = spec.voxel_mm;
  ph.origin_mm = spec.min_mm;
  const Eigen::Vector3d ext = spec.max_mm - spec.min_mm;
  ph.nx = static_cast<std::size_t>(std::ceil(ext.x() / spec.voxel_mm)) + 1;
  ph.ny = static_cast<std::size_t>(std::ceil(ext.y() / spec.voxel_mm)) + 1;
  ph.nz = static_cast<std::size_t>(std::ceil(ext.z() / spec.voxel_mm)) + 1;

  std::array<std::vector<double>, 3> kernels;
  std::array<std::size_t, 3> radius{};
  for (int a = 0; a < 3; ++a) {
    kernels[a] = gaussian_kernel(spec.psf_sigma_mm[a] / spec.voxel_mm);
    radius[a] = (kernels[a].size() - 1) / 2;
  }
  // Scatterers cover the output grid plus the kernel radius so the blur needs no padding.
  const std::size_t px = ph.nx + 2 * radius[0], py = ph.ny + 2 * radius[1], pz = ph.nz + 2 * radius[2];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Grid3 re{px, py, pz, std::vector<float>(px * py * pz)};
  Grid3 im{px, py, pz, std::vector<float>(px * py * pz)};
  const bool structured = !spec.tubes.empty() || !spec.inclusions.empty();
  for (std::size_t k = 0; k < pz; ++k)
    for (std::size_t j = 0; j < py; ++j)
      for (std::size_t i = 0; i < px; ++i) {
        double a = 1.0;
        if (structured) {
          const Eigen::Vector3d p = spec.min_mm + spec.voxel_mm * Eigen::Vector3d(static_cast<double>(i) - radius[0],
                                                                                   static_cast<double>(j) - radius[1],
                                                                                   static_cast<double>(k) - radius[2]);
          a = structure_amplitude(spec, p);
        }
        const double r = normal(rng), q = normal(rng);
        re.at(i, j, k) = static_cast<float>(a * r);
        im.at(i, j, k) = static_cast<float>(a * q);
      }
  for (int a = 0; a < 3; ++a) {
    re = convolve_axis(re, kernels[a], a);
    im = convolve_axis(im, kernels[a], a);
  }
  // Each blurred component has variance prod(sum k²); the Rayleigh mean is σ·sqrt(π/2).
  const double sigma = std::sqrt(kernel_energy(kernels[0]) * kernel_energy(kernels[1]) * kernel_energy(kernels[2]));
  const double scale = 0.25 / (sigma * std::sqrt(std::numbers::pi / 2.0));
  ph.values.resize(re.v.size());
  for (std::size_t n = 0; n < re.v.size(); ++n) {
    const double x = re.v[n], y = im.v[n];
    ph.values[n] = static_cast<float>(scale * std::sqrt(x * x + y * y));
  }
  return ph;
}

PhantomSpec phantom_spec_for(const Trajectory& traj, const ImageGeometry& geom, double margin_mm) {
  if (traj.empty()) throw std::invalid_argument("phantom_spec_for: empty trajectory");
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& T : traj)
    for (const auto& p : frame_grid_points(T, geom, GridDensity::kCornersCenter)) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  PhantomSpec spec;
  spec.min_mm = lo.array() - margin_mm;
  spec.max_mm = hi.array() + margin_mm;
  return spec;
}

TrajectoryShape parse_shape(const std::string& name) {
  if (name == "linear" || name == "L") return TrajectoryShape::kLinear;
  if (name == "s_curve" || name == "S") return TrajectoryShape::kSCurve;
  if (name == "c_curve" || name == "C") return TrajectoryShape::kCCurve;
  throw std::invalid_argument("unknown trajectory shape '" + name + "' (linear, s_curve, c_curve)");
}

std::string shape_name(TrajectoryShape s) {
  switch (s) {
    case TrajectoryShape::kLinear: return "linear";
    case TrajectoryShape::kSCurve: return "s_curve";
    default: return "c_curve";
  }
}

void TrajectorySpec::validate() const {
  if (n_frames < 2) throw std::invalid_argument("trajectory needs at least 2 frames, got " + std::to_string(n_frames));
  if (!(length_mm > 0)) throw std::invalid_argument("trajectory length must be positive");
  if (!(std::abs(speed_variation) < 1.0)) throw std::invalid_argument("speed variation must satisfy |a| < 1");
  if (!(speed_cycles > 0)) throw std::invalid_argument("speed cycles must be positive");
  if (!noise.is_finite()) throw std::invalid_argument("trajectory noise must be finite");
  for (std::size_t k = 0; k < 6; ++k)
    if (!(noise[k] >= 0)) throw std::invalid_argument("trajectory noise must be nonnegative");
  if (!std::isfinite(lateral_amplitude_mm)) throw std::invalid_argument("lateral amplitude must be finite");
}

TrajectoryResult make_trajectory(const TrajectorySpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_frames;
  const double two_pi_f = 2.0 * std::numbers::pi * spec.speed_cycles;
  const double nominal_step = spec.length_mm / static_cast<double>(n - 1);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<PoseVector> poses(n);
  double z_prev_base = 0, z = 0;
  for (std::size_t i = 1; i < n; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(n - 1);
    const double z_base = spec.length_mm * (u + spec.speed_variation * std::sin(two_pi_f * u) / two_pi_f);
    double dz = z_base - z_prev_base;
    z_prev_base = z_base;
    if (spec.noise.tz > 0) dz = std::max(dz + spec.noise.tz * normal(rng), 0.1 * nominal_step);
    z += dz;

    PoseVector p;
    p.tz = z;
    switch (spec.shape) {
      case TrajectoryShape::kSCurve: p.ty = spec.lateral_amplitude_mm * std::sin(2.0 * std::numbers::pi * u); break;
      case TrajectoryShape::kCCurve: p.ty = spec.lateral_amplitude_mm * std::sin(std::numbers::pi * u); break;
      default: break;
    }
    for (std::size_t k : {0u, 1u, 3u, 4u, 5u})
      if (spec.noise[k] > 0) p[k] += spec.noise[k] * normal(rng);
    poses[i] = p;
  }

  TrajectoryResult out;
  out.absolute.reserve(n);
  for (const auto& p : poses) out.absolute.push_back(pose_to_transform(p));
  out.absolute[0] = TransformSE3::identity();
  for (const auto& r : relatives_of(out.absolute)) out.relative.push_back(transform_to_pose(r));
  return out;
}

ScanSequence slice(const Phantom& phantom, const Trajectory& traj, const ImageGeometry& geom, double frame_rate_hz) {
  geom.validate();
  if (traj.empty()) throw std::invalid_argument("slice: empty trajectory");
  ScanSequence scan;
  scan.geom = geom;
  scan.frame_rate_hz = frame_rate_hz;
  scan.n_frames = traj.size();
  scan.truth = traj;
  for (const auto& r : relatives_of(traj)) scan.relative.push_back(transform_to_pose(r));
  scan.frames.resize(scan.n_frames * scan.frame_size());
  for (std::size_t f = 0; f < traj.size(); ++f) {
    auto dst = scan.frame(f);
    for (std::size_t r = 0; r < geom.rows; ++r)
      for (std::size_t c = 0; c < geom.cols; ++c) {
        const Eigen::Vector3d p = traj[f].apply(geom.local_point(static_cast<double>(r), static_cast<double>(c)));
        if (!phantom.contains(p)) {
          throw std::out_of_range("slice: frame " + std::to_string(f) + " leaves the phantom at pixel (" +
                                  std::to_string(r) + ", " + std::to_string(c) + ")");
        }
        dst[r * geom.cols + c] = static_cast<float>(std::clamp(phantom.sample(p), 0.0, 1.0));
      }
  }
  return scan;
}

ScanSequence simulate_scan(const SimulationSpec& spec, const std::string& subject) {
  const TrajectoryResult traj = make_trajectory(spec.trajectory);
  PhantomSpec ps = phantom_spec_for(traj.absolute, spec.geom);
  ps.voxel_mm = spec.voxel_mm;
  std::mt19937_64 rng(spec.phantom_seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double half_x = 0.5 * spec.geom.pitch_axial_mm * static_cast<double>(spec.geom.rows - 1);
  const double half_y = 0.5 * spec.geom.pitch_lateral_mm * static_cast<double>(spec.geom.cols - 1);
  for (std::size_t t = 0; t < spec.n_tubes; ++t) {
    Tube tube;
    tube.radius_mm = 0.08 * std::min(half_x, half_y) * (1.0 + unit(rng));
    tube.center_x_mm = (unit(rng) - 0.5) * half_x;
    tube.center_y_mm = (unit(rng) - 0.5) * half_y;
    tube.amplitude = 0.0;
    ps.tubes.push_back(tube);
  }
  const Phantom phantom = make_phantom(ps, spec.phantom_seed);
  ScanSequence scan = slice(phantom, traj.absolute, spec.geom, spec.frame_rate_hz);
  scan.relative = traj.relative;
  scan.subject = subject;
  return scan;
}

SimulationSpec dataset_scan_spec(std::uint64_t seed, std::size_t index, std::size_t n_frames, std::size_t frame_extent) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0xda7au};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SimulationSpec s;
  s.geom = {frame_extent, frame_extent, 0.1484, 0.1484};
  auto& t = s.trajectory;
  t.shape = static_cast<TrajectoryShape>(index % 3);
  t.n_frames = n_frames;
  const double speed = 0.1 + 0.25 * unit(rng);
  t.length_mm = speed * static_cast<double>(n_frames - 1);
  t.lateral_amplitude_mm = 0.5 + 1.5 * unit(rng);
  t.speed_variation = 0.4 * unit(rng);
  t.speed_cycles = 0.5 + 1.5 * unit(rng);
  t.noise = {0.02, 0.02, 0.02, 0.05, 0.05, 0.05};
  t.seed = rng();
  s.phantom_seed = rng();
  return s;
}

}  // namespace freehand
