#include "freehand/correlation.hpp"

#include "freehand/ops.hpp"
#include "freehand/pgm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace freehand {

namespace {

using ad::Node;
using ad::Tensor;

struct PatchStats {
  double mean = 0.0;
  double norm = 0.0;  // of the centred patch (ncc) or raw patch (dot)
  bool degenerate = false;
};

struct Layout {
  std::size_t n, c, h, w, p, d, roi;
  RoiGrid grid;
  CorrNormalization norm;
};

// Visits the C x p x p patch with top-left (y0, x0) of sample n.
template <typename F>
void for_patch(const Layout& L, std::size_t n, std::size_t y0, std::size_t x0, F&& f) {
  for (std::size_t ch = 0; ch < L.c; ++ch)
    for (std::size_t i = 0; i < L.p; ++i) {
      const std::size_t row = ((n * L.c + ch) * L.h + y0 + i) * L.w + x0;
      for (std::size_t j = 0; j < L.p; ++j) f(row + j);
    }
}

PatchStats stats(const Layout& L, const std::vector<double>& x, std::size_t n, std::size_t y0, std::size_t x0) {
  PatchStats s;
  const double count = static_cast<double>(L.c * L.p * L.p);
  double total = 0.0, raw_sq = 0.0;
  for_patch(L, n, y0, x0, [&](std::size_t k) {
    total += x[k];
    raw_sq += x[k] * x[k];
  });
  if (L.norm == CorrNormalization::kDot) {
    s.norm = std::sqrt(raw_sq);
    return s;
  }
  s.mean = total / count;
  double sq = 0.0;
  for_patch(L, n, y0, x0, [&](std::size_t k) {
    const double v = x[k] - s.mean;
    sq += v * v;
  });
  s.norm = std::sqrt(sq);
  // Constant patches leave only rounding noise after centring.
  s.degenerate = !(s.norm > 1e-12 * std::sqrt(raw_sq));
  return s;
}

// Output layout (N, R, d, d).
Tensor correlate_core(const Tensor& a, const Tensor& b, const CorrConfig& cfg, RoiGrid* grid_out) {
  cfg.validate();
  if (a.dim() != 4 || a.shape() != b.shape()) {
    throw std::invalid_argument("correlate: inputs must share an (N,C,H,W) shape, got " + ad::shape_str(a.shape()) +
                                " and " + ad::shape_str(b.shape()));
  }
  Layout L{a.size(0), a.size(1), a.size(2), a.size(3), cfg.patch_extent, cfg.displacement_extent(), cfg.roi_extent,
           roi_grid(a.size(2), a.size(3), cfg), cfg.normalization};
  if (grid_out) *grid_out = L.grid;
  const std::size_t R = L.grid.count();
  const std::size_t dd = L.d * L.d;
  const std::size_t half = (L.roi - L.p) / 2;
  const double count = static_cast<double>(L.c * L.p * L.p);

  const auto& na = a.node();
  const auto& nb = b.node();
  const auto& A = na->data;
  const auto& B = nb->data;
  std::vector<double> out(L.n * R * dd);

  for (std::size_t n = 0; n < L.n; ++n) {
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t ry = L.grid.row_offset + (r / L.grid.cols) * cfg.roi_stride;
      const std::size_t rx = L.grid.col_offset + (r % L.grid.cols) * cfg.roi_stride;
      const PatchStats sa = stats(L, A, n, ry + half, rx + half);
      for (std::size_t u = 0; u < L.d; ++u) {
        for (std::size_t v = 0; v < L.d; ++v) {
          double value = 0.0;
          if (L.norm == CorrNormalization::kDot) {
            double dot = 0.0;
            std::size_t off_b = ((n * L.c) * L.h + ry + u) * L.w + rx + v;
            std::size_t off_a = ((n * L.c) * L.h + ry + half) * L.w + rx + half;
            for (std::size_t ch = 0; ch < L.c; ++ch)
              for (std::size_t i = 0; i < L.p; ++i)
                for (std::size_t j = 0; j < L.p; ++j) {
                  const std::size_t da = (ch * L.h + i) * L.w + j;
                  dot += A[off_a + da] * B[off_b + da];
                }
            value = dot / count;
          } else {
            const PatchStats sb = stats(L, B, n, ry + u, rx + v);
            if (!sa.degenerate && !sb.degenerate) {
              double dot = 0.0;
              std::size_t off_b = ((n * L.c) * L.h + ry + u) * L.w + rx + v;
              std::size_t off_a = ((n * L.c) * L.h + ry + half) * L.w + rx + half;
              for (std::size_t ch = 0; ch < L.c; ++ch)
                for (std::size_t i = 0; i < L.p; ++i)
                  for (std::size_t j = 0; j < L.p; ++j) {
                    const std::size_t da = (ch * L.h + i) * L.w + j;
                    dot += (A[off_a + da] - sa.mean) * (B[off_b + da] - sb.mean);
                  }
              value = dot / (sa.norm * sb.norm);
            }
          }
          out[(n * R + r) * dd + u * L.d + v] = value;
        }
      }
    }
  }

  Tensor result = ad::detail::make_result(
      "correlate", {L.n, R, L.d, L.d}, out, {na, nb}, [na, nb, L, cfg, out](Node& self) {
        const std::size_t R = L.grid.count();
        const std::size_t dd = L.d * L.d;
        const std::size_t half = (L.roi - L.p) / 2;
        const double count = static_cast<double>(L.c * L.p * L.p);
        const auto& A = na->data;
        const auto& B = nb->data;
        std::vector<double>* ga = na->requires_grad ? &na->ensure_grad() : nullptr;
        std::vector<double>* gb = nb->requires_grad ? &nb->ensure_grad() : nullptr;
        for (std::size_t n = 0; n < L.n; ++n) {
          for (std::size_t r = 0; r < R; ++r) {
            const std::size_t ry = L.grid.row_offset + (r / L.grid.cols) * cfg.roi_stride;
            const std::size_t rx = L.grid.col_offset + (r % L.grid.cols) * cfg.roi_stride;
            const PatchStats sa = stats(L, A, n, ry + half, rx + half);
            const std::size_t off_a = ((n * L.c) * L.h + ry + half) * L.w + rx + half;
            for (std::size_t u = 0; u < L.d; ++u) {
              for (std::size_t v = 0; v < L.d; ++v) {
                const std::size_t o = (n * R + r) * dd + u * L.d + v;
                const double g = self.grad[o];
                if (g == 0.0) continue;
                const std::size_t off_b = ((n * L.c) * L.h + ry + u) * L.w + rx + v;
                if (L.norm == CorrNormalization::kDot) {
                  for (std::size_t ch = 0; ch < L.c; ++ch)
                    for (std::size_t i = 0; i < L.p; ++i)
                      for (std::size_t j = 0; j < L.p; ++j) {
                        const std::size_t da = (ch * L.h + i) * L.w + j;
                        if (ga) (*ga)[off_a + da] += g * B[off_b + da] / count;
                        if (gb) (*gb)[off_b + da] += g * A[off_a + da] / count;
                      }
                  continue;
                }
                const PatchStats sb = stats(L, B, n, ry + u, rx + v);
                if (sa.degenerate || sb.degenerate) continue;
                const double rho = out[o];
                const double inv_ab = 1.0 / (sa.norm * sb.norm);
                const double ka = rho / (sa.norm * sa.norm);
                const double kb = rho / (sb.norm * sb.norm);
                // Centred vectors are zero-mean, so these gradients already
                // lie in the subspace the centring projects onto.
                for (std::size_t ch = 0; ch < L.c; ++ch)
                  for (std::size_t i = 0; i < L.p; ++i)
                    for (std::size_t j = 0; j < L.p; ++j) {
                      const std::size_t da = (ch * L.h + i) * L.w + j;
                      const double xa = A[off_a + da] - sa.mean;
                      const double xb = B[off_b + da] - sb.mean;
                      if (ga) (*ga)[off_a + da] += g * (xb * inv_ab - ka * xa);
                      if (gb) (*gb)[off_b + da] += g * (xa * inv_ab - kb * xb);
                    }
              }
            }
          }
        }
      });
  return result;
}

}  // namespace

void CorrConfig::validate() const {
  if (roi_extent % 2 == 0 || patch_extent % 2 == 0) {
    throw std::invalid_argument("correlation: roi and patch extents must be odd");
  }
  if (patch_extent == 0 || patch_extent > roi_extent) {
    throw std::invalid_argument("correlation: patch extent must not exceed roi extent");
  }
  if (roi_stride == 0) throw std::invalid_argument("correlation: roi stride must be positive");
}

RoiGrid roi_grid(std::size_t height, std::size_t width, const CorrConfig& cfg) {
  cfg.validate();
  if (cfg.roi_extent > height || cfg.roi_extent > width) {
    throw std::invalid_argument("correlation: roi extent " + std::to_string(cfg.roi_extent) + " exceeds feature map " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  RoiGrid g;
  g.rows = (height - cfg.roi_extent) / cfg.roi_stride + 1;
  g.cols = (width - cfg.roi_extent) / cfg.roi_stride + 1;
  g.row_offset = (height - (cfg.roi_extent + (g.rows - 1) * cfg.roi_stride)) / 2;
  g.col_offset = (width - (cfg.roi_extent + (g.cols - 1) * cfg.roi_stride)) / 2;
  return g;
}

double CorrelationVolume::at(std::size_t roi, std::size_t u, std::size_t v) const {
  return values.data()[(roi * d + u) * d + v];
}

std::pair<std::size_t, std::size_t> CorrelationVolume::argmax(std::size_t roi) const {
  std::size_t best = 0;
  auto data = values.data();
  const std::size_t base = roi * d * d;
  for (std::size_t k = 1; k < d * d; ++k)
    if (data[base + k] > data[base + best]) best = k;
  return {best / d, best % d};
}

CorrelationVolume correlate(const ad::Tensor& a, const ad::Tensor& b, const CorrConfig& cfg) {
  if (a.dim() != 3 || a.shape() != b.shape()) {
    throw std::invalid_argument("correlate: inputs must share a (C,H,W) shape, got " + ad::shape_str(a.shape()) +
                                " and " + ad::shape_str(b.shape()));
  }
  const ad::Shape batched{1, a.size(0), a.size(1), a.size(2)};
  CorrelationVolume vol;
  Tensor core = correlate_core(ad::reshape(a, batched), ad::reshape(b, batched), cfg, &vol.grid);
  vol.d = cfg.displacement_extent();
  vol.values = ad::reshape(core, {vol.grid.count(), vol.d, vol.d});
  return vol;
}

ad::Tensor correlate_batch(const ad::Tensor& a, const ad::Tensor& b, const CorrConfig& cfg) {
  RoiGrid grid;
  Tensor core = correlate_core(a, b, cfg, &grid);
  const std::size_t n = a.size(0), d = cfg.displacement_extent();
  Tensor flat = ad::reshape(core, {n, grid.count(), d * d});
  return ad::reshape(ad::permute(flat, {0, 2, 1}), {n, d * d, grid.rows, grid.cols});
}

std::vector<double> mean_map(const CorrelationVolume& vol) {
  std::vector<double> out(vol.grid.count(), 0.0);
  auto data = vol.values.data();
  const std::size_t dd = vol.d * vol.d;
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < dd; ++k) s += data[r * dd + k];
    out[r] = s / static_cast<double>(dd);
  }
  return out;
}

void write_mean_map_pgm(const std::filesystem::path& path, const CorrelationVolume& vol) {
  write_pgm16(path, vol.grid.rows, vol.grid.cols, mean_map(vol), -1.0, 1.0);
}

}  // namespace freehand
