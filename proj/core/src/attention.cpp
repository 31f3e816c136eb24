#include "freehand/attention.hpp"

#include "freehand/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace freehand {

using ad::Tensor;

std::size_t GlaConfig::local_hidden() const { return std::max<std::size_t>(1, local_channels / reduction); }
std::size_t GlaConfig::global_hidden() const { return std::max<std::size_t>(1, global_channels / reduction); }

std::size_t GlaConfig::grid_extent() const {
  const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n_blocks))));
  return g;
}

void GlaConfig::validate() const {
  if (local_channels == 0 || global_channels == 0 || block_extent == 0 || n_blocks == 0 || reduction == 0) {
    throw std::invalid_argument("gla config: all sizes must be positive");
  }
  if (global_channels % local_channels != 0) {
    throw std::invalid_argument("gla config: global channels must be a multiple of local channels");
  }
  if (grid_extent() * grid_extent() != n_blocks) throw std::invalid_argument("gla config: n_blocks must be a square");
}

GlobalLocalAttention::GlobalLocalAttention(const GlaConfig& cfg, ad::ParameterStore& params, const std::string& prefix,
                                           ad::Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t cl = cfg_.local_channels, cg = cfg_.global_channels;
  local_w1_ = params.add(prefix + "local_channel.w1", {cfg_.local_hidden(), cl});
  local_w2_ = params.add(prefix + "local_channel.w2", {cl, cfg_.local_hidden()});
  global_w1_ = params.add(prefix + "global_channel.w1", {cfg_.global_hidden(), cg});
  global_w2_ = params.add(prefix + "global_channel.w2", {cg, cfg_.global_hidden()});
  spatial_w_ = params.add(prefix + "global_spatial.w", {1, 2, 1, 1});
  global_proj_ = params.add(prefix + "global_proj.w", {cl, cg, 1, 1});
  block_proj_w_ = params.add(prefix + "block_proj.w", {cfg_.projected_blocks(), cfg_.n_blocks});
  block_proj_b_ = params.add(prefix + "block_proj.b", {cfg_.projected_blocks()});

  ad::kaiming_uniform(local_w1_, cl, rng);
  ad::kaiming_uniform(local_w2_, cfg_.local_hidden(), rng);
  ad::kaiming_uniform(global_w1_, cg, rng);
  ad::kaiming_uniform(global_w2_, cfg_.global_hidden(), rng);
  ad::kaiming_uniform(spatial_w_, 2, rng);
  ad::kaiming_uniform(global_proj_, cg, rng);
  ad::kaiming_uniform(block_proj_w_, cfg_.n_blocks, rng);
}

Tensor GlobalLocalAttention::local_channel_scores(const Tensor& e2) const {
  if (e2.dim() != 4 || e2.size(1) != cfg_.local_channels) {
    throw std::invalid_argument("local_channel_scores: expected (N," + std::to_string(cfg_.local_channels) +
                                ",H,W), got " + ad::shape_str(e2.shape()));
  }
  const std::size_t n = e2.size(0);
  Tensor pooled = ad::reshape(ad::adaptive_avg_pool2d(e2, 1, 1), {n, cfg_.local_channels});
  Tensor hidden = ad::matmul(pooled, local_w1_, false, true);
  return ad::sigmoid(ad::matmul(hidden, local_w2_, false, true));
}

Tensor GlobalLocalAttention::recalibrate_local(const Tensor& e2, const Tensor& scores) const {
  if (e2.dim() != 4) throw std::invalid_argument("recalibrate_local: expected (N,C,H,W), got " + ad::shape_str(e2.shape()));
  const std::size_t n = e2.size(0), c = e2.size(1), h = e2.size(2), w = e2.size(3), b = cfg_.block_extent;
  if (scores.numel() != n * c) {
    throw std::invalid_argument("recalibrate_local: score shape " + ad::shape_str(scores.shape()) +
                                " does not match " + ad::shape_str(e2.shape()));
  }
  if (h % b != 0 || w % b != 0) {
    throw std::invalid_argument("recalibrate_local: " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible into " + std::to_string(b) + "x" + std::to_string(b) + " blocks");
  }
  const std::size_t gh = h / b, gw = w / b;
  if (gh * gw != cfg_.n_blocks) {
    throw std::invalid_argument("recalibrate_local: map yields " + std::to_string(gh * gw) + " blocks, config expects " +
                                std::to_string(cfg_.n_blocks));
  }
  Tensor weighted = ad::mul(e2, ad::reshape(scores, {n, c, 1, 1}));
  Tensor split = ad::reshape(weighted, {n, c, gh, b, gw, b});
  return ad::reshape(ad::permute(split, {0, 2, 4, 1, 3, 5}), {n, gh * gw, c, b, b});
}

Tensor untile_blocks(const Tensor& blocks, std::size_t height, std::size_t width) {
  const std::size_t n = blocks.size(0), c = blocks.size(2), b = blocks.size(3);
  const std::size_t gh = height / b, gw = width / b;
  Tensor split = ad::reshape(blocks, {n, gh, gw, c, b, b});
  return ad::reshape(ad::permute(split, {0, 3, 1, 4, 2, 5}), {n, c, height, width});
}

Tensor GlobalLocalAttention::global_attention(const Tensor& e4) const {
  const std::size_t b = cfg_.block_extent;
  if (e4.dim() != 4 || e4.size(1) != cfg_.global_channels || e4.size(2) != b || e4.size(3) != b) {
    throw std::invalid_argument("global_attention: expected (N," + std::to_string(cfg_.global_channels) + "," +
                                std::to_string(b) + "," + std::to_string(b) + "), got " + ad::shape_str(e4.shape()));
  }
  const std::size_t n = e4.size(0), cg = cfg_.global_channels;
  Tensor pooled = ad::reshape(ad::adaptive_avg_pool2d(e4, 1, 1), {n, cg});
  Tensor channel = ad::sigmoid(ad::matmul(ad::matmul(pooled, global_w1_, false, true), global_w2_, false, true));
  Tensor descriptor = ad::concat({ad::max(e4, 1, true), ad::mean(e4, 1, true)}, 1);
  Tensor spatial = ad::sigmoid(ad::conv2d(descriptor, spatial_w_, Tensor{}));
  return ad::mul(ad::mul(e4, spatial), ad::reshape(channel, {n, cg, 1, 1}));
}

Tensor GlobalLocalAttention::project_global(const Tensor& g) const { return ad::conv2d(g, global_proj_, Tensor{}); }

std::pair<Tensor, Tensor> GlobalLocalAttention::weight_and_aggregate(const Tensor& blocks, const Tensor& g_proj) const {
  const std::size_t n = blocks.size(0), k = cfg_.n_blocks, c = cfg_.local_channels, b = cfg_.block_extent;
  const std::size_t flat = c * b * b, p = cfg_.projected_blocks();
  Tensor rows = ad::reshape(blocks, {n, k, flat});
  Tensor target = ad::broadcast_to(ad::reshape(g_proj, {n, 1, flat}), {n, k, flat});
  Tensor scores = ad::cosine_similarity_rows(rows, target);  // (n, k)
  Tensor weighted = ad::mul(rows, ad::reshape(scores, {n, k, 1}));

  // Project the block axis: (P, K) x (K, n*flat).
  Tensor by_block = ad::reshape(ad::permute(weighted, {1, 0, 2}), {k, n * flat});
  Tensor projected = ad::add(ad::matmul(block_proj_w_, by_block), ad::reshape(block_proj_b_, {p, 1}));
  Tensor grouped = ad::reshape(projected, {p, n, c, b, b});
  Tensor local = ad::reshape(ad::permute(grouped, {1, 2, 0, 3, 4}), {n, c * p, b, b});
  return {local, scores};
}

GlobalLocalAttention::Output GlobalLocalAttention::forward(const Tensor& e2, const Tensor& e4) const {
  if (e2.dim() != 4 || e4.dim() != 4 || e2.size(0) != e4.size(0)) {
    throw std::invalid_argument("gla: batch mismatch between " + ad::shape_str(e2.shape()) + " and " +
                                ad::shape_str(e4.shape()));
  }
  Output out;
  Tensor blocks = recalibrate_local(e2, local_channel_scores(e2));
  out.global = global_attention(e4);
  auto [local, scores] = weight_and_aggregate(blocks, project_global(out.global));
  out.local = local;
  out.block_scores = scores;
  return out;
}

}  // namespace freehand
