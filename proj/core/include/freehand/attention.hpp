#pragma once

#include "freehand/nn.hpp"
#include "freehand/tensor.hpp"

#include <cstddef>
#include <string>

namespace freehand {

/// Shapes of the global-local attention block. Local features E2 arrive as
/// (N, local_channels, H, W) with H*W = n_blocks * block_extent^2; global
/// features E4 as (N, global_channels, block_extent, block_extent).
struct GlaConfig {
  std::size_t local_channels = 128;
  std::size_t global_channels = 512;
  std::size_t block_extent = 4;
  std::size_t n_blocks = 256;
  std::size_t reduction = 16;

  std::size_t local_hidden() const;
  std::size_t global_hidden() const;
  /// Number of projected block groups, global_channels / local_channels.
  std::size_t projected_blocks() const { return global_channels / local_channels; }
  /// Side of the square block grid, sqrt(n_blocks).
  std::size_t grid_extent() const;
  void validate() const;
};

/// Global-local self-attention: channel attention on tiled local blocks,
/// parallel spatial and channel attention on the global map, then cosine
/// reweighting of every local block against the projected global feature and
/// a learned projection over the block axis.
class GlobalLocalAttention {
 public:
  struct Output {
    ad::Tensor local;         // L: (N, global_channels, b, b)
    ad::Tensor global;        // G: (N, global_channels, b, b)
    ad::Tensor block_scores;  // cosine of each block with the projected global feature: (N, n_blocks)
  };

  /// Registers parameters under `prefix` and initialises them.
  GlobalLocalAttention(const GlaConfig& cfg, ad::ParameterStore& params, const std::string& prefix, ad::Rng& rng);

  const GlaConfig& config() const { return cfg_; }

  /// sigmoid(W_c2 W_c1 avgpool(E2)) -> (N, local_channels).
  ad::Tensor local_channel_scores(const ad::Tensor& e2) const;
  /// Non-overlapping row-major tiling of E2 weighted by per-channel scores
  /// -> (N, n_blocks, local_channels, b, b).
  ad::Tensor recalibrate_local(const ad::Tensor& e2, const ad::Tensor& scores) const;
  ad::Tensor global_attention(const ad::Tensor& e4) const;
  /// 1x1 projection of G to local_channels.
  ad::Tensor project_global(const ad::Tensor& g) const;
  /// L_k = cos(R_k, G~) R_k, followed by the block projection and reshape.
  /// Returns (L, block scores).
  std::pair<ad::Tensor, ad::Tensor> weight_and_aggregate(const ad::Tensor& blocks, const ad::Tensor& g_proj) const;

  Output forward(const ad::Tensor& e2, const ad::Tensor& e4) const;

 private:
  GlaConfig cfg_;
  ad::Tensor local_w1_, local_w2_;
  ad::Tensor global_w1_, global_w2_;
  ad::Tensor spatial_w_;
  ad::Tensor global_proj_;
  ad::Tensor block_proj_w_, block_proj_b_;
};

/// Inverse of the tiling used by recalibrate_local: (N, K, C, b, b) -> (N, C, H, W).
ad::Tensor untile_blocks(const ad::Tensor& blocks, std::size_t height, std::size_t width);

}  // namespace freehand
