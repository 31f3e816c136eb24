#pragma once

#include "freehand/attention.hpp"
#include "freehand/correlation.hpp"
#include "freehand/nn.hpp"
#include "freehand/ops.hpp"
#include "freehand/pose.hpp"
#include "freehand/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace freehand {

enum class ModelScale { kPaper, kToy, kCustom };

/// Network geometry. Encoder stage k halves (or divides by strides[k]) the
/// spatial extent; the chain must satisfy:
///   E3 extent == correlation RoI grid extent on E1,
///   E4 extent == block_extent, E2 extent divisible by block_extent,
///   widths[3] a multiple of widths[1].
struct ModelConfig {
  ModelScale scale = ModelScale::kToy;
  std::size_t frame_extent = 64;
  std::array<std::size_t, 4> widths{8, 16, 32, 64};
  std::array<std::size_t, 4> strides{2, 2, 2, 2};
  CorrConfig corr{9, 5, 3, CorrNormalization::kNcc};
  std::size_t block_extent = 4;
  std::size_t reduction = 16;
  std::size_t lstm_hidden = 32;
  bool use_gla = true;
  std::size_t sequence_length = 8;  // s; a training window holds s + 1 steps

  /// 64x64 frames, paper widths divided by 8.
  static ModelConfig toy();
  /// Paper-sized shapes (256x256 frames, 64/128/256/512 widths, 256 blocks).
  static ModelConfig paper_shape();
  /// 8x8 frames with two-channel stages, for whole-model gradient checks.
  static ModelConfig tiny();

  std::array<std::size_t, 4> stage_extents() const;
  GlaConfig gla() const;
  void validate() const;

  std::map<std::string, std::string> to_key_values() const;
  static ModelConfig from_key_values(const std::map<std::string, std::string>& kv);
};

struct MotionEstimate {
  PoseVector global_motion;
  PoseVector local_motion;
  PoseVector fused;
};

struct ModelOutput {
  ad::Tensor fused;          // (B, L, 6)
  ad::Tensor global_motion;  // (B, L, 6)
  ad::Tensor local_motion;   // (B, L, 6)
  ad::Tensor embeddings;     // (B, L, F) pooled (G, L) features for the triplet term
  ad::Tensor block_scores;   // (B, L, n_blocks), defined when diagnostics were requested and GLA is on

  std::size_t batch() const { return fused.size(0); }
  std::size_t steps() const { return fused.size(1); }
  std::vector<MotionEstimate> estimates(std::size_t batch_index) const;
};

/// Residual encoder stages, correlation insertion, global-local attention and
/// two LSTM motion estimators whose outputs are averaged.
class MotionNet {
 public:
  MotionNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  /// seq_a holds frames n..n+s, seq_b frames n+1..n+s+1, both (B, L, H, W).
  /// Frames are standardised per frame before encoding.
  ModelOutput forward(const ad::Tensor& seq_a, const ad::Tensor& seq_b, bool diagnostics = false) const;

  /// First encoder stage, shared by both sequences: (N, 1, H, W) -> E1.
  ad::Tensor encode_first(const ad::Tensor& frames) const;

  void save(const std::filesystem::path& path, const std::map<std::string, std::string>& extra_header = {}) const;
  static MotionNet load(const std::filesystem::path& path);

 private:
  struct Stage {
    ad::Tensor conv_a_w, conv_a_b, conv_b_w, conv_b_b, shortcut_w;
    std::size_t stride = 1;
  };
  struct Lstm {
    ad::LstmWeights cell;
    ad::Tensor head_w, head_b;
  };

  Stage make_stage(const std::string& name, std::size_t in, std::size_t out, std::size_t stride, ad::Rng& rng);
  Lstm make_lstm(const std::string& name, std::size_t input, ad::Rng& rng);
  ad::Tensor run_stage(const Stage& st, const ad::Tensor& x) const;
  ad::Tensor run_lstm(const Lstm& lstm, const ad::Tensor& seq) const;  // (B, L, F) -> (B, L, 6)

  ModelConfig cfg_;
  ad::ParameterStore params_;
  std::array<Stage, 4> stages_;
  std::optional<GlobalLocalAttention> gla_;
  Lstm global_lstm_, local_lstm_;
};

/// Per-frame zero-mean, unit-variance copy of a (…, H, W) stack; constant
/// frames become all zeros.
ad::Tensor standardize_frames(const ad::Tensor& frames);

/// Writes one sqrt(n_blocks) square PGM per frame of the cosine block scores
/// of batch element `batch_index`; [-1, 1] maps to the full 16-bit range.
/// Throws if the output carries no diagnostics.
std::vector<std::filesystem::path> export_attention_scores(const ModelOutput& out, std::size_t batch_index,
                                                           const std::filesystem::path& dir,
                                                           const std::string& stem = "attention");

}  // namespace freehand
