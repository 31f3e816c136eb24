#pragma once

#include "freehand/pose.hpp"
#include "freehand/tensor.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <vector>

namespace freehand {

struct LossWeights {
  double alpha1 = 1.0;  // MMAE
  double alpha2 = 0.5;  // correlation
  double alpha3 = 0.1;  // triplet
  double epsilon = 0.1;

  void validate() const;
};

/// Motion-weighted MAE over (..., 6) tensors. Weights |true| + eps are
/// elementwise and carry no gradient.
ad::Tensor mmae(const ad::Tensor& truth, const ad::Tensor& pred, double epsilon);
double mmae(const std::vector<PoseVector>& truth, const std::vector<PoseVector>& pred, double epsilon);

struct CorrelationLoss {
  ad::Tensor value;
  std::size_t zero_norm_series = 0;  // series whose cosine was taken as 0
};

/// truth, pred: (B, L, 6) or (L, 6). Per sequence: (1/6) sum_k (1 - cos over
/// time of component k); averaged over the batch. L must be >= 2.
CorrelationLoss correlation_loss(const ad::Tensor& truth, const ad::Tensor& pred);
double correlation_loss(const std::vector<PoseVector>& truth, const std::vector<PoseVector>& pred);

/// Rows (M, F) or single vectors. mean_m max(0, |a-p| - |a-n|), no margin.
ad::Tensor triplet_loss(const ad::Tensor& anchor, const ad::Tensor& positive, const ad::Tensor& negative);

struct Triplet {
  std::size_t anchor, positive, negative;
};

/// One triplet per step; positive and negative maximise and minimise the
/// label cosine against the anchor's label, self excluded, lowest index on ties.
std::vector<Triplet> select_triplets(const std::vector<PoseVector>& motions);

struct LossComponents {
  ad::Tensor mmae, corr, triplet;
};

ad::Tensor total_loss(const LossComponents& parts, const LossWeights& w);

struct LossLogRow {
  std::uint64_t step = 0;
  double mmae = 0, corr = 0, triplet = 0, total = 0, lr = 0;
};

inline constexpr const char* kLossLogHeader = "step,mmae,corr,triplet,total,lr";
void write_loss_row(std::ostream& os, const LossLogRow& row);

}  // namespace freehand
