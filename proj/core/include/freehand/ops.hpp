#pragma once

#include "freehand/tensor.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace freehand::ad {

// Elementwise arithmetic with trailing-dimension broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
/// Ties go to the lowest index.
Tensor max(const Tensor& x, std::size_t axis, bool keepdim = false);

/// 2-D product with optional transposition of either operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

/// x: (N, F), weight: (O, F), bias: (O) or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x: (N, C, H, W), weight: (O, C, kh, kw), bias: (O) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
/// Bins follow floor(i*H/out) .. ceil((i+1)*H/out).
Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor index_select(const Tensor& x, std::size_t axis, const std::vector<std::size_t>& indices);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

/// Cosine similarity of the two tensors viewed as flat vectors; returns a
/// scalar. Zero-norm input yields 0 with zero gradient.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
/// Row-wise cosine over the last axis of two equally shaped tensors.
Tensor cosine_similarity_rows(const Tensor& a, const Tensor& b);
/// Row-wise Euclidean distance over the last axis; gradient 0 at distance 0.
Tensor l2_distance_rows(const Tensor& a, const Tensor& b);

struct LstmWeights {
  Tensor w_ih;  // (4H, F), gate order i, f, g, o
  Tensor w_hh;  // (4H, H)
  Tensor bias;  // (4H)
};

/// One LSTM step on a batch: x (B, F), h and c (B, H). Returns (h', c').
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const LstmWeights& w);

}  // namespace freehand::ad
