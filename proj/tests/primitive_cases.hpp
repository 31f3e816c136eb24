#pragma once

#include "freehand/correlation.hpp"
#include "freehand/ops.hpp"
#include "support.hpp"

#include <functional>
#include <string>
#include <vector>

namespace freehand::testing {

/// One differentiable primitive with input shapes small enough for
/// exhaustive central differences.
struct PrimitiveCase {
  std::string name;
  std::vector<ad::Shape> shapes;
  std::function<ad::Tensor(const std::vector<ad::Tensor>&)> op;
  double lo = -1.0;
  double hi = 1.0;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  using namespace ad;
  using V = const std::vector<Tensor>&;
  std::vector<PrimitiveCase> c;
  c.push_back({"add_broadcast", {{3, 4}, {4}}, [](V x) { return add(x[0], x[1]); }});
  c.push_back({"sub_broadcast", {{2, 1, 3}, {4, 1}}, [](V x) { return sub(x[0], x[1]); }});
  c.push_back({"mul_broadcast", {{2, 3}, {2, 1}}, [](V x) { return mul(x[0], x[1]); }});
  c.push_back({"div", {{2, 3}, {2, 3}}, [](V x) { return div(x[0], x[1]); }, 0.5, 1.5});
  c.push_back({"scale", {{5}}, [](V x) { return scale(x[0], -1.7); }});
  c.push_back({"add_scalar", {{5}}, [](V x) { return add_scalar(x[0], 0.3); }});
  c.push_back({"relu", {{12}}, [](V x) { return relu(x[0]); }});
  c.push_back({"sigmoid", {{12}}, [](V x) { return sigmoid(x[0]); }});
  c.push_back({"tanh", {{12}}, [](V x) { return ad::tanh(x[0]); }});
  c.push_back({"abs", {{12}}, [](V x) { return ad::abs(x[0]); }});
  c.push_back({"square", {{12}}, [](V x) { return square(x[0]); }});
  c.push_back({"sum", {{3, 4}}, [](V x) { return sum(x[0]); }});
  c.push_back({"mean", {{3, 4}}, [](V x) { return mean(x[0]); }});
  c.push_back({"sum_axis", {{2, 3, 2}}, [](V x) { return sum(x[0], 1); }});
  c.push_back({"mean_axis", {{2, 3, 2}}, [](V x) { return mean(x[0], 2, true); }});
  c.push_back({"max_axis", {{3, 4}}, [](V x) { return ad::max(x[0], 1); }});
  c.push_back({"matmul", {{2, 3}, {3, 4}}, [](V x) { return matmul(x[0], x[1]); }});
  c.push_back({"matmul_tA", {{3, 2}, {3, 4}}, [](V x) { return matmul(x[0], x[1], true, false); }});
  c.push_back({"matmul_tB", {{2, 3}, {4, 3}}, [](V x) { return matmul(x[0], x[1], false, true); }});
  c.push_back({"linear", {{2, 3}, {4, 3}, {4}}, [](V x) { return linear(x[0], x[1], x[2]); }});
  c.push_back({"conv2d", {{1, 2, 4, 4}, {2, 2, 3, 3}, {2}}, [](V x) { return conv2d(x[0], x[1], x[2], {1, 1}); }});
  c.push_back({"conv2d_stride2", {{1, 1, 4, 4}, {2, 1, 3, 3}, {2}},
               [](V x) { return conv2d(x[0], x[1], x[2], {2, 1}); }});
  c.push_back({"max_pool2d", {{1, 1, 4, 4}}, [](V x) { return max_pool2d(x[0], 2, 2); }});
  c.push_back({"avg_pool2d", {{1, 1, 4, 4}}, [](V x) { return avg_pool2d(x[0], 2, 2); }});
  c.push_back({"adaptive_avg_pool2d", {{1, 1, 5, 3}}, [](V x) { return adaptive_avg_pool2d(x[0], 2, 2); }});
  c.push_back({"concat", {{2, 2}, {2, 3}}, [](V x) { return concat({x[0], x[1]}, 1); }});
  c.push_back({"reshape", {{2, 6}}, [](V x) { return reshape(x[0], {3, 4}); }});
  c.push_back({"permute", {{2, 3, 2}}, [](V x) { return permute(x[0], {2, 0, 1}); }});
  c.push_back({"slice", {{4, 3}}, [](V x) { return slice(x[0], 0, 1, 2); }});
  c.push_back({"index_select", {{4, 3}}, [](V x) { return index_select(x[0], 0, {3, 0, 3}); }});
  c.push_back({"broadcast_to", {{1, 3}}, [](V x) { return broadcast_to(x[0], {4, 3}); }});
  c.push_back({"cosine_similarity", {{8}, {8}}, [](V x) { return cosine_similarity(x[0], x[1]); }});
  c.push_back({"cosine_similarity_rows", {{3, 4}, {3, 4}}, [](V x) { return cosine_similarity_rows(x[0], x[1]); }});
  c.push_back({"l2_distance_rows", {{3, 4}, {3, 4}}, [](V x) { return l2_distance_rows(x[0], x[1]); }});
  c.push_back({"lstm_cell", {{2, 3}, {2, 2}, {2, 2}, {8, 3}, {8, 2}, {8}}, [](V x) {
                 auto [h, cc] = lstm_cell(x[0], x[1], x[2], {x[3], x[4], x[5]});
                 return concat({h, cc}, 1);
               }});
  c.push_back({"correlate_ncc", {{2, 7, 7}, {2, 7, 7}}, [](V x) {
                 return correlate(x[0], x[1], CorrConfig{5, 3, 2, CorrNormalization::kNcc}).values;
               }});
  c.push_back({"correlate_dot", {{1, 6, 6}, {1, 6, 6}}, [](V x) {
                 return correlate(x[0], x[1], CorrConfig{5, 3, 1, CorrNormalization::kDot}).values;
               }});
  return c;
}

/// Weighted-sum reduction with fixed random weights so every output element
/// contributes a distinct O(1) term.
inline GradReport check_primitive(const PrimitiveCase& pc, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ad::Tensor> inputs;
  for (const auto& s : pc.shapes) inputs.push_back(random_tensor(s, rng, pc.lo, pc.hi));
  ad::Tensor probe;
  {
    ad::NoGradGuard g;
    probe = pc.op(inputs);
  }
  const ad::Tensor w = random_tensor(probe.shape(), rng, -1.0, 1.0, false);
  return check_gradients([&] { return ad::sum(ad::mul(pc.op(inputs), w)); }, inputs);
}

}  // namespace freehand::testing
