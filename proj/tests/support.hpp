#pragma once

#include "freehand/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace freehand::testing {

inline ad::Tensor random_tensor(const ad::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(ad::numel_of(shape));
  for (auto& x : v) x = u(rng);
  return ad::Tensor::from(shape, std::move(v), requires_grad);
}

struct GradReport {
  double max_rel = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central differences of a scalar function against the tape gradient of
/// every element of every input: |g - fd| / (|fd| + 1e-8).
inline GradReport check_gradients(const std::function<ad::Tensor()>& f, std::vector<ad::Tensor> inputs,
                                   double step = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  ad::backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }
  GradReport rep;
  ad::NoGradGuard guard;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double x0 = data[k];
      data[k] = x0 + step;
      const double fp = f().item();
      data[k] = x0 - step;
      const double fm = f().item();
      data[k] = x0;
      const double fd = (fp - fm) / (2.0 * step);
      const double rel = std::abs(analytic[i][k] - fd) / (std::abs(fd) + 1e-8);
      if (rel > rep.max_rel) rep = {rel, i, k, analytic[i][k], fd};
    }
  }
  return rep;
}

}  // namespace freehand::testing
