#include "freehand/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace freehand::ad {

Tensor& ParameterStore::add(const std::string& name, const Shape& shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  params_.push_back({name, Tensor::zeros(shape, true)});
  return params_.back().tensor;
}

Tensor& ParameterStore::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter named '" + name + "'");
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter named '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("kaiming_uniform: fan_in must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = dist(rng);
}

void orthogonal(Tensor& t, Rng& rng) {
  if (t.dim() != 2) throw std::invalid_argument("orthogonal: expected a matrix, got " + shape_str(t.shape()));
  const std::size_t rows = t.size(0), cols = t.size(1);
  if (rows % cols != 0) throw std::invalid_argument("orthogonal: rows must be a multiple of cols");
  std::normal_distribution<double> dist(0.0, 1.0);
  auto data = t.mutable_data();
  const auto n = static_cast<Eigen::Index>(cols);
  for (std::size_t block = 0; block < rows / cols; ++block) {
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) g(i, j) = dist(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    // Sign fix makes the factorisation unique.
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
      if (r(j, j) < 0) q.col(j) *= -1.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) data[(block * cols + static_cast<std::size_t>(i)) * cols + static_cast<std::size_t>(j)] = q(i, j);
  }
}

double LrSchedule::at_epoch(std::uint64_t epoch) const {
  const std::uint64_t drops = every_epochs == 0 ? 0 : epoch / every_epochs;
  return initial * std::pow(factor, static_cast<double>(drops));
}

void OptimizerState::set_epoch(std::uint64_t e) {
  if (e < epoch) throw std::logic_error("optimizer epoch counter must not decrease");
  epoch = e;
}

OptimizerState make_optimizer_state(const ParameterStore& params, LrSchedule schedule, AdamConfig adam) {
  OptimizerState s;
  s.schedule = schedule;
  s.adam = adam;
  for (const auto& p : params.items()) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_step(ParameterStore& params, OptimizerState& state) {
  auto& items = params.items();
  if (state.m.size() != items.size()) throw std::logic_error("adam_step: optimizer state does not match parameters");
  for (const auto& p : items) {
    if (!p.tensor.has_grad()) throw std::logic_error("adam_step: parameter '" + p.name + "' has no gradient");
  }
  ++state.step;
  const double lr = state.lr();
  const double b1 = state.adam.beta1, b2 = state.adam.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto w = items[k].tensor.mutable_data();
    auto g = items[k].tensor.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= lr * mh / (std::sqrt(vh) + state.adam.eps);
    }
  }
}

}  // namespace freehand::ad
