#pragma once

#include "freehand/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace freehand::ad {

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Ordered, name-unique collection of trainable tensors.
class ParameterStore {
 public:
  /// Registers a zero-initialised parameter; throws on duplicate names.
  Tensor& add(const std::string& name, const Shape& shape);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

using Rng = std::mt19937_64;

/// He/Kaiming uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng);
/// Fills a (rows, cols) matrix, rows >= cols, with orthonormal columns, or a
/// stack of such square blocks when rows is a multiple of cols.
void orthogonal(Tensor& t, Rng& rng);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Step decay: lr = initial * factor^floor(epoch / every_epochs).
struct LrSchedule {
  double initial = 1e-5;
  double factor = 0.8;
  std::uint64_t every_epochs = 100;

  double at_epoch(std::uint64_t epoch) const;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  LrSchedule schedule;
  AdamConfig adam;

  double lr() const { return schedule.at_epoch(epoch); }
  /// Epochs never go backwards.
  void set_epoch(std::uint64_t e);
};

OptimizerState make_optimizer_state(const ParameterStore& params, LrSchedule schedule, AdamConfig adam = {});

/// One Adam update at the schedule's current learning rate. Every parameter
/// must carry a gradient buffer; a missing one is a logic error.
void adam_step(ParameterStore& params, OptimizerState& state);

}  // namespace freehand::ad
