#pragma once

#include "freehand/losses.hpp"
#include "freehand/model.hpp"
#include "freehand/nn.hpp"
#include "freehand/scan_sim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace freehand {

struct TrainConfig {
  ModelConfig model = ModelConfig::toy();
  LossWeights loss;
  ad::LrSchedule schedule{1e-3, 0.8, 100};
  std::size_t batch_size = 4;
  std::uint64_t steps = 2000;
  std::uint64_t validate_every = 100;
  std::uint64_t seed = 0;
};

struct ValidationRecord {
  std::uint64_t step = 0;
  double mmae = 0;
};

struct TrainResult {
  double initial_val_mmae = 0;
  double final_val_mmae = 0;
  double best_val_mmae = 0;
  std::uint64_t best_step = 0;
  std::uint64_t steps_run = 0;  // optimizer steps taken in this call
  std::vector<ValidationRecord> validation;
  std::vector<LossLogRow> log;
};

/// One sampled training window: frames n..n+s+1 give s+1 motion steps.
struct Window {
  std::size_t scan = 0;
  std::size_t start = 0;
};

/// Windows for every batch of one epoch. Each training scan contributes one
/// window at a uniformly random start; the scan order is shuffled. Depends
/// only on (seed, epoch), which keeps resumed runs on the same sample path.
std::vector<std::vector<Window>> epoch_batches(const std::vector<ScanSequence>& scans, std::size_t steps_per_window,
                                               std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

/// Relative motions for every consecutive pair of a scan, evaluated in
/// windows of s+1 steps with fresh recurrent state.
std::vector<PoseVector> predict_scan(const MotionNet& net, const ScanSequence& scan);

/// MMAE of the fused prediction over every step of every scan.
double validation_mmae(const MotionNet& net, const std::vector<ScanSequence>& scans, double epsilon);

struct TrainHooks {
  std::function<void(const LossLogRow&)> on_step;
  std::function<void(const ValidationRecord&)> on_validation;
};

/// Trains for cfg.steps optimizer steps in total, writing `train_log.csv`,
/// `val_log.csv`, `best.ckpt` (best validation MMAE) and `last.ckpt` (with
/// optimizer state) to out_dir. With `resume`, continues from a last.ckpt;
/// the log files are then appended to.
TrainResult train(const TrainConfig& cfg, const std::vector<ScanSequence>& train_scans,
                  const std::vector<ScanSequence>& val_scans, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume = std::nullopt, const TrainHooks& hooks = {});

/// Mean relative motion over all steps of all scans.
PoseVector mean_motion(const std::vector<ScanSequence>& scans);

}  // namespace freehand
