#include "freehand/training.hpp"

#include "freehand/checkpoint.hpp"
#include "freehand/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>

namespace freehand {

using ad::Tensor;

namespace {

std::size_t window_steps(const ModelConfig& cfg) { return cfg.sequence_length + 1; }

// Pair (seq_a, seq_b) and labels for windows of equal length `steps`.
struct Batch {
  Tensor seq_a, seq_b, labels;
  std::vector<std::vector<PoseVector>> motions;
};

Batch make_batch(std::span<const ScanSequence> scans, const std::vector<Window>& windows, std::size_t steps) {
  const auto& g0 = scans[windows.front().scan].geom;
  const std::size_t h = g0.rows, w = g0.cols, hw = h * w, b = windows.size();
  std::vector<double> a(b * steps * hw), bb(b * steps * hw), lab(b * steps * 6);
  Batch out;
  for (std::size_t i = 0; i < b; ++i) {
    const ScanSequence& s = scans[windows[i].scan];
    if (s.geom.rows != h || s.geom.cols != w) throw std::invalid_argument("training: scans differ in frame size");
    std::vector<PoseVector> m;
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t f = windows[i].start + t;
      auto fa = s.frame(f), fb = s.frame(f + 1);
      std::copy(fa.begin(), fa.end(), a.begin() + (i * steps + t) * hw);
      std::copy(fb.begin(), fb.end(), bb.begin() + (i * steps + t) * hw);
      const PoseVector& p = s.relative[f];
      for (std::size_t k = 0; k < 6; ++k) lab[(i * steps + t) * 6 + k] = p[k];
      m.push_back(p);
    }
    out.motions.push_back(std::move(m));
  }
  out.seq_a = Tensor::from({b, steps, h, w}, std::move(a));
  out.seq_b = Tensor::from({b, steps, h, w}, std::move(bb));
  out.labels = Tensor::from({b, steps, 6}, std::move(lab));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double header_double(const ad::Checkpoint& c, const std::string& key) {
  auto it = c.header.find(key);
  if (it == c.header.end()) throw std::runtime_error("checkpoint: missing header key " + key);
  return std::stod(it->second);
}

}  // namespace

std::vector<std::vector<Window>> epoch_batches(const std::vector<ScanSequence>& scans, std::size_t steps_per_window,
                                               std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (scans.empty()) throw std::invalid_argument("training: no training scans");
  if (batch_size == 0) throw std::invalid_argument("training: batch size must be positive");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(scans.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Window>> batches;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const ScanSequence& s = scans[order[i]];
    if (s.n_frames < steps_per_window + 1) {
      throw std::invalid_argument("training: scan " + s.subject + " has " + std::to_string(s.n_frames) +
                                  " frames, a window needs " + std::to_string(steps_per_window + 1));
    }
    std::uniform_int_distribution<std::size_t> start(0, s.n_frames - steps_per_window - 1);
    if (i % batch_size == 0) batches.emplace_back();
    batches.back().push_back({order[i], start(rng)});
  }
  return batches;
}

std::vector<PoseVector> predict_scan(const MotionNet& net, const ScanSequence& scan) {
  if (scan.n_frames < 2) throw std::invalid_argument("predict_scan: scan needs at least 2 frames");
  if (scan.geom.rows != net.config().frame_extent || scan.geom.cols != net.config().frame_extent) {
    throw std::invalid_argument("predict_scan: scan frames are " + std::to_string(scan.geom.rows) + "x" +
                                std::to_string(scan.geom.cols) + ", model expects " +
                                std::to_string(net.config().frame_extent) + "x" +
                                std::to_string(net.config().frame_extent));
  }
  ad::NoGradGuard guard;
  const std::size_t n_steps = scan.n_frames - 1;
  const std::size_t len = std::min(window_steps(net.config()), n_steps);
  std::vector<Window> full;
  for (std::size_t s = 0; s + len <= n_steps; s += len) full.push_back({0, s});
  const std::size_t covered = full.size() * len;
  std::vector<PoseVector> out(n_steps);
  auto run = [&](const std::vector<Window>& wins, std::size_t keep_from) {
    Batch b = make_batch(std::span<const ScanSequence>(&scan, 1), wins, len);
    ModelOutput o = net.forward(b.seq_a, b.seq_b);
    for (std::size_t i = 0; i < wins.size(); ++i) {
      const auto est = o.estimates(i);
      for (std::size_t t = keep_from; t < len; ++t) out[wins[i].start + t] = est[t].fused;
    }
  };
  run(full, 0);
  if (covered < n_steps) {
    // Trailing window ends on the last step; only its unseen steps are kept.
    const std::size_t start = n_steps - len;
    run({{0, start}}, covered - start);
  }
  return out;
}

double validation_mmae(const MotionNet& net, const std::vector<ScanSequence>& scans, double epsilon) {
  std::vector<PoseVector> truth, pred;
  for (const auto& s : scans) {
    auto p = predict_scan(net, s);
    truth.insert(truth.end(), s.relative.begin(), s.relative.end());
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return mmae(truth, pred, epsilon);
}

PoseVector mean_motion(const std::vector<ScanSequence>& scans) {
  PoseVector m;
  std::size_t n = 0;
  for (const auto& s : scans)
    for (const auto& r : s.relative) {
      for (std::size_t k = 0; k < 6; ++k) m[k] += r[k];
      ++n;
    }
  if (n == 0) throw std::invalid_argument("mean_motion: no steps");
  for (std::size_t k = 0; k < 6; ++k) m[k] /= static_cast<double>(n);
  return m;
}

TrainResult train(const TrainConfig& cfg, const std::vector<ScanSequence>& train_scans,
                  const std::vector<ScanSequence>& val_scans, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume, const TrainHooks& hooks) {
  if (train_scans.empty() || val_scans.empty()) {
    throw std::invalid_argument("training needs at least one training and one validation scan");
  }
  cfg.loss.validate();
  std::filesystem::create_directories(out_dir);
  const std::size_t steps = window_steps(cfg.model);
  const std::size_t per_epoch = (train_scans.size() + cfg.batch_size - 1) / cfg.batch_size;

  MotionNet net(cfg.model, cfg.seed);
  ad::OptimizerState opt = ad::make_optimizer_state(net.params(), cfg.schedule);
  TrainResult result;
  result.best_val_mmae = std::numeric_limits<double>::infinity();

  std::uint64_t step = 0;
  if (resume) {
    const ad::Checkpoint ck = ad::read_checkpoint(*resume);
    const ModelConfig saved = ModelConfig::from_key_values(ck.header);
    if (saved.to_key_values() != cfg.model.to_key_values()) throw std::invalid_argument("resume: model config differs");
    if (ck.header.at("train.seed") != std::to_string(cfg.seed) ||
        ck.header.at("train.batch_size") != std::to_string(cfg.batch_size)) {
      throw std::invalid_argument("resume: seed or batch size differs from the checkpointed run");
    }
    ad::load_parameters(ck, net.params());
    opt = ad::load_optimizer(ck, net.params(), cfg.schedule);
    step = opt.step;
    result.initial_val_mmae = header_double(ck, "train.initial_val_mmae");
    result.best_val_mmae = header_double(ck, "train.best_val_mmae");
    result.best_step = static_cast<std::uint64_t>(header_double(ck, "train.best_step"));
    result.final_val_mmae = header_double(ck, "train.last_val_mmae");
  }

  const auto mode = resume ? std::ios::app : std::ios::trunc;
  std::ofstream log(out_dir / "train_log.csv", std::ios::out | mode);
  std::ofstream vlog(out_dir / "val_log.csv", std::ios::out | mode);
  if (!log || !vlog) throw std::runtime_error("cannot open training logs in " + out_dir.string());
  if (!resume) {
    log << kLossLogHeader << "\n";
    vlog << "step,val_mmae\n";
  }

  auto header = [&](double last_val) {
    std::map<std::string, std::string> h = cfg.model.to_key_values();
    h["train.seed"] = std::to_string(cfg.seed);
    h["train.batch_size"] = std::to_string(cfg.batch_size);
    h["train.initial_val_mmae"] = fmt(result.initial_val_mmae);
    h["train.best_val_mmae"] = fmt(result.best_val_mmae);
    h["train.best_step"] = std::to_string(result.best_step);
    h["train.last_val_mmae"] = fmt(last_val);
    return h;
  };
  auto validate = [&](std::uint64_t at) {
    const double v = validation_mmae(net, val_scans, cfg.loss.epsilon);
    if (!std::isfinite(v)) throw std::runtime_error("validation MMAE is not finite at step " + std::to_string(at));
    if (at == 0 && !resume) result.initial_val_mmae = v;
    result.final_val_mmae = v;
    result.validation.push_back({at, v});
    vlog << at << "," << fmt(v) << "\n";
    vlog.flush();
    if (v < result.best_val_mmae) {
      result.best_val_mmae = v;
      result.best_step = at;
      net.save(out_dir / "best.ckpt", header(v));
    }
    if (hooks.on_validation) hooks.on_validation(result.validation.back());
  };
  auto save_last = [&]() {
    ad::Checkpoint ck;
    ck.header = header(result.final_val_mmae);
    ad::append_parameters(ck, net.params());
    ad::append_optimizer(ck, net.params(), opt);
    ad::write_checkpoint(out_dir / "last.ckpt", ck);
  };

  if (!resume) validate(0);

  std::uint64_t cached_epoch = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::vector<Window>> batches;
  while (step < cfg.steps) {
    const std::uint64_t epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      batches = epoch_batches(train_scans, steps, cfg.batch_size, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    opt.set_epoch(epoch);
    const Batch b = make_batch(train_scans, batches[step % per_epoch], steps);

    net.params().zero_grad();
    const ModelOutput o = net.forward(b.seq_a, b.seq_b);
    LossComponents parts;
    parts.mmae = ad::scale(ad::add(ad::add(mmae(b.labels, o.fused, cfg.loss.epsilon),
                                           mmae(b.labels, o.global_motion, cfg.loss.epsilon)),
                                   mmae(b.labels, o.local_motion, cfg.loss.epsilon)),
                           1.0 / 3.0);
    parts.corr = correlation_loss(b.labels, o.fused).value;
    if (cfg.loss.alpha3 > 0 && steps >= 3) {
      const std::size_t bsz = b.motions.size(), feat = o.embeddings.size(2);
      std::vector<std::size_t> ia, ip, in;
      for (std::size_t i = 0; i < bsz; ++i)
        for (const auto& t : select_triplets(b.motions[i])) {
          ia.push_back(i * steps + t.anchor);
          ip.push_back(i * steps + t.positive);
          in.push_back(i * steps + t.negative);
        }
      const Tensor emb = ad::reshape(o.embeddings, {bsz * steps, feat});
      parts.triplet =
          triplet_loss(ad::index_select(emb, 0, ia), ad::index_select(emb, 0, ip), ad::index_select(emb, 0, in));
    }
    const Tensor total = total_loss(parts, cfg.loss);
    LossLogRow row{step, parts.mmae.item(), parts.corr.item(), parts.triplet.defined() ? parts.triplet.item() : 0.0,
                   total.item(), opt.lr()};
    if (!std::isfinite(row.total)) {
      throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step) + " (mmae " +
                               fmt(row.mmae) + ", corr " + fmt(row.corr) + ", triplet " + fmt(row.triplet) + ")");
    }
    ad::backward(total);
    for (auto& p : net.params().items())
      if (!p.tensor.has_grad()) p.tensor.mutable_grad();  // unused this step: zero gradient
    ad::adam_step(net.params(), opt);
    write_loss_row(log, row);
    result.log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
    ++step;
    ++result.steps_run;
    if (step % cfg.validate_every == 0 || step == cfg.steps) {
      log.flush();
      validate(step);
      save_last();
    }
  }
  if (result.steps_run == 0) save_last();
  return result;
}

}  // namespace freehand
