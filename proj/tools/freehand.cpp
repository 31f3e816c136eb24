// freehand: simulate -> (train | baseline) -> infer -> evaluate -> compound.

#include "freehand/baseline.hpp"
#include "freehand/compounding.hpp"
#include "freehand/metrics.hpp"
#include "freehand/model.hpp"
#include "freehand/pose_io.hpp"
#include "freehand/scan_io.hpp"
#include "freehand/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace freehand;

namespace {

constexpr const char* kVersion = "0.1.0";

// Raised for bad flag combinations or values; exits with code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Global {
  std::uint64_t seed = 0;
  std::string out = "out";
  bool force = false;
};

void prepare_out(const Global& g) {
  const fs::path out(g.out);
  if (fs::exists(out) && !fs::is_directory(out)) throw UsageError("--out " + g.out + " is not a directory");
  if (fs::exists(out) && !fs::is_empty(out) && !g.force) {
    throw UsageError("output directory " + g.out + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(out);
}

// Everything needed to rerun: the command, the seed and every option value.
// Paths are recorded as given, so relative invocations stay byte-identical.
void write_manifest(const Global& g, const CLI::App& cmd, const nlohmann::ordered_json& extra = {}) {
  nlohmann::ordered_json j;
  j["tool"] = "freehand";
  j["version"] = kVersion;
  j["command"] = cmd.get_name();
  j["seed"] = g.seed;
  nlohmann::ordered_json opts = nlohmann::ordered_json::object();
  for (const CLI::Option* o : cmd.get_options()) {
    if (o->get_name() == "--help") continue;
    const auto& res = o->results();
    std::string name = o->get_name();
    name.erase(0, name.find_first_not_of('-'));
    if (o->get_type_size() == 0) {
      opts[name] = o->count() > 0;
    } else if (!res.empty()) {
      opts[name] = res.size() == 1 ? nlohmann::ordered_json(res[0]) : nlohmann::ordered_json(res);
    } else {
      opts[name] = o->get_default_str();
    }
  }
  j["options"] = opts;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  std::ofstream os(fs::path(g.out) / "manifest.json");
  os << j.dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write manifest in " + g.out);
}

std::vector<fs::path> scan_dirs(const fs::path& root) {
  if (fs::exists(root / "frames.bin")) return {root};
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "frames.bin")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

ModelConfig model_for(const std::string& scale) {
  if (scale == "toy") return ModelConfig::toy();
  if (scale == "paper-shape") return ModelConfig::paper_shape();
  if (scale == "tiny") return ModelConfig::tiny();
  throw UsageError("unknown --scale '" + scale + "' (toy, paper-shape, tiny)");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string cell; std::getline(ss, cell, ',');) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw UsageError("not a number: '" + cell + "'");
    }
  }
  return out;
}

// Absolute poses from relative motions, anchored at the first true pose.
Trajectory anchor(const std::vector<PoseVector>& rel, const TransformSE3& first) {
  std::vector<TransformSE3> steps;
  steps.reserve(rel.size());
  for (const auto& p : rel) steps.push_back(pose_to_transform(p));
  Trajectory t = accumulate(steps);
  for (auto& T : t) T = T * first;
  return t;
}

// --- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::size_t scans = 1;
  std::string shape = "mixed";
  std::size_t frames = 48;
  std::size_t extent = 64;
};

int run_simulate(const Global& g, const CLI::App& cmd, const SimulateArgs& a) {
  if (a.frames < 2) throw UsageError("--frames must be at least 2 (a trajectory needs two poses)");
  if (a.scans == 0) throw UsageError("--scans must be positive");
  std::optional<TrajectoryShape> shape;
  if (a.shape != "mixed") {
    try {
      shape = parse_shape(a.shape);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  prepare_out(g);
  for (std::size_t i = 0; i < a.scans; ++i) {
    SimulationSpec spec = dataset_scan_spec(g.seed, i, a.frames, a.extent);
    if (shape) spec.trajectory.shape = *shape;
    char name[32];
    std::snprintf(name, sizeof(name), "scan_%03zu", i);
    const ScanSequence s = simulate_scan(spec, "subject-" + std::to_string(i));
    write_scan(fs::path(g.out) / name, s,
               {{"shape", shape_name(spec.trajectory.shape)}, {"seed", std::to_string(g.seed)}});
    std::cerr << name << ": " << s.n_frames << " frames, " << shape_name(spec.trajectory.shape) << "\n";
  }
  write_manifest(g, cmd);
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string scale = "toy";
  std::size_t seq_len = 8;
  std::size_t batch = 0;  // 0: 4 for toy, 14 for paper-shape
  std::uint64_t steps = 2000;
  std::uint64_t validate_every = 100;
  std::size_t val_scans = 0;  // 0: a quarter of the scans, at least one
  double lr = 1e-3;
  bool no_gla = false;
  std::string resume;
};

int run_train(const Global& g, const CLI::App& cmd, const TrainArgs& a) {
  const auto dirs = scan_dirs(a.data);
  if (dirs.size() < 2) throw UsageError("training needs at least 2 scans in " + a.data + ", found " + std::to_string(dirs.size()));
  const std::size_t n_val = a.val_scans ? a.val_scans : std::max<std::size_t>(1, dirs.size() / 4);
  if (n_val >= dirs.size()) throw UsageError("--val-scans leaves no training scans");

  TrainConfig cfg;
  cfg.model = model_for(a.scale);
  cfg.model.sequence_length = a.seq_len;
  cfg.model.use_gla = !a.no_gla;
  cfg.model.validate();
  cfg.batch_size = a.batch ? a.batch : (a.scale == "paper-shape" ? 14 : 4);
  cfg.steps = a.steps;
  cfg.validate_every = a.validate_every;
  cfg.schedule.initial = a.lr;
  cfg.seed = g.seed;
  if (a.resume.empty()) prepare_out(g);
  else fs::create_directories(g.out);

  // Split by scan: the last n_val scans (and their subjects) are held out.
  std::vector<ScanSequence> train_scans, val_scans;
  for (std::size_t i = 0; i < dirs.size(); ++i)
    (i + n_val < dirs.size() ? train_scans : val_scans).push_back(read_scan(dirs[i]));

  TrainHooks hooks;
  hooks.on_validation = [](const ValidationRecord& v) {
    std::cerr << "step " << v.step << "  val MMAE " << v.mmae << "\n";
  };
  std::optional<fs::path> resume;
  if (!a.resume.empty()) resume = a.resume;
  const TrainResult r = train(cfg, train_scans, val_scans, g.out, resume, hooks);
  nlohmann::ordered_json extra;
  extra["train_scans"] = train_scans.size();
  extra["val_scans"] = val_scans.size();
  extra["initial_val_mmae"] = r.initial_val_mmae;
  extra["final_val_mmae"] = r.final_val_mmae;
  extra["best_val_mmae"] = r.best_val_mmae;
  extra["best_step"] = r.best_step;
  write_manifest(g, cmd, extra);
  return 0;
}

// --- infer ------------------------------------------------------------------

struct InferArgs {
  std::string scan;
  std::string checkpoint;
  std::string baseline;
  bool identity = false;
};

int run_infer(const Global& g, const CLI::App& cmd, const InferArgs& a) {
  const int modes = !a.checkpoint.empty() + !a.baseline.empty() + a.identity;
  if (modes != 1) throw UsageError("infer needs exactly one of --checkpoint, --baseline, --identity");
  const ScanSequence scan = read_scan(a.scan);
  if (scan.n_frames < 2) throw UsageError("scan " + a.scan + " has fewer than 2 frames");

  std::vector<PoseVector> rel;
  std::size_t flagged = 0;
  if (a.identity) {
    rel = scan.relative;
  } else if (!a.baseline.empty()) {
    const DecorrModel model = read_calibration_csv(a.baseline);
    for (const auto& st : estimate_scan(scan, model)) {
      rel.push_back(st.motion);
      flagged += st.flagged;
    }
  } else {
    const MotionNet net = MotionNet::load(a.checkpoint);
    rel = predict_scan(net, scan);
  }
  prepare_out(g);
  const TransformSE3 first = scan.truth.empty() ? TransformSE3::identity() : scan.truth.front();
  write_pose_csv(fs::path(g.out) / "relative.csv", rel);
  write_pose_csv(fs::path(g.out) / "absolute.csv", poses_of(anchor(rel, first)));
  nlohmann::ordered_json extra;
  extra["frames"] = scan.n_frames;
  if (!a.baseline.empty()) extra["steps_below_calibration_floor"] = flagged;
  write_manifest(g, cmd, extra);
  return 0;
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string scan;
  std::string truth;
  std::string pred;
};

int run_evaluate(const Global& g, const CLI::App& cmd, const EvaluateArgs& a) {
  const ScanSequence scan = read_scan(a.scan);
  const Trajectory truth = a.truth.empty() ? scan.truth : trajectory_of(read_pose_csv(fs::path(a.truth)));
  const Trajectory pred = trajectory_of(read_pose_csv(fs::path(a.pred)));
  if (truth.size() != pred.size()) {
    throw UsageError("truth has " + std::to_string(truth.size()) + " poses, prediction " + std::to_string(pred.size()));
  }
  const MetricsReport m = evaluate(truth, pred, scan.geom);
  prepare_out(g);
  std::ofstream(fs::path(g.out) / "metrics.json") << metrics_json(m) << "\n";
  std::ofstream(fs::path(g.out) / "metrics.csv") << kMetricsCsvHeader << "\n" << metrics_csv_row(m) << "\n";
  std::cout << metrics_json(m) << "\n";
  write_manifest(g, cmd);
  return 0;
}

// --- compound ---------------------------------------------------------------

struct CompoundArgs {
  std::string scan;
  std::string poses;
  double voxel = 0.1;
  double fill_radius = 0;
};

int run_compound(const Global& g, const CLI::App& cmd, const CompoundArgs& a) {
  if (!(a.voxel > 0)) throw UsageError("--voxel must be positive");
  if (a.fill_radius != 0 && a.fill_radius < 1) throw UsageError("--fill-radius must be 0 (off) or at least 1");
  const ScanSequence scan = read_scan(a.scan);
  const Trajectory traj = a.poses.empty() ? scan.truth : trajectory_of(read_pose_csv(fs::path(a.poses)));
  VolumeGrid vol = compound(scan, traj, a.voxel);
  if (a.fill_radius > 0) vol = fill_holes(vol, a.fill_radius);
  prepare_out(g);
  write_fvl(fs::path(g.out) / "volume.fvl", vol);
  write_volume_sidecar(fs::path(g.out) / "volume.json", vol,
                       {{"scan", a.scan}, {"poses", a.poses.empty() ? "truth" : a.poses}});
  write_manifest(g, cmd);
  return 0;
}

// --- calibrate-baseline -----------------------------------------------------

struct CalibrateArgs {
  std::size_t extent = 64;
  double pitch = 0.1484;
  std::string gaps = "0.05,0.1,0.15,0.2,0.25,0.3,0.4,0.5,0.6,0.8";
  std::size_t per_gap = 4;
};

int run_calibrate(const Global& g, const CLI::App& cmd, const CalibrateArgs& a) {
  const ImageGeometry geom{a.extent, a.extent, a.pitch, a.pitch};
  geom.validate();
  const auto gaps = parse_list(a.gaps);
  const DecorrModel model = calibrate(make_calibration_pairs(geom, gaps, a.per_gap, g.seed));
  prepare_out(g);
  write_calibration_csv(fs::path(g.out) / "calibration.csv", model);
  write_manifest(g, cmd);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensorless freehand 3D ultrasound: simulation, motion estimation, evaluation, compounding"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key=value file with option values");

  Global g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_flag("--force", g.force, "Overwrite a non-empty output directory");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate scans into <out>/scan_NNN");
  c_sim->add_option("--scans", sim.scans, "Number of scans")->capture_default_str();
  c_sim->add_option("--shape", sim.shape, "linear, s_curve, c_curve or mixed")->capture_default_str();
  c_sim->add_option("--frames", sim.frames, "Frames per scan")->capture_default_str();
  c_sim->add_option("--extent", sim.extent, "Frame side in pixels")->capture_default_str();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the motion network on a simulated dataset");
  c_train->add_option("--data", tr.data, "Dataset directory")->required();
  c_train->add_option("--scale", tr.scale, "toy, paper-shape or tiny")->capture_default_str();
  c_train->add_option("--seq-len", tr.seq_len, "Sequence length s")->capture_default_str();
  c_train->add_option("--batch", tr.batch, "Batch size (0: scale default)")->capture_default_str();
  c_train->add_option("--steps", tr.steps, "Optimizer steps")->capture_default_str();
  c_train->add_option("--validate-every", tr.validate_every, "Validation interval in steps")->capture_default_str();
  c_train->add_option("--val-scans", tr.val_scans, "Held-out scans (0: a quarter)")->capture_default_str();
  c_train->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();
  c_train->add_flag("--no-gla", tr.no_gla, "Replace the attention module with plain pooling");
  c_train->add_option("--resume", tr.resume, "Continue from a last.ckpt");

  InferArgs inf;
  auto* c_infer = app.add_subcommand("infer", "Predict relative and absolute poses for one scan");
  c_infer->add_option("--scan", inf.scan, "Scan directory")->required();
  c_infer->add_option("--checkpoint", inf.checkpoint, "Trained network checkpoint");
  c_infer->add_option("--baseline", inf.baseline, "Decorrelation calibration CSV");
  c_infer->add_flag("--identity", inf.identity, "Echo the true motions (pipeline check)");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Score predicted absolute poses against the truth");
  c_eval->add_option("--scan", ev.scan, "Scan directory (geometry and default truth)")->required();
  c_eval->add_option("--truth", ev.truth, "Absolute truth CSV (default: the scan's poses)");
  c_eval->add_option("--pred", ev.pred, "Predicted absolute CSV")->required();

  CompoundArgs cp;
  auto* c_comp = app.add_subcommand("compound", "Splat a scan into a voxel volume");
  c_comp->add_option("--scan", cp.scan, "Scan directory")->required();
  c_comp->add_option("--poses", cp.poses, "Absolute poses CSV (default: the scan's truth)");
  c_comp->add_option("--voxel", cp.voxel, "Voxel size in mm")->capture_default_str();
  c_comp->add_option("--fill-radius", cp.fill_radius, "Hole-filling radius in voxels (0: off)")->capture_default_str();

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate-baseline", "Fit the NCC to elevational-gap curve");
  c_cal->add_option("--extent", cal.extent, "Frame side in pixels")->capture_default_str();
  c_cal->add_option("--pitch", cal.pitch, "Pixel pitch in mm")->capture_default_str();
  c_cal->add_option("--gaps", cal.gaps, "Comma-separated gaps in mm")->capture_default_str();
  c_cal->add_option("--per-gap", cal.per_gap, "Frame pairs per gap")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_sim) return run_simulate(g, *c_sim, sim);
    if (*c_train) return run_train(g, *c_train, tr);
    if (*c_infer) return run_infer(g, *c_infer, inf);
    if (*c_eval) return run_evaluate(g, *c_eval, ev);
    if (*c_comp) return run_compound(g, *c_comp, cp);
    if (*c_cal) return run_calibrate(g, *c_cal, cal);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
