#include "freehand/model.hpp"

#include "freehand/checkpoint.hpp"
#include "freehand/ops.hpp"
#include "freehand/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace freehand {

using ad::Tensor;

namespace {

std::size_t conv_out(std::size_t in, std::size_t stride) { return (in - 1) / stride + 1; }

std::string join(const std::array<std::size_t, 4>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::array<std::size_t, 4> split4(const std::string& s, const std::string& key) {
  std::array<std::size_t, 4> out{};
  std::stringstream ss(s);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 4) break;
    out[i++] = std::stoull(item);
  }
  if (i != 4) throw std::invalid_argument("model config: '" + key + "' needs four comma-separated values");
  return out;
}

const char* scale_name(ModelScale s) {
  switch (s) {
    case ModelScale::kPaper: return "paper";
    case ModelScale::kToy: return "toy";
    default: return "custom";
  }
}

}  // namespace

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_shape() {
  ModelConfig c;
  c.scale = ModelScale::kPaper;
  c.frame_extent = 256;
  c.widths = {64, 128, 256, 512};
  c.strides = {2, 2, 4, 4};
  c.corr = {23, 19, 7, CorrNormalization::kNcc};
  c.block_extent = 4;
  c.lstm_hidden = 128;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.scale = ModelScale::kCustom;
  c.frame_extent = 8;
  c.widths = {2, 2, 2, 4};
  c.strides = {1, 1, 2, 2};
  c.corr = {5, 3, 1, CorrNormalization::kNcc};
  c.block_extent = 2;
  c.lstm_hidden = 3;
  c.sequence_length = 2;
  return c;
}

std::array<std::size_t, 4> ModelConfig::stage_extents() const {
  std::array<std::size_t, 4> e{};
  std::size_t cur = frame_extent;
  for (std::size_t k = 0; k < 4; ++k) {
    cur = conv_out(cur, strides[k]);
    e[k] = cur;
  }
  return e;
}

GlaConfig ModelConfig::gla() const {
  const auto e = stage_extents();
  GlaConfig g;
  g.local_channels = widths[1];
  g.global_channels = widths[3];
  g.block_extent = block_extent;
  g.n_blocks = (e[1] / block_extent) * (e[1] / block_extent);
  g.reduction = reduction;
  return g;
}

void ModelConfig::validate() const {
  if (frame_extent == 0 || lstm_hidden == 0 || block_extent == 0) {
    throw std::invalid_argument("model config: sizes must be positive");
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (widths[k] == 0 || strides[k] == 0) throw std::invalid_argument("model config: widths and strides must be positive");
  }
  const auto e = stage_extents();
  const RoiGrid grid = roi_grid(e[0], e[0], corr);
  if (grid.rows != e[2] || grid.cols != e[2]) {
    throw std::invalid_argument("model config: correlation grid " + std::to_string(grid.rows) + "x" +
                                std::to_string(grid.cols) + " does not match encoder stage 3 extent " +
                                std::to_string(e[2]));
  }
  if (e[3] != block_extent) {
    throw std::invalid_argument("model config: stage 4 extent " + std::to_string(e[3]) + " must equal block extent " +
                                std::to_string(block_extent));
  }
  if (e[1] % block_extent != 0) throw std::invalid_argument("model config: stage 2 extent not divisible by block extent");
  if (widths[3] % widths[1] != 0) throw std::invalid_argument("model config: stage 4 width must be a multiple of stage 2 width");
  gla().validate();
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
  std::map<std::string, std::string> kv;
  kv["model.scale"] = scale_name(scale);
  kv["model.frame_extent"] = std::to_string(frame_extent);
  kv["model.widths"] = join(widths);
  kv["model.strides"] = join(strides);
  kv["model.corr.roi"] = std::to_string(corr.roi_extent);
  kv["model.corr.patch"] = std::to_string(corr.patch_extent);
  kv["model.corr.stride"] = std::to_string(corr.roi_stride);
  kv["model.corr.normalization"] = corr.normalization == CorrNormalization::kNcc ? "ncc" : "dot";
  kv["model.block_extent"] = std::to_string(block_extent);
  kv["model.reduction"] = std::to_string(reduction);
  kv["model.lstm_hidden"] = std::to_string(lstm_hidden);
  kv["model.use_gla"] = use_gla ? "1" : "0";
  kv["model.sequence_length"] = std::to_string(sequence_length);
  return kv;
}

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("model config: missing key '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  const std::string& scale = get("model.scale");
  c.scale = scale == "paper" ? ModelScale::kPaper : scale == "toy" ? ModelScale::kToy : ModelScale::kCustom;
  c.frame_extent = std::stoull(get("model.frame_extent"));
  c.widths = split4(get("model.widths"), "model.widths");
  c.strides = split4(get("model.strides"), "model.strides");
  c.corr.roi_extent = std::stoull(get("model.corr.roi"));
  c.corr.patch_extent = std::stoull(get("model.corr.patch"));
  c.corr.roi_stride = std::stoull(get("model.corr.stride"));
  c.corr.normalization = get("model.corr.normalization") == "dot" ? CorrNormalization::kDot : CorrNormalization::kNcc;
  c.block_extent = std::stoull(get("model.block_extent"));
  c.reduction = std::stoull(get("model.reduction"));
  c.lstm_hidden = std::stoull(get("model.lstm_hidden"));
  c.use_gla = get("model.use_gla") == "1";
  c.sequence_length = std::stoull(get("model.sequence_length"));
  c.validate();
  return c;
}

std::vector<MotionEstimate> ModelOutput::estimates(std::size_t b) const {
  const std::size_t steps = fused.size(1);
  std::vector<MotionEstimate> out(steps);
  auto fill = [&](const Tensor& t, std::size_t step) {
    PoseVector p;
    for (std::size_t k = 0; k < 6; ++k) p[k] = t.data()[(b * steps + step) * 6 + k];
    return p;
  };
  for (std::size_t i = 0; i < steps; ++i) {
    out[i].global_motion = fill(global_motion, i);
    out[i].local_motion = fill(local_motion, i);
    out[i].fused = fill(fused, i);
  }
  return out;
}

MotionNet::Stage MotionNet::make_stage(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                                       ad::Rng& rng) {
  Stage st;
  st.stride = stride;
  st.conv_a_w = params_.add(name + ".conv_a.w", {out, in, 3, 3});
  st.conv_a_b = params_.add(name + ".conv_a.b", {out});
  st.conv_b_w = params_.add(name + ".conv_b.w", {out, out, 3, 3});
  st.conv_b_b = params_.add(name + ".conv_b.b", {out});
  st.shortcut_w = params_.add(name + ".shortcut.w", {out, in, 1, 1});
  ad::kaiming_uniform(st.conv_a_w, in * 9, rng);
  ad::kaiming_uniform(st.conv_b_w, out * 9, rng);
  ad::kaiming_uniform(st.shortcut_w, in, rng);
  return st;
}

MotionNet::Lstm MotionNet::make_lstm(const std::string& name, std::size_t input, ad::Rng& rng) {
  const std::size_t h = cfg_.lstm_hidden;
  Lstm l;
  l.cell.w_ih = params_.add(name + ".w_ih", {4 * h, input});
  l.cell.w_hh = params_.add(name + ".w_hh", {4 * h, h});
  l.cell.bias = params_.add(name + ".bias", {4 * h});
  l.head_w = params_.add(name + ".head.w", {6, h});
  l.head_b = params_.add(name + ".head.b", {6});
  ad::kaiming_uniform(l.cell.w_ih, input, rng);
  ad::orthogonal(l.cell.w_hh, rng);
  ad::kaiming_uniform(l.head_w, h, rng);
  return l;
}

MotionNet::MotionNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  ad::Rng rng(seed);
  const auto& w = cfg_.widths;
  const std::size_t d = cfg_.corr.displacement_extent();
  stages_[0] = make_stage("enc1", 1, w[0], cfg_.strides[0], rng);
  stages_[1] = make_stage("enc2", 2 * w[0], w[1], cfg_.strides[1], rng);
  stages_[2] = make_stage("enc3", w[1], w[2], cfg_.strides[2], rng);
  stages_[3] = make_stage("enc4", w[2] + d * d, w[3], cfg_.strides[3], rng);
  const std::size_t b2 = cfg_.block_extent * cfg_.block_extent;
  if (cfg_.use_gla) gla_.emplace(cfg_.gla(), params_, "gla.", rng);
  global_lstm_ = make_lstm("lstm_global", w[3] * b2, rng);
  local_lstm_ = make_lstm("lstm_local", (cfg_.use_gla ? w[3] : w[1]) * b2, rng);
}

Tensor MotionNet::run_stage(const Stage& st, const Tensor& x) const {
  Tensor a = ad::relu(ad::conv2d(x, st.conv_a_w, st.conv_a_b, {st.stride, 1}));
  Tensor b = ad::conv2d(a, st.conv_b_w, st.conv_b_b, {1, 1});
  Tensor skip = ad::conv2d(x, st.shortcut_w, Tensor{}, {st.stride, 0});
  return ad::relu(ad::add(b, skip));
}

Tensor MotionNet::run_lstm(const Lstm& lstm, const Tensor& seq) const {
  const std::size_t batch = seq.size(0), steps = seq.size(1), feat = seq.size(2), h = cfg_.lstm_hidden;
  Tensor state_h = Tensor::zeros({batch, h});
  Tensor state_c = Tensor::zeros({batch, h});
  std::vector<Tensor> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor x = ad::reshape(ad::slice(seq, 1, t, 1), {batch, feat});
    std::tie(state_h, state_c) = ad::lstm_cell(x, state_h, state_c, lstm.cell);
    outputs.push_back(ad::reshape(ad::linear(state_h, lstm.head_w, lstm.head_b), {batch, 1, 6}));
  }
  return ad::concat(outputs, 1);
}

Tensor MotionNet::encode_first(const Tensor& frames) const { return run_stage(stages_[0], frames); }

Tensor standardize_frames(const Tensor& frames) {
  if (frames.dim() < 2) throw std::invalid_argument("standardize_frames: expected (..., H, W)");
  const std::size_t hw = frames.size(frames.dim() - 1) * frames.size(frames.dim() - 2);
  const std::size_t count = frames.numel() / hw;
  auto src = frames.data();
  std::vector<double> out(src.size());
  for (std::size_t f = 0; f < count; ++f) {
    double mean = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mean += src[f * hw + i];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t i = 0; i < hw; ++i) var += (src[f * hw + i] - mean) * (src[f * hw + i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(hw));
    for (std::size_t i = 0; i < hw; ++i) out[f * hw + i] = sd > 0.0 ? (src[f * hw + i] - mean) / sd : 0.0;
  }
  return Tensor::from(frames.shape(), std::move(out));
}

ModelOutput MotionNet::forward(const Tensor& seq_a, const Tensor& seq_b, bool diagnostics) const {
  if (seq_a.dim() != 4 || seq_b.dim() != 4) {
    throw std::invalid_argument("model forward: sequences must be (B,L,H,W), got " + ad::shape_str(seq_a.shape()) +
                                " and " + ad::shape_str(seq_b.shape()));
  }
  if (seq_a.shape() != seq_b.shape()) {
    throw std::invalid_argument("model forward: mismatched sequences " + ad::shape_str(seq_a.shape()) + " and " +
                                ad::shape_str(seq_b.shape()));
  }
  if (seq_a.size(2) != seq_a.size(3)) throw std::invalid_argument("model forward: frames must be square");
  if (seq_a.size(2) != cfg_.frame_extent) {
    throw std::invalid_argument("model forward: frame extent " + std::to_string(seq_a.size(2)) +
                                " does not match model extent " + std::to_string(cfg_.frame_extent));
  }
  const std::size_t batch = seq_a.size(0), steps = seq_a.size(1), hw = cfg_.frame_extent;
  const std::size_t n = batch * steps;
  const ad::Shape frame_shape{n, 1, hw, hw};

  Tensor e1a = encode_first(ad::reshape(standardize_frames(seq_a), frame_shape));
  Tensor e1b = encode_first(ad::reshape(standardize_frames(seq_b), frame_shape));
  Tensor corr = correlate_batch(e1a, e1b, cfg_.corr);
  Tensor e2 = run_stage(stages_[1], ad::concat({e1a, e1b}, 1));
  Tensor e3 = run_stage(stages_[2], e2);
  Tensor e4 = run_stage(stages_[3], ad::concat({e3, corr}, 1));

  Tensor global, local, scores;
  if (gla_) {
    auto att = gla_->forward(e2, e4);
    global = att.global;
    local = att.local;
    scores = att.block_scores;
  } else {
    global = e4;
    local = ad::adaptive_avg_pool2d(e2, cfg_.block_extent, cfg_.block_extent);
  }

  ModelOutput out;
  const std::size_t fg = global.numel() / n, fl = local.numel() / n;
  out.global_motion = run_lstm(global_lstm_, ad::reshape(global, {batch, steps, fg}));
  out.local_motion = run_lstm(local_lstm_, ad::reshape(local, {batch, steps, fl}));
  out.fused = ad::scale(ad::add(out.global_motion, out.local_motion), 0.5);

  Tensor pooled_g = ad::reshape(ad::adaptive_avg_pool2d(global, 1, 1), {batch, steps, global.size(1)});
  Tensor pooled_l = ad::reshape(ad::adaptive_avg_pool2d(local, 1, 1), {batch, steps, local.size(1)});
  out.embeddings = ad::concat({pooled_g, pooled_l}, 2);
  if (diagnostics && scores.defined()) out.block_scores = ad::reshape(scores.detach(), {batch, steps, scores.size(1)});
  return out;
}

void MotionNet::save(const std::filesystem::path& path, const std::map<std::string, std::string>& extra_header) const {
  ad::Checkpoint ckpt;
  ckpt.header = cfg_.to_key_values();
  for (const auto& [k, v] : extra_header) ckpt.header[k] = v;
  ad::append_parameters(ckpt, params_);
  ad::write_checkpoint(path, ckpt);
}

MotionNet MotionNet::load(const std::filesystem::path& path) {
  const ad::Checkpoint ckpt = ad::read_checkpoint(path);
  MotionNet net(ModelConfig::from_key_values(ckpt.header), 0);
  ad::load_parameters(ckpt, net.params_);
  return net;
}

std::vector<std::filesystem::path> export_attention_scores(const ModelOutput& out, std::size_t batch_index,
                                                           const std::filesystem::path& dir, const std::string& stem) {
  if (!out.block_scores.defined()) {
    throw std::logic_error("export_attention_scores: forward pass ran without diagnostics");
  }
  const std::size_t steps = out.block_scores.size(1), k = out.block_scores.size(2);
  const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(k))));
  std::vector<std::filesystem::path> written;
  auto data = out.block_scores.data();
  for (std::size_t t = 0; t < steps; ++t) {
    char name[64];
    std::snprintf(name, sizeof(name), "_%04zu.pgm", t);
    const auto path = dir / (stem + name);
    write_pgm16(path, g, g, data.subspan((batch_index * steps + t) * k, k), -1.0, 1.0);
    written.push_back(path);
  }
  return written;
}

}  // namespace freehand
