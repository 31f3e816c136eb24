#include "freehand/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace freehand::ad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void bytes(const std::string& s) { raw(s.data(), s.size()); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf_(b) {}
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated file");
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

std::string encode_key_values(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("key=value text cannot hold key '" + k + "'");
    }
    out += k + "=" + v + "\n";
  }
  return out;
}

std::map<std::string, std::string> decode_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("key=value text: missing '=' in '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("CKPT");
  w.u32(kCheckpointVersion);
  const std::string header = encode_key_values(ckpt.header);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  w.u32(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    if (r.values.size() != numel_of(r.shape)) throw std::invalid_argument("checkpoint record '" + r.name + "' size mismatch");
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) w.u32(static_cast<std::uint32_t>(e));
    for (double v : r.values) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != "CKPT") throw std::runtime_error("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.header = decode_key_values(r.bytes(r.u32()));
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u32());
    const auto rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u32());
    t.values.resize(numel_of(t.shape));
    for (auto& v : t.values) v = r.f64();
    ckpt.records.push_back(std::move(t));
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void append_parameters(Checkpoint& ckpt, const ParameterStore& params, const std::string& prefix) {
  for (const auto& p : params.items()) {
    auto d = p.tensor.data();
    ckpt.records.push_back({prefix + p.name, p.tensor.shape(), {d.begin(), d.end()}});
  }
}

void load_parameters(const Checkpoint& ckpt, ParameterStore& params, const std::string& prefix) {
  for (auto& p : params.items()) {
    const NamedTensor* rec = ckpt.find(prefix + p.name);
    if (!rec) throw std::runtime_error("checkpoint: missing parameter '" + prefix + p.name + "'");
    if (rec->shape != p.tensor.shape()) {
      throw std::runtime_error("checkpoint: parameter '" + p.name + "' has shape " + shape_str(rec->shape) +
                               ", model expects " + shape_str(p.tensor.shape()));
    }
    std::copy(rec->values.begin(), rec->values.end(), p.tensor.mutable_data().begin());
  }
}

void append_optimizer(Checkpoint& ckpt, const ParameterStore& params, const OptimizerState& state) {
  const auto& items = params.items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    ckpt.records.push_back({"adam.m/" + items[k].name, items[k].tensor.shape(), state.m[k]});
    ckpt.records.push_back({"adam.v/" + items[k].name, items[k].tensor.shape(), state.v[k]});
  }
  ckpt.header["adam.step"] = std::to_string(state.step);
  ckpt.header["adam.epoch"] = std::to_string(state.epoch);
}

OptimizerState load_optimizer(const Checkpoint& ckpt, const ParameterStore& params, LrSchedule schedule,
                              AdamConfig adam) {
  OptimizerState s = make_optimizer_state(params, schedule, adam);
  const auto& items = params.items();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const NamedTensor* m = ckpt.find("adam.m/" + items[k].name);
    const NamedTensor* v = ckpt.find("adam.v/" + items[k].name);
    if (!m || !v) throw std::runtime_error("checkpoint: missing optimizer state for '" + items[k].name + "'");
    s.m[k] = m->values;
    s.v[k] = v->values;
  }
  auto get = [&](const char* key) -> std::uint64_t {
    auto it = ckpt.header.find(key);
    if (it == ckpt.header.end()) throw std::runtime_error(std::string("checkpoint: missing header key ") + key);
    return std::stoull(it->second);
  };
  s.step = get("adam.step");
  s.epoch = get("adam.epoch");
  return s;
}

}  // namespace freehand::ad
