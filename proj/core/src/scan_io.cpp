#include "freehand/scan_io.hpp"

#include "freehand/checkpoint.hpp"
#include "freehand/pose_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace freehand {

static_assert(std::endian::native == std::endian::little, "FUS1 I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error(path.string() + ": truncated header");
  return v;
}

}  // namespace

void write_frames_bin(const std::filesystem::path& path, const ScanSequence& scan) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("FUS1", 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(scan.n_frames));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(scan.geom.rows));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(scan.geom.cols));
  put<float>(os, static_cast<float>(scan.geom.pitch_axial_mm));
  put<float>(os, static_cast<float>(scan.geom.pitch_lateral_mm));
  put<float>(os, static_cast<float>(scan.frame_rate_hz));
  os.write(reinterpret_cast<const char*>(scan.frames.data()),
           static_cast<std::streamsize>(scan.frames.size() * sizeof(float)));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

void read_frames_bin(const std::filesystem::path& path, ScanSequence& scan) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FUS1", 4) != 0) throw std::runtime_error(path.string() + ": bad magic");
  scan.n_frames = get<std::uint32_t>(is, path);
  scan.geom.rows = get<std::uint32_t>(is, path);
  scan.geom.cols = get<std::uint32_t>(is, path);
  // Pitches are stored as f32; keep the float value so a re-write is byte-identical.
  scan.geom.pitch_axial_mm = get<float>(is, path);
  scan.geom.pitch_lateral_mm = get<float>(is, path);
  scan.frame_rate_hz = get<float>(is, path);
  scan.geom.validate();
  scan.frames.resize(scan.n_frames * scan.frame_size());
  if (!is.read(reinterpret_cast<char*>(scan.frames.data()),
               static_cast<std::streamsize>(scan.frames.size() * sizeof(float)))) {
    throw std::runtime_error(path.string() + ": truncated frame data");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error(path.string() + ": trailing bytes");
}

void write_scan(const std::filesystem::path& dir, const ScanSequence& scan,
                const std::map<std::string, std::string>& extra_meta) {
  std::filesystem::create_directories(dir);
  if (scan.truth.size() != scan.n_frames) throw std::invalid_argument("write_scan: pose count does not match frame count");
  write_frames_bin(dir / "frames.bin", scan);
  write_pose_csv(dir / "poses.csv", poses_of(scan.truth));
  std::map<std::string, std::string> meta = extra_meta;
  meta["subject"] = scan.subject;
  meta["frames"] = std::to_string(scan.n_frames);
  std::ofstream os(dir / "scan.txt");
  if (!os) throw std::runtime_error("cannot write " + (dir / "scan.txt").string());
  os << ad::encode_key_values(meta);
}

ScanSequence read_scan(const std::filesystem::path& dir) {
  ScanSequence scan;
  read_frames_bin(dir / "frames.bin", scan);
  const auto poses = read_pose_csv(dir / "poses.csv");
  if (poses.size() != scan.n_frames) {
    throw std::runtime_error(dir.string() + ": poses.csv has " + std::to_string(poses.size()) + " rows for " +
                             std::to_string(scan.n_frames) + " frames");
  }
  scan.truth = trajectory_of(poses);
  for (const auto& r : relatives_of(scan.truth)) scan.relative.push_back(transform_to_pose(r));
  std::ifstream is(dir / "scan.txt");
  if (is) {
    std::stringstream ss;
    ss << is.rdbuf();
    const auto meta = ad::decode_key_values(ss.str());
    if (auto it = meta.find("subject"); it != meta.end()) scan.subject = it->second;
  }
  if (scan.subject.empty()) scan.subject = dir.filename().string();
  return scan;
}

}  // namespace freehand
