#pragma once

#include "freehand/nn.hpp"
#include "freehand/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace freehand::ad {

/// Checkpoint container:
///   "CKPT" | u32 version | u32 header length | header bytes (key=value lines)
///   | u32 record count | records
/// record: u32 name length | UTF-8 name | u32 rank | u32 extents[rank] | f64 payload
/// All integers and floats are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<NamedTensor> records;

  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Flat key=value text, one pair per line, keys sorted.
std::string encode_key_values(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> decode_key_values(const std::string& text);

void append_parameters(Checkpoint& ckpt, const ParameterStore& params, const std::string& prefix = "");
/// Copies matching records into the store; every parameter must be present
/// with the same shape.
void load_parameters(const Checkpoint& ckpt, ParameterStore& params, const std::string& prefix = "");

void append_optimizer(Checkpoint& ckpt, const ParameterStore& params, const OptimizerState& state);
OptimizerState load_optimizer(const Checkpoint& ckpt, const ParameterStore& params, LrSchedule schedule,
                              AdamConfig adam = {});

}  // namespace freehand::ad
