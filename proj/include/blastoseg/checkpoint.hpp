#pragma once

// Checkpoint container format:
//   magic "RDU1"
//   u32 format version (little-endian)
//   u32 config length + JSON config block (model config + training metadata)
//   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank],
//               raw little-endian f32 values
//   u32 CRC-32 over every byte between the version field and the CRC

#include <cstdint>
#include <string>
#include <vector>

#include "blastoseg/tensor.hpp"

namespace blastoseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
    std::string name;
    Shape dims;
    std::vector<float> values;
};

struct CheckpointData {
    std::uint32_t version = kCheckpointVersion;
    std::string config_json;
    std::vector<CheckpointTensor> tensors;
};

void write_checkpoint_file(const std::string& path, const CheckpointData& data);

// Throws FormatError on bad magic, unsupported version, truncation, or
// CRC mismatch; IoError when the file cannot be opened.
CheckpointData read_checkpoint_file(const std::string& path);

} // namespace blastoseg
