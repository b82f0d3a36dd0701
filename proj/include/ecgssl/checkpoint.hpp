#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecgssl/tensor.hpp"

namespace ecgssl {

// One entry of a model state dict. Buffers (batch-norm running statistics)
// are carried with trainable=false so optimizers skip them while EMA and
// checkpointing still cover them.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// ETCK checkpoint format, all integers little-endian:
//   magic "ETCK" | version u32 | count u32
//   per tensor: name_len u32 | name bytes | rank u32 | dims u64[rank]
//               | values f32[numel]
// Values are stored as float32; in-memory doubles are rounded on save and
// therefore round-trip bit-exactly after the first save/load cycle.
std::string encode_checkpoint(const std::vector<NamedTensor>& state);
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensor>& state);

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<real> values;
};

std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into matching state entries by name. Entries in
// state whose name does not appear in the checkpoint throw when `strict`,
// and are left untouched otherwise. Shape mismatches always throw.
void apply_checkpoint(const std::vector<CheckpointEntry>& entries,
                      std::vector<NamedTensor>& state, bool strict = true);

}  // namespace ecgssl
