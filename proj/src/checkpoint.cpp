#include "ecgssl/checkpoint.hpp"

#include <map>

#include "ecgssl/io.hpp"

namespace ecgssl {

namespace {
constexpr uint32_t kVersion = 1;
}

std::string encode_checkpoint(const std::vector<NamedTensor>& state) {
  ByteWriter w;
  w.str("ETCK");
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(state.size()));
  for (const NamedTensor& nt : state) {
    w.u32(static_cast<uint32_t>(nt.name.size()));
    w.str(nt.name);
    w.u32(static_cast<uint32_t>(nt.tensor.shape().size()));
    for (int64_t d : nt.tensor.shape()) w.u64(static_cast<uint64_t>(d));
    for (real v : nt.tensor.data()) w.f32(static_cast<float>(v));
  }
  return w.buffer();
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensor>& state) {
  atomic_write_file(path, encode_checkpoint(state));
}

std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "ETCK") throw FormatError("bad checkpoint magic", 0);
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const uint32_t name_len = r.u32();
    e.name = r.str(name_len);
    const uint32_t rank = r.u32();
    e.shape.resize(rank);
    for (uint32_t d = 0; d < rank; ++d)
      e.shape[d] = static_cast<int64_t>(r.u64());
    const int64_t n = shape_numel(e.shape);
    e.values.resize(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j)
      e.values[static_cast<size_t>(j)] = static_cast<real>(r.f32());
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint payload");
  return entries;
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void apply_checkpoint(const std::vector<CheckpointEntry>& entries,
                      std::vector<NamedTensor>& state, bool strict) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (NamedTensor& nt : state) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) {
      if (strict)
        throw ConfigError("checkpoint missing tensor: " + nt.name);
      continue;
    }
    const CheckpointEntry& e = *it->second;
    if (e.shape != nt.tensor.shape()) {
      throw ShapeError("checkpoint tensor " + nt.name + " has shape " +
                       shape_str(e.shape) + ", model expects " +
                       shape_str(nt.tensor.shape()));
    }
    nt.tensor.mutable_data() = e.values;
  }
}

}  // namespace ecgssl
