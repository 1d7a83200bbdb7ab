#ifndef SEMBID_CHECKPOINT_HPP_
#define SEMBID_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sembid/nn.hpp"
#include "sembid/tensor.hpp"

namespace sembid {

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> value;
  std::vector<float> m;  // Adam moments; empty when not saved
  std::vector<float> v;
};

// Binary layout, little-endian:
//   "SBCK" | u32 version | i64 optimizer step | u32 n_tensors | per tensor:
//   u16 name_len, name, u32 rank, rank x i64 dims, u8 has_moments,
//   numel f32 values [, numel f32 m, numel f32 v].
struct Checkpoint {
  std::int64_t step = 0;
  std::vector<CheckpointTensor> tensors;

  std::uint64_t checksum() const;  // FNV-1a over the serialized bytes
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

template <typename T>
Checkpoint capture_checkpoint(const ParamStore<T>& store, const AdamW<T>* optimizer);

// Names and shapes must match exactly; otherwise ConfigError.
template <typename T>
void restore_checkpoint(const Checkpoint& ckpt, ParamStore<T>& store, AdamW<T>* optimizer);

}  // namespace sembid

#endif  // SEMBID_CHECKPOINT_HPP_
