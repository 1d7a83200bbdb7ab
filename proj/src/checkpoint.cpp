#include "sembid/checkpoint.hpp"

#include "sembid/binary_io.hpp"
#include "sembid/embedding.hpp"
#include "sembid/errors.hpp"

namespace sembid {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes("SBCK");
  w.u32(kCheckpointVersion);
  w.u64(static_cast<std::uint64_t>(ckpt.step));
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    const bool moments = !t.m.empty();
    w.bytes(std::string(1, moments ? '\1' : '\0'));
    for (float x : t.value) w.f32(x);
    if (moments) {
      for (float x : t.m) w.f32(x);
      for (float x : t.v) w.f32(x);
    }
  }
  return w.buffer();
}

std::uint64_t Checkpoint::checksum() const {
  const auto bytes = serialize_checkpoint(*this);
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ByteWriter w;
  const auto bytes = serialize_checkpoint(ckpt);
  w.bytes(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  w.write_file(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic("SBCK");
  if (r.u32() != kCheckpointVersion) r.fail("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.step = static_cast<std::int64_t>(r.u64());
  const std::uint32_t n = r.u32();
  ckpt.tensors.resize(n);
  for (auto& t : ckpt.tensors) {
    t.name = r.bytes(r.u16());
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("implausible tensor rank");
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = static_cast<std::int64_t>(r.u64());
      if (d < 0 || d > (1 << 28)) r.fail("implausible tensor dimension");
      t.shape.push_back(d);
      numel *= static_cast<std::size_t>(d);
    }
    if (numel * 4 > r.remaining()) r.fail("tensor '" + t.name + "' runs past end of file");
    const std::string flag = r.bytes(1);
    if (flag[0] != '\0' && flag[0] != '\1') r.fail("bad moment flag");
    t.value.resize(numel);
    for (float& x : t.value) x = r.f32();
    if (flag[0] == '\1') {
      t.m.resize(numel);
      t.v.resize(numel);
      for (float& x : t.m) x = r.f32();
      for (float& x : t.v) x = r.f32();
    }
  }
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  return ckpt;
}

template <typename T>
Checkpoint capture_checkpoint(const ParamStore<T>& store, const AdamW<T>* optimizer) {
  Checkpoint ckpt;
  ckpt.step = optimizer ? optimizer->steps() : 0;
  const auto& params = store.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    CheckpointTensor t;
    t.name = params[k].name;
    t.shape = params[k].tensor.shape();
    for (T x : params[k].tensor.data()) t.value.push_back(static_cast<float>(x));
    if (optimizer) {
      for (T x : optimizer->first_moments()[k]) t.m.push_back(static_cast<float>(x));
      for (T x : optimizer->second_moments()[k]) t.v.push_back(static_cast<float>(x));
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

template <typename T>
void restore_checkpoint(const Checkpoint& ckpt, ParamStore<T>& store, AdamW<T>* optimizer) {
  auto& params = store.params();
  if (ckpt.tensors.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& t = ckpt.tensors[k];
    if (t.name != params[k].name || t.shape != params[k].tensor.shape()) {
      throw ConfigError("checkpoint tensor '" + t.name + "' " + shape_str(t.shape) +
                        " does not match model parameter '" + params[k].name + "' " +
                        shape_str(params[k].tensor.shape()));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& t = ckpt.tensors[k];
    auto dst = params[k].tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t.value[i]);
    if (optimizer && !t.m.empty()) {
      auto& m = optimizer->first_moments()[k];
      auto& v = optimizer->second_moments()[k];
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = static_cast<T>(t.m[i]);
        v[i] = static_cast<T>(t.v[i]);
      }
    }
  }
  if (optimizer) optimizer->set_steps(ckpt.step);
}

template Checkpoint capture_checkpoint(const ParamStore<float>&, const AdamW<float>*);
template Checkpoint capture_checkpoint(const ParamStore<double>&, const AdamW<double>*);
template void restore_checkpoint(const Checkpoint&, ParamStore<float>&, AdamW<float>*);
template void restore_checkpoint(const Checkpoint&, ParamStore<double>&, AdamW<double>*);

}  // namespace sembid
