#include "sembid/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "sembid/binary_io.hpp"
#include "sembid/errors.hpp"
#include "sembid/rng.hpp"

namespace sembid {

namespace {

constexpr std::uint32_t kCacheVersion = 1;

bool is_alnum(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

void l2_normalize(std::vector<float>& v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (sq == 0.0) return;
  const double inv = 1.0 / std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x * inv);
}

void check_finite(const std::vector<float>& v, std::string_view what) {
  for (float x : v) {
    if (!std::isfinite(x)) throw DomainError(std::string(what) + " contains non-finite values");
  }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    const bool decimal_point = c == '.' && !cur.empty() && is_digit(cur.back()) &&
                               i + 1 < text.size() &&
                               is_digit(static_cast<unsigned char>(text[i + 1]));
    if (is_alnum(c) || decimal_point) {
      cur += static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

HashEncoder::HashEncoder(int dim) : dim_(dim) {
  if (dim < 1) throw ConfigError("encoder dimension must be positive");
}

EmbeddingVector HashEncoder::encode(std::string_view text) const {
  if (text.empty()) throw DomainError("cannot encode empty text");
  EmbeddingVector out;
  out.source = EmbeddingSource::kHash;
  out.values.assign(static_cast<std::size_t>(dim_), 0.0f);
  for (const auto& tok : tokenize(text)) {
    const std::uint64_t h = fnv1a64(tok);
    const float sign = (splitmix64(h) >> 63) ? -1.0f : 1.0f;
    out.values[h % static_cast<std::uint64_t>(dim_)] += sign;
  }
  l2_normalize(out.values);
  return out;
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& path, int expected_dim) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic("SBEC");
  if (r.u32() != kCacheVersion) r.fail("unsupported embedding cache version");
  const std::uint32_t dim = r.u32();
  if (dim == 0 || dim > (1u << 20)) r.fail("implausible embedding dimension");
  if (expected_dim >= 0 && static_cast<int>(dim) != expected_dim) {
    throw ConfigError("embedding cache dimension " + std::to_string(dim) +
                      " does not match expected " + std::to_string(expected_dim));
  }
  EmbeddingCache cache(static_cast<int>(dim));
  while (!r.at_end()) {
    const std::size_t record_start = r.offset();
    const std::uint32_t len = r.u32();
    std::string text = r.bytes(len);
    std::vector<float> values(dim);
    for (float& v : values) {
      v = r.f32();
      if (!std::isfinite(v)) r.fail("non-finite embedding value");
    }
    if (cache.find(text) != nullptr) {
      throw ParseError("duplicate cache entry", record_start);
    }
    cache.insert(std::move(text), std::move(values));
  }
  return cache;
}

void EmbeddingCache::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.bytes("SBEC");
  w.u32(kCacheVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  for (const auto& key : order_) {
    w.u32(static_cast<std::uint32_t>(key.size()));
    w.bytes(key);
    for (float v : entries_.at(key)) w.f32(v);
  }
  w.write_file(path);
}

void EmbeddingCache::insert(std::string text, std::vector<float> values) {
  if (static_cast<int>(values.size()) != dim_) {
    throw ConfigError("embedding has dimension " + std::to_string(values.size()) +
                      ", cache expects " + std::to_string(dim_));
  }
  check_finite(values, "embedding");
  auto [it, inserted] = entries_.insert_or_assign(text, std::move(values));
  if (inserted) order_.push_back(std::move(text));
}

const std::vector<float>* EmbeddingCache::find(std::string_view text) const {
  auto it = entries_.find(std::string(text));
  return it == entries_.end() ? nullptr : &it->second;
}

CachedEncoder::CachedEncoder(EmbeddingCache cache, CacheMode mode)
    : cache_(std::move(cache)), mode_(mode), fallback_(cache_.dim()) {}

EmbeddingVector CachedEncoder::encode(std::string_view text) const {
  if (text.empty()) throw DomainError("cannot encode empty text");
  if (const auto* hit = cache_.find(text)) {
    return EmbeddingVector{*hit, EmbeddingSource::kCached};
  }
  if (mode_ == CacheMode::kPermissive) return fallback_.encode(text);
  throw LookupError("text not in embedding cache: \"" + std::string(text) + "\"");
}

std::unique_ptr<TextEncoder> make_encoder(std::string_view spec, CacheMode mode) {
  if (spec == "hash") return std::make_unique<HashEncoder>();
  if (spec.substr(0, 6) == "cache:" && spec.size() > 6) {
    return std::make_unique<CachedEncoder>(
        EmbeddingCache::load(std::filesystem::path(std::string(spec.substr(6)))), mode);
  }
  throw ConfigError("encoder must be 'hash' or 'cache:<path>', got '" + std::string(spec) + "'");
}

RandomProjection::RandomProjection(int in_dim, int out_dim, std::uint64_t seed) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("projection dimensions must be positive");
  spec_.in_dim = in_dim;
  spec_.out_dim = out_dim;
  spec_.seed = seed;
  Rng rng(derive_seed(seed, "random-projection"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  matrix_.resize(static_cast<std::size_t>(in_dim) * out_dim);
  for (float& m : matrix_) m = static_cast<float>(rng.normal() * scale);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float m : matrix_) {
    const auto bits = std::bit_cast<std::uint32_t>(m);
    for (int b = 0; b < 4; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  spec_.checksum = h;
}

EmbeddingVector RandomProjection::apply(const EmbeddingVector& v) const {
  if (v.dim() != spec_.in_dim) {
    throw DomainError("projection expects dimension " + std::to_string(spec_.in_dim) + ", got " +
                      std::to_string(v.dim()));
  }
  EmbeddingVector out;
  out.source = EmbeddingSource::kProjected;
  out.values.resize(static_cast<std::size_t>(spec_.out_dim));
  const std::size_t in = static_cast<std::size_t>(spec_.in_dim);
  // Zero inputs contribute exactly nothing, so skipping them keeps the
  // ascending-index sum bit-identical while making sparse inputs cheap.
  std::vector<std::size_t> nz;
  for (std::size_t i = 0; i < in; ++i)
    if (v.values[i] != 0.0f) nz.push_back(i);
  for (int o = 0; o < spec_.out_dim; ++o) {
    const float* row = matrix_.data() + static_cast<std::size_t>(o) * in;
    double acc = 0.0;
    for (std::size_t i : nz) acc += static_cast<double>(row[i]) * v.values[i];
    out.values[o] = static_cast<float>(acc);
  }
  return out;
}

std::vector<EmbeddingVector> shuffle_pairings(std::span<const std::string> texts,
                                              std::span<const EmbeddingVector> vectors,
                                              std::uint64_t seed) {
  if (texts.size() != vectors.size()) {
    throw DomainError("shuffle_pairings needs as many vectors as texts");
  }
  std::vector<std::size_t> perm(vectors.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "shuffle-pairings"));
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<EmbeddingVector> out;
  out.reserve(vectors.size());
  for (std::size_t p : perm) out.push_back(vectors[p]);
  return out;
}

SemanticEmbedder::SemanticEmbedder(std::shared_ptr<const TextEncoder> encoder,
                                   std::uint64_t projection_seed, int out_dim)
    : encoder_(std::move(encoder)), projection_(encoder_->dim(), out_dim, projection_seed) {}

const std::vector<float>& SemanticEmbedder::embed(const std::string& text) {
  auto it = memo_.find(text);
  if (it == memo_.end()) {
    it = memo_.emplace(text, projection_.apply(encoder_->encode(text)).values).first;
  }
  return it->second;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DomainError("cosine of vectors with different dimensions");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace sembid
