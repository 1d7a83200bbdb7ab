#ifndef SEMBID_EMBEDDING_HPP_
#define SEMBID_EMBEDDING_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sembid {

inline constexpr int kEncoderDim = 896;
inline constexpr int kSemanticDim = 2048;

enum class EmbeddingSource { kHash, kCached, kProjected };

struct EmbeddingVector {
  std::vector<float> values;
  EmbeddingSource source = EmbeddingSource::kHash;

  int dim() const { return static_cast<int>(values.size()); }
};

// Lowercased runs of ASCII letters and digits. A '.' between two digits stays
// inside the token so "8.3" is one token.
std::vector<std::string> tokenize(std::string_view text);
std::uint64_t fnv1a64(std::string_view s);

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual EmbeddingVector encode(std::string_view text) const = 0;
  virtual int dim() const = 0;
};

// Signed feature hashing: token -> bucket fnv1a64 % dim, sign from the top bit
// of splitmix64(hash). Bucket sums are L2-normalized.
class HashEncoder : public TextEncoder {
 public:
  explicit HashEncoder(int dim = kEncoderDim);
  EmbeddingVector encode(std::string_view text) const override;
  int dim() const override { return dim_; }

 private:
  int dim_;
};

// Externally computed sentence embeddings keyed by exact text.
//   "SBEC" | u32 version | u32 dim | records until EOF:
//   u32 text_len, UTF-8 text, dim little-endian f32.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(int dim = kEncoderDim) : dim_(dim) {}

  // expected_dim < 0 accepts any dimension.
  static EmbeddingCache load(const std::filesystem::path& path, int expected_dim = -1);
  void save(const std::filesystem::path& path) const;

  void insert(std::string text, std::vector<float> values);
  const std::vector<float>* find(std::string_view text) const;
  std::size_t size() const { return entries_.size(); }
  int dim() const { return dim_; }
  // Insertion order, for deterministic serialization.
  const std::vector<std::string>& keys() const { return order_; }

 private:
  int dim_;
  std::unordered_map<std::string, std::vector<float>> entries_;
  std::vector<std::string> order_;
};

enum class CacheMode { kStrict, kPermissive };

// Cache-backed encoder; misses fall back to hashing only in permissive mode.
class CachedEncoder : public TextEncoder {
 public:
  CachedEncoder(EmbeddingCache cache, CacheMode mode);
  EmbeddingVector encode(std::string_view text) const override;
  int dim() const override { return cache_.dim(); }

 private:
  EmbeddingCache cache_;
  CacheMode mode_;
  HashEncoder fallback_;
};

// "hash" or "cache:<path>".
std::unique_ptr<TextEncoder> make_encoder(std::string_view spec,
                                          CacheMode mode = CacheMode::kStrict);

struct ProjectionSpec {
  int in_dim = kEncoderDim;
  int out_dim = kSemanticDim;
  std::uint64_t seed = 0;
  std::uint64_t checksum = 0;  // fnv1a64 over the float32 matrix bytes
};

// Frozen random linear map, entries N(0, 1) / sqrt(in_dim), row-major out x in.
class RandomProjection {
 public:
  RandomProjection(int in_dim, int out_dim, std::uint64_t seed);

  EmbeddingVector apply(const EmbeddingVector& v) const;
  const ProjectionSpec& spec() const { return spec_; }
  std::span<const float> matrix() const { return matrix_; }

 private:
  ProjectionSpec spec_;
  std::vector<float> matrix_;
};

// Applies a uniform random permutation to the vectors; texts are untouched.
std::vector<EmbeddingVector> shuffle_pairings(std::span<const std::string> texts,
                                              std::span<const EmbeddingVector> vectors,
                                              std::uint64_t seed);

// Encoder followed by the projection, memoized by exact text. Not thread-safe.
class SemanticEmbedder {
 public:
  SemanticEmbedder(std::shared_ptr<const TextEncoder> encoder, std::uint64_t projection_seed,
                   int out_dim = kSemanticDim);

  const std::vector<float>& embed(const std::string& text);
  int dim() const { return projection_.spec().out_dim; }
  std::size_t cache_size() const { return memo_.size(); }
  const RandomProjection& projection() const { return projection_; }

 private:
  std::shared_ptr<const TextEncoder> encoder_;
  RandomProjection projection_;
  std::unordered_map<std::string, std::vector<float>> memo_;
};

double cosine(std::span<const float> a, std::span<const float> b);

}  // namespace sembid

#endif  // SEMBID_EMBEDDING_HPP_
