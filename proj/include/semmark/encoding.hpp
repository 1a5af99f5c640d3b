#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "semmark/numerics.hpp"

namespace semmark {

struct EmbeddingRecord {
  std::string id;
  std::optional<std::string> text;
  Embedding vec;
};

/// Ordered records sharing one dimension, with unique ids. The dimension is
/// undefined (0) until the first record is appended.
class Corpus {
 public:
  Corpus() = default;

  void append(EmbeddingRecord record);
  void reserve(std::size_t n) { records_.reserve(n); }

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t dim() const noexcept { return dim_; }

  const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }
  auto begin() const noexcept { return records_.begin(); }
  auto end() const noexcept { return records_.end(); }

  DenseMatrix matrix() const;
  std::vector<Embedding> vectors() const;

  /// Builds a corpus whose ids are the decimal row index.
  static Corpus from_vectors(std::span<const Embedding> vecs, std::span<const std::string> texts = {});

 private:
  std::vector<EmbeddingRecord> records_;
  std::unordered_set<std::string> ids_;
  std::size_t dim_ = 0;
};

/// Renormalises records whose norm is off by more than `tolerance`, with a
/// warning. Returns how many records were touched.
std::size_t enforce_unit_norm(Corpus& corpus, double tolerance = 1e-3);

Corpus load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Corpus& corpus, const std::filesystem::path& path);

/// "SMK1" | u16 version | u32 dim | u64 count | count*dim f32 | ids (u32 len + bytes).
/// All integers and floats little-endian.
Corpus load_binary(const std::filesystem::path& path);
void save_binary(const Corpus& corpus, const std::filesystem::path& path);

/// Plain text, one item per line; blank lines are skipped.
std::vector<std::string> load_lines(const std::filesystem::path& path);
void save_lines(std::span<const std::string> lines, const std::filesystem::path& path);

/// Lower-cased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Order-insensitive hash of the token multiset.
std::uint64_t token_multiset_hash(std::string_view text);

enum class EncoderKind { Synthetic, Remote, Imitator, Provider, DetectSampling, Aligned };

std::string_view to_string(EncoderKind kind);

class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual EncoderKind kind() const noexcept = 0;
  virtual std::size_t dim() const noexcept = 0;
  virtual std::vector<Embedding> encode(std::span<const std::string> texts) const = 0;

  Embedding encode_one(const std::string& text) const;
};

using EncoderHandle = std::shared_ptr<const Encoder>;

struct SyntheticEncoderConfig {
  std::size_t dim = 64;
  std::size_t topics = 16;
  double noise_sigma = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Topic-centroid encoder: topic = multiset hash mod topics, output =
/// normalize(centroid[topic] + noise_sigma * g). Centroids and g have
/// standard-normal entries; centroids are fixed by cfg.seed and g by
/// (text, cfg.seed).
class SyntheticEncoder final : public Encoder {
 public:
  explicit SyntheticEncoder(SyntheticEncoderConfig cfg);

  EncoderKind kind() const noexcept override { return EncoderKind::Synthetic; }
  std::size_t dim() const noexcept override { return cfg_.dim; }
  std::vector<Embedding> encode(std::span<const std::string> texts) const override;

  Embedding encode_text(std::string_view text) const;
  std::size_t topic_of(std::string_view text) const;
  const SyntheticEncoderConfig& config() const noexcept { return cfg_; }

 private:
  SyntheticEncoderConfig cfg_;
  std::vector<double> centroids_;  // topics x dim
};

Embedding synthetic_encode(const SyntheticEncoderConfig& cfg, std::string_view text);

struct RemoteEncoderConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/v1/embeddings
  std::string api_key;
  std::string model;
  std::size_t dim = 0;  // 0 = unknown until the first response
  std::size_t batch = 128;
  std::size_t max_in_flight = 4;
  int attempts = 3;
  std::chrono::milliseconds backoff{200};
  std::chrono::seconds timeout{30};
};

/// Client for a JSON embeddings endpoint: POST {"input":[...]} and parse
/// {"data":[{"index":i,"embedding":[...]}]}. Records come back in input order.
Corpus remote_encode(const RemoteEncoderConfig& cfg, std::span<const std::string> texts);

class RemoteEncoder final : public Encoder {
 public:
  explicit RemoteEncoder(RemoteEncoderConfig cfg) : cfg_(std::move(cfg)) {}

  EncoderKind kind() const noexcept override { return EncoderKind::Remote; }
  std::size_t dim() const noexcept override { return cfg_.dim; }
  std::vector<Embedding> encode(std::span<const std::string> texts) const override;

  const RemoteEncoderConfig& config() const noexcept { return cfg_; }

 private:
  RemoteEncoderConfig cfg_;
};

/// API key from --api-key, falling back to SEMMARK_API_KEY.
std::string resolve_api_key(const std::string& flag_value);

}  // namespace semmark
