#pragma once

#include <filesystem>
#include <json.hpp>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semmark/encoding.hpp"
#include "semmark/mapper.hpp"
#include "semmark/partition.hpp"
#include "semmark/weighting.hpp"

namespace semmark {

/// Everything the provider needs at serving time. Immutable once built.
struct ProviderBundle {
  EncoderHandle encoder;
  LshPartitioner partitioner;
  MapperModel mapper;
  std::shared_ptr<const LofIndex> lof;  // null when the surrogate set is too small; constant weight then
  WeightConfig weights;
  nlohmann::json config;  // run configuration echo

  std::size_t dim() const noexcept { return partitioner.input_dim(); }
  void validate() const;
};

/// Bundle directory layout.
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kPartitionFile = "partition.json";
inline constexpr const char* kMapperFile = "mapper.json";
inline constexpr const char* kLofFile = "lof.bin";
inline constexpr const char* kWeightsFile = "weights.json";

/// Encoder description stored in config.json under "encoder".
nlohmann::json encoder_to_json(const SyntheticEncoderConfig& cfg);
nlohmann::json encoder_to_json(const RemoteEncoderConfig& cfg);
/// Rebuilds the encoder from its description; remote keys come from
/// `api_key` (or SEMMARK_API_KEY).
EncoderHandle encoder_from_json(const nlohmann::json& j, const std::string& api_key = {});

/// FNV-1a of a file's bytes as 16 hex digits.
std::string file_content_hash(const std::filesystem::path& path);

/// Writes config.json with content hashes of whichever bundle files exist.
void write_bundle_config(const std::filesystem::path& dir, nlohmann::json config);

/// Loads and cross-checks a complete bundle. A non-null `encoder` replaces
/// the one described in config.json (for example an upstream endpoint).
ProviderBundle load_bundle(const std::filesystem::path& dir, EncoderHandle encoder = nullptr,
                           const std::string& api_key = {});
/// Writes all five files.
void save_bundle(const ProviderBundle& bundle, const std::filesystem::path& dir);

struct InjectionTrace {
  RegionId region;
  bool watermarked = false;
  std::optional<double> weight;
  std::optional<double> lof;
  bool degenerate = false;  // mixture collapsed to zero; original returned

  nlohmann::json to_json() const;
};

struct InjectionResult {
  Embedding embedding;
  InjectionTrace trace;
};

struct InjectOptions {
  std::optional<double> weight_override;  // test hook: fixed u instead of the LOF weight
};

/// e_p = normalize((1-u) e_o + u M(e_o)) inside watermark regions, e_o verbatim elsewhere.
InjectionResult inject_embedding(const ProviderBundle& bundle, std::span<const float> e_o, const InjectOptions& opts = {});

InjectionResult process_text(const ProviderBundle& bundle, const std::string& text);

struct BatchOutput {
  Corpus corpus;
  std::vector<InjectionTrace> traces;
};

BatchOutput batch_inject(const ProviderBundle& bundle, const Corpus& originals);
BatchOutput batch_process(const ProviderBundle& bundle, std::span<const std::string> texts);

/// Writes the corpus (.bin -> SMK1, anything else -> JSONL) and a traces.jsonl
/// sidecar in the same directory; returns the sidecar path.
std::filesystem::path write_batch_output(const BatchOutput& out, const std::filesystem::path& path);

/// The provider's public API as an encoder: watermarked outputs.
class ProviderEncoder final : public Encoder {
 public:
  explicit ProviderEncoder(std::shared_ptr<const ProviderBundle> bundle) : bundle_(std::move(bundle)) {}

  EncoderKind kind() const noexcept override { return EncoderKind::Provider; }
  std::size_t dim() const noexcept override { return bundle_->dim(); }
  std::vector<Embedding> encode(std::span<const std::string> texts) const override;

 private:
  std::shared_ptr<const ProviderBundle> bundle_;
};

}  // namespace semmark
