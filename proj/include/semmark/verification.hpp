#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semmark/encoding.hpp"
#include "semmark/provider.hpp"

namespace semmark {

struct VerificationSet {
  std::vector<std::string> watermark_texts;  // originals inside watermark regions
  std::vector<std::string> plain_texts;      // originals outside
  std::size_t m = 0;
};

/// Encodes the pool with the provider's clean encoder, visits it in seeded
/// shuffled order and keeps the first m texts per side. Throws PoolExhausted
/// with the achieved counts when either side stays short.
VerificationSet build_verification_set(std::span<const std::string> pool, const ProviderBundle& bundle, std::size_t m,
                                       std::uint64_t seed);

enum class Verdict { Watermarked, Clean, Inconclusive };
std::string_view to_string(Verdict v);

inline constexpr double kVerdictAlpha = 0.05;

struct VerificationReport {
  double p_value = 1.0;
  double ks_statistic = 0.0;
  bool ks_exact = false;
  double delta_cos = 0.0;
  double delta_l2 = 0.0;
  std::vector<double> cos_w, cos_n;
  std::vector<double> l2_w, l2_n;
  std::size_t n_w = 0, n_n = 0;
  Verdict verdict = Verdict::Inconclusive;
  std::string suspect;  // free-form label

  double delta_cos_x100() const noexcept { return 100.0 * delta_cos; }
  double delta_l2_x100() const noexcept { return 100.0 * delta_l2; }

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Watermarked iff p < 0.05 and delta_cos > 0; clean iff p >= 0.05.
Verdict decide_verdict(double p_value, double delta_cos);

/// Report from precomputed per-side cosines between suspect outputs and
/// watermark signals. delta_l2 follows from the unit-vector identity.
VerificationReport make_report(std::vector<double> cos_w, std::vector<double> cos_n);

struct VerifyOptions {
  std::size_t max_in_flight = 4;
  std::size_t chunk = 128;
  /// Applied to suspect outputs (row vector times matrix) before comparison,
  /// for suspects with a different output dimension.
  std::optional<Eigen::MatrixXd> alignment;
  std::string suspect_label;
};

VerificationReport verify(const VerificationSet& vset, const ProviderBundle& bundle, const Encoder& suspect,
                          const VerifyOptions& opts = {});

/// Suspect outputs for `texts`, queried in chunks with bounded concurrency.
std::vector<Embedding> query_suspect(const Encoder& suspect, std::span<const std::string> texts,
                                     std::size_t max_in_flight = 4, std::size_t chunk = 128);

struct ProbeResult {
  double acc_original = 0.0;
  double acc_watermarked = 0.0;
};

struct ProbeConfig {
  std::size_t epochs = 200;
  double lr = 0.1;
  std::size_t batch = 32;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Trains a multinomial logistic probe on the same seeded 80/20 split of each
/// corpus and reports held-out accuracies.
ProbeResult utility_probe(const Corpus& original, const Corpus& watermarked, std::span<const std::size_t> labels,
                          const ProbeConfig& cfg = {});

}  // namespace semmark
