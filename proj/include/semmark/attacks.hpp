#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "semmark/encoding.hpp"
#include "semmark/numerics.hpp"
#include "semmark/rng.hpp"

namespace semmark {

// ---- Clustering-Selection-Elimination ----

struct CseConfig {
  std::size_t n_clusters = 20;
  std::size_t n_eliminate = 8;
  double suspicious_fraction = 0.5;
  std::size_t kmeans_iters = 100;
  std::uint64_t seed = 0;
  EncoderHandle surrogate;
};

struct CseResult {
  Corpus corpus;                      // cleaned, unit-norm
  Eigen::MatrixXd removed;            // n_eliminate x d, orthonormal rows
  std::vector<double> scores;         // per-sample disparity
  std::vector<std::size_t> suspicious;
};

/// Clusters the victim outputs, scores each sample by its mean disparity
/// |cos(v_i, v_j) - cos(s_i, s_j)| to cluster co-members (s = surrogate
/// embeddings), fits PCA on the most suspicious fraction and projects the top
/// components out of every embedding before renormalizing.
CseResult cse_attack(const Corpus& victim_out, std::span<const std::string> texts, const CseConfig& cfg);

// ---- Dimensionality reduction ----

struct DimAttackResult {
  Corpus corpus;  // d'-dim PCA coordinates
  PcaModel pca;
  double variance_retained = 0.0;
};

DimAttackResult dim_attack(const Corpus& corpus, std::size_t d_prime);

/// w_t = pinv(reduced) * target, fitted on non-verification data.
LeastSquaresResult align_dims(const Corpus& train_reduced, const Corpus& train_target);

/// Maps a reduced-dimension suspect back to the provider dimension.
class AlignedEncoder final : public Encoder {
 public:
  AlignedEncoder(EncoderHandle inner, Eigen::MatrixXd w_t);

  EncoderKind kind() const noexcept override { return EncoderKind::Aligned; }
  std::size_t dim() const noexcept override { return static_cast<std::size_t>(w_.cols()); }
  std::vector<Embedding> encode(std::span<const std::string> texts) const override;

 private:
  EncoderHandle inner_;
  Eigen::MatrixXd w_;
};

// ---- Detect-Sampling ----

struct DetectorFeatures {
  double mean_log_prob = 0.0;
  double bigram_coverage = 0.0;
};

/// Logistic model over two text features fitted to separate natural text from
/// random-token concatenations.
struct DetectorModel {
  std::unordered_map<std::string, double> log_prob;
  double unknown_log_prob = 0.0;
  std::unordered_set<std::string> bigrams;  // "a b"
  double feature_mean[2] = {0.0, 0.0};
  double feature_std[2] = {1.0, 1.0};
  double weights[2] = {0.0, 0.0};
  double bias = 0.0;
  double threshold = 0.5;

  DetectorFeatures features(std::string_view text) const;
  double score(std::string_view text) const;  // in [0, 1]
  bool flags(std::string_view text) const { return score(text) > threshold; }

  nlohmann::json to_json() const;
  static DetectorModel from_json(const nlohmann::json& j);
};

struct DetectorTrainConfig {
  std::size_t steps = 500;
  double lr = 0.5;
  std::uint64_t seed = 0;
  std::size_t min_normal = 1000;
};

/// Random-token text: `length` words drawn uniformly from `vocab`.
std::string random_token_text(std::span<const std::string> vocab, std::size_t length, Rng& rng);

DetectorModel train_detector(std::span<const std::string> normal_texts, std::span<const std::string> vocab,
                             const DetectorTrainConfig& cfg = {});

/// Answers flagged queries with a seeded random unit vector (seeded by the
/// text), everything else is delegated untouched.
class DetectSamplingEncoder final : public Encoder {
 public:
  DetectSamplingEncoder(EncoderHandle suspect, DetectorModel detector, std::uint64_t seed);

  EncoderKind kind() const noexcept override { return EncoderKind::DetectSampling; }
  std::size_t dim() const noexcept override { return suspect_->dim(); }
  std::vector<Embedding> encode(std::span<const std::string> texts) const override;

  const DetectorModel& detector() const noexcept { return detector_; }

 private:
  EncoderHandle suspect_;
  DetectorModel detector_;
  std::uint64_t seed_;
};

EncoderHandle detect_sampling_wrap(EncoderHandle suspect, DetectorModel detector, std::uint64_t seed);

// ---- Imitation ----

/// Affine map from a surrogate encoder's embeddings to victim outputs.
struct ImitatorModel {
  EncoderHandle surrogate;
  nlohmann::json surrogate_spec;  // how to rebuild `surrogate`, when known
  Eigen::MatrixXd w;              // (s + 1) x d, last row is the bias
  bool normalize_output = true;   // set when the training targets were unit-norm
  double training_mse = 0.0;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(w.cols()); }
  std::vector<Embedding> predict(std::span<const std::string> texts) const;

  nlohmann::json to_json() const;
};

/// Rebuilds the surrogate from `surrogate_spec`.
ImitatorModel imitator_from_json(const nlohmann::json& j, const std::string& api_key = {});

ImitatorModel train_imitator(std::span<const std::string> texts, const Corpus& victim_outputs, EncoderHandle surrogate,
                             double ridge = 1e-3);

class ImitatorEncoder final : public Encoder {
 public:
  explicit ImitatorEncoder(ImitatorModel model) : model_(std::move(model)) {}

  EncoderKind kind() const noexcept override { return EncoderKind::Imitator; }
  std::size_t dim() const noexcept override { return model_.dim(); }
  std::vector<Embedding> encode(std::span<const std::string> texts) const override { return model_.predict(texts); }

  const ImitatorModel& model() const noexcept { return model_; }

 private:
  ImitatorModel model_;
};

}  // namespace semmark
