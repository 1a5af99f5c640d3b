#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <json.hpp>
#include <span>
#include <vector>

#include "semmark/encoding.hpp"

namespace semmark {

/// x + W2 * tanh(W1 * x + b1) + b2
struct ResidualBlock {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

/// Residual feed-forward watermark mapper: residual blocks followed by an
/// affine layer. Output is not normalized.
struct MapperModel {
  std::vector<ResidualBlock> blocks;
  Eigen::MatrixXd final_w;
  Eigen::VectorXd final_b;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(final_b.size()); }
  std::size_t parameter_count() const noexcept;

  /// Parameters in a fixed order: per block w1 (row-major), b1, w2, b2; then final_w, final_b.
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& params);
  bool all_finite() const;
};

inline constexpr std::size_t kDefaultMapperBlocks = 2;

/// Residual branches zeroed, final layer = identity.
MapperModel identity_mapper(std::size_t dim, std::size_t blocks = kDefaultMapperBlocks);

/// Training start point. W1 ~ N(0, 1/d), W2 = b = 0, and the final layer is
/// eta*I + sqrt(1-eta^2)*J for a seeded skew-symmetric orthogonal J, so that
/// cos(e, M(e)) = eta for every e and pairwise cosines are preserved.
MapperModel init_mapper(std::size_t dim, double eta, std::uint64_t seed, std::size_t blocks = kDefaultMapperBlocks);

/// All parameters i.i.d. N(0, scale^2 / d); final bias included. For tests.
MapperModel random_mapper(std::size_t dim, std::uint64_t seed, double scale = 1.0,
                          std::size_t blocks = kDefaultMapperBlocks);

std::vector<double> mapper_forward(const MapperModel& m, std::span<const float> e);
std::vector<double> mapper_forward(const MapperModel& m, std::span<const double> e);
/// Rows of `x` are inputs; rows of the result are outputs.
Eigen::MatrixXd mapper_forward_batch(const MapperModel& m, const Eigen::MatrixXd& x);

struct MapperTrainConfig {
  double tau = 1.5;
  double eta = 0.5;
  double lambda = 0.5;
  double lr = 1e-5;
  std::size_t epochs = 100;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t blocks = kDefaultMapperBlocks;
  std::size_t xbar_pairs = 10'000;

  void validate() const;
  nlohmann::json to_json() const;
  static MapperTrainConfig from_json(const nlohmann::json& j);
};

/// x + tau * (x - xbar), not clamped.
double phi(double x, double tau, double xbar) noexcept;

/// Mean over unordered pairs of |clamp(phi(cos(e_i, e_j))) - cos(M e_i, M e_j)|.
/// Rows of `batch` are embeddings.
double consistency_loss(const MapperModel& m, const Eigen::MatrixXd& batch, double tau, double xbar);
/// Mean over rows of |eta - cos(e_i, M e_i)|.
double similarity_loss(const MapperModel& m, const Eigen::MatrixXd& batch, double eta);
double total_loss(const MapperModel& m, const Eigen::MatrixXd& batch, const MapperTrainConfig& cfg, double xbar);

struct LossAndGradient {
  double loss = 0.0;
  double consistency = 0.0;
  double similarity = 0.0;
  Eigen::VectorXd gradient;  // same layout as MapperModel::flatten
};

/// Analytic gradient of total_loss by backpropagation. At |.| kinks the
/// subgradient 0 is used.
LossAndGradient loss_and_gradient(const MapperModel& m, const Eigen::MatrixXd& batch, const MapperTrainConfig& cfg,
                                  double xbar);

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// numeric by central differences with step `eps`.
double check_gradients(const MapperModel& m, const Eigen::MatrixXd& batch, const MapperTrainConfig& cfg, double xbar,
                       double eps = 1e-4, double floor = 1e-6);

/// Mean cosine over `pairs` seeded random pairs (i != j).
double estimate_mean_cosine(const DenseMatrix& data, std::size_t pairs, std::uint64_t seed);

struct MapperTrainResult {
  MapperModel model;
  double xbar = 0.0;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

MapperTrainResult train_mapper(const Corpus& corpus, const MapperTrainConfig& cfg);

nlohmann::json mapper_to_json(const MapperModel& m, const nlohmann::json& training = nullptr);
MapperModel mapper_from_json(const nlohmann::json& j);

}  // namespace semmark
