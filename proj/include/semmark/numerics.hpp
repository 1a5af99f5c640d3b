#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace semmark {

using Embedding = std::vector<float>;

/// Row-major matrix with 32-bit storage. Reductions over it accumulate in
/// double. All entries are expected to be finite; `check_finite` enforces it.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

  static DenseMatrix from_rows(std::span<const Embedding> rows);
  static DenseMatrix from_eigen(const Eigen::MatrixXd& m);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<const float> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<const float> data() const noexcept { return data_; }

  Eigen::MatrixXd to_eigen() const;
  void check_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

struct PcaModel {
  Eigen::VectorXd mean;                // d
  Eigen::MatrixXd components;          // h' x d, orthonormal rows
  Eigen::VectorXd explained_variance;  // h', nonincreasing
  double total_variance = 0.0;         // sum of all per-dimension variances

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(components.rows()); }
};

/// PCA through the SVD of the mean-centered data. Variances use the n-1
/// denominator. Component signs are fixed so the largest-magnitude entry of
/// each row is positive.
PcaModel fit_pca(const DenseMatrix& data, std::size_t target_dim);

std::vector<double> pca_transform(const PcaModel& model, std::span<const float> v);
std::vector<double> pca_reconstruct(const PcaModel& model, std::span<const double> reduced);

Embedding l2_normalize(std::span<const float> v);
std::vector<double> l2_normalize(std::span<const double> v);

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> v);

/// Cosine similarity clamped to [-1, 1].
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const double> a, std::span<const double> b);

/// Squared Euclidean distance between a/|a| and b/|b|.
double sq_l2_unit(std::span<const float> a, std::span<const float> b);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  bool exact = false;
};

/// Two-sample, two-sided Kolmogorov-Smirnov test.
///
/// The p-value is the exact finite-sample probability P(D >= d) under the
/// null (lattice path count) when n1*n2 <= kKsExactLimit, otherwise the
/// asymptotic Kolmogorov series with the (sqrt(ne) + 0.12 + 0.11/sqrt(ne))
/// small-sample factor.
KsResult ks_two_sample(std::span<const double> xs, std::span<const double> ys);

inline constexpr std::uint64_t kKsExactLimit = 4'000'000;

double ks_asymptotic_p(double statistic, std::size_t n1, std::size_t n2);

struct LeastSquaresResult {
  Eigen::MatrixXd map;  // a x b
  Eigen::Index rank = 0;
  bool rank_deficient = false;
};

/// W = pinv(X) * Y, minimising |XW - Y|_F. Rank deficiency is flagged, not fatal.
LeastSquaresResult least_squares_map(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);
LeastSquaresResult least_squares_map(const DenseMatrix& x, const DenseMatrix& y);

struct KMeansResult {
  std::vector<std::size_t> assignments;
  Eigen::MatrixXd centroids;          // k x d
  std::vector<double> inertia_trace;  // one entry per completed Lloyd iteration
};

/// Lloyd's algorithm from a seeded k-means++ start. Stops early once
/// assignments are stable.
KMeansResult kmeans(const DenseMatrix& data, std::size_t k, std::size_t iters, std::uint64_t seed);

}  // namespace semmark
