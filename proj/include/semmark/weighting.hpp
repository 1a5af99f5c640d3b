#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <json.hpp>
#include <span>
#include <vector>

#include "semmark/encoding.hpp"

namespace semmark {

inline constexpr double kLofDensitySentinel = 1e12;

/// Exact local outlier factor over a fixed point set, Euclidean distance.
/// Neighborhoods include ties at the k-distance, so |N_k(p)| >= k.
class LofIndex {
 public:
  LofIndex(const DenseMatrix& points, std::size_t k);

  std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(points_.cols()); }
  std::size_t k() const noexcept { return k_; }

  double k_distance(std::size_t i) const { return k_dist_.at(i); }
  double density(std::size_t i) const { return density_.at(i); }
  /// LOF of index point i against the other points.
  double point_lof(std::size_t i) const { return point_lof_.at(i); }
  const std::vector<double>& point_lofs() const noexcept { return point_lof_; }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return neighbors_.at(i); }

  /// LOF of an arbitrary query. One exact match of q in the index (distance
  /// 0) is treated as q itself and excluded.
  double lof(std::span<const float> q) const;

  const Eigen::MatrixXd& points() const noexcept { return points_; }

 private:
  struct Neighborhood {
    std::vector<std::size_t> members;
    double k_distance = 0.0;
  };
  // Distances from `q` to every point, with `skip` (if < size) excluded.
  Neighborhood neighborhood(const Eigen::VectorXd& q, std::size_t skip, std::vector<double>& dist) const;
  double reach_density(const Neighborhood& nb, const std::vector<double>& dist) const;

  Eigen::MatrixXd points_;  // n x d
  std::size_t k_;
  std::vector<double> k_dist_;
  std::vector<double> density_;
  std::vector<double> point_lof_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

LofIndex build_lof_index(const Corpus& surrogate, std::size_t k);

struct WeightConfig {
  double delta = 0.30;
  double epsilon = 0.05;
  double l_min = 1.0;
  double l_max = 1.0;
  std::size_t k = 50;

  void validate() const;
  nlohmann::json to_json() const;
  static WeightConfig from_json(const nlohmann::json& j);
};

/// l_min / l_max from the LOF values of the index points themselves.
WeightConfig fit_weight_bounds(const LofIndex& index, double delta = 0.30, double epsilon = 0.05);

/// Piecewise-linear weight in [delta - epsilon, delta], nondecreasing in lof.
/// Degenerate bounds (l_min == l_max) give delta - epsilon / 2.
double adaptive_weight(double lof_value, const WeightConfig& cfg);

}  // namespace semmark
