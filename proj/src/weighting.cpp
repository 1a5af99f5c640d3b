#include "semmark/weighting.hpp"

#include <algorithm>
#include <cmath>

#include "semmark/error.hpp"

namespace semmark {

using json = nlohmann::json;

namespace {

double euclidean(const Eigen::VectorXd& a, const Eigen::MatrixXd& points, Eigen::Index row) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.size(); ++c) {
    const double diff = a(c) - points(row, c);
    s += diff * diff;
  }
  return std::sqrt(s);
}

}  // namespace

LofIndex::LofIndex(const DenseMatrix& points, std::size_t k) : k_(k) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "LOF k must be positive");
  if (points.rows() < k + 1) {
    throw Error(ErrorCode::TooFewPoints, "LOF with k=" + std::to_string(k) + " needs at least " + std::to_string(k + 1) +
                                             " points, got " + std::to_string(points.rows()));
  }
  points.check_finite();
  points_ = points.to_eigen();
  const std::size_t n = size();

  std::vector<std::vector<double>> dist(n);
  k_dist_.resize(n);
  neighbors_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Neighborhood nb = neighborhood(points_.row(static_cast<Eigen::Index>(i)).transpose(), i, dist[i]);
    k_dist_[i] = nb.k_distance;
    neighbors_[i] = std::move(nb.members);
  }
  density_.resize(n);
  for (std::size_t i = 0; i < n; ++i) density_[i] = reach_density({neighbors_[i], k_dist_[i]}, dist[i]);
  point_lof_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t o : neighbors_[i]) s += density_[o] / density_[i];
    point_lof_[i] = s / static_cast<double>(neighbors_[i].size());
  }
}

LofIndex::Neighborhood LofIndex::neighborhood(const Eigen::VectorXd& q, std::size_t skip, std::vector<double>& dist) const {
  const std::size_t n = size();
  dist.assign(n, 0.0);
  std::vector<double> others;
  others.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    dist[j] = euclidean(q, points_, static_cast<Eigen::Index>(j));
    if (j != skip) others.push_back(dist[j]);
  }
  std::nth_element(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k_ - 1), others.end());
  Neighborhood nb;
  nb.k_distance = others[k_ - 1];
  for (std::size_t j = 0; j < n; ++j)
    if (j != skip && dist[j] <= nb.k_distance) nb.members.push_back(j);
  return nb;
}

double LofIndex::reach_density(const Neighborhood& nb, const std::vector<double>& dist) const {
  double reach = 0.0;
  for (std::size_t o : nb.members) reach += std::max(k_dist_[o], dist[o]);
  if (reach == 0.0) return kLofDensitySentinel;
  return static_cast<double>(nb.members.size()) / reach;
}

double LofIndex::lof(std::span<const float> q) const {
  if (q.size() != dim()) {
    throw Error(ErrorCode::DimensionMismatch, "LOF query dim " + std::to_string(q.size()) + " vs index dim " + std::to_string(dim()));
  }
  Eigen::VectorXd x(static_cast<Eigen::Index>(q.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!std::isfinite(q[i])) throw Error(ErrorCode::NonFinite, "LOF query");
    x(static_cast<Eigen::Index>(i)) = q[i];
  }
  std::size_t self = size();
  for (std::size_t j = 0; j < size(); ++j) {
    if (euclidean(x, points_, static_cast<Eigen::Index>(j)) == 0.0) {
      self = j;
      break;
    }
  }
  std::vector<double> dist;
  const Neighborhood nb = neighborhood(x, self, dist);
  const double rho = reach_density(nb, dist);
  double s = 0.0;
  for (std::size_t o : nb.members) s += density_[o] / rho;
  return s / static_cast<double>(nb.members.size());
}

LofIndex build_lof_index(const Corpus& surrogate, std::size_t k) { return LofIndex(surrogate.matrix(), k); }

void WeightConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < delta && delta < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "weights need 0 < epsilon < delta < 1");
  }
  if (!(l_min <= l_max) || !std::isfinite(l_min) || !std::isfinite(l_max)) {
    throw Error(ErrorCode::InvalidArgument, "weights need finite l_min <= l_max");
  }
}

json WeightConfig::to_json() const {
  return {{"delta", delta}, {"epsilon", epsilon}, {"l_min", l_min}, {"l_max", l_max}, {"k", k}};
}

WeightConfig WeightConfig::from_json(const json& j) {
  try {
    WeightConfig w;
    w.delta = j.at("delta").get<double>();
    w.epsilon = j.at("epsilon").get<double>();
    w.l_min = j.at("l_min").get<double>();
    w.l_max = j.at("l_max").get<double>();
    w.k = j.at("k").get<std::size_t>();
    w.validate();
    return w;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("weights.json: ") + e.what());
  }
}

WeightConfig fit_weight_bounds(const LofIndex& index, double delta, double epsilon) {
  WeightConfig w;
  w.delta = delta;
  w.epsilon = epsilon;
  w.k = index.k();
  const auto [lo, hi] = std::minmax_element(index.point_lofs().begin(), index.point_lofs().end());
  w.l_min = *lo;
  w.l_max = *hi;
  w.validate();
  return w;
}

double adaptive_weight(double lof_value, const WeightConfig& cfg) {
  if (lof_value > cfg.l_max) return cfg.delta;
  if (lof_value < cfg.l_min) return cfg.delta - cfg.epsilon;
  if (cfg.l_max == cfg.l_min) return cfg.delta - cfg.epsilon / 2.0;
  return cfg.delta - cfg.epsilon + (lof_value - cfg.l_min) / (cfg.l_max - cfg.l_min) * cfg.epsilon;
}

}  // namespace semmark
