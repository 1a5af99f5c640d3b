#include "semmark/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "semmark/error.hpp"
#include "semmark/rng.hpp"

namespace semmark {

namespace {

void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::DimensionMismatch, std::to_string(a) + " vs " + std::to_string(b));
  }
}

template <typename T>
double dot_impl(std::span<const T> a, std::span<const T> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  require_same_dim(a.size(), b.size());
  double na = std::sqrt(dot_impl(a, a));
  double nb = std::sqrt(dot_impl(b, b));
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return std::clamp(dot_impl(a, b) / (na * nb), -1.0, 1.0);
}

double log_binomial(std::size_t n, std::size_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

// P(D >= d) for the two-sample statistic, where d = d_num / (n1*n2).
// q(i,j) is the fraction of monotone lattice paths from (0,0) to (i,j) that
// stay strictly inside the band |i*n2 - j*n1| < d_num. The p-value is the
// probability mass of paths at their first exit, accumulated in log space so
// tiny p-values keep their relative precision.
double ks_exact_p(std::uint64_t d_num, std::size_t n1, std::size_t n2) {
  const std::size_t n = n1 + n2;
  const double log_total = log_binomial(n, n1);
  auto inside = [&](std::size_t i, std::size_t j) {
    auto a = static_cast<std::int64_t>(i * n2);
    auto b = static_cast<std::int64_t>(j * n1);
    return static_cast<std::uint64_t>(a > b ? a - b : b - a) < d_num;
  };
  auto exit_mass = [&](double q, std::size_t a, std::size_t b, std::size_t i, std::size_t j) {
    if (q <= 0.0) return 0.0;
    return std::exp(std::log(q) + log_binomial(a + b, a) + log_binomial(n - i - j, n1 - i) - log_total);
  };

  std::vector<double> prev(n2 + 1, 0.0);
  std::vector<double> cur(n2 + 1, 0.0);
  double p = 0.0;
  for (std::size_t i = 0; i <= n1; ++i) {
    for (std::size_t j = 0; j <= n2; ++j) {
      if (i == 0 && j == 0) {
        cur[0] = 1.0;
        continue;
      }
      double from_up = i > 0 ? prev[j] : 0.0;
      double from_left = j > 0 ? cur[j - 1] : 0.0;
      if (!inside(i, j)) {
        if (i > 0) p += exit_mass(from_up, i - 1, j, i, j);
        if (j > 0) p += exit_mass(from_left, i, j - 1, i, j);
        cur[j] = 0.0;
        continue;
      }
      double di = static_cast<double>(i);
      double dj = static_cast<double>(j);
      cur[j] = (from_up * di + from_left * dj) / (di + dj);
    }
    std::swap(prev, cur);
  }
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

DenseMatrix DenseMatrix::from_rows(std::span<const Embedding> rows) {
  if (rows.empty()) return {};
  DenseMatrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_same_dim(rows[r].size(), m.cols());
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

DenseMatrix DenseMatrix::from_eigen(const Eigen::MatrixXd& e) {
  DenseMatrix m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  for (Eigen::Index r = 0; r < e.rows(); ++r)
    for (Eigen::Index c = 0; c < e.cols(); ++c)
      m(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(e(r, c));
  return m;
}

Eigen::MatrixXd DenseMatrix::to_eigen() const {
  Eigen::MatrixXd e(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) e(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (*this)(r, c);
  return e;
}

void DenseMatrix::check_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw Error(ErrorCode::NonFinite, "entry (" + std::to_string(i / cols_) + ", " + std::to_string(i % cols_) + ")");
    }
  }
}

PcaModel fit_pca(const DenseMatrix& data, std::size_t target_dim) {
  if (target_dim == 0 || target_dim > data.cols()) {
    throw Error(ErrorCode::InvalidArgument, "target_dim must be in [1, cols]");
  }
  if (data.rows() < target_dim) {
    throw Error(ErrorCode::InsufficientSamples,
                std::to_string(data.rows()) + " rows for target_dim " + std::to_string(target_dim));
  }
  data.check_finite();

  Eigen::MatrixXd x = data.to_eigen();
  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  x.rowwise() -= model.mean.transpose();

  const double denom = data.rows() > 1 ? static_cast<double>(data.rows() - 1) : 1.0;
  model.total_variance = x.squaredNorm() / denom;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const auto k = static_cast<Eigen::Index>(target_dim);
  model.components = svd.matrixV().leftCols(k).transpose();
  model.explained_variance = svd.singularValues().head(k).array().square() / denom;

  for (Eigen::Index r = 0; r < model.components.rows(); ++r) {
    Eigen::Index arg = 0;
    model.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (model.components(r, arg) < 0.0) model.components.row(r) *= -1.0;
  }
  return model;
}

std::vector<double> pca_transform(const PcaModel& model, std::span<const float> v) {
  require_same_dim(v.size(), model.input_dim());
  Eigen::VectorXd centered(model.mean.size());
  for (Eigen::Index i = 0; i < centered.size(); ++i) centered(i) = static_cast<double>(v[static_cast<std::size_t>(i)]) - model.mean(i);
  Eigen::VectorXd out = model.components * centered;
  return {out.data(), out.data() + out.size()};
}

std::vector<double> pca_reconstruct(const PcaModel& model, std::span<const double> reduced) {
  require_same_dim(reduced.size(), model.output_dim());
  Eigen::Map<const Eigen::VectorXd> z(reduced.data(), static_cast<Eigen::Index>(reduced.size()));
  Eigen::VectorXd out = model.components.transpose() * z + model.mean;
  return {out.data(), out.data() + out.size()};
}

double dot(std::span<const float> a, std::span<const float> b) {
  require_same_dim(a.size(), b.size());
  return dot_impl(a, b);
}

double norm(std::span<const float> v) { return std::sqrt(dot_impl(v, v)); }

Embedding l2_normalize(std::span<const float> v) {
  double n = norm(v);
  if (n == 0.0 || !std::isfinite(n)) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(static_cast<double>(v[i]) / n);
  return out;
}

std::vector<double> l2_normalize(std::span<const double> v) {
  double n = std::sqrt(dot_impl(v, v));
  if (n == 0.0 || !std::isfinite(n)) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
double cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }

double sq_l2_unit(std::span<const float> a, std::span<const float> b) {
  require_same_dim(a.size(), b.size());
  double na = norm(a);
  double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "sq_l2_unit of a zero vector");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) / na - static_cast<double>(b[i]) / nb;
    s += d * d;
  }
  return s;
}

double ks_asymptotic_p(double statistic, std::size_t n1, std::size_t n2) {
  const double ne = static_cast<double>(n1) * static_cast<double>(n2) / static_cast<double>(n1 + n2);
  const double en = std::sqrt(ne);
  const double lambda = (en + 0.12 + 0.11 / en) * statistic;
  if (lambda < 1e-6) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k < 100000; ++k) {
    double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-12) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() < 2 || ys.size() < 2) {
    throw Error(ErrorCode::InsufficientSamples, "KS test needs at least 2 samples per side");
  }
  std::vector<double> a(xs.begin(), xs.end());
  std::vector<double> b(ys.begin(), ys.end());
  for (double v : a)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "KS sample");
  for (double v : b)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "KS sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());

  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();
  // Track D scaled by n1*n2 so the exact p-value can use integer comparisons.
  std::uint64_t d_num = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n1 && j < n2) {
    double v = std::min(a[i], b[j]);
    while (i < n1 && a[i] == v) ++i;
    while (j < n2 && b[j] == v) ++j;
    auto lhs = static_cast<std::int64_t>(i * n2);
    auto rhs = static_cast<std::int64_t>(j * n1);
    d_num = std::max(d_num, static_cast<std::uint64_t>(lhs > rhs ? lhs - rhs : rhs - lhs));
  }

  KsResult result;
  result.n1 = n1;
  result.n2 = n2;
  result.statistic = static_cast<double>(d_num) / (static_cast<double>(n1) * static_cast<double>(n2));
  if (static_cast<std::uint64_t>(n1) * n2 <= kKsExactLimit) {
    result.p_value = ks_exact_p(d_num, n1, n2);
    result.exact = true;
  } else {
    result.p_value = ks_asymptotic_p(result.statistic, n1, n2);
  }
  return result;
}

LeastSquaresResult least_squares_map(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "X and Y must have the same number of rows");
  }
  if (x.rows() < x.cols()) {
    throw Error(ErrorCode::InsufficientSamples, "least squares needs rows >= cols of X");
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  LeastSquaresResult out;
  out.map = svd.solve(y);
  out.rank = svd.rank();
  out.rank_deficient = out.rank < x.cols();
  if (out.rank_deficient) {
    warn("least_squares_map: X is rank deficient (rank " + std::to_string(out.rank) + " of " +
         std::to_string(x.cols()) + "); using the minimum-norm solution");
  }
  return out;
}

LeastSquaresResult least_squares_map(const DenseMatrix& x, const DenseMatrix& y) {
  return least_squares_map(x.to_eigen(), y.to_eigen());
}

KMeansResult kmeans(const DenseMatrix& data, std::size_t k, std::size_t iters, std::uint64_t seed) {
  const std::size_t n = data.rows();
  if (k == 0 || k > n) throw Error(ErrorCode::TooFewPoints, "k-means needs 1 <= k <= rows");
  if (iters == 0) throw Error(ErrorCode::InvalidArgument, "k-means needs iters >= 1");

  const Eigen::MatrixXd x = data.to_eigen();
  Rng rng(seed);
  KMeansResult out;
  out.centroids.resize(static_cast<Eigen::Index>(k), x.cols());

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  out.centroids.row(0) = x.row(static_cast<Eigen::Index>(first));
  chosen[first] = true;
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = (x.row(static_cast<Eigen::Index>(i)) - out.centroids.row(static_cast<Eigen::Index>(c - 1))).squaredNorm();
      d2[i] = std::min(d2[i], d);
      total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > r && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    if (pick == n) {
      // Remaining mass is zero (duplicates) or lost to rounding: take any unchosen point.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) rest.push_back(i);
      pick = rest[static_cast<std::size_t>(rng.below(rest.size()))];
    }
    chosen[pick] = true;
    out.centroids.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(pick));
  }

  out.assignments.assign(n, 0);
  std::vector<std::size_t> previous;
  for (std::size_t it = 0; it < iters; ++it) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        double d = (x.row(static_cast<Eigen::Index>(i)) - out.centroids.row(static_cast<Eigen::Index>(c))).squaredNorm();
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      out.assignments[i] = arg;
      inertia += best;
    }
    out.inertia_trace.push_back(inertia);
    if (out.assignments == previous) break;
    previous = out.assignments;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(out.assignments[i])) += x.row(static_cast<Eigen::Index>(i));
      ++counts[out.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) out.centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
    }
  }
  return out;
}

}  // namespace semmark
