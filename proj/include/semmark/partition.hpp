#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <vector>

#include "semmark/encoding.hpp"
#include "semmark/numerics.hpp"

namespace semmark {

struct RegionId {
  std::uint32_t code = 0;
  auto operator<=>(const RegionId&) const = default;
};

/// Random-hyperplane LSH over a PCA-reduced space. Bit i of a region code is
/// 1 iff the reduced embedding has a strictly positive dot product with
/// hyperplane i; hyperplane 0 maps to the most significant bit.
class LshPartitioner {
 public:
  static constexpr std::size_t kMaxBits = 20;

  LshPartitioner(PcaModel pca, Eigen::MatrixXd hyperplanes, std::vector<bool> watermark_bitmap, double alpha,
                 std::uint64_t seed);

  RegionId region_of(std::span<const float> embedding) const;
  bool is_watermark_region(RegionId rid) const;
  bool in_watermark_region(std::span<const float> embedding) const { return is_watermark_region(region_of(embedding)); }

  std::size_t input_dim() const noexcept { return pca_.input_dim(); }
  std::size_t reduced_dim() const noexcept { return pca_.output_dim(); }
  std::size_t bits() const noexcept { return static_cast<std::size_t>(hyperplanes_.rows()); }
  std::size_t region_count() const noexcept { return std::size_t{1} << bits(); }
  std::size_t watermark_region_count() const noexcept;
  double alpha() const noexcept { return alpha_; }
  std::uint64_t seed() const noexcept { return seed_; }

  const PcaModel& pca() const noexcept { return pca_; }
  const Eigen::MatrixXd& hyperplanes() const noexcept { return hyperplanes_; }
  const std::vector<bool>& watermark_bitmap() const noexcept { return bitmap_; }

  nlohmann::json to_json() const;
  static LshPartitioner from_json(const nlohmann::json& j);

 private:
  PcaModel pca_;
  Eigen::MatrixXd hyperplanes_;  // c x h'
  std::vector<bool> bitmap_;     // 2^c entries
  double alpha_;
  std::uint64_t seed_;
};

/// Fits PCA on the surrogate set, draws c standard-normal hyperplanes and
/// samples round(alpha * 2^c) watermark regions without replacement.
LshPartitioner fit_partitioner(const Corpus& surrogate, std::size_t h_prime, std::size_t c, double alpha,
                               std::uint64_t seed);

std::vector<std::size_t> region_histogram(const LshPartitioner& p, const Corpus& corpus);

/// Hex encoding of a region bitmap: digit k covers regions 4k..4k+3, region
/// 4k in the least significant bit.
std::string bitmap_to_hex(const std::vector<bool>& bitmap);
std::vector<bool> bitmap_from_hex(const std::string& hex, std::size_t bits);

nlohmann::json pca_to_json(const PcaModel& pca);
PcaModel pca_from_json(const nlohmann::json& j);

}  // namespace semmark
