#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace semmark {

/// FNV-1a over raw bytes. Stable across platforms; used for text hashing and
/// content hashes of bundle files.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives an independent stage seed from a global seed and a stage label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) noexcept;

/// Small deterministic generator (splitmix64 stream). The distributions are
/// implemented here rather than through <random> so that draws are identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Standard normal via Box-Muller (the second variate is cached).
  double normal() noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace semmark
