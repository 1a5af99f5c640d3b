#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "semmark/error.hpp"
#include "semmark/partition.hpp"
#include "semmark/textgen.hpp"

using namespace semmark;

namespace {

PcaModel identity_pca(std::size_t d) {
  PcaModel p;
  p.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  p.components = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  p.explained_variance = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d));
  p.total_variance = static_cast<double>(d);
  return p;
}

Corpus synthetic_corpus(std::size_t n, std::uint64_t text_seed, std::uint64_t enc_seed = 0) {
  SyntheticEncoderConfig cfg;
  cfg.seed = enc_seed;
  const SyntheticEncoder enc(cfg);
  const auto texts = generate_sentences(n, text_seed);
  return Corpus::from_vectors(enc.encode(texts), texts);
}

}  // namespace

TEST_CASE("fit: 64 regions with 32 watermarked at c=6, alpha=0.5") {
  const Corpus s = synthetic_corpus(1000, 1);
  const LshPartitioner p = fit_partitioner(s, 6, 6, 0.5, 7);
  CHECK(p.region_count() == 64);
  CHECK(p.watermark_region_count() == 32);
  CHECK(p.reduced_dim() == 6);
  CHECK(p.input_dim() == 64);

  const LshPartitioner q = fit_partitioner(s, 6, 6, 0.5, 7);
  CHECK(q.hyperplanes() == p.hyperplanes());
  CHECK(q.watermark_bitmap() == p.watermark_bitmap());
  const LshPartitioner other = fit_partitioner(s, 6, 6, 0.5, 8);
  CHECK(other.hyperplanes() != p.hyperplanes());
}

TEST_CASE("fit: one of two regions at c=1 and argument errors") {
  const Corpus s = synthetic_corpus(200, 2);
  const LshPartitioner p = fit_partitioner(s, 6, 1, 0.5, 3);
  CHECK(p.watermark_region_count() == 1);
  CHECK(p.is_watermark_region(RegionId{0}) != p.is_watermark_region(RegionId{1}));
  CHECK_THROWS_AS(fit_partitioner(s, 6, 6, 0.0, 3), Error);
  CHECK_THROWS_AS(fit_partitioner(s, 6, 6, 1.5, 3), Error);
  CHECK_THROWS_AS(fit_partitioner(s, 70, 6, 0.5, 3), Error);
  CHECK_THROWS_AS(fit_partitioner(synthetic_corpus(3, 2), 6, 6, 0.5, 3), Error);
}

TEST_CASE("region codes follow the hyperplane signs") {
  Eigen::MatrixXd one(1, 3);
  one << 1, 0, 0;
  const LshPartitioner p1(identity_pca(3), one, {false, true}, 0.5, 0);
  CHECK(p1.region_of(std::vector<float>{0.3f, 0.5f, 0.1f}).code == 1);
  CHECK(p1.region_of(std::vector<float>{0.0f, 0.5f, 0.1f}).code == 0);  // boundary is bit 0
  CHECK(p1.in_watermark_region(std::vector<float>{0.3f, 0.5f, 0.1f}));
  CHECK(!p1.in_watermark_region(std::vector<float>{-0.3f, 0.5f, 0.1f}));

  Eigen::MatrixXd two(2, 2);
  two << 1, 0, 0, 1;
  const LshPartitioner p2(identity_pca(2), two, {true, false, false, false}, 0.25, 0);
  CHECK(p2.region_of(std::vector<float>{-1.0f, 1.0f}).code == 0b01);
  CHECK(p2.region_of(std::vector<float>{1.0f, -1.0f}).code == 0b10);
  CHECK(p2.region_of(std::vector<float>{1.0f, 1.0f}).code == 0b11);
  CHECK_THROWS_AS(p2.region_of(std::vector<float>{1.0f, 1.0f, 1.0f}), Error);
}

TEST_CASE("occupancy of watermark regions on 10000 embeddings") {
  const LshPartitioner p = fit_partitioner(synthetic_corpus(2000, 4), 6, 6, 0.5, 5);
  const Corpus probe = synthetic_corpus(10000, 6);
  std::size_t hits = 0;
  for (const auto& r : probe) hits += p.in_watermark_region(r.vec);
  const double frac = static_cast<double>(hits) / 10000.0;
  CHECK(frac >= 0.35);
  CHECK(frac <= 0.65);
}

TEST_CASE("histogram") {
  const LshPartitioner p = fit_partitioner(synthetic_corpus(300, 7), 6, 6, 0.5, 1);
  const auto empty = region_histogram(p, Corpus{});
  CHECK(empty.size() == 64);
  for (auto c : empty) CHECK(c == 0);
  const Corpus one = synthetic_corpus(1, 8);
  const auto h1 = region_histogram(p, one);
  CHECK(std::count_if(h1.begin(), h1.end(), [](std::size_t c) { return c != 0; }) == 1);
  const auto h = region_histogram(p, synthetic_corpus(1000, 9));
  CHECK(std::accumulate(h.begin(), h.end(), std::size_t{0}) == 1000);
}

TEST_CASE("bitmap hex and json round trip") {
  std::vector<bool> bits(8, false);
  bits[0] = bits[5] = true;
  const std::string hex = bitmap_to_hex(bits);
  CHECK(hex == "12");  // regions 0..3 -> digit 0 (LSB first), 4..7 -> digit 1
  CHECK(bitmap_from_hex(hex, 3) == bits);
  CHECK_THROWS_AS(bitmap_from_hex("1", 3), Error);

  const LshPartitioner p = fit_partitioner(synthetic_corpus(300, 10), 6, 6, 0.5, 2);
  const LshPartitioner back = LshPartitioner::from_json(p.to_json());
  CHECK(back.watermark_bitmap() == p.watermark_bitmap());
  CHECK((back.hyperplanes() - p.hyperplanes()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.pca().components - p.pca().components).cwiseAbs().maxCoeff() == 0.0);
  const Corpus probe = synthetic_corpus(200, 11);
  for (const auto& r : probe) CHECK(back.region_of(r.vec) == p.region_of(r.vec));
}
