#include "semmark/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semmark/error.hpp"
#include "semmark/json_io.hpp"
#include "semmark/rng.hpp"

namespace semmark {

using json = nlohmann::json;

LshPartitioner::LshPartitioner(PcaModel pca, Eigen::MatrixXd hyperplanes, std::vector<bool> watermark_bitmap,
                               double alpha, std::uint64_t seed)
    : pca_(std::move(pca)), hyperplanes_(std::move(hyperplanes)), bitmap_(std::move(watermark_bitmap)), alpha_(alpha), seed_(seed) {
  if (hyperplanes_.rows() < 1 || static_cast<std::size_t>(hyperplanes_.rows()) > kMaxBits) {
    throw Error(ErrorCode::InvalidArgument, "LSH needs between 1 and 20 hyperplanes");
  }
  if (static_cast<std::size_t>(hyperplanes_.cols()) != pca_.output_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "hyperplane width must equal the PCA output dimension");
  }
  if (!hyperplanes_.allFinite()) throw Error(ErrorCode::NonFinite, "hyperplanes");
  if (bitmap_.size() != region_count()) throw Error(ErrorCode::InvalidArgument, "bitmap must have 2^c entries");
}

RegionId LshPartitioner::region_of(std::span<const float> embedding) const {
  const auto reduced = pca_transform(pca_, embedding);
  Eigen::Map<const Eigen::VectorXd> z(reduced.data(), static_cast<Eigen::Index>(reduced.size()));
  std::uint32_t code = 0;
  for (Eigen::Index i = 0; i < hyperplanes_.rows(); ++i) {
    code = (code << 1) | (hyperplanes_.row(i).dot(z) > 0.0 ? 1u : 0u);
  }
  return RegionId{code};
}

bool LshPartitioner::is_watermark_region(RegionId rid) const { return rid.code < bitmap_.size() && bitmap_[rid.code]; }

std::size_t LshPartitioner::watermark_region_count() const noexcept {
  return static_cast<std::size_t>(std::count(bitmap_.begin(), bitmap_.end(), true));
}

json LshPartitioner::to_json() const {
  json j;
  j["h_prime"] = reduced_dim();
  j["c"] = bits();
  j["alpha"] = alpha_;
  j["seed"] = seed_;
  j["pca"] = pca_to_json(pca_);
  j["hyperplanes"] = matrix_to_json(hyperplanes_);
  j["bitmap_hex"] = bitmap_to_hex(bitmap_);
  j["watermark_regions"] = watermark_region_count();
  return j;
}

LshPartitioner LshPartitioner::from_json(const json& j) {
  try {
    PcaModel pca = pca_from_json(j.at("pca"));
    Eigen::MatrixXd hyper = matrix_from_json(j.at("hyperplanes"));
    const auto c = j.at("c").get<std::size_t>();
    if (static_cast<std::size_t>(hyper.rows()) != c) throw Error(ErrorCode::ParseError, "partition: c does not match hyperplanes");
    return LshPartitioner(std::move(pca), std::move(hyper), bitmap_from_hex(j.at("bitmap_hex").get<std::string>(), c),
                          j.at("alpha").get<double>(), j.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("partition.json: ") + e.what());
  }
}

LshPartitioner fit_partitioner(const Corpus& surrogate, std::size_t h_prime, std::size_t c, double alpha, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::BadAlpha, "alpha must be in (0, 1), got " + std::to_string(alpha));
  if (c < 1 || c > LshPartitioner::kMaxBits) throw Error(ErrorCode::InvalidArgument, "c must be in [1, 20]");
  if (surrogate.size() < h_prime) {
    throw Error(ErrorCode::InsufficientSamples, "surrogate has " + std::to_string(surrogate.size()) + " rows, need >= h' = " +
                                                    std::to_string(h_prime));
  }
  PcaModel pca = fit_pca(surrogate.matrix(), h_prime);

  Rng plane_rng(derive_seed(seed, "lsh/hyperplanes"));
  Eigen::MatrixXd hyper(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(h_prime));
  for (Eigen::Index r = 0; r < hyper.rows(); ++r)
    for (Eigen::Index k = 0; k < hyper.cols(); ++k) hyper(r, k) = plane_rng.normal();

  const std::size_t regions = std::size_t{1} << c;
  const auto selected = static_cast<std::size_t>(std::llround(alpha * static_cast<double>(regions)));
  std::vector<std::size_t> order(regions);
  std::iota(order.begin(), order.end(), 0);
  Rng region_rng(derive_seed(seed, "lsh/regions"));
  for (std::size_t i = 0; i < selected; ++i) {
    std::size_t j = i + static_cast<std::size_t>(region_rng.below(regions - i));
    std::swap(order[i], order[j]);
  }
  std::vector<bool> bitmap(regions, false);
  for (std::size_t i = 0; i < selected; ++i) bitmap[order[i]] = true;

  return LshPartitioner(std::move(pca), std::move(hyper), std::move(bitmap), alpha, seed);
}

std::vector<std::size_t> region_histogram(const LshPartitioner& p, const Corpus& corpus) {
  std::vector<std::size_t> counts(p.region_count(), 0);
  if (corpus.empty()) return counts;
  if (corpus.dim() != p.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "corpus dim " + std::to_string(corpus.dim()) + " vs partitioner dim " +
                                                  std::to_string(p.input_dim()));
  }
  for (const auto& r : corpus) ++counts[p.region_of(r.vec).code];
  return counts;
}

std::string bitmap_to_hex(const std::vector<bool>& bitmap) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string hex((bitmap.size() + 3) / 4, '0');
  for (std::size_t k = 0; k < hex.size(); ++k) {
    unsigned nibble = 0;
    for (std::size_t b = 0; b < 4 && 4 * k + b < bitmap.size(); ++b)
      if (bitmap[4 * k + b]) nibble |= 1u << b;
    hex[k] = kDigits[nibble];
  }
  return hex;
}

std::vector<bool> bitmap_from_hex(const std::string& hex, std::size_t bits) {
  const std::size_t regions = std::size_t{1} << bits;
  if (hex.size() != (regions + 3) / 4) throw Error(ErrorCode::ParseError, "bitmap hex has the wrong length");
  std::vector<bool> bitmap(regions, false);
  for (std::size_t k = 0; k < hex.size(); ++k) {
    char ch = hex[k];
    unsigned nibble = 0;
    if (ch >= '0' && ch <= '9') nibble = static_cast<unsigned>(ch - '0');
    else if (ch >= 'a' && ch <= 'f') nibble = static_cast<unsigned>(ch - 'a' + 10);
    else if (ch >= 'A' && ch <= 'F') nibble = static_cast<unsigned>(ch - 'A' + 10);
    else throw Error(ErrorCode::ParseError, "bad hex digit in bitmap");
    for (std::size_t b = 0; b < 4; ++b) {
      if (!(nibble & (1u << b))) continue;
      if (4 * k + b >= regions) throw Error(ErrorCode::ParseError, "bitmap sets a region beyond 2^c");
      bitmap[4 * k + b] = true;
    }
  }
  return bitmap;
}

json pca_to_json(const PcaModel& pca) {
  json j;
  j["mean"] = vector_to_json(pca.mean);
  j["components"] = matrix_to_json(pca.components);
  j["explained_variance"] = vector_to_json(pca.explained_variance);
  j["total_variance"] = pca.total_variance;
  return j;
}

PcaModel pca_from_json(const json& j) {
  PcaModel pca;
  pca.mean = vector_from_json(j.at("mean"));
  pca.components = matrix_from_json(j.at("components"), pca.mean.size());
  pca.explained_variance = vector_from_json(j.at("explained_variance"));
  pca.total_variance = j.value("total_variance", 0.0);
  if (pca.components.rows() > 0 && pca.components.cols() != pca.mean.size()) {
    throw Error(ErrorCode::ParseError, "PCA components width does not match mean");
  }
  return pca;
}

}  // namespace semmark
