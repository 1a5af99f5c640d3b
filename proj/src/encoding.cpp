#include "semmark/encoding.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "semmark/error.hpp"
#include "semmark/rng.hpp"

namespace semmark {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'S', 'M', 'K', '1'};
constexpr std::uint16_t kBinaryVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const noexcept { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::TruncatedFile, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                                                ", file has " + std::to_string(bytes_.size()));
    }
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

void append_float(std::string& out, float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

}  // namespace

void Corpus::append(EmbeddingRecord record) {
  if (records_.empty() && dim_ == 0) {
    dim_ = record.vec.size();
  } else if (record.vec.size() != dim_) {
    throw Error(ErrorCode::DimensionMismatch, "record '" + record.id + "' has dim " + std::to_string(record.vec.size()) +
                                                  ", corpus dim is " + std::to_string(dim_));
  }
  for (float v : record.vec)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "record '" + record.id + "'");
  if (!ids_.insert(record.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate id '" + record.id + "'");
  records_.push_back(std::move(record));
}

DenseMatrix Corpus::matrix() const {
  DenseMatrix m(records_.size(), dim_);
  for (std::size_t r = 0; r < records_.size(); ++r) std::copy(records_[r].vec.begin(), records_[r].vec.end(), m.row(r).begin());
  return m;
}

std::vector<Embedding> Corpus::vectors() const {
  std::vector<Embedding> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.vec);
  return out;
}

Corpus Corpus::from_vectors(std::span<const Embedding> vecs, std::span<const std::string> texts) {
  if (!texts.empty() && texts.size() != vecs.size()) throw Error(ErrorCode::InvalidArgument, "texts/vectors length mismatch");
  Corpus c;
  c.reserve(vecs.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    EmbeddingRecord r{std::to_string(i), std::nullopt, vecs[i]};
    if (!texts.empty()) r.text = texts[i];
    c.append(std::move(r));
  }
  return c;
}

std::size_t enforce_unit_norm(Corpus& corpus, double tolerance) {
  std::size_t touched = 0;
  Corpus fixed;
  fixed.reserve(corpus.size());
  for (const auto& r : corpus) {
    EmbeddingRecord copy = r;
    if (std::abs(norm(copy.vec) - 1.0) > tolerance) {
      copy.vec = l2_normalize(copy.vec);
      ++touched;
    }
    fixed.append(std::move(copy));
  }
  if (touched > 0) warn(std::to_string(touched) + " input embeddings were not unit-norm and were normalized");
  corpus = std::move(fixed);
  return touched;
}

Corpus load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    EmbeddingRecord rec;
    try {
      json j = json::parse(line);
      rec.id = j.at("id").get<std::string>();
      if (auto it = j.find("text"); it != j.end() && !it->is_null()) rec.text = it->get<std::string>();
      rec.vec = j.at("vec").get<std::vector<float>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!corpus.empty() && rec.vec.size() != corpus.dim()) {
      throw Error(ErrorCode::DimensionMismatch, path.string() + ":" + std::to_string(lineno) + ": dim " +
                                                    std::to_string(rec.vec.size()) + ", expected " + std::to_string(corpus.dim()));
    }
    try {
      corpus.append(std::move(rec));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return corpus;
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path);
  std::string line;
  for (const auto& r : corpus) {
    line.clear();
    line += "{\"id\":";
    line += json(r.id).dump();
    if (r.text) {
      line += ",\"text\":";
      line += json(*r.text).dump();
    }
    line += ",\"vec\":[";
    for (std::size_t i = 0; i < r.vec.size(); ++i) {
      if (i) line += ',';
      append_float(line, r.vec[i]);
    }
    line += "]}\n";
    out << line;
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

void save_binary(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out.write(kMagic, 4);
  put_le<std::uint16_t>(out, kBinaryVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.dim()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(corpus.size()));
  for (const auto& r : corpus)
    for (float v : r.vec) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  for (const auto& r : corpus) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.id.size()));
    out.write(r.id.data(), static_cast<std::streamsize>(r.id.size()));
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

Corpus load_binary(const std::filesystem::path& path) {
  ByteReader in(read_all(path));
  std::string magic = in.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw Error(ErrorCode::BadMagic, path.string() + " is not an SMK1 file");
  auto version = in.le<std::uint16_t>();
  if (version != kBinaryVersion) throw Error(ErrorCode::ParseError, "unsupported SMK version " + std::to_string(version));
  auto dim = in.le<std::uint32_t>();
  auto count = in.le<std::uint64_t>();

  std::vector<Embedding> vecs(count, Embedding(dim));
  for (auto& v : vecs)
    for (auto& x : v) x = std::bit_cast<float>(in.le<std::uint32_t>());

  Corpus corpus;
  corpus.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto len = in.le<std::uint32_t>();
    corpus.append({in.take(len), std::nullopt, std::move(vecs[i])});
  }
  return corpus;
}

std::vector<std::string> load_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    lines.push_back(line);
  }
  return lines;
}

void save_lines(std::span<const std::string> lines, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::uint64_t token_multiset_hash(std::string_view text) {
  auto tokens = tokenize(text);
  std::sort(tokens.begin(), tokens.end());
  std::string joined;
  for (const auto& t : tokens) {
    joined += t;
    joined += '\x1f';
  }
  return fnv1a64(joined);
}

std::string_view to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::Synthetic: return "synthetic";
    case EncoderKind::Remote: return "remote";
    case EncoderKind::Imitator: return "imitator";
    case EncoderKind::Provider: return "provider";
    case EncoderKind::DetectSampling: return "detect-sampling";
    case EncoderKind::Aligned: return "aligned";
  }
  return "unknown";
}

Embedding Encoder::encode_one(const std::string& text) const {
  auto out = encode(std::span<const std::string>(&text, 1));
  return std::move(out.front());
}

void SyntheticEncoderConfig::validate() const {
  if (dim < 8) throw Error(ErrorCode::InvalidArgument, "synthetic encoder dim must be >= 8");
  if (topics == 0) throw Error(ErrorCode::InvalidArgument, "synthetic encoder needs at least one topic");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw Error(ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
}

SyntheticEncoder::SyntheticEncoder(SyntheticEncoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, "synthetic/centroids"));
  centroids_.resize(cfg_.topics * cfg_.dim);
  for (double& c : centroids_) c = rng.normal();
}

std::size_t SyntheticEncoder::topic_of(std::string_view text) const {
  return static_cast<std::size_t>(token_multiset_hash(text) % cfg_.topics);
}

Embedding SyntheticEncoder::encode_text(std::string_view text) const {
  if (tokenize(text).empty()) throw Error(ErrorCode::EmptyText, "text has no tokens");
  const std::uint64_t h = token_multiset_hash(text);
  const std::size_t topic = static_cast<std::size_t>(h % cfg_.topics);
  Rng noise(splitmix64(h ^ derive_seed(cfg_.seed, "synthetic/noise")));
  std::vector<double> v(cfg_.dim);
  const double* centroid = centroids_.data() + topic * cfg_.dim;
  for (std::size_t i = 0; i < cfg_.dim; ++i) v[i] = centroid[i] + cfg_.noise_sigma * noise.normal();
  auto unit = l2_normalize(std::span<const double>(v));
  return Embedding(unit.begin(), unit.end());
}

std::vector<Embedding> SyntheticEncoder::encode(std::span<const std::string> texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode_text(t));
  return out;
}

Embedding synthetic_encode(const SyntheticEncoderConfig& cfg, std::string_view text) {
  return SyntheticEncoder(cfg).encode_text(text);
}

std::string resolve_api_key(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("SEMMARK_API_KEY")) return env;
  return {};
}

}  // namespace semmark
