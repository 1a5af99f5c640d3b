#include "semmark/attacks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "semmark/error.hpp"
#include "semmark/json_io.hpp"
#include "semmark/provider.hpp"

namespace semmark {

using json = nlohmann::json;

namespace {

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (!(n > 0.0)) throw Error(ErrorCode::ZeroVector, "zero embedding at row " + std::to_string(r));
    out.row(r) /= n;
  }
  return out;
}

Corpus corpus_like(const Corpus& ids_from, const Eigen::MatrixXd& rows) {
  Corpus out;
  out.reserve(ids_from.size());
  for (std::size_t i = 0; i < ids_from.size(); ++i) {
    Embedding v(static_cast<std::size_t>(rows.cols()));
    for (Eigen::Index c = 0; c < rows.cols(); ++c) v[static_cast<std::size_t>(c)] = static_cast<float>(rows(static_cast<Eigen::Index>(i), c));
    out.append({ids_from[i].id, ids_from[i].text, std::move(v)});
  }
  return out;
}

Eigen::MatrixXd to_matrix(const std::vector<Embedding>& rows) { return DenseMatrix::from_rows(rows).to_eigen(); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

CseResult cse_attack(const Corpus& victim_out, std::span<const std::string> texts, const CseConfig& cfg) {
  if (victim_out.size() != texts.size()) throw Error(ErrorCode::DimensionMismatch, "CSE needs one text per victim embedding");
  if (!cfg.surrogate) throw Error(ErrorCode::InvalidArgument, "CSE needs a surrogate encoder");
  if (!(cfg.suspicious_fraction > 0.0 && cfg.suspicious_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "suspicious_fraction must be in (0, 1]");
  }
  const std::size_t n = victim_out.size();
  if (n < cfg.n_clusters || n < 2) throw Error(ErrorCode::TooFewPoints, "CSE needs at least n_clusters embeddings");
  const std::size_t d = victim_out.dim();
  if (cfg.n_eliminate >= d) throw Error(ErrorCode::InvalidArgument, "n_eliminate must be < d");

  const DenseMatrix victim = victim_out.matrix();
  const Eigen::MatrixXd v = unit_rows(victim.to_eigen());
  const KMeansResult clusters = kmeans(victim, cfg.n_clusters, cfg.kmeans_iters, derive_seed(cfg.seed, "cse/kmeans"));
  const Eigen::MatrixXd s = unit_rows(to_matrix(cfg.surrogate->encode(texts)));

  CseResult result;
  result.scores.assign(n, 0.0);
  std::vector<std::vector<std::size_t>> members(cfg.n_clusters);
  for (std::size_t i = 0; i < n; ++i) members[clusters.assignments[i]].push_back(i);
  for (const auto& group : members) {
    if (group.size() < 2) continue;
    for (std::size_t a : group) {
      double sum = 0.0;
      for (std::size_t b : group) {
        if (a == b) continue;
        const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
        sum += std::abs(v.row(ia).dot(v.row(ib)) - s.row(ia).dot(s.row(ib)));
      }
      result.scores[a] = sum / static_cast<double>(group.size() - 1);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return result.scores[a] > result.scores[b]; });
  auto keep = static_cast<std::size_t>(std::ceil(cfg.suspicious_fraction * static_cast<double>(n)));
  keep = std::clamp<std::size_t>(keep, std::max<std::size_t>(cfg.n_eliminate, 2), n);
  result.suspicious.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));

  Eigen::MatrixXd out = v;
  if (cfg.n_eliminate > 0) {
    std::vector<Embedding> sus;
    sus.reserve(keep);
    for (std::size_t i : result.suspicious) sus.push_back(victim_out[i].vec);
    const PcaModel pca = fit_pca(DenseMatrix::from_rows(sus), cfg.n_eliminate);
    result.removed = pca.components;
    out = v - (v * result.removed.transpose()) * result.removed;
    out = unit_rows(out);
  } else {
    result.removed.resize(0, static_cast<Eigen::Index>(d));
  }
  result.corpus = corpus_like(victim_out, out);
  return result;
}

DimAttackResult dim_attack(const Corpus& corpus, std::size_t d_prime) {
  const std::size_t d = corpus.dim();
  if (d_prime == 0 || d_prime >= d) {
    throw Error(ErrorCode::BadDim, "d' must satisfy 0 < d' < d = " + std::to_string(d) + ", got " + std::to_string(d_prime));
  }
  DimAttackResult r;
  r.pca = fit_pca(corpus.matrix(), d_prime);
  r.variance_retained = r.pca.total_variance > 0.0 ? r.pca.explained_variance.sum() / r.pca.total_variance : 1.0;
  r.corpus.reserve(corpus.size());
  for (const auto& rec : corpus) {
    const auto z = pca_transform(r.pca, rec.vec);
    r.corpus.append({rec.id, rec.text, Embedding(z.begin(), z.end())});
  }
  return r;
}

LeastSquaresResult align_dims(const Corpus& train_reduced, const Corpus& train_target) {
  if (train_reduced.size() != train_target.size()) throw Error(ErrorCode::DimensionMismatch, "alignment corpora must be row-aligned");
  if (train_reduced.size() < train_reduced.dim()) {
    throw Error(ErrorCode::InsufficientSamples, "alignment needs at least d' rows");
  }
  return least_squares_map(train_reduced.matrix(), train_target.matrix());
}

AlignedEncoder::AlignedEncoder(EncoderHandle inner, Eigen::MatrixXd w_t) : inner_(std::move(inner)), w_(std::move(w_t)) {
  if (!inner_) throw Error(ErrorCode::InvalidArgument, "aligned encoder needs an inner encoder");
  if (inner_->dim() != 0 && inner_->dim() != static_cast<std::size_t>(w_.rows())) {
    throw Error(ErrorCode::DimensionMismatch, "alignment rows must equal the suspect dimension");
  }
}

std::vector<Embedding> AlignedEncoder::encode(std::span<const std::string> texts) const {
  auto raw = inner_->encode(texts);
  std::vector<Embedding> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    if (static_cast<Eigen::Index>(r.size()) != w_.rows()) throw Error(ErrorCode::DimensionMismatch, "suspect output dim vs alignment");
    Eigen::RowVectorXd x(w_.rows());
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = r[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd y = x * w_;
    out.emplace_back(y.data(), y.data() + y.size());
  }
  return out;
}

DetectorFeatures DetectorModel::features(std::string_view text) const {
  const auto tokens = tokenize(text);
  DetectorFeatures f;
  if (tokens.empty()) {
    f.mean_log_prob = unknown_log_prob;
    return f;
  }
  double lp = 0.0;
  for (const auto& t : tokens) {
    auto it = log_prob.find(t);
    lp += it == log_prob.end() ? unknown_log_prob : it->second;
  }
  f.mean_log_prob = lp / static_cast<double>(tokens.size());
  if (tokens.size() > 1) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) hits += bigrams.count(tokens[i] + ' ' + tokens[i + 1]);
    f.bigram_coverage = static_cast<double>(hits) / static_cast<double>(tokens.size() - 1);
  }
  return f;
}

double DetectorModel::score(std::string_view text) const {
  const DetectorFeatures f = features(text);
  const double z0 = (f.mean_log_prob - feature_mean[0]) / feature_std[0];
  const double z1 = (f.bigram_coverage - feature_mean[1]) / feature_std[1];
  return sigmoid(weights[0] * z0 + weights[1] * z1 + bias);
}

json DetectorModel::to_json() const {
  json lp = json::object();
  for (const auto& [w, v] : log_prob) lp[w] = v;
  std::vector<std::string> bg(bigrams.begin(), bigrams.end());
  std::sort(bg.begin(), bg.end());
  return {{"format", "semmark-detector"},
          {"log_prob", lp},
          {"unknown_log_prob", unknown_log_prob},
          {"bigrams", bg},
          {"feature_mean", {feature_mean[0], feature_mean[1]}},
          {"feature_std", {feature_std[0], feature_std[1]}},
          {"weights", {weights[0], weights[1]}},
          {"bias", bias},
          {"threshold", threshold}};
}

DetectorModel DetectorModel::from_json(const json& j) {
  try {
    DetectorModel m;
    for (const auto& [w, v] : j.at("log_prob").items()) m.log_prob[w] = v.get<double>();
    m.unknown_log_prob = j.at("unknown_log_prob").get<double>();
    for (const auto& b : j.at("bigrams")) m.bigrams.insert(b.get<std::string>());
    for (int k = 0; k < 2; ++k) {
      m.feature_mean[k] = j.at("feature_mean").at(k).get<double>();
      m.feature_std[k] = j.at("feature_std").at(k).get<double>();
      m.weights[k] = j.at("weights").at(k).get<double>();
    }
    m.bias = j.at("bias").get<double>();
    m.threshold = j.value("threshold", 0.5);
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("detector: ") + e.what());
  }
}

std::string random_token_text(std::span<const std::string> vocab, std::size_t length, Rng& rng) {
  std::string s;
  for (std::size_t i = 0; i < length; ++i) {
    if (i) s += ' ';
    s += vocab[static_cast<std::size_t>(rng.below(vocab.size()))];
  }
  return s;
}

DetectorModel train_detector(std::span<const std::string> normal_texts, std::span<const std::string> vocab,
                             const DetectorTrainConfig& cfg) {
  if (vocab.empty()) throw Error(ErrorCode::CorpusTooSmall, "detector vocabulary is empty");
  if (normal_texts.size() < cfg.min_normal) {
    throw Error(ErrorCode::CorpusTooSmall, "detector needs >= " + std::to_string(cfg.min_normal) + " normal texts, got " +
                                               std::to_string(normal_texts.size()));
  }
  DetectorModel m;
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t total = 0;
  std::vector<std::size_t> lengths;
  for (const auto& t : normal_texts) {
    const auto tokens = tokenize(t);
    lengths.push_back(std::max<std::size_t>(1, tokens.size()));
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      ++counts[tokens[i]];
      ++total;
      if (i + 1 < tokens.size()) m.bigrams.insert(tokens[i] + ' ' + tokens[i + 1]);
    }
  }
  // Add-one smoothing over the observed vocabulary plus one unknown slot.
  const double denom = static_cast<double>(total + counts.size() + 1);
  for (const auto& [w, c] : counts) m.log_prob[w] = std::log(static_cast<double>(c + 1) / denom);
  m.unknown_log_prob = std::log(1.0 / denom);

  Rng rng(derive_seed(cfg.seed, "detector/abnormal"));
  std::vector<DetectorFeatures> feats;
  std::vector<double> labels;
  for (const auto& t : normal_texts) {
    feats.push_back(m.features(t));
    labels.push_back(0.0);
  }
  for (std::size_t i = 0; i < normal_texts.size(); ++i) {
    const std::size_t len = lengths[static_cast<std::size_t>(rng.below(lengths.size()))];
    feats.push_back(m.features(random_token_text(vocab, len, rng)));
    labels.push_back(1.0);
  }

  const double n = static_cast<double>(feats.size());
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  for (const auto& f : feats) {
    sum[0] += f.mean_log_prob;
    sum[1] += f.bigram_coverage;
  }
  m.feature_mean[0] = sum[0] / n;
  m.feature_mean[1] = sum[1] / n;
  for (const auto& f : feats) {
    sq[0] += (f.mean_log_prob - m.feature_mean[0]) * (f.mean_log_prob - m.feature_mean[0]);
    sq[1] += (f.bigram_coverage - m.feature_mean[1]) * (f.bigram_coverage - m.feature_mean[1]);
  }
  for (int k = 0; k < 2; ++k) {
    const double sd = std::sqrt(sq[k] / n);
    m.feature_std[k] = sd > 1e-12 ? sd : 1.0;
  }

  std::vector<std::array<double, 2>> z(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    z[i] = {(feats[i].mean_log_prob - m.feature_mean[0]) / m.feature_std[0],
            (feats[i].bigram_coverage - m.feature_mean[1]) / m.feature_std[1]};
  }
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double g0 = 0.0, g1 = 0.0, gb = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double err = sigmoid(m.weights[0] * z[i][0] + m.weights[1] * z[i][1] + m.bias) - labels[i];
      g0 += err * z[i][0];
      g1 += err * z[i][1];
      gb += err;
    }
    m.weights[0] -= cfg.lr * g0 / n;
    m.weights[1] -= cfg.lr * g1 / n;
    m.bias -= cfg.lr * gb / n;
  }
  return m;
}

DetectSamplingEncoder::DetectSamplingEncoder(EncoderHandle suspect, DetectorModel detector, std::uint64_t seed)
    : suspect_(std::move(suspect)), detector_(std::move(detector)), seed_(seed) {
  if (!suspect_) throw Error(ErrorCode::InvalidArgument, "detect-sampling needs a suspect encoder");
  if (suspect_->dim() == 0) throw Error(ErrorCode::InvalidArgument, "detect-sampling needs a suspect with a known dimension");
}

std::vector<Embedding> DetectSamplingEncoder::encode(std::span<const std::string> texts) const {
  std::vector<Embedding> out(texts.size());
  std::vector<std::string> pass;
  std::vector<std::size_t> pass_idx;
  const std::size_t d = suspect_->dim();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (detector_.flags(texts[i])) {
      Rng rng(splitmix64(fnv1a64(texts[i]) ^ derive_seed(seed_, "detect/sample")));
      std::vector<double> g(d);
      for (double& x : g) x = rng.normal();
      const auto u = l2_normalize(std::span<const double>(g));
      out[i].assign(u.begin(), u.end());
    } else {
      pass.push_back(texts[i]);
      pass_idx.push_back(i);
    }
  }
  if (!pass.empty()) {
    auto delegated = suspect_->encode(pass);
    for (std::size_t k = 0; k < pass_idx.size(); ++k) out[pass_idx[k]] = std::move(delegated[k]);
  }
  return out;
}

EncoderHandle detect_sampling_wrap(EncoderHandle suspect, DetectorModel detector, std::uint64_t seed) {
  return std::make_shared<DetectSamplingEncoder>(std::move(suspect), std::move(detector), seed);
}

std::vector<Embedding> ImitatorModel::predict(std::span<const std::string> texts) const {
  const auto s = surrogate->encode(texts);
  std::vector<Embedding> out;
  out.reserve(s.size());
  const Eigen::Index in = w.rows() - 1;
  for (const auto& e : s) {
    if (static_cast<Eigen::Index>(e.size()) != in) throw Error(ErrorCode::DimensionMismatch, "surrogate dim vs imitator map");
    Eigen::RowVectorXd x(in + 1);
    for (Eigen::Index i = 0; i < in; ++i) x(i) = e[static_cast<std::size_t>(i)];
    x(in) = 1.0;
    Eigen::RowVectorXd y = x * w;
    if (normalize_output) {
      const double n = y.norm();
      if (!(n > 0.0)) throw Error(ErrorCode::ZeroVector, "imitator produced a zero embedding");
      y /= n;
    }
    out.emplace_back(y.data(), y.data() + y.size());
  }
  return out;
}

json ImitatorModel::to_json() const {
  return {{"format", "semmark-imitator"},
          {"surrogate", surrogate_spec},
          {"w", matrix_to_json(w)},
          {"normalize_output", normalize_output},
          {"training_mse", training_mse}};
}

ImitatorModel imitator_from_json(const json& j, const std::string& api_key) {
  try {
    ImitatorModel m;
    m.surrogate_spec = j.at("surrogate");
    m.surrogate = encoder_from_json(m.surrogate_spec, api_key);
    m.w = matrix_from_json(j.at("w"));
    m.normalize_output = j.value("normalize_output", true);
    m.training_mse = j.value("training_mse", 0.0);
    if (m.w.rows() < 2) throw Error(ErrorCode::ParseError, "imitator map has too few rows");
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("imitator: ") + e.what());
  }
}

ImitatorModel train_imitator(std::span<const std::string> texts, const Corpus& victim_outputs, EncoderHandle surrogate,
                             double ridge) {
  if (!surrogate) throw Error(ErrorCode::InvalidArgument, "imitator needs a surrogate encoder");
  if (texts.size() != victim_outputs.size()) throw Error(ErrorCode::DimensionMismatch, "imitator texts and outputs must align");
  if (!(ridge >= 0.0)) throw Error(ErrorCode::InvalidArgument, "ridge must be >= 0");
  const auto s = surrogate->encode(texts);
  const std::size_t in = s.empty() ? surrogate->dim() : s.front().size();
  if (texts.size() < in + 1) {
    throw Error(ErrorCode::TooFewSamples, "imitator needs more than " + std::to_string(in) + " samples, got " + std::to_string(texts.size()));
  }
  if (texts.size() < 10 * in) warn("imitator trained on fewer than 10x surrogate-dim samples");

  const auto n = static_cast<Eigen::Index>(texts.size());
  Eigen::MatrixXd a(n, static_cast<Eigen::Index>(in) + 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < in; ++c) a(r, static_cast<Eigen::Index>(c)) = s[static_cast<std::size_t>(r)][c];
    a(r, static_cast<Eigen::Index>(in)) = 1.0;
  }
  const Eigen::MatrixXd y = victim_outputs.matrix().to_eigen();
  Eigen::MatrixXd gram = a.transpose() * a;
  gram.diagonal().array() += ridge;

  ImitatorModel m;
  m.surrogate = std::move(surrogate);
  m.w = gram.ldlt().solve(a.transpose() * y);
  if (!m.w.allFinite()) throw Error(ErrorCode::NonFinite, "imitator solve produced non-finite weights");
  m.training_mse = (a * m.w - y).squaredNorm() / static_cast<double>(y.size());
  m.normalize_output = true;
  for (const auto& r : victim_outputs) {
    if (std::abs(norm(r.vec) - 1.0) > 1e-3) {
      m.normalize_output = false;
      break;
    }
  }
  return m;
}

}  // namespace semmark
