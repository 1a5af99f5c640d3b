#include "semmark/verification.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "semmark/error.hpp"
#include "semmark/rng.hpp"

namespace semmark {

using json = nlohmann::json;

namespace {

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> unit(std::span<const double> v) { return l2_normalize(v); }

}  // namespace

VerificationSet build_verification_set(std::span<const std::string> pool, const ProviderBundle& bundle, std::size_t m,
                                       std::uint64_t seed) {
  if (m == 0) throw Error(ErrorCode::InvalidArgument, "verification size m must be positive");
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "verify/pool"));
  rng.shuffle(std::span<std::size_t>(order));

  const auto originals = bundle.encoder->encode(pool);
  VerificationSet set;
  set.m = m;
  std::set<std::string> seen;
  for (std::size_t idx : order) {
    if (set.watermark_texts.size() == m && set.plain_texts.size() == m) break;
    if (!seen.insert(pool[idx]).second) continue;  // keep the sides disjoint
    const bool in_wm = bundle.partitioner.in_watermark_region(originals[idx]);
    auto& side = in_wm ? set.watermark_texts : set.plain_texts;
    if (side.size() < m) side.push_back(pool[idx]);
  }
  if (set.watermark_texts.size() < m || set.plain_texts.size() < m) {
    throw Error(ErrorCode::PoolExhausted, "pool of " + std::to_string(pool.size()) + " texts yielded " +
                                              std::to_string(set.watermark_texts.size()) + " watermark-region and " +
                                              std::to_string(set.plain_texts.size()) + " plain texts; need " +
                                              std::to_string(m) + " each");
  }
  return set;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Watermarked: return "watermarked";
    case Verdict::Clean: return "clean";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

Verdict decide_verdict(double p_value, double delta_cos) {
  if (p_value >= kVerdictAlpha) return Verdict::Clean;
  return delta_cos > 0.0 ? Verdict::Watermarked : Verdict::Inconclusive;
}

VerificationReport make_report(std::vector<double> cos_w, std::vector<double> cos_n) {
  VerificationReport r;
  const KsResult ks = ks_two_sample(cos_w, cos_n);
  r.p_value = ks.p_value;
  r.ks_statistic = ks.statistic;
  r.ks_exact = ks.exact;
  r.n_w = cos_w.size();
  r.n_n = cos_n.size();
  r.delta_cos = mean(cos_w) - mean(cos_n);
  for (double c : cos_w) r.l2_w.push_back(2.0 - 2.0 * c);
  for (double c : cos_n) r.l2_n.push_back(2.0 - 2.0 * c);
  r.delta_l2 = mean(r.l2_w) - mean(r.l2_n);
  r.cos_w = std::move(cos_w);
  r.cos_n = std::move(cos_n);
  r.verdict = decide_verdict(r.p_value, r.delta_cos);
  return r;
}

json VerificationReport::to_json() const {
  return {{"p_value", p_value},
          {"ks_statistic", ks_statistic},
          {"ks_exact", ks_exact},
          {"delta_cos", delta_cos},
          {"delta_cos_x100", delta_cos_x100()},
          {"delta_l2", delta_l2},
          {"delta_l2_x100", delta_l2_x100()},
          {"n_w", n_w},
          {"n_n", n_n},
          {"verdict", std::string(to_string(verdict))},
          {"suspect", suspect},
          {"cos_w", cos_w},
          {"cos_n", cos_n},
          {"l2_w", l2_w},
          {"l2_n", l2_n}};
}

std::string VerificationReport::to_table() const {
  std::ostringstream os;
  os << "suspect        " << (suspect.empty() ? "-" : suspect) << '\n';
  os << "n_w / n_n      " << n_w << " / " << n_n << '\n';
  os << "KS statistic   " << std::fixed << std::setprecision(4) << ks_statistic << (ks_exact ? " (exact)" : " (asymptotic)") << '\n';
  os << "p-value        " << std::scientific << std::setprecision(3) << p_value << '\n';
  os << "delta cos x100 " << std::fixed << std::setprecision(2) << delta_cos_x100() << '\n';
  os << "delta L2 x100  " << std::fixed << std::setprecision(2) << delta_l2_x100() << '\n';
  os << "verdict        " << to_string(verdict) << '\n';
  return os.str();
}

std::vector<Embedding> query_suspect(const Encoder& suspect, std::span<const std::string> texts, std::size_t max_in_flight,
                                     std::size_t chunk) {
  chunk = std::max<std::size_t>(1, chunk);
  max_in_flight = std::max<std::size_t>(1, max_in_flight);
  std::vector<std::span<const std::string>> parts;
  for (std::size_t s = 0; s < texts.size(); s += chunk) parts.push_back(texts.subspan(s, std::min(chunk, texts.size() - s)));

  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (std::size_t wave = 0; wave < parts.size(); wave += max_in_flight) {
    const std::size_t end = std::min(parts.size(), wave + max_in_flight);
    std::vector<std::future<std::vector<Embedding>>> pending;
    for (std::size_t p = wave; p < end; ++p) {
      pending.push_back(std::async(std::launch::async, [&suspect, part = parts[p]] { return suspect.encode(part); }));
    }
    for (auto& f : pending) {
      auto v = f.get();
      for (auto& e : v) out.push_back(std::move(e));
    }
  }
  if (out.size() != texts.size()) throw Error(ErrorCode::MalformedResponse, "suspect returned the wrong number of embeddings");
  return out;
}

VerificationReport verify(const VerificationSet& vset, const ProviderBundle& bundle, const Encoder& suspect,
                          const VerifyOptions& opts) {
  std::vector<std::string> texts = vset.watermark_texts;
  texts.insert(texts.end(), vset.plain_texts.begin(), vset.plain_texts.end());
  const std::size_t n_w = vset.watermark_texts.size();
  if (n_w < 2 || vset.plain_texts.size() < 2) throw Error(ErrorCode::InsufficientSamples, "verification needs >= 2 texts per side");

  const auto originals = bundle.encoder->encode(texts);
  const auto outputs = query_suspect(suspect, texts, opts.max_in_flight, opts.chunk);

  std::vector<double> cos_w, cos_n;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const bool is_unit = std::abs(norm(originals[i]) - 1.0) <= 1e-3;
    const std::vector<double> e_w = mapper_forward(bundle.mapper, is_unit ? originals[i] : l2_normalize(originals[i]));
    std::vector<double> s(outputs[i].begin(), outputs[i].end());
    if (opts.alignment) {
      const auto& w = *opts.alignment;
      if (static_cast<std::size_t>(w.rows()) != s.size() || static_cast<std::size_t>(w.cols()) != bundle.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "alignment matrix shape does not fit suspect/bundle dimensions");
      }
      Eigen::Map<const Eigen::RowVectorXd> row(s.data(), static_cast<Eigen::Index>(s.size()));
      const Eigen::RowVectorXd aligned = row * w;
      s.assign(aligned.data(), aligned.data() + aligned.size());
    } else if (s.size() != bundle.dim()) {
      throw Error(ErrorCode::DimensionMismatch, "suspect dim " + std::to_string(s.size()) + " vs bundle dim " +
                                                    std::to_string(bundle.dim()) + "; align the suspect first (align_dims)");
    }
    const double c = cosine(std::span<const double>(unit(s)), std::span<const double>(unit(e_w)));
    (i < n_w ? cos_w : cos_n).push_back(c);
  }
  VerificationReport report = make_report(std::move(cos_w), std::move(cos_n));
  report.suspect = opts.suspect_label;
  return report;
}

namespace {

struct Split {
  std::vector<std::size_t> train, test;
};

double probe_accuracy(const Corpus& corpus, std::span<const std::size_t> labels, std::size_t classes, const Split& split,
                      const ProbeConfig& cfg) {
  const Eigen::MatrixXd x = corpus.matrix().to_eigen();
  const Eigen::Index d = x.cols();
  const auto k = static_cast<Eigen::Index>(classes);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
  Rng rng(derive_seed(cfg.seed, "probe/batches"));
  std::vector<std::size_t> order = split.train;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
      const std::size_t e = std::min(order.size(), s + cfg.batch);
      const auto n = static_cast<Eigen::Index>(e - s);
      Eigen::MatrixXd xb(n, d);
      for (Eigen::Index r = 0; r < n; ++r) xb.row(r) = x.row(static_cast<Eigen::Index>(order[s + static_cast<std::size_t>(r)]));
      Eigen::MatrixXd logits = (xb * w).rowwise() + b;
      for (Eigen::Index r = 0; r < n; ++r) {
        const double mx = logits.row(r).maxCoeff();
        logits.row(r) = (logits.row(r).array() - mx).exp().matrix();
        logits.row(r) /= logits.row(r).sum();
        logits(r, static_cast<Eigen::Index>(labels[order[s + static_cast<std::size_t>(r)]])) -= 1.0;
      }
      logits /= static_cast<double>(n);
      w -= cfg.lr * xb.transpose() * logits;
      b -= cfg.lr * logits.colwise().sum();
    }
  }
  std::size_t correct = 0;
  for (std::size_t i : split.test) {
    Eigen::RowVectorXd z = x.row(static_cast<Eigen::Index>(i)) * w + b;
    Eigen::Index best = 0;
    z.maxCoeff(&best);
    if (static_cast<std::size_t>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.test.size());
}

}  // namespace

ProbeResult utility_probe(const Corpus& original, const Corpus& watermarked, std::span<const std::size_t> labels,
                          const ProbeConfig& cfg) {
  if (original.size() != watermarked.size() || original.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "probe corpora and labels must align");
  }
  const std::set<std::size_t> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw Error(ErrorCode::DegenerateLabels, "utility probe needs at least 2 classes");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) || cfg.batch == 0) {
    throw Error(ErrorCode::InvalidArgument, "probe needs 0 < train_fraction < 1 and batch > 0");
  }
  const std::size_t classes = *distinct.rbegin() + 1;

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "probe/split"));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(order.size())));
  if (n_train == 0 || n_train == order.size()) throw Error(ErrorCode::InsufficientSamples, "probe split leaves an empty side");
  Split split{{order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train)},
              {order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end()}};

  return {probe_accuracy(original, labels, classes, split, cfg), probe_accuracy(watermarked, labels, classes, split, cfg)};
}

}  // namespace semmark
