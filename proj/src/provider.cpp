#include "semmark/provider.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "semmark/error.hpp"
#include "semmark/json_io.hpp"
#include "semmark/rng.hpp"

namespace semmark {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

Embedding to_unit_if_needed(Embedding v) {
  const double n = norm(v);
  if (std::abs(n - 1.0) > 1e-3) {
    warn("encoder returned a non-unit embedding (norm " + std::to_string(n) + "); normalizing");
    return l2_normalize(v);
  }
  return v;
}

}  // namespace

void ProviderBundle::validate() const {
  if (!encoder) throw Error(ErrorCode::InvalidArgument, "bundle has no encoder");
  const std::size_t d = dim();
  if (mapper.dim() != d) {
    throw Error(ErrorCode::DimensionMismatch, "mapper dim " + std::to_string(mapper.dim()) + " vs partition dim " + std::to_string(d));
  }
  if (encoder->dim() != 0 && encoder->dim() != d) {
    throw Error(ErrorCode::DimensionMismatch, "encoder dim " + std::to_string(encoder->dim()) + " vs partition dim " + std::to_string(d));
  }
  if (lof && lof->dim() != d) throw Error(ErrorCode::DimensionMismatch, "LOF index dim does not match partition dim");
  weights.validate();
}

json encoder_to_json(const SyntheticEncoderConfig& cfg) {
  return {{"kind", "synthetic"}, {"dim", cfg.dim}, {"topics", cfg.topics}, {"noise_sigma", cfg.noise_sigma}, {"seed", cfg.seed}};
}

json encoder_to_json(const RemoteEncoderConfig& cfg) {
  return {{"kind", "remote"}, {"endpoint", cfg.endpoint}, {"model", cfg.model}, {"dim", cfg.dim}, {"batch", cfg.batch}};
}

EncoderHandle encoder_from_json(const json& j, const std::string& api_key) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "synthetic") {
      SyntheticEncoderConfig cfg;
      cfg.dim = j.at("dim").get<std::size_t>();
      cfg.topics = j.at("topics").get<std::size_t>();
      cfg.noise_sigma = j.at("noise_sigma").get<double>();
      cfg.seed = j.at("seed").get<std::uint64_t>();
      return std::make_shared<SyntheticEncoder>(cfg);
    }
    if (kind == "remote") {
      RemoteEncoderConfig cfg;
      cfg.endpoint = j.at("endpoint").get<std::string>();
      cfg.model = j.value("model", std::string());
      cfg.dim = j.value("dim", std::size_t{0});
      cfg.batch = j.value("batch", cfg.batch);
      cfg.api_key = resolve_api_key(api_key);
      return std::make_shared<RemoteEncoder>(cfg);
    }
    throw Error(ErrorCode::ParseError, "unknown encoder kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("encoder config: ") + e.what());
  }
}

std::string file_content_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

void write_bundle_config(const fs::path& dir, json config) {
  json files = json::object();
  for (const char* name : {kPartitionFile, kMapperFile, kLofFile, kWeightsFile}) {
    if (fs::exists(dir / name)) files[name] = file_content_hash(dir / name);
  }
  config["format"] = "semmark-bundle";
  config["version"] = 1;
  config["files"] = files;
  write_json_file(config, dir / kConfigFile);
}

ProviderBundle load_bundle(const fs::path& dir, EncoderHandle encoder, const std::string& api_key) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "bundle directory not found: " + dir.string());
  for (const char* name : {kConfigFile, kPartitionFile, kMapperFile, kLofFile, kWeightsFile}) {
    if (!fs::exists(dir / name)) throw Error(ErrorCode::Io, "bundle is missing " + std::string(name) + " in " + dir.string());
  }
  json config = read_json_file(dir / kConfigFile);
  if (config.contains("files")) {
    for (const auto& [name, hash] : config["files"].items()) {
      if (fs::exists(dir / name) && file_content_hash(dir / name) != hash.get<std::string>()) {
        throw Error(ErrorCode::ParseError, "content hash mismatch for " + name + " (bundle modified after config.json was written)");
      }
    }
  }
  if (!encoder) encoder = encoder_from_json(config.at("encoder"), api_key);

  WeightConfig weights = WeightConfig::from_json(read_json_file(dir / kWeightsFile));
  std::shared_ptr<const LofIndex> lof;
  Corpus surrogate = load_binary(dir / kLofFile);
  if (surrogate.size() > weights.k) {
    lof = std::make_shared<LofIndex>(surrogate.matrix(), weights.k);
  } else {
    warn("surrogate set has " + std::to_string(surrogate.size()) + " points <= k=" + std::to_string(weights.k) +
         "; using constant weight delta - epsilon");
  }

  ProviderBundle bundle{std::move(encoder), LshPartitioner::from_json(read_json_file(dir / kPartitionFile)),
                        mapper_from_json(read_json_file(dir / kMapperFile)), std::move(lof), weights, std::move(config)};
  bundle.validate();
  return bundle;
}

void save_bundle(const ProviderBundle& bundle, const fs::path& dir) {
  bundle.validate();
  fs::create_directories(dir);
  write_json_file(bundle.partitioner.to_json(), dir / kPartitionFile);
  write_json_file(mapper_to_json(bundle.mapper), dir / kMapperFile);
  write_json_file(bundle.weights.to_json(), dir / kWeightsFile);
  Corpus points;
  if (bundle.lof) {
    const auto& p = bundle.lof->points();
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      Embedding v(static_cast<std::size_t>(p.cols()));
      for (Eigen::Index c = 0; c < p.cols(); ++c) v[static_cast<std::size_t>(c)] = static_cast<float>(p(r, c));
      points.append({std::to_string(r), std::nullopt, std::move(v)});
    }
  }
  save_binary(points, dir / kLofFile);
  write_bundle_config(dir, bundle.config);
}

json InjectionTrace::to_json() const {
  json j{{"region", region.code}, {"watermarked", watermarked}};
  j["weight"] = weight ? json(*weight) : json(nullptr);
  j["lof"] = lof ? json(*lof) : json(nullptr);
  if (degenerate) j["degenerate"] = true;
  return j;
}

InjectionResult inject_embedding(const ProviderBundle& bundle, std::span<const float> e_o, const InjectOptions& opts) {
  if (e_o.size() != bundle.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "embedding dim " + std::to_string(e_o.size()) + " vs bundle dim " + std::to_string(bundle.dim()));
  }
  const double n = norm(e_o);
  if (std::abs(n - 1.0) > 1e-3) throw Error(ErrorCode::InvalidArgument, "injection expects a unit-norm embedding, norm " + std::to_string(n));

  InjectionResult out;
  out.trace.region = bundle.partitioner.region_of(e_o);
  if (!bundle.partitioner.is_watermark_region(out.trace.region)) {
    out.embedding.assign(e_o.begin(), e_o.end());
    return out;
  }
  out.trace.watermarked = true;
  double u;
  if (opts.weight_override) {
    u = *opts.weight_override;
  } else if (bundle.lof) {
    out.trace.lof = bundle.lof->lof(e_o);
    u = adaptive_weight(*out.trace.lof, bundle.weights);
  } else {
    u = bundle.weights.delta - bundle.weights.epsilon;
  }
  out.trace.weight = u;

  const std::vector<double> e_w = mapper_forward(bundle.mapper, e_o);
  std::vector<double> mix(e_o.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = (1.0 - u) * e_o[i] + u * e_w[i];
  double mix_norm = 0.0;
  for (double v : mix) mix_norm += v * v;
  if (!(mix_norm > 0.0) || !std::isfinite(mix_norm)) {
    out.trace.degenerate = true;
    out.embedding.assign(e_o.begin(), e_o.end());
    return out;
  }
  const auto unit = l2_normalize(std::span<const double>(mix));
  out.embedding.assign(unit.begin(), unit.end());
  return out;
}

InjectionResult process_text(const ProviderBundle& bundle, const std::string& text) {
  return inject_embedding(bundle, to_unit_if_needed(bundle.encoder->encode_one(text)));
}

BatchOutput batch_inject(const ProviderBundle& bundle, const Corpus& originals) {
  BatchOutput out;
  out.corpus.reserve(originals.size());
  out.traces.reserve(originals.size());
  for (const auto& r : originals) {
    InjectionResult res = inject_embedding(bundle, r.vec);
    out.corpus.append({r.id, r.text, std::move(res.embedding)});
    out.traces.push_back(res.trace);
  }
  return out;
}

BatchOutput batch_process(const ProviderBundle& bundle, std::span<const std::string> texts) {
  const auto raw = bundle.encoder->encode(texts);
  Corpus originals;
  originals.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) originals.append({std::to_string(i), texts[i], to_unit_if_needed(raw[i])});
  return batch_inject(bundle, originals);
}

fs::path write_batch_output(const BatchOutput& out, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (path.extension() == ".bin") save_binary(out.corpus, path);
  else save_jsonl(out.corpus, path);
  const fs::path traces = path.parent_path() / "traces.jsonl";
  std::ofstream t(traces, std::ios::trunc);
  if (!t) throw Error(ErrorCode::Io, "cannot write " + traces.string());
  for (std::size_t i = 0; i < out.traces.size(); ++i) {
    json j = out.traces[i].to_json();
    j["id"] = out.corpus[i].id;
    t << j.dump() << '\n';
  }
  if (!t) throw Error(ErrorCode::Io, "write failed: " + traces.string());
  return traces;
}

std::vector<Embedding> ProviderEncoder::encode(std::span<const std::string> texts) const {
  BatchOutput out = batch_process(*bundle_, texts);
  return out.corpus.vectors();
}

}  // namespace semmark
