// semmark: operator CLI for fitting, training, injecting, serving, verifying
// and attacking. Exit codes: 0 ok, 2 usage/validation, 3 numeric, 4 I/O.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "semmark/attacks.hpp"
#include "semmark/error.hpp"
#include "semmark/json_io.hpp"
#include "semmark/mapper.hpp"
#include "semmark/partition.hpp"
#include "semmark/provider.hpp"
#include "semmark/service.hpp"
#include "semmark/textgen.hpp"
#include "semmark/verification.hpp"
#include "semmark/weighting.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace semmark;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFinite:
    case ErrorCode::ZeroVector:
    case ErrorCode::DivergedLoss:
      return kExitNumeric;
    case ErrorCode::ParseError:
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
    case ErrorCode::Io:
    case ErrorCode::Network:
    case ErrorCode::AuthFailed:
    case ErrorCode::MalformedResponse:
      return kExitIo;
    default:
      return kExitUsage;
  }
}

struct Globals {
  std::uint64_t seed = 0;
  std::string workdir = ".";
  std::string api_key;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : fs::path(workdir) / path;
  }
  fs::path input(const std::string& p) const {
    fs::path path = resolve(p);
    if (!fs::exists(path)) throw Error(ErrorCode::InvalidArgument, "input not found: " + path.string());
    return path;
  }
  fs::path output(const std::string& p) const {
    fs::path path = resolve(p);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    return path;
  }
};

struct EncoderOpts {
  std::string endpoint;
  std::string model;
  std::size_t dim = 64;
  std::size_t topics = 16;
  double noise_sigma = 0.25;
  std::uint64_t seed = 0;

  void add(CLI::App* cmd, const std::string& prefix = "") {
    cmd->add_option("--" + prefix + "endpoint", endpoint, "remote embeddings endpoint (default: synthetic encoder)");
    cmd->add_option("--" + prefix + "model", model, "remote model name");
    cmd->add_option("--" + prefix + "dim", dim, "embedding dimension")->capture_default_str();
    cmd->add_option("--" + prefix + "topics", topics, "synthetic topic count")->capture_default_str();
    cmd->add_option("--" + prefix + "noise-sigma", noise_sigma, "synthetic noise scale")->capture_default_str();
    cmd->add_option("--" + prefix + "encoder-seed", seed, "synthetic encoder seed")->capture_default_str();
  }

  json spec() const {
    if (!endpoint.empty()) {
      RemoteEncoderConfig cfg;
      cfg.endpoint = endpoint;
      cfg.model = model;
      cfg.dim = dim;
      return encoder_to_json(cfg);
    }
    SyntheticEncoderConfig cfg;
    cfg.dim = dim;
    cfg.topics = topics;
    cfg.noise_sigma = noise_sigma;
    cfg.seed = seed;
    cfg.validate();
    return encoder_to_json(cfg);
  }
};

Corpus load_corpus(const fs::path& path) { return path.extension() == ".bin" ? load_binary(path) : load_jsonl(path); }

void save_corpus(const Corpus& corpus, const fs::path& path) {
  if (path.extension() == ".bin") {
    save_binary(corpus, path);
  } else {
    save_jsonl(corpus, path);
  }
}

std::vector<std::string> corpus_texts(const Corpus& corpus, const fs::path& origin) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& r : corpus) {
    if (!r.text) throw Error(ErrorCode::InvalidArgument, "record '" + r.id + "' in " + origin.string() + " has no text");
    texts.push_back(*r.text);
  }
  return texts;
}

void print_histogram(const std::vector<std::size_t>& hist, const LshPartitioner& p) {
  std::printf("region  count  watermark\n");
  for (std::size_t r = 0; r < hist.size(); ++r) {
    std::printf("%6zu  %5zu  %s\n", r, hist[r], p.is_watermark_region(RegionId{static_cast<std::uint32_t>(r)}) ? "yes" : "no");
  }
  std::printf("%zu regions, %zu watermarked\n", p.region_count(), p.watermark_region_count());
}

// Updates config.json in place, keeping content hashes current.
void update_config(const fs::path& bundle, const std::function<void(json&)>& edit) {
  json config = fs::exists(bundle / kConfigFile) ? read_json_file(bundle / kConfigFile) : json::object();
  edit(config);
  write_bundle_config(bundle, std::move(config));
}

EncoderHandle make_suspect(const std::string& spec, const ProviderBundle& bundle, const Globals& g) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "clean" && arg.empty()) return bundle.encoder;
  if (arg.empty()) throw Error(ErrorCode::InvalidArgument, "suspect must be clean, bundle:PATH, url:URL or imitator:PATH");
  if (kind == "bundle") {
    auto other = std::make_shared<const ProviderBundle>(load_bundle(g.input(arg), nullptr, g.api_key));
    return std::make_shared<ProviderEncoder>(other);
  }
  if (kind == "url") {
    RemoteEncoderConfig cfg;
    cfg.endpoint = arg;
    cfg.api_key = resolve_api_key(g.api_key);
    return std::make_shared<RemoteEncoder>(cfg);
  }
  if (kind == "imitator") {
    return std::make_shared<ImitatorEncoder>(imitator_from_json(read_json_file(g.input(arg)), g.api_key));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown suspect kind '" + kind + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SemMark: region-based semantic watermarking for embedding services"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "global seed")->capture_default_str();
  app.add_option("--workdir", g.workdir, "base directory for relative paths")->capture_default_str();
  app.add_option("--api-key", g.api_key, "remote API key (default: $SEMMARK_API_KEY)");

  std::function<void()> action;

  // gen-texts
  std::size_t gen_n = 1000;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-texts", "generate synthetic sentences, one per line");
  gen->add_option("--n", gen_n)->capture_default_str();
  gen->add_option("--out", gen_out)->required();
  gen->callback([&] {
    action = [&] {
      save_lines(generate_sentences(gen_n, derive_seed(g.seed, "cli/texts")), g.output(gen_out));
    };
  });

  // encode
  std::string enc_in, enc_out;
  EncoderOpts enc_opts;
  auto* enc = app.add_subcommand("encode", "embed a text file (.jsonl or .bin output)");
  enc->add_option("--in", enc_in, "texts, one per line")->required();
  enc->add_option("--out", enc_out)->required();
  enc_opts.add(enc);
  enc->callback([&] {
    action = [&] {
      const auto texts = load_lines(g.input(enc_in));
      const EncoderHandle encoder = encoder_from_json(enc_opts.spec(), g.api_key);
      Corpus out = Corpus::from_vectors(encoder->encode(texts), texts);
      enforce_unit_norm(out);
      save_corpus(out, g.output(enc_out));
      std::printf("encoded %zu texts (dim %zu)\n", out.size(), out.dim());
    };
  });

  // partition-fit
  std::string pf_surrogate, pf_out;
  std::size_t pf_h = 6, pf_c = 6, pf_k = 50;
  double pf_alpha = 0.5, pf_delta = 0.30, pf_eps = 0.05;
  EncoderOpts pf_enc;
  auto* pf = app.add_subcommand("partition-fit", "fit the LSH partition and LOF weights on surrogate embeddings");
  pf->add_option("--surrogate", pf_surrogate, "surrogate embeddings (.jsonl/.bin)")->required();
  pf->add_option("--out", pf_out, "bundle directory")->required();
  pf->add_option("--h-prime", pf_h)->capture_default_str();
  pf->add_option("--c", pf_c)->capture_default_str();
  pf->add_option("--alpha", pf_alpha)->capture_default_str();
  pf->add_option("--k", pf_k)->capture_default_str();
  pf->add_option("--delta", pf_delta)->capture_default_str();
  pf->add_option("--epsilon", pf_eps)->capture_default_str();
  pf_enc.add(pf);
  pf->callback([&] {
    action = [&] {
      Corpus surrogate = load_corpus(g.input(pf_surrogate));
      enforce_unit_norm(surrogate);
      const json encoder = pf_enc.spec();
      if (encoder.value("dim", std::size_t{0}) != surrogate.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "surrogate dim " + std::to_string(surrogate.dim()) + " vs encoder dim " +
                                                      std::to_string(encoder.value("dim", std::size_t{0})));
      }
      const LshPartitioner part = fit_partitioner(surrogate, pf_h, pf_c, pf_alpha, g.seed);
      WeightConfig weights;
      weights.delta = pf_delta;
      weights.epsilon = pf_eps;
      weights.k = pf_k;
      weights.validate();
      Corpus lof_points;
      if (surrogate.size() > pf_k) {
        const LofIndex index(surrogate.matrix(), pf_k);
        weights = fit_weight_bounds(index, pf_delta, pf_eps);
        weights.k = pf_k;
        lof_points = surrogate;
      } else {
        warn("surrogate set has " + std::to_string(surrogate.size()) + " points <= k=" + std::to_string(pf_k) +
             "; injection will use the constant weight delta - epsilon");
      }
      const fs::path dir = g.output(pf_out);
      fs::create_directories(dir);
      write_json_file(part.to_json(), dir / kPartitionFile);
      write_json_file(weights.to_json(), dir / kWeightsFile);
      Corpus stripped;
      for (const auto& r : lof_points) stripped.append({r.id, std::nullopt, r.vec});
      save_binary(stripped, dir / kLofFile);
      update_config(dir, [&](json& c) {
        c["encoder"] = encoder;
        c["seed"] = g.seed;
        c["run"]["h_prime"] = pf_h;
        c["run"]["c"] = pf_c;
        c["run"]["alpha"] = pf_alpha;
        c["run"]["delta"] = pf_delta;
        c["run"]["epsilon"] = pf_eps;
        c["run"]["k"] = pf_k;
        c["run"]["m"] = 500;
        if (!c["run"].contains("mapper")) c["run"]["mapper"] = MapperTrainConfig{}.to_json();
      });
      print_histogram(region_histogram(part, surrogate), part);
    };
  });

  // train-mapper
  std::string tm_corpus, tm_bundle, tm_loss = "loss.csv";
  MapperTrainConfig tm_cfg;
  auto* tm = app.add_subcommand("train-mapper", "train the semantic mapper and add it to a bundle");
  tm->add_option("--corpus", tm_corpus, "mapper training embeddings (.jsonl/.bin)")->required();
  tm->add_option("--bundle", tm_bundle)->required();
  tm->add_option("--epochs", tm_cfg.epochs)->capture_default_str();
  tm->add_option("--lr", tm_cfg.lr)->capture_default_str();
  tm->add_option("--tau", tm_cfg.tau)->capture_default_str();
  tm->add_option("--eta", tm_cfg.eta)->capture_default_str();
  tm->add_option("--lambda", tm_cfg.lambda)->capture_default_str();
  tm->add_option("--batch", tm_cfg.batch)->capture_default_str();
  tm->add_option("--loss-csv", tm_loss, "loss trace, relative to the bundle")->capture_default_str();
  tm->callback([&] {
    action = [&] {
      const fs::path dir = g.input(tm_bundle);
      Corpus corpus = load_corpus(g.input(tm_corpus));
      enforce_unit_norm(corpus);
      tm_cfg.seed = g.seed;
      tm_cfg.validate();
      const MapperTrainResult res = train_mapper(corpus, tm_cfg);
      json training = tm_cfg.to_json();
      training["xbar"] = res.xbar;
      write_json_file(mapper_to_json(res.model, training), dir / kMapperFile);
      std::ofstream csv(dir / tm_loss);
      if (!csv) throw Error(ErrorCode::Io, "cannot write " + (dir / tm_loss).string());
      csv << "epoch,loss\n";
      char buf[64];
      for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, res.epoch_loss[e]);
        csv << buf;
      }
      update_config(dir, [&](json& c) { c["run"]["mapper"] = tm_cfg.to_json(); });
      if (res.epoch_loss.empty()) {
        std::printf("epochs=0: initial mapper saved\n");
      } else {
        std::printf("loss %.6f -> %.6f over %zu epochs (xbar %.4f)\n", res.epoch_loss.front(), res.epoch_loss.back(),
                    res.epoch_loss.size(), res.xbar);
      }
    };
  });

  // inject
  std::string inj_bundle, inj_in, inj_out;
  auto* inj = app.add_subcommand("inject", "watermark embeddings (.jsonl/.bin) or texts (.txt)");
  inj->add_option("--bundle", inj_bundle)->required();
  inj->add_option("--in", inj_in)->required();
  inj->add_option("--out", inj_out)->required();
  inj->callback([&] {
    action = [&] {
      const fs::path in = g.input(inj_in);
      if (in.extension() == ".txt") {
        const ProviderBundle bundle = load_bundle(g.input(inj_bundle), nullptr, g.api_key);
        const auto texts = load_lines(in);
        write_batch_output(batch_process(bundle, texts), g.output(inj_out));
        std::printf("injected %zu texts\n", texts.size());
        return;
      }
      Corpus originals = load_corpus(in);
      enforce_unit_norm(originals);
      // embedding input never needs the encoder; avoid contacting a remote one
      SyntheticEncoderConfig placeholder;
      placeholder.dim = originals.empty() ? 64 : originals.dim();
      const ProviderBundle bundle = load_bundle(g.input(inj_bundle), std::make_shared<SyntheticEncoder>(placeholder));
      const BatchOutput out = batch_inject(bundle, originals);
      write_batch_output(out, g.output(inj_out));
      std::size_t marked = 0;
      for (const auto& t : out.traces) marked += t.watermarked;
      std::printf("injected %zu embeddings (%zu in watermark regions)\n", out.corpus.size(), marked);
    };
  });

  // serve
  std::string sv_bundle, sv_bind = "127.0.0.1:8080", sv_upstream, sv_trace;
  ServiceConfig sv_cfg;
  bool sv_no_stealth = false;
  auto* sv = app.add_subcommand("serve", "run the watermarking embeddings service");
  sv->add_option("--bundle", sv_bundle)->required();
  sv->add_option("--bind", sv_bind, "host:port")->capture_default_str();
  sv->add_option("--upstream", sv_upstream, "upstream embeddings endpoint (default: bundle encoder)");
  sv->add_option("--service-key", sv_cfg.service_key, "bearer key clients must present");
  sv->add_option("--trace", sv_trace, "append per-request injection traces (JSONL)");
  sv->add_flag("--no-stealth", sv_no_stealth, "mark responses with \"watermark\":\"semmark\"");
  sv->callback([&] {
    action = [&] {
      EncoderHandle upstream;
      if (!sv_upstream.empty()) {
        RemoteEncoderConfig rc;
        rc.endpoint = sv_upstream;
        rc.api_key = resolve_api_key(g.api_key);
        upstream = std::make_shared<RemoteEncoder>(rc);
      }
      auto bundle = std::make_shared<const ProviderBundle>(load_bundle(g.input(sv_bundle), upstream, g.api_key));
      parse_bind_address(sv_bind, sv_cfg);
      sv_cfg.stealth = !sv_no_stealth;
      if (!sv_trace.empty()) sv_cfg.trace_path = g.output(sv_trace);
      EmbeddingService service(bundle, sv_cfg);
      const int port = service.bind();
      std::printf("listening on %s:%d\n", sv_cfg.host.c_str(), port);
      std::fflush(stdout);
      service.listen();
    };
  });

  // verify
  std::string vf_bundle, vf_pool, vf_suspect = "clean", vf_detector, vf_align, vf_report = "report.json";
  std::size_t vf_m = 500;
  auto* vf = app.add_subcommand("verify", "test a suspect encoder for the bundle's watermark");
  vf->add_option("--bundle", vf_bundle)->required();
  vf->add_option("--pool", vf_pool, "candidate texts, one per line")->required();
  vf->add_option("--suspect", vf_suspect, "clean | bundle:PATH | url:URL | imitator:PATH")->capture_default_str();
  vf->add_option("--m", vf_m, "texts per side")->capture_default_str();
  vf->add_option("--detector", vf_detector, "wrap the suspect with Detect-Sampling using this detector");
  vf->add_option("--align-texts", vf_align, "texts for fitting a dimension alignment (not in the pool)");
  vf->add_option("--report", vf_report)->capture_default_str();
  vf->callback([&] {
    action = [&] {
      const ProviderBundle bundle = load_bundle(g.input(vf_bundle), nullptr, g.api_key);
      EncoderHandle suspect = make_suspect(vf_suspect, bundle, g);
      if (!vf_detector.empty()) {
        suspect = detect_sampling_wrap(suspect, DetectorModel::from_json(read_json_file(g.input(vf_detector))), g.seed);
      }
      const auto pool = load_lines(g.input(vf_pool));
      const VerificationSet vset = build_verification_set(pool, bundle, vf_m, g.seed);
      VerifyOptions opts;
      opts.suspect_label = vf_suspect;
      if (!vf_align.empty()) {
        const auto texts = load_lines(g.input(vf_align));
        const Corpus reduced = Corpus::from_vectors(suspect->encode(texts), texts);
        const Corpus target = batch_process(bundle, texts).corpus;
        opts.alignment = align_dims(reduced, target).map;
      }
      const VerificationReport report = verify(vset, bundle, *suspect, opts);
      write_json_file(report.to_json(), g.output(vf_report));
      std::fputs(report.to_table().c_str(), stdout);
    };
  });

  // attack
  auto* atk = app.add_subcommand("attack", "attacker-side tools");
  atk->require_subcommand(1);

  std::string cse_in, cse_out;
  CseConfig cse_cfg;
  EncoderOpts cse_enc;
  auto* cse = atk->add_subcommand("cse", "Clustering-Selection-Elimination on collected outputs");
  cse->add_option("--in", cse_in, "victim outputs with texts (.jsonl)")->required();
  cse->add_option("--out", cse_out)->required();
  cse->add_option("--clusters", cse_cfg.n_clusters)->capture_default_str();
  cse->add_option("--eliminate", cse_cfg.n_eliminate)->capture_default_str();
  cse->add_option("--fraction", cse_cfg.suspicious_fraction)->capture_default_str();
  cse_enc.add(cse, "surrogate-");
  cse->callback([&] {
    action = [&] {
      const fs::path in = g.input(cse_in);
      const Corpus victim = load_corpus(in);
      const auto texts = corpus_texts(victim, in);
      cse_cfg.seed = g.seed;
      cse_cfg.surrogate = encoder_from_json(cse_enc.spec(), g.api_key);
      const CseResult res = cse_attack(victim, texts, cse_cfg);
      save_corpus(res.corpus, g.output(cse_out));
      std::printf("removed %ld directions from %zu embeddings (%zu suspicious)\n", static_cast<long>(res.removed.rows()),
                  res.corpus.size(), res.suspicious.size());
    };
  });

  std::string dim_in, dim_out;
  std::size_t dim_d = 48;
  auto* dim = atk->add_subcommand("dim", "PCA dimensionality reduction of collected outputs");
  dim->add_option("--in", dim_in)->required();
  dim->add_option("--out", dim_out)->required();
  dim->add_option("--d-prime", dim_d)->capture_default_str();
  dim->callback([&] {
    action = [&] {
      const DimAttackResult res = dim_attack(load_corpus(g.input(dim_in)), dim_d);
      save_corpus(res.corpus, g.output(dim_out));
      std::printf("reduced to %zu dims, %.4f of variance retained\n", res.corpus.dim(), res.variance_retained);
    };
  });

  std::string det_texts, det_out;
  DetectorTrainConfig det_cfg;
  auto* det = atk->add_subcommand("detect", "train the Detect-Sampling abnormal-query detector");
  det->add_option("--texts", det_texts, "natural texts, one per line")->required();
  det->add_option("--out", det_out, "detector JSON")->required();
  det->add_option("--min-normal", det_cfg.min_normal)->capture_default_str();
  det->callback([&] {
    action = [&] {
      det_cfg.seed = g.seed;
      const auto texts = load_lines(g.input(det_texts));
      const DetectorModel model = train_detector(texts, generator_vocabulary(), det_cfg);
      write_json_file(model.to_json(), g.output(det_out));
      std::printf("detector trained on %zu texts\n", texts.size());
    };
  });

  std::string imi_in, imi_out;
  double imi_ridge = 1e-3;
  EncoderOpts imi_enc;
  auto* imi = atk->add_subcommand("imitate", "fit an imitation encoder to collected outputs");
  imi->add_option("--in", imi_in, "victim outputs with texts (.jsonl)")->required();
  imi->add_option("--out", imi_out, "imitator JSON")->required();
  imi->add_option("--ridge", imi_ridge)->capture_default_str();
  imi_enc.add(imi, "surrogate-");
  imi->callback([&] {
    action = [&] {
      const fs::path in = g.input(imi_in);
      const Corpus victim = load_corpus(in);
      const auto texts = corpus_texts(victim, in);
      const json spec = imi_enc.spec();
      ImitatorModel model = train_imitator(texts, victim, encoder_from_json(spec, g.api_key), imi_ridge);
      model.surrogate_spec = spec;
      write_json_file(model.to_json(), g.output(imi_out));
      std::printf("imitator %zu -> %zu dims, training mse %.6g\n", imi_enc.dim, model.dim(), model.training_mse);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (action) action();
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "semmark: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "semmark: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "semmark: " << e.what() << '\n';
    return kExitUsage;
  }
}
