#pragma once

// Small, fast provider bundle for unit tests (untrained mapper).

#include <memory>
#include <string>
#include <vector>

#include "semmark/mapper.hpp"
#include "semmark/partition.hpp"
#include "semmark/provider.hpp"
#include "semmark/rng.hpp"
#include "semmark/textgen.hpp"
#include "semmark/weighting.hpp"

namespace semmark::testing {

inline ProviderBundle small_bundle(std::uint64_t seed = 1, std::size_t surrogate_n = 400, double alpha = 0.5) {
  SyntheticEncoderConfig ecfg;
  ecfg.seed = seed;
  auto enc = std::make_shared<SyntheticEncoder>(ecfg);
  const auto texts = generate_sentences(surrogate_n, derive_seed(seed, "fixture/surrogate"));
  const Corpus s = Corpus::from_vectors(enc->encode(texts), texts);
  LshPartitioner part = fit_partitioner(s, 6, 6, alpha, seed);
  std::shared_ptr<const LofIndex> lof;
  WeightConfig w;
  if (s.size() > w.k) {
    auto idx = std::make_shared<LofIndex>(s.matrix(), w.k);
    w = fit_weight_bounds(*idx);
    lof = idx;
  }
  nlohmann::json config{{"encoder", encoder_to_json(ecfg)}};
  return ProviderBundle{enc, std::move(part), init_mapper(ecfg.dim, 0.5, seed), std::move(lof), w, config};
}

}  // namespace semmark::testing
