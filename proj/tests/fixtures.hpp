#ifndef SEMBID_TESTS_FIXTURES_HPP_
#define SEMBID_TESTS_FIXTURES_HPP_

// Small datasets and models shared by the unit tests.

#include <memory>

#include "sembid/dataset.hpp"
#include "sembid/embedding.hpp"
#include "sembid/sembid_model.hpp"
#include "sembid/training.hpp"

namespace sembid::fixture {

struct Encoded {
  Dataset dataset;
  std::shared_ptr<TextTable> texts;
  EncodedDataset data;
};

inline Encoded encoded(Scenario scenario, int n, std::uint64_t seed, bool with_text = true) {
  Encoded e;
  e.dataset = generate_offline_dataset(MarketConfig::preset(scenario, seed), BehaviorMix{}, n, seed + 1);
  e.texts = std::make_shared<TextTable>(
      std::make_shared<SemanticEmbedder>(std::make_shared<HashEncoder>(), derive_seed(seed, "projection")));
  SemanticConfig sem = SemanticConfig::for_scenario(scenario);
  sem.template_seed = seed;
  e.data = encode_dataset(e.dataset, e.dataset.stats, sem, with_text ? e.texts.get() : nullptr);
  return e;
}

inline ModelConfig tiny_config(const NormalizationStats& stats, TokenSet tokens = TokenSet::all()) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.dropout = 0.0;
  c.tokens = tokens;
  return model_config_for(c, stats);
}

template <typename T>
ModelBatch<T> batch_of(const EncodedDataset& data, int n, int start, int steps, const ModelConfig& cfg,
                       TextTable* texts) {
  std::vector<const EncodedTrajectory*> trs;
  std::vector<int> starts;
  for (int i = 0; i < n; ++i) {
    trs.push_back(&data.trajectories[static_cast<std::size_t>(i) % data.trajectories.size()]);
    starts.push_back(start);
  }
  return assemble_batch<T>(trs, starts, steps, cfg, texts);
}

}  // namespace sembid::fixture

#endif  // SEMBID_TESTS_FIXTURES_HPP_
