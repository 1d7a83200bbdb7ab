#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "sembid/errors.hpp"
#include "sembid/sembid_model.hpp"

using namespace sembid;

namespace {

std::int64_t closed_form(const ModelConfig& c) {
  const std::int64_t d = c.d_model, f = c.d_ff;
  const std::int64_t semantic = c.tokens.count() * (2048 * d + d);
  const std::int64_t numeric = (1 * d + d + d * d + d) * 2 + (16 * d + d + d * d + d);
  const std::int64_t embed = 48 * d + (3 + c.tokens.count()) * d + 2 * d;
  const std::int64_t attn = 4 * (d * d + d);
  const std::int64_t ffn = d * f + f + f * d + d;
  const std::int64_t block = attn + ffn + 4 * d;
  return semantic + numeric + embed + c.layers * block + 2 * d + d + 1;
}

Tensor<double> copy_of(const Tensor<double>& t) {
  return Tensor<double>::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

}  // namespace

TEST_CASE("token set parsing") {
  CHECK(TokenSet::parse("all").count() == 3);
  CHECK(TokenSet::parse("none").count() == 0);
  const TokenSet ts = TokenSet::parse("task,strategy");
  CHECK(ts.task);
  CHECK_FALSE(ts.history);
  CHECK(ts.to_string() == "task,strategy");
  CHECK(TokenSet::ablate("strategy").to_string() == "task,history");
  CHECK(TokenSet::ablate("none").count() == 3);
  CHECK(TokenSet::ablate("all").count() == 0);
  CHECK_THROWS_AS(TokenSet::parse("prices"), ConfigError);
}

TEST_CASE("role order and sequence lengths") {
  ModelConfig c;
  CHECK(c.step_roles() ==
        std::vector<Role>{Role::kTask, Role::kRtg, Role::kHistory, Role::kStrategy, Role::kState, Role::kAction});
  c.tokens = TokenSet::ablate("strategy");
  CHECK(c.step_roles() == std::vector<Role>{Role::kTask, Role::kRtg, Role::kHistory, Role::kState, Role::kAction});
  c.tokens = TokenSet::none();
  CHECK(c.step_roles() == std::vector<Role>{Role::kRtg, Role::kState, Role::kAction});

  const auto e = fixture::encoded(Scenario::kHigh, 2, 3);
  struct Case {
    TokenSet tokens;
    std::int64_t length;
  };
  for (const Case& k : {Case{TokenSet::all(), 288}, Case{TokenSet::none(), 144},
                        Case{TokenSet::ablate("strategy"), 240}}) {
    const ModelConfig mc = fixture::tiny_config(e.data.stats, k.tokens);
    const SemBidModel<double> model(mc, 1);
    const auto mb = fixture::batch_of<double>(e.data, 1, 0, 48, mc, e.texts.get());
    const auto seq = model.build_token_sequence(mb);
    CHECK(seq.length() == k.length);
    CHECK(seq.tokens.shape() == Shape{k.length, 16});
    CHECK(seq.state_positions.size() == 48);
    const auto roles = mc.step_roles();
    for (std::size_t s = 0; s < 48; ++s) {
      CHECK(seq.roles[static_cast<std::size_t>(seq.state_positions[s])] == Role::kState);
      CHECK(seq.state_positions[s] == static_cast<std::int64_t>(s * roles.size() + roles.size() - 2));
    }
    CHECK(model.predict_actions(mb).size() == 48);
  }
}

TEST_CASE("parameter count matches the closed form") {
  const NormalizationStats stats;
  for (TokenSet ts : {TokenSet::all(), TokenSet::none(), TokenSet::ablate("history")}) {
    ModelConfig c;
    c.tokens = ts;
    CHECK(c.expected_parameter_count() == closed_form(c));
    const SemBidModel<float> full(c, 0);
    CHECK(full.parameter_count() == closed_form(c));
  }
  const ModelConfig tiny = fixture::tiny_config(stats);
  CHECK(SemBidModel<float>(tiny, 0).parameter_count() == closed_form(tiny));
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig c;
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.context_window = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.semantic_input_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config json round trip") {
  ModelConfig c;
  c.layers = 3;
  c.tokens = TokenSet::parse("history");
  c.action_mean = 12.5;
  const ModelConfig r = ModelConfig::from_json(c.to_json());
  CHECK(r.layers == 3);
  CHECK(r.tokens.to_string() == "history");
  CHECK(r.action_mean == 12.5);
}

TEST_CASE("future and same-step action tokens do not affect predictions") {
  const auto e = fixture::encoded(Scenario::kHigh, 2, 5);
  const ModelConfig mc = fixture::tiny_config(e.data.stats);
  const SemBidModel<double> model(mc, 2);
  const auto mb = fixture::batch_of<double>(e.data, 2, 0, 12, mc, e.texts.get());
  const auto seq = model.build_token_sequence(mb);
  const Tensor<double> base = model.forward_tokens(seq, false, nullptr);
  const std::int64_t R = mc.tokens_per_step(), L = 12, len = seq.length(), d = mc.d_model;
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t t = static_cast<std::int64_t>(rng.index(L));
    auto pert = seq;
    pert.tokens = copy_of(seq.tokens);
    auto data = pert.tokens.mutable_data();
    const std::int64_t first = seq.state_positions[static_cast<std::size_t>(t)] + 1;  // same-step action on
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t p = first; p < len; ++p)
        for (std::int64_t c = 0; c < d; ++c) data[static_cast<std::size_t>((b * len + p) * d + c)] += rng.normal();
    const Tensor<double> out = model.forward_tokens(pert, false, nullptr);
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t s = 0; s <= t; ++s) CHECK(out.data()[b * L + s] == base.data()[b * L + s]);
  }
  CHECK(R == 6);

  // Input level: later states and the same-step previous-action input.
  auto mb2 = mb;
  for (std::int64_t s = 6; s < L; ++s)
    for (int k = 0; k < kStateDim; ++k) mb2.states[static_cast<std::size_t>(s * kStateDim + k)] += 3.0;
  mb2.actions[5] += 4.0;
  const auto p1 = model.predict_actions(mb);
  const auto p2 = model.predict_actions(mb2);
  for (int s = 0; s <= 5; ++s) CHECK(p1[static_cast<std::size_t>(s)] == p2[static_cast<std::size_t>(s)]);
  CHECK(p1[6] != p2[6]);
}

TEST_CASE("padded steps with garbage targets contribute nothing") {
  const auto e = fixture::encoded(Scenario::kHigh, 2, 6);
  const ModelConfig mc = fixture::tiny_config(e.data.stats);
  SemBidModel<double> model(mc, 3);
  // Start near the end so the window is padded.
  auto mb = fixture::batch_of<double>(e.data, 2, 40, 16, mc, e.texts.get());
  int padded = 0;
  for (double m : mb.mask) padded += m == 0.0;
  REQUIRE(padded == 2 * 8);

  auto grads = [&](const ModelBatch<double>& b) {
    model.params().zero_grad();
    Tensor<double> loss = mse_loss(model.forward(b, false, nullptr), std::span<const double>(b.targets),
                                   std::span<const double>(b.mask));
    const double v = loss.item();
    loss.backward();
    std::vector<double> g{v};
    for (const auto& p : model.params().params())
      if (p.tensor.has_grad()) g.insert(g.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    return g;
  };
  const auto clean = grads(mb);
  for (std::size_t i = 0; i < mb.mask.size(); ++i)
    if (mb.mask[i] == 0.0) mb.targets[i] = 1e6;
  const auto dirty = grads(mb);
  CHECK(clean == dirty);
}

TEST_CASE("zero semantic vector gives the bias path and tokens are deterministic") {
  const auto e = fixture::encoded(Scenario::kHigh, 1, 8);
  const ModelConfig mc = fixture::tiny_config(e.data.stats);
  const SemBidModel<double> a(mc, 4), b(mc, 4);
  const auto mb = fixture::batch_of<double>(e.data, 1, 0, 4, mc, e.texts.get());
  const auto s1 = a.build_token_sequence(mb), s2 = b.build_token_sequence(mb);
  CHECK(std::equal(s1.tokens.data().begin(), s1.tokens.data().end(), s2.tokens.data().begin()));
  CHECK(a.params().checksum() == b.params().checksum());
  CHECK(SemBidModel<double>(mc, 5).params().checksum() != a.params().checksum());
}

TEST_CASE("missing semantic text for an enabled role is an error") {
  const auto e = fixture::encoded(Scenario::kHigh, 1, 9, /*with_text=*/false);
  const ModelConfig mc = fixture::tiny_config(e.data.stats);
  CHECK_THROWS_AS(fixture::batch_of<double>(e.data, 1, 0, 4, mc, e.texts.get()), DomainError);
  const ModelConfig dt = fixture::tiny_config(e.data.stats, TokenSet::none());
  CHECK_NOTHROW(fixture::batch_of<double>(e.data, 1, 0, 4, dt, nullptr));
}
