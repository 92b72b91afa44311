#include "aram/engine.hpp"
#include "aram/errors.hpp"
#include "aram/toy_backends.hpp"
#include "aram/trace.hpp"

#include "support/fixed_backend.hpp"
#include "support/paths.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace aram;
using aram::testing::FixedBackend;

namespace {

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DecodeConfig small_config(Policy policy, double temperature = 0.0) {
  DecodeConfig cfg;
  cfg.length = 6;
  cfg.steps = 3;
  cfg.guidance.policy = policy;
  cfg.sampler.temperature = temperature;
  cfg.sampler.top_p = 1.0;
  cfg.sampler.seed = 42;
  return cfg;
}

FixedBackend six_position_backend() {
  return FixedBackend(
      {{0.1, 1.4, -0.3, 0.2}, {2.0, 0.0, 0.3, -1.0}, {0.0, 0.0, 0.9, 0.1},
       {-0.5, 0.4, 0.4, 1.2}, {1.0, 1.0, 0.0, 0.2}, {0.3, -0.2, 0.8, 0.7}},
      {{1.2, 0.1, 0.0, 0.2}, {0.0, 0.3, 1.1, -0.2}, {0.9, 0.0, 0.1, 0.1},
       {0.2, 0.2, 0.2, 0.2}, {0.0, 1.5, 0.3, 0.0}, {0.6, 0.6, -0.4, 0.1}});
}

}  // namespace

TEST_CASE("prompt rendering") {
  CHECK(render_context_block({}) == kNoContextText);
  CHECK(render_context_block({"a", "b"}) == "Passage 1: a\nPassage 2: b");
  const std::string p = render_prompt({"who?", {"x"}});
  CHECK(p.find("who?") != std::string::npos);
  CHECK(p.find("Passage 1: x") != std::string::npos);
}

TEST_CASE("init_state and unmask schedule") {
  SequenceState s = init_state(10, 4);
  CHECK(s.masked_count() == 10);
  CHECK(s.step == 4);
  CHECK(s.total_steps == 4);
  for (TokenId t : s.tokens) CHECK(t == kMaskToken);

  std::vector<std::size_t> schedule;
  while (s.step > 0) {
    const std::size_t k = plan_unmask_count(s);
    schedule.push_back(k);
    const auto pos = s.masked_positions();
    for (std::size_t i = 0; i < k; ++i) {
      s.masked[pos[i]] = false;
      s.tokens[pos[i]] = 0;
    }
    --s.step;
  }
  CHECK(schedule == std::vector<std::size_t>{3, 3, 2, 2});
  CHECK(s.masked_count() == 0);

  CHECK_THROWS_AS(init_state(3, 4), Error);
  CHECK_THROWS_AS(init_state(3, 0), Error);
  CHECK_THROWS_AS(init_state(0, 0), Error);
}

TEST_CASE("schedule commits everything for every L and T") {
  for (std::size_t length = 1; length <= 24; ++length) {
    for (int steps = 1; steps <= static_cast<int>(length); ++steps) {
      SequenceState s = init_state(length, steps);
      std::size_t total = 0;
      while (s.step > 0) {
        const std::size_t k = plan_unmask_count(s);
        CHECK(k >= 1);
        total += k;
        const auto pos = s.masked_positions();
        for (std::size_t i = 0; i < k; ++i) s.masked[pos[i]] = false;
        --s.step;
      }
      CHECK(total == length);
    }
  }
}

TEST_CASE("sample_token") {
  Rng rng(1);
  SamplerConfig greedy;
  greedy.temperature = 0.0;
  CHECK(sample_token(LogitVector({0.1, 2.0, 1.0}), greedy, rng) == 1);
  CHECK(sample_token(LogitVector({3.0, 3.0, 1.0}), greedy, rng) == 0);

  SUBCASE("nucleus drops the tail") {
    SamplerConfig s;
    s.temperature = 1.0;
    s.top_p = 0.7;
    const LogitVector l({std::log(0.5), std::log(0.3), std::log(0.2)});
    for (int i = 0; i < 2000; ++i) CHECK(sample_token(l, s, rng) != 2);
  }

  SUBCASE("draw frequencies follow the distribution") {
    SamplerConfig s;
    s.temperature = 1.0;
    s.top_p = 1.0;
    const std::vector<double> p{0.2, 0.3, 0.5};
    const LogitVector l({std::log(p[0]), std::log(p[1]), std::log(p[2])});
    std::vector<int> counts(3, 0);
    const int n = 40000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_token(l, s, rng))];
    for (std::size_t i = 0; i < 3; ++i) {
      const double se = std::sqrt(p[i] * (1 - p[i]) / n);
      CHECK(std::abs(counts[i] / static_cast<double>(n) - p[i]) < 5 * se);
    }
  }

  SUBCASE("same seed, same draws") {
    SamplerConfig s;
    s.temperature = 0.8;
    const LogitVector l({0.1, 0.4, 0.2, 0.0});
    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_token(l, s, a) == sample_token(l, s, b));
  }
}

TEST_CASE("sampler validation") {
  SamplerConfig s;
  s.temperature = -1.0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = SamplerConfig{};
  s.top_p = 0.0;
  CHECK_THROWS_AS(s.validate(), Error);
  s.top_p = 1.5;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("select_positions") {
  Rng rng(3);
  const std::vector<PositionScore> scores{
      {4, 0.9, 0.2}, {1, 0.5, 0.1}, {7, 0.9, 0.8}, {2, 0.3, 0.1}};
  CHECK(select_positions(scores, UnmaskPolicy::LowConfidence, 1, rng) ==
        std::vector<std::size_t>{4});
  CHECK(select_positions(scores, UnmaskPolicy::LowConfidence, 2, rng) ==
        std::vector<std::size_t>{4, 7});
  CHECK(select_positions(scores, UnmaskPolicy::Entropy, 1, rng) == std::vector<std::size_t>{1});
  CHECK(select_positions(scores, UnmaskPolicy::Entropy, 3, rng) ==
        std::vector<std::size_t>{1, 2, 4});
  const auto r = select_positions(scores, UnmaskPolicy::Random, 2, rng);
  CHECK(r.size() == 2);
  CHECK(r[0] < r[1]);
  CHECK_THROWS_AS(select_positions(scores, UnmaskPolicy::Random, 5, rng), Error);
}

TEST_CASE("unmask policy names") {
  for (auto p : {UnmaskPolicy::LowConfidence, UnmaskPolicy::Entropy, UnmaskPolicy::Random}) {
    CHECK(parse_unmask_policy(to_string(p)) == p);
  }
  CHECK_THROWS_AS(parse_unmask_policy("nope"), Error);
}

TEST_CASE("decode: NFE accounting and monotone unmasking") {
  const FixedBackend backend = six_position_backend();
  const PromptInput prompt{"q", {"ctx"}};

  const DecodeResult guided = decode(prompt, small_config(Policy::aram()), backend);
  CHECK(guided.steps_executed == 3);
  CHECK(guided.nfe_count == 6);
  CHECK(guided.trace.size() == 3);
  CHECK(guided.trace[0].step == 3);
  CHECK(guided.trace[0].records.size() == 6);
  CHECK(guided.trace[1].records.size() == 4);
  CHECK(guided.trace[2].records.size() == 2);
  for (TokenId t : guided.tokens) CHECK(t != kMaskToken);

  // a committed position never reappears
  std::vector<bool> committed(6, false);
  for (const auto& step : guided.trace) {
    for (const auto& rec : step.records) {
      CHECK_FALSE(committed[rec.position]);
      if (rec.chosen_token) {
        committed[rec.position] = true;
        CHECK(*rec.chosen_token == guided.tokens[rec.position]);
      }
      CHECK(rec.diagnostics.lambda >= 0.0);
      CHECK(rec.diagnostics.lambda <= 1.0);
    }
  }

  const DecodeResult plain = decode(prompt, small_config(Policy::no_guidance()), backend);
  CHECK(plain.nfe_count == 3);
}

TEST_CASE("decode: degenerate scales reduce to single passes") {
  const FixedBackend backend = six_position_backend();
  const PromptInput with_ctx{"q", {"ctx"}};
  const PromptInput without_ctx{"q", {}};

  for (double temperature : {0.0, 1.0}) {
    CAPTURE(temperature);
    const auto cond_only = decode(with_ctx, small_config(Policy::no_guidance(), temperature), backend);
    const auto prior_only =
        decode(without_ctx, small_config(Policy::no_guidance(), temperature), backend);

    const auto static_one = decode(with_ctx, small_config(Policy::static_cfg(1.0), temperature), backend);
    CHECK(static_one.tokens == cond_only.tokens);

    const auto static_zero =
        decode(with_ctx, small_config(Policy::static_cfg(0.0), temperature), backend);
    CHECK(static_zero.tokens == prior_only.tokens);

    DecodeConfig zero_max = small_config(Policy::aram(), temperature);
    zero_max.guidance.lambda_max = 0.0;
    const auto aram_zero = decode(with_ctx, zero_max, backend);
    CHECK(aram_zero.tokens == prior_only.tokens);
    for (const auto& step : aram_zero.trace) {
      for (const auto& rec : step.records) CHECK(rec.diagnostics.lambda == 0.0);
    }
  }
}

TEST_CASE("decode: identical inputs give identical traces") {
  const FixedBackend backend = six_position_backend();
  const PromptInput prompt{"q", {"ctx"}};
  for (auto unmask : {UnmaskPolicy::LowConfidence, UnmaskPolicy::Entropy, UnmaskPolicy::Random}) {
    DecodeConfig cfg = small_config(Policy::aram(), 0.9);
    cfg.unmask = unmask;
    const auto a = decode(prompt, cfg, backend);
    const auto b = decode(prompt, cfg, backend);
    CHECK(a.tokens == b.tokens);
    std::ostringstream sa, sb;
    write_trace_jsonl(sa, flatten_trace("r", a.trace));
    write_trace_jsonl(sb, flatten_trace("r", b.trace));
    CHECK(sa.str() == sb.str());
  }
}

TEST_CASE("decode: per-position guidance depends only on that position") {
  const FixedBackend base = six_position_backend();
  FixedBackend changed(
      {{0.1, 1.4, -0.3, 0.2}, {-3.0, 2.0, 0.3, 4.0}, {0.0, 0.0, 0.9, 0.1},
       {-0.5, 0.4, 0.4, 1.2}, {1.0, 1.0, 0.0, 0.2}, {0.3, -0.2, 0.8, 0.7}},
      {{1.2, 0.1, 0.0, 0.2}, {0.0, 0.3, 1.1, -0.2}, {0.9, 0.0, 0.1, 0.1},
       {0.2, 0.2, 0.2, 0.2}, {0.0, 1.5, 0.3, 0.0}, {0.6, 0.6, -0.4, 0.1}});
  const SequenceState s = init_state(6, 3);
  const PromptInput prompt{"q", {"ctx"}};
  GuidanceConfig g;
  SamplerConfig sampler;
  Rng r1(0), r2(0);
  const auto a = denoise_step(s, base, prompt, g, sampler, UnmaskPolicy::LowConfidence, r1);
  const auto b = denoise_step(s, changed, prompt, g, sampler, UnmaskPolicy::LowConfidence, r2);
  for (std::size_t i = 0; i < 6; ++i) {
    if (i == 1) {
      CHECK(a.trace.records[i].diagnostics != b.trace.records[i].diagnostics);
    } else {
      CHECK(a.trace.records[i].diagnostics == b.trace.records[i].diagnostics);
      CHECK(a.trace.records[i].candidate == b.trace.records[i].candidate);
    }
  }
}

TEST_CASE("denoise_step leaves state and rng untouched on backend errors") {
  struct Broken final : LogitBackend {
    BackendResponse query(const BackendRequest&) const override {
      BackendResponse r;
      r.logits.emplace_back(std::vector<double>{0.0, 0.0});
      return r;
    }
    std::size_t vocab_size() const override { return 2; }
    std::string model_id() const override { return "broken"; }
  } broken;
  const SequenceState s = init_state(3, 3);
  Rng rng(5);
  Rng reference(5);
  try {
    denoise_step(s, broken, {"q", {"c"}}, GuidanceConfig{}, SamplerConfig{},
                 UnmaskPolicy::LowConfidence, rng);
    FAIL("expected a protocol error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Protocol);
  }
  CHECK(rng.next() == reference.next());

  DecodeConfig cfg;
  cfg.length = 3;
  cfg.steps = 3;
  try {
    decode({"q", {"c"}}, cfg, broken);
    FAIL("expected a protocol error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("step 3") != std::string::npos);
  }
}

TEST_CASE("golden trace from the table backend") {
  const TableBackend backend(load_toy_model_spec(testing::source_path("data/toy_table.json")));
  DecodeConfig cfg;
  cfg.length = 3;
  cfg.steps = 3;
  const auto result = decode({"is it raining", {"the forecast says rain"}}, cfg, backend);
  CHECK(result.tokens == std::vector<TokenId>{1, 1, 2});
  CHECK(result.text == "no no");
  std::ostringstream out;
  write_trace_jsonl(out, flatten_trace("golden", result.trace));
  CHECK(out.str() == read_all(testing::source_path("tests/fixtures/golden/toy_trace.jsonl")));
}
