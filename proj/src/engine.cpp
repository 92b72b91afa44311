#include "aram/engine.hpp"

#include "aram/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace aram {

namespace {

// Cumulative-mass slack for nucleus truncation; softmax of ln(0.5), ln(0.4)
// can sum to 0.8999999999999999.
constexpr double kNucleusSlack = 1e-12;

[[noreturn]] void rethrow_at_step(const Error& e, int step) {
  throw Error(e.kind(), "step " + std::to_string(step) + ": " + e.what());
}

}  // namespace

std::vector<std::size_t> BackendRequest::masked_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i]) out.push_back(i);
  }
  return out;
}

void validate_response(const BackendRequest& request, const BackendResponse& response) {
  const auto positions = request.masked_positions();
  if (response.logits.size() < positions.size()) {
    fail(ErrorKind::Protocol, "response is missing logits for masked position " +
                                  std::to_string(positions[response.logits.size()]));
  }
  if (response.logits.size() > positions.size()) {
    fail(ErrorKind::Protocol, "response has " + std::to_string(response.logits.size()) +
                                  " logit vectors for " + std::to_string(positions.size()) +
                                  " masked positions");
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (response.logits[i].size() != request.vocab_size) {
      fail(ErrorKind::Protocol, "logits for position " + std::to_string(positions[i]) +
                                    " have width " + std::to_string(response.logits[i].size()) +
                                    ", expected vocab size " +
                                    std::to_string(request.vocab_size));
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t SequenceState::masked_count() const {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true));
}

std::vector<std::size_t> SequenceState::masked_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i]) out.push_back(i);
  }
  return out;
}

std::string_view to_string(UnmaskPolicy policy) {
  switch (policy) {
    case UnmaskPolicy::LowConfidence: return "low-confidence";
    case UnmaskPolicy::Entropy: return "entropy";
    case UnmaskPolicy::Random: return "random";
  }
  return "unknown";
}

UnmaskPolicy parse_unmask_policy(std::string_view text) {
  if (text == "low-confidence" || text == "confidence") return UnmaskPolicy::LowConfidence;
  if (text == "entropy") return UnmaskPolicy::Entropy;
  if (text == "random") return UnmaskPolicy::Random;
  fail(ErrorKind::InvalidConfig, "unknown unmask policy '" + std::string(text) + "'");
}

void SamplerConfig::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    fail(ErrorKind::InvalidConfig, "temperature must be >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    fail(ErrorKind::InvalidConfig, "top_p must be in (0, 1]");
  }
}

void DecodeConfig::validate() const {
  guidance.validate();
  sampler.validate();
  if (length < 1) fail(ErrorKind::InvalidConfig, "sequence length must be >= 1");
  if (steps < 1) fail(ErrorKind::InvalidConfig, "steps must be >= 1");
  if (static_cast<std::size_t>(steps) > length) {
    fail(ErrorKind::InvalidConfig, "steps (" + std::to_string(steps) +
                                       ") cannot exceed sequence length (" +
                                       std::to_string(length) + ")");
  }
}

// ---------------------------------------------------------------------------
// Prompt convention

std::string render_context_block(const std::vector<std::string>& contexts) {
  if (contexts.empty()) return std::string(kNoContextText);
  std::string out;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    if (i > 0) out += '\n';
    out += "Passage " + std::to_string(i + 1) + ": " + contexts[i];
  }
  return out;
}

std::string render_prompt(const PromptInput& input) {
  return "Context:\n" + render_context_block(input.contexts) + "\n\nQuestion: " + input.query;
}

// ---------------------------------------------------------------------------

SequenceState init_state(std::size_t length, int steps) {
  if (length < 1 || steps < 1) {
    fail(ErrorKind::InvalidConfig, "length and steps must both be >= 1");
  }
  if (static_cast<std::size_t>(steps) > length) {
    fail(ErrorKind::InvalidConfig, "steps (" + std::to_string(steps) +
                                       ") > length (" + std::to_string(length) +
                                       "): cannot unmask at least one token per step");
  }
  SequenceState s;
  s.tokens.assign(length, kMaskToken);
  s.masked.assign(length, true);
  s.step = steps;
  s.total_steps = steps;
  return s;
}

std::size_t plan_unmask_count(const SequenceState& state) {
  const std::size_t masked = state.masked_count();
  if (masked == 0) fail(ErrorKind::InvalidInput, "no masked positions left to plan");
  if (state.step < 1) fail(ErrorKind::InvalidInput, "no denoising steps remaining");
  const auto remaining = static_cast<std::size_t>(state.step);
  return std::min(masked, (masked + remaining - 1) / remaining);
}

TokenId sample_token(const LogitVector& logits, const SamplerConfig& sampler, Rng& rng) {
  const auto l = logits.values();
  if (l.empty()) fail(ErrorKind::InvalidInput, "cannot sample from empty logits");
  if (sampler.temperature == 0.0) {
    return static_cast<TokenId>(std::max_element(l.begin(), l.end()) - l.begin());
  }

  std::vector<double> scaled(l.begin(), l.end());
  for (double& v : scaled) v /= sampler.temperature;
  const ProbVector p = normalize_logits(LogitVector(std::move(scaled)));

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });

  std::size_t keep = order.size();
  if (sampler.top_p < 1.0) {
    double cumulative = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      cumulative += p[order[i]];
      if (cumulative >= sampler.top_p - kNucleusSlack) {
        keep = i + 1;
        break;
      }
    }
  }

  double kept_mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_mass += p[order[i]];
  const double u = rng.uniform() * kept_mass;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cumulative += p[order[i]];
    if (u < cumulative) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[keep - 1]);
}

std::vector<std::size_t> select_positions(const std::vector<PositionScore>& scores,
                                          UnmaskPolicy policy, std::size_t k, Rng& rng) {
  if (k > scores.size()) {
    fail(ErrorKind::InvalidInput, "cannot commit " + std::to_string(k) + " of " +
                                      std::to_string(scores.size()) + " masked positions");
  }
  std::vector<PositionScore> ranked = scores;
  std::sort(ranked.begin(), ranked.end(),
            [](const PositionScore& a, const PositionScore& b) { return a.position < b.position; });

  switch (policy) {
    case UnmaskPolicy::LowConfidence:
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const PositionScore& a, const PositionScore& b) {
                         return a.confidence > b.confidence;
                       });
      break;
    case UnmaskPolicy::Entropy:
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const PositionScore& a, const PositionScore& b) {
                         return a.entropy < b.entropy;
                       });
      break;
    case UnmaskPolicy::Random:
      // Partial Fisher-Yates over the index-sorted list.
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(ranked.size() - i));
        std::swap(ranked[i], ranked[j]);
      }
      break;
  }

  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  for (std::size_t i = 0; i < k; ++i) chosen.push_back(ranked[i].position);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

StepOutcome denoise_step(const SequenceState& state, const LogitBackend& backend,
                         const PromptInput& prompt, const GuidanceConfig& guidance,
                         const SamplerConfig& sampler, UnmaskPolicy unmask, Rng& rng) {
  if (state.step < 1) fail(ErrorKind::InvalidInput, "state has no remaining steps");
  const auto positions = state.masked_positions();
  if (positions.empty()) fail(ErrorKind::InvalidInput, "state has no masked positions");

  const std::size_t vocab = backend.vocab_size();
  BackendRequest cond_request{prompt.query, prompt.contexts, state.tokens, state.masked,
                              /*conditioned=*/!prompt.contexts.empty(), vocab};
  BackendRequest prior_request{prompt.query, {}, state.tokens, state.masked,
                               /*conditioned=*/false, vocab};

  StepOutcome out;
  BackendResponse prior_response;
  if (guidance.policy.needs_prior()) {
    prior_response = backend.query(prior_request);
    ++out.nfe;
    validate_response(prior_request, prior_response);
    out.backend_latency_ms += prior_response.latency_ms;
  }
  BackendResponse cond_response = backend.query(cond_request);
  ++out.nfe;
  validate_response(cond_request, cond_response);
  out.backend_latency_ms += cond_response.latency_ms;

  // Draws go to a copy so a throw below leaves `rng` untouched.
  Rng local_rng = rng;
  out.trace.step = state.step;
  out.trace.records.reserve(positions.size());
  std::vector<PositionScore> scores;
  scores.reserve(positions.size());
  const LogitVector empty_prior(std::vector<double>{});
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const LogitVector& prior =
        guidance.policy.needs_prior() ? prior_response.logits[i] : empty_prior;
    const GuidedOutput guided = policy_lambda_and_logits(cond_response.logits[i], prior, guidance);
    const TokenId candidate = sample_token(guided.logits, sampler, local_rng);
    const ProbVector dist = normalize_logits(guided.logits);

    PositionRecord rec;
    rec.position = positions[i];
    rec.diagnostics = guided.diagnostics;
    rec.candidate = candidate;
    rec.confidence = dist[static_cast<std::size_t>(candidate)];
    rec.entropy = entropy(dist);
    out.trace.records.push_back(rec);
    scores.push_back({rec.position, rec.confidence, rec.entropy});
  }

  const std::size_t k = plan_unmask_count(state);
  const auto chosen = select_positions(scores, unmask, k, local_rng);

  out.state = state;
  for (auto& rec : out.trace.records) {
    if (std::binary_search(chosen.begin(), chosen.end(), rec.position)) {
      rec.chosen_token = rec.candidate;
      out.state.tokens[rec.position] = rec.candidate;
      out.state.masked[rec.position] = false;
    }
  }
  out.state.step = state.step - 1;
  rng = local_rng;
  return out;
}

DecodeResult decode_from(SequenceState state, const PromptInput& prompt,
                         const DecodeConfig& config, const LogitBackend& backend) {
  config.guidance.validate();
  config.sampler.validate();
  const auto start = std::chrono::steady_clock::now();

  Rng rng(config.sampler.seed);
  DecodeResult result;
  while (state.step > 0 && state.masked_count() > 0) {
    const int step = state.step;
    try {
      StepOutcome outcome =
          denoise_step(state, backend, prompt, config.guidance, config.sampler, config.unmask, rng);
      state = std::move(outcome.state);
      result.trace.push_back(std::move(outcome.trace));
      result.nfe_count += outcome.nfe;
      result.backend_latency_ms += outcome.backend_latency_ms;
      ++result.steps_executed;
    } catch (const Error& e) {
      rethrow_at_step(e, step);
    }
  }
  if (state.masked_count() > 0) {
    fail(ErrorKind::Structural, "decode ended with " + std::to_string(state.masked_count()) +
                                    " masked positions");
  }

  result.tokens = state.tokens;
  result.text = detokenize(result.tokens, backend);
  result.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

DecodeResult decode(const PromptInput& prompt, const DecodeConfig& config,
                    const LogitBackend& backend) {
  config.validate();
  return decode_from(init_state(config.length, config.steps), prompt, config, backend);
}

std::string detokenize(const std::vector<TokenId>& tokens, const LogitBackend& backend) {
  const auto pad = backend.padding_token();
  std::string out;
  for (TokenId t : tokens) {
    if (pad && t == *pad) continue;
    const auto text = backend.token_text(t);
    if (!out.empty()) out += ' ';
    out += text ? *text : std::to_string(t);
  }
  return out;
}

}  // namespace aram
