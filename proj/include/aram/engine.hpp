#pragma once

/**
 * Masked-diffusion denoising loop with per-token guidance.
 *
 * A decode starts from an all-masked answer region of length L and runs T
 * denoising steps (T <= L). Each step:
 *
 *   1. queries the backend once for the prior pass and once for the
 *      conditional pass (the conditional pass only, for NoGuidance),
 *      each request covering every masked position;
 *   2. computes guidance diagnostics and guided logits for every masked
 *      position independently;
 *   3. samples one candidate token per masked position;
 *   4. commits the best k = ceil(masked / remaining_steps) candidates
 *      according to the unmasking policy.
 *
 * Committed tokens are never re-masked.
 */

#include "aram/backend.hpp"
#include "aram/core_math.hpp"
#include "aram/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aram {

// Token value carried at masked positions of a BackendRequest.
inline constexpr TokenId kMaskToken = -1;

struct SequenceState {
  std::vector<TokenId> tokens;
  std::vector<bool> masked;
  int step = 0;
  int total_steps = 0;

  std::size_t length() const noexcept { return tokens.size(); }
  std::size_t masked_count() const;
  std::vector<std::size_t> masked_positions() const;

  bool operator==(const SequenceState&) const = default;
};

enum class UnmaskPolicy { LowConfidence, Entropy, Random };

std::string_view to_string(UnmaskPolicy policy);
UnmaskPolicy parse_unmask_policy(std::string_view text);

struct SamplerConfig {
  double temperature = 0.0;  // 0 means argmax
  double top_p = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PositionRecord {
  std::size_t position = 0;
  bool was_masked = true;
  GuidanceDiagnostics diagnostics;
  TokenId candidate = kMaskToken;
  std::optional<TokenId> chosen_token;  // set when committed this step
  double confidence = 0.0;              // guided probability of the candidate
  double entropy = 0.0;                 // entropy of the guided distribution
};

struct StepTrace {
  int step = 0;
  std::vector<PositionRecord> records;  // one per masked position, ascending
};

struct PromptInput {
  std::string query;
  std::vector<std::string> contexts;
};

struct DecodeConfig {
  GuidanceConfig guidance;
  SamplerConfig sampler;
  UnmaskPolicy unmask = UnmaskPolicy::LowConfidence;
  std::size_t length = 32;
  int steps = 32;

  void validate() const;
};

struct DecodeResult {
  std::vector<TokenId> tokens;
  std::string text;
  std::vector<StepTrace> trace;
  int nfe_count = 0;
  int steps_executed = 0;
  double backend_latency_ms = 0.0;
  double wall_time_ms = 0.0;
};

// --- prompt convention ---------------------------------------------------

inline constexpr std::string_view kNoContextText = "No relevant context available.";

// "Passage 1: ...\nPassage 2: ..." or kNoContextText when empty.
std::string render_context_block(const std::vector<std::string>& contexts);
std::string render_prompt(const PromptInput& input);

// --- operations ----------------------------------------------------------

// All-masked state at step T. Throws InvalidConfig unless 1 <= T <= L.
SequenceState init_state(std::size_t length, int steps);

// ceil(masked / remaining_steps), capped at the masked count.
std::size_t plan_unmask_count(const SequenceState& state);

// Temperature 0: argmax with lowest-index ties. Otherwise temperature
// scaling, nucleus truncation to the smallest descending-probability prefix
// with mass >= top_p, then a draw from `rng`.
TokenId sample_token(const LogitVector& logits, const SamplerConfig& sampler, Rng& rng);

struct PositionScore {
  std::size_t position = 0;
  double confidence = 0.0;
  double entropy = 0.0;
};

// Positions to commit, ascending. Ties go to the lowest position index.
std::vector<std::size_t> select_positions(const std::vector<PositionScore>& scores,
                                          UnmaskPolicy policy, std::size_t k, Rng& rng);

struct StepOutcome {
  SequenceState state;
  StepTrace trace;
  int nfe = 0;
  double backend_latency_ms = 0.0;
};

// One reverse step. On any error `state` is untouched and `rng` has not
// been advanced.
StepOutcome denoise_step(const SequenceState& state, const LogitBackend& backend,
                         const PromptInput& prompt, const GuidanceConfig& guidance,
                         const SamplerConfig& sampler, UnmaskPolicy unmask, Rng& rng);

// Runs steps from `state` until nothing is masked or the step counter hits 0.
DecodeResult decode_from(SequenceState state, const PromptInput& prompt,
                         const DecodeConfig& config, const LogitBackend& backend);

DecodeResult decode(const PromptInput& prompt, const DecodeConfig& config,
                    const LogitBackend& backend);

// Joins token strings with spaces, dropping the backend's padding token.
// Falls back to decimal ids when the backend has no vocabulary.
std::string detokenize(const std::vector<TokenId>& tokens, const LogitBackend& backend);

}  // namespace aram
