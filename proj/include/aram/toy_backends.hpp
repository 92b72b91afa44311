#pragma once

// Deterministic in-process backends for tests and scenario studies.

#include "aram/backend.hpp"
#include "aram/core_math.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aram {

// ---------------------------------------------------------------------------
// Table backend

enum class TableMode { Position, Pattern };

// JSON layout:
//   {"vocab": [...], "mode": "position"|"pattern",
//    "tables": {"cond": {key: [logits]}, "prior": {key: [logits]}},
//    "default_logits": [...], "pad_token": str (optional),
//    "model_id": str (optional)}
// Keys are "<position>" or, in pattern mode, "<position>@<mask pattern>"
// where the pattern has one '1' (masked) or '0' per position. Pattern mode
// falls back to the position key, then to default_logits.
struct ToyModelSpec {
  std::vector<std::string> vocab;
  TableMode mode = TableMode::Position;
  std::map<std::string, std::vector<double>> cond_tables;
  std::map<std::string, std::vector<double>> prior_tables;
  std::vector<double> default_logits;
  std::optional<std::string> pad_token;
  std::string model_id = "toy-table";

  void validate() const;
};

ToyModelSpec parse_toy_model_spec(std::string_view json_text);
ToyModelSpec load_toy_model_spec(const std::string& path);

class TableBackend final : public LogitBackend {
 public:
  explicit TableBackend(ToyModelSpec spec);

  BackendResponse query(const BackendRequest& request) const override;
  std::size_t vocab_size() const override { return spec_.vocab.size(); }
  std::string model_id() const override { return spec_.model_id; }
  std::optional<std::string> token_text(TokenId id) const override;
  std::optional<TokenId> padding_token() const override { return pad_id_; }

  const ToyModelSpec& spec() const noexcept { return spec_; }

 private:
  const std::vector<double>& lookup(const BackendRequest& request, std::size_t position) const;

  ToyModelSpec spec_;
  std::optional<TokenId> pad_id_;
};

// ---------------------------------------------------------------------------
// Conflict scenarios

enum class ScenarioKind { Reliable, Irrelevant, Conflicting };

std::string_view to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(std::string_view text);

// Per-position prior / conditional pairs around a single gold token.
//   Reliable:    p_cond[gold] >= 0.8, H(p_cond) <= 0.5 ln V, symmetric KL >= 1
//   Irrelevant:  total variation(p_cond, p_prior) <= 0.02
//   Conflicting: H(p_cond) >= 0.8 ln V and argmax p_cond != gold
struct ScenarioInstance {
  ScenarioKind kind = ScenarioKind::Reliable;
  TokenId gold_token = 0;
  std::vector<ProbVector> p_prior;
  std::vector<ProbVector> p_cond;
  std::uint64_t seed = 0;
};

// vocab_size >= 4. Candidates that miss the kind's constraints are
// rejected and redrawn from the same seeded stream.
ScenarioInstance generate_scenario(ScenarioKind kind, std::size_t vocab_size, std::uint64_t seed,
                                   std::size_t positions = 1);

// Serves an instance's distributions as log-probabilities, independent of
// the sequence state.
class ScenarioBackend final : public LogitBackend {
 public:
  explicit ScenarioBackend(ScenarioInstance instance);

  BackendResponse query(const BackendRequest& request) const override;
  std::size_t vocab_size() const override { return vocab_size_; }
  std::string model_id() const override { return "toy-scenario"; }

  const ScenarioInstance& instance() const noexcept { return instance_; }

 private:
  ScenarioInstance instance_;
  std::size_t vocab_size_;
  std::vector<LogitVector> prior_logits_;
  std::vector<LogitVector> cond_logits_;
};

// ---------------------------------------------------------------------------
// Count backend

inline constexpr double kDefaultContextWeight = 0.7;

// Lowercases, splits on whitespace and trims ASCII punctuation from both
// ends of every token; empty tokens are dropped.
std::vector<std::string> split_words(std::string_view text);

// Add-one smoothed unigram / left-neighbour bigram model.
//
// The prior at a masked position uses the bigram row of its left neighbour
// when that neighbour is known (for position 0 this is the last query
// word), otherwise the unigram. The conditional mixes the prior with the
// same smoothed counts restricted to words that occur in the contexts:
//
//   p_cond = (1 - w) p_prior + w r,   r(x) ∝ p_prior(x) [x in contexts]
//
// and r is uniform when no context word is in the vocabulary.
class CountBackend final : public LogitBackend {
 public:
  CountBackend(const std::vector<std::vector<std::string>>& corpus, double context_weight);

  BackendResponse query(const BackendRequest& request) const override;
  std::size_t vocab_size() const override { return vocab_.size(); }
  std::string model_id() const override { return "toy-count"; }
  std::optional<std::string> token_text(TokenId id) const override;

  std::optional<TokenId> token_id(std::string_view word) const;
  double context_weight() const noexcept { return context_weight_; }

  ProbVector prior_distribution(const BackendRequest& request, std::size_t position) const;
  ProbVector cond_distribution(const BackendRequest& request, std::size_t position) const;

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, TokenId, std::less<>> index_;
  std::vector<double> unigram_;                       // counts
  std::vector<std::map<TokenId, double>> bigram_;     // left -> right -> count
  std::vector<double> bigram_totals_;
  double total_ = 0.0;
  double context_weight_;
};

// One sequence per non-empty line, split with split_words.
std::vector<std::vector<std::string>> load_corpus(const std::string& path);

}  // namespace aram
