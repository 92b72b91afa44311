#pragma once

#include "aram/distribution.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace aram {

using TokenId = int;

// One model query: logits for every masked position of `tokens`.
// `conditioned` selects p(x | x_t, q, C) over p(x | x_t, q).
struct BackendRequest {
  std::string query;
  std::vector<std::string> contexts;
  std::vector<TokenId> tokens;
  std::vector<bool> masked;
  bool conditioned = false;
  std::size_t vocab_size = 0;

  std::vector<std::size_t> masked_positions() const;
  bool operator==(const BackendRequest&) const = default;
};

struct BackendResponse {
  // One vector per masked position, in ascending position order.
  std::vector<LogitVector> logits;
  std::string model_id;
  double latency_ms = 0.0;
  // True when the backend serves normalized log-probabilities rather than
  // raw pre-softmax logits. Guidance is shift invariant so both work.
  bool log_probabilities = false;
};

// Source of conditional / prior logits. Implementations must tolerate
// concurrent query() calls from independent decodes.
class LogitBackend {
 public:
  virtual ~LogitBackend() = default;

  virtual BackendResponse query(const BackendRequest& request) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::string model_id() const = 0;

  // Token strings, when the backend owns its vocabulary.
  virtual std::optional<std::string> token_text(TokenId) const { return std::nullopt; }
  // Id of the answer padding token that detokenization drops, if any.
  virtual std::optional<TokenId> padding_token() const { return std::nullopt; }
};

// Throws Protocol unless `response` has one finite vector of the right width
// per masked position of `request`.
void validate_response(const BackendRequest& request, const BackendResponse& response);

}  // namespace aram
