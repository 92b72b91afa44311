#pragma once

// Client for the remote logit bridge (POST /v1/logits, GET /v1/health).
// The wire schema is documented in docs/bridge_protocol.md.

#include "aram/backend.hpp"

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

namespace aram {

struct BridgeEndpoint {
  std::string base_url;  // e.g. http://127.0.0.1:8765
  int timeout_ms = 30000;
  int max_retries = 2;
  int backoff_ms = 50;  // doubled after every failed attempt
  std::optional<std::string> expected_model_id;

  // Throws InvalidConfig unless the URL is http(s)://host[:port],
  // timeout_ms > 0, max_retries >= 0 and backoff_ms >= 0.
  void validate() const;
};

struct HttpResult {
  bool connected = true;  // false: no HTTP exchange happened
  int status = 0;
  std::string body;
  std::string transport_error;
};

// Minimal HTTP seam so tests can count and script exchanges.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResult post_json(const std::string& path, const std::string& body) = 0;
  virtual HttpResult get(const std::string& path) = 0;
};

// cpp-httplib transport; a fresh connection per exchange so it is safe to
// share between concurrent decodes.
std::shared_ptr<HttpTransport> make_http_transport(const BridgeEndpoint& endpoint);

// Canonical request body: sorted keys, no whitespace, masked tokens as -1.
std::string serialize_request(const BackendRequest& request);
BackendRequest parse_request(std::string_view body);

// Logits are written as shortest round-trip float32 decimals.
std::string serialize_response(const BackendResponse& response);
// Throws Protocol on any schema violation against `request`.
BackendResponse parse_response(std::string_view body, const BackendRequest& request);

// POST /v1/logits with retries on connection failure and HTTP 503.
// Transport: retries exhausted or unexpected 5xx. Protocol: HTTP 4xx or a
// malformed body. Identity: model_id differs from the expectation.
BackendResponse fetch_logits(const BridgeEndpoint& endpoint, HttpTransport& transport,
                             const BackendRequest& request);

struct BridgeHealth {
  std::string status;
  std::string model_id;
  std::size_t vocab_size = 0;
};

BridgeHealth fetch_health(const BridgeEndpoint& endpoint, HttpTransport& transport);

class BridgeBackend final : public LogitBackend {
 public:
  // Queries /v1/health for the vocabulary size and model id.
  BridgeBackend(BridgeEndpoint endpoint, std::shared_ptr<HttpTransport> transport);

  BackendResponse query(const BackendRequest& request) const override;
  std::size_t vocab_size() const override { return vocab_size_; }
  std::string model_id() const override { return model_id_; }

 private:
  BridgeEndpoint endpoint_;
  std::shared_ptr<HttpTransport> transport_;
  std::size_t vocab_size_ = 0;
  std::string model_id_;
};

}  // namespace aram
