#include "aram/bridge_client.hpp"

#include "aram/engine.hpp"
#include "aram/errors.hpp"

#include <httplib.h>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <thread>

namespace aram {

using nlohmann::json;

namespace {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

ParsedUrl parse_url(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) {
    fail(ErrorKind::InvalidConfig, "bridge URL must start with http:// (got '" + url + "')");
  }
  const std::size_t host_begin = scheme.size();
  const std::size_t slash = url.find('/', host_begin);
  ParsedUrl out;
  out.scheme_host_port = url.substr(0, slash);
  if (slash != std::string::npos) out.path_prefix = url.substr(slash);
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  const std::string host = out.scheme_host_port.substr(host_begin);
  if (host.empty() || host.front() == ':') {
    fail(ErrorKind::InvalidConfig, "bridge URL has no host: '" + url + "'");
  }
  const auto colon = host.rfind(':');
  if (colon != std::string::npos) {
    const std::string port = host.substr(colon + 1);
    int value = 0;
    const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
    if (port.empty() || ec != std::errc() || ptr != port.data() + port.size() || value < 1 ||
        value > 65535) {
      fail(ErrorKind::InvalidConfig, "bridge URL has an invalid port: '" + url + "'");
    }
  }
  return out;
}

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(const BridgeEndpoint& endpoint)
      : url_(parse_url(endpoint.base_url)), timeout_ms_(endpoint.timeout_ms) {}

  HttpResult post_json(const std::string& path, const std::string& body) override {
    auto client = make_client();
    return convert(client.Post(url_.path_prefix + path, body, "application/json"));
  }

  HttpResult get(const std::string& path) override {
    auto client = make_client();
    return convert(client.Get(url_.path_prefix + path));
  }

 private:
  httplib::Client make_client() const {
    httplib::Client client(url_.scheme_host_port);
    const auto timeout = std::chrono::milliseconds(timeout_ms_);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    return client;
  }

  static HttpResult convert(const httplib::Result& res) {
    HttpResult out;
    if (!res) {
      out.connected = false;
      out.transport_error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

  ParsedUrl url_;
  int timeout_ms_;
};

std::string float32_text(double value) {
  const auto f = static_cast<float>(value);
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, f);
  if (ec != std::errc()) fail(ErrorKind::Protocol, "cannot format logit");
  return std::string(buf, ptr);
}

json parse_body(std::string_view body, const char* what) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Protocol, std::string(what) + " is not valid JSON: " + e.what());
  }
}

std::string error_message(const std::string& body) {
  try {
    const json j = json::parse(body);
    if (j.is_object() && j.contains("error") && j.at("error").is_string()) {
      return j.at("error").get<std::string>();
    }
  } catch (const json::exception&) {
  }
  return body;
}

template <typename Attempt>
HttpResult with_retries(const BridgeEndpoint& endpoint, const std::string& what, Attempt attempt) {
  int delay = endpoint.backoff_ms;
  std::string last;
  for (int i = 0; i <= endpoint.max_retries; ++i) {
    if (i > 0 && delay > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      delay *= 2;
    }
    HttpResult r = attempt();
    if (!r.connected) {
      last = "connection failed: " + r.transport_error;
      continue;
    }
    if (r.status == 503) {
      last = "bridge busy (HTTP 503)";
      continue;
    }
    return r;
  }
  fail(ErrorKind::Transport, what + " failed after " + std::to_string(endpoint.max_retries + 1) +
                                 " attempts: " + last);
}

void check_status(const HttpResult& r, const std::string& what) {
  if (r.status == 200) return;
  const std::string msg = what + " returned HTTP " + std::to_string(r.status) + ": " +
                          error_message(r.body);
  if (r.status >= 400 && r.status < 500) fail(ErrorKind::Protocol, msg);
  fail(ErrorKind::Transport, msg);
}

}  // namespace

void BridgeEndpoint::validate() const {
  parse_url(base_url);
  if (timeout_ms <= 0) fail(ErrorKind::InvalidConfig, "bridge timeout must be > 0 ms");
  if (max_retries < 0) fail(ErrorKind::InvalidConfig, "bridge retries must be >= 0");
  if (backoff_ms < 0) fail(ErrorKind::InvalidConfig, "bridge backoff must be >= 0 ms");
}

std::shared_ptr<HttpTransport> make_http_transport(const BridgeEndpoint& endpoint) {
  endpoint.validate();
  return std::make_shared<HttplibTransport>(endpoint);
}

// ---------------------------------------------------------------------------
// Wire format

std::string serialize_request(const BackendRequest& request) {
  if (request.tokens.size() != request.masked.size()) {
    fail(ErrorKind::InvalidInput, "request tokens and mask differ in length");
  }
  json j;  // std::map storage: keys come out sorted
  j["query"] = request.query;
  j["contexts"] = request.contexts;
  std::vector<TokenId> tokens = request.tokens;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (request.masked[i]) tokens[i] = kMaskToken;
  }
  j["tokens"] = tokens;
  j["masked"] = std::vector<bool>(request.masked.begin(), request.masked.end());
  j["conditioned"] = request.conditioned;
  j["vocab_size"] = request.vocab_size;
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

BackendRequest parse_request(std::string_view body) {
  const json j = parse_body(body, "request");
  BackendRequest r;
  try {
    r.query = j.at("query").get<std::string>();
    r.contexts = j.at("contexts").get<std::vector<std::string>>();
    r.tokens = j.at("tokens").get<std::vector<TokenId>>();
    r.masked = j.at("masked").get<std::vector<bool>>();
    r.conditioned = j.at("conditioned").get<bool>();
    r.vocab_size = j.at("vocab_size").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Protocol, std::string("malformed request: ") + e.what());
  }
  if (r.tokens.size() != r.masked.size()) {
    fail(ErrorKind::Protocol, "malformed request: tokens and masked differ in length");
  }
  return r;
}

std::string serialize_response(const BackendResponse& response) {
  std::string out = "{\"latency_ms\":";
  out += float32_text(response.latency_ms);
  out += ",\"logits\":[";
  for (std::size_t i = 0; i < response.logits.size(); ++i) {
    if (i > 0) out += ',';
    out += '[';
    const auto values = response.logits[i].values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (k > 0) out += ',';
      out += float32_text(values[k]);
    }
    out += ']';
  }
  out += "],\"model_id\":";
  out += json(response.model_id).dump();
  out += '}';
  return out;
}

BackendResponse parse_response(std::string_view body, const BackendRequest& request) {
  const json j = parse_body(body, "bridge response");
  if (!j.is_object()) fail(ErrorKind::Protocol, "bridge response must be a JSON object");
  if (!j.contains("logits") || !j.at("logits").is_array()) {
    fail(ErrorKind::Protocol, "bridge response has no 'logits' array");
  }
  if (!j.contains("model_id") || !j.at("model_id").is_string()) {
    fail(ErrorKind::Protocol, "bridge response has no 'model_id' string");
  }

  BackendResponse out;
  out.model_id = j.at("model_id").get<std::string>();
  if (j.contains("latency_ms")) {
    if (!j.at("latency_ms").is_number()) fail(ErrorKind::Protocol, "latency_ms must be a number");
    out.latency_ms = j.at("latency_ms").get<double>();
  }

  const auto positions = request.masked_positions();
  const json& rows = j.at("logits");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string where =
        i < positions.size() ? "position " + std::to_string(positions[i]) : "extra row " + std::to_string(i);
    if (!rows[i].is_array()) fail(ErrorKind::Protocol, "logits for " + where + " are not an array");
    std::vector<double> values;
    values.reserve(rows[i].size());
    for (const auto& v : rows[i]) {
      if (!v.is_number()) fail(ErrorKind::Protocol, "logits for " + where + " contain a non-number");
      const double d = v.get<double>();
      if (!std::isfinite(d)) fail(ErrorKind::Protocol, "logits for " + where + " are not finite");
      values.push_back(d);
    }
    out.logits.emplace_back(std::move(values));
  }
  validate_response(request, out);
  return out;
}

// ---------------------------------------------------------------------------

BackendResponse fetch_logits(const BridgeEndpoint& endpoint, HttpTransport& transport,
                             const BackendRequest& request) {
  const std::string body = serialize_request(request);
  const HttpResult r = with_retries(endpoint, "POST /v1/logits",
                                    [&] { return transport.post_json("/v1/logits", body); });
  check_status(r, "POST /v1/logits");
  BackendResponse out = parse_response(r.body, request);
  if (endpoint.expected_model_id && out.model_id != *endpoint.expected_model_id) {
    fail(ErrorKind::Identity, "bridge served model '" + out.model_id + "', expected '" +
                                  *endpoint.expected_model_id + "'");
  }
  return out;
}

BridgeHealth fetch_health(const BridgeEndpoint& endpoint, HttpTransport& transport) {
  const HttpResult r =
      with_retries(endpoint, "GET /v1/health", [&] { return transport.get("/v1/health"); });
  check_status(r, "GET /v1/health");
  const json j = parse_body(r.body, "health response");
  BridgeHealth h;
  try {
    h.status = j.at("status").get<std::string>();
    h.model_id = j.at("model_id").get<std::string>();
    h.vocab_size = j.at("vocab_size").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Protocol, std::string("malformed health response: ") + e.what());
  }
  if (h.status != "ok") fail(ErrorKind::Transport, "bridge reports status '" + h.status + "'");
  if (h.vocab_size < 2) fail(ErrorKind::Protocol, "bridge reports vocab size < 2");
  if (endpoint.expected_model_id && h.model_id != *endpoint.expected_model_id) {
    fail(ErrorKind::Identity, "bridge serves model '" + h.model_id + "', expected '" +
                                  *endpoint.expected_model_id + "'");
  }
  return h;
}

BridgeBackend::BridgeBackend(BridgeEndpoint endpoint, std::shared_ptr<HttpTransport> transport)
    : endpoint_(std::move(endpoint)), transport_(std::move(transport)) {
  endpoint_.validate();
  if (!transport_) fail(ErrorKind::InvalidConfig, "bridge backend needs a transport");
  const BridgeHealth h = fetch_health(endpoint_, *transport_);
  vocab_size_ = h.vocab_size;
  model_id_ = h.model_id;
  if (!endpoint_.expected_model_id) endpoint_.expected_model_id = model_id_;
}

BackendResponse BridgeBackend::query(const BackendRequest& request) const {
  return fetch_logits(endpoint_, *transport_, request);
}

}  // namespace aram
