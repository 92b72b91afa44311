#include "aram/bridge_client.hpp"
#include "aram/engine.hpp"
#include "aram/errors.hpp"
#include "aram/toy_backends.hpp"

#include "support/mock_transport.hpp"
#include "support/paths.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

using namespace aram;
using aram::testing::MockTransport;

namespace {

std::string read_fixture(const std::string& name) {
  std::ifstream in(testing::source_path("tests/fixtures/bridge/" + name), std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

TableBackend table_backend() {
  return TableBackend(load_toy_model_spec(testing::source_path("data/toy_table.json")));
}

BridgeEndpoint mock_endpoint() {
  BridgeEndpoint e;
  e.base_url = "http://mock.invalid:1";
  e.backoff_ms = 0;
  return e;
}

DecodeConfig golden_config() {
  DecodeConfig cfg;
  cfg.length = 3;
  cfg.steps = 3;
  return cfg;
}

const PromptInput kPrompt{"is it raining", {"the forecast says rain"}};

BackendRequest sample_request() {
  BackendRequest r;
  r.query = "q";
  r.contexts = {"c"};
  r.tokens = {1, -1, -1};
  r.masked = {false, true, true};
  r.conditioned = true;
  r.vocab_size = 3;
  return r;
}

}  // namespace

TEST_CASE("endpoint validation") {
  BridgeEndpoint e;
  e.base_url = "http://127.0.0.1:8765";
  CHECK_NOTHROW(e.validate());
  e.base_url = "ftp://host";
  CHECK_THROWS_AS(e.validate(), Error);
  e.base_url = "http://";
  CHECK_THROWS_AS(e.validate(), Error);
  e.base_url = "http://host:notaport";
  CHECK_THROWS_AS(e.validate(), Error);
  e.base_url = "http://host:99999";
  CHECK_THROWS_AS(e.validate(), Error);
  e.base_url = "http://host";
  e.timeout_ms = 0;
  CHECK_THROWS_AS(e.validate(), Error);
  e.timeout_ms = 10;
  e.max_retries = -1;
  CHECK_THROWS_AS(e.validate(), Error);
}

TEST_CASE("wire format round trip") {
  const BackendRequest r = sample_request();
  const std::string body = serialize_request(r);
  CHECK(body ==
        R"({"conditioned":true,"contexts":["c"],"masked":[false,true,true],"query":"q",)"
        R"("tokens":[1,-1,-1],"vocab_size":3})");
  CHECK(parse_request(body) == r);

  BackendResponse resp;
  resp.model_id = "m";
  resp.logits = {LogitVector({0.1, -2.5, 3.0}), LogitVector({0.0, 1.0, 2.0})};
  const std::string out = serialize_response(resp);
  CHECK(out == R"({"latency_ms":0,"logits":[[0.1,-2.5,3],[0,1,2]],"model_id":"m"})");
  const BackendResponse back = parse_response(out, r);
  CHECK(back.model_id == "m");
  CHECK(back.logits[0][0] == doctest::Approx(0.1).epsilon(1e-7));

  try {
    parse_request(read_fixture("malformed_request.json"));
    FAIL("expected a protocol error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Protocol);
  }
}

TEST_CASE("malformed responses are protocol errors") {
  const BackendRequest r = sample_request();
  const char* bad[] = {
      "not json",
      "[]",
      R"({"model_id":"m"})",
      R"({"logits":[[0,0,0],[0,0,0]]})",
      R"({"logits":[[0,0,0],[0,"x",0]],"model_id":"m"})",
      R"({"logits":[[0,0,0],[0,0]],"model_id":"m"})",
      R"({"logits":[[0,0,0],[0,0,0],[0,0,0]],"model_id":"m"})",
      R"({"logits":[[0,0,0],[0,0,0]],"model_id":"m","latency_ms":"slow"})",
  };
  for (const char* body : bad) {
    CAPTURE(body);
    try {
      parse_response(body, r);
      FAIL("expected a protocol error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Protocol);
    }
  }
  try {
    parse_response(R"({"logits":[[0,0,0]],"model_id":"m"})", r);
    FAIL("expected a protocol error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("position 2") != std::string::npos);
  }
}

TEST_CASE("golden exchanges") {
  const TableBackend backend = table_backend();
  auto transport = std::make_shared<MockTransport>(backend);
  const BridgeBackend bridge(mock_endpoint(), transport);
  CHECK(bridge.vocab_size() == 3);
  CHECK(bridge.model_id() == "toy-table-3");

  const auto result = decode(kPrompt, golden_config(), bridge);
  const auto expected_tokens =
      nlohmann::json::parse(read_fixture("expected_tokens.json")).get<std::vector<TokenId>>();
  CHECK(result.tokens == expected_tokens);
  REQUIRE(transport->request_log.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const std::string stem = "exchange_0" + std::to_string(i + 1);
    CAPTURE(stem);
    CHECK(transport->request_log[i] == read_fixture(stem + "_request.json"));
    const BackendRequest req = parse_request(transport->request_log[i]);
    CHECK(serialize_response(backend.query(req)) == read_fixture(stem + "_response.json"));
  }

  const auto health = nlohmann::json::parse(read_fixture("health.json"));
  CHECK(health["model_id"] == bridge.model_id());
  CHECK(health["vocab_size"] == bridge.vocab_size());

  // the bridge decode matches the in-process one
  CHECK(decode(kPrompt, golden_config(), backend).tokens == result.tokens);
}

TEST_CASE("NFE accounting through the bridge") {
  const TableBackend backend = table_backend();
  DecodeConfig cfg;
  cfg.length = 4;
  cfg.steps = 2;
  {
    auto transport = std::make_shared<MockTransport>(backend);
    const BridgeBackend bridge(mock_endpoint(), transport);
    const auto r = decode(kPrompt, cfg, bridge);
    CHECK(transport->post_calls == 4);
    CHECK(r.nfe_count == 4);
  }
  {
    auto transport = std::make_shared<MockTransport>(backend);
    const BridgeBackend bridge(mock_endpoint(), transport);
    cfg.guidance.policy = Policy::no_guidance();
    const auto r = decode(kPrompt, cfg, bridge);
    CHECK(transport->post_calls == 2);
    CHECK(r.nfe_count == 2);
  }
}

TEST_CASE("retries") {
  const TableBackend backend = table_backend();
  const BackendRequest req = parse_request(read_fixture("exchange_01_request.json"));

  SUBCASE("503 then success") {
    MockTransport t(backend);
    t.script(testing::busy());
    t.script(testing::connection_refused());
    const auto r = fetch_logits(mock_endpoint(), t, req);
    CHECK(t.post_calls == 3);
    CHECK(r.logits.size() == 3);
  }
  SUBCASE("retries exhausted") {
    MockTransport t(backend);
    for (int i = 0; i < 3; ++i) t.script(testing::busy());
    try {
      fetch_logits(mock_endpoint(), t, req);
      FAIL("expected a transport error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Transport);
    }
    CHECK(t.post_calls == 3);
  }
  SUBCASE("4xx is not retried") {
    MockTransport t(backend);
    t.script({true, 400, read_fixture("error_400.json"), ""});
    try {
      fetch_logits(mock_endpoint(), t, req);
      FAIL("expected a protocol error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Protocol);
      CHECK(std::string(e.what()).find("400") != std::string::npos);
    }
    CHECK(t.post_calls == 1);
  }
  SUBCASE("500 is a transport error without retry") {
    MockTransport t(backend);
    t.script({true, 500, "{}", ""});
    try {
      fetch_logits(mock_endpoint(), t, req);
      FAIL("expected a transport error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Transport);
    }
    CHECK(t.post_calls == 1);
  }
  SUBCASE("backoff doubles") {
    MockTransport t(backend);
    t.script(testing::busy());
    t.script(testing::busy());
    BridgeEndpoint e = mock_endpoint();
    e.backoff_ms = 20;
    const auto start = std::chrono::steady_clock::now();
    fetch_logits(e, t, req);
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    CHECK(ms >= 60.0);
  }
}

TEST_CASE("response validation through the bridge") {
  const TableBackend backend = table_backend();
  const BackendRequest req = parse_request(read_fixture("exchange_02_request.json"));

  SUBCASE("missing position") {
    MockTransport t(backend);
    t.drop_last_position = true;
    try {
      fetch_logits(mock_endpoint(), t, req);
      FAIL("expected a protocol error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Protocol);
      CHECK(std::string(e.what()).find("position 2") != std::string::npos);
    }
  }
  SUBCASE("model identity") {
    auto t = std::make_shared<MockTransport>(backend);
    const BridgeBackend bridge(mock_endpoint(), t);
    t->model_id_override = "other-model";
    try {
      bridge.query(req);
      FAIL("expected an identity error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Identity);
    }
    BridgeEndpoint pinned = mock_endpoint();
    pinned.expected_model_id = "something-else";
    CHECK_THROWS_AS(BridgeBackend(pinned, std::make_shared<MockTransport>(backend)), Error);
  }
}

TEST_CASE("loopback HTTP server") {
  const TableBackend backend = table_backend();
  httplib::Server server;
  server.Post("/v1/logits", [&](const httplib::Request& req, httplib::Response& res) {
    try {
      const BackendRequest r = parse_request(req.body);
      res.set_content(serialize_response(backend.query(r)), "application/json");
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  });
  server.Get("/v1/health", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(read_fixture("health.json"), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BridgeEndpoint e;
  e.base_url = "http://127.0.0.1:" + std::to_string(port);
  e.timeout_ms = 5000;
  const BridgeBackend bridge(e, make_http_transport(e));
  const auto result = decode(kPrompt, golden_config(), bridge);
  CHECK(result.tokens == decode(kPrompt, golden_config(), backend).tokens);

  BackendRequest broken = sample_request();
  broken.vocab_size = 7;
  try {
    bridge.query(broken);
    FAIL("expected a protocol error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::Protocol);
  }

  server.stop();
  thread.join();

  // nothing listens any more
  e.max_retries = 1;
  e.backoff_ms = 1;
  auto transport = make_http_transport(e);
  try {
    fetch_logits(e, *transport, sample_request());
    FAIL("expected a transport error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::Transport);
  }
}
