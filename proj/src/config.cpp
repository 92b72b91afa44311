#include "aram/config.hpp"

#include "aram/errors.hpp"
#include "aram/toy_backends.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace aram {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    fail(ErrorKind::InvalidConfig, key + ": '" + value + "' is not a number");
  }
  return out;
}

template <typename Int>
Int to_integer(const std::string& key, const std::string& value) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    fail(ErrorKind::InvalidConfig, key + ": '" + value + "' is not a valid integer");
  }
  return out;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "backend",       "bridge_url",     "bridge_timeout_ms", "bridge_retries", "policy",
      "lambda_max",    "beta",           "epsilon",           "noise_proxy",    "stability",
      "static_lambda", "cad_weight",     "context_weight",    "top_p",          "temperature",
      "seed",          "length",         "steps",             "unmask",         "fixtures",
      "methods",       "out",            "run_id",            "jobs",
  };
  return keys;
}

Settings parse_config_text(std::string_view text) {
  Settings out;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::InvalidConfig, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!value.empty() && value.front() == '"') {
      const auto close = value.find('"', 1);
      if (close == std::string::npos) {
        fail(ErrorKind::InvalidConfig, "config line " + std::to_string(line_no) + ": unterminated string");
      }
      value = value.substr(1, close - 1);
    } else if (const auto hash = value.find('#'); hash != std::string::npos) {
      value = trim(std::string_view(value).substr(0, hash));
    }
    if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end()) {
      fail(ErrorKind::InvalidConfig, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    out[key] = value;
  }
  return out;
}

Settings load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidConfig, "cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "backend") {
    const auto colon = value.find(':');
    const std::string kind = value.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : value.substr(colon + 1);
    if (kind == "toy-table" || kind == "toy-count") {
      if (arg.empty()) fail(ErrorKind::InvalidConfig, "backend " + kind + " needs a path (" + kind + ":PATH)");
      c.backend = kind == "toy-table" ? BackendKind::ToyTable : BackendKind::ToyCount;
      c.backend_path = arg;
    } else if (kind == "bridge") {
      c.backend = BackendKind::Bridge;
      if (!arg.empty()) c.bridge_url = arg;
    } else {
      fail(ErrorKind::InvalidConfig, "backend must be toy-table:PATH, toy-count:PATH or bridge");
    }
  } else if (key == "bridge_url") {
    c.bridge_url = value;
  } else if (key == "bridge_timeout_ms") {
    c.bridge_timeout_ms = to_integer<int>(key, value);
  } else if (key == "bridge_retries") {
    c.bridge_retries = to_integer<int>(key, value);
  } else if (key == "policy") {
    parse_policy_kind(value);
    c.policy = value;
  } else if (key == "lambda_max") {
    c.guidance.lambda_max = to_double(key, value);
  } else if (key == "beta") {
    c.guidance.beta = to_double(key, value);
  } else if (key == "epsilon") {
    c.guidance.epsilon = to_double(key, value);
  } else if (key == "noise_proxy") {
    c.guidance.noise_proxy = parse_noise_proxy(value);
  } else if (key == "stability") {
    c.guidance.stability = parse_stability(value);
  } else if (key == "static_lambda") {
    c.static_lambda = to_double(key, value);
  } else if (key == "cad_weight") {
    c.cad_weight = to_double(key, value);
  } else if (key == "context_weight") {
    c.context_weight = to_double(key, value);
  } else if (key == "top_p") {
    c.sampler.top_p = to_double(key, value);
  } else if (key == "temperature") {
    c.sampler.temperature = to_double(key, value);
  } else if (key == "seed") {
    c.sampler.seed = to_integer<std::uint64_t>(key, value);
  } else if (key == "length") {
    c.length = to_integer<std::size_t>(key, value);
  } else if (key == "steps") {
    c.steps = to_integer<int>(key, value);
  } else if (key == "unmask") {
    c.unmask = parse_unmask_policy(value);
  } else if (key == "fixtures") {
    c.fixtures = value;
  } else if (key == "methods") {
    c.methods = value;
  } else if (key == "out") {
    c.out = value;
  } else if (key == "run_id") {
    c.run_id = value;
  } else if (key == "jobs") {
    c.jobs = to_integer<std::size_t>(key, value);
  } else {
    fail(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
  }
}

GuidanceConfig guidance_for(const RunConfig& config, std::string_view name) {
  GuidanceConfig g = config.guidance;
  switch (parse_policy_kind(name)) {
    case PolicyKind::Aram: g.policy = Policy::aram(); break;
    case PolicyKind::StaticCfg: g.policy = Policy::static_cfg(config.static_lambda); break;
    case PolicyKind::Cad: g.policy = Policy::cad(config.cad_weight); break;
    case PolicyKind::AdaCadJsd: g.policy = Policy::adacad_jsd(); break;
    case PolicyKind::NoGuidance: g.policy = Policy::no_guidance(); break;
  }
  return g;
}

DecodeConfig RunConfig::decode_config() const {
  DecodeConfig d;
  d.guidance = guidance_for(*this, policy);
  d.sampler = sampler;
  d.unmask = unmask;
  d.length = length;
  d.steps = steps;
  return d;
}

void RunConfig::validate() const {
  decode_config().validate();
  if (!(context_weight >= 0.0 && context_weight <= 1.0)) {
    fail(ErrorKind::InvalidConfig, "context_weight must be in [0, 1]");
  }
  if (jobs < 1) fail(ErrorKind::InvalidConfig, "jobs must be >= 1");
  if (backend == BackendKind::Bridge) {
    if (bridge_url.empty()) {
      fail(ErrorKind::InvalidConfig, "bridge backend needs --bridge-url or ARAM_BRIDGE_URL");
    }
    BridgeEndpoint endpoint;
    endpoint.base_url = bridge_url;
    endpoint.timeout_ms = bridge_timeout_ms;
    endpoint.max_retries = bridge_retries;
    endpoint.validate();
  }
}

RunConfig resolve_config(const Settings& flags, const Settings& file,
                         const std::optional<std::string>& env_bridge_url) {
  RunConfig c;
  if (env_bridge_url && !env_bridge_url->empty()) c.bridge_url = *env_bridge_url;
  for (const auto& [k, v] : file) apply_setting(c, k, v);
  // `backend` may carry a URL, so apply it before bridge_url of the same layer.
  if (const auto it = flags.find("backend"); it != flags.end()) apply_setting(c, it->first, it->second);
  for (const auto& [k, v] : flags) {
    if (k != "backend") apply_setting(c, k, v);
  }
  c.guidance.policy = guidance_for(c, c.policy).policy;
  c.validate();
  return c;
}

std::unique_ptr<LogitBackend> make_backend(const RunConfig& config) {
  switch (config.backend) {
    case BackendKind::ToyTable:
      return std::make_unique<TableBackend>(load_toy_model_spec(config.backend_path));
    case BackendKind::ToyCount:
      return std::make_unique<CountBackend>(load_corpus(config.backend_path), config.context_weight);
    case BackendKind::Bridge: {
      BridgeEndpoint endpoint;
      endpoint.base_url = config.bridge_url;
      endpoint.timeout_ms = config.bridge_timeout_ms;
      endpoint.max_retries = config.bridge_retries;
      return std::make_unique<BridgeBackend>(endpoint, make_http_transport(endpoint));
    }
    case BackendKind::None: break;
  }
  fail(ErrorKind::InvalidConfig, "no backend selected (use --backend)");
}

}  // namespace aram
