#pragma once

// Run configuration. Sources, highest precedence first:
//   command-line flag > config file > ARAM_BRIDGE_URL (bridge_url only)
//   > built-in default.
// The config file is flat `key = value` text; '#' starts a comment and
// values may be double-quoted. Keys are the RunConfig field names below.

#include "aram/bridge_client.hpp"
#include "aram/core_math.hpp"
#include "aram/engine.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aram {

enum class BackendKind { None, ToyTable, ToyCount, Bridge };

struct RunConfig {
  BackendKind backend = BackendKind::None;
  std::string backend_path;  // toy-table spec or toy-count corpus
  std::string bridge_url;
  int bridge_timeout_ms = 30000;
  int bridge_retries = 2;

  std::string policy = "aram";
  GuidanceConfig guidance;  // policy field is derived from `policy`
  double static_lambda = kDefaultStaticLambda;
  double cad_weight = kDefaultCadWeight;
  double context_weight = 0.7;

  SamplerConfig sampler;
  std::size_t length = 32;
  int steps = 32;
  UnmaskPolicy unmask = UnmaskPolicy::LowConfidence;

  std::string fixtures;
  std::string methods = "aram,static,none";
  std::string out;
  std::string run_id = "run";
  std::size_t jobs = 1;

  DecodeConfig decode_config() const;
  void validate() const;
};

using Settings = std::map<std::string, std::string>;

// Every key accepted in a config file (and, with '_' -> '-', as a flag).
const std::vector<std::string>& config_keys();

Settings parse_config_text(std::string_view text);
Settings load_config_file(const std::string& path);

// Applies one key; throws InvalidConfig on unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// Resolves the layers in precedence order into a validated RunConfig.
// `env_bridge_url` is the ARAM_BRIDGE_URL value, if set.
RunConfig resolve_config(const Settings& flags, const Settings& file,
                         const std::optional<std::string>& env_bridge_url);

// Builds the policy named `name` (aram, static, cad, adacad, none) from the
// config's guidance fields.
GuidanceConfig guidance_for(const RunConfig& config, std::string_view name);

std::unique_ptr<LogitBackend> make_backend(const RunConfig& config);

}  // namespace aram
