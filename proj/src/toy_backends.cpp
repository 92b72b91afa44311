#include "aram/toy_backends.hpp"

#include "aram/errors.hpp"
#include "aram/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace aram {

namespace {

using nlohmann::json;

std::vector<double> read_logit_array(const json& value, const std::string& where) {
  if (!value.is_array()) fail(ErrorKind::InvalidConfig, where + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(value.size());
  for (const auto& v : value) {
    if (!v.is_number()) fail(ErrorKind::InvalidConfig, where + " must be an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::map<std::string, std::vector<double>> read_tables(const json& tables, const char* name) {
  std::map<std::string, std::vector<double>> out;
  if (!tables.contains(name)) return out;
  const json& t = tables.at(name);
  if (!t.is_object()) fail(ErrorKind::InvalidConfig, std::string("tables.") + name + " must be an object");
  for (const auto& [key, value] : t.items()) {
    out.emplace(key, read_logit_array(value, std::string("tables.") + name + "." + key));
  }
  return out;
}

std::string mask_pattern(const std::vector<bool>& masked) {
  std::string out;
  out.reserve(masked.size());
  for (bool m : masked) out += m ? '1' : '0';
  return out;
}

std::vector<double> log_of(const ProbVector& p) {
  std::vector<double> out;
  out.reserve(p.size());
  for (double v : p.values()) out.push_back(std::log(std::max(v, kProbabilityFloor)));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Table backend

void ToyModelSpec::validate() const {
  if (vocab.size() < 2) fail(ErrorKind::InvalidConfig, "toy model vocab needs at least 2 tokens");
  std::set<std::string> seen(vocab.begin(), vocab.end());
  if (seen.size() != vocab.size()) fail(ErrorKind::InvalidConfig, "toy model vocab has duplicates");
  auto check = [&](const std::vector<double>& logits, const std::string& where) {
    if (logits.size() != vocab.size()) {
      fail(ErrorKind::InvalidConfig, where + " has " + std::to_string(logits.size()) +
                                         " logits, vocab has " + std::to_string(vocab.size()));
    }
    for (double v : logits) {
      if (!std::isfinite(v)) fail(ErrorKind::InvalidConfig, where + " has a non-finite logit");
    }
  };
  if (!default_logits.empty()) check(default_logits, "default_logits");
  for (const auto& [k, v] : cond_tables) check(v, "tables.cond." + k);
  for (const auto& [k, v] : prior_tables) check(v, "tables.prior." + k);
  if (pad_token && !seen.contains(*pad_token)) {
    fail(ErrorKind::InvalidConfig, "pad_token '" + *pad_token + "' is not in the vocab");
  }
}

ToyModelSpec parse_toy_model_spec(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::InvalidConfig, std::string("toy model is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::InvalidConfig, "toy model must be a JSON object");

  ToyModelSpec spec;
  try {
    spec.vocab = doc.at("vocab").get<std::vector<std::string>>();
    const std::string mode = doc.value("mode", std::string("position"));
    if (mode == "position") {
      spec.mode = TableMode::Position;
    } else if (mode == "pattern") {
      spec.mode = TableMode::Pattern;
    } else {
      fail(ErrorKind::InvalidConfig, "toy model mode must be 'position' or 'pattern'");
    }
    if (doc.contains("tables")) {
      spec.cond_tables = read_tables(doc.at("tables"), "cond");
      spec.prior_tables = read_tables(doc.at("tables"), "prior");
    }
    if (doc.contains("default_logits")) {
      spec.default_logits = read_logit_array(doc.at("default_logits"), "default_logits");
    }
    if (doc.contains("pad_token") && !doc.at("pad_token").is_null()) {
      spec.pad_token = doc.at("pad_token").get<std::string>();
    }
    spec.model_id = doc.value("model_id", std::string("toy-table"));
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("toy model: ") + e.what());
  }
  spec.validate();
  return spec;
}

ToyModelSpec load_toy_model_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidConfig, "cannot open toy model file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_toy_model_spec(buf.str());
}

TableBackend::TableBackend(ToyModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.pad_token) {
    const auto it = std::find(spec_.vocab.begin(), spec_.vocab.end(), *spec_.pad_token);
    pad_id_ = static_cast<TokenId>(it - spec_.vocab.begin());
  }
}

const std::vector<double>& TableBackend::lookup(const BackendRequest& request,
                                                std::size_t position) const {
  const auto& tables = request.conditioned ? spec_.cond_tables : spec_.prior_tables;
  const std::string pos_key = std::to_string(position);
  if (spec_.mode == TableMode::Pattern) {
    const auto it = tables.find(pos_key + "@" + mask_pattern(request.masked));
    if (it != tables.end()) return it->second;
  }
  const auto it = tables.find(pos_key);
  if (it != tables.end()) return it->second;
  if (spec_.default_logits.empty()) {
    fail(ErrorKind::Protocol, std::string("toy table has no ") +
                                  (request.conditioned ? "cond" : "prior") +
                                  " entry for position " + pos_key);
  }
  return spec_.default_logits;
}

BackendResponse TableBackend::query(const BackendRequest& request) const {
  if (request.vocab_size != spec_.vocab.size()) {
    fail(ErrorKind::Protocol, "request vocab size " + std::to_string(request.vocab_size) +
                                  " does not match toy table vocab size " +
                                  std::to_string(spec_.vocab.size()));
  }
  BackendResponse out;
  out.model_id = spec_.model_id;
  for (std::size_t pos : request.masked_positions()) {
    out.logits.emplace_back(lookup(request, pos));
  }
  return out;
}

std::optional<std::string> TableBackend::token_text(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= spec_.vocab.size()) return std::nullopt;
  return spec_.vocab[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// Scenarios

std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Reliable: return "reliable";
    case ScenarioKind::Irrelevant: return "irrelevant";
    case ScenarioKind::Conflicting: return "conflicting";
  }
  return "unknown";
}

ScenarioKind parse_scenario_kind(std::string_view text) {
  if (text == "reliable") return ScenarioKind::Reliable;
  if (text == "irrelevant") return ScenarioKind::Irrelevant;
  if (text == "conflicting") return ScenarioKind::Conflicting;
  fail(ErrorKind::InvalidConfig, "unknown scenario kind '" + std::string(text) + "'");
}

namespace {

constexpr int kMaxScenarioAttempts = 100000;

std::vector<double> dirichlet_ones(std::size_t n, Rng& rng) {
  std::vector<double> out(n);
  double total = 0.0;
  for (double& v : out) {
    v = -std::log1p(-rng.uniform());
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

void renormalize(std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  for (double& x : v) x /= total;
}

struct Pair {
  std::vector<double> prior;
  std::vector<double> cond;
};

std::optional<Pair> draw_reliable(std::size_t v, TokenId gold, Rng& rng) {
  const auto g = static_cast<std::size_t>(gold);
  Pair p;
  p.prior = dirichlet_ones(v, rng);
  p.prior[g] *= 0.2;
  renormalize(p.prior);
  const double m = 0.85 + 0.12 * rng.uniform();
  p.cond = dirichlet_ones(v, rng);
  for (double& x : p.cond) x *= 1.0 - m;
  p.cond[g] += m;

  const ProbVector pc(p.cond), pp(p.prior);
  if (pc[g] < 0.8) return std::nullopt;
  if (entropy(pc) > 0.5 * std::log(static_cast<double>(v))) return std::nullopt;
  if (signal(pc, pp) < 1.0) return std::nullopt;
  return p;
}

std::optional<Pair> draw_irrelevant(std::size_t v, Rng& rng) {
  Pair p;
  p.prior = dirichlet_ones(v, rng);
  const double d = 0.02 * rng.uniform();
  const auto noise = dirichlet_ones(v, rng);
  p.cond.resize(v);
  double tv = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    p.cond[i] = (1.0 - d) * p.prior[i] + d * noise[i];
    tv += std::abs(p.cond[i] - p.prior[i]);
  }
  if (0.5 * tv > 0.02) return std::nullopt;
  return p;
}

std::optional<Pair> draw_conflicting(std::size_t v, TokenId gold, Rng& rng) {
  const auto g = static_cast<std::size_t>(gold);
  Pair p;
  const double m = 0.5 + 0.3 * rng.uniform();
  p.prior = dirichlet_ones(v, rng);
  for (double& x : p.prior) x *= 1.0 - m;
  p.prior[g] += m;
  const double eta = 0.2 + 0.3 * rng.uniform();
  const auto noise = dirichlet_ones(v, rng);
  p.cond.resize(v);
  for (std::size_t i = 0; i < v; ++i) {
    p.cond[i] = (1.0 - eta) / static_cast<double>(v) + eta * noise[i];
  }
  p.cond[g] *= 0.3;
  renormalize(p.cond);

  const ProbVector pc(p.cond);
  if (entropy(pc) < 0.8 * std::log(static_cast<double>(v))) return std::nullopt;
  const auto top = std::max_element(p.cond.begin(), p.cond.end()) - p.cond.begin();
  if (static_cast<std::size_t>(top) == g) return std::nullopt;
  return p;
}

}  // namespace

ScenarioInstance generate_scenario(ScenarioKind kind, std::size_t vocab_size,
                                   std::uint64_t seed, std::size_t positions) {
  if (vocab_size < 4) fail(ErrorKind::InvalidConfig, "scenario vocab size must be >= 4");
  if (positions < 1) fail(ErrorKind::InvalidConfig, "scenario needs at least one position");

  Rng rng(seed);
  ScenarioInstance inst;
  inst.kind = kind;
  inst.seed = seed;
  inst.gold_token = static_cast<TokenId>(rng.below(vocab_size));

  for (std::size_t pos = 0; pos < positions; ++pos) {
    std::optional<Pair> pair;
    for (int attempt = 0; attempt < kMaxScenarioAttempts && !pair; ++attempt) {
      switch (kind) {
        case ScenarioKind::Reliable: pair = draw_reliable(vocab_size, inst.gold_token, rng); break;
        case ScenarioKind::Irrelevant: pair = draw_irrelevant(vocab_size, rng); break;
        case ScenarioKind::Conflicting:
          pair = draw_conflicting(vocab_size, inst.gold_token, rng);
          break;
      }
    }
    if (!pair) {
      fail(ErrorKind::InvalidConfig, "could not generate a " + std::string(to_string(kind)) +
                                         " scenario with vocab size " +
                                         std::to_string(vocab_size));
    }
    inst.p_prior.emplace_back(std::move(pair->prior));
    inst.p_cond.emplace_back(std::move(pair->cond));
  }
  return inst;
}

ScenarioBackend::ScenarioBackend(ScenarioInstance instance)
    : instance_(std::move(instance)), vocab_size_(0) {
  if (instance_.p_prior.empty() || instance_.p_prior.size() != instance_.p_cond.size()) {
    fail(ErrorKind::InvalidConfig, "scenario needs matching prior and cond positions");
  }
  vocab_size_ = instance_.p_prior.front().size();
  for (std::size_t i = 0; i < instance_.p_prior.size(); ++i) {
    if (instance_.p_prior[i].size() != vocab_size_ || instance_.p_cond[i].size() != vocab_size_) {
      fail(ErrorKind::InvalidConfig, "scenario distributions differ in vocab size");
    }
    prior_logits_.emplace_back(log_of(instance_.p_prior[i]));
    cond_logits_.emplace_back(log_of(instance_.p_cond[i]));
  }
}

BackendResponse ScenarioBackend::query(const BackendRequest& request) const {
  if (request.vocab_size != vocab_size_) {
    fail(ErrorKind::Protocol, "request vocab size does not match scenario vocab size");
  }
  const auto& table = request.conditioned ? cond_logits_ : prior_logits_;
  BackendResponse out;
  out.model_id = model_id();
  out.log_probabilities = true;
  for (std::size_t pos : request.masked_positions()) {
    out.logits.push_back(table[pos % table.size()]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Count backend

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    std::size_t b = 0, e = current.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(current[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(current[e - 1]))) --e;
    if (e > b) out.push_back(current.substr(b, e - b));
    current.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  flush();
  return out;
}

CountBackend::CountBackend(const std::vector<std::vector<std::string>>& corpus,
                           double context_weight)
    : context_weight_(context_weight) {
  if (!(context_weight >= 0.0 && context_weight <= 1.0)) {
    fail(ErrorKind::InvalidConfig, "context_weight must be in [0, 1]");
  }
  std::set<std::string> words;
  for (const auto& seq : corpus) words.insert(seq.begin(), seq.end());
  if (words.size() < 2) {
    fail(ErrorKind::InvalidConfig, "count backend corpus needs at least 2 distinct words");
  }
  vocab_.assign(words.begin(), words.end());
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<TokenId>(i));

  unigram_.assign(vocab_.size(), 0.0);
  bigram_.resize(vocab_.size());
  bigram_totals_.assign(vocab_.size(), 0.0);
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const auto id = static_cast<std::size_t>(index_.find(seq[i])->second);
      unigram_[id] += 1.0;
      total_ += 1.0;
      if (i > 0) {
        const auto left = static_cast<std::size_t>(index_.find(seq[i - 1])->second);
        bigram_[left][static_cast<TokenId>(id)] += 1.0;
        bigram_totals_[left] += 1.0;
      }
    }
  }
}

std::optional<TokenId> CountBackend::token_id(std::string_view word) const {
  const auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> CountBackend::token_text(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) return std::nullopt;
  return vocab_[static_cast<std::size_t>(id)];
}

ProbVector CountBackend::prior_distribution(const BackendRequest& request,
                                            std::size_t position) const {
  std::optional<TokenId> left;
  if (position == 0) {
    const auto words = split_words(request.query);
    if (!words.empty()) left = token_id(words.back());
  } else if (!request.masked[position - 1] && request.tokens[position - 1] >= 0 &&
             static_cast<std::size_t>(request.tokens[position - 1]) < vocab_.size()) {
    left = request.tokens[position - 1];
  }

  const double v = static_cast<double>(vocab_.size());
  std::vector<double> p(vocab_.size());
  if (left) {
    const auto l = static_cast<std::size_t>(*left);
    const double denom = bigram_totals_[l] + v;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = 1.0 / denom;
    for (const auto& [right, count] : bigram_[l]) {
      p[static_cast<std::size_t>(right)] = (count + 1.0) / denom;
    }
  } else {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = (unigram_[i] + 1.0) / (total_ + v);
  }
  return ProbVector(std::move(p));
}

ProbVector CountBackend::cond_distribution(const BackendRequest& request,
                                           std::size_t position) const {
  const ProbVector prior = prior_distribution(request, position);
  if (!request.conditioned || request.contexts.empty()) return prior;

  std::vector<bool> in_context(vocab_.size(), false);
  bool any = false;
  for (const auto& ctx : request.contexts) {
    for (const auto& w : split_words(ctx)) {
      if (const auto id = token_id(w)) {
        in_context[static_cast<std::size_t>(*id)] = true;
        any = true;
      }
    }
  }

  std::vector<double> r(vocab_.size(), 1.0);
  if (any) {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = in_context[i] ? prior[i] : 0.0;
  }
  renormalize(r);

  std::vector<double> p(vocab_.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = (1.0 - context_weight_) * prior[i] + context_weight_ * r[i];
  }
  renormalize(p);
  return ProbVector(std::move(p));
}

BackendResponse CountBackend::query(const BackendRequest& request) const {
  if (request.vocab_size != vocab_.size()) {
    fail(ErrorKind::Protocol, "request vocab size " + std::to_string(request.vocab_size) +
                                  " does not match count backend vocab size " +
                                  std::to_string(vocab_.size()));
  }
  if (request.tokens.size() != request.masked.size()) {
    fail(ErrorKind::Protocol, "request tokens and mask differ in length");
  }
  BackendResponse out;
  out.model_id = model_id();
  out.log_probabilities = true;
  for (std::size_t pos : request.masked_positions()) {
    out.logits.emplace_back(log_of(cond_distribution(request, pos)));
  }
  return out;
}

std::vector<std::vector<std::string>> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidConfig, "cannot open corpus file '" + path + "'");
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_words(line);
    if (!words.empty()) out.push_back(std::move(words));
  }
  if (out.empty()) fail(ErrorKind::InvalidConfig, "corpus file '" + path + "' is empty");
  return out;
}

}  // namespace aram
