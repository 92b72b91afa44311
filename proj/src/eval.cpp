#include "aram/eval.hpp"

#include "aram/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace aram {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(QualitySublabel label) {
  switch (label) {
    case QualitySublabel::NonAnswering: return "non_answering";
    case QualitySublabel::Irrelevant: return "irrelevant";
  }
  return "unknown";
}

std::string_view to_string(InteractionCategory category) {
  switch (category) {
    case InteractionCategory::Positive: return "positive";
    case InteractionCategory::Negative: return "negative";
    case InteractionCategory::ConsistentlyCorrect: return "consistently_correct";
    case InteractionCategory::ConsistentlyWrong: return "consistently_wrong";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Scoring

namespace {

std::vector<std::string> split_spaces(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) continue;
    lowered += static_cast<char>(std::tolower(u));
  }
  std::string out;
  for (const auto& word : split_spaces(lowered)) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

int exact_match(std::string_view prediction, const std::vector<std::string>& answers) {
  const std::string pred = normalize_answer(prediction);
  for (const auto& a : answers) {
    if (normalize_answer(a) == pred) return 1;
  }
  return 0;
}

double f1_score(std::string_view prediction, const std::vector<std::string>& answers) {
  const auto pred = split_spaces(normalize_answer(prediction));
  double best = 0.0;
  for (const auto& answer : answers) {
    const auto ref = split_spaces(normalize_answer(answer));
    double f1 = 0.0;
    if (pred.empty() && ref.empty()) {
      f1 = 1.0;
    } else if (!pred.empty() && !ref.empty()) {
      std::map<std::string, int> counts;
      for (const auto& w : ref) ++counts[w];
      int common = 0;
      for (const auto& w : pred) {
        auto it = counts.find(w);
        if (it != counts.end() && it->second > 0) {
          --it->second;
          ++common;
        }
      }
      if (common > 0) {
        const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
        const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
        f1 = 2.0 * precision * recall / (precision + recall);
      }
    }
    best = std::max(best, f1);
  }
  return best;
}

InteractionCategory categorize_interaction(bool no_retrieval_correct, bool retrieval_correct) {
  if (no_retrieval_correct) {
    return retrieval_correct ? InteractionCategory::ConsistentlyCorrect
                             : InteractionCategory::Negative;
  }
  return retrieval_correct ? InteractionCategory::Positive
                           : InteractionCategory::ConsistentlyWrong;
}

ContextQuality stratify_context_quality(const QAExample& example) {
  if (example.contexts.empty()) return {QualityLabel::NonGold, QualitySublabel::Irrelevant};
  std::vector<std::string> passages;
  passages.reserve(example.contexts.size());
  for (const auto& c : example.contexts) passages.push_back(normalize_answer(c));
  for (const auto& a : example.answers) {
    const std::string answer = normalize_answer(a);
    if (answer.empty()) continue;
    for (const auto& p : passages) {
      if (p.find(answer) != std::string::npos) return {QualityLabel::Gold, std::nullopt};
    }
  }
  return {QualityLabel::NonGold, example.quality_sublabel};
}

// ---------------------------------------------------------------------------
// Fixtures

std::vector<QAExample> parse_fixtures(std::istream& in) {
  std::vector<QAExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "fixture line " + std::to_string(line_no) + ": ";
    QAExample ex;
    try {
      const json j = json::parse(line);
      ex.id = j.at("id").get<std::string>();
      ex.question = j.at("question").get<std::string>();
      ex.answers = j.at("answers").get<std::vector<std::string>>();
      if (j.contains("contexts")) ex.contexts = j.at("contexts").get<std::vector<std::string>>();
      if (j.contains("quality_sublabel") && !j.at("quality_sublabel").is_null()) {
        const auto label = j.at("quality_sublabel").get<std::string>();
        if (label == "non_answering") {
          ex.quality_sublabel = QualitySublabel::NonAnswering;
        } else if (label == "irrelevant") {
          ex.quality_sublabel = QualitySublabel::Irrelevant;
        } else {
          fail(ErrorKind::InvalidConfig, where + "unknown quality_sublabel '" + label + "'");
        }
      }
    } catch (const json::exception& e) {
      fail(ErrorKind::InvalidConfig, where + e.what());
    }
    if (ex.answers.empty()) fail(ErrorKind::InvalidConfig, where + "answers must be non-empty");
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<QAExample> load_fixtures(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open fixtures file '" + path + "'");
  return parse_fixtures(in);
}

// ---------------------------------------------------------------------------
// Running

namespace {

ExampleOutcome evaluate_one(const QAExample& ex, const DecodeConfig& config, bool withhold,
                            const LogitBackend& backend) {
  ExampleOutcome out;
  out.id = ex.id;
  out.quality = stratify_context_quality(ex);
  PromptInput prompt{ex.question, withhold ? std::vector<std::string>{} : ex.contexts};
  try {
    const DecodeResult r = decode(prompt, config, backend);
    out.prediction = r.text;
    out.em = exact_match(r.text, ex.answers);
    out.f1 = f1_score(r.text, ex.answers);
    out.nfe = r.nfe_count;
    out.steps = r.steps_executed;
    out.backend_latency_ms = r.backend_latency_ms;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

ScoreSummary summarize(const std::vector<const ExampleOutcome*>& items) {
  ScoreSummary s;
  double em = 0.0, f1 = 0.0;
  for (const auto* o : items) {
    if (o->error) continue;
    ++s.n;
    em += o->em;
    f1 += o->f1;
  }
  if (s.n > 0) {
    s.em = em / static_cast<double>(s.n);
    s.f1 = f1 / static_cast<double>(s.n);
  }
  return s;
}

MethodReport aggregate(std::string name, const GuidanceConfig& guidance, bool withheld,
                       std::vector<ExampleOutcome> outcomes) {
  MethodReport m;
  m.name = std::move(name);
  m.guidance = guidance;
  m.contexts_withheld = withheld;
  m.examples = std::move(outcomes);

  std::vector<const ExampleOutcome*> all, gold, non_answering, irrelevant, unlabeled;
  double nfe = 0.0, steps = 0.0, latency = 0.0;
  for (const auto& o : m.examples) {
    all.push_back(&o);
    if (o.error) {
      ++m.failures;
      continue;
    }
    nfe += o.nfe;
    steps += o.steps;
    latency += o.backend_latency_ms;
    if (o.quality.label == QualityLabel::Gold) {
      gold.push_back(&o);
    } else if (!o.quality.sublabel) {
      unlabeled.push_back(&o);
    } else if (*o.quality.sublabel == QualitySublabel::NonAnswering) {
      non_answering.push_back(&o);
    } else {
      irrelevant.push_back(&o);
    }
  }
  m.scores = summarize(all);
  m.gold = summarize(gold);
  m.non_answering = summarize(non_answering);
  m.irrelevant = summarize(irrelevant);
  m.non_gold_unlabeled = summarize(unlabeled);
  if (m.scores.n > 0) {
    m.nfe_per_query = nfe / static_cast<double>(m.scores.n);
    m.backend_latency_ms = latency / static_cast<double>(m.scores.n);
  }
  if (steps > 0) m.nfe_per_step = nfe / steps;
  return m;
}

void categorize(MethodReport& method, const MethodReport& baseline) {
  InteractionRates rates;
  std::size_t counts[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < method.examples.size(); ++i) {
    auto& o = method.examples[i];
    const auto& b = baseline.examples[i];
    if (o.error || b.error) continue;
    const auto c = categorize_interaction(b.em == 1, o.em == 1);
    o.category = c;
    ++counts[static_cast<int>(c)];
    ++rates.n;
  }
  if (rates.n > 0) {
    const auto n = static_cast<double>(rates.n);
    rates.positive = static_cast<double>(counts[0]) / n;
    rates.negative = static_cast<double>(counts[1]) / n;
    rates.consistently_correct = static_cast<double>(counts[2]) / n;
    rates.consistently_wrong = static_cast<double>(counts[3]) / n;
  }
  method.interaction = rates;
}

}  // namespace

EvalReport run_eval(const std::vector<QAExample>& fixtures, const EvalOptions& options,
                    const LogitBackend& backend) {
  options.decode.validate();
  for (const auto& m : options.methods) m.guidance.validate();

  // Column 0 is the baseline, then one column per method.
  const std::size_t columns = options.methods.size() + 1;
  std::vector<std::vector<ExampleOutcome>> grid(columns,
                                                std::vector<ExampleOutcome>(fixtures.size()));

  DecodeConfig baseline_cfg = options.decode;
  baseline_cfg.guidance.policy = Policy::no_guidance();

  auto work = [&](std::size_t i) {
    grid[0][i] = evaluate_one(fixtures[i], baseline_cfg, true, backend);
    for (std::size_t m = 0; m < options.methods.size(); ++m) {
      DecodeConfig cfg = options.decode;
      cfg.guidance = options.methods[m].guidance;
      grid[m + 1][i] = evaluate_one(fixtures[i], cfg, false, backend);
    }
  };

  const std::size_t workers =
      std::min(std::max<std::size_t>(options.parallelism, 1), std::max<std::size_t>(fixtures.size(), 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < fixtures.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < fixtures.size(); i = next++) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  EvalReport report;
  report.n_examples = fixtures.size();
  report.baseline = aggregate(std::string(kBaselineName), baseline_cfg.guidance, true,
                              std::move(grid[0]));
  for (std::size_t m = 0; m < options.methods.size(); ++m) {
    MethodReport mr = aggregate(options.methods[m].name, options.methods[m].guidance, false,
                                std::move(grid[m + 1]));
    categorize(mr, report.baseline);
    report.methods.push_back(std::move(mr));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report JSON

namespace {

ordered_json scores_json(const ScoreSummary& s) {
  ordered_json j;
  j["n"] = s.n;
  j["em"] = s.em;
  j["f1"] = s.f1;
  return j;
}

ordered_json guidance_json(const GuidanceConfig& g) {
  ordered_json j;
  j["policy"] = std::string(to_string(g.policy.kind));
  if (g.policy.kind == PolicyKind::StaticCfg) j["lambda"] = g.policy.weight;
  if (g.policy.kind == PolicyKind::Cad) j["contrast_weight"] = g.policy.weight;
  if (g.policy.kind == PolicyKind::Aram) {
    j["lambda_max"] = g.lambda_max;
    j["beta"] = g.beta;
    j["epsilon"] = g.epsilon;
    j["noise_proxy"] = std::string(to_string(g.noise_proxy));
    j["stability"] = std::string(to_string(g.stability));
  }
  return j;
}

ordered_json method_json(const MethodReport& m) {
  ordered_json j;
  j["name"] = m.name;
  j["guidance"] = guidance_json(m.guidance);
  j["contexts_withheld"] = m.contexts_withheld;
  j["n"] = m.scores.n;
  j["failures"] = m.failures;
  j["em"] = m.scores.em;
  j["f1"] = m.scores.f1;
  j["nfe_per_step"] = m.nfe_per_step;
  j["nfe_per_query"] = m.nfe_per_query;
  j["backend_latency_ms"] = m.backend_latency_ms;
  if (m.interaction) {
    ordered_json r;
    r["n"] = m.interaction->n;
    r["positive"] = m.interaction->positive;
    r["negative"] = m.interaction->negative;
    r["consistently_correct"] = m.interaction->consistently_correct;
    r["consistently_wrong"] = m.interaction->consistently_wrong;
    j["interaction"] = r;
  }
  ordered_json strata;
  strata["gold"] = scores_json(m.gold);
  strata["non_answering"] = scores_json(m.non_answering);
  strata["irrelevant"] = scores_json(m.irrelevant);
  strata["non_gold_unlabeled"] = scores_json(m.non_gold_unlabeled);
  j["strata"] = strata;

  ordered_json examples = ordered_json::array();
  for (const auto& o : m.examples) {
    ordered_json e;
    e["id"] = o.id;
    e["prediction"] = o.prediction;
    e["em"] = o.em;
    e["f1"] = o.f1;
    e["nfe"] = o.nfe;
    e["steps"] = o.steps;
    e["quality"] = o.quality.label == QualityLabel::Gold ? "gold" : "non_gold";
    e["quality_sublabel"] =
        o.quality.sublabel ? ordered_json(std::string(to_string(*o.quality.sublabel))) : ordered_json();
    e["category"] = o.category ? ordered_json(std::string(to_string(*o.category))) : ordered_json();
    e["error"] = o.error ? ordered_json(*o.error) : ordered_json();
    examples.push_back(e);
  }
  j["examples"] = examples;
  return j;
}

}  // namespace

ordered_json report_to_json(const EvalReport& report, const DecodeConfig& decode) {
  ordered_json j;
  ordered_json cfg;
  cfg["length"] = decode.length;
  cfg["steps"] = decode.steps;
  cfg["unmask"] = std::string(to_string(decode.unmask));
  cfg["temperature"] = decode.sampler.temperature;
  cfg["top_p"] = decode.sampler.top_p;
  cfg["seed"] = decode.sampler.seed;
  j["config"] = cfg;
  j["n_examples"] = report.n_examples;
  j["baseline"] = method_json(report.baseline);
  ordered_json methods = ordered_json::array();
  for (const auto& m : report.methods) methods.push_back(method_json(m));
  j["methods"] = methods;
  return j;
}

}  // namespace aram
