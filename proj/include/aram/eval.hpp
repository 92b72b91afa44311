#pragma once

// Fixture-driven QA evaluation: EM/F1, retrieval-prior interaction
// categories, context-quality strata, NFE and latency accounting.

#include "aram/backend.hpp"
#include "aram/engine.hpp"

#include <json.hpp>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aram {

enum class QualitySublabel { NonAnswering, Irrelevant };
enum class QualityLabel { Gold, NonGold };
enum class InteractionCategory { Positive, Negative, ConsistentlyCorrect, ConsistentlyWrong };

std::string_view to_string(QualitySublabel label);
std::string_view to_string(InteractionCategory category);

struct QAExample {
  std::string id;
  std::string question;
  std::vector<std::string> answers;  // non-empty
  std::vector<std::string> contexts;
  std::optional<QualitySublabel> quality_sublabel;
};

struct ContextQuality {
  QualityLabel label = QualityLabel::NonGold;
  std::optional<QualitySublabel> sublabel;

  bool operator==(const ContextQuality&) const = default;
};

// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view text);
int exact_match(std::string_view prediction, const std::vector<std::string>& answers);
double f1_score(std::string_view prediction, const std::vector<std::string>& answers);

InteractionCategory categorize_interaction(bool no_retrieval_correct, bool retrieval_correct);
ContextQuality stratify_context_quality(const QAExample& example);

// JSONL: {"id", "question", "answers", "contexts", "quality_sublabel"}.
// Malformed lines throw InvalidConfig naming the line.
std::vector<QAExample> parse_fixtures(std::istream& in);
std::vector<QAExample> load_fixtures(const std::string& path);

// A named guidance setup. The no-retrieval baseline is added by run_eval.
struct MethodSpec {
  std::string name;
  GuidanceConfig guidance;
};

struct EvalOptions {
  DecodeConfig decode;  // guidance is replaced per method
  std::vector<MethodSpec> methods;
  std::size_t parallelism = 1;
};

struct ExampleOutcome {
  std::string id;
  std::string prediction;
  int em = 0;
  double f1 = 0.0;
  int nfe = 0;
  int steps = 0;
  double backend_latency_ms = 0.0;
  std::optional<std::string> error;
  std::optional<InteractionCategory> category;  // unset for the baseline
  ContextQuality quality;
};

struct ScoreSummary {
  std::size_t n = 0;
  double em = 0.0;
  double f1 = 0.0;
};

struct InteractionRates {
  std::size_t n = 0;
  double positive = 0.0;
  double negative = 0.0;
  double consistently_correct = 0.0;
  double consistently_wrong = 0.0;
};

struct MethodReport {
  std::string name;
  GuidanceConfig guidance;
  bool contexts_withheld = false;
  ScoreSummary scores;
  std::size_t failures = 0;
  double nfe_per_step = 0.0;
  double nfe_per_query = 0.0;
  double backend_latency_ms = 0.0;  // mean per query
  std::optional<InteractionRates> interaction;
  ScoreSummary gold, non_answering, irrelevant, non_gold_unlabeled;
  std::vector<ExampleOutcome> examples;
};

struct EvalReport {
  std::size_t n_examples = 0;
  MethodReport baseline;
  std::vector<MethodReport> methods;
};

inline constexpr std::string_view kBaselineName = "no-retrieval";

EvalReport run_eval(const std::vector<QAExample>& fixtures, const EvalOptions& options,
                    const LogitBackend& backend);

// Key order is fixed; wall-clock time is not included so reports are
// byte-stable across runs.
nlohmann::ordered_json report_to_json(const EvalReport& report, const DecodeConfig& decode);

}  // namespace aram
