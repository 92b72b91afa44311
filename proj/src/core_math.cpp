#include "aram/core_math.hpp"

#include "aram/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace aram {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorKind::InvalidInput, std::string(what) + ": vocabulary size mismatch (" +
                                      std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

double expectation(const ProbVector& p, std::span<const double> f) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * f[i];
  return acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// ProbVector / LogitVector

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) {
    fail(ErrorKind::InvalidInput, "distribution needs at least 2 entries");
  }
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0) {
      fail(ErrorKind::InvalidInput, "probability entries must be finite and non-negative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kNormalizationTolerance) {
    fail(ErrorKind::InvalidInput, "probabilities sum to " + std::to_string(sum) + ", not 1");
  }
}

ProbVector ProbVector::uniform(std::size_t vocab_size) {
  return ProbVector(std::vector<double>(vocab_size, 1.0 / static_cast<double>(vocab_size)));
}

ProbVector ProbVector::one_hot(std::size_t vocab_size, std::size_t index) {
  std::vector<double> p(vocab_size, 0.0);
  p.at(index) = 1.0;
  return ProbVector(std::move(p));
}

ProbVector ProbVector::floored() const {
  std::vector<double> out(probs_.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    out[i] = std::max(probs_[i], kProbabilityFloor);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return ProbVector(Unchecked{}, std::move(out));
}

LogitVector::LogitVector(std::vector<double> logits) : logits_(std::move(logits)) {
  for (std::size_t i = 0; i < logits_.size(); ++i) {
    if (!std::isfinite(logits_[i])) {
      fail(ErrorKind::InvalidInput, "non-finite logit at index " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Config helpers

void GuidanceConfig::validate() const {
  if (!(lambda_max >= 0.0) || !std::isfinite(lambda_max)) {
    fail(ErrorKind::InvalidConfig, "lambda_max must be a finite value >= 0");
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    fail(ErrorKind::InvalidConfig, "beta must be > 0");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    fail(ErrorKind::InvalidConfig, "epsilon must be > 0");
  }
  if (!std::isfinite(policy.weight)) {
    fail(ErrorKind::InvalidConfig, "policy weight must be finite");
  }
  switch (policy.kind) {
    case PolicyKind::Aram:
    case PolicyKind::StaticCfg:
    case PolicyKind::Cad:
    case PolicyKind::AdaCadJsd:
    case PolicyKind::NoGuidance:
      break;
    default:
      fail(ErrorKind::InvalidConfig, "unknown guidance policy");
  }
}

std::string_view to_string(NoiseProxy proxy) {
  switch (proxy) {
    case NoiseProxy::CondEntropy: return "cond-entropy";
    case NoiseProxy::PriorScoreVariance: return "prior-score-variance";
    case NoiseProxy::PriorEntropy: return "prior-entropy";
    case NoiseProxy::AbsEntropyDiff: return "abs-entropy-diff";
  }
  return "unknown";
}

std::string_view to_string(Stability stability) {
  switch (stability) {
    case Stability::Tanh: return "tanh";
    case Stability::RawClamped: return "raw-clamped";
  }
  return "unknown";
}

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Aram: return "aram";
    case PolicyKind::StaticCfg: return "static";
    case PolicyKind::Cad: return "cad";
    case PolicyKind::AdaCadJsd: return "adacad";
    case PolicyKind::NoGuidance: return "none";
  }
  return "unknown";
}

NoiseProxy parse_noise_proxy(std::string_view text) {
  if (text == "cond-entropy") return NoiseProxy::CondEntropy;
  if (text == "prior-score-variance") return NoiseProxy::PriorScoreVariance;
  if (text == "prior-entropy") return NoiseProxy::PriorEntropy;
  if (text == "abs-entropy-diff") return NoiseProxy::AbsEntropyDiff;
  fail(ErrorKind::InvalidConfig, "unknown noise proxy '" + std::string(text) + "'");
}

Stability parse_stability(std::string_view text) {
  if (text == "tanh") return Stability::Tanh;
  if (text == "raw-clamped" || text == "raw") return Stability::RawClamped;
  fail(ErrorKind::InvalidConfig, "unknown stability function '" + std::string(text) + "'");
}

PolicyKind parse_policy_kind(std::string_view text) {
  if (text == "aram") return PolicyKind::Aram;
  if (text == "static" || text == "cfg") return PolicyKind::StaticCfg;
  if (text == "cad") return PolicyKind::Cad;
  if (text == "adacad") return PolicyKind::AdaCadJsd;
  if (text == "none" || text == "rag") return PolicyKind::NoGuidance;
  fail(ErrorKind::InvalidConfig, "unknown policy '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Distributions

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double max = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(max)) return max;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - max);
  return max + std::log(acc);
}

ProbVector normalize_logits(const LogitVector& logits) {
  const auto l = logits.values();
  if (l.empty()) fail(ErrorKind::InvalidInput, "cannot normalize an empty logit vector");
  const double max = *std::max_element(l.begin(), l.end());
  std::vector<double> p(l.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    p[i] = std::exp(l[i] - max);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return ProbVector(std::move(p));
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  require_same_size(p.size(), q.size(), "kl_divergence");
  const ProbVector pf = p.floored();
  const ProbVector qf = q.floored();
  double acc = 0.0;
  for (std::size_t i = 0; i < pf.size(); ++i) {
    acc += pf[i] * (std::log(pf[i]) - std::log(qf[i]));
  }
  return acc;
}

double entropy(const ProbVector& p) {
  double acc = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) acc -= v * std::log(v);
  }
  return std::max(acc, 0.0);
}

double jensen_shannon_divergence(const ProbVector& p, const ProbVector& q) {
  require_same_size(p.size(), q.size(), "jensen_shannon_divergence");
  std::vector<double> mid(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) mid[i] = 0.5 * (p[i] + q[i]);
  // Not renormalized: for p == q the midpoint is bit-identical to p.
  const ProbVector m(std::move(mid));
  const double jsd = 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m);
  return std::clamp(jsd, 0.0, std::numbers::ln2);
}

// ---------------------------------------------------------------------------
// Tilted family

ContextScore context_score(const ProbVector& p_cond, const ProbVector& p_prior) {
  require_same_size(p_cond.size(), p_prior.size(), "context_score");
  const ProbVector cf = p_cond.floored();
  const ProbVector pf = p_prior.floored();
  ContextScore out;
  out.scores.resize(cf.size());
  out.finite_mask.resize(cf.size());
  for (std::size_t i = 0; i < cf.size(); ++i) {
    out.scores[i] = std::log(cf[i]) - std::log(pf[i]);
    out.finite_mask[i] = p_cond[i] > kProbabilityFloor && p_prior[i] > kProbabilityFloor;
  }
  return out;
}

TiltedDistribution tilted_distribution(const ProbVector& p_prior, const ContextScore& score,
                                       double lambda) {
  require_same_size(p_prior.size(), score.size(), "tilted_distribution");
  if (!std::isfinite(lambda)) fail(ErrorKind::InvalidInput, "lambda must be finite");
  const ProbVector pf = p_prior.floored();
  std::vector<double> log_w(pf.size());
  for (std::size_t i = 0; i < pf.size(); ++i) {
    if (std::isnan(score.scores[i])) {
      fail(ErrorKind::InvalidInput, "NaN context score at index " + std::to_string(i));
    }
    log_w[i] = std::log(pf[i]) + lambda * score.scores[i];
  }
  const double log_z = log_sum_exp(log_w);
  std::vector<double> probs(log_w.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    probs[i] = std::exp(log_w[i] - log_z);
    sum += probs[i];
  }
  // Remove the last-ulp drift left by exp so the ProbVector invariant holds.
  for (double& p : probs) p /= sum;
  return {ProbVector(std::move(probs)), log_z};
}

double dv_bound(const ProbVector& p_cond, const ProbVector& p_prior, double lambda) {
  const ContextScore s = context_score(p_cond, p_prior);
  const double expected_score = expectation(p_cond.floored(), s.scores);
  const double log_z = tilted_distribution(p_prior, s, lambda).log_partition;
  return lambda * expected_score - log_z;
}

// ---------------------------------------------------------------------------
// Signal / noise

double signal(const ProbVector& p_cond, const ProbVector& p_prior) {
  return kl_divergence(p_cond, p_prior) + kl_divergence(p_prior, p_cond);
}

double prior_score_variance(const ProbVector& p_cond, const ProbVector& p_prior) {
  const ContextScore s = context_score(p_cond, p_prior);
  const ProbVector pf = p_prior.floored();
  const double mean = expectation(pf, s.scores);
  double var = 0.0;
  for (std::size_t i = 0; i < pf.size(); ++i) {
    const double d = s.scores[i] - mean;
    var += pf[i] * d * d;
  }
  return var;
}

double noise(const ProbVector& p_cond, const ProbVector& p_prior, NoiseProxy kind) {
  require_same_size(p_cond.size(), p_prior.size(), "noise");
  switch (kind) {
    case NoiseProxy::CondEntropy:
      return entropy(p_cond);
    case NoiseProxy::PriorScoreVariance:
      return prior_score_variance(p_cond, p_prior);
    case NoiseProxy::PriorEntropy:
      return entropy(p_prior);
    case NoiseProxy::AbsEntropyDiff:
      return std::abs(entropy(p_prior) - entropy(p_cond));
  }
  fail(ErrorKind::InvalidConfig, "unknown noise proxy value");
}

double ideal_lambda_star(const ProbVector& p_cond, const ProbVector& p_prior) {
  const double var = prior_score_variance(p_cond, p_prior);
  if (var < kVarianceFloor) throw DegenerateDenominatorError(var, kVarianceFloor);
  return signal(p_cond, p_prior) / var;
}

// ---------------------------------------------------------------------------
// Guidance rules

double stabilized_lambda(double snr, const GuidanceConfig& cfg) {
  switch (cfg.stability) {
    case Stability::Tanh:
      return cfg.lambda_max * std::tanh(cfg.beta * snr);
    case Stability::RawClamped:
      return std::min(cfg.lambda_max, cfg.lambda_max * cfg.beta * snr);
  }
  fail(ErrorKind::InvalidConfig, "unknown stability function");
}

GuidanceDiagnostics lambda_from_signal_noise(double signal_value, double noise_value,
                                             const GuidanceConfig& cfg) {
  GuidanceDiagnostics d;
  d.signal = std::max(signal_value, 0.0);
  d.noise = std::max(noise_value, 0.0);
  d.snr = d.signal / (d.noise + cfg.epsilon);
  d.lambda = std::clamp(stabilized_lambda(d.snr, cfg), 0.0, cfg.lambda_max);
  return d;
}

GuidanceDiagnostics adaptive_lambda(const ProbVector& p_cond, const ProbVector& p_prior,
                                    const GuidanceConfig& cfg) {
  return lambda_from_signal_noise(signal(p_cond, p_prior),
                                  noise(p_cond, p_prior, cfg.noise_proxy), cfg);
}

LogitVector guided_logits(const LogitVector& l_cond, const LogitVector& l_prior, double lambda) {
  require_same_size(l_cond.size(), l_prior.size(), "guided_logits");
  if (!std::isfinite(lambda)) fail(ErrorKind::InvalidInput, "lambda must be finite");
  const double keep = 1.0 - lambda;
  std::vector<double> out(l_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = keep * l_prior[i] + lambda * l_cond[i];
  }
  return LogitVector(std::move(out));
}

GuidedOutput policy_lambda_and_logits(const LogitVector& l_cond, const LogitVector& l_prior,
                                      const GuidanceConfig& cfg) {
  switch (cfg.policy.kind) {
    case PolicyKind::NoGuidance:
      return {l_cond, GuidanceDiagnostics{0.0, 0.0, 0.0, 1.0}};
    case PolicyKind::Aram: {
      const GuidanceDiagnostics d =
          adaptive_lambda(normalize_logits(l_cond), normalize_logits(l_prior), cfg);
      return {guided_logits(l_cond, l_prior, d.lambda), d};
    }
    case PolicyKind::StaticCfg: {
      const double lambda = cfg.policy.weight;
      return {guided_logits(l_cond, l_prior, lambda), GuidanceDiagnostics{0.0, 0.0, 0.0, lambda}};
    }
    case PolicyKind::Cad: {
      // l_cond + w (l_cond - l_prior) is the interpolation at 1 + w.
      const double lambda = 1.0 + cfg.policy.weight;
      return {guided_logits(l_cond, l_prior, lambda), GuidanceDiagnostics{0.0, 0.0, 0.0, lambda}};
    }
    case PolicyKind::AdaCadJsd: {
      const double jsd =
          jensen_shannon_divergence(normalize_logits(l_cond), normalize_logits(l_prior));
      const double lambda = std::clamp(jsd / std::numbers::ln2, 0.0, 1.0);
      return {guided_logits(l_cond, l_prior, lambda), GuidanceDiagnostics{0.0, 0.0, 0.0, lambda}};
    }
  }
  fail(ErrorKind::InvalidConfig, "unknown guidance policy");
}

}  // namespace aram
