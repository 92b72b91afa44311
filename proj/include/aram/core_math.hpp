#pragma once

/**
 * Numerical kernel for adaptive retrieval guidance.
 *
 * Everything here is a pure function of its arguments. Divergences and
 * entropies are in nats. Functions that take a log of a probability ratio
 * floor both inputs at kProbabilityFloor first (see distribution.hpp).
 *
 * The guided family is the exponential tilt of the prior by the context
 * score s(x) = log p_cond(x) - log p_prior(x):
 *
 *   p_lambda(x) = p_prior(x) exp(lambda s(x)) / Z_lambda
 *   L(lambda)   = lambda E_cond[s] - log Z_lambda      <= KL(cond || prior)
 *
 * with L(1) = KL, L'(0) = symmetric KL and L''(0) = -Var_prior(s).
 */

#include "aram/distribution.hpp"

#include <string_view>
#include <utility>

namespace aram {

enum class NoiseProxy { CondEntropy, PriorScoreVariance, PriorEntropy, AbsEntropyDiff };
enum class Stability { Tanh, RawClamped };
enum class PolicyKind { Aram, StaticCfg, Cad, AdaCadJsd, NoGuidance };

// A guidance policy. `weight` is the fixed scale for StaticCfg and the
// contrast weight for Cad; other policies ignore it.
struct Policy {
  PolicyKind kind = PolicyKind::Aram;
  double weight = 0.0;

  static Policy aram() { return {PolicyKind::Aram, 0.0}; }
  static Policy static_cfg(double lambda) { return {PolicyKind::StaticCfg, lambda}; }
  static Policy cad(double contrast_weight) { return {PolicyKind::Cad, contrast_weight}; }
  static Policy adacad_jsd() { return {PolicyKind::AdaCadJsd, 0.0}; }
  static Policy no_guidance() { return {PolicyKind::NoGuidance, 0.0}; }

  // NoGuidance only needs the conditional pass.
  bool needs_prior() const noexcept { return kind != PolicyKind::NoGuidance; }

  bool operator==(const Policy&) const = default;
};

inline constexpr double kDefaultCadWeight = 1.0;
inline constexpr double kDefaultStaticLambda = 1.5;

struct GuidanceConfig {
  double lambda_max = 1.0;
  double beta = 0.1;
  double epsilon = 1e-6;
  NoiseProxy noise_proxy = NoiseProxy::CondEntropy;
  Stability stability = Stability::Tanh;
  Policy policy = Policy::aram();

  // Throws InvalidConfig unless lambda_max >= 0, beta > 0, epsilon > 0.
  void validate() const;
};

struct GuidanceDiagnostics {
  double signal = 0.0;
  double noise = 0.0;
  double snr = 0.0;
  double lambda = 0.0;

  bool operator==(const GuidanceDiagnostics&) const = default;
};

std::string_view to_string(NoiseProxy proxy);
std::string_view to_string(Stability stability);
std::string_view to_string(PolicyKind kind);
NoiseProxy parse_noise_proxy(std::string_view text);
Stability parse_stability(std::string_view text);
// Accepts aram, static, cad, adacad, none. The scale of static/cad comes
// from the caller.
PolicyKind parse_policy_kind(std::string_view text);

// --- distributions -------------------------------------------------------

ProbVector normalize_logits(const LogitVector& logits);
double log_sum_exp(std::span<const double> values);

double kl_divergence(const ProbVector& p, const ProbVector& q);
double entropy(const ProbVector& p);
double jensen_shannon_divergence(const ProbVector& p, const ProbVector& q);

// --- tilted family -------------------------------------------------------

ContextScore context_score(const ProbVector& p_cond, const ProbVector& p_prior);

struct TiltedDistribution {
  ProbVector probs;
  double log_partition;
};

TiltedDistribution tilted_distribution(const ProbVector& p_prior, const ContextScore& score,
                                       double lambda);

// Donsker-Varadhan lower bound L(lambda) on KL(p_cond || p_prior).
double dv_bound(const ProbVector& p_cond, const ProbVector& p_prior, double lambda);

// --- signal / noise ------------------------------------------------------

// KL(cond||prior) + KL(prior||cond), equal to L'(0).
double signal(const ProbVector& p_cond, const ProbVector& p_prior);
double noise(const ProbVector& p_cond, const ProbVector& p_prior, NoiseProxy kind);
// Var_prior(s), equal to -L''(0).
double prior_score_variance(const ProbVector& p_cond, const ProbVector& p_prior);

inline constexpr double kVarianceFloor = 1e-12;

// signal / Var_prior(s): the maximizer of the second-order expansion of L
// around lambda = 0. Throws DegenerateDenominatorError when the variance is
// below kVarianceFloor.
double ideal_lambda_star(const ProbVector& p_cond, const ProbVector& p_prior);

// --- guidance rules ------------------------------------------------------

// lambda_max * tanh(beta * snr) or min(lambda_max, lambda_max * beta * snr).
double stabilized_lambda(double snr, const GuidanceConfig& cfg);

// Full diagnostics from raw signal/noise values; used by adaptive_lambda and
// by controlled sweeps in tests.
GuidanceDiagnostics lambda_from_signal_noise(double signal, double noise,
                                             const GuidanceConfig& cfg);

GuidanceDiagnostics adaptive_lambda(const ProbVector& p_cond, const ProbVector& p_prior,
                                    const GuidanceConfig& cfg);

// (1 - lambda) * l_prior + lambda * l_cond. Exact at lambda = 0 and 1.
LogitVector guided_logits(const LogitVector& l_cond, const LogitVector& l_prior,
                          double lambda);

struct GuidedOutput {
  LogitVector logits;
  GuidanceDiagnostics diagnostics;
};

// Dispatch on cfg.policy. For NoGuidance `l_prior` is ignored and may be
// empty.
GuidedOutput policy_lambda_and_logits(const LogitVector& l_cond, const LogitVector& l_prior,
                                      const GuidanceConfig& cfg);

}  // namespace aram
