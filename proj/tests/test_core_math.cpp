#include "aram/core_math.hpp"
#include "aram/errors.hpp"
#include "aram/verify.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace aram;

namespace {

// Reference values from tests/oracles/core_math_oracle.py (mpmath, 50 digits).
const ProbVector kCond({0.1, 0.2, 0.7});
const ProbVector kPrior({0.7, 0.2, 0.1});

constexpr double kKl = 1.16754608943319;
constexpr double kEntropyCond = 0.801818552543337;
constexpr double kScore = 1.94591014905531;
constexpr double kSignal = 2.33509217886638;
constexpr double kVariance = 1.66608917560645;
constexpr double kLambdaStar = 1.40154093373568;
constexpr double kAramLambda = 0.283261130979956;
constexpr double kDvHalf = 0.899648491924714;
constexpr double kJsd = 0.253101615442807;

}  // namespace

TEST_CASE("ProbVector validation") {
  CHECK_NOTHROW(ProbVector({0.5, 0.5}));
  CHECK_THROWS_AS(ProbVector({1.0}), Error);
  CHECK_THROWS_AS(ProbVector({0.6, 0.6}), Error);
  CHECK_THROWS_AS(ProbVector({-0.1, 1.1}), Error);
  CHECK_THROWS_AS(ProbVector({NAN, 1.0}), Error);
  CHECK_THROWS_AS(LogitVector({0.0, INFINITY}), Error);
  try {
    ProbVector({0.6, 0.6});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

TEST_CASE("floored distribution stays normalized") {
  const ProbVector f = ProbVector::one_hot(4, 2).floored();
  double sum = 0.0;
  for (double v : f.values()) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(f[0] > 0.0);
}

TEST_CASE("normalize_logits") {
  const ProbVector p = normalize_logits(LogitVector({1.0, 2.0, 3.0}));
  CHECK(p[0] == doctest::Approx(0.0900305731704).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.244728471055).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(0.665240955775).epsilon(1e-12));

  const ProbVector big = normalize_logits(LogitVector({1000.0, 1000.0}));
  CHECK(big[0] == doctest::Approx(0.5));
  const ProbVector shifted = normalize_logits(LogitVector({-1000.0, -999.0}));
  CHECK(std::isfinite(shifted[0]));
  CHECK(shifted[1] > shifted[0]);
}

TEST_CASE("log_sum_exp is stable") {
  const std::vector<double> v{1000.0, 1000.0};
  CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::numbers::ln2));
  const std::vector<double> w{-1e300, 0.0};
  CHECK(log_sum_exp(w) == doctest::Approx(0.0));
}

TEST_CASE("divergences and entropy against the oracle") {
  CHECK(std::abs(kl_divergence(kCond, kPrior) - kKl) < 1e-9);
  CHECK(kl_divergence(kCond, kCond) == doctest::Approx(0.0));
  CHECK(std::abs(kl_divergence(ProbVector::one_hot(3, 0), ProbVector::uniform(3)) - 1.09861228861085) < 1e-9);
  CHECK(std::abs(entropy(kCond) - kEntropyCond) < 1e-12);
  CHECK(entropy(ProbVector::one_hot(5, 1)) == 0.0);
  CHECK(entropy(ProbVector::uniform(8)) == doctest::Approx(std::log(8.0)));

  CHECK(jensen_shannon_divergence(kCond, kCond) == 0.0);
  CHECK(std::abs(jensen_shannon_divergence(kCond, kPrior) - kJsd) < 1e-9);
  CHECK(std::abs(jensen_shannon_divergence(ProbVector::one_hot(2, 0), ProbVector::one_hot(2, 1)) -
                 std::numbers::ln2) < 1e-4);
}

TEST_CASE("context score and tilted family") {
  const ContextScore s = context_score(kCond, kPrior);
  CHECK(s.scores[0] == doctest::Approx(-kScore).epsilon(1e-12));
  CHECK(std::abs(s.scores[1]) < 1e-12);
  CHECK(s.scores[2] == doctest::Approx(kScore).epsilon(1e-12));
  for (bool m : s.finite_mask) CHECK(m);

  const ContextScore zero = context_score(ProbVector::one_hot(3, 0), kPrior);
  CHECK_FALSE(zero.finite_mask[1]);
  CHECK(std::isfinite(zero.scores[1]));

  SUBCASE("lambda 0 returns the prior") {
    const TiltedDistribution t = tilted_distribution(kPrior, s, 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(t.probs[i] == doctest::Approx(kPrior[i]));
    CHECK(std::abs(t.log_partition) < 1e-12);
  }
  SUBCASE("lambda 1 returns the conditional with ln Z = 0") {
    const TiltedDistribution t = tilted_distribution(kPrior, s, 1.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(t.probs[i] == doctest::Approx(kCond[i]));
    CHECK(std::abs(t.log_partition) < 1e-12);
  }
  SUBCASE("lambda 0.5 is the geometric midpoint") {
    const TiltedDistribution t = tilted_distribution(kPrior, s, 0.5);
    CHECK(t.probs[0] == doctest::Approx(0.362854057411).epsilon(1e-10));
    CHECK(t.probs[1] == doctest::Approx(0.274291885177).epsilon(1e-10));
    CHECK(t.probs[2] == doctest::Approx(0.362854057411).epsilon(1e-10));
  }
}

TEST_CASE("dv bound") {
  CHECK(std::abs(dv_bound(kCond, kPrior, 1.0) - kKl) < 1e-9);
  CHECK(std::abs(dv_bound(kCond, kPrior, 0.0)) < 1e-12);
  const double half = dv_bound(kCond, kPrior, 0.5);
  CHECK(std::abs(half - kDvHalf) < 1e-9);
  CHECK(half > 0.0);
  CHECK(half < kKl);
}

TEST_CASE("signal, variance and ideal lambda") {
  CHECK(std::abs(signal(kCond, kPrior) - kSignal) < 1e-9);
  CHECK(signal(kCond, kPrior) == doctest::Approx(2.33511).epsilon(1e-4));
  CHECK(signal(kCond, kCond) == 0.0);
  CHECK(std::abs(signal(ProbVector::one_hot(3, 0), ProbVector::uniform(3)) - 18.4206807438971) < 1e-6);
  CHECK(std::abs(prior_score_variance(kCond, kPrior) - kVariance) < 1e-9);
  CHECK(std::abs(ideal_lambda_star(kCond, kPrior) - kLambdaStar) < 1e-9);

  CHECK_THROWS_AS(ideal_lambda_star(kCond, kCond), DegenerateDenominatorError);
  try {
    ideal_lambda_star(kCond, kCond);
  } catch (const DegenerateDenominatorError& e) {
    CHECK(e.kind() == ErrorKind::DegenerateDenominator);
    CHECK(e.variance() < kVarianceFloor);
  }
}

TEST_CASE("noise proxies") {
  CHECK(noise(kCond, kPrior, NoiseProxy::CondEntropy) == doctest::Approx(kEntropyCond));
  CHECK(noise(kCond, kPrior, NoiseProxy::PriorEntropy) == doctest::Approx(entropy(kPrior)));
  CHECK(noise(kCond, kPrior, NoiseProxy::PriorScoreVariance) == doctest::Approx(kVariance));
  CHECK(noise(kCond, kPrior, NoiseProxy::AbsEntropyDiff) == doctest::Approx(0.0).epsilon(1e-12));
  const ProbVector sharp({0.9, 0.05, 0.05});
  CHECK(noise(sharp, kPrior, NoiseProxy::AbsEntropyDiff) ==
        doctest::Approx(std::abs(entropy(sharp) - entropy(kPrior))));
}

TEST_CASE("adaptive lambda") {
  GuidanceConfig cfg;
  const GuidanceDiagnostics d = adaptive_lambda(kCond, kPrior, cfg);
  CHECK(std::abs(d.lambda - kAramLambda) < 1e-9);
  CHECK(d.lambda == doctest::Approx(0.28329).epsilon(1e-4));
  CHECK(d.signal == doctest::Approx(kSignal));
  CHECK(d.noise == doctest::Approx(kEntropyCond));
  CHECK(d.snr == doctest::Approx(kSignal / (kEntropyCond + 1e-6)));

  CHECK(adaptive_lambda(kCond, kCond, cfg).lambda == 0.0);

  cfg.lambda_max = 0.0;
  CHECK(adaptive_lambda(kCond, kPrior, cfg).lambda == 0.0);

  SUBCASE("raw clamped") {
    GuidanceConfig raw;
    raw.stability = Stability::RawClamped;
    CHECK(lambda_from_signal_noise(1.0, 1.0, raw).lambda == doctest::Approx(0.1 / (1.0 + 1e-6)));
    CHECK(lambda_from_signal_noise(1000.0, 1.0, raw).lambda == 1.0);
  }
  SUBCASE("tanh saturation") {
    GuidanceConfig t;
    t.lambda_max = 2.5;
    CHECK(std::abs(lambda_from_signal_noise(200.0, 1.0, t).lambda - 2.5) < 1e-9);
  }
}

TEST_CASE("guidance config validation") {
  GuidanceConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.beta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = GuidanceConfig{};
  cfg.lambda_max = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = GuidanceConfig{};
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("guided logits") {
  const LogitVector prior({0.0, 0.0});
  const LogitVector cond({2.0, -2.0});
  CHECK(guided_logits(cond, prior, 0.5) == LogitVector({1.0, -1.0}));
  CHECK(guided_logits(cond, prior, 0.0) == prior);
  CHECK(guided_logits(cond, prior, 1.0) == cond);
  CHECK(guided_logits(cond, prior, 2.0) == LogitVector({4.0, -4.0}));
  CHECK_THROWS_AS(guided_logits(cond, LogitVector({0.0, 0.0, 0.0}), 0.5), Error);
}

TEST_CASE("policy dispatch") {
  const LogitVector lc({0.3, 1.2, -0.4});
  const LogitVector lp({1.0, 0.1, 0.2});
  GuidanceConfig cfg;

  cfg.policy = Policy::no_guidance();
  GuidedOutput none = policy_lambda_and_logits(lc, LogitVector(std::vector<double>{}), cfg);
  CHECK(none.logits == lc);
  CHECK(none.diagnostics == GuidanceDiagnostics{0.0, 0.0, 0.0, 1.0});

  cfg.policy = Policy::static_cfg(1.0);
  GuidedOutput s1 = policy_lambda_and_logits(lc, lp, cfg);
  CHECK(s1.logits == lc);
  CHECK(s1.diagnostics.lambda == 1.0);
  CHECK(s1.diagnostics.signal == 0.0);

  cfg.policy = Policy::cad(kDefaultCadWeight);
  GuidedOutput cad = policy_lambda_and_logits(lc, lp, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(cad.logits[i] == doctest::Approx(lc[i] + kDefaultCadWeight * (lc[i] - lp[i])));
  }
  CHECK(cad.diagnostics.lambda == 1.0 + kDefaultCadWeight);

  cfg.policy = Policy::adacad_jsd();
  GuidedOutput same = policy_lambda_and_logits(lc, lc, cfg);
  CHECK(same.diagnostics.lambda == 0.0);
  CHECK(same.logits == lc);
  GuidedOutput ada = policy_lambda_and_logits(lc, lp, cfg);
  CHECK(ada.diagnostics.lambda ==
        doctest::Approx(jensen_shannon_divergence(normalize_logits(lc), normalize_logits(lp)) /
                        std::numbers::ln2));

  cfg.policy = Policy::aram();
  GuidedOutput aram = policy_lambda_and_logits(lc, lp, cfg);
  const GuidanceDiagnostics d = adaptive_lambda(normalize_logits(lc), normalize_logits(lp), cfg);
  CHECK(aram.diagnostics == d);
}

TEST_CASE("enum names round trip") {
  for (auto p : {NoiseProxy::CondEntropy, NoiseProxy::PriorScoreVariance, NoiseProxy::PriorEntropy,
                 NoiseProxy::AbsEntropyDiff}) {
    CHECK(parse_noise_proxy(to_string(p)) == p);
  }
  for (auto s : {Stability::Tanh, Stability::RawClamped}) CHECK(parse_stability(to_string(s)) == s);
  CHECK(parse_policy_kind("none") == PolicyKind::NoGuidance);
  CHECK(parse_policy_kind("static") == PolicyKind::StaticCfg);
  CHECK_THROWS_AS(parse_policy_kind("bogus"), Error);
}

// --- properties ------------------------------------------------------------

TEST_CASE("property: KL non-negative on random floored pairs") {
  const auto r = run_property("kl-nonnegative", 11);
  CHECK(r.passed);
  CHECK(r.cases == 1000);
}

TEST_CASE("property: DV bound and corollary") {
  CHECK(run_property("dv-bound", 12).passed);
  CHECK(run_property("corollary", 13).passed);
}

TEST_CASE("property: derivative identities and ideal lambda") {
  CHECK(run_property("derivatives", 14).passed);
  CHECK(run_property("lambda-star", 15).passed);
}

TEST_CASE("property: range, shift invariance, tilting closure, CMI") {
  CHECK(run_property("guidance-range", 16).passed);
  CHECK(run_property("shift-invariance", 17).passed);
  CHECK(run_property("tilting-closure", 18).passed);
  CHECK(run_property("cmi", 19).passed);
}

TEST_CASE("property: lambda monotone in signal and antitone in noise") {
  GuidanceConfig cfg;
  for (auto stab : {Stability::Tanh, Stability::RawClamped}) {
    cfg.stability = stab;
    double prev = -1.0;
    for (int k = 0; k <= 100; ++k) {
      const double l = lambda_from_signal_noise(0.5 * k, 1.0, cfg).lambda;
      CHECK(l >= prev);
      CHECK(l <= cfg.lambda_max);
      prev = l;
    }
    prev = 2.0;
    for (int k = 0; k <= 100; ++k) {
      const double l = lambda_from_signal_noise(3.0, 0.01 + 0.1 * k, cfg).lambda;
      CHECK(l <= prev);
      CHECK(l >= 0.0);
      prev = l;
    }
  }
}

TEST_CASE("verification rejects unknown property names") {
  CHECK_THROWS_AS(run_verification(0, {"nope"}), Error);
  CHECK(property_names().size() == 9);
}
