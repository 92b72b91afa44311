#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace aram {

// Entries below this are raised to it (and the vector renormalized) before
// any logarithm of a ratio is taken.
inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kNormalizationTolerance = 1e-9;

// Categorical distribution over vocabulary indices 0..V-1, V >= 2.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> probs);

  static ProbVector uniform(std::size_t vocab_size);
  static ProbVector one_hot(std::size_t vocab_size, std::size_t index);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }

  // Every entry raised to kProbabilityFloor, then renormalized.
  ProbVector floored() const;

  bool operator==(const ProbVector&) const = default;

 private:
  struct Unchecked {};
  ProbVector(Unchecked, std::vector<double> probs) : probs_(std::move(probs)) {}

  std::vector<double> probs_;
};

// Unnormalized log-probabilities; every entry finite.
class LogitVector {
 public:
  explicit LogitVector(std::vector<double> logits);

  std::size_t size() const noexcept { return logits_.size(); }
  double operator[](std::size_t i) const { return logits_[i]; }
  std::span<const double> values() const noexcept { return logits_; }

  bool operator==(const LogitVector&) const = default;

 private:
  std::vector<double> logits_;
};

// s(x) = log p_cond(x) - log p_prior(x) on floored inputs. finite_mask[x] is
// false where either raw probability was at or below the floor.
struct ContextScore {
  std::vector<double> scores;
  std::vector<bool> finite_mask;

  std::size_t size() const noexcept { return scores.size(); }
};

}  // namespace aram
