#pragma once

// Backend returning caller-supplied logits, one row per sequence position.

#include "aram/backend.hpp"

#include <atomic>
#include <string>
#include <vector>

namespace aram::testing {

class FixedBackend final : public LogitBackend {
 public:
  FixedBackend(std::vector<std::vector<double>> cond, std::vector<std::vector<double>> prior)
      : cond_(std::move(cond)), prior_(std::move(prior)) {}

  BackendResponse query(const BackendRequest& request) const override {
    ++calls;
    BackendResponse r;
    r.model_id = "fixed";
    const auto& rows = request.conditioned ? cond_ : prior_;
    for (std::size_t pos : request.masked_positions()) r.logits.emplace_back(rows.at(pos));
    return r;
  }
  std::size_t vocab_size() const override { return cond_.front().size(); }
  std::string model_id() const override { return "fixed"; }

  mutable std::atomic<int> calls{0};

 private:
  std::vector<std::vector<double>> cond_;
  std::vector<std::vector<double>> prior_;
};

}  // namespace aram::testing
