#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "owattr/model.hpp"

namespace owattr {

struct DppConfig {
  /// Target cumulative coverage (2-sigma mass of a normal, 95.44%).
  double coverage_threshold = 0.9544;
  /// Prototype budget K = multiplier * K_L when the novel count is unknown.
  int initial_k_multiplier = 10;
};

/// Per-prototype argmax counts over one epoch of unlabeled weak views.
class UsageCounter {
 public:
  explicit UsageCounter(std::size_t k = 0) : counts_(k, 0) {}

  void record(std::size_t prototype) { ++counts_.at(prototype); }
  void record(const std::vector<std::size_t>& prototypes) {
    for (auto p : prototypes) record(p);
  }
  void reset() { std::fill(counts_.begin(), counts_.end(), 0); }

  std::size_t operator[](std::size_t k) const { return counts_[k]; }
  const std::vector<std::size_t>& counts() const { return counts_; }
  std::vector<std::size_t>& counts() { return counts_; }
  std::size_t total() const;

 private:
  std::vector<std::size_t> counts_;
};

struct CoverageResult {
  std::vector<std::size_t> order;   // live novel prototypes, usage descending, ties by index
  std::vector<double> coverage;     // r_k aligned with order
  std::size_t k_star = 0;
  std::vector<std::size_t> high;    // order[0, k_star)
  std::vector<std::size_t> candidates;
};

/// Stage I: coverage-based identification of frequently used novel prototypes.
/// With no novel usage the result is empty (no-op).
CoverageResult stage1_identify(const UsageCounter& usage, const PrototypeBank& bank, double coverage_threshold);

/// Stage II: candidates with usage below the candidate mean and coverage
/// increment below the candidate mean increment (both strict).
std::vector<std::size_t> stage2_filter(const CoverageResult& stage1, const UsageCounter& usage);

struct PruneReport {
  int epoch = 0;
  std::size_t k_star = 0;
  std::vector<std::size_t> high;
  std::vector<std::size_t> candidates;
  std::vector<std::size_t> low;
  std::vector<std::pair<std::size_t, std::size_t>> merges;  // (low prototype, anchor prototype)
  std::size_t estimated_k = 0;  // K_L + live novel prototypes after the epoch
};

/// Stage III: merge each low prototype into its most similar high anchor and
/// retire it. Throws std::logic_error when low is non-empty but high is empty.
PruneReport stage3_merge(PrototypeBank& bank, const std::vector<std::size_t>& high,
                         const std::vector<std::size_t>& low);

/// Stages I -> II -> III, then resets the counter.
PruneReport run_epoch(UsageCounter& usage, PrototypeBank& bank, const DppConfig& config);

}  // namespace owattr
