#include "owattr/dpp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace owattr {

std::size_t UsageCounter::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

CoverageResult stage1_identify(const UsageCounter& usage, const PrototypeBank& bank, double coverage_threshold) {
  CoverageResult res;
  for (std::size_t k = static_cast<std::size_t>(bank.k_known); k < bank.size(); ++k)
    if (bank.live[k]) res.order.push_back(k);
  std::stable_sort(res.order.begin(), res.order.end(),
                   [&](std::size_t a, std::size_t b) { return usage[a] > usage[b]; });
  std::size_t total = 0;
  for (auto k : res.order) total += usage[k];
  if (total == 0) {
    res.order.clear();
    return res;
  }
  std::size_t running = 0;
  res.k_star = res.order.size();
  for (std::size_t i = 0; i < res.order.size(); ++i) {
    running += usage[res.order[i]];
    res.coverage.push_back(static_cast<double>(running) / static_cast<double>(total));
    if (res.coverage.back() >= coverage_threshold && res.k_star == res.order.size()) res.k_star = i + 1;
  }
  res.high.assign(res.order.begin(), res.order.begin() + static_cast<std::ptrdiff_t>(res.k_star));
  res.candidates.assign(res.order.begin() + static_cast<std::ptrdiff_t>(res.k_star), res.order.end());
  return res;
}

std::vector<std::size_t> stage2_filter(const CoverageResult& stage1, const UsageCounter& usage) {
  std::vector<std::size_t> low;
  const std::size_t n = stage1.candidates.size();
  if (n == 0) return low;
  std::vector<double> delta(n);
  double mean_u = 0.0, mean_delta = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = stage1.k_star + i;
    delta[i] = stage1.coverage[pos] - (pos == 0 ? 0.0 : stage1.coverage[pos - 1]);
    mean_u += static_cast<double>(usage[stage1.candidates[i]]);
    mean_delta += delta[i];
  }
  mean_u /= static_cast<double>(n);
  mean_delta /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    if (static_cast<double>(usage[stage1.candidates[i]]) < mean_u && delta[i] < mean_delta)
      low.push_back(stage1.candidates[i]);
  return low;
}

namespace {

std::vector<double> unit_row(const Tensor& p, std::size_t r) {
  auto row = p.row(r);
  std::vector<double> v(row.begin(), row.end());
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  if (s > 0.0)
    for (auto& x : v) x /= s;
  return v;
}

}  // namespace

PruneReport stage3_merge(PrototypeBank& bank, const std::vector<std::size_t>& high,
                         const std::vector<std::size_t>& low) {
  PruneReport rep;
  rep.high = high;
  rep.low = low;
  if (!low.empty()) {
    if (high.empty()) throw std::logic_error("DPP merge: low-usage prototypes but no anchors");
    const std::size_t d = bank.prototypes.cols();
    std::vector<std::vector<double>> anchors, lows;
    for (auto h : high) anchors.push_back(unit_row(bank.prototypes, h));
    for (auto l : low) lows.push_back(unit_row(bank.prototypes, l));
    std::vector<std::vector<double>> sums = anchors;
    std::vector<std::size_t> members(high.size(), 0);
    for (std::size_t i = 0; i < low.size(); ++i) {
      std::size_t best = 0;
      double best_sim = -2.0;
      for (std::size_t j = 0; j < anchors.size(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += lows[i][c] * anchors[j][c];
        if (s > best_sim) {
          best_sim = s;
          best = j;
        }
      }
      for (std::size_t c = 0; c < d; ++c) sums[best][c] += lows[i][c];
      ++members[best];
      rep.merges.emplace_back(low[i], high[best]);
    }
    for (std::size_t j = 0; j < high.size(); ++j) {
      auto row = bank.prototypes.row(high[j]);
      const double inv = 1.0 / static_cast<double>(members[j] + 1);
      for (std::size_t c = 0; c < d; ++c) row[c] = sums[j][c] * inv;
    }
    for (auto l : low) bank.live[l] = false;
    // Anchors re-enter the bank at unit length.
    for (auto h : high) {
      auto v = unit_row(bank.prototypes, h);
      std::copy(v.begin(), v.end(), bank.prototypes.row(h).begin());
    }
  }
  rep.estimated_k = static_cast<std::size_t>(bank.k_known) + bank.live_novel_count();
  return rep;
}

PruneReport run_epoch(UsageCounter& usage, PrototypeBank& bank, const DppConfig& config) {
  const CoverageResult s1 = stage1_identify(usage, bank, config.coverage_threshold);
  const auto low = stage2_filter(s1, usage);
  PruneReport rep = stage3_merge(bank, s1.high, low);
  rep.k_star = s1.k_star;
  rep.candidates = s1.candidates;
  usage.reset();
  return rep;
}

}  // namespace owattr
