#include <doctest.h>

#include <cmath>

#include "owattr/dpp.hpp"
#include "owattr/rng.hpp"

using namespace owattr;

namespace {

PrototypeBank bank_with(int k_known, std::size_t k, std::size_t d, SeededRng& rng) {
  PrototypeBank b;
  b.k_known = k_known;
  b.prototypes = Tensor({k, d});
  for (auto& v : b.prototypes.raw()) v = rng.normal();
  b.live.assign(k, true);
  b.renormalize_live();
  return b;
}

UsageCounter usage_of(const std::vector<std::size_t>& counts) {
  UsageCounter u(counts.size());
  u.counts() = counts;
  return u;
}

}  // namespace

TEST_CASE("coverage trace hand case") {
  SeededRng rng(1);
  // One known prototype followed by six novel ones.
  PrototypeBank bank = bank_with(1, 7, 4, rng);
  const UsageCounter u = usage_of({999, 500, 300, 150, 30, 15, 5});
  const CoverageResult s1 = stage1_identify(u, bank, 0.9544);
  CHECK(s1.order == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
  CHECK(s1.coverage[3] == doctest::Approx(0.98));
  CHECK(s1.k_star == 4);
  CHECK(s1.candidates == std::vector<std::size_t>{5, 6});
  CHECK(stage2_filter(s1, u) == std::vector<std::size_t>{6});
}

TEST_CASE("stage one tie order and empty usage") {
  SeededRng rng(2);
  PrototypeBank bank = bank_with(2, 6, 3, rng);
  bank.live[3] = false;
  const CoverageResult s1 = stage1_identify(usage_of({0, 0, 10, 99, 10, 10}), bank, 0.9544);
  CHECK(s1.order == std::vector<std::size_t>{2, 4, 5});
  CHECK(s1.k_star == 3);
  CHECK(s1.candidates.empty());

  const CoverageResult none = stage1_identify(usage_of({7, 7, 0, 0, 0, 0}), bank, 0.9544);
  CHECK(none.order.empty());
  CHECK(none.k_star == 0);
  UsageCounter u = usage_of({7, 7, 0, 0, 0, 0});
  const Tensor before = bank.prototypes;
  const PruneReport rep = run_epoch(u, bank, DppConfig{});
  CHECK(rep.low.empty());
  CHECK(bank.prototypes == before);
  CHECK(u.total() == 0);
}

TEST_CASE("merge hand case") {
  PrototypeBank bank;
  bank.k_known = 0;
  bank.prototypes = Tensor::matrix(3, 2, {1, 0, 0, 1, -1, 0});
  bank.live = {true, true, true};
  const PruneReport rep = stage3_merge(bank, {0}, {1});
  const double h = std::sqrt(2.0) / 2;
  CHECK(bank.prototypes.at(0, 0) == doctest::Approx(h));
  CHECK(bank.prototypes.at(0, 1) == doctest::Approx(h));
  CHECK_FALSE(bank.live[1]);
  CHECK(bank.live[2]);
  CHECK(rep.merges == std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}});
  CHECK(rep.estimated_k == 2);
  CHECK_THROWS_AS(stage3_merge(bank, {}, {2}), std::logic_error);
}

TEST_CASE("low prototypes join their most similar anchor") {
  PrototypeBank bank;
  bank.k_known = 0;
  bank.prototypes = Tensor::matrix(4, 2, {1, 0, 0, 1, 0.9, 0.1, 0.2, 0.95});
  bank.live.assign(4, true);
  bank.renormalize_live();
  const PruneReport rep = stage3_merge(bank, {0, 1}, {2, 3});
  CHECK(rep.merges == std::vector<std::pair<std::size_t, std::size_t>>{{2, 0}, {3, 1}});
}

TEST_CASE("pruning properties on random usage") {
  SeededRng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k_known = 1 + rng.uniform_index(3);
    const std::size_t k = k_known + 2 + rng.uniform_index(20);
    PrototypeBank bank = bank_with(static_cast<int>(k_known), k, 5, rng);
    for (std::size_t j = k_known; j < k; ++j)
      if (rng.bernoulli(0.2)) bank.live[j] = false;
    std::vector<std::size_t> counts(k);
    for (auto& c : counts) c = rng.bernoulli(0.3) ? 0 : rng.uniform_index(200);
    UsageCounter u = usage_of(counts);
    const std::size_t live_before = bank.live_count();
    std::vector<bool> known_live(bank.live.begin(), bank.live.begin() + static_cast<std::ptrdiff_t>(k_known));
    const PruneReport rep = run_epoch(u, bank, DppConfig{});
    REQUIRE(bank.live_count() == live_before - rep.low.size());
    REQUIRE(rep.estimated_k == k_known + bank.live_novel_count());
    for (std::size_t j = 0; j < k_known; ++j) REQUIRE(bank.live[j] == known_live[j]);
    for (auto l : rep.low) {
      REQUIRE(l >= k_known);
      for (auto h : rep.high) REQUIRE(counts[l] <= counts[h]);
    }
    for (auto j : bank.live_indices()) {
      double n = 0;
      for (double v : bank.prototypes.row(j)) n += v * v;
      REQUIRE(std::sqrt(n) == doctest::Approx(1.0));
    }
    for (auto h : rep.high) REQUIRE(bank.live[h]);
  }
}

TEST_CASE("merge is idempotent once nothing is low") {
  SeededRng rng(4);
  PrototypeBank bank = bank_with(1, 6, 3, rng);
  UsageCounter u = usage_of({10, 100, 100, 100, 100, 100});
  const Tensor before = bank.prototypes;
  const PruneReport rep = run_epoch(u, bank, DppConfig{});
  CHECK(rep.low.empty());
  CHECK(bank.prototypes == before);
  CHECK(rep.estimated_k == 6);
}
