#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "owattr/losses.hpp"
#include "owattr/prob.hpp"

using namespace owattr;

namespace {

double ce(const std::vector<double>& t, const std::vector<double>& p) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s -= t[i] * std::log(p[i] + ad::kLogEps);
  return s;
}

}  // namespace

TEST_CASE("supervised loss") {
  ad::Tape t;
  ad::Var onehot = t.leaf(Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0}));
  CHECK(loss_supervised(onehot, onehot, {0, 1}, 2).value().item() == doctest::Approx(0.0).epsilon(1e-9));
  ad::Var uni = t.leaf(Tensor({2, 3}, 1.0 / 3));
  CHECK(loss_supervised(uni, uni, {0, 1}, 2).value().item() == doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(loss_supervised(uni, uni, {0, 2}, 2), std::invalid_argument);

  SeededRng rng(1);
  Tensor w({4, 3}), s({4, 3});
  for (std::size_t r = 0; r < 4; ++r) {
    auto p = oracle::random_simplex(3, rng), q = oracle::random_simplex(3, rng);
    std::copy(p.begin(), p.end(), w.row(r).begin());
    std::copy(q.begin(), q.end(), s.row(r).begin());
  }
  const std::vector<int> y{0, 1, 1, 0};
  const double a = loss_supervised(t.leaf(w), t.leaf(s), y, 2).value().item();
  Tensor w2({4, 3}), s2({4, 3});
  const std::size_t perm[4] = {2, 0, 3, 1};
  std::vector<int> y2(4);
  for (std::size_t i = 0; i < 4; ++i) {
    std::copy(w.row(perm[i]).begin(), w.row(perm[i]).end(), w2.row(i).begin());
    std::copy(s.row(perm[i]).begin(), s.row(perm[i]).end(), s2.row(i).begin());
    y2[i] = y[perm[i]];
  }
  CHECK(loss_supervised(t.leaf(w2), t.leaf(s2), y2, 2).value().item() == doctest::Approx(a).epsilon(1e-14));
}

TEST_CASE("entropy regularizer") {
  ad::Tape t;
  CHECK(std::abs(loss_entropy_reg(t.leaf(Tensor({3, 4}, 0.25))).value().item()) < 1e-10);
  Tensor collapsed({5, 10});
  for (std::size_t r = 0; r < 5; ++r) collapsed.at(r, 3) = 1.0;
  CHECK(loss_entropy_reg(t.leaf(collapsed)).value().item() == doctest::Approx(std::log(10.0)).epsilon(1e-9));

  SeededRng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor p({3, 5});
    for (std::size_t r = 0; r < 3; ++r) {
      auto q = oracle::random_simplex(5, rng);
      std::copy(q.begin(), q.end(), p.row(r).begin());
    }
    REQUIRE(loss_entropy_reg(t.leaf(p)).value().item() >= -1e-12);
    REQUIRE(loss_entropy_reg(t.leaf(p), t.leaf(p)).value().item() ==
            doctest::Approx(loss_entropy_reg(t.leaf(p)).value().item()).epsilon(1e-14));
  }
}

TEST_CASE("thresholded consistency") {
  ad::Tape t;
  const Tensor target = Tensor::matrix(3, 2, {0.4, 0.6, 0.9, 0.1, 0.5, 0.5});
  const Tensor pred = Tensor::matrix(3, 2, {0.3, 0.7, 0.8, 0.2, 0.6, 0.4});
  ad::Var ps = t.leaf(pred);
  const double one = ce({0.9, 0.1}, {0.8, 0.2});
  CHECK(loss_ws(ps, target, 0.5).value().item() == doctest::Approx((ce({0.4, 0.6}, {0.3, 0.7}) + one) / 3));
  CHECK(loss_ws(ps, target, 0.65).value().item() == doctest::Approx(one / 3));
  CHECK(loss_ws(ps, target, 0.95).value().item() == 0.0);
  // delta = 0 is the unweighted loss, i.e. CCR with unit weights.
  const double all = loss_ws(ps, target, 0.0).value().item();
  CHECK(all == doctest::Approx(weighted_consistency(ps, target, {1, 1, 1}).value().item()).epsilon(1e-15));
}

TEST_CASE("ccr weight schedule") {
  for (double rho : {0.0, 0.13, 0.5, 0.87, 1.0}) {
    CHECK(ccr_weight(rho, 0, 50) == rho);
    CHECK(ccr_weight(rho, 50, 50) == 1.0 - rho);
    CHECK(ccr_weight(rho, 25, 50) == 0.5);
  }
  CHECK(ccr_weight(0.8, 1, 50) > ccr_weight(0.7, 1, 50));
  CHECK(ccr_weight(0.8, 49, 50) < ccr_weight(0.7, 49, 50));

  ad::Tape t;
  const Tensor sharp = Tensor::matrix(2, 2, {0.9, 0.1, 0.2, 0.8});
  const Tensor pred = Tensor::matrix(2, 2, {0.7, 0.3, 0.4, 0.6});
  std::vector<double> w;
  const double l0 = loss_ccr(t.leaf(pred), sharp, 0, 50, &w).value().item();
  CHECK(w == std::vector<double>{0.9, 0.8});
  CHECK(l0 == doctest::Approx((0.9 * ce({0.9, 0.1}, {0.7, 0.3}) + 0.8 * ce({0.2, 0.8}, {0.4, 0.6})) / 2));
  const double mid = loss_ccr(t.leaf(pred), sharp, 25, 50).value().item();
  CHECK(mid == doctest::Approx(0.5 * weighted_consistency(t.leaf(pred), sharp, {1, 1}).value().item()));
  const Tensor low = Tensor::matrix(2, 2, {0.0, 0.0, 0.0, 0.0});
  CHECK(loss_ccr(t.leaf(pred), low, 0, 50).value().item() == 0.0);
}

TEST_CASE("consistency targets are detached") {
  ad::Tape t;
  ad::Var logits_w = t.leaf(Tensor::matrix(2, 3, {0.3, -0.2, 0.5, 1.0, 0.1, -0.4}));
  ad::Var logits_s = t.leaf(Tensor::matrix(2, 3, {0.1, 0.2, 0.3, -0.1, 0.4, 0.0}));
  ad::Var pw = ad::softmax_rows(logits_w, 1.0);
  ad::Var ps = ad::softmax_rows(logits_s, 1.0);
  const Tensor sharp = ad::softmax_rows(logits_w, 0.1).value();
  SeededRng rng(3);
  ad::Var loss = ad::add(ad::add(loss_ccr(ps, sharp, 3, 10), loss_acr(ps, pw.value(), 1, 1.0, 0.1, 7, 5)),
                         loss_cpl_gumbel(ps, pw.value(), rng));
  const auto g = t.backward(loss);
  CHECK_FALSE(g.touched(logits_w));
  CHECK(g.touched(logits_s));
}

TEST_CASE("asymmetric selection") {
  CHECK(acr_select(0.95, true, 1.0, 0.9));
  CHECK(acr_select(0.65, false, 2.0 / 3, 0.9));
  CHECK_FALSE(acr_select(0.55, false, 2.0 / 3, 0.9));
  CHECK_FALSE(acr_select(0.85, true, 0.5, 0.9));

  const Tensor all_known = Tensor::matrix(2, 3, {0.8, 0.1, 0.1, 0.1, 0.8, 0.1});
  const GapStats g1 = acr_gap(all_known, 2);
  CHECK(g1.rho_known == doctest::Approx(0.8));
  CHECK(g1.n_novel == 0);
  CHECK(g1.ratio == 1.0);
  const Tensor mixed = Tensor::matrix(2, 3, {0.9, 0.05, 0.05, 0.2, 0.2, 0.6});
  const GapStats g2 = acr_gap(mixed, 2);
  CHECK(g2.ratio == doctest::Approx(0.6 / 0.9));
  const Tensor flip = Tensor::matrix(2, 3, {0.4, 0.3, 0.3, 0.0, 0.0, 1.0});
  CHECK(acr_gap(flip, 2).ratio == 1.5);

  SeededRng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const double rho = rng.uniform_open();
    const bool known = rng.bernoulli(0.5);
    const double g_lo = rng.uniform_open(), g_hi = g_lo + 0.1 * rng.uniform_open();
    const double r_lo = 1.5 * rng.uniform_open(), r_hi = r_lo + 0.1 * rng.uniform_open();
    REQUIRE((!acr_select(rho, known, r_lo, g_hi) || acr_select(rho, known, r_lo, g_lo)));
    REQUIRE((!acr_select(rho, known, r_hi, g_lo) || acr_select(rho, known, r_lo, g_lo)));
  }
}

TEST_CASE("acr loss") {
  ad::Tape t;
  Tensor weak({4, 2});
  weak.at(0, 0) = 0.95;
  weak.at(0, 1) = 0.05;
  for (std::size_t r = 1; r < 4; ++r) weak.at(r, 0) = weak.at(r, 1) = 0.5;
  const Tensor strong = Tensor::matrix(4, 2, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  std::vector<int> mask;
  CHECK(loss_acr(t.leaf(strong), weak, 1, 1.0, 0.9, 6, 5, &mask).value().item() ==
        doctest::Approx(std::log(2.0) / 4));
  CHECK(mask == std::vector<int>{1, 0, 0, 0});
  CHECK(loss_acr(t.leaf(strong), weak, 1, 1.0, 0.9, 5, 5).value().item() == 0.0);
  CHECK(loss_acr(t.leaf(strong), weak, 1, 1.0, 0.99, 6, 5).value().item() == 0.0);
}

TEST_CASE("gumbel pseudo-label loss") {
  ad::Tape t;
  SeededRng rng(5);
  const Tensor onehot = Tensor::matrix(1, 3, {0, 1, 0});
  const Tensor strong = Tensor::matrix(1, 3, {0.2, 0.5, 0.3});
  std::vector<std::size_t> picks;
  CHECK(loss_cpl_gumbel(t.leaf(strong), onehot, rng, &picks).value().item() == doctest::Approx(-std::log(0.5)));
  CHECK(picks == std::vector<std::size_t>{1});

  // Uniform weak predictions: E[loss] = (1/K) mean_c(-log p_c) per row, scaled by lambda = 1/K.
  const std::size_t n = 20000, k = 4;
  const Tensor uni({n, k}, 0.25);
  Tensor s({n, k});
  const double ps[4] = {0.1, 0.2, 0.3, 0.4};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) s.at(r, c) = ps[c];
  double expect = 0;
  for (double p : ps) expect += -std::log(p) / 4;
  const double got = loss_cpl_gumbel(t.leaf(s), uni, rng).value().item();
  CHECK(got == doctest::Approx(0.25 * expect).epsilon(0.02));
}

TEST_CASE("total loss additivity") {
  CHECK(loss_total(1, 0.5, 0.2, 1.0, 0.2) == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(loss_total(1, 0.5, 0.2, 7.0, 0.0) == doctest::Approx(1.7).epsilon(1e-15));
  ad::Tape t;
  auto s = [&](double v) { return t.constant(Tensor::scalar(v)); };
  CHECK(loss_total(s(0.3), s(0.7), s(0.11), s(2.5), 0.2).value().item() == loss_total(0.3, 0.7, 0.11, 2.5, 0.2));
  LossConfig bad;
  bad.warmup_epochs = 60;
  CHECK_THROWS(bad.validate());
}
