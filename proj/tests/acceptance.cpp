// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>

#include "oracles.hpp"
#include "owattr/dct.hpp"
#include "owattr/kernels.hpp"
#include "owattr/losses.hpp"
#include "owattr/metrics.hpp"
#include "owattr/skewlab.hpp"
#include "owattr/textio.hpp"
#include "owattr/trainer.hpp"

using namespace owattr;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
  std::printf("CRITERION %d %s: %s [%s]\n", id, ok ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

constexpr int kSeeds = 5;

// ---- 1: numerics

void numerics() {
  double worst_fd = 0;
  for (std::uint64_t s = 0; s < 100; ++s) worst_fd = std::max(worst_fd, oracle::graph_gradient_error(1000 + s));

  SeededRng rng(7);
  double worst_rt = 0;
  for (std::size_t side : {4u, 8u, 16u}) {
    const Tensor img = oracle::random_tensor({side, side}, rng);
    const Tensor back = idct2(dct2(img));
    for (std::size_t i = 0; i < img.size(); ++i) worst_rt = std::max(worst_rt, std::abs(back[i] - img[i]));
  }

  double worst_tv = 0;
  for (std::size_t k : {2u, 5u, 10u}) worst_tv = std::max(worst_tv, oracle::gumbel_tv(oracle::random_simplex(k, rng), 1000000, rng));

  report(1, worst_fd <= 1e-4 && worst_rt <= 1e-9 && worst_tv < 0.01,
         "autodiff vs finite differences, DCT round trip, Gumbel-max TV",
         "fd_rel_err " + fmt("%.2e", worst_fd) + " dct_rt " + fmt("%.2e", worst_rt) + " tv " + fmt("%.4f", worst_tv));
}

// ---- 2: skew diagnostics

void skew_diagnostics() {
  const auto rows = run_diagnostics(SkewLabConfig{});
  std::size_t bad = 0;
  double worst_grad = 0, min_cond = 1;
  for (const auto& r : rows) {
    if (r.status != "PASS") {
      ++bad;
      std::printf("  diagnostic %s %s analytic %.6g empirical %.6g\n", r.op.c_str(), r.status.c_str(), r.analytic,
                  r.empirical);
    }
    if (r.op.rfind("expected_gradient_mc", 0) == 0) worst_grad = std::max(worst_grad, std::abs(r.analytic - r.empirical));
    if (r.op.rfind("lowconf_mislabel_bound", 0) == 0) min_cond = std::min(min_cond, r.empirical);
  }
  report(2, bad == 0 && !rows.empty(), "expected gradient vs Monte Carlo, conditional mislabel bound, sign law",
         std::to_string(rows.size()) + " rows, worst grad gap " + fmt("%.2e", worst_grad) + ", min cond rate " +
             fmt("%.3f", min_cond));
}

// ---- 3: metrics oracle

void metrics_oracle() {
  SeededRng rng(3);
  auto labels = [&](std::size_t n, std::size_t k) {
    std::vector<int> v(n);
    for (auto& x : v) x = static_cast<int>(rng.uniform_index(k));
    return v;
  };
  std::size_t mismatched = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.uniform_index(200);
    const auto truth = labels(n, 1 + rng.uniform_index(7));
    const auto pred = labels(n, 1 + rng.uniform_index(7));
    mismatched += hungarian_align(pred, truth).matched != oracle::brute_force_matched(pred, truth);
  }
  const double hand = ari({0, 0, 1, 1}, {0, 1, 0, 1});
  std::size_t variant = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = 2 + rng.uniform_index(40), k = 1 + rng.uniform_index(6);
    const auto p = labels(n, k), q = labels(n, k);
    std::vector<int> perm(k);
    for (std::size_t i = 0; i < k; ++i) perm[i] = static_cast<int>(k - i) * 3;
    rng.shuffle(std::span<int>(perm));
    std::vector<int> p2(n);
    for (std::size_t i = 0; i < n; ++i) p2[i] = perm[static_cast<std::size_t>(p[i])];
    if (std::abs(nmi(p2, q) - nmi(p, q)) > 1e-12 || std::abs(ari(p2, q) - ari(p, q)) > 1e-12) ++variant;
  }
  report(3, mismatched == 0 && hand == -0.5 && variant == 0, "Hungarian vs brute force, ARI hand case, invariance",
         std::to_string(mismatched) + " mismatches, ari " + fmt("%.17g", hand) + ", " + std::to_string(variant) +
             " non-invariant pairs");
}

// ---- 4: schedule, selection and additivity

void schedule_laws() {
  bool ends = true;
  SeededRng rng(4);
  for (int t = 0; t < 100; ++t) {
    const double rho = rng.uniform_open();
    ends = ends && ccr_weight(rho, 0, 50) == rho && ccr_weight(rho, 50, 50) == 1.0 - rho &&
           ccr_weight(rho, 25, 50) == 0.5;
  }

  std::size_t violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t b = 8 + rng.uniform_index(56), k = 3 + rng.uniform_index(8);
    Tensor weak({b, k});
    for (std::size_t r = 0; r < b; ++r) {
      const auto p = oracle::random_simplex(k, rng);
      // Sharpen some rows so both sides of the thresholds are populated.
      double s = 0;
      std::vector<double> q(k);
      const double power = 1 + 8 * rng.uniform_open();
      for (std::size_t c = 0; c < k; ++c) s += (q[c] = std::pow(p[c], power));
      for (std::size_t c = 0; c < k; ++c) weak.at(r, c) = q[c] / s;
    }
    ad::Tape tape;
    ad::Var strong = tape.constant(weak);
    const int k_known = 1 + static_cast<int>(rng.uniform_index(k - 1));
    const double g = 0.5 + 0.45 * rng.uniform_open(), g2 = g + 0.05 * rng.uniform_open();
    const double r1 = 0.3 + 1.2 * rng.uniform_open(), r2 = std::min(1.5, r1 + 0.2 * rng.uniform_open());
    std::vector<int> m_base, m_gamma, m_ratio;
    loss_acr(strong, weak, k_known, r1, g, 10, 5, &m_base);
    loss_acr(strong, weak, k_known, r1, g2, 10, 5, &m_gamma);
    loss_acr(strong, weak, k_known, r2, g, 10, 5, &m_ratio);
    for (std::size_t i = 0; i < b; ++i) violations += (m_gamma[i] > m_base[i]) + (m_ratio[i] > m_base[i]);
  }

  SynthConfig sc;
  const SynthDataset data = generate(sc);
  TrainConfig tc;
  tc.epochs = 5;
  tc.loss.warmup_epochs = 2;
  double worst = 0;
  std::size_t steps = 0;
  for (Method m : {Method::cal, Method::gumbel_baseline, Method::fixmatch_baseline}) {
    tc.method = m;
    for (const auto& rec : run(tc, data).history)
      for (const auto& s : rec.steps) {
        worst = std::max(worst, std::abs(s.total - (loss_total(s.l_ce, s.r_reg, s.l_acr, s.l_ccr, tc.loss.alpha) +
                                                      s.l_pseudo)));
        ++steps;
      }
  }
  report(4, ends && violations == 0 && worst <= 1e-12, "CCR weight endpoints, ACR monotonicity, loss additivity",
         std::string(ends ? "endpoints exact" : "endpoint mismatch") + ", " + std::to_string(violations) +
             " selection violations, additivity " + fmt("%.1e", worst) + " over " + std::to_string(steps) + " steps");
}

// ---- 5-7: skew emergence, correction, ablation

struct SeedOutcome {
  double novel_acc = 0, delta = 0, noise = 0;
  std::vector<double> delta_trace;  // per epoch
};

std::vector<SeedOutcome> run_method(Method m, bool know_k_u) {
  std::vector<SeedOutcome> out;
  for (int s = 0; s < kSeeds; ++s) {
    SynthConfig sc;
    sc.seed = static_cast<std::uint64_t>(s);
    const SynthDataset data = generate(sc);
    TrainConfig tc;
    tc.method = m;
    tc.know_k_u = know_k_u;
    tc.seed = static_cast<std::uint64_t>(s);
    const RunResult r = run(tc, data);
    SeedOutcome o;
    for (const auto& h : r.history) o.delta_trace.push_back(h.report->skew_delta);
    const EvalReport& f = *r.history.back().report;
    o.novel_acc = f.novel_acc;
    o.delta = f.skew_delta;
    o.noise = f.lowconf_noise;
    std::printf("  %s seed %d: novel_acc %.4f delta %.4f lowconf_noise %.4f\n", to_string(m).c_str(), s, o.novel_acc,
                o.delta, o.noise);
    std::fflush(stdout);
    out.push_back(std::move(o));
  }
  return out;
}

template <typename F>
double median_of(const std::vector<SeedOutcome>& v, F f) {
  std::vector<double> x;
  for (const auto& o : v) x.push_back(f(o));
  return median(x);
}

void skew_experiments() {
  const auto cal = run_method(Method::cal, true);
  const auto gum = run_method(Method::gumbel_baseline, true);
  const auto fix = run_method(Method::fixmatch_baseline, true);
  const int warmup = LossConfig{}.warmup_epochs;

  bool emerge = true;
  double min_med = 1e9;
  const std::size_t epochs = gum.front().delta_trace.size();
  for (std::size_t e = static_cast<std::size_t>(warmup); e < epochs; ++e) {
    std::vector<double> col;
    for (const auto& o : gum) col.push_back(o.delta_trace[e]);
    const double m = median(col);
    min_med = std::min(min_med, m);
    emerge = emerge && m > 0;
  }
  report(5, emerge, "gumbel-baseline skew delta > 0 after warmup, median over 5 seeds",
         "min median delta over epochs " + std::to_string(warmup + 1) + ".." + std::to_string(epochs) + " = " +
             fmt("%.4f", min_med));

  auto acc = [](const SeedOutcome& o) { return o.novel_acc; };
  auto dlt = [](const SeedOutcome& o) { return o.delta; };
  auto noi = [](const SeedOutcome& o) { return o.noise; };
  const double cal_acc = median_of(cal, acc), gum_acc = median_of(gum, acc), fix_acc = median_of(fix, acc);
  const double cal_d = median_of(cal, dlt), gum_d = median_of(gum, dlt);
  const double cal_n = median_of(cal, noi), gum_n = median_of(gum, noi);
  report(6, cal_d < gum_d && cal_n < gum_n && cal_acc - gum_acc >= 0.05,
         "CAL vs gumbel-baseline: smaller delta, smaller low-confidence noise, Novel ACC +5 points",
         "delta " + fmt("%.4f", cal_d) + " vs " + fmt("%.4f", gum_d) + ", noise " + fmt("%.4f", cal_n) + " vs " +
             fmt("%.4f", gum_n) + ", novel acc " + fmt("%.4f", cal_acc) + " vs " + fmt("%.4f", gum_acc));
  report(7, cal_acc >= fix_acc, "CAL Novel ACC >= fixmatch-baseline, median over 5 seeds",
         "novel acc " + fmt("%.4f", cal_acc) + " vs " + fmt("%.4f", fix_acc));
}

// ---- 8: class-number estimation

void estimation() {
  std::vector<double> finals;
  bool monotone = true;
  for (int s = 0; s < kSeeds; ++s) {
    SynthConfig sc;
    sc.seed = static_cast<std::uint64_t>(s);
    const SynthDataset data = generate(sc);
    TrainConfig tc;
    tc.seed = static_cast<std::uint64_t>(s);
    std::size_t prev = static_cast<std::size_t>(tc.dpp.initial_k_multiplier * sc.k_known);
    std::string trace;
    const RunResult r = run(tc, data);
    for (const auto& h : r.history) {
      monotone = monotone && h.estimated_k <= prev;
      if (h.estimated_k != prev) trace += " e" + std::to_string(h.epoch) + "->" + std::to_string(h.estimated_k);
      prev = h.estimated_k;
    }
    finals.push_back(static_cast<double>(r.history.back().estimated_k));
    std::printf("  estimate seed %d: final %zu trajectory%s\n", s, r.history.back().estimated_k, trace.c_str());
    std::fflush(stdout);
  }
  const double med = median(finals);
  report(8, std::abs(med - 15.0) <= 2.0 && monotone, "estimated class count within 15 +- 2, non-increasing",
         "median final estimate " + fmt("%.1f", med) + (monotone ? ", trajectories non-increasing" : ", INCREASE seen"));
}

// ---- 9: early low-usage prototypes

void low_usage() {
  const SynthDataset data = generate(SynthConfig{});
  const LowUsageResult r = low_usage_experiment(data, TrainConfig{}, SkewLabConfig{});
  std::string meds;
  for (double m : r.median_per_epoch) meds += fmt(" %.0f", m);
  report(9, r.pass, "low-usage novel prototypes in epochs 1-3 >= 35 (median over 5 seeds)",
         "threshold " + fmt("%.2f", r.threshold) + ", bound " + std::to_string(r.bound) + ", medians" + meds);
}

// ---- 10: reproducibility

void reproducibility() {
  const SynthDataset data = generate(SynthConfig{});
  const fs::path root = fs::temp_directory_path() / "owattr_acceptance";
  fs::remove_all(root);
  TrainConfig tc;
  run(tc, data, {.out_dir = root / "a"});
  run(tc, data, {.out_dir = root / "b"});
  const bool same = read_file(root / "a" / "metrics.csv") == read_file(root / "b" / "metrics.csv");

  tc.checkpoint_every = 1;
  const RunResult whole = run(tc, data, {.out_dir = root / "whole", .stop_after = 3});
  run(tc, data, {.out_dir = root / "part", .stop_after = 1});
  const RunState s1 = checkpoint_resume(checkpoint_path(root / "part", 1));
  const RunResult resumed = run(tc, data, {.out_dir = root / "part", .stop_after = 3, .resume = s1});
  const bool resume_ok = resumed.state.model.w1 == whole.state.model.w1 &&
                         resumed.state.model.bank.prototypes == whole.state.model.bank.prototypes &&
                         read_file(root / "part" / "metrics.csv") == read_file(root / "whole" / "metrics.csv") &&
                         read_file(checkpoint_path(root / "part", 3)) == read_file(checkpoint_path(root / "whole", 3));
  fs::remove_all(root);
  report(10, same && resume_ok, "byte-identical metrics.csv across runs, resume equals uninterrupted over 3 epochs",
         std::string(same ? "metrics identical" : "metrics differ") + ", " + (resume_ok ? "resume exact" : "resume differs"));
}

}  // namespace

int main() {
  kernels::configure_threads_from_env();
  const auto t0 = std::chrono::steady_clock::now();
  numerics();
  skew_diagnostics();
  metrics_oracle();
  schedule_laws();
  skew_experiments();
  estimation();
  low_usage();
  reproducibility();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("acceptance: %d failing criteria, %.0f s\n", failures, secs);
  return failures ? 1 : 0;
}
