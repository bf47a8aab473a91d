#include "owattr/skewlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "owattr/autodiff.hpp"
#include "owattr/losses.hpp"
#include "owattr/prob.hpp"
#include "owattr/textio.hpp"

namespace owattr {

namespace {

double sq_norm(const Tensor& p) {
  double s = 0.0;
  for (double v : p.raw()) s += v * v;
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Tensor expected_gradient(const Tensor& p) {
  const double n2 = sq_norm(p);
  Tensor g(p.shape());
  for (std::size_t j = 0; j < p.size(); ++j) g[j] = p[j] * (n2 - p[j]);
  return g;
}

Tensor directional_update(const Tensor& p, double lr) {
  Tensor g = expected_gradient(p);
  for (auto& v : g.raw()) v *= -lr;
  return g;
}

Tensor monte_carlo_gradient(const Tensor& p, std::size_t draws, SeededRng& rng) {
  const std::size_t k = p.size();
  if (draws == 0) throw std::invalid_argument("monte_carlo_gradient: zero draws");
  Tensor logits({draws, k});
  for (std::size_t i = 0; i < draws; ++i)
    for (std::size_t j = 0; j < k; ++j) logits.at(i, j) = std::log(std::max(p[j], 1e-300));

  ad::Tape tape;
  ad::Var s = tape.leaf(std::move(logits), "logits");
  ad::Var probs = ad::softmax_rows(s, 1.0);
  const Tensor target = probs.value();
  ad::Var loss = loss_cpl_gumbel(probs, target, rng);
  const Tensor g = tape.backward(loss).of(s);

  // The loss is a mean over rows, so the row gradients already sum to the mean.
  Tensor out({k});
  for (std::size_t i = 0; i < draws; ++i)
    for (std::size_t j = 0; j < k; ++j) out[j] += g.at(i, j);
  return out;
}

double mislabel_rate(const Tensor& p, std::size_t y_star, std::size_t draws, SeededRng& rng) {
  if (y_star >= p.size()) throw std::invalid_argument("mislabel_rate: y_star out of range");
  if (draws == 0) throw std::invalid_argument("mislabel_rate: zero draws");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < draws; ++i) wrong += gumbel_categorical(p.data(), rng) != y_star ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(draws);
}

ConditionalMislabel conditional_mislabel_rate(const Tensor& p, double tau_conf, std::size_t draws, SeededRng& rng) {
  ConditionalMislabel r;
  std::size_t wrong = 0;
  double expected = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const std::size_t c = gumbel_categorical(p.data(), rng);
    const std::size_t y = gumbel_categorical(p.data(), rng);
    if (!(p[c] < tau_conf)) continue;
    ++r.low_draws;
    wrong += c != y ? 1 : 0;
    expected += 1.0 - p[c];
  }
  if (r.low_draws == 0) {
    r.sampled = r.expected = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.sampled = static_cast<double>(wrong) / static_cast<double>(r.low_draws);
    r.expected = expected / static_cast<double>(r.low_draws);
  }
  return r;
}

std::vector<double> simulate_collapse(const Tensor& p0, double lr, std::size_t steps) {
  Tensor s(p0.shape());
  for (std::size_t j = 0; j < p0.size(); ++j) s[j] = std::log(p0[j]);
  std::vector<double> trace;
  trace.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor d = directional_update(softmax(s), lr);
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += d[j];
    trace.push_back(max_value(softmax(s).data()));
  }
  return trace;
}

Tensor random_simplex(std::size_t k, SeededRng& rng) {
  Tensor p({k});
  double total = 0.0;
  for (auto& v : p.raw()) {
    v = -std::log(rng.uniform_open());
    total += v;
  }
  for (auto& v : p.raw()) v /= total;
  return p;
}

std::vector<DiagnosticRow> run_diagnostics(const SkewLabConfig& config) {
  if (config.k < 2) throw std::invalid_argument("skewlab needs at least two classes");
  const auto k = static_cast<std::size_t>(config.k);
  const bool under = config.budget < SkewLabConfig::kMinBudget;
  auto status = [&](bool ok, bool monte_carlo) -> std::string {
    if (monte_carlo && under) return "WARN";
    return ok ? "PASS" : "FAIL";
  };
  std::vector<DiagnosticRow> rows;
  SeededRng root(config.seed, 0x736b6577);

  // Hand case and the flat-distribution fixed point.
  {
    const Tensor g = expected_gradient(Tensor::vector({0.5, 0.3, 0.2}));
    const double want[3] = {-0.06, 0.024, 0.036};
    for (std::size_t j = 0; j < 3; ++j)
      rows.push_back({"expected_gradient_hand[" + std::to_string(j) + "]", want[j], g[j], 1e-12,
                      status(std::abs(g[j] - want[j]) <= 1e-12, false)});
    const Tensor u = expected_gradient(Tensor({k}, 1.0 / static_cast<double>(k)));
    double worst = 0.0;
    for (double v : u.raw()) worst = std::max(worst, std::abs(v));
    rows.push_back({"expected_gradient_uniform", 0.0, worst, 1e-15, status(worst <= 1e-15, false)});
  }

  // Analytic expectation vs reverse-mode Monte Carlo.
  for (std::size_t t = 0; t < config.simplices; ++t) {
    SeededRng rng = root.split(100 + t);
    const Tensor p = random_simplex(k, rng);
    const Tensor want = expected_gradient(p);
    const Tensor got = monte_carlo_gradient(p, config.budget, rng);
    std::size_t jmax = 0;
    double dev = -1.0, sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sum += want[j];
      if (std::abs(got[j] - want[j]) > dev) {
        dev = std::abs(got[j] - want[j]);
        jmax = j;
      }
    }
    rows.push_back({"expected_gradient_mc#" + std::to_string(t), want[jmax], got[jmax], config.gradient_tolerance,
                    status(dev <= config.gradient_tolerance, true)});
    rows.push_back({"expected_gradient_sum#" + std::to_string(t), 0.0, sum, 1e-12, status(std::abs(sum) <= 1e-12, false)});
  }

  // Mislabel rate at fixed truth and the low-confidence bound.
  for (std::size_t t = 0; t < config.simplices; ++t) {
    SeededRng rng = root.split(200 + t);
    const Tensor p = random_simplex(k, rng);
    const std::size_t y = argmax(p.data());
    const double want = 1.0 - p[y];
    const double got = mislabel_rate(p, y, config.budget, rng);
    const double sigma = std::sqrt(want * (1.0 - want) / static_cast<double>(config.budget));
    rows.push_back({"mislabel_rate#" + std::to_string(t), want, got, 3.0 * sigma,
                    status(std::abs(got - want) <= 3.0 * sigma, true)});
    const ConditionalMislabel c = conditional_mislabel_rate(p, config.tau_conf, config.budget, rng);
    const double bound = 1.0 - config.tau_conf;
    const bool ok = c.low_draws == 0 || c.expected >= bound;
    rows.push_back({"lowconf_mislabel_bound#" + std::to_string(t), bound, c.expected, 0.0, status(ok, true)});
    const double s3 = c.low_draws ? 3.0 * std::sqrt(bound * (1.0 - bound) / static_cast<double>(c.low_draws)) : 0.0;
    rows.push_back({"lowconf_mislabel_sampled#" + std::to_string(t), bound, c.sampled, s3,
                    status(c.low_draws == 0 || c.sampled >= bound - s3, true)});
  }

  // Sign law of the directional update.
  {
    SeededRng rng = root.split(300);
    std::size_t violations = 0;
    for (std::size_t t = 0; t < config.sign_simplices; ++t) {
      const std::size_t kk = 2 + rng.uniform_index(k - 1);
      const Tensor p = random_simplex(kk, rng);
      const Tensor d = directional_update(p, 1.0);
      const double n2 = sq_norm(p);
      for (std::size_t j = 0; j < kk; ++j) {
        const double diff = p[j] - n2;
        const int want = (diff > 0) - (diff < 0);
        const int got = (d[j] > 0) - (d[j] < 0);
        violations += want != got ? 1 : 0;
      }
    }
    rows.push_back({"update_sign_law", 0.0, static_cast<double>(violations), 0.0, status(violations == 0, false)});
  }

  // Repeated updates collapse onto the leading class.
  {
    const auto trace = simulate_collapse(Tensor::vector({0.4, 0.35, 0.25}), 1.0, 2000);
    bool monotone = true;
    for (std::size_t i = 1; i < trace.size(); ++i) monotone = monotone && trace[i] >= trace[i - 1];
    rows.push_back({"collapse_max_prob", 1.0, trace.back(), 1e-2,
                    status(monotone && std::abs(trace.back() - 1.0) <= 1e-2, false)});
  }
  return rows;
}

std::string diagnostics_csv(const std::vector<DiagnosticRow>& rows) {
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  std::string out = "op,analytic,empirical,tolerance,status\n";
  for (const auto& r : rows)
    out += r.op + "," + num(r.analytic) + "," + num(r.empirical) + "," + num(r.tolerance) + "," + r.status + "\n";
  return out;
}

LowUsageResult low_usage_experiment(const SynthDataset& data, TrainConfig train, const SkewLabConfig& config) {
  const SynthConfig& g = data.config;
  if (g.mode == SampleMode::feature && !(2.0 * g.intra_noise_eta < g.min_angle_gamma))
    throw GeometryError("low-usage experiment needs 2 * eta < gamma");
  if (config.early_epochs < 1) throw std::invalid_argument("early_epochs must be >= 1");
  train.know_k_u = false;
  train.prune = false;

  const std::size_t k = static_cast<std::size_t>(train.dpp.initial_k_multiplier * g.k_known);
  const std::size_t k_u = static_cast<std::size_t>(g.k_total());
  LowUsageResult res;
  res.threshold = config.epsilon * static_cast<double>(data.n_unlabeled()) / static_cast<double>(k);
  res.bound = k > k_u ? k - k_u : 0;

  for (auto seed : config.seeds) {
    train.seed = seed;
    RunOptions opt;
    opt.stop_after = config.early_epochs;
    const RunResult r = run(train, data, opt);
    std::vector<std::size_t> per_epoch;
    for (const auto& rec : r.history) {
      std::size_t low = 0;
      for (std::size_t j = static_cast<std::size_t>(g.k_known); j < rec.usage.size(); ++j)
        low += static_cast<double>(rec.usage[j]) <= res.threshold ? 1 : 0;
      per_epoch.push_back(low);
    }
    res.counts.push_back(std::move(per_epoch));
  }
  res.pass = !res.counts.empty();
  for (int e = 0; e < config.early_epochs; ++e) {
    std::vector<double> col;
    for (const auto& c : res.counts) col.push_back(static_cast<double>(c.at(static_cast<std::size_t>(e))));
    res.median_per_epoch.push_back(median(col));
    res.pass = res.pass && res.median_per_epoch.back() >= static_cast<double>(res.bound);
  }
  return res;
}

}  // namespace owattr
