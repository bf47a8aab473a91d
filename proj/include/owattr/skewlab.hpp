#pragma once

// Quantitative checks of the hard Gumbel pseudo-labeling pathology: how often
// a sampled label is wrong, the expected logit gradient of the confidence
// weighted loss, and the rich-get-richer dynamics it induces.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "owattr/rng.hpp"
#include "owattr/synthdata.hpp"
#include "owattr/tensor.hpp"
#include "owattr/trainer.hpp"

namespace owattr {

struct SkewLabConfig {
  int k = 10;                     // class count for random simplices
  std::size_t budget = 100000;    // Monte Carlo draws per check
  std::size_t simplices = 20;     // random simplices per Monte Carlo check
  std::size_t sign_simplices = 1000;
  double tau_conf = 0.5;          // low-confidence cutoff
  double gradient_tolerance = 5e-3;
  // Early-epoch low-usage experiment.
  double epsilon = 0.5;
  int early_epochs = 3;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t seed = 0;

  static constexpr std::size_t kMinBudget = 10000;
};

/// p_j (|p|^2 - p_j): expected gradient of -lambda log p_{c*} w.r.t. the logits
/// when c* ~ Cat(p) and lambda = p_{c*}.
Tensor expected_gradient(const Tensor& p);

/// Mean of the per-sample logit gradients of the Gumbel pseudo-label loss
/// (weak = strong = p), computed by reverse-mode differentiation.
Tensor monte_carlo_gradient(const Tensor& p, std::size_t draws, SeededRng& rng);

/// Fraction of Gumbel-max draws that differ from y_star.
double mislabel_rate(const Tensor& p, std::size_t y_star, std::size_t draws, SeededRng& rng);

/// Mislabel rate restricted to draws whose own confidence lambda = p_{c*} is
/// below tau_conf, with the truth distributed as Cat(p) (calibrated model).
struct ConditionalMislabel {
  std::size_t low_draws = 0;
  double sampled = 0.0;    // truth drawn per sample
  double expected = 0.0;   // truth integrated out: mean of 1 - p_{c*}
};
ConditionalMislabel conditional_mislabel_rate(const Tensor& p, double tau_conf, std::size_t draws, SeededRng& rng);

/// -lr * expected_gradient(p).
Tensor directional_update(const Tensor& p, double lr);

/// Repeats s += directional_update(softmax(s), lr) from s = log p0 and
/// returns the largest probability after each step.
std::vector<double> simulate_collapse(const Tensor& p0, double lr, std::size_t steps);

/// Uniform draw from the probability simplex (normalized exponentials).
Tensor random_simplex(std::size_t k, SeededRng& rng);

struct DiagnosticRow {
  std::string op;
  double analytic = 0.0;
  double empirical = 0.0;
  double tolerance = 0.0;
  std::string status;  // PASS, FAIL or WARN (under-sampled)
};

/// Runs every check above and returns one row per check.
std::vector<DiagnosticRow> run_diagnostics(const SkewLabConfig& config);
std::string diagnostics_csv(const std::vector<DiagnosticRow>& rows);

struct LowUsageResult {
  double threshold = 0.0;                        // epsilon * M / K
  std::size_t bound = 0;                         // (1 - K_U / K) * K
  std::vector<std::vector<std::size_t>> counts;  // [seed][epoch]
  std::vector<double> median_per_epoch;
  bool pass = false;
};

/// Trains for the first config.early_epochs epochs with K = multiplier * K_L,
/// pruning suspended, and counts novel prototypes whose per-epoch usage is at
/// most epsilon * M / K. Throws GeometryError when 2 eta >= gamma.
LowUsageResult low_usage_experiment(const SynthDataset& data, TrainConfig train, const SkewLabConfig& config);

}  // namespace owattr
