#pragma once

#include <cstddef>
#include <vector>

#include "owattr/autodiff.hpp"
#include "owattr/rng.hpp"
#include "owattr/tensor.hpp"

namespace owattr {

struct LossConfig {
  double alpha = 0.2;                 // weight of the consistency term
  double conf_threshold_gamma = 0.9;  // known-class pseudo-label threshold
  double delta = 0.5;                 // fixed threshold of the FixMatch baseline
  double tau = 0.1;                   // sharpening temperature
  int warmup_epochs = 5;
  int epochs_total = 50;
  /// Upper clamp on the novel/known confidence ratio.
  double max_gap_ratio = 1.5;

  void validate() const;
};

/// Values of one training step. total = l_ce + r_reg + l_acr + alpha * l_ccr
/// + l_pseudo, where l_pseudo is only nonzero for the Gumbel baseline.
struct LossBundle {
  double l_ce = 0.0;
  double r_reg = 0.0;
  double l_ccr = 0.0;
  double l_acr = 0.0;
  double l_pseudo = 0.0;
  double total = 0.0;
  std::vector<double> ccr_weights;
  std::vector<int> acr_mask;
  double gap_ratio = 1.0;
};

/// Mean cross entropy of both labeled views against the labels, averaged over
/// the two views. Throws std::invalid_argument for a label >= k_known.
ad::Var loss_supervised(ad::Var weak_probs, ad::Var strong_probs, const std::vector<int>& labels, int k_known);

/// ln K - H(mean prediction). Zero for a uniform batch marginal.
ad::Var loss_entropy_reg(ad::Var probs);
/// Same, with the marginal averaged over both views of the batch.
ad::Var loss_entropy_reg(ad::Var weak_probs, ad::Var strong_probs);

/// (1/B) sum_i w_i CE(target_i, pred_i), target and weights detached.
ad::Var weighted_consistency(ad::Var strong_probs, const Tensor& weak_target, const std::vector<double>& weights);

/// Thresholded consistency: weight 1 where max(weak_target) > delta.
ad::Var loss_ws(ad::Var strong_probs, const Tensor& weak_sharp, double delta);

/// (1 - e/E) rho + (e/E)(1 - rho).
double ccr_weight(double rho_hat, int epoch, int epochs_total);

/// Self-calibrated consistency; weights are written to *weights_out when given.
ad::Var loss_ccr(ad::Var strong_probs, const Tensor& weak_sharp, int epoch, int epochs_total,
                 std::vector<double>* weights_out = nullptr);

struct GapStats {
  double rho_known = 0.0;
  double rho_novel = 0.0;
  double ratio = 1.0;  // rho_novel / rho_known, clamped; 1 when a side is empty
  std::size_t n_known = 0;
  std::size_t n_novel = 0;
};

/// Mean top-1 confidence of weak-view predictions, split by whether the argmax
/// column is a known class (column < k_known).
GapStats acr_gap(const Tensor& weak_probs, int k_known, double max_ratio = 1.5);

/// Asymmetric selection: known predictions need rho >= gamma, novel
/// predictions need rho >= ratio * gamma.
bool acr_select(double rho, bool predicted_known, double gap_ratio, double gamma);

/// (1/|B_U|) sum_i eta_i CE(onehot(argmax weak), strong). Zero while
/// epoch <= warmup_epochs. The selection mask is written to *mask_out.
ad::Var loss_acr(ad::Var strong_probs, const Tensor& weak_probs, int k_known, double gap_ratio, double gamma,
                 int epoch, int warmup_epochs, std::vector<int>* mask_out = nullptr);

/// Gumbel pseudo-label baseline: c* ~ Cat(weak), lambda = weak[c*], loss =
/// mean of -lambda log strong[c*]. Targets are detached.
ad::Var loss_cpl_gumbel(ad::Var strong_probs, const Tensor& weak_probs, SeededRng& rng,
                        std::vector<std::size_t>* picks_out = nullptr);

ad::Var loss_total(ad::Var l_ce, ad::Var r_reg, ad::Var l_acr, ad::Var l_ccr, double alpha);
double loss_total(double l_ce, double r_reg, double l_acr, double l_ccr, double alpha);

}  // namespace owattr
