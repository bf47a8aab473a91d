#include "owattr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "owattr/prob.hpp"

namespace owattr {

void LossConfig::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  if (!(conf_threshold_gamma > 0.0 && conf_threshold_gamma <= 1.0))
    throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in (0, 1]");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (warmup_epochs < 0 || warmup_epochs >= epochs_total)
    throw std::invalid_argument("warmup_epochs must be in [0, epochs_total)");
}

namespace {

Tensor one_hot_rows(const std::vector<int>& labels, std::size_t cols) {
  Tensor t({labels.size(), cols});
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return t;
}

ad::Var zero_like_loss(ad::Var any) { return any.tape->constant(Tensor::scalar(0.0)); }

}  // namespace

ad::Var loss_supervised(ad::Var weak_probs, ad::Var strong_probs, const std::vector<int>& labels, int k_known) {
  const std::size_t k = weak_probs.value().cols();
  if (labels.empty()) throw std::invalid_argument("loss_supervised: empty labeled batch");
  if (labels.size() != weak_probs.value().rows()) throw ShapeError("loss_supervised: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k_known || static_cast<std::size_t>(y) >= k)
      throw std::invalid_argument("loss_supervised: label " + std::to_string(y) + " is not a known class");
  ad::Var target = weak_probs.tape->constant(one_hot_rows(labels, k));
  ad::Var weak = ad::mean(ad::cross_entropy_rows(target, weak_probs));
  ad::Var strong = ad::mean(ad::cross_entropy_rows(target, strong_probs));
  return ad::scale(ad::add(weak, strong), 0.5);
}

namespace {

ad::Var entropy_gap(ad::Var pbar) {
  const double log_k = std::log(static_cast<double>(pbar.value().size()));
  // sum p log p = -H(p)
  return ad::add_scalar(ad::sum(ad::mul(pbar, ad::log_eps(pbar))), log_k);
}

}  // namespace

ad::Var loss_entropy_reg(ad::Var probs) { return entropy_gap(ad::col_mean(probs)); }

ad::Var loss_entropy_reg(ad::Var weak_probs, ad::Var strong_probs) {
  return entropy_gap(ad::scale(ad::add(ad::col_mean(weak_probs), ad::col_mean(strong_probs)), 0.5));
}

ad::Var weighted_consistency(ad::Var strong_probs, const Tensor& weak_target, const std::vector<double>& weights) {
  if (weights.size() != strong_probs.value().rows()) throw ShapeError("consistency: weight count mismatch");
  if (weights.empty()) throw std::invalid_argument("consistency: empty batch");
  ad::Tape& tape = *strong_probs.tape;
  ad::Var target = tape.constant(weak_target);
  ad::Var ce = ad::cross_entropy_rows(target, strong_probs);
  return ad::mean(ad::mul(ce, tape.constant(Tensor::vector(weights))));
}

ad::Var loss_ws(ad::Var strong_probs, const Tensor& weak_sharp, double delta) {
  std::vector<double> w(weak_sharp.rows());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = max_value(weak_sharp.row(i)) > delta ? 1.0 : 0.0;
  return weighted_consistency(strong_probs, weak_sharp, w);
}

double ccr_weight(double rho_hat, int epoch, int epochs_total) {
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs_total);
  return (1.0 - t) * rho_hat + t * (1.0 - rho_hat);
}

ad::Var loss_ccr(ad::Var strong_probs, const Tensor& weak_sharp, int epoch, int epochs_total,
                 std::vector<double>* weights_out) {
  std::vector<double> w(weak_sharp.rows());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = ccr_weight(max_value(weak_sharp.row(i)), epoch, epochs_total);
  ad::Var loss = weighted_consistency(strong_probs, weak_sharp, w);
  if (weights_out) *weights_out = std::move(w);
  return loss;
}

GapStats acr_gap(const Tensor& weak_probs, int k_known, double max_ratio) {
  GapStats g;
  double sk = 0.0, sn = 0.0;
  for (std::size_t i = 0; i < weak_probs.rows(); ++i) {
    const auto row = weak_probs.row(i);
    const std::size_t j = argmax(row);
    if (j < static_cast<std::size_t>(k_known)) {
      sk += row[j];
      ++g.n_known;
    } else {
      sn += row[j];
      ++g.n_novel;
    }
  }
  if (g.n_known) g.rho_known = sk / static_cast<double>(g.n_known);
  if (g.n_novel) g.rho_novel = sn / static_cast<double>(g.n_novel);
  if (g.n_known && g.n_novel) g.ratio = std::min(g.rho_novel / g.rho_known, max_ratio);
  return g;
}

bool acr_select(double rho, bool predicted_known, double gap_ratio, double gamma) {
  return predicted_known ? rho >= gamma : rho >= gap_ratio * gamma;
}

ad::Var loss_acr(ad::Var strong_probs, const Tensor& weak_probs, int k_known, double gap_ratio, double gamma,
                 int epoch, int warmup_epochs, std::vector<int>* mask_out) {
  const std::size_t n = weak_probs.rows(), k = weak_probs.cols();
  std::vector<int> mask(n, 0);
  if (epoch <= warmup_epochs) {
    if (mask_out) *mask_out = std::move(mask);
    return zero_like_loss(strong_probs);
  }
  Tensor target({n, k});
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = weak_probs.row(i);
    const std::size_t yhat = argmax(row);
    target.at(i, yhat) = 1.0;
    if (acr_select(row[yhat], yhat < static_cast<std::size_t>(k_known), gap_ratio, gamma)) {
      mask[i] = 1;
      w[i] = 1.0;
    }
  }
  ad::Var loss = weighted_consistency(strong_probs, target, w);
  if (mask_out) *mask_out = std::move(mask);
  return loss;
}

ad::Var loss_cpl_gumbel(ad::Var strong_probs, const Tensor& weak_probs, SeededRng& rng,
                        std::vector<std::size_t>* picks_out) {
  const std::size_t n = weak_probs.rows(), k = weak_probs.cols();
  Tensor target({n, k});
  std::vector<double> lambda(n);
  std::vector<std::size_t> picks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = weak_probs.row(i);
    picks[i] = gumbel_categorical(row, rng);
    target.at(i, picks[i]) = 1.0;
    lambda[i] = row[picks[i]];
  }
  ad::Var loss = weighted_consistency(strong_probs, target, lambda);
  if (picks_out) *picks_out = std::move(picks);
  return loss;
}

ad::Var loss_total(ad::Var l_ce, ad::Var r_reg, ad::Var l_acr, ad::Var l_ccr, double alpha) {
  return ad::add(ad::add(ad::add(l_ce, r_reg), l_acr), ad::scale(l_ccr, alpha));
}

double loss_total(double l_ce, double r_reg, double l_acr, double l_ccr, double alpha) {
  return ((l_ce + r_reg) + l_acr) + l_ccr * alpha;
}

}  // namespace owattr
