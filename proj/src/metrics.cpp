#include "owattr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "owattr/textio.hpp"

namespace owattr {

namespace {

void check_pair(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("label arrays differ in length");
  if (pred.empty()) throw std::invalid_argument("label arrays are empty");
}

// Maps arbitrary labels onto 0..n-1 in first-seen order of the sorted id set.
std::vector<int> compact(const std::vector<int>& labels, std::vector<int>* ids = nullptr) {
  std::vector<int> uniq = labels;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), labels[i]) - uniq.begin());
  if (ids) *ids = std::move(uniq);
  return out;
}

struct Contingency {
  std::vector<std::vector<double>> n;  // [pred][truth]
  std::vector<double> pred_sizes, truth_sizes;
  double total = 0;
};

Contingency contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
  const auto p = compact(pred);
  const auto t = compact(truth);
  const std::size_t kp = static_cast<std::size_t>(*std::max_element(p.begin(), p.end()) + 1);
  const std::size_t kt = static_cast<std::size_t>(*std::max_element(t.begin(), t.end()) + 1);
  Contingency c;
  c.n.assign(kp, std::vector<double>(kt, 0.0));
  c.pred_sizes.assign(kp, 0.0);
  c.truth_sizes.assign(kt, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    c.n[static_cast<std::size_t>(p[i])][static_cast<std::size_t>(t[i])] += 1.0;
    c.pred_sizes[static_cast<std::size_t>(p[i])] += 1.0;
    c.truth_sizes[static_cast<std::size_t>(t[i])] += 1.0;
  }
  c.total = static_cast<double>(p.size());
  return c;
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t n = weight.size();
  if (n == 0) return {};
  double wmax = 0.0;
  for (const auto& row : weight) {
    if (row.size() != n) throw std::invalid_argument("assignment matrix must be square");
    for (double v : row) wmax = std::max(wmax, v);
  }
  // Shortest augmenting path with potentials on cost = wmax - weight (1-based).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = (wmax - weight[i0 - 1][j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
  return perm;
}

Alignment hungarian_align(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_pair(pred, truth);
  std::vector<int> pred_ids, truth_ids;
  const auto p = compact(pred, &pred_ids);
  const auto t = compact(truth, &truth_ids);
  const std::size_t n = std::max(pred_ids.size(), truth_ids.size());
  std::vector<std::vector<double>> w(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < p.size(); ++i) w[static_cast<std::size_t>(p[i])][static_cast<std::size_t>(t[i])] += 1.0;
  const auto perm = max_weight_assignment(w);
  Alignment al;
  for (std::size_t r = 0; r < pred_ids.size(); ++r) {
    if (perm[r] < truth_ids.size()) {
      al.mapping[pred_ids[r]] = truth_ids[perm[r]];
      al.matched += static_cast<std::size_t>(w[r][perm[r]]);
    }
  }
  return al;
}

double acc(const std::vector<int>& pred, const std::vector<int>& truth, const Alignment& alignment) {
  check_pair(pred, truth);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += alignment.map(pred[i]) == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

bool same_partition(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_pair(pred, truth);
  std::map<int, int> fwd, bwd;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto [fi, fnew] = fwd.emplace(pred[i], truth[i]);
    auto [bi, bnew] = bwd.emplace(truth[i], pred[i]);
    if ((!fnew && fi->second != truth[i]) || (!bnew && bi->second != pred[i])) return false;
  }
  return true;
}

double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_pair(pred, truth);
  const Contingency c = contingency(pred, truth);
  double mi = 0.0;
  for (std::size_t i = 0; i < c.pred_sizes.size(); ++i)
    for (std::size_t j = 0; j < c.truth_sizes.size(); ++j) {
      const double nij = c.n[i][j];
      if (nij > 0) mi += nij * std::log(c.total * nij / (c.pred_sizes[i] * c.truth_sizes[j]));
    }
  double hp = 0.0, ht = 0.0;
  for (double s : c.pred_sizes) hp += s * std::log(s / c.total);
  for (double s : c.truth_sizes) ht += s * std::log(s / c.total);
  if (hp == 0.0 || ht == 0.0) return same_partition(pred, truth) ? 1.0 : 0.0;
  return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

PairCounts pair_counts(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_pair(pred, truth);
  const Contingency c = contingency(pred, truth);
  double same_both = 0.0, same_truth = 0.0, same_pred = 0.0;
  for (const auto& row : c.n)
    for (double nij : row) same_both += choose2(nij);
  for (double s : c.truth_sizes) same_truth += choose2(s);
  for (double s : c.pred_sizes) same_pred += choose2(s);
  PairCounts pc;
  pc.a = same_both;
  pc.b = same_truth - same_both;
  pc.c = same_pred - same_both;
  pc.d = choose2(c.total) - pc.a - pc.b - pc.c;
  return pc;
}

double ari(const std::vector<int>& pred, const std::vector<int>& truth, AriVariant variant) {
  if (variant == AriVariant::pair_count) {
    const PairCounts pc = pair_counts(pred, truth);
    const double den = (pc.a + pc.b) * (pc.b + pc.d) + (pc.a + pc.c) * (pc.c + pc.d);
    if (den == 0.0) return same_partition(pred, truth) ? 1.0 : 0.0;
    return 2.0 * (pc.a * pc.d - pc.b * pc.c) / den;
  }
  const Contingency c = contingency(pred, truth);
  double index = 0.0, sp = 0.0, st = 0.0;
  for (const auto& row : c.n)
    for (double nij : row) index += choose2(nij);
  for (double s : c.pred_sizes) sp += choose2(s);
  for (double s : c.truth_sizes) st += choose2(s);
  const double pairs = choose2(c.total);
  const double expected = pairs > 0 ? sp * st / pairs : 0.0;
  const double max_index = 0.5 * (sp + st);
  if (max_index == expected) return same_partition(pred, truth) ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

double skew_delta(const std::vector<double>& confidence, const std::vector<int>& truth,
                  const std::vector<bool>& known_role) {
  double sk = 0.0, sn = 0.0;
  std::size_t nk = 0, nn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (known_role.at(static_cast<std::size_t>(truth[i]))) {
      sk += confidence[i];
      ++nk;
    } else {
      sn += confidence[i];
      ++nn;
    }
  }
  if (nk == 0 || nn == 0) return kUndefined;
  return sk / static_cast<double>(nk) - sn / static_cast<double>(nn);
}

double lowconf_noise(const std::vector<int>& pred, const std::vector<double>& confidence,
                     const std::vector<int>& truth, const std::vector<bool>& known_role,
                     const Alignment& alignment) {
  std::size_t novel = 0, noisy = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (known_role.at(static_cast<std::size_t>(truth[i]))) continue;
    ++novel;
    if (confidence[i] < 0.5 && alignment.map(pred[i]) != truth[i]) ++noisy;
  }
  return novel ? static_cast<double>(noisy) / static_cast<double>(novel) : 0.0;
}

EvalReport evaluate_predictions(const std::vector<int>& pred, const std::vector<double>& confidence,
                                const std::vector<int>& truth, const std::vector<bool>& known_role) {
  check_pair(pred, truth);
  EvalReport r;
  r.alignment = hungarian_align(pred, truth);
  r.all_acc = acc(pred, truth, r.alignment);
  r.all_nmi = nmi(pred, truth);
  r.all_ari = ari(pred, truth);

  std::vector<int> np, nt, kp, kt;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (known_role.at(static_cast<std::size_t>(truth[i]))) {
      kp.push_back(pred[i]);
      kt.push_back(truth[i]);
    } else {
      np.push_back(pred[i]);
      nt.push_back(truth[i]);
    }
  }
  if (!np.empty()) {
    r.novel_acc = acc(np, nt, r.alignment);
    r.novel_nmi = nmi(np, nt);
    r.novel_ari = ari(np, nt);
  }
  if (!kp.empty()) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < kp.size(); ++i) hit += kp[i] == kt[i] ? 1 : 0;
    r.known_acc = static_cast<double>(hit) / static_cast<double>(kp.size());
  }
  r.skew_delta = skew_delta(confidence, truth, known_role);
  r.lowconf_noise = lowconf_noise(pred, confidence, truth, known_role, r.alignment);
  return r;
}

EvalReport evaluate(const Model& model, const SynthDataset& dataset) {
  const Inference inf = infer(model, dataset.unlabeled);
  std::vector<int> pred(inf.argmax.begin(), inf.argmax.end());
  return evaluate_predictions(pred, inf.confidence, dataset.unlabeled_truth, dataset.known_role);
}

std::string metrics_csv_header() {
  return "epoch,all_acc,all_nmi,all_ari,novel_acc,novel_nmi,novel_ari,known_acc,skew_delta,lowconf_noise";
}

std::string metrics_csv_row(int epoch, const EvalReport& r) {
  auto f = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  return std::to_string(epoch) + "," + f(r.all_acc) + "," + f(r.all_nmi) + "," + f(r.all_ari) + "," +
         f(r.novel_acc) + "," + f(r.novel_nmi) + "," + f(r.novel_ari) + "," + f(r.known_acc) + "," +
         f(r.skew_delta) + "," + f(r.lowconf_noise);
}

}  // namespace owattr
