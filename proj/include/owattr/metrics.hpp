#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "owattr/model.hpp"
#include "owattr/synthdata.hpp"

namespace owattr {

/// Optimal injective mapping from predicted cluster ids to truth ids.
struct Alignment {
  std::map<int, int> mapping;  // pred id -> truth id; unmatched clusters are absent
  std::size_t matched = 0;     // samples whose mapped prediction equals the truth

  int map(int pred) const {
    auto it = mapping.find(pred);
    return it == mapping.end() ? -1 : it->second;
  }
};

/// Maximizes co-occurrence over injective cluster->class assignments with the
/// Hungarian method on a zero-padded square count matrix. Throws
/// std::invalid_argument on empty or unequal-length input.
Alignment hungarian_align(const std::vector<int>& pred, const std::vector<int>& truth);

/// Square assignment solver: maximizes sum of weight[i][perm[i]].
std::vector<std::size_t> max_weight_assignment(const std::vector<std::vector<double>>& weight);

double acc(const std::vector<int>& pred, const std::vector<int>& truth, const Alignment& alignment);

/// Normalized mutual information, geometric-mean normalization, natural logs.
/// When either partition has zero entropy: 1 if the partitions coincide, else 0.
double nmi(const std::vector<int>& pred, const std::vector<int>& truth);

struct PairCounts {
  double a = 0;  // same truth, same prediction
  double b = 0;  // same truth, different prediction
  double c = 0;  // different truth, same prediction
  double d = 0;  // different truth, different prediction
};
PairCounts pair_counts(const std::vector<int>& pred, const std::vector<int>& truth);

enum class AriVariant { pair_count, expected_index };

/// 2(ad - bc) / ((a+b)(b+d) + (a+c)(c+d)). The expected_index variant is the
/// contingency-table form (sum C(n_ij,2) - E) / (max - E); the two agree
/// algebraically and both are provided for cross-checking.
double ari(const std::vector<int>& pred, const std::vector<int>& truth,
           AriVariant variant = AriVariant::pair_count);

/// True when the two labelings induce the same partition.
bool same_partition(const std::vector<int>& pred, const std::vector<int>& truth);

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

/// Mean confidence over truth-known samples minus over truth-novel samples;
/// kUndefined when either side is empty.
double skew_delta(const std::vector<double>& confidence, const std::vector<int>& truth,
                  const std::vector<bool>& known_role);

/// Fraction of truth-novel samples whose confidence is below 0.5 and whose
/// aligned prediction is wrong.
double lowconf_noise(const std::vector<int>& pred, const std::vector<double>& confidence,
                     const std::vector<int>& truth, const std::vector<bool>& known_role,
                     const Alignment& alignment);

struct EvalReport {
  double all_acc = 0, all_nmi = 0, all_ari = 0;
  double novel_acc = kUndefined, novel_nmi = kUndefined, novel_ari = kUndefined;
  double known_acc = kUndefined;
  double skew_delta = kUndefined;
  double lowconf_noise = 0;
  Alignment alignment;
};

/// Evaluation protocol: global Hungarian alignment for All ACC; Novel ACC
/// reuses it on truth-novel samples; Novel NMI/ARI are computed on that
/// subset directly; Known ACC compares raw indices on truth-known samples.
EvalReport evaluate_predictions(const std::vector<int>& pred, const std::vector<double>& confidence,
                                const std::vector<int>& truth, const std::vector<bool>& known_role);

/// Runs the model on the clean unlabeled set and applies the protocol above.
EvalReport evaluate(const Model& model, const SynthDataset& dataset);

std::string metrics_csv_header();
/// One metrics.csv row; NaN values render as "nan".
std::string metrics_csv_row(int epoch, const EvalReport& r);

}  // namespace owattr
