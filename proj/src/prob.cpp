#include "owattr/prob.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "owattr/autodiff.hpp"

namespace owattr {

Tensor softmax(const Tensor& s, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
  if (s.size() == 0) throw std::invalid_argument("softmax of an empty vector");
  Tensor out(s.shape());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : s.data()) mx = std::max(mx, v / temperature);
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = std::exp(s[i] / temperature - mx);
    z += out[i];
  }
  for (auto& v : out.raw()) v /= z;
  return out;
}

double cross_entropy(const Tensor& target, const Tensor& predicted) {
  if (target.size() != predicted.size())
    throw ShapeError("cross_entropy: target has " + std::to_string(target.size()) +
                     " entries, prediction has " + std::to_string(predicted.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s -= target[i] * std::log(predicted[i] + ad::kLogEps);
  return s;
}

double cross_entropy(std::size_t target_index, const Tensor& predicted) {
  if (target_index >= predicted.size()) throw ShapeError("cross_entropy: class index out of range");
  return -std::log(predicted[target_index] + ad::kLogEps);
}

std::size_t gumbel_categorical(std::span<const double> p, SeededRng& rng) {
  std::size_t best = p.size();
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < p.size(); ++j) {
    // Draw noise for every coordinate so the stream advance does not depend on p.
    const double g = rng.gumbel();
    if (p[j] <= 0.0) continue;
    const double score = std::log(p[j]) + g;
    if (best == p.size() || score > best_score) {
      best = j;
      best_score = score;
    }
  }
  if (best == p.size()) throw std::invalid_argument("gumbel_categorical: distribution has no mass");
  return best;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

double max_value(std::span<const double> v) { return v[argmax(v)]; }

}  // namespace owattr
