#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace owattr {

/// Seeded generator with split streams. Two generators built from the same
/// (seed, stream) pair produce bit-identical sequences; distinct stream ids
/// are decorrelated through std::seed_seq.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Child generator for a hierarchical stream, e.g. (epoch, sample id).
  SeededRng split(std::uint64_t sub_stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform draw in the open interval (0, 1).
  double uniform_open();
  /// Uniform draw in [lo, hi).
  double uniform(double lo, double hi);
  double normal();
  std::size_t uniform_index(std::size_t n);
  /// Standard Gumbel(0, 1) draw, -log(-log(u)).
  double gumbel();
  bool bernoulli(double p) { return uniform_open() < p; }

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace owattr
