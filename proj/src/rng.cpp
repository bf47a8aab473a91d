#include "owattr/rng.hpp"

#include <cmath>

namespace owattr {

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6f776174u};
  return std::mt19937_64(seq);
}

}  // namespace

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

SeededRng SeededRng::split(std::uint64_t sub_stream) const {
  // Mix the parent stream into a new stream id; the multiplier is the 64-bit golden ratio.
  std::uint64_t mixed = (stream_ + 1) * 0x9E3779B97F4A7C15ull;
  mixed ^= sub_stream + 0x632BE59BD9B4E019ull + (mixed << 6) + (mixed >> 2);
  return SeededRng(seed_, mixed);
}

double SeededRng::uniform_open() {
  // 53 random bits, shifted half an ulp off zero so the result is never 0 or 1.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform_open(); }

double SeededRng::normal() { return normal_(engine_); }

std::size_t SeededRng::uniform_index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

double SeededRng::gumbel() { return -std::log(-std::log(uniform_open())); }

}  // namespace owattr
