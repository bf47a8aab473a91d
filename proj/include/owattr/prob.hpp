#pragma once

#include <cstddef>
#include <span>

#include "owattr/rng.hpp"
#include "owattr/tensor.hpp"

namespace owattr {

/// softmax(s / temperature). Throws std::invalid_argument for temperature <= 0
/// or an empty input.
Tensor softmax(const Tensor& s, double temperature = 1.0);

/// -sum_k target_k log(predicted_k + 1e-12).
double cross_entropy(const Tensor& target, const Tensor& predicted);
double cross_entropy(std::size_t target_index, const Tensor& predicted);

/// Exact draw from Cat(p) via argmax_j(log p_j + g_j). Zero entries are never
/// selected; an all-zero p throws std::invalid_argument.
std::size_t gumbel_categorical(std::span<const double> p, SeededRng& rng);

std::size_t argmax(std::span<const double> v);
double max_value(std::span<const double> v);

}  // namespace owattr
