#pragma once

#include <cstddef>
#include <vector>

#include "owattr/tensor.hpp"

namespace owattr {

/// Orthonormal DCT-II basis of size n, row k holds basis function k:
/// C[k][j] = a_k cos(pi (2j + 1) k / 2n), a_0 = sqrt(1/n), a_k = sqrt(2/n).
/// The matrix is orthogonal, so its transpose is the DCT-III inverse.
const std::vector<double>& dct_matrix(std::size_t n);

/// 2-D orthonormal DCT-II of an [H, W] image.
Tensor dct2(const Tensor& image);
/// 2-D orthonormal DCT-III (inverse of dct2).
Tensor idct2(const Tensor& coeffs);

}  // namespace owattr
