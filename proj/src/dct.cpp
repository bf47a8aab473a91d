#include "owattr/dct.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "owattr/kernels.hpp"

namespace owattr {

const std::vector<double>& dct_matrix(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::vector<double>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> c(n * n);
  const double nd = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / nd) : std::sqrt(2.0 / nd);
    for (std::size_t j = 0; j < n; ++j)
      c[k * n + j] = scale * std::cos(std::numbers::pi * (2.0 * j + 1.0) * k / (2.0 * nd));
  }
  return cache.emplace(n, std::move(c)).first->second;
}

namespace {

Tensor transform(const Tensor& x, bool inverse) {
  if (x.rank() != 2 || x.dim(0) == 0 || x.dim(1) == 0)
    throw ShapeError("2-D DCT expects a non-empty [H, W] tensor, got " + shape_string(x.shape()));
  Tensor out(x.shape());
  kernels::dct_rows_serial(x.data(), out.data(), 1, x.dim(0), x.dim(1), inverse);
  return out;
}

}  // namespace

Tensor dct2(const Tensor& image) { return transform(image, false); }
Tensor idct2(const Tensor& coeffs) { return transform(coeffs, true); }

}  // namespace owattr
