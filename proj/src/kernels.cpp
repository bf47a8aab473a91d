#include "owattr/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "owattr/dct.hpp"

namespace owattr::kernels {

namespace {

inline void gemm_row(bool trans_a, bool trans_b, std::size_t i, std::size_t m, std::size_t n,
                     std::size_t k, const double* a, const double* b, double* c) {
  double* crow = c + i * n;
  std::fill(crow, crow + n, 0.0);
  if (!trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = trans_a ? a[p * m + i] : a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      if (trans_a) {
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
      } else {
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      }
      crow[j] = acc;
    }
  }
}

// Applies the 1-D transform along both axes of one h x w image.
inline void dct_image(const double* in, double* out, std::size_t h, std::size_t w, bool inverse,
                      const std::vector<double>& ch, const std::vector<double>& cw,
                      std::vector<double>& tmp) {
  tmp.assign(h * w, 0.0);
  // Along columns (height axis): tmp = Ch * X (forward) or Ch^T * X (inverse).
  for (std::size_t r = 0; r < h; ++r) {
    double* trow = tmp.data() + r * w;
    for (std::size_t q = 0; q < h; ++q) {
      const double coef = inverse ? ch[q * h + r] : ch[r * h + q];
      const double* xrow = in + q * w;
      for (std::size_t c = 0; c < w; ++c) trow[c] += coef * xrow[c];
    }
  }
  // Along rows (width axis): out = tmp * Cw^T (forward) or tmp * Cw (inverse).
  for (std::size_t r = 0; r < h; ++r) {
    const double* trow = tmp.data() + r * w;
    double* orow = out + r * w;
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::size_t q = 0; q < w; ++q) acc += trow[q] * (inverse ? cw[q * w + c] : cw[c * w + q]);
      orow[c] = acc;
    }
  }
}

inline void softmax_row(const double* in, double* out, std::size_t cols, double inv_t) {
  double mx = in[0] * inv_t;
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j] * inv_t);
  double z = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::exp(in[j] * inv_t - mx);
    z += out[j];
  }
  for (std::size_t j = 0; j < cols; ++j) out[j] /= z;
}

}  // namespace

void gemm_serial(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 std::span<const double> a, std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(trans_a, trans_b, i, m, n, k, a.data(), b.data(), c.data());
}

void gemm_omp(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
              std::span<const double> a, std::span<const double> b, std::span<double> c) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_row(trans_a, trans_b, static_cast<std::size_t>(i), m, n, k, a.data(), b.data(), c.data());
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c, Exec exec) {
  if (exec == Exec::parallel && m >= kParallelRowThreshold)
    gemm_omp(trans_a, trans_b, m, n, k, a, b, c);
  else
    gemm_serial(trans_a, trans_b, m, n, k, a, b, c);
}

void dct_rows_serial(std::span<const double> in, std::span<double> out, std::size_t rows,
                     std::size_t h, std::size_t w, bool inverse) {
  const auto& ch = dct_matrix(h);
  const auto& cw = dct_matrix(w);
  std::vector<double> tmp;
  for (std::size_t r = 0; r < rows; ++r)
    dct_image(in.data() + r * h * w, out.data() + r * h * w, h, w, inverse, ch, cw, tmp);
}

void dct_rows_omp(std::span<const double> in, std::span<double> out, std::size_t rows,
                  std::size_t h, std::size_t w, bool inverse) {
  const auto& ch = dct_matrix(h);
  const auto& cw = dct_matrix(w);
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel
  {
    std::vector<double> tmp;
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < n; ++r) {
      const auto off = static_cast<std::size_t>(r) * h * w;
      dct_image(in.data() + off, out.data() + off, h, w, inverse, ch, cw, tmp);
    }
  }
}

void dct_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t h,
              std::size_t w, bool inverse, Exec exec) {
  if (exec == Exec::parallel && rows >= kParallelRowThreshold / 4)
    dct_rows_omp(in, out, rows, h, w, inverse);
  else
    dct_rows_serial(in, out, rows, h, w, inverse);
}

void softmax_rows_serial(std::span<const double> logits, std::span<double> out, std::size_t rows,
                         std::size_t cols, double inv_temperature) {
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(logits.data() + r * cols, out.data() + r * cols, cols, inv_temperature);
}

void softmax_rows_omp(std::span<const double> logits, std::span<double> out, std::size_t rows,
                      std::size_t cols, double inv_temperature) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto off = static_cast<std::size_t>(r) * cols;
    softmax_row(logits.data() + off, out.data() + off, cols, inv_temperature);
  }
}

void softmax_rows(std::span<const double> logits, std::span<double> out, std::size_t rows,
                  std::size_t cols, double inv_temperature, Exec exec) {
  if (exec == Exec::parallel && rows >= kParallelRowThreshold)
    softmax_rows_omp(logits, out, rows, cols, inv_temperature);
  else
    softmax_rows_serial(logits, out, rows, cols, inv_temperature);
}

void configure_threads_from_env() {
  if (const char* env = std::getenv("OWATTR_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) omp_set_num_threads(n);
    } catch (const std::exception&) {
      // Malformed values fall back to the OpenMP default.
    }
  }
}

}  // namespace owattr::kernels
