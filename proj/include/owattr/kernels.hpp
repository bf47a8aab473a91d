#pragma once

// Data-parallel inner loops. Every kernel has a serial reference version and
// an OpenMP version; the OpenMP version splits the outermost row loop only and
// keeps each output's accumulation order identical, so results are
// bit-identical to the serial reference for any thread count.

#include <cstddef>
#include <span>

namespace owattr::kernels {

enum class Exec { serial, parallel };

/// Rows below this count run serially even when Exec::parallel is requested.
inline constexpr std::size_t kParallelRowThreshold = 64;

/// C[m, n] = op(A) op(B), op = identity or transpose. A is stored as [m, k]
/// (or [k, m] when trans_a), B as [k, n] (or [n, k] when trans_b).
void gemm_serial(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm_omp(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
              std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          Exec exec = Exec::parallel);

/// Row-batched separable 2-D DCT: each row of `in` is an [h, w] image.
/// inverse=false applies DCT-II, inverse=true applies DCT-III.
void dct_rows_serial(std::span<const double> in, std::span<double> out, std::size_t rows,
                     std::size_t h, std::size_t w, bool inverse);
void dct_rows_omp(std::span<const double> in, std::span<double> out, std::size_t rows,
                  std::size_t h, std::size_t w, bool inverse);
void dct_rows(std::span<const double> in, std::span<double> out, std::size_t rows, std::size_t h,
              std::size_t w, bool inverse, Exec exec = Exec::parallel);

/// Row-wise temperature softmax over [rows, cols] logits.
void softmax_rows_serial(std::span<const double> logits, std::span<double> out, std::size_t rows,
                         std::size_t cols, double inv_temperature);
void softmax_rows_omp(std::span<const double> logits, std::span<double> out, std::size_t rows,
                      std::size_t cols, double inv_temperature);
void softmax_rows(std::span<const double> logits, std::span<double> out, std::size_t rows,
                  std::size_t cols, double inv_temperature, Exec exec = Exec::parallel);

/// Sets the OpenMP worker count from OWATTR_THREADS when present.
void configure_threads_from_env();

}  // namespace owattr::kernels
