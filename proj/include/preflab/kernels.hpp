#pragma once

#include <cstddef>
#include <string_view>

namespace preflab::kernels {

// Dense double-precision inner loops used by the reward model and optimizer.
//
// Every routine has a scalar reference implementation and, where the CPU
// supports it, an AVX2 variant. Elementwise kernels are bit-identical across
// variants (no fused multiply-add); reductions differ only in summation order.

struct AdamStep {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  std::string_view name;
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[i] = bias[i] + dot(W[i, :], x) for a row-major rows x cols matrix.
  void (*gemv)(const double* w, const double* bias, const double* x, double* out,
               std::size_t rows, std::size_t cols);
  // y[j] += sum_i delta[i] * W[i, j]  (transposed product, accumulate)
  void (*gemv_t)(const double* w, const double* delta, double* y, std::size_t rows,
                 std::size_t cols);
  // W[i, :] += delta[i] * x  (rank-one update, accumulate)
  void (*ger)(const double* delta, const double* x, double* w, std::size_t rows,
              std::size_t cols);
  void (*adam_update)(double* params, const double* grad, double* m, double* v, std::size_t n,
                      const AdamStep& step);
  // Sum of squares; used for gradient norms and finiteness checks.
  double (*sum_squares)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();

/// AVX2 table, or nullptr when not compiled in or not supported by this CPU.
const KernelTable* avx2_table();

/// Table used by the library. Picks AVX2 when available unless the
/// PREFLAB_KERNELS environment variable is set to "scalar".
const KernelTable& active();

/// Override the active table (tests and benchmarks). Not thread-safe.
void set_active(const KernelTable& table);

}  // namespace preflab::kernels
