#include "preflab/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>

#include <cmath>
#endif

namespace preflab::kernels {

#if defined(__AVX2__)
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  const __m128d shuf = _mm_unpackhi_pd(s, s);
  return _mm_cvtsd_f64(_mm_add_sd(s, shuf));
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    acc1 = _mm256_add_pd(acc1,
                         _mm256_mul_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(a, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv(const double* w, const double* bias, const double* x, double* out, std::size_t rows,
          std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) out[r] = bias[r] + dot(w + r * cols, x, cols);
}

void gemv_t(const double* w, const double* delta, double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy(delta[r], w + r * cols, y, cols);
}

void ger(const double* delta, const double* x, double* w, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy(delta[r], x, w + r * cols, cols);
}

void adam_update(double* params, const double* grad, double* m, double* v, std::size_t n,
                 const AdamStep& s) {
  const __m256d b1 = _mm256_set1_pd(s.beta1);
  const __m256d b2 = _mm256_set1_pd(s.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - s.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - s.beta2);
  const __m256d bc1 = _mm256_set1_pd(s.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(s.bias_correction2);
  const __m256d lr = _mm256_set1_pd(s.lr);
  const __m256d eps = _mm256_set1_pd(s.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(omb1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                     _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(params + i, _mm256_sub_pd(_mm256_loadu_pd(params + i), step));
  }
  const double one_minus_b1 = 1.0 - s.beta1;
  const double one_minus_b2 = 1.0 - s.beta2;
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + one_minus_b1 * g;
    v[i] = s.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / s.bias_correction1;
    const double v_hat = v[i] / s.bias_correction2;
    params[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

double sum_squares(const double* x, std::size_t n) { return dot(x, x, n); }

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{"avx2", dot, axpy, gemv, gemv_t, ger, adam_update, sum_squares};
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace preflab::kernels
