#include <cmath>

#include "preflab/kernels.hpp"

namespace preflab::kernels {
namespace {

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
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
  const double one_minus_b1 = 1.0 - s.beta1;
  const double one_minus_b2 = 1.0 - s.beta2;
  for (std::size_t i = 0; i < n; ++i) {
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

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", dot, axpy, gemv, gemv_t, ger, adam_update, sum_squares};
  return table;
}

}  // namespace preflab::kernels
