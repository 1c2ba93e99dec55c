#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace onpro {

/// Every stochastic component draws from one of these; runs are reproducible
/// given the seed and the documented draw order.
using Rng = std::mt19937_64;

/// Dense row-major matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool same_shape(const Tensor2& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  /// Adds `other` elementwise; shapes must match.
  Tensor2& operator+=(const Tensor2& other);

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Tensor2 matmul(const Tensor2& a, const Tensor2& b);
/// aᵀ · b
Tensor2 matmul_at_b(const Tensor2& a, const Tensor2& b);
/// a · bᵀ
Tensor2 matmul_a_bt(const Tensor2& a, const Tensor2& b);

/// Rows `[first, first + count)` copied into a new matrix.
Tensor2 slice_rows(const Tensor2& m, std::size_t first, std::size_t count);
/// Vertical concatenation; all inputs must share a column count.
Tensor2 stack_rows(std::initializer_list<const Tensor2*> parts);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

// ---------------------------------------------------------------------------
// Normalization

std::vector<double> l2_normalize(std::span<const double> v);

/// Backward of u = v / ‖v‖: returns (I − uuᵀ) g / ‖v‖.
std::vector<double> l2_normalize_backward(std::span<const double> grad_unit,
                                          std::span<const double> unit, double norm);

struct NormalizedRows {
  Tensor2 unit;
  std::vector<double> norms;
};

NormalizedRows normalize_rows(const Tensor2& v);
Tensor2 normalize_rows_backward(const Tensor2& grad_unit, const NormalizedRows& forward);

// ---------------------------------------------------------------------------
// Affine layers

/// State retained by a forward pass for the matching backward call.
struct AffineCache {
  Tensor2 input;
  Tensor2 pre_activation;  // populated only for ReLU layers
  bool relu = false;
  std::size_t out_dim = 0;
  bool valid = false;
};

struct AffineResult {
  Tensor2 output;
  AffineCache cache;
};

/// x · W + b. W is (in × out).
AffineResult affine_forward(const Tensor2& x, const Tensor2& w, std::span<const double> b);
/// max(0, x · W + b).
AffineResult affine_relu_forward(const Tensor2& x, const Tensor2& w, std::span<const double> b);

/// Accumulates dL/dW and dL/db into `grad_w` / `grad_b` and returns dL/dx.
Tensor2 affine_backward(const Tensor2& grad_out, const AffineCache& cache, const Tensor2& w,
                        Tensor2& grad_w, std::span<double> grad_b);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

/// One Adam update with bias correction and decoupled weight decay
/// (p ← p − lr·(m̂/(√v̂+ε) + wd·p)). Throws NumericError on a non-finite
/// gradient before touching any parameter.
void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads);

/// Plain gradient descent, p ← p − lr·(g + wd·p). Same NumericError contract
/// as adam_step.
void sgd_step(const std::vector<std::span<double>>& params,
              const std::vector<std::span<const double>>& grads, double learning_rate,
              double weight_decay);

// ---------------------------------------------------------------------------
// Gradient verification

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t worst_block = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares `analytic` against central differences of `loss_fn`, perturbing
/// each entry of `params` in place (and restoring it). The loss must read the
/// parameters through those same spans.
FiniteDiffReport finite_diff_report(const std::function<double()>& loss_fn,
                                    const std::vector<std::span<double>>& params,
                                    const std::vector<std::span<const double>>& analytic,
                                    double step);

/// max over parameters of |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<double()>& loss_fn,
                         const std::vector<std::span<double>>& params,
                         const std::vector<std::span<const double>>& analytic, double step);

// ---------------------------------------------------------------------------
// Random helpers

double sample_normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
double sample_uniform01(Rng& rng);
/// Beta(a, b) through the ratio of two Gamma draws.
double sample_beta(Rng& rng, double a, double b);
/// Uniform integer in [0, n).
std::size_t sample_index(Rng& rng, std::size_t n);

}  // namespace onpro
