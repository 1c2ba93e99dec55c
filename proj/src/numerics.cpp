#include "onpro/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "onpro/errors.hpp"

namespace onpro {

namespace {

std::string shape_str(const Tensor2& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

}  // namespace

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Tensor2 Tensor2::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  Tensor2 out(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ShapeError("ragged rows in Tensor2::from_rows");
    std::copy(rows[r].begin(), rows[r].end(), out.row(r).begin());
  }
  return out;
}

Tensor2& Tensor2::operator+=(const Tensor2& other) {
  if (!same_shape(other)) {
    throw ShapeError("cannot add " + shape_str(other) + " to " + shape_str(*this));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul " + shape_str(a) + " by " + shape_str(b));
  }
  Tensor2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Tensor2 matmul_at_b(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_at_b " + shape_str(a) + " by " + shape_str(b));
  }
  Tensor2 out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Tensor2 matmul_a_bt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_a_bt " + shape_str(a) + " by " + shape_str(b));
  }
  Tensor2 out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

Tensor2 slice_rows(const Tensor2& m, std::size_t first, std::size_t count) {
  if (first + count > m.rows()) throw ShapeError("row slice out of range");
  Tensor2 out(count, m.cols());
  std::copy_n(m.values().begin() + static_cast<std::ptrdiff_t>(first * m.cols()),
              count * m.cols(), out.values().begin());
  return out;
}

Tensor2 stack_rows(std::initializer_list<const Tensor2*> parts) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool have_cols = false;
  for (const Tensor2* p : parts) {
    if (p->rows() == 0) continue;
    if (have_cols && p->cols() != cols) throw ShapeError("stack_rows column mismatch");
    cols = p->cols();
    have_cols = true;
    rows += p->rows();
  }
  Tensor2 out(rows, cols);
  auto dst = out.values().begin();
  for (const Tensor2* p : parts) {
    dst = std::copy(p->values().begin(), p->values().end(), dst);
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot of unequal lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NormalizationError("cannot normalize a vector with norm " + std::to_string(n));
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

std::vector<double> l2_normalize_backward(std::span<const double> grad_unit,
                                          std::span<const double> unit, double norm) {
  const double proj = dot(grad_unit, unit);
  std::vector<double> out(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) out[i] = (grad_unit[i] - proj * unit[i]) / norm;
  return out;
}

NormalizedRows normalize_rows(const Tensor2& v) {
  NormalizedRows out{Tensor2(v.rows(), v.cols()), std::vector<double>(v.rows())};
  for (std::size_t r = 0; r < v.rows(); ++r) {
    const double n = norm2(v.row(r));
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw NormalizationError("row " + std::to_string(r) + " has norm " + std::to_string(n));
    }
    out.norms[r] = n;
    auto src = v.row(r);
    auto dst = out.unit.row(r);
    for (std::size_t c = 0; c < v.cols(); ++c) dst[c] = src[c] / n;
  }
  return out;
}

Tensor2 normalize_rows_backward(const Tensor2& grad_unit, const NormalizedRows& forward) {
  if (!grad_unit.same_shape(forward.unit) || forward.norms.size() != forward.unit.rows()) {
    throw CacheError("normalization cache does not match gradient " + shape_str(grad_unit));
  }
  Tensor2 out(grad_unit.rows(), grad_unit.cols());
  for (std::size_t r = 0; r < grad_unit.rows(); ++r) {
    auto g = l2_normalize_backward(grad_unit.row(r), forward.unit.row(r), forward.norms[r]);
    std::copy(g.begin(), g.end(), out.row(r).begin());
  }
  return out;
}

namespace {

AffineResult affine_impl(const Tensor2& x, const Tensor2& w, std::span<const double> b, bool relu) {
  if (x.cols() != w.rows() || b.size() != w.cols()) {
    throw ShapeError("affine layer: input " + shape_str(x) + ", weight " + shape_str(w) +
                     ", bias " + std::to_string(b.size()));
  }
  Tensor2 pre = matmul(x, w);
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    auto row = pre.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
  AffineResult result;
  result.cache.input = x;
  result.cache.relu = relu;
  result.cache.out_dim = w.cols();
  result.cache.valid = true;
  if (relu) {
    result.output = pre;
    for (double& v : result.output.values()) v = std::max(0.0, v);
    result.cache.pre_activation = std::move(pre);
  } else {
    result.output = std::move(pre);
  }
  return result;
}

}  // namespace

AffineResult affine_forward(const Tensor2& x, const Tensor2& w, std::span<const double> b) {
  return affine_impl(x, w, b, false);
}

AffineResult affine_relu_forward(const Tensor2& x, const Tensor2& w, std::span<const double> b) {
  return affine_impl(x, w, b, true);
}

Tensor2 affine_backward(const Tensor2& grad_out, const AffineCache& cache, const Tensor2& w,
                        Tensor2& grad_w, std::span<double> grad_b) {
  if (!cache.valid) throw CacheError("affine backward without a forward cache");
  if (grad_out.rows() != cache.input.rows() || grad_out.cols() != cache.out_dim ||
      w.rows() != cache.input.cols() || w.cols() != cache.out_dim) {
    throw CacheError("affine cache inconsistent with gradient " + shape_str(grad_out));
  }
  if (!grad_w.same_shape(w) || grad_b.size() != w.cols()) {
    throw ShapeError("gradient buffers do not match layer shape " + shape_str(w));
  }
  Tensor2 delta = grad_out;
  if (cache.relu) {
    for (std::size_t i = 0; i < delta.size(); ++i) {
      if (!(cache.pre_activation.values()[i] > 0.0)) delta.values()[i] = 0.0;
    }
  }
  grad_w += matmul_at_b(cache.input, delta);
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    auto row = delta.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) grad_b[c] += row[c];
  }
  return matmul_a_bt(delta, w);
}

namespace {

void check_update(const char* who, const std::vector<std::span<double>>& params,
                  const std::vector<std::span<const double>>& grads) {
  const std::string name(who);
  if (params.size() != grads.size()) throw ShapeError(name + ": parameter/gradient block count");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) throw ShapeError(name + ": block size mismatch");
    for (double g : grads[b]) {
      if (!std::isfinite(g)) throw NumericError(name + ": non-finite gradient");
    }
  }
}

}  // namespace

void sgd_step(const std::vector<std::span<double>>& params,
              const std::vector<std::span<const double>>& grads, double learning_rate,
              double weight_decay) {
  check_update("sgd", params, grads);
  if (!(learning_rate > 0.0)) throw NumericError("sgd: learning rate must be positive");
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      double& p = params[b][i];
      p -= learning_rate * (grads[b][i] + weight_decay * p);
    }
  }
}

void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads) {
  check_update("adam", params, grads);
  if (!(state.learning_rate > 0.0)) throw NumericError("adam: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam: state layout changed");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    if (m.size() != params[b].size()) throw ShapeError("adam: state layout changed");
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      double& p = params[b][i];
      p -= state.learning_rate * (m_hat / (std::sqrt(v_hat) + state.epsilon) + state.weight_decay * p);
    }
  }
}

FiniteDiffReport finite_diff_report(const std::function<double()>& loss_fn,
                                    const std::vector<std::span<double>>& params,
                                    const std::vector<std::span<const double>>& analytic,
                                    double step) {
  if (params.size() != analytic.size()) throw ShapeError("finite diff: block count mismatch");
  FiniteDiffReport report;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != analytic[b].size()) throw ShapeError("finite diff: block size");
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      double& p = params[b][i];
      const double saved = p;
      p = saved + step;
      const double up = loss_fn();
      p = saved - step;
      const double down = loss_fn();
      p = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[b][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_relative_error) {
        report = {rel, b, i, a, numeric};
      }
    }
  }
  return report;
}

double finite_diff_check(const std::function<double()>& loss_fn,
                         const std::vector<std::span<double>>& params,
                         const std::vector<std::span<const double>>& analytic, double step) {
  return finite_diff_report(loss_fn, params, analytic, step).max_relative_error;
}

double sample_normal(Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(rng);
}

double sample_uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

double sample_beta(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0.0) return 0.5;
  return x / (x + y);
}

std::size_t sample_index(Rng& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

}  // namespace onpro
