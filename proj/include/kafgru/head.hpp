#pragma once

// Classifier head: batch normalization on the final recurrent state, an
// affine layer with softmax, and mean cross-entropy computed in log space.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "kafgru/errors.hpp"
#include "kafgru/numerics.hpp"

namespace kafgru {

enum class BnMode { Train, Eval };

struct BatchNormParams {
  Vector scale;         // learnable, length hidden
  Vector shift;         // learnable
  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  BnMode mode = BnMode::Train;
};

inline BatchNormParams make_batch_norm(std::size_t width, double momentum = 0.1,
                                       double eps = 1e-5) {
  BatchNormParams bn;
  bn.scale.assign(width, 1.0);
  bn.shift.assign(width, 0.0);
  bn.running_mean.assign(width, 0.0);
  bn.running_var.assign(width, 1.0);
  bn.momentum = momentum;
  bn.eps = eps;
  return bn;
}

struct BnCache {
  Matrix input;
  Matrix normalized;  // (x - mean) / sqrt(var + eps)
  Vector mean, var;   // per-feature batch statistics (variance is biased, 1/N)
};

// Train mode normalizes by batch statistics and folds them into the running
// estimates; Eval mode normalizes by the running estimates and never writes.
inline Matrix bn_forward(BatchNormParams& bn, const Matrix& h, BnCache* cache = nullptr) {
  if (h.cols != bn.scale.size()) throw ShapeError("bn_forward: feature width mismatch");
  Matrix out(h.rows, h.cols);

  if (bn.mode == BnMode::Eval) {
    for (std::size_t j = 0; j < h.cols; ++j) {
      const double inv = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
      for (std::size_t i = 0; i < h.rows; ++i)
        out(i, j) = bn.scale[j] * (h(i, j) - bn.running_mean[j]) * inv + bn.shift[j];
    }
    return out;
  }

  if (h.rows < 2)
    throw std::invalid_argument("bn_forward: train mode needs a batch of at least 2");
  const double n = static_cast<double>(h.rows);
  Vector mean(h.cols, 0.0), var(h.cols, 0.0);
  for (std::size_t i = 0; i < h.rows; ++i)
    for (std::size_t j = 0; j < h.cols; ++j) mean[j] += h(i, j);
  for (double& m : mean) m /= n;
  for (std::size_t i = 0; i < h.rows; ++i)
    for (std::size_t j = 0; j < h.cols; ++j) {
      const double d = h(i, j) - mean[j];
      var[j] += d * d;
    }
  for (double& v : var) v /= n;

  Matrix normalized(h.rows, h.cols);
  for (std::size_t j = 0; j < h.cols; ++j) {
    const double inv = 1.0 / std::sqrt(var[j] + bn.eps);
    for (std::size_t i = 0; i < h.rows; ++i) {
      normalized(i, j) = (h(i, j) - mean[j]) * inv;
      out(i, j) = bn.scale[j] * normalized(i, j) + bn.shift[j];
    }
  }
  for (std::size_t j = 0; j < h.cols; ++j) {
    bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean[j];
    bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var[j];
  }
  if (cache) {
    cache->input = h;
    cache->normalized = std::move(normalized);
    cache->mean = std::move(mean);
    cache->var = std::move(var);
  }
  return out;
}

struct BnGradients {
  Matrix d_input;
  Vector d_scale, d_shift;
};

// Backward through a Train-mode forward, batch statistics included.
inline BnGradients bn_backward(const BatchNormParams& bn, const BnCache& cache,
                               const Matrix& upstream) {
  if (!upstream.same_shape(cache.input))
    throw UsageError("bn_backward: upstream shape does not match cache");
  const std::size_t rows = upstream.rows, cols = upstream.cols;
  const double n = static_cast<double>(rows);

  BnGradients g;
  g.d_input = Matrix(rows, cols);
  g.d_scale.assign(cols, 0.0);
  g.d_shift.assign(cols, 0.0);

  for (std::size_t j = 0; j < cols; ++j) {
    const double inv = 1.0 / std::sqrt(cache.var[j] + bn.eps);
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double up = upstream(i, j);
      const double xhat = cache.normalized(i, j);
      g.d_scale[j] += up * xhat;
      g.d_shift[j] += up;
      const double dxhat = up * bn.scale[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    for (std::size_t i = 0; i < rows; ++i) {
      const double dxhat = upstream(i, j) * bn.scale[j];
      g.d_input(i, j) =
          inv * (dxhat - sum_dxhat / n - cache.normalized(i, j) * sum_dxhat_xhat / n);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

struct HeadParams {
  Matrix a;  // classes x hidden
  Vector b;  // classes
  BatchNormParams bn;

  std::size_t classes() const { return a.rows; }
};

struct LossCache {
  BnCache bn;
  Matrix bn_out;       // batch x hidden
  Matrix predictions;  // batch x classes, rows on the simplex
  std::vector<int> labels;
};

struct LossResult {
  double loss = 0.0;
  Matrix predictions;
};

// Logits after batch norm; shared by training loss and argmax evaluation.
inline Matrix head_logits(HeadParams& head, const Matrix& h, BnCache* bn_cache = nullptr,
                          Matrix* bn_out = nullptr) {
  Matrix normalized = bn_forward(head.bn, h, bn_cache);
  Matrix logits(normalized.rows, head.classes());
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* x = normalized.data.data() + i * normalized.cols;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      const double* w = head.a.data.data() + c * head.a.cols;
      double acc = head.b[c];
      for (std::size_t k = 0; k < normalized.cols; ++k) acc += w[k] * x[k];
      logits(i, c) = acc;
    }
  }
  if (bn_out) *bn_out = std::move(normalized);
  return logits;
}

// Mean cross-entropy over the batch, evaluated through log-sum-exp.
inline LossResult loss_forward(HeadParams& head, const Matrix& h,
                               const std::vector<int>& labels, LossCache* cache = nullptr) {
  if (labels.size() != h.rows) throw ShapeError("loss_forward: label count mismatch");
  const std::size_t classes = head.classes();
  for (int label : labels)
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw DataError("loss_forward: label " + std::to_string(label) + " out of range");

  Matrix bn_out;
  BnCache bn_cache;
  Matrix logits = head_logits(head, h, cache ? &bn_cache : nullptr, &bn_out);

  LossResult result;
  result.predictions = Matrix(logits.rows, logits.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* row = logits.data.data() + i * logits.cols;
    const double lse = log_sum_exp(row, logits.cols);
    for (std::size_t c = 0; c < logits.cols; ++c)
      result.predictions(i, c) = std::exp(row[c] - lse);
    total += lse - row[labels[i]];
  }
  result.loss = total / static_cast<double>(logits.rows);

  if (cache) {
    cache->bn = std::move(bn_cache);
    cache->bn_out = std::move(bn_out);
    cache->predictions = result.predictions;
    cache->labels = labels;
  }
  return result;
}

struct HeadGradients {
  Matrix d_a;
  Vector d_b;
  Vector d_scale, d_shift;
};

// Softmax cross-entropy gradient (pred - onehot)/N chained through the affine
// layer and batch norm. Returns the gradient with respect to the raw state h.
inline Matrix loss_backward(const HeadParams& head, const LossCache& cache,
                            HeadGradients& grads) {
  const std::size_t batch = cache.predictions.rows;
  const std::size_t classes = cache.predictions.cols;
  if (cache.labels.size() != batch) throw UsageError("loss_backward: stale cache");

  Matrix d_logits = cache.predictions;
  const double inv_n = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    d_logits(i, static_cast<std::size_t>(cache.labels[i])) -= 1.0;
    for (std::size_t c = 0; c < classes; ++c) d_logits(i, c) *= inv_n;
  }

  grads.d_a = Matrix(head.a.rows, head.a.cols);
  add_product_at_b(grads.d_a, d_logits, cache.bn_out);
  grads.d_b = column_sums(d_logits);

  Matrix d_bn_out = matmul(d_logits, head.a);
  BnGradients bn_grads = bn_backward(head.bn, cache.bn, d_bn_out);
  grads.d_scale = std::move(bn_grads.d_scale);
  grads.d_shift = std::move(bn_grads.d_shift);
  return std::move(bn_grads.d_input);
}

}  // namespace kafgru
