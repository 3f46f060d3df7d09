#pragma once

// GRU cell with pluggable gates, sequence unrolling and full (untruncated)
// backpropagation through time. One step computes
//   u_t = g_upd(W_u x_t + V_u h_{t-1} + b_u)
//   r_t = g_rst(W_r x_t + V_r h_{t-1} + b_r)
//   h_t = (1 - u_t) o h_{t-1} + u_t o tanh(W_h x_t + V_h (r_t o h_{t-1}) + b_h)
// where the gates are either plain sigmoids or the flexible KAF gates.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "kafgru/errors.hpp"
#include "kafgru/kafgate.hpp"
#include "kafgru/numerics.hpp"
#include "kafgru/sequence.hpp"

namespace kafgru {

struct Gate {
  KafGateParams params;
  GateVariant variant;
};

struct GruParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Matrix w_u, v_u, w_r, v_r, w_h, v_h;  // w_*: hidden x input, v_*: hidden x hidden
  Vector b_u, b_r, b_h;
  Gate update_gate;
  Gate reset_gate;
};

// Everything one step of backward needs. Gate outputs u_t and r_t live inside
// the gate caches (cache.out), so they are not duplicated here.
struct StepCache {
  Matrix x;          // batch x input
  Matrix h_prev;     // batch x hidden
  GateCache update;
  GateCache reset;
  Matrix reset_h;    // r_t o h_{t-1}
  Matrix candidate;  // tanh(...), batch x hidden
};

struct UnrollCache {
  std::vector<StepCache> steps;
  bool consumed = false;
};

// Accumulated BPTT gradients, mirroring every learnable GRU parameter.
struct GruGradients {
  Matrix w_u, v_u, w_r, v_r, w_h, v_h;
  Vector b_u, b_r, b_h;
  Matrix update_alphas, reset_alphas;
  Vector update_gammas, reset_gammas;
};

inline GruGradients zero_gradients(const GruParams& p) {
  GruGradients g;
  g.w_u = Matrix(p.w_u.rows, p.w_u.cols);
  g.v_u = Matrix(p.v_u.rows, p.v_u.cols);
  g.w_r = Matrix(p.w_r.rows, p.w_r.cols);
  g.v_r = Matrix(p.v_r.rows, p.v_r.cols);
  g.w_h = Matrix(p.w_h.rows, p.w_h.cols);
  g.v_h = Matrix(p.v_h.rows, p.v_h.cols);
  g.b_u.assign(p.b_u.size(), 0.0);
  g.b_r.assign(p.b_r.size(), 0.0);
  g.b_h.assign(p.b_h.size(), 0.0);
  g.update_alphas = Matrix(p.update_gate.params.alphas.rows, p.update_gate.params.alphas.cols);
  g.reset_alphas = Matrix(p.reset_gate.params.alphas.rows, p.reset_gate.params.alphas.cols);
  g.update_gammas.assign(p.update_gate.params.gammas.size(), 0.0);
  g.reset_gammas.assign(p.reset_gate.params.gammas.size(), 0.0);
  return g;
}

namespace detail {

// Input-side weights transposed once per unroll so the per-step products run
// as x (batch x in) times W^T (in x hidden) with contiguous inner loops.
struct TransposedWeights {
  Matrix w_u, v_u, w_r, v_r, w_h, v_h;
};

inline TransposedWeights transpose_weights(const GruParams& p) {
  return {transpose(p.w_u), transpose(p.v_u), transpose(p.w_r),
          transpose(p.v_r), transpose(p.w_h), transpose(p.v_h)};
}

inline Matrix cell_step_impl(const GruParams& params, const TransposedWeights& tw,
                             const Matrix& x, const Matrix& h_prev, StepCache* cache) {
  if (x.cols != params.input_size)
    throw ShapeError("cell_step: input width " + std::to_string(x.cols) + ", expected " +
                     std::to_string(params.input_size));
  if (h_prev.cols != params.hidden_size || h_prev.rows != x.rows)
    throw ShapeError("cell_step: state shape mismatch");

  Matrix u_local, r_local;
  Matrix& u = cache ? cache->update.out : u_local;
  Matrix& r = cache ? cache->reset.out : r_local;

  Matrix pre_u = matmul(x, tw.w_u);
  add_product(pre_u, h_prev, tw.v_u);
  add_row_vector(pre_u, params.b_u);
  gate_forward_into(params.update_gate.params, params.update_gate.variant, pre_u,
                    cache ? &cache->update : nullptr, u);

  Matrix pre_r = matmul(x, tw.w_r);
  add_product(pre_r, h_prev, tw.v_r);
  add_row_vector(pre_r, params.b_r);
  gate_forward_into(params.reset_gate.params, params.reset_gate.variant, pre_r,
                    cache ? &cache->reset : nullptr, r);

  Matrix reset_h(h_prev.rows, h_prev.cols);
  for (std::size_t i = 0; i < reset_h.data.size(); ++i)
    reset_h.data[i] = r.data[i] * h_prev.data[i];

  Matrix pre_c = matmul(x, tw.w_h);
  add_product(pre_c, reset_h, tw.v_h);
  add_row_vector(pre_c, params.b_h);
  Matrix candidate(pre_c.rows, pre_c.cols);
  for (std::size_t i = 0; i < pre_c.data.size(); ++i)
    candidate.data[i] = std::tanh(pre_c.data[i]);

  Matrix h(h_prev.rows, h_prev.cols);
  for (std::size_t i = 0; i < h.data.size(); ++i)
    h.data[i] = (1.0 - u.data[i]) * h_prev.data[i] + u.data[i] * candidate.data[i];

  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->reset_h = std::move(reset_h);
    cache->candidate = std::move(candidate);
  }
  return h;
}

}  // namespace detail

// One recurrence step. Each output entry is a convex combination of the
// previous state and a tanh candidate, so it stays in [-max(|h_prev|,1), ..].
inline Matrix cell_step(const GruParams& params, const Matrix& x, const Matrix& h_prev,
                        StepCache* cache = nullptr) {
  return detail::cell_step_impl(params, detail::transpose_weights(params), x, h_prev, cache);
}

// Runs the cell over a whole sequence from h_0 = 0. Pass a cache to keep the
// per-step records needed by unroll_backward; leave it null for inference.
inline Matrix unroll_forward(const GruParams& params, const SequenceBatch& seq,
                             UnrollCache* cache = nullptr) {
  seq.validate();
  const detail::TransposedWeights tw = detail::transpose_weights(params);
  Matrix h(seq.batch(), params.hidden_size);
  if (cache) {
    cache->steps.clear();
    cache->steps.resize(seq.seq_len());
    cache->consumed = false;
  }
  for (std::size_t t = 0; t < seq.seq_len(); ++t)
    h = detail::cell_step_impl(params, tw, seq.steps[t], h, cache ? &cache->steps[t] : nullptr);
  return h;
}

// Reverse sweep over the unroll. Gradients are summed over batch and time.
// The cache is consumed; reusing it is an error.
inline GruGradients unroll_backward(const GruParams& params, UnrollCache& cache,
                                    const Matrix& d_h_final) {
  if (cache.consumed) throw UsageError("unroll_backward: cache already consumed");
  if (cache.steps.empty()) throw UsageError("unroll_backward: empty cache");
  if (d_h_final.rows != cache.steps.front().h_prev.rows ||
      d_h_final.cols != params.hidden_size)
    throw ShapeError("unroll_backward: upstream gradient shape mismatch");
  cache.consumed = true;

  GruGradients grads = zero_gradients(params);
  Matrix d_h = d_h_final;
  // scratch reused across time steps
  Matrix d_pre_u, d_pre_r;
  Matrix d_u(d_h.rows, d_h.cols);
  Matrix d_pre_c(d_h.rows, d_h.cols);
  Matrix d_h_prev(d_h.rows, d_h.cols);
  Matrix d_reset_h, d_r(d_h.rows, d_h.cols);

  for (std::size_t ti = cache.steps.size(); ti-- > 0;) {
    StepCache& step = cache.steps[ti];
    const Matrix& u = step.update.out;
    const Matrix& r = step.reset.out;

    // h = (1-u) o h_prev + u o c
    for (std::size_t i = 0; i < d_h.data.size(); ++i) {
      const double g = d_h.data[i];
      const double c = step.candidate.data[i];
      d_u.data[i] = g * (c - step.h_prev.data[i]);
      d_pre_c.data[i] = g * u.data[i] * (1.0 - c * c);  // through tanh
      d_h_prev.data[i] = g * (1.0 - u.data[i]);
    }

    // candidate pre-activation: W_h x + V_h (r o h_prev) + b_h
    add_product_at_b(grads.w_h, d_pre_c, step.x);
    add_product_at_b(grads.v_h, d_pre_c, step.reset_h);
    {
      const Vector sums = column_sums(d_pre_c);
      for (std::size_t i = 0; i < sums.size(); ++i) grads.b_h[i] += sums[i];
    }
    product_into(d_reset_h, d_pre_c, params.v_h);
    for (std::size_t i = 0; i < d_r.data.size(); ++i) {
      d_r.data[i] = d_reset_h.data[i] * step.h_prev.data[i];
      d_h_prev.data[i] += d_reset_h.data[i] * r.data[i];
    }

    gate_backward(params.reset_gate.params, step.reset, d_r, d_pre_r, grads.reset_alphas,
                  grads.reset_gammas);
    gate_backward(params.update_gate.params, step.update, d_u, d_pre_u, grads.update_alphas,
                  grads.update_gammas);

    add_product_at_b(grads.w_r, d_pre_r, step.x);
    add_product_at_b(grads.v_r, d_pre_r, step.h_prev);
    add_product_at_b(grads.w_u, d_pre_u, step.x);
    add_product_at_b(grads.v_u, d_pre_u, step.h_prev);
    {
      const Vector sums_r = column_sums(d_pre_r);
      const Vector sums_u = column_sums(d_pre_u);
      for (std::size_t i = 0; i < sums_r.size(); ++i) {
        grads.b_r[i] += sums_r[i];
        grads.b_u[i] += sums_u[i];
      }
    }
    add_product(d_h_prev, d_pre_r, params.v_r);
    add_product(d_h_prev, d_pre_u, params.v_u);

    std::swap(d_h, d_h_prev);
  }
  return grads;
}

}  // namespace kafgru
