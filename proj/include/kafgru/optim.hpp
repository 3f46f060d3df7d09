#pragma once

// Adam with bias correction, global gradient-norm clipping, and the
// early-stopping bookkeeping used by the training harness.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kafgru/errors.hpp"
#include "kafgru/model.hpp"
#include "kafgru/numerics.hpp"

namespace kafgru {

// Scales every gradient by max_norm / norm when the global L2 norm over all
// tensors exceeds max_norm. Returns the scale that was applied (1 if none).
inline double clip_global_norm(GradientSet& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  auto tensors = gradient_tensors(grads);
  double sum_sq = 0.0;
  for (const TensorRef& t : tensors) {
    double local = 0.0;
    for (double g : *t.values) local += g * g;
    if (!std::isfinite(local))
      throw NumericalError(std::string("clip_global_norm: non-finite gradient in ") + t.name);
    sum_sq += local;
  }
  const double norm = std::sqrt(sum_sq);
  if (norm <= max_norm) return 1.0;
  const double scale = max_norm / norm;
  for (const TensorRef& t : tensors)
    for (double& g : *t.values) g *= scale;
  return scale;
}

inline double global_norm(GradientSet& grads) {
  double sum_sq = 0.0;
  for (const TensorRef& t : gradient_tensors(grads))
    for (double g : *t.values) sum_sq += g * g;
  return std::sqrt(sum_sq);
}

struct AdamSettings {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Element-wise Adam update for one tensor. The rule only looks at matching
// indices, so results do not depend on how parameters are partitioned into
// tensors.
inline void adam_update_tensor(const AdamSettings& s, std::uint64_t step, Vector& param,
                               const Vector& grad, Vector& m, Vector& v) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
    throw UsageError("adam_update_tensor: size mismatch");
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grad[i];
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

// Moment accumulators mirror the model's learnable tensors, same order.
struct AdamState {
  AdamSettings settings;
  std::uint64_t step = 0;
  std::vector<Vector> m, v;
};

inline AdamState make_adam(Model& model, const AdamSettings& settings = {}) {
  AdamState state;
  state.settings = settings;
  for (const TensorRef& t : learnable_tensors(model)) {
    state.m.emplace_back(t.values->size(), 0.0);
    state.v.emplace_back(t.values->size(), 0.0);
  }
  return state;
}

// One optimizer step over the whole model, followed by the gamma positivity
// projection on both gates.
inline void adam_step(AdamState& state, Model& model, GradientSet& grads,
                      double min_gamma = kMinGamma) {
  auto params = learnable_tensors(model);
  auto grad_refs = gradient_tensors(grads);
  if (params.size() != state.m.size() || params.size() != grad_refs.size())
    throw UsageError("adam_step: state does not match model");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i)
    adam_update_tensor(state.settings, state.step, *params[i].values, *grad_refs[i].values,
                       state.m[i], state.v[i]);
  clamp_gammas(model.rnn.update_gate.params, min_gamma);
  clamp_gammas(model.rnn.reset_gate.params, min_gamma);
}

// ---------------------------------------------------------------------------

enum class StopDecision { Continue, Stop };

struct EarlyStopState {
  double best_accuracy = -1.0;       // strictly below any real accuracy
  std::uint64_t best_iteration = 0;
  std::uint64_t patience_iterations = 500;
  std::uint64_t eval_every = 25;
};

// Strict improvement records a new best; ties do not reset the patience
// window, so flat-accuracy runs always terminate. Stop once the gap since the
// last improvement reaches the patience budget.
inline StopDecision early_stop_update(EarlyStopState& state, std::uint64_t iteration,
                                      double val_accuracy) {
  if (val_accuracy > state.best_accuracy) {
    state.best_accuracy = val_accuracy;
    state.best_iteration = iteration;
    return StopDecision::Continue;
  }
  if (iteration - state.best_iteration >= state.patience_iterations)
    return StopDecision::Stop;
  return StopDecision::Continue;
}

}  // namespace kafgru
