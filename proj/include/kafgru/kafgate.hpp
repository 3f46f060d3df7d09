#pragma once

// Flexible gating functions built from kernel activation functions (KAFs).
//
// A KAF is a one-dimensional kernel expansion over a fixed dictionary,
//   KAF(s) = sum_i alpha_i * exp(-gamma * (s - d_i)^2),
// and the flexible gate wraps it in a sigmoid with a residual term,
//   sigma_kaf(s) = sigmoid(0.5 * KAF(s) + 0.5 * s),
// so the gate stays bounded in (0, 1) and keeps a sigmoid-like profile far
// from the dictionary. Mixing coefficients and inverse bandwidths are
// trainable per gated unit; the dictionary is fixed and shared network-wide.
// Identity initialization fits the coefficients by kernel ridge regression so
// the gate starts out indistinguishable from a plain sigmoid.

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kafgru/errors.hpp"
#include "kafgru/numerics.hpp"

namespace kafgru {

struct Dictionary {
  Vector elements;       // strictly increasing, equispaced
  double spacing = 0.0;  // distance between consecutive elements
};

// d_count equispaced points covering [lo, hi] inclusive.
inline Dictionary make_dictionary(std::size_t d_count, double lo, double hi) {
  if (d_count < 2) throw std::invalid_argument("make_dictionary: need at least 2 elements");
  if (!(lo < hi)) throw std::invalid_argument("make_dictionary: lo must be below hi");
  Dictionary dict;
  dict.spacing = (hi - lo) / static_cast<double>(d_count - 1);
  dict.elements.resize(d_count);
  for (std::size_t i = 0; i < d_count; ++i)
    dict.elements[i] = lo + dict.spacing * static_cast<double>(i);
  dict.elements.back() = hi;  // exact endpoint
  return dict;
}

// Rule-of-thumb inverse bandwidth gamma = 1 / (6 delta^2).
inline double rule_of_thumb_gamma(double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("rule_of_thumb_gamma: delta must be positive");
  return 1.0 / (6.0 * delta * delta);
}

// 1-D Gaussian kernel, value in (0, 1], equal to 1 iff s == center.
inline double gauss_kernel(double s, double center, double gamma) {
  const double t = s - center;
  return std::exp(-gamma * t * t);
}

// Evaluates the kernel against every dictionary element. Because the
// dictionary is equispaced, consecutive kernel values differ by a ratio that
// itself changes by a constant factor, so the whole row costs three exp calls
// instead of D. Falls back to direct evaluation when the running ratio would
// leave the exponent range (|s| far outside the dictionary).
inline void gauss_kernel_row(double s, double gamma, const Dictionary& dict, double* out) {
  const std::size_t n = dict.elements.size();
  const double step = dict.spacing;
  const double t_first = s - dict.elements.front();
  const double t_last = s - dict.elements.back();
  const double two_gs = 2.0 * gamma * step;
  if (std::abs(two_gs * t_first) > 600.0 || std::abs(two_gs * t_last) > 600.0) {
    for (std::size_t i = 0; i < n; ++i) out[i] = gauss_kernel(s, dict.elements[i], gamma);
    return;
  }
  const double ratio_decay = std::exp(-two_gs * step);
  double ratio = std::exp(two_gs * t_first - gamma * step * step);
  double value = std::exp(-gamma * t_first * t_first);
  out[0] = value;
  for (std::size_t i = 1; i < n; ++i) {
    value *= ratio;
    ratio *= ratio_decay;
    out[i] = value;
  }
}

// Per-gate trainable state. One row of mixing coefficients and one inverse
// bandwidth per gated unit; the dictionary is shared, never trained.
struct KafGateParams {
  std::shared_ptr<const Dictionary> dictionary;
  Matrix alphas;  // units x D
  Vector gammas;  // units, all positive

  std::size_t units() const { return alphas.rows; }
  std::size_t dict_size() const { return alphas.cols; }
};

enum class GateKind { Standard, KafResidual, KafNoResidual };
enum class GateInit { Identity, Random };

struct GateVariant {
  GateKind kind = GateKind::KafResidual;
  GateInit init = GateInit::Identity;
};

inline const char* gate_kind_name(GateKind kind) {
  switch (kind) {
    case GateKind::Standard: return "standard";
    case GateKind::KafResidual: return "kaf";
    case GateKind::KafNoResidual: return "kaf-noresidual";
  }
  return "?";
}

// KAF(s) for one unit.
inline double kaf_eval(const KafGateParams& params, std::size_t unit, double s) {
  const Dictionary& dict = *params.dictionary;
  const std::size_t d = params.dict_size();
  double acc = 0.0;
  const double* alpha = params.alphas.data.data() + unit * d;
  const double gamma = params.gammas[unit];
  for (std::size_t i = 0; i < d; ++i) acc += alpha[i] * gauss_kernel(s, dict.elements[i], gamma);
  return acc;
}

// Coefficients from kernel ridge regression against the dictionary itself,
// (K + eps I) alpha = d, so KAF(s) tracks the identity over the dictionary
// span and the wrapped gate starts as a standard sigmoid. Deterministic.
inline KafGateParams identity_init(std::shared_ptr<const Dictionary> dict,
                                   std::size_t units, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("identity_init: epsilon must be positive");
  const std::size_t d = dict->elements.size();
  const double gamma0 = rule_of_thumb_gamma(dict->spacing);
  Matrix gram(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      gram(i, j) = gauss_kernel(dict->elements[i], dict->elements[j], gamma0);
    gram(i, i) += epsilon;
  }
  const Vector alpha = solve_spd(gram, dict->elements);

  KafGateParams params;
  params.dictionary = std::move(dict);
  params.alphas = Matrix(units, d);
  for (std::size_t u = 0; u < units; ++u)
    for (std::size_t i = 0; i < d; ++i) params.alphas(u, i) = alpha[i];
  params.gammas.assign(units, gamma0);
  return params;
}

// Coefficients drawn i.i.d. normal(0, scale^2); bandwidths at the rule of thumb.
inline KafGateParams random_init(std::shared_ptr<const Dictionary> dict,
                                 std::size_t units, Rng& rng, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("random_init: scale must be positive");
  const std::size_t d = dict->elements.size();
  const double gamma0 = rule_of_thumb_gamma(dict->spacing);
  KafGateParams params;
  params.dictionary = std::move(dict);
  params.alphas = Matrix(units, d);
  for (double& a : params.alphas.data) a = rng.normal() * scale;
  params.gammas.assign(units, gamma0);
  return params;
}

// Gamma positivity is enforced by projection after each optimizer step.
inline constexpr double kMinGamma = 1e-4;

inline void clamp_gammas(KafGateParams& params, double min_gamma = kMinGamma) {
  for (double& g : params.gammas)
    if (g < min_gamma) g = min_gamma;
}

// ---------------------------------------------------------------------------
// Batched gate forward/backward. Rows are batch elements, columns are units.
// The cache keeps pre-activations, kernel values and the gate output, which
// is everything backward needs without recomputing kernels.

struct GateCache {
  GateKind kind = GateKind::Standard;
  Matrix pre;              // batch x units
  Matrix out;              // batch x units, the gate value sigma(u)
  Vector kernels;          // batch x units x D, row-major; empty for Standard
  std::size_t dict_size = 0;
};

// Core forward. Writes the gate values into out (resized as needed). With a
// cache it also records pre-activations and kernel values; without one it
// runs allocation-free off a stack buffer, producing bit-identical values
// (same kernel-row and dot-product order).
inline void gate_forward_into(const KafGateParams& params, GateVariant variant,
                              const Matrix& pre, GateCache* cache, Matrix& out) {
  if (pre.cols != params.units()) {
    throw ShapeError("gate_forward: " + std::to_string(pre.cols) + " inputs for " +
                     std::to_string(params.units()) + " units");
  }
  if (!out.same_shape(pre)) out = Matrix(pre.rows, pre.cols);

  if (variant.kind == GateKind::Standard) {
    if (cache) {
      cache->kind = variant.kind;
      cache->pre = pre;
      cache->kernels.clear();
      cache->dict_size = 0;
    }
    for (std::size_t i = 0; i < pre.data.size(); ++i) out.data[i] = sigmoid(pre.data[i]);
    return;
  }

  const Dictionary& dict = *params.dictionary;
  const std::size_t d = params.dict_size();
  constexpr std::size_t kStackKernels = 64;
  double stack_row[kStackKernels];
  Vector heap_row;
  if (!cache && d > kStackKernels) heap_row.resize(d);
  if (cache) {
    cache->kind = variant.kind;
    cache->pre = pre;
    cache->dict_size = d;
    cache->kernels.resize(pre.rows * pre.cols * d);
  }
  const bool residual = variant.kind == GateKind::KafResidual;

  for (std::size_t b = 0; b < pre.rows; ++b) {
    const double* pre_row = pre.data.data() + b * pre.cols;
    double* out_row = out.data.data() + b * out.cols;
    for (std::size_t j = 0; j < pre.cols; ++j) {
      const double s = pre_row[j];
      double* kern = cache ? cache->kernels.data() + (b * pre.cols + j) * d
                           : (d > kStackKernels ? heap_row.data() : stack_row);
      gauss_kernel_row(s, params.gammas[j], dict, kern);
      const double* alpha = params.alphas.data.data() + j * d;
      double kaf = 0.0;
      for (std::size_t i = 0; i < d; ++i) kaf += alpha[i] * kern[i];
      const double u = residual ? 0.5 * kaf + 0.5 * s : kaf;
      out_row[j] = sigmoid(u);
    }
  }
}

inline GateCache gate_forward(const KafGateParams& params, GateVariant variant,
                              const Matrix& pre) {
  GateCache cache;
  gate_forward_into(params, variant, pre, &cache, cache.out);
  return cache;
}

// Single-vector convenience wrapper; returns (gate values, cache).
inline std::pair<Vector, GateCache> gate_forward(const KafGateParams& params,
                                                 GateVariant variant, const Vector& pre) {
  GateCache cache = gate_forward(params, variant, Matrix(1, pre.size(), pre));
  return {cache.out.data, std::move(cache)};
}

// sigma_kaf for one unit at a scalar input; used by shape exports and tests.
inline double gate_eval(const KafGateParams& params, GateKind kind, std::size_t unit,
                        double s) {
  switch (kind) {
    case GateKind::Standard: return sigmoid(s);
    case GateKind::KafResidual: return sigmoid(0.5 * kaf_eval(params, unit, s) + 0.5 * s);
    case GateKind::KafNoResidual: return sigmoid(kaf_eval(params, unit, s));
  }
  return 0.0;
}

// Gradients with respect to pre-activations (overwritten) and the gate's own
// parameters (accumulated, summed over the batch). With u the sigmoid input:
//   d/ds      = sig' * (0.5 KAF'(s) + 0.5)        KAF'(s) = sum_i a_i k_i (-2 gamma (s-d_i))
//   d/dalpha_i = sig' * 0.5 * k_i
//   d/dgamma  = sig' * 0.5 * sum_i a_i k_i (-(s-d_i)^2)
// without the 0.5 and the residual slope for the no-residual kind, and plain
// sig' for Standard (alpha/gamma untouched).
inline void gate_backward(const KafGateParams& params, const GateCache& cache,
                          const Matrix& upstream, Matrix& d_pre, Matrix& d_alphas,
                          Vector& d_gammas) {
  if (!upstream.same_shape(cache.out))
    throw UsageError("gate_backward: upstream shape does not match cache");
  if (cache.kind != GateKind::Standard &&
      (cache.dict_size != params.dict_size() || cache.out.cols != params.units()))
    throw UsageError("gate_backward: cache does not match parameters");
  if (!d_pre.same_shape(upstream)) d_pre = Matrix(upstream.rows, upstream.cols);

  if (cache.kind == GateKind::Standard) {
    for (std::size_t i = 0; i < upstream.data.size(); ++i) {
      const double g = cache.out.data[i];
      d_pre.data[i] = upstream.data[i] * g * (1.0 - g);
    }
    return;
  }

  if (d_alphas.rows != params.units() || d_alphas.cols != params.dict_size() ||
      d_gammas.size() != params.units())
    throw UsageError("gate_backward: gradient accumulators have wrong shape");

  const Dictionary& dict = *params.dictionary;
  const std::size_t d = cache.dict_size;
  const bool residual = cache.kind == GateKind::KafResidual;
  const double weight = residual ? 0.5 : 1.0;

  for (std::size_t b = 0; b < upstream.rows; ++b) {
    for (std::size_t j = 0; j < upstream.cols; ++j) {
      const double g = cache.out(b, j);
      const double sig_prime = g * (1.0 - g);
      const double d_u = upstream(b, j) * sig_prime;
      const double s = cache.pre(b, j);
      const double gamma = params.gammas[j];
      const double* kern = cache.kernels.data() + (b * upstream.cols + j) * d;
      const double* alpha = params.alphas.data.data() + j * d;
      double* da = d_alphas.data.data() + j * d;

      double kaf_slope = 0.0;
      double kaf_dgamma = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double t = s - dict.elements[i];
        const double ak = alpha[i] * kern[i];
        kaf_slope += ak * (-2.0 * gamma * t);
        kaf_dgamma += ak * (-(t * t));
        da[i] += d_u * weight * kern[i];
      }
      d_gammas[j] += d_u * weight * kaf_dgamma;
      d_pre(b, j) = residual ? d_u * (0.5 * kaf_slope + 0.5) : d_u * kaf_slope;
    }
  }
}

}  // namespace kafgru
