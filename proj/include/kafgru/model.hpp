#pragma once

// Full model (recurrent cell plus classifier head), its gradient mirror, and
// a fixed-order traversal over the learnable tensors that the optimizer and
// checkpointing build on.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "kafgru/head.hpp"
#include "kafgru/kafgate.hpp"
#include "kafgru/numerics.hpp"
#include "kafgru/recurrent.hpp"

namespace kafgru {

struct Model {
  GruParams rnn;
  HeadParams head;
};

// Mirrors every learnable tensor of Model.
struct GradientSet {
  GruGradients rnn;
  HeadGradients head;
};

inline GradientSet zero_gradient_set(const Model& model) {
  GradientSet g;
  g.rnn = zero_gradients(model.rnn);
  g.head.d_a = Matrix(model.head.a.rows, model.head.a.cols);
  g.head.d_b.assign(model.head.b.size(), 0.0);
  g.head.d_scale.assign(model.head.bn.scale.size(), 0.0);
  g.head.d_shift.assign(model.head.bn.shift.size(), 0.0);
  return g;
}

struct TensorRef {
  const char* name;
  Vector* values;
};

// The two traversals below must stay in the same order; optimizer moments and
// checkpoint records are indexed by it.
inline std::vector<TensorRef> learnable_tensors(Model& m) {
  return {
      {"w_u", &m.rnn.w_u.data},
      {"v_u", &m.rnn.v_u.data},
      {"b_u", &m.rnn.b_u},
      {"w_r", &m.rnn.w_r.data},
      {"v_r", &m.rnn.v_r.data},
      {"b_r", &m.rnn.b_r},
      {"w_h", &m.rnn.w_h.data},
      {"v_h", &m.rnn.v_h.data},
      {"b_h", &m.rnn.b_h},
      {"update_alphas", &m.rnn.update_gate.params.alphas.data},
      {"update_gammas", &m.rnn.update_gate.params.gammas},
      {"reset_alphas", &m.rnn.reset_gate.params.alphas.data},
      {"reset_gammas", &m.rnn.reset_gate.params.gammas},
      {"head_a", &m.head.a.data},
      {"head_b", &m.head.b},
      {"bn_scale", &m.head.bn.scale},
      {"bn_shift", &m.head.bn.shift},
  };
}

inline std::vector<TensorRef> gradient_tensors(GradientSet& g) {
  return {
      {"w_u", &g.rnn.w_u.data},
      {"v_u", &g.rnn.v_u.data},
      {"b_u", &g.rnn.b_u},
      {"w_r", &g.rnn.w_r.data},
      {"v_r", &g.rnn.v_r.data},
      {"b_r", &g.rnn.b_r},
      {"w_h", &g.rnn.w_h.data},
      {"v_h", &g.rnn.v_h.data},
      {"b_h", &g.rnn.b_h},
      {"update_alphas", &g.rnn.update_alphas.data},
      {"update_gammas", &g.rnn.update_gammas},
      {"reset_alphas", &g.rnn.reset_alphas.data},
      {"reset_gammas", &g.rnn.reset_gammas},
      {"head_a", &g.head.d_a.data},
      {"head_b", &g.head.d_b},
      {"bn_scale", &g.head.d_scale},
      {"bn_shift", &g.head.d_shift},
  };
}

struct ModelLayout {
  std::size_t input_size = 0;
  std::size_t hidden_size = 100;
  std::size_t classes = 10;
  std::size_t dict_size = 10;
  double dict_min = -4.0;
  double dict_max = 4.0;
  double epsilon_ridge = 1e-4;
  double random_init_scale = 0.3;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  GateVariant gate;
};

namespace detail {

// Glorot-uniform fill, limit sqrt(6 / (fan_in + fan_out)).
inline void glorot_fill(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : m.data) x = rng.uniform(-limit, limit);
}

inline KafGateParams init_gate(const ModelLayout& layout,
                               std::shared_ptr<const Dictionary> dict, Rng& rng) {
  if (layout.gate.kind != GateKind::Standard && layout.gate.init == GateInit::Random)
    return random_init(std::move(dict), layout.hidden_size, rng, layout.random_init_scale);
  return identity_init(std::move(dict), layout.hidden_size, layout.epsilon_ridge);
}

}  // namespace detail

// Builds a model with freshly initialized weights. Input and recurrent
// matrices are Glorot uniform, biases zero, gates per the configured variant.
// The dictionary is built once and shared by both gates.
inline Model init_model(const ModelLayout& layout, Rng& rng) {
  Model m;
  m.rnn.input_size = layout.input_size;
  m.rnn.hidden_size = layout.hidden_size;
  const std::size_t in = layout.input_size, hid = layout.hidden_size;

  m.rnn.w_u = Matrix(hid, in);
  m.rnn.w_r = Matrix(hid, in);
  m.rnn.w_h = Matrix(hid, in);
  m.rnn.v_u = Matrix(hid, hid);
  m.rnn.v_r = Matrix(hid, hid);
  m.rnn.v_h = Matrix(hid, hid);
  detail::glorot_fill(m.rnn.w_u, in, hid, rng);
  detail::glorot_fill(m.rnn.v_u, hid, hid, rng);
  detail::glorot_fill(m.rnn.w_r, in, hid, rng);
  detail::glorot_fill(m.rnn.v_r, hid, hid, rng);
  detail::glorot_fill(m.rnn.w_h, in, hid, rng);
  detail::glorot_fill(m.rnn.v_h, hid, hid, rng);
  m.rnn.b_u.assign(hid, 0.0);
  m.rnn.b_r.assign(hid, 0.0);
  m.rnn.b_h.assign(hid, 0.0);

  auto dict = std::make_shared<const Dictionary>(
      make_dictionary(layout.dict_size, layout.dict_min, layout.dict_max));
  m.rnn.update_gate.variant = layout.gate;
  m.rnn.reset_gate.variant = layout.gate;
  m.rnn.update_gate.params = detail::init_gate(layout, dict, rng);
  m.rnn.reset_gate.params = detail::init_gate(layout, dict, rng);

  m.head.a = Matrix(layout.classes, hid);
  detail::glorot_fill(m.head.a, hid, layout.classes, rng);
  m.head.b.assign(layout.classes, 0.0);
  m.head.bn = make_batch_norm(hid, layout.bn_momentum, layout.bn_eps);
  return m;
}

// Same shapes as init_model but all weights zero; used when loading
// checkpoints into a known layout.
inline Model model_skeleton(const ModelLayout& layout) {
  Model m;
  m.rnn.input_size = layout.input_size;
  m.rnn.hidden_size = layout.hidden_size;
  const std::size_t in = layout.input_size, hid = layout.hidden_size;
  m.rnn.w_u = Matrix(hid, in);
  m.rnn.w_r = Matrix(hid, in);
  m.rnn.w_h = Matrix(hid, in);
  m.rnn.v_u = Matrix(hid, hid);
  m.rnn.v_r = Matrix(hid, hid);
  m.rnn.v_h = Matrix(hid, hid);
  m.rnn.b_u.assign(hid, 0.0);
  m.rnn.b_r.assign(hid, 0.0);
  m.rnn.b_h.assign(hid, 0.0);

  auto dict = std::make_shared<const Dictionary>(
      make_dictionary(layout.dict_size, layout.dict_min, layout.dict_max));
  m.rnn.update_gate.variant = layout.gate;
  m.rnn.reset_gate.variant = layout.gate;
  m.rnn.update_gate.params.dictionary = dict;
  m.rnn.update_gate.params.alphas = Matrix(hid, layout.dict_size);
  m.rnn.update_gate.params.gammas.assign(hid, 0.0);
  m.rnn.reset_gate.params.dictionary = dict;
  m.rnn.reset_gate.params.alphas = Matrix(hid, layout.dict_size);
  m.rnn.reset_gate.params.gammas.assign(hid, 0.0);

  m.head.a = Matrix(layout.classes, hid);
  m.head.b.assign(layout.classes, 0.0);
  m.head.bn = make_batch_norm(hid, layout.bn_momentum, layout.bn_eps);
  return m;
}

}  // namespace kafgru
