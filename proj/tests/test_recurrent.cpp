#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "kafgru/head.hpp"
#include "kafgru/model.hpp"
#include "kafgru/recurrent.hpp"
#include "testutil.hpp"

using namespace kafgru;

namespace {

GruParams small_gru(GateKind kind, std::size_t input, std::size_t hidden,
                    std::size_t dict_size, Rng& rng) {
  ModelLayout layout;
  layout.input_size = input;
  layout.hidden_size = hidden;
  layout.dict_size = dict_size;
  layout.gate.kind = kind;
  Model model = testutil::random_model(kind, input, hidden, dict_size, 3, rng);
  return std::move(model.rnn);
}

SequenceBatch random_sequence(std::size_t seq_len, std::size_t batch, std::size_t features,
                              Rng& rng) {
  SequenceBatch seq;
  for (std::size_t t = 0; t < seq_len; ++t) {
    Matrix x(batch, features);
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    seq.steps.push_back(std::move(x));
  }
  seq.labels.assign(batch, 0);
  return seq;
}

// Directly coded classic GRU step, the bitwise oracle for the Standard path.
Matrix classic_gru_step(const GruParams& p, const Matrix& x, const Matrix& h_prev) {
  const Matrix wu_t = transpose(p.w_u), vu_t = transpose(p.v_u);
  const Matrix wr_t = transpose(p.w_r), vr_t = transpose(p.v_r);
  const Matrix wh_t = transpose(p.w_h), vh_t = transpose(p.v_h);
  Matrix pre_u = matmul(x, wu_t);
  add_product(pre_u, h_prev, vu_t);
  add_row_vector(pre_u, p.b_u);
  Matrix pre_r = matmul(x, wr_t);
  add_product(pre_r, h_prev, vr_t);
  add_row_vector(pre_r, p.b_r);
  Matrix rh(h_prev.rows, h_prev.cols);
  for (std::size_t i = 0; i < rh.data.size(); ++i)
    rh.data[i] = sigmoid(pre_r.data[i]) * h_prev.data[i];
  Matrix pre_c = matmul(x, wh_t);
  add_product(pre_c, rh, vh_t);
  add_row_vector(pre_c, p.b_h);
  Matrix h(h_prev.rows, h_prev.cols);
  for (std::size_t i = 0; i < h.data.size(); ++i) {
    const double u = sigmoid(pre_u.data[i]);
    h.data[i] = (1.0 - u) * h_prev.data[i] + u * std::tanh(pre_c.data[i]);
  }
  return h;
}

}  // namespace

TEST_CASE("cell_step forced-gate behavior") {
  Rng rng(3);
  GruParams p = small_gru(GateKind::Standard, 2, 3, 5, rng);
  Matrix x(2, 2, {0.3, -0.4, 0.8, 0.1});
  Matrix h(2, 3, {0.5, -0.2, 0.9, -0.7, 0.3, 0.0});

  SECTION("update gate forced closed carries the state through") {
    p.b_u.assign(3, -1000.0);  // sigmoid underflows to exactly 0
    const Matrix out = cell_step(p, x, h);
    for (std::size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == h.data[i]);
  }
  SECTION("update gate forced open replaces the state with the candidate") {
    p.b_u.assign(3, 1000.0);  // sigmoid saturates to exactly 1
    StepCache cache;
    const Matrix out = cell_step(p, x, h, &cache);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      CHECK(out.data[i] == cache.candidate.data[i]);
  }
  SECTION("zero parameters halve the state") {
    GruParams z = small_gru(GateKind::Standard, 2, 3, 5, rng);
    for (Matrix* m : {&z.w_u, &z.v_u, &z.w_r, &z.v_r, &z.w_h, &z.v_h})
      for (double& v : m->data) v = 0.0;
    z.b_u.assign(3, 0.0);
    z.b_r.assign(3, 0.0);
    z.b_h.assign(3, 0.0);
    StepCache cache;
    const Matrix out = cell_step(z, x, h, &cache);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      CHECK(out.data[i] == Catch::Approx(0.5 * h.data[i]).margin(1e-15));
    for (double v : cache.update.out.data) CHECK(v == 0.5);
    for (double v : cache.reset.out.data) CHECK(v == 0.5);
  }
  SECTION("dimension mismatch") {
    CHECK_THROWS_AS(cell_step(p, Matrix(2, 5), h), ShapeError);
    CHECK_THROWS_AS(cell_step(p, x, Matrix(2, 7)), ShapeError);
  }
}

TEST_CASE("state update is an element-wise convex combination") {
  Rng rng(11);
  for (GateKind kind : {GateKind::Standard, GateKind::KafResidual, GateKind::KafNoResidual}) {
    GruParams p = small_gru(kind, 3, 4, 5, rng);
    Matrix x(2, 3), h(2, 4);
    for (double& v : x.data) v = rng.uniform(-2.0, 2.0);
    for (double& v : h.data) v = rng.uniform(-1.0, 1.0);
    StepCache cache;
    const Matrix out = cell_step(p, x, h, &cache);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      const double lo = std::min(h.data[i], cache.candidate.data[i]);
      const double hi = std::max(h.data[i], cache.candidate.data[i]);
      CHECK(out.data[i] >= lo - 1e-15);
      CHECK(out.data[i] <= hi + 1e-15);
    }
    for (double u : cache.update.out.data) {
      CHECK(u > 0.0);
      CHECK(u < 1.0);
    }
    for (double r : cache.reset.out.data) {
      CHECK(r > 0.0);
      CHECK(r < 1.0);
    }
  }
}

TEST_CASE("unroll_forward") {
  Rng rng(23);
  GruParams p = small_gru(GateKind::KafResidual, 2, 3, 5, rng);

  SECTION("one step equals cell_step from the zero state") {
    SequenceBatch seq = random_sequence(1, 2, 2, rng);
    const Matrix direct = cell_step(p, seq.steps[0], Matrix(2, 3));
    const Matrix unrolled = unroll_forward(p, seq);
    CHECK(direct.data == unrolled.data);
  }
  SECTION("identical batch rows give identical final states") {
    SequenceBatch seq = random_sequence(4, 1, 2, rng);
    SequenceBatch doubled;
    for (const Matrix& step : seq.steps) {
      Matrix two(2, 2);
      for (std::size_t j = 0; j < 2; ++j) {
        two(0, j) = step(0, j);
        two(1, j) = step(0, j);
      }
      doubled.steps.push_back(std::move(two));
    }
    doubled.labels.assign(2, 0);
    const Matrix h = unroll_forward(p, doubled);
    for (std::size_t j = 0; j < 3; ++j) CHECK(h(0, j) == h(1, j));
  }
  SECTION("three-step toy matches a hand-unrolled scalar computation") {
    // hidden 1, input 1, Standard gates: every quantity is a scalar
    GruParams toy;
    toy.input_size = 1;
    toy.hidden_size = 1;
    toy.w_u = Matrix(1, 1, {0.3});
    toy.v_u = Matrix(1, 1, {-0.2});
    toy.w_r = Matrix(1, 1, {0.5});
    toy.v_r = Matrix(1, 1, {0.1});
    toy.w_h = Matrix(1, 1, {0.7});
    toy.v_h = Matrix(1, 1, {-0.6});
    toy.b_u = {0.05};
    toy.b_r = {-0.1};
    toy.b_h = {0.2};
    auto dict = std::make_shared<const Dictionary>(make_dictionary(5, -2, 2));
    toy.update_gate = {identity_init(dict, 1, 1e-4), {GateKind::Standard, GateInit::Identity}};
    toy.reset_gate = {identity_init(dict, 1, 1e-4), {GateKind::Standard, GateInit::Identity}};

    const double inputs[3] = {0.4, -0.9, 0.2};
    double h = 0.0;
    for (double xt : inputs) {
      const double u = 1.0 / (1.0 + std::exp(-(0.3 * xt - 0.2 * h + 0.05)));
      const double r = 1.0 / (1.0 + std::exp(-(0.5 * xt + 0.1 * h - 0.1)));
      const double c = std::tanh(0.7 * xt - 0.6 * (r * h) + 0.2);
      h = (1.0 - u) * h + u * c;
    }
    SequenceBatch seq;
    for (double xt : inputs) seq.steps.push_back(Matrix(1, 1, {xt}));
    seq.labels = {0};
    const Matrix out = unroll_forward(toy, seq);
    CHECK(out(0, 0) == Catch::Approx(h).margin(1e-12));
  }
  SECTION("empty sequence is rejected") {
    SequenceBatch empty;
    empty.labels = {};
    CHECK_THROWS_AS(unroll_forward(p, empty), std::invalid_argument);
  }
}

TEST_CASE("standard-gate path is bit-identical to a directly coded GRU") {
  Rng rng(5);
  GruParams p = small_gru(GateKind::Standard, 3, 5, 5, rng);
  SequenceBatch seq = random_sequence(6, 4, 3, rng);
  Matrix expect(4, 5);
  for (const Matrix& x : seq.steps) expect = classic_gru_step(p, x, expect);
  const Matrix got = unroll_forward(p, seq);
  CHECK(got.data == expect.data);
}

TEST_CASE("unroll_backward") {
  Rng rng(29);

  SECTION("zero upstream gradient produces an all-zero gradient set") {
    GruParams p = small_gru(GateKind::KafResidual, 2, 3, 5, rng);
    SequenceBatch seq = random_sequence(4, 2, 2, rng);
    UnrollCache cache;
    unroll_forward(p, seq, &cache);
    const GruGradients g = unroll_backward(p, cache, Matrix(2, 3));
    for (const Vector* v : {&g.w_u.data, &g.v_u.data, &g.w_r.data, &g.v_r.data, &g.w_h.data,
                            &g.v_h.data, &g.b_u, &g.b_r, &g.b_h, &g.update_alphas.data,
                            &g.reset_alphas.data, &g.update_gammas, &g.reset_gammas})
      for (double x : *v) CHECK(x == 0.0);
  }
  SECTION("consumed cache cannot be reused") {
    GruParams p = small_gru(GateKind::Standard, 2, 3, 5, rng);
    SequenceBatch seq = random_sequence(2, 2, 2, rng);
    UnrollCache cache;
    unroll_forward(p, seq, &cache);
    unroll_backward(p, cache, Matrix(2, 3));
    CHECK_THROWS_AS(unroll_backward(p, cache, Matrix(2, 3)), UsageError);
  }
  SECTION("single step with standard gates matches the per-equation derivative") {
    // scalar cell; differentiate h = (1-u) h0 + u tanh(wh x + vh r h0 + bh)
    GruParams toy;
    toy.input_size = 1;
    toy.hidden_size = 1;
    const double wu = 0.4, vu = -0.3, bu = 0.1;
    const double wr = -0.5, vr = 0.2, br = -0.05;
    const double wh = 0.8, vh = 0.6, bh = 0.0;
    toy.w_u = Matrix(1, 1, {wu});
    toy.v_u = Matrix(1, 1, {vu});
    toy.w_r = Matrix(1, 1, {wr});
    toy.v_r = Matrix(1, 1, {vr});
    toy.w_h = Matrix(1, 1, {wh});
    toy.v_h = Matrix(1, 1, {vh});
    toy.b_u = {bu};
    toy.b_r = {br};
    toy.b_h = {bh};
    auto dict = std::make_shared<const Dictionary>(make_dictionary(5, -2, 2));
    toy.update_gate = {identity_init(dict, 1, 1e-4), {GateKind::Standard, GateInit::Identity}};
    toy.reset_gate = {identity_init(dict, 1, 1e-4), {GateKind::Standard, GateInit::Identity}};

    const double x = 0.7, h0 = 0.0;  // h0 = 0 per the unroll contract
    SequenceBatch seq;
    seq.steps.push_back(Matrix(1, 1, {x}));
    seq.labels = {0};
    UnrollCache cache;
    unroll_forward(toy, seq, &cache);
    const GruGradients g = unroll_backward(toy, cache, Matrix(1, 1, {1.0}));

    const double u = 1.0 / (1.0 + std::exp(-(wu * x + vu * h0 + bu)));
    const double r = 1.0 / (1.0 + std::exp(-(wr * x + vr * h0 + br)));
    const double pre_c = wh * x + vh * r * h0 + bh;
    const double c = std::tanh(pre_c);
    const double du = u * (1.0 - u) * (c - h0);  // dh/d(pre_u)
    const double dc = u * (1.0 - c * c);         // dh/d(pre_c)
    // with h0 = 0 the reset path carries no signal, so its gradients are exactly zero
    const double dr = dc * vh * h0 * r * (1.0 - r);
    CHECK(g.w_u(0, 0) == Catch::Approx(du * x).margin(1e-14));
    CHECK(g.b_u[0] == Catch::Approx(du).margin(1e-14));
    CHECK(g.w_h(0, 0) == Catch::Approx(dc * x).margin(1e-14));
    CHECK(g.v_h(0, 0) == Catch::Approx(dc * r * h0).margin(1e-14));
    CHECK(g.b_h[0] == Catch::Approx(dc).margin(1e-14));
    CHECK(g.w_r(0, 0) == Catch::Approx(dr * x).margin(1e-14));
    CHECK(g.b_r[0] == Catch::Approx(dr).margin(1e-14));
    CHECK(g.v_u(0, 0) == Catch::Approx(du * h0).margin(1e-14));
    CHECK(g.v_r(0, 0) == Catch::Approx(dr * h0).margin(1e-14));
  }
}

// The module's core correctness property: every BPTT gradient matches central
// finite differences of a scalar loss, for all three gate variants.
TEST_CASE("full BPTT gradient check against finite differences") {
  for (GateKind kind : {GateKind::KafResidual, GateKind::Standard, GateKind::KafNoResidual}) {
    Rng rng(101);
    GruParams p = small_gru(kind, 3, 4, 5, rng);
    SequenceBatch seq = random_sequence(7, 3, 3, rng);
    Matrix upstream(3, 4);
    for (double& v : upstream.data) v = rng.uniform(-1.0, 1.0);

    // loss = sum(upstream o h_final)
    auto loss = [&]() {
      const Matrix h = unroll_forward(p, seq);
      double acc = 0.0;
      for (std::size_t i = 0; i < h.data.size(); ++i) acc += upstream.data[i] * h.data[i];
      return acc;
    };
    UnrollCache cache;
    unroll_forward(p, seq, &cache);
    const GruGradients g = unroll_backward(p, cache, upstream);

    struct Pair {
      Vector* param;
      const Vector* grad;
    };
    std::vector<Pair> pairs = {
        {&p.w_u.data, &g.w_u.data},
        {&p.v_u.data, &g.v_u.data},
        {&p.b_u, &g.b_u},
        {&p.w_r.data, &g.w_r.data},
        {&p.v_r.data, &g.v_r.data},
        {&p.b_r, &g.b_r},
        {&p.w_h.data, &g.w_h.data},
        {&p.v_h.data, &g.v_h.data},
        {&p.b_h, &g.b_h},
        {&p.update_gate.params.alphas.data, &g.update_alphas.data},
        {&p.update_gate.params.gammas, &g.update_gammas},
        {&p.reset_gate.params.alphas.data, &g.reset_alphas.data},
        {&p.reset_gate.params.gammas, &g.reset_gammas},
    };
    double worst = -1.0;
    for (Pair& pair : pairs) {
      for (std::size_t i = 0; i < pair.param->size(); ++i) {
        const double fd = testutil::central_diff(loss, (*pair.param)[i], 1e-5);
        worst = std::max(worst, testutil::grad_mismatch((*pair.grad)[i], fd, 1e-5, 1e-8));
      }
    }
    INFO("gate kind " << gate_kind_name(kind));
    CHECK(worst <= 0.0);
  }
}
