#pragma once
// Continuous-time LSTM: discrete gate updates at event timestamps, and a
// closed-form exponential drift of the cell from a start state toward a
// target state between updates. All arithmetic is recorded on a Tape so
// training gets exact gradients; inference reads the same recorded values.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "ghnn/rng.hpp"
#include "ghnn/tape.hpp"
#include "ghnn/tensor.hpp"

namespace ghnn {

template <typename T>
struct ClstmGate {
  Parameter<T> w;  // d x input_dim
  Parameter<T> u;  // d x d
  Parameter<T> b;  // d

  ClstmGate() = default;
  ClstmGate(const std::string& name, std::size_t dim, std::size_t input_dim)
      : w(name + ".w", Shape{dim, input_dim}),
        u(name + ".u", Shape{dim, dim}),
        b(name + ".b", Shape{dim}) {}
};

template <typename T>
struct ClstmParams {
  std::size_t dim = 0;        // d
  std::size_t input_dim = 0;  // event encoding width fed to the cell
  T psi = T(1);               // decay-gate softplus scale
  bool tanh_update = false;   // update gate z: sigmoid as written, tanh option

  ClstmGate<T> input, input_target, forget, forget_target, update, output, decay;

  ClstmParams() = default;
  ClstmParams(std::size_t d, std::size_t in_dim)
      : dim(d),
        input_dim(in_dim),
        input("clstm.input", d, in_dim),
        input_target("clstm.input_target", d, in_dim),
        forget("clstm.forget", d, in_dim),
        forget_target("clstm.forget_target", d, in_dim),
        update("clstm.update", d, in_dim),
        output("clstm.output", d, in_dim),
        decay("clstm.decay", d, in_dim) {}

  template <typename F>
  void for_each_parameter(F&& f) {
    for (ClstmGate<T>* g : {&input, &input_target, &forget, &forget_target, &update, &output, &decay}) {
      f(g->w);
      f(g->u);
      f(g->b);
    }
  }

  // Weights uniform in (-1/sqrt(d), 1/sqrt(d)), biases zero.
  void init(Rng& rng) {
    T bound = T(1) / std::sqrt(static_cast<T>(dim));
    for_each_parameter([&](Parameter<T>& p) {
      if (p.value.rank() == 2)
        p.init_uniform(rng, bound);
      else
        p.value.zero();
    });
  }
};

// Cell state right after an update at t_update. Between updates the cell
// drifts from c_start toward c_target at elementwise rate delta.
template <typename T>
struct ClstmStateVar {
  Var<T> c_start, c_target, delta, o_gate;
  T t_update = T(0);
};

// Per-tape leaf bindings so each gate weight appears once per recording.
template <typename T>
struct ClstmRef {
  struct GateRef {
    Var<T> w, u, b;
  };
  std::size_t dim = 0;
  T psi = T(1);
  bool tanh_update = false;
  GateRef input, input_target, forget, forget_target, update, output, decay;
};

template <typename T>
ClstmRef<T> bind(Tape<T>& tape, ClstmParams<T>& p) {
  auto g = [&](ClstmGate<T>& gate) {
    return typename ClstmRef<T>::GateRef{tape.leaf(gate.w), tape.leaf(gate.u), tape.leaf(gate.b)};
  };
  ClstmRef<T> r;
  r.dim = p.dim;
  r.psi = p.psi;
  r.tanh_update = p.tanh_update;
  r.input = g(p.input);
  r.input_target = g(p.input_target);
  r.forget = g(p.forget);
  r.forget_target = g(p.forget_target);
  r.update = g(p.update);
  r.output = g(p.output);
  r.decay = g(p.decay);
  return r;
}

// c = c_target = 0, delta = 1, o = 0.5: zero cell and zero hidden at any t.
template <typename T>
ClstmStateVar<T> initial_state(Tape<T>& tape, std::size_t dim) {
  ClstmStateVar<T> s;
  s.c_start = tape.constant(Tensor<T>(Shape{dim}));
  s.c_target = tape.constant(Tensor<T>(Shape{dim}));
  s.delta = tape.constant(Tensor<T>(Shape{dim}, T(1)));
  s.o_gate = tape.constant(Tensor<T>(Shape{dim}, T(0.5)));
  s.t_update = T(0);
  return s;
}

// c(t) = c_target + (c_start - c_target) * exp(-delta * (t - t_update)).
// t == t_update short-circuits to c_start itself, bitwise.
template <typename T>
Var<T> decay_cell(const ClstmStateVar<T>& s, T t) {
  if (t < s.t_update) throw std::invalid_argument("decay_cell: time regression");
  if (t == s.t_update) return s.c_start;
  Var<T> drift = mul(sub(s.c_start, s.c_target), exp(mul_scalar(s.delta, s.t_update - t)));
  return add(s.c_target, drift);
}

// h(t) = o ⊙ tanh(c(t)).
template <typename T>
Var<T> hidden_at(const ClstmStateVar<T>& s, T t) {
  return mul(s.o_gate, tanh(decay_cell(s, t)));
}

// One discrete update at t_event: gates read the decayed hidden h(t_event),
// the new start cell mixes the decayed cell, the new target cell mixes the
// previous target. delta comes through the psi-scaled softplus, so it stays
// strictly positive.
template <typename T>
ClstmStateVar<T> cell_update(const ClstmRef<T>& p, Var<T> k, const ClstmStateVar<T>& prev,
                             T t_event) {
  if (t_event < prev.t_update) throw std::invalid_argument("cell_update: time regression");
  if (k.val().rank() != 1) throw std::invalid_argument("cell_update: input must be a vector");
  Var<T> c_t = decay_cell(prev, t_event);
  Var<T> h = mul(prev.o_gate, tanh(c_t));
  auto pre = [&](const typename ClstmRef<T>::GateRef& g) {
    return add(add(matvec(g.w, k), matvec(g.u, h)), g.b);
  };
  Var<T> i = sigmoid(pre(p.input));
  Var<T> ibar = sigmoid(pre(p.input_target));
  Var<T> f = sigmoid(pre(p.forget));
  Var<T> fbar = sigmoid(pre(p.forget_target));
  Var<T> z = p.tanh_update ? tanh(pre(p.update)) : sigmoid(pre(p.update));
  Var<T> o = sigmoid(pre(p.output));
  Var<T> delta = scaled_softplus(pre(p.decay), p.psi);

  ClstmStateVar<T> next;
  next.c_start = add(mul(f, c_t), mul(i, z));
  next.c_target = add(mul(fbar, prev.c_target), mul(ibar, z));
  next.delta = delta;
  next.o_gate = o;
  next.t_update = t_event;
  return next;
}

}  // namespace ghnn
