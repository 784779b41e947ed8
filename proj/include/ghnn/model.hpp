#pragma once
// The event model: neighborhood aggregation feeds a continuous-time
// LSTM per query direction; a softplus head turns projected hidden states
// into strictly positive candidate intensities; trapezoid quadrature turns
// intensities into survival terms, event-time densities, and expected times.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ghnn/clstm.hpp"
#include "ghnn/dataset.hpp"
#include "ghnn/quadrature.hpp"
#include "ghnn/rng.hpp"
#include "ghnn/tape.hpp"
#include "ghnn/tensor.hpp"

namespace ghnn {

// Hidden readout fed to the intensity head. output_gate uses the cell's own
// output gate; candidate_embedding weights tanh(c(t)) by each candidate's
// embedding instead (requires d == r) and is applied only at scoring time.
enum class Readout : std::uint8_t { output_gate = 0, candidate_embedding = 1 };

// How subject- and object-branch intensities combine into the event-time
// intensity: their mean, or their plain sum.
enum class TimeCombine : std::uint8_t { mean = 0, sum = 1 };

template <typename T>
struct ModelParams {
  std::size_t num_entities = 0, num_predicates = 0;
  std::size_t r = 0;  // embedding width
  std::size_t d = 0;  // cell width
  T softplus_scale = T(1);
  Readout readout = Readout::output_gate;
  TimeCombine time_combine = TimeCombine::mean;

  Parameter<T> entity_emb;     // N_e x r
  Parameter<T> predicate_emb;  // N_p x r
  // The candidate projection acts on [anchor ⊕ projected hidden ⊕ predicate];
  // it is stored as its three r x r blocks.
  Parameter<T> w_lambda_anchor, w_lambda_hidden, w_lambda_pred;
  Parameter<T> w_h;  // r x d
  ClstmParams<T> clstm;

  ModelParams() = default;
  ModelParams(std::size_t n_e, std::size_t n_p, std::size_t r_, std::size_t d_)
      : num_entities(n_e),
        num_predicates(n_p),
        r(r_),
        d(d_),
        entity_emb("entity_emb", Shape{n_e, r_}),
        predicate_emb("predicate_emb", Shape{n_p, r_}),
        w_lambda_anchor("w_lambda_anchor", Shape{r_, r_}),
        w_lambda_hidden("w_lambda_hidden", Shape{r_, r_}),
        w_lambda_pred("w_lambda_pred", Shape{r_, r_}),
        w_h("w_h", Shape{r_, d_}),
        clstm(d_, 3 * r_) {
    if (n_e == 0 || n_p == 0 || r_ == 0 || d_ == 0)
      throw std::invalid_argument("model dimensions must be positive");
  }

  template <typename F>
  void for_each_parameter(F&& f) {
    f(entity_emb);
    f(predicate_emb);
    f(w_lambda_anchor);
    f(w_lambda_hidden);
    f(w_lambda_pred);
    f(w_h);
    clstm.for_each_parameter(f);
  }

  void init(Rng& rng) {
    T re = T(1) / std::sqrt(static_cast<T>(r));
    T rd = T(1) / std::sqrt(static_cast<T>(d));
    entity_emb.init_uniform(rng, re);
    predicate_emb.init_uniform(rng, re);
    w_lambda_anchor.init_uniform(rng, re);
    w_lambda_hidden.init_uniform(rng, re);
    w_lambda_pred.init_uniform(rng, re);
    w_h.init_uniform(rng, rd);
    clstm.init(rng);
    validate();
  }

  void validate() const {
    if (readout == Readout::candidate_embedding && d != r)
      throw std::invalid_argument("candidate_embedding readout requires d == r");
    if (!(softplus_scale > T(0))) throw std::invalid_argument("softplus scale must be positive");
  }

  void zero_grads() {
    for_each_parameter([](Parameter<T>& p) { p.zero_grad(); });
  }
};

// Per-tape handle: dense weights bound as leaves exactly once, embedding
// rows gathered on demand. Valid only while both the params and the tape
// outlive it.
template <typename T>
class ModelRef {
 public:
  ModelRef(Tape<T>& tape, ModelParams<T>& params)
      : tape_(&tape),
        params_(&params),
        wa_(tape.leaf(params.w_lambda_anchor)),
        wl_(tape.leaf(params.w_lambda_hidden)),
        wp_(tape.leaf(params.w_lambda_pred)),
        wh_(tape.leaf(params.w_h)),
        clstm_(bind(tape, params.clstm)) {}

  Tape<T>& tape() const { return *tape_; }
  ModelParams<T>& params() const { return *params_; }
  const ClstmRef<T>& clstm() const { return clstm_; }
  Var<T> wa() const { return wa_; }
  Var<T> wl() const { return wl_; }
  Var<T> wp() const { return wp_; }
  Var<T> wh() const { return wh_; }

  Var<T> entity_row(std::int32_t id) { return tape_->row(params_->entity_emb, id); }
  Var<T> predicate_row(std::int32_t id) { return tape_->row(params_->predicate_emb, id); }
  Var<T> entity_rows(std::span<const std::int32_t> ids) {
    return tape_->rows(params_->entity_emb, ids);
  }

  // Whole entity table, bound lazily since only full-candidate scoring needs it.
  Var<T> all_entities() {
    if (!all_entities_) all_entities_ = tape_->leaf(params_->entity_emb);
    return *all_entities_;
  }

 private:
  Tape<T>* tape_;
  ModelParams<T>* params_;
  Var<T> wa_, wl_, wp_, wh_;
  std::optional<Var<T>> all_entities_;
  ClstmRef<T> clstm_;
};

// Element-wise mean of the neighbor embeddings.
template <typename T>
Var<T> aggregate_neighbors(ModelRef<T>& m, std::span<const std::int32_t> neighbor_ids) {
  if (neighbor_ids.empty()) throw std::invalid_argument("aggregate_neighbors: empty neighbor set");
  return mean_rows(m.entity_rows(neighbor_ids));
}

// Final cell state after replaying one query's history, plus everything the
// intensity head reuses (anchor and predicate embeddings, last event time).
template <typename T>
struct EncodedHistory {
  ClstmStateVar<T> state;
  Var<T> anchor_emb, pred_emb;
  std::optional<double> t_last;  // empty = no history
  Direction direction = Direction::subject_side;
  std::int32_t anchor = 0, predicate = 0;

  double t_last_or(double fallback) const { return t_last ? *t_last : fallback; }
};

// Replays the history: each step feeds [neighbor mean ⊕ anchor ⊕ predicate]
// into the cell at that step's timestamp. Empty history keeps the initial
// state and the no-history sentinel.
template <typename T>
EncodedHistory<T> encode_history(ModelRef<T>& m, const HistorySequence& hist) {
  EncodedHistory<T> enc;
  enc.direction = hist.direction;
  enc.anchor = hist.anchor;
  enc.predicate = hist.predicate;
  enc.anchor_emb = m.entity_row(hist.anchor);
  enc.pred_emb = m.predicate_row(hist.predicate);
  enc.state = initial_state(m.tape(), m.params().d);
  for (const TimedNeighbors& step : hist.steps) {
    Var<T> g = aggregate_neighbors(m, step.neighbors);
    Var<T> k = concat({g, enc.anchor_emb, enc.pred_emb});
    enc.state = cell_update(m.clstm(), k, enc.state, static_cast<T>(step.time));
  }
  enc.t_last = hist.t_last;
  return enc;
}

namespace detail {

template <typename T>
inline void check_query_time(const EncodedHistory<T>& enc, double t, const char* op) {
  if (enc.t_last && t < *enc.t_last)
    throw std::invalid_argument(std::string(op) + ": query precedes history");
}

}  // namespace detail

// Raw head logits for every entity as candidate: the projection of
// [anchor ⊕ W_h h(t) ⊕ predicate] dotted with each candidate embedding.
template <typename T>
Var<T> intensity_logits_all(ModelRef<T>& m, const EncodedHistory<T>& enc, double t) {
  detail::check_query_time(enc, t, "intensity_logits_all");
  Var<T> base = add(matvec(m.wa(), enc.anchor_emb), matvec(m.wp(), enc.pred_emb));
  Var<T> emb = m.all_entities();
  if (m.params().readout == Readout::output_gate) {
    Var<T> h = hidden_at(enc.state, static_cast<T>(t));
    Var<T> w = add(base, matvec(m.wl(), matvec(m.wh(), h)));
    return matvec(emb, w);
  }
  // candidate_embedding: hidden = e_c ⊙ tanh(c(t)) per candidate, so the
  // hidden block of the projection becomes a per-candidate quadratic form.
  Var<T> tc = tanh(decay_cell(enc.state, static_cast<T>(t)));
  Var<T> v = matmul(matmul(emb, m.wl()), m.wh());  // row c = (W_h^T W_l^T e_c)^T
  return add(matvec(emb, base), rowwise_dot(row_mul(emb, tc), v));
}

template <typename T>
Var<T> intensity_all(ModelRef<T>& m, const EncodedHistory<T>& enc, double t) {
  return scaled_softplus(intensity_logits_all(m, enc, t), m.params().softplus_scale);
}

template <typename T>
Var<T> log_intensity_all(ModelRef<T>& m, const EncodedHistory<T>& enc, double t) {
  return log_scaled_softplus(intensity_logits_all(m, enc, t), m.params().softplus_scale);
}

// Single-candidate head logits along a time grid, vectorized over the grid:
// the only time-dependent factor is the decayed cell, so the per-node work
// collapses to one dot product against a precomputed direction.
template <typename T>
Var<T> intensity_logits_on_grid(ModelRef<T>& m, const EncodedHistory<T>& enc,
                                std::int32_t candidate, const std::vector<T>& grid) {
  Var<T> e_c = m.entity_row(candidate);
  Var<T> base = add(matvec(m.wa(), enc.anchor_emb), matvec(m.wp(), enc.pred_emb));
  Var<T> const_part = dot(e_c, base);
  Var<T> vv = vecmat(vecmat(e_c, m.wl()), m.wh());  // W_h^T W_l^T e_c
  std::vector<T> dts(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < enc.state.t_update)
      throw std::invalid_argument("intensity_logits_on_grid: grid precedes last update");
    dts[i] = grid[i] - enc.state.t_update;
  }
  Var<T> decay = exp_neg_outer(dts, enc.state.delta);
  Var<T> cells = row_add(row_mul(decay, sub(enc.state.c_start, enc.state.c_target)),
                         enc.state.c_target);
  Var<T> weight = m.params().readout == Readout::output_gate ? enc.state.o_gate : e_c;
  Var<T> hidden = row_mul(tanh(cells), weight);
  return add(matvec(hidden, vv), broadcast(const_part, grid.size()));
}

template <typename T>
Var<T> intensity_on_grid(ModelRef<T>& m, const EncodedHistory<T>& enc, std::int32_t candidate,
                         const std::vector<T>& grid) {
  return scaled_softplus(intensity_logits_on_grid(m, enc, candidate, grid),
                         m.params().softplus_scale);
}

// Integral of the total intensity over [t_last, t]; the no-history sentinel
// and t == t_last both give an empty interval, hence zero.
template <typename T>
Var<T> survival_term(ModelRef<T>& m, const EncodedHistory<T>& enc, double t,
                     std::size_t grid_points = 20) {
  detail::check_query_time(enc, t, "survival_term");
  double t_l = enc.t_last_or(t);
  if (t == t_l) return m.tape().constant_scalar(T(0));
  if (grid_points < 2) throw std::invalid_argument("survival_term: grid_points < 2");
  std::vector<T> grid = linspace(static_cast<T>(t_l), static_cast<T>(t), grid_points);
  std::vector<Var<T>> totals;
  totals.reserve(grid_points);
  for (T node : grid) totals.push_back(sum(intensity_all(m, enc, static_cast<double>(node))));
  return trapezoid(stack(std::span<const Var<T>>(totals)), grid);
}

// log density of (candidate at t): log intensity minus the shared survival
// integral. Diagnostic; ranking orders identically by raw intensity.
template <typename T>
Var<T> link_log_density(ModelRef<T>& m, const EncodedHistory<T>& enc, std::int32_t candidate,
                        double t, std::size_t grid_points = 20) {
  Var<T> log_lambda = pick(log_intensity_all(m, enc, t), static_cast<std::size_t>(candidate));
  return sub(log_lambda, survival_term(m, enc, t, grid_points));
}

template <typename T>
Var<T> combine_time_branches(ModelRef<T>& m, Var<T> lambda_sub, Var<T> lambda_obj) {
  Var<T> s = add(lambda_sub, lambda_obj);
  return m.params().time_combine == TimeCombine::mean ? mul_scalar(s, T(0.5)) : s;
}

// Event-time intensity of a known (s, p, o) along a grid: the subject-side
// branch scores o, the object-side branch scores s, combined per config.
template <typename T>
Var<T> time_intensity_on_grid(ModelRef<T>& m, const EncodedHistory<T>& enc_sp,
                              const EncodedHistory<T>& enc_op, std::int32_t subject,
                              std::int32_t object, const std::vector<T>& grid) {
  Var<T> lambda_sub = intensity_on_grid(m, enc_sp, object, grid);
  Var<T> lambda_obj = intensity_on_grid(m, enc_op, subject, grid);
  return combine_time_branches(m, lambda_sub, lambda_obj);
}

template <typename T>
Var<T> time_intensity(ModelRef<T>& m, const EncodedHistory<T>& enc_sp,
                      const EncodedHistory<T>& enc_op, std::int32_t subject, std::int32_t object,
                      double t) {
  double t_l = std::max(enc_sp.t_last_or(0.0), enc_op.t_last_or(0.0));
  if (t < t_l) throw std::invalid_argument("time_intensity: query precedes history");
  Var<T> ls = pick(intensity_all(m, enc_sp, t), static_cast<std::size_t>(object));
  Var<T> lo = pick(intensity_all(m, enc_op, t), static_cast<std::size_t>(subject));
  return combine_time_branches(m, ls, lo);
}

template <typename T>
struct TimeDensity {
  std::vector<T> grid;     // quadrature nodes from t_last
  std::vector<T> density;  // p(t) at the nodes
  Var<T> mass;             // trapezoid of p over the grid, in (0, 1]
  Var<T> t_hat;            // expected event time (renormalized by default)
};

// p(t) = λ_t(t) · exp(−∫_{t_L}^t λ_t); t̂ = ∫ t·p / ∫ p over the truncated
// horizon. Without renormalization t̂ is the raw truncated integral.
template <typename T>
TimeDensity<T> time_density_and_expectation(ModelRef<T>& m, const EncodedHistory<T>& enc_sp,
                                            const EncodedHistory<T>& enc_op, std::int32_t subject,
                                            std::int32_t object, double horizon,
                                            std::size_t grid_points, bool renormalize = true) {
  if (!(horizon > 0.0)) throw std::invalid_argument("time horizon must be positive");
  if (grid_points < 2) throw std::invalid_argument("time grid needs at least 2 points");
  double t_l = std::max(enc_sp.t_last_or(0.0), enc_op.t_last_or(0.0));
  TimeDensity<T> out;
  out.grid = linspace(static_cast<T>(t_l), static_cast<T>(t_l + horizon), grid_points);
  Var<T> lambda = time_intensity_on_grid(m, enc_sp, enc_op, subject, object, out.grid);
  Var<T> integral = cumulative_trapezoid(lambda, out.grid);
  Var<T> p = mul(lambda, exp(neg(integral)));
  out.density = p.val().data;
  Var<T> t_nodes = m.tape().constant(Tensor<T>(Shape{out.grid.size()}, T(0)));
  m.tape().value(t_nodes).data = out.grid;
  Var<T> weighted = trapezoid(mul(p, t_nodes), out.grid);
  out.mass = trapezoid(p, out.grid);
  out.t_hat = renormalize ? div(weighted, out.mass) : weighted;
  return out;
}

}  // namespace ghnn
