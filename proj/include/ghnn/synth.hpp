#pragma once
// Synthetic temporal-KG fixtures with known ground truth: fixed-period
// recurring facts, and univariate Hawkes streams sampled by Ogata thinning.
// Both emit datasets that satisfy every store invariant and round-trip
// through the loader unchanged.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ghnn/common.hpp"
#include "ghnn/dataset.hpp"
#include "ghnn/rng.hpp"

namespace ghnn {

struct SynthSpec {
  enum class Mode { periodic, hawkes };
  Mode mode = Mode::periodic;
  std::int32_t n_entities = 20;
  std::int32_t n_predicates = 2;
  std::size_t n_events = 600;  // approximate total across all types
  std::size_t n_types = 0;     // recurring (s,p,o) patterns; 0 = n_entities
  std::uint64_t seed = 1;
  // hawkes mode: intensity mu + alpha * sum exp(-beta * (t - t_k)) per type
  double mu = 0.5;
  double alpha = 0.4;
  double beta = 1.0;
  double tick = 1.0;  // timestamp discretization step

  void validate() const {
    if (n_entities <= 0 || n_predicates <= 0 || n_events == 0)
      throw std::invalid_argument("synth: counts must be positive");
    if (mode == Mode::hawkes) {
      if (!(mu > 0) || alpha < 0 || !(beta > 0))
        throw std::invalid_argument("synth: need mu > 0, alpha >= 0, beta > 0");
      if (!(alpha / beta < 1.0))
        throw std::invalid_argument("synth: unstable parameters (alpha/beta >= 1)");
    }
    if (!(tick > 0)) throw std::invalid_argument("synth: tick must be positive");
  }
};

struct PeriodicType {
  std::int32_t subject = 0, predicate = 0, object = 0;
  double period = 1.0;
  double phase = 0.0;
};

// Every occurrence phase + k*period strictly below the horizon.
inline std::vector<Quadruple> periodic_events(std::span<const PeriodicType> types,
                                              double horizon) {
  std::vector<Quadruple> events;
  for (const PeriodicType& ty : types) {
    if (!(ty.period > 0)) throw std::invalid_argument("periodic type needs positive period");
    for (double t = ty.phase; t < horizon; t += ty.period)
      events.push_back({ty.subject, ty.predicate, ty.object, t});
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });
  return events;
}

// One Hawkes stream by Ogata thinning. The dominating rate from any point
// is the current intensity (the kernel only decays until the next arrival),
// so the acceptance ratio never exceeds 1.
inline std::vector<double> simulate_hawkes_times(double mu, double alpha, double beta,
                                                 double horizon, Rng& rng) {
  if (!(mu > 0) || alpha < 0 || !(beta > 0) || !(horizon > 0))
    throw std::invalid_argument("simulate_hawkes_times: bad parameters");
  std::vector<double> times;
  double t = 0.0;
  double excitation = 0.0;  // sum of exp(-beta*(t - t_k)) over past events
  while (true) {
    double bound = mu + alpha * excitation;
    double w = rng.exponential(bound);
    double t_next = t + w;
    if (t_next > horizon) break;
    double excitation_next = excitation * std::exp(-beta * w);
    double lambda = mu + alpha * excitation_next;
    t = t_next;
    excitation = excitation_next;
    if (rng.uniform() * bound <= lambda) {
      times.push_back(t);
      excitation += 1.0;
    }
  }
  return times;
}

namespace detail {

// Chronological 80/10/10 split; cuts only at slice boundaries so one
// timestamp never straddles two splits.
inline void chronological_split(std::vector<Quadruple> events, Dataset& ds) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });
  auto cut_at = [&](std::size_t target) {
    std::size_t i = std::min(target, events.size());
    while (i > 0 && i < events.size() && events[i].time == events[i - 1].time) ++i;
    return i;
  };
  std::size_t c1 = cut_at(events.size() * 8 / 10);
  std::size_t c2 = std::max(c1, cut_at(events.size() * 9 / 10));
  ds.train.assign(events.begin(), events.begin() + static_cast<std::ptrdiff_t>(c1));
  ds.valid.assign(events.begin() + static_cast<std::ptrdiff_t>(c1),
                  events.begin() + static_cast<std::ptrdiff_t>(c2));
  ds.test.assign(events.begin() + static_cast<std::ptrdiff_t>(c2), events.end());
}

// Deterministic draw of (s,p,o) pattern heads; o differs from s whenever
// there are at least two entities.
inline std::vector<PeriodicType> draw_types(const SynthSpec& spec, Rng& rng) {
  std::size_t n_types = spec.n_types ? spec.n_types : static_cast<std::size_t>(spec.n_entities);
  std::vector<PeriodicType> types(n_types);
  for (auto& ty : types) {
    ty.subject = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.n_entities)));
    ty.predicate =
        static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.n_predicates)));
    do {
      ty.object = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.n_entities)));
    } while (spec.n_entities > 1 && ty.object == ty.subject);
  }
  return types;
}

}  // namespace detail

inline Dataset generate_periodic(const SynthSpec& spec) {
  spec.validate();
  if (spec.mode != SynthSpec::Mode::periodic)
    throw std::invalid_argument("generate_periodic: wrong mode");
  Rng rng(spec.seed);
  std::vector<PeriodicType> types = detail::draw_types(spec, rng);
  double inv_period_sum = 0.0;
  for (auto& ty : types) {
    ty.period = static_cast<double>(2 + rng.below(8));  // periods 2..9 ticks
    ty.phase = static_cast<double>(rng.below(static_cast<std::uint64_t>(ty.period)));
    inv_period_sum += 1.0 / ty.period;
  }
  double horizon = std::ceil(static_cast<double>(spec.n_events) / inv_period_sum);
  Dataset ds;
  ds.vocab.entity_count = spec.n_entities;
  ds.vocab.predicate_count = spec.n_predicates;
  detail::chronological_split(periodic_events(types, horizon), ds);
  return ds;
}

inline Dataset generate_hawkes(const SynthSpec& spec) {
  spec.validate();
  if (spec.mode != SynthSpec::Mode::hawkes)
    throw std::invalid_argument("generate_hawkes: wrong mode");
  Rng rng(spec.seed);
  std::vector<PeriodicType> types = detail::draw_types(spec, rng);
  double stationary_rate = spec.mu / (1.0 - spec.alpha / spec.beta);
  double horizon = static_cast<double>(spec.n_events) /
                   (static_cast<double>(types.size()) * stationary_rate);
  horizon = std::max(horizon, spec.tick);
  std::vector<Quadruple> events;
  for (const PeriodicType& ty : types) {
    Rng stream_rng(rng.fork());
    for (double t : simulate_hawkes_times(spec.mu, spec.alpha, spec.beta, horizon, stream_rng)) {
      double slotted = std::floor(t / spec.tick) * spec.tick;
      events.push_back({ty.subject, ty.predicate, ty.object, slotted});
    }
  }
  Dataset ds;
  ds.vocab.entity_count = spec.n_entities;
  ds.vocab.predicate_count = spec.n_predicates;
  detail::chronological_split(std::move(events), ds);
  return ds;
}

inline Dataset generate(const SynthSpec& spec) {
  return spec.mode == SynthSpec::Mode::periodic ? generate_periodic(spec) : generate_hawkes(spec);
}

}  // namespace ghnn
