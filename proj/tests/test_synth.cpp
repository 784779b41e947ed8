// Synthetic generators: exact periodic schedules, split hygiene, and
// distributional checks on the Hawkes sampler against closed-form laws.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "ghnn/synth.hpp"

using namespace ghnn;

namespace {

std::vector<Quadruple> all_events(const Dataset& ds) {
  std::vector<Quadruple> out = ds.train;
  out.insert(out.end(), ds.valid.begin(), ds.valid.end());
  out.insert(out.end(), ds.test.begin(), ds.test.end());
  return out;
}

bool same_events(const std::vector<Quadruple>& a, const std::vector<Quadruple>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].subject != b[i].subject || a[i].predicate != b[i].predicate ||
        a[i].object != b[i].object || a[i].time != b[i].time)
      return false;
  return true;
}

}  // namespace

TEST(Periodic, ExactScheduleBelowHorizon) {
  std::vector<PeriodicType> types{{0, 0, 1, 3.0, 0.0}};
  std::vector<Quadruple> events = periodic_events(types, 30.0);
  ASSERT_EQ(events.size(), 10u);
  for (std::size_t k = 0; k < events.size(); ++k) {
    EXPECT_DOUBLE_EQ(events[k].time, 3.0 * static_cast<double>(k));
    EXPECT_EQ(events[k].subject, 0);
    EXPECT_EQ(events[k].predicate, 0);
    EXPECT_EQ(events[k].object, 1);
  }
  // horizon is exclusive: an occurrence exactly at the horizon is dropped
  EXPECT_EQ(periodic_events(types, 30.0 + 1e-9).size(), 11u);
  std::vector<PeriodicType> bad{{0, 0, 1, 0.0, 0.0}};
  EXPECT_THROW(periodic_events(bad, 10.0), std::invalid_argument);
}

TEST(Periodic, InterleavedTypesComeOutTimeSorted) {
  std::vector<PeriodicType> types{{0, 0, 1, 4.0, 1.0}, {2, 1, 3, 3.0, 0.0}};
  std::vector<Quadruple> events = periodic_events(types, 13.0);
  for (std::size_t i = 1; i < events.size(); ++i)
    EXPECT_LE(events[i - 1].time, events[i].time);
  // streams with disjoint (anchor, predicate) keys never share history
  SliceIndex index{std::span<const Quadruple>(events)};
  EXPECT_FALSE(index.sequence(Direction::subject_side, 0, 0).empty());
  EXPECT_TRUE(index.sequence(Direction::subject_side, 0, 1).empty());
  EXPECT_TRUE(index.sequence(Direction::subject_side, 2, 0).empty());
  for (const TimedNeighbors& g : index.sequence(Direction::subject_side, 2, 1))
    for (std::int32_t n : g.neighbors) EXPECT_EQ(n, 3);
}

TEST(Generate, PeriodicDatasetInvariants) {
  SynthSpec spec;
  spec.n_entities = 20;
  spec.n_predicates = 2;
  spec.n_events = 600;
  spec.seed = 5;
  Dataset ds = generate(spec);
  std::vector<Quadruple> all = all_events(ds);
  double n = static_cast<double>(all.size());
  EXPECT_GE(n, 0.8 * static_cast<double>(spec.n_events));
  EXPECT_LE(n, 1.5 * static_cast<double>(spec.n_events));
  for (const Quadruple& q : all) {
    EXPECT_GE(q.subject, 0);
    EXPECT_LT(q.subject, spec.n_entities);
    EXPECT_GE(q.object, 0);
    EXPECT_LT(q.object, spec.n_entities);
    EXPECT_GE(q.predicate, 0);
    EXPECT_LT(q.predicate, spec.n_predicates);
    EXPECT_GE(q.time, 0.0);
  }
  for (const auto* split : {&ds.train, &ds.valid, &ds.test})
    for (std::size_t i = 1; i < split->size(); ++i)
      EXPECT_LE((*split)[i - 1].time, (*split)[i].time);
}

TEST(Generate, ChronologicalSplitsNeverShareTimestamps) {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 9ULL}) {
    SynthSpec spec;
    spec.n_events = 300;
    spec.seed = seed;
    Dataset ds = generate(spec);
    ASSERT_FALSE(ds.train.empty());
    double frac = static_cast<double>(ds.train.size()) / static_cast<double>(all_events(ds).size());
    EXPECT_GT(frac, 0.7);
    EXPECT_LT(frac, 0.9);
    if (!ds.valid.empty()) EXPECT_LT(ds.train.back().time, ds.valid.front().time);
    if (!ds.valid.empty() && !ds.test.empty())
      EXPECT_LT(ds.valid.back().time, ds.test.front().time);
  }
}

TEST(Generate, SameSeedSameBytes) {
  SynthSpec spec;
  spec.mode = SynthSpec::Mode::hawkes;
  spec.n_entities = 10;
  spec.n_events = 400;
  spec.seed = 77;
  Dataset a = generate(spec);
  Dataset b = generate(spec);
  EXPECT_TRUE(same_events(all_events(a), all_events(b)));
  spec.seed = 78;
  Dataset c = generate(spec);
  EXPECT_FALSE(same_events(all_events(a), all_events(c)));
}

TEST(Generate, RoundTripsThroughDatasetFiles) {
  SynthSpec spec;
  spec.n_entities = 12;
  spec.n_events = 200;
  spec.seed = 21;
  Dataset ds = generate(spec);
  auto dir = std::filesystem::temp_directory_path() / "ghnn_synth_rt";
  std::filesystem::remove_all(dir);
  save_dataset(dir, ds);
  Dataset back = load_dataset(dir);
  EXPECT_EQ(back.vocab.entity_count, ds.vocab.entity_count);
  EXPECT_EQ(back.vocab.predicate_count, ds.vocab.predicate_count);
  EXPECT_TRUE(same_events(ds.train, back.train));
  EXPECT_TRUE(same_events(ds.valid, back.valid));
  EXPECT_TRUE(same_events(ds.test, back.test));
}

TEST(Generate, RejectsBadParameters) {
  SynthSpec spec;
  spec.n_entities = 0;
  EXPECT_THROW(generate(spec), std::invalid_argument);
  spec = {};
  spec.mode = SynthSpec::Mode::hawkes;
  spec.alpha = 1.0;
  spec.beta = 1.0;  // branching ratio 1: supercritical, would never terminate
  EXPECT_THROW(generate(spec), std::invalid_argument);
  spec = {};
  spec.mode = SynthSpec::Mode::hawkes;
  spec.mu = 0.0;
  EXPECT_THROW(generate(spec), std::invalid_argument);
  spec = {};
  spec.tick = 0.0;
  EXPECT_THROW(generate(spec), std::invalid_argument);
  Rng rng(1);
  EXPECT_THROW(simulate_hawkes_times(1.0, 0.5, 0.0, 10.0, rng), std::invalid_argument);
  EXPECT_THROW(simulate_hawkes_times(1.0, 0.5, 1.0, 0.0, rng), std::invalid_argument);
}

TEST(Hawkes, NoExcitationReducesToPoisson) {
  // alpha = 0: inter-arrival times are iid Exponential(mu). Kolmogorov-
  // Smirnov against the closed-form CDF at the 1% level.
  double mu = 2.0;
  Rng rng(101);
  std::vector<double> times = simulate_hawkes_times(mu, 0.0, 1.0, 6000.0, rng);
  ASSERT_GT(times.size(), 10000u);
  std::vector<double> gaps;
  gaps.push_back(times.front());
  for (std::size_t i = 1; i < times.size(); ++i) gaps.push_back(times[i] - times[i - 1]);
  std::sort(gaps.begin(), gaps.end());
  double n = static_cast<double>(gaps.size());
  double d_stat = 0.0;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    double cdf = 1.0 - std::exp(-mu * gaps[i]);
    double lo = static_cast<double>(i) / n, hi = static_cast<double>(i + 1) / n;
    d_stat = std::max({d_stat, std::abs(cdf - lo), std::abs(cdf - hi)});
  }
  EXPECT_LT(d_stat, 1.628 / std::sqrt(n));
  double mean_gap = times.back() / n;
  EXPECT_NEAR(mean_gap, 1.0 / mu, 0.05 / mu);
}

TEST(Hawkes, LongRunRateMatchesStationaryFormula) {
  // branching ratio alpha/beta = 0.4 gives rate mu / (1 - 0.4) = 5/6
  double mu = 0.5, alpha = 0.4, beta = 1.0, horizon = 20000.0;
  Rng rng(55);
  std::vector<double> times = simulate_hawkes_times(mu, alpha, beta, horizon, rng);
  double rate = static_cast<double>(times.size()) / horizon;
  EXPECT_NEAR(rate, mu / (1.0 - alpha / beta), 0.05 * mu / (1.0 - alpha / beta));
  for (std::size_t i = 1; i < times.size(); ++i) EXPECT_LT(times[i - 1], times[i]);
  EXPECT_LE(times.back(), horizon);
}

TEST(Hawkes, ExcitationRaisesShortGapFrequency) {
  // self-excitation clusters events: the fraction of gaps under 0.25 must
  // exceed the Poisson fraction at the same long-run rate
  Rng r1(7), r2(7);
  std::vector<double> hk = simulate_hawkes_times(0.5, 0.8, 2.0, 20000.0, r1);
  double rate = static_cast<double>(hk.size()) / 20000.0;
  std::vector<double> ps = simulate_hawkes_times(rate, 0.0, 1.0, 20000.0, r2);
  auto short_frac = [](const std::vector<double>& ts) {
    std::size_t c = 0;
    for (std::size_t i = 1; i < ts.size(); ++i) c += (ts[i] - ts[i - 1]) < 0.25;
    return static_cast<double>(c) / static_cast<double>(ts.size() - 1);
  };
  EXPECT_GT(short_frac(hk), short_frac(ps) * 1.1);
}

TEST(Hawkes, DatasetTimesLandOnTicks) {
  SynthSpec spec;
  spec.mode = SynthSpec::Mode::hawkes;
  spec.n_entities = 8;
  spec.n_events = 300;
  spec.tick = 2.0;
  spec.seed = 31;
  Dataset ds = generate(spec);
  for (const Quadruple& q : all_events(ds)) {
    EXPECT_DOUBLE_EQ(std::fmod(q.time, 2.0), 0.0);
    EXPECT_GE(q.time, 0.0);
  }
  EXPECT_GT(all_events(ds).size(), 0u);
}
