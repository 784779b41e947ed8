// Ranking with mean ties, filtering protocols, metric aggregation, and the
// end-to-end evaluation loop with a score-capture rerank oracle.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "ghnn/evaluation.hpp"
#include "ghnn/rng.hpp"
#include "ghnn/synth.hpp"

using namespace ghnn;

namespace {

// Brute-force mean-tie rank over unmasked candidates.
double brute_rank(const std::vector<double>& scores, std::int32_t truth,
                  const std::vector<std::uint8_t>& mask) {
  double st = scores[static_cast<std::size_t>(truth)];
  int above = 0, ties = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (!mask.empty() && mask[c]) continue;
    if (scores[c] > st) ++above;
    if (scores[c] == st) ++ties;
  }
  return above + (ties + 1) / 2.0;
}

Dataset tiny_synth(std::uint64_t seed = 2) {
  SynthSpec spec;
  spec.n_entities = 8;
  spec.n_predicates = 2;
  spec.n_events = 120;
  spec.seed = seed;
  return generate(spec);
}

}  // namespace

TEST(RankWithTies, WorkedExample) {
  std::vector<double> scores{0.9, 0.5, 0.5, 0.1};
  EXPECT_DOUBLE_EQ(rank_with_ties(std::span<const double>(scores), 1, {}), 2.5);
}

TEST(RankWithTies, FullTieGivesMeanRank) {
  std::vector<double> scores(10, 0.25);
  EXPECT_DOUBLE_EQ(rank_with_ties(std::span<const double>(scores), 7, {}), 5.5);
}

TEST(RankWithTies, MaskedTruthThrows) {
  std::vector<double> scores{1.0, 2.0};
  std::vector<std::uint8_t> mask{1, 0};
  EXPECT_THROW(rank_with_ties(std::span<const double>(scores), 0,
                              std::span<const std::uint8_t>(mask)),
               std::invalid_argument);
}

TEST(RankWithTies, MatchesBruteForceWithRandomMasks) {
  Rng rng(51);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t n = 2 + rng.below(20);
    std::vector<double> scores(n);
    for (auto& s : scores) s = static_cast<double>(rng.below(6));  // force ties
    std::vector<std::uint8_t> mask(n, 0);
    for (auto& m : mask) m = rng.below(3) == 0;
    auto truth = static_cast<std::int32_t>(rng.below(n));
    mask[static_cast<std::size_t>(truth)] = 0;
    double got = rank_with_ties(std::span<const double>(scores), truth,
                                std::span<const std::uint8_t>(mask));
    EXPECT_DOUBLE_EQ(got, brute_rank(scores, truth, mask));
    EXPECT_GE(got, 1.0);
    EXPECT_LE(got, static_cast<double>(n));
  }
}

TEST(FilterMask, HistoricalFactExcludedOnlyUnderStatic) {
  // entities: 0=person, 1=country A, 2=country B; predicate 0=visit.
  // (0, visit, 1) holds at t=18 only; at query time t=25 the truth is 2.
  Dataset ds;
  ds.vocab.entity_count = 3;
  ds.vocab.predicate_count = 1;
  ds.train = {{0, 0, 1, 18.0}};
  ds.test = {{0, 0, 2, 25.0}};
  FilterIndex idx(ds);
  auto raw = build_filter_mask(idx, Protocol::raw, Direction::subject_side, 0, 0, 2, 25.0, 3);
  auto stat =
      build_filter_mask(idx, Protocol::static_filter, Direction::subject_side, 0, 0, 2, 25.0, 3);
  auto aware =
      build_filter_mask(idx, Protocol::time_aware, Direction::subject_side, 0, 0, 2, 25.0, 3);
  EXPECT_TRUE(raw.empty() || std::count(raw.begin(), raw.end(), 1) == 0);
  EXPECT_EQ(stat[1], 1);   // earlier visit filtered under static
  EXPECT_EQ(aware[1], 0);  // not valid at t=25, so it stays a competitor
  EXPECT_EQ(stat[2], 0);   // truth never masked
  EXPECT_EQ(aware[2], 0);
}

TEST(FilterMask, NoSharedFactsMeansEmptyMasks) {
  Dataset ds;
  ds.vocab.entity_count = 4;
  ds.vocab.predicate_count = 2;
  ds.train = {{0, 0, 1, 1.0}, {2, 1, 3, 2.0}};
  ds.test = {{0, 0, 1, 5.0}};
  FilterIndex idx(ds);
  for (auto proto : {Protocol::raw, Protocol::static_filter, Protocol::time_aware}) {
    auto mask = build_filter_mask(idx, proto, Direction::object_side, 3, 0, 0, 5.0, 4);
    EXPECT_EQ(std::count(mask.begin(), mask.end(), 1), 0);
  }
}

TEST(FilterMask, MatchesBruteForceScan) {
  Rng rng(52);
  Dataset ds;
  ds.vocab.entity_count = 6;
  ds.vocab.predicate_count = 2;
  auto fill = [&](std::vector<Quadruple>& v, int n) {
    for (int i = 0; i < n; ++i)
      v.push_back({static_cast<std::int32_t>(rng.below(6)), static_cast<std::int32_t>(rng.below(2)),
                   static_cast<std::int32_t>(rng.below(6)), static_cast<double>(rng.below(6))});
    std::stable_sort(v.begin(), v.end(),
                     [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });
  };
  fill(ds.train, 60);
  fill(ds.valid, 10);
  fill(ds.test, 10);
  FilterIndex idx(ds);
  std::vector<Quadruple> all = ds.train;
  all.insert(all.end(), ds.valid.begin(), ds.valid.end());
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  for (int trial = 0; trial < 300; ++trial) {
    auto anchor = static_cast<std::int32_t>(rng.below(6));
    auto pred = static_cast<std::int32_t>(rng.below(2));
    auto truth = static_cast<std::int32_t>(rng.below(6));
    double t = static_cast<double>(rng.below(7));
    Direction d = rng.below(2) ? Direction::object_side : Direction::subject_side;
    auto proto = static_cast<Protocol>(rng.below(3));
    auto mask = build_filter_mask(idx, proto, d, anchor, pred, truth, t, 6);
    for (std::int32_t c = 0; c < 6; ++c) {
      bool want = false;
      if (proto != Protocol::raw && c != truth) {
        for (const auto& q : all) {
          bool m = d == Direction::subject_side
                       ? (q.subject == anchor && q.predicate == pred && q.object == c)
                       : (q.object == anchor && q.predicate == pred && q.subject == c);
          if (m && (proto == Protocol::static_filter || q.time == t)) want = true;
        }
      }
      EXPECT_EQ(mask.empty() ? 0 : mask[static_cast<std::size_t>(c)], want ? 1 : 0)
          << "proto=" << static_cast<int>(proto) << " c=" << c;
    }
  }
}

TEST(Aggregate, LinkWorkedExample) {
  std::vector<double> ranks{1.0, 2.0};
  LinkMetrics m = aggregate_link(ranks);
  EXPECT_DOUBLE_EQ(m.mrr, 0.75);
  EXPECT_DOUBLE_EQ(m.hits1, 0.5);
  EXPECT_DOUBLE_EQ(m.hits3, 1.0);
  EXPECT_EQ(m.count, 2u);
  std::vector<double> empty;
  EXPECT_THROW(aggregate_link(empty), std::invalid_argument);
}

TEST(Aggregate, OracleRanksGivePerfectMetrics) {
  std::vector<double> ranks(50, 1.0);
  LinkMetrics m = aggregate_link(ranks);
  EXPECT_DOUBLE_EQ(m.mrr, 1.0);
  EXPECT_DOUBLE_EQ(m.hits1, 1.0);
  EXPECT_DOUBLE_EQ(m.hits10, 1.0);
}

TEST(Aggregate, TimeWorkedExampleWithStrictThreshold) {
  std::vector<double> errs{0.5, 3.0, 20.0};
  std::vector<double> ks{10.0};
  TimeMetrics m = aggregate_time(errs, ks);
  EXPECT_NEAR(m.mae, 7.8333, 1e-3);
  EXPECT_DOUBLE_EQ(m.chits[0], 2.0 / 3.0);
  // strict inequality: an error exactly at the threshold does not count
  std::vector<double> edge{10.0};
  EXPECT_DOUBLE_EQ(aggregate_time(edge, ks).chits[0], 0.0);
}

TEST(Aggregate, HitsMonotoneInK) {
  Rng rng(53);
  std::vector<double> ranks;
  for (int i = 0; i < 200; ++i) ranks.push_back(1.0 + static_cast<double>(rng.below(30)));
  LinkMetrics m = aggregate_link(ranks);
  EXPECT_LE(m.hits1, m.hits3);
  EXPECT_LE(m.hits3, m.hits10);
  EXPECT_GT(m.mrr, 0.0);
  EXPECT_LE(m.mrr, 1.0);
}

TEST(Evaluate, ConstantScoresGiveFullTieClosedForm) {
  Dataset ds = tiny_synth();
  ModelParams<float> params(static_cast<std::size_t>(ds.vocab.entity_count),
                            static_cast<std::size_t>(ds.vocab.predicate_count), 4, 4);
  EvalConfig cfg;
  cfg.protocol = Protocol::raw;
  cfg.with_time = false;
  cfg.threads = 1;
  EvalReport rep = evaluate(params, ds, cfg);
  double n = static_cast<double>(ds.vocab.entity_count);
  EXPECT_NEAR(rep.link.mrr, 1.0 / ((n + 1) / 2.0), 1e-12);
  for (const auto& q : rep.queries) EXPECT_DOUBLE_EQ(q.rank, (n + 1) / 2.0);
}

TEST(Evaluate, RerankOracleReproducesAggregates) {
  Dataset ds = tiny_synth(5);
  ModelParams<float> params(static_cast<std::size_t>(ds.vocab.entity_count),
                            static_cast<std::size_t>(ds.vocab.predicate_count), 6, 6);
  Rng rng(3);
  params.init(rng);
  for (auto proto : {Protocol::raw, Protocol::static_filter, Protocol::time_aware}) {
    EvalConfig cfg;
    cfg.protocol = proto;
    cfg.with_time = false;
    cfg.threads = 2;
    std::mutex mu;
    std::map<std::pair<std::size_t, int>, std::vector<float>> captured;
    EvalReport rep = evaluate<float>(params, ds, cfg,
                                     [&](std::size_t qi, Direction d, const std::vector<float>& s) {
                                       std::lock_guard<std::mutex> lock(mu);
                                       captured[{qi, static_cast<int>(d)}] = s;
                                     });
    FilterIndex filters(ds);
    std::vector<double> reranked;
    for (std::size_t qi = 0; qi < ds.test.size(); ++qi) {
      const Quadruple& q = ds.test[qi];
      for (auto [d, anchor, truth] :
           {std::tuple{Direction::subject_side, q.subject, q.object},
            std::tuple{Direction::object_side, q.object, q.subject}}) {
        const auto& scores = captured.at({qi, static_cast<int>(d)});
        std::vector<double> sd(scores.begin(), scores.end());
        auto mask = build_filter_mask(filters, proto, d, anchor, q.predicate, truth, q.time,
                                      params.num_entities);
        reranked.push_back(brute_rank(sd, truth, mask));
      }
    }
    LinkMetrics m = aggregate_link(reranked);
    EXPECT_DOUBLE_EQ(m.mrr, rep.link.mrr) << to_string(proto);
    EXPECT_DOUBLE_EQ(m.hits1, rep.link.hits1);
    EXPECT_DOUBLE_EQ(m.hits3, rep.link.hits3);
    EXPECT_DOUBLE_EQ(m.hits10, rep.link.hits10);
  }
}

TEST(Evaluate, FilteredRanksNeverWorseThanRaw) {
  Dataset ds = tiny_synth(7);
  ModelParams<float> params(static_cast<std::size_t>(ds.vocab.entity_count),
                            static_cast<std::size_t>(ds.vocab.predicate_count), 6, 6);
  Rng rng(8);
  params.init(rng);
  EvalConfig cfg;
  cfg.with_time = false;
  cfg.threads = 1;
  cfg.protocol = Protocol::raw;
  EvalReport raw = evaluate(params, ds, cfg);
  cfg.protocol = Protocol::static_filter;
  EvalReport stat = evaluate(params, ds, cfg);
  cfg.protocol = Protocol::time_aware;
  EvalReport aware = evaluate(params, ds, cfg);
  for (std::size_t i = 0; i < raw.queries.size(); ++i) {
    EXPECT_LE(stat.queries[i].rank, raw.queries[i].rank);
    EXPECT_LE(aware.queries[i].rank, raw.queries[i].rank);
  }
  EXPECT_GE(aware.link.mrr, raw.link.mrr);
}

TEST(Evaluate, DeterministicAndThreadCountInvariant) {
  Dataset ds = tiny_synth(9);
  ModelParams<float> params(static_cast<std::size_t>(ds.vocab.entity_count),
                            static_cast<std::size_t>(ds.vocab.predicate_count), 5, 5);
  Rng rng(10);
  params.init(rng);
  EvalConfig cfg;
  cfg.threads = 1;
  cfg.grid_points = 64;
  EvalReport a = evaluate(params, ds, cfg);
  cfg.threads = 3;
  EvalReport b = evaluate(params, ds, cfg);
  ASSERT_EQ(a.queries.size(), b.queries.size());
  for (std::size_t i = 0; i < a.queries.size(); ++i)
    EXPECT_EQ(a.queries[i].rank, b.queries[i].rank);
  ASSERT_TRUE(a.time && b.time);
  EXPECT_EQ(a.time->mae, b.time->mae);
}

TEST(Evaluate, PerDirectionBreakdownIsConsistent) {
  Dataset ds = tiny_synth(11);
  ModelParams<float> params(static_cast<std::size_t>(ds.vocab.entity_count),
                            static_cast<std::size_t>(ds.vocab.predicate_count), 5, 5);
  Rng rng(12);
  params.init(rng);
  EvalConfig cfg;
  cfg.with_time = false;
  cfg.threads = 1;
  EvalReport rep = evaluate(params, ds, cfg);
  EXPECT_EQ(rep.link_subject_queries.count + rep.link_object_queries.count, rep.link.count);
  double total = rep.link_subject_queries.mrr * static_cast<double>(rep.link_subject_queries.count) +
                 rep.link_object_queries.mrr * static_cast<double>(rep.link_object_queries.count);
  EXPECT_NEAR(total / static_cast<double>(rep.link.count), rep.link.mrr, 1e-12);
}

TEST(Evaluate, TimeMetricsUseDefaultHorizonFromTrainSplit) {
  Dataset ds = tiny_synth(13);
  ModelParams<float> params(static_cast<std::size_t>(ds.vocab.entity_count),
                            static_cast<std::size_t>(ds.vocab.predicate_count), 5, 5);
  Rng rng(14);
  params.init(rng);
  EvalConfig cfg;
  cfg.threads = 1;
  cfg.grid_points = 64;
  cfg.horizon = 0.0;  // resolved internally
  EvalReport auto_h = evaluate(params, ds, cfg);
  cfg.horizon = max_inter_occurrence_gap(ds.train);
  EvalReport explicit_h = evaluate(params, ds, cfg);
  ASSERT_TRUE(auto_h.time && explicit_h.time);
  EXPECT_EQ(auto_h.time->mae, explicit_h.time->mae);
  EXPECT_GE(auto_h.time->mae, 0.0);
  for (std::size_t i = 0; i + 1 < auto_h.time->chits.size(); ++i)
    EXPECT_LE(auto_h.time->chits[i], auto_h.time->chits[i + 1]);
}

TEST(Report, FormatContainsEveryMetricKey) {
  Dataset ds = tiny_synth(15);
  ModelParams<float> params(static_cast<std::size_t>(ds.vocab.entity_count),
                            static_cast<std::size_t>(ds.vocab.predicate_count), 4, 4);
  EvalConfig cfg;
  cfg.threads = 1;
  cfg.grid_points = 32;
  EvalReport rep = evaluate(params, ds, cfg);
  std::string text = format_metric_report(rep);
  for (const char* key : {"[report]", "split", "protocol", "queries", "mrr", "hits1", "hits3",
                          "hits10", "mrr_subject_queries", "mrr_object_queries", "mae", "chits1",
                          "chits3", "chits10"})
    EXPECT_NE(text.find(key), std::string::npos) << key << "\n" << text;
}

TEST(Report, QueryDumpRoundTripsAggregates) {
  Dataset ds = tiny_synth(16);
  ModelParams<float> params(static_cast<std::size_t>(ds.vocab.entity_count),
                            static_cast<std::size_t>(ds.vocab.predicate_count), 4, 4);
  Rng rng(17);
  params.init(rng);
  EvalConfig cfg;
  cfg.threads = 1;
  cfg.grid_points = 32;
  EvalReport rep = evaluate(params, ds, cfg);
  auto path = std::filesystem::temp_directory_path() / "ghnn_eval_dump.tsv";
  write_query_dump(path.string(), rep);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_NE(header.find("rank"), std::string::npos);
  std::vector<double> ranks;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    ASSERT_GE(cells.size(), 7u);
    ranks.push_back(std::stod(cells[6]));
  }
  ASSERT_EQ(ranks.size(), rep.queries.size());
  EXPECT_NEAR(aggregate_link(ranks).mrr, rep.link.mrr, 1e-9);
}

TEST(Protocol, StringRoundTrip) {
  EXPECT_EQ(protocol_from_string("raw"), Protocol::raw);
  EXPECT_EQ(protocol_from_string("static"), Protocol::static_filter);
  EXPECT_EQ(protocol_from_string("time-aware"), Protocol::time_aware);
  EXPECT_EQ(protocol_from_string("time_aware"), Protocol::time_aware);
  EXPECT_THROW(protocol_from_string("bogus"), std::invalid_argument);
  EXPECT_STREQ(to_string(Protocol::time_aware), "time-aware");
}
