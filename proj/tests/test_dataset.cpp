// Dataset ingestion, slice indexing, history extraction, and the
// inter-occurrence gap statistics.

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ghnn/dataset.hpp"
#include "ghnn/rng.hpp"

namespace fs = std::filesystem;
using namespace ghnn;

namespace {

fs::path make_dataset_dir(const char* tag, const std::string& stat, const std::string& train,
                          const std::string& valid = "", const std::string& test = "") {
  fs::path dir = fs::temp_directory_path() / (std::string("ghnn_ds_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream f(dir / name);
    f << text;
  };
  put("stat.txt", stat);
  put("train.txt", train);
  put("valid.txt", valid);
  put("test.txt", test);
  return dir;
}

std::vector<Quadruple> random_events(Rng& rng, int n, int n_ent, int n_pred, int t_max) {
  std::vector<Quadruple> ev;
  for (int i = 0; i < n; ++i) {
    Quadruple q;
    q.subject = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_ent)));
    q.predicate = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_pred)));
    q.object = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(n_ent)));
    q.time = static_cast<double>(rng.below(static_cast<std::uint64_t>(t_max)));
    ev.push_back(q);
  }
  std::stable_sort(ev.begin(), ev.end(),
                   [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });
  return ev;
}

// Brute-force neighbor scan used as the oracle for SliceIndex.
std::vector<std::int32_t> brute_neighbors(const std::vector<Quadruple>& ev, Direction d,
                                          std::int32_t anchor, std::int32_t pred, double t) {
  std::set<std::int32_t> out;
  for (const auto& q : ev) {
    if (q.time != t || q.predicate != pred) continue;
    if (d == Direction::subject_side && q.subject == anchor) out.insert(q.object);
    if (d == Direction::object_side && q.object == anchor) out.insert(q.subject);
  }
  return {out.begin(), out.end()};
}

}  // namespace

TEST(LoadDataset, TimeScaleExample) {
  auto dir = make_dataset_dir("scale", "3 2\n", "0 0 1 0\n2 1 0 24\n0 0 2 24\n");
  Dataset ds = load_dataset(dir, 1.0 / 24.0);
  ASSERT_EQ(ds.train.size(), 3u);
  EXPECT_DOUBLE_EQ(ds.train[0].time, 0.0);
  EXPECT_DOUBLE_EQ(ds.train[1].time, 1.0);
  EXPECT_DOUBLE_EQ(ds.train[2].time, 1.0);
  EXPECT_EQ(ds.vocab.entity_count, 3);
  EXPECT_EQ(ds.vocab.predicate_count, 2);
}

TEST(LoadDataset, EmptyTrainSplitIsValid) {
  auto dir = make_dataset_dir("empty", "4 1\n", "", "0 0 1 5\n", "");
  Dataset ds = load_dataset(dir);
  EXPECT_TRUE(ds.train.empty());
  EXPECT_EQ(ds.valid.size(), 1u);
  EXPECT_EQ(ds.vocab.entity_count, 4);
}

TEST(LoadDataset, SortsStablyByTime) {
  auto dir = make_dataset_dir("sort", "5 1\n", "3 0 4 9\n0 0 1 2\n1 0 2 9\n2 0 3 1\n");
  Dataset ds = load_dataset(dir);
  ASSERT_EQ(ds.train.size(), 4u);
  EXPECT_DOUBLE_EQ(ds.train[0].time, 1.0);
  EXPECT_DOUBLE_EQ(ds.train[1].time, 2.0);
  // equal timestamps keep file order: (3,0,4) before (1,0,2)
  EXPECT_EQ(ds.train[2].subject, 3);
  EXPECT_EQ(ds.train[3].subject, 1);
}

TEST(LoadDataset, ErrorsArePreciseAndTyped) {
  auto miss = fs::temp_directory_path() / "ghnn_ds_missing";
  fs::remove_all(miss);
  EXPECT_THROW(load_dataset(miss), data_error);

  auto bad_id = make_dataset_dir("badid", "2 1\n", "0 0 5 1\n");
  EXPECT_THROW(load_dataset(bad_id), data_error);

  auto neg_t = make_dataset_dir("negt", "2 1\n", "0 0 1 -3\n");
  EXPECT_THROW(load_dataset(neg_t), data_error);

  auto non_int = make_dataset_dir("nonint", "2 1\n", "0 0 one 1\n");
  try {
    load_dataset(non_int);
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("train.txt"), std::string::npos);
    EXPECT_NE(msg.find(":1"), std::string::npos);
  }

  auto bad_stat = make_dataset_dir("badstat", "0 1\n", "");
  EXPECT_THROW(load_dataset(bad_stat), data_error);
}

TEST(LoadDataset, OptionalNameFiles) {
  auto dir = make_dataset_dir("names", "2 1\n", "0 0 1 3\n");
  {
    std::ofstream e(dir / "entity2id.txt");
    e << "alice\t0\nbob\t1\n";
    std::ofstream r(dir / "relation2id.txt");
    r << "0\tknows\n";
  }
  Dataset ds = load_dataset(dir);
  ASSERT_EQ(ds.vocab.entity_names.size(), 2u);
  EXPECT_EQ(ds.vocab.entity_names[0], "alice");
  EXPECT_EQ(ds.vocab.entity_names[1], "bob");
  EXPECT_EQ(ds.vocab.predicate_names[0], "knows");
}

TEST(SaveDataset, RoundTripPreservesSplitsAndHistories) {
  Rng rng(71);
  Dataset ds;
  ds.vocab.entity_count = 6;
  ds.vocab.predicate_count = 3;
  ds.train = random_events(rng, 40, 6, 3, 12);
  ds.valid = random_events(rng, 6, 6, 3, 12);
  ds.test = random_events(rng, 6, 6, 3, 12);
  fs::path dir = fs::temp_directory_path() / "ghnn_ds_rt";
  fs::remove_all(dir);
  save_dataset(dir, ds);
  Dataset back = load_dataset(dir);
  ASSERT_EQ(back.train.size(), ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) EXPECT_TRUE(back.train[i] == ds.train[i]);
  SliceIndex a{std::span<const Quadruple>(ds.train)};
  SliceIndex b{std::span<const Quadruple>(back.train)};
  for (std::int32_t e = 0; e < 6; ++e)
    for (std::int32_t p = 0; p < 3; ++p)
      for (auto dir2 : {Direction::subject_side, Direction::object_side}) {
        HistorySequence ha = a.history_for(dir2, e, p, 12.5, 10);
        HistorySequence hb = b.history_for(dir2, e, p, 12.5, 10);
        ASSERT_EQ(ha.steps.size(), hb.steps.size());
        for (std::size_t i = 0; i < ha.steps.size(); ++i) {
          EXPECT_EQ(ha.steps[i].time, hb.steps[i].time);
          EXPECT_EQ(ha.steps[i].neighbors, hb.steps[i].neighbors);
        }
      }
}

TEST(SliceIndex, GroupsNeighborsByTimestamp) {
  // events {(a,r,b,1),(a,r,c,1),(a,r,d,2)} with a=0,b=1,c=2,d=3,r=0
  std::vector<Quadruple> ev{{0, 0, 1, 1.0}, {0, 0, 2, 1.0}, {0, 0, 3, 2.0}};
  SliceIndex idx{std::span<const Quadruple>(ev)};
  auto seq = idx.sequence(Direction::subject_side, 0, 0);
  ASSERT_EQ(seq.size(), 2u);
  EXPECT_DOUBLE_EQ(seq[0].time, 1.0);
  EXPECT_EQ(seq[0].neighbors, (std::vector<std::int32_t>{1, 2}));
  EXPECT_DOUBLE_EQ(seq[1].time, 2.0);
  EXPECT_EQ(seq[1].neighbors, (std::vector<std::int32_t>{3}));
  // absent key: O_5(a,r) via history at t>5 has nothing at t=5
  HistorySequence h = idx.history_for(Direction::subject_side, 1, 0, 9.0, 10);
  EXPECT_TRUE(h.empty());
  EXPECT_FALSE(h.t_last.has_value());
}

TEST(SliceIndex, MatchesBruteForceScan) {
  Rng rng(72);
  auto ev = random_events(rng, 50, 5, 2, 8);
  SliceIndex idx{std::span<const Quadruple>(ev)};
  for (std::int32_t anchor = 0; anchor < 5; ++anchor)
    for (std::int32_t pred = 0; pred < 2; ++pred)
      for (auto d : {Direction::subject_side, Direction::object_side}) {
        auto seq = idx.sequence(d, anchor, pred);
        std::set<double> times;
        for (const auto& q : ev) {
          bool hit = q.predicate == pred && (d == Direction::subject_side ? q.subject == anchor
                                                                          : q.object == anchor);
          if (hit) times.insert(q.time);
        }
        ASSERT_EQ(seq.size(), times.size());
        std::size_t i = 0;
        for (double t : times) {
          EXPECT_DOUBLE_EQ(seq[i].time, t);
          EXPECT_EQ(seq[i].neighbors, brute_neighbors(ev, d, anchor, pred, t));
          ++i;
        }
      }
}

TEST(HistoryFor, EmptyHistoryHasSentinel) {
  std::vector<Quadruple> ev{{0, 0, 1, 5.0}};
  SliceIndex idx{std::span<const Quadruple>(ev)};
  HistorySequence h = idx.history_for(Direction::subject_side, 2, 0, 9.0, 10);
  EXPECT_TRUE(h.steps.empty());
  EXPECT_FALSE(h.t_last.has_value());
  EXPECT_TRUE(h.empty());
}

TEST(HistoryFor, KeepsMostRecentTenOfTwelve) {
  std::vector<Quadruple> ev;
  for (int t = 0; t < 12; ++t) ev.push_back({0, 0, 1, static_cast<double>(t)});
  SliceIndex idx{std::span<const Quadruple>(ev)};
  HistorySequence h = idx.history_for(Direction::subject_side, 0, 0, 100.0, 10);
  ASSERT_EQ(h.steps.size(), 10u);
  EXPECT_DOUBLE_EQ(h.steps.front().time, 2.0);  // drops t=0 and t=1
  EXPECT_DOUBLE_EQ(h.steps.back().time, 11.0);
  ASSERT_TRUE(h.t_last.has_value());
  EXPECT_DOUBLE_EQ(*h.t_last, 11.0);
}

TEST(HistoryFor, StrictlyBeforeQueryTime) {
  std::vector<Quadruple> ev{{0, 0, 1, 3.0}, {0, 0, 2, 5.0}};
  SliceIndex idx{std::span<const Quadruple>(ev)};
  HistorySequence h = idx.history_for(Direction::subject_side, 0, 0, 5.0, 10);
  ASSERT_EQ(h.steps.size(), 1u);
  EXPECT_DOUBLE_EQ(h.steps[0].time, 3.0);  // the t=5 slice is excluded at query t=5
}

TEST(HistoryFor, MatchesBruteForce) {
  Rng rng(73);
  auto ev = random_events(rng, 120, 6, 3, 15);
  SliceIndex idx{std::span<const Quadruple>(ev)};
  for (int trial = 0; trial < 200; ++trial) {
    auto anchor = static_cast<std::int32_t>(rng.below(6));
    auto pred = static_cast<std::int32_t>(rng.below(3));
    double qt = static_cast<double>(rng.below(17));
    auto d = rng.below(2) ? Direction::object_side : Direction::subject_side;
    auto max_len = static_cast<std::size_t>(1 + rng.below(12));
    HistorySequence h = idx.history_for(d, anchor, pred, qt, max_len);
    // oracle: group matching events by time, truncate to most recent max_len
    std::map<double, std::set<std::int32_t>> groups;
    for (const auto& q : ev) {
      if (q.time >= qt || q.predicate != pred) continue;
      if (d == Direction::subject_side && q.subject == anchor) groups[q.time].insert(q.object);
      if (d == Direction::object_side && q.object == anchor) groups[q.time].insert(q.subject);
    }
    std::vector<std::pair<double, std::vector<std::int32_t>>> want;
    for (auto& [t, s] : groups) want.emplace_back(t, std::vector<std::int32_t>(s.begin(), s.end()));
    if (want.size() > max_len) want.erase(want.begin(), want.end() - static_cast<long>(max_len));
    ASSERT_EQ(h.steps.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_DOUBLE_EQ(h.steps[i].time, want[i].first);
      EXPECT_EQ(h.steps[i].neighbors, want[i].second);
    }
    if (want.empty())
      EXPECT_FALSE(h.t_last.has_value());
    else
      EXPECT_DOUBLE_EQ(*h.t_last, want.back().first);
  }
}

TEST(HistoryFor, OwnTimestampNeverInOwnHistory) {
  Rng rng(74);
  auto ev = random_events(rng, 80, 5, 2, 10);
  SliceIndex idx{std::span<const Quadruple>(ev)};
  for (const auto& q : ev) {
    HistorySequence h =
        idx.history_for(Direction::subject_side, q.subject, q.predicate, q.time, 10);
    for (const auto& step : h.steps) EXPECT_LT(step.time, q.time);
  }
}

TEST(HistoryFor, InvariantToPermutationWithinTimestamp) {
  Rng rng(75);
  auto ev = random_events(rng, 60, 5, 2, 6);
  // shuffle events globally, then restore time order only (stable structure differs)
  auto shuffled = ev;
  rng.shuffle(shuffled);
  std::stable_sort(shuffled.begin(), shuffled.end(),
                   [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });
  SliceIndex a{std::span<const Quadruple>(ev)};
  SliceIndex b{std::span<const Quadruple>(shuffled)};
  for (std::int32_t anchor = 0; anchor < 5; ++anchor)
    for (auto d : {Direction::subject_side, Direction::object_side}) {
      HistorySequence ha = a.history_for(d, anchor, 0, 4.5, 10);
      HistorySequence hb = b.history_for(d, anchor, 0, 4.5, 10);
      ASSERT_EQ(ha.steps.size(), hb.steps.size());
      for (std::size_t i = 0; i < ha.steps.size(); ++i)
        EXPECT_EQ(ha.steps[i].neighbors, hb.steps[i].neighbors);
    }
}

TEST(SliceIndex, MultiSpanUnionEqualsSingleSpan) {
  Rng rng(76);
  auto ev = random_events(rng, 60, 5, 2, 10);
  std::vector<Quadruple> first(ev.begin(), ev.begin() + 30), second(ev.begin() + 30, ev.end());
  SliceIndex whole{std::span<const Quadruple>(ev)};
  SliceIndex parts{std::span<const Quadruple>(first), std::span<const Quadruple>(second)};
  for (std::int32_t anchor = 0; anchor < 5; ++anchor) {
    HistorySequence hw = whole.history_for(Direction::subject_side, anchor, 1, 99.0, 10);
    HistorySequence hp = parts.history_for(Direction::subject_side, anchor, 1, 99.0, 10);
    ASSERT_EQ(hw.steps.size(), hp.steps.size());
    for (std::size_t i = 0; i < hw.steps.size(); ++i)
      EXPECT_EQ(hw.steps[i].neighbors, hp.steps[i].neighbors);
  }
}

TEST(GapStats, PerTripleRecurrenceGaps) {
  // triple A recurs at 0,5,7 (gaps 5,2); triple B at 1,2 (gap 1)
  std::vector<Quadruple> ev{{0, 0, 1, 0.0}, {2, 0, 3, 1.0}, {2, 0, 3, 2.0},
                            {0, 0, 1, 5.0}, {0, 0, 1, 7.0}};
  EXPECT_DOUBLE_EQ(max_inter_occurrence_gap(ev), 5.0);
  EXPECT_DOUBLE_EQ(mean_inter_event_gap(ev), (5.0 + 2.0 + 1.0) / 3.0);
}

TEST(GapStats, FallbackToDistinctTimestampsWhenNothingRecurs) {
  std::vector<Quadruple> ev{{0, 0, 1, 1.0}, {1, 0, 2, 4.0}, {2, 0, 3, 9.0}};
  EXPECT_DOUBLE_EQ(max_inter_occurrence_gap(ev), 5.0);
  EXPECT_DOUBLE_EQ(mean_inter_event_gap(ev), 4.0);
}

TEST(GapStats, RejectsUnsortedInput) {
  std::vector<Quadruple> ev{{0, 0, 1, 5.0}, {0, 0, 1, 1.0}};
  EXPECT_THROW(max_inter_occurrence_gap(ev), data_error);
}

TEST(LoadDataset, Icews14ReferenceStatistics) {
  const char* dir = std::getenv("GHNN_ICEWS14_DIR");
  if (!dir) GTEST_SKIP() << "set GHNN_ICEWS14_DIR to run";
  Dataset ds = load_dataset(dir);
  EXPECT_EQ(ds.vocab.entity_count, 12498);
  EXPECT_EQ(ds.vocab.predicate_count, 254);
  std::size_t total = ds.train.size() + ds.valid.size() + ds.test.size();
  EXPECT_NEAR(static_cast<double>(total), 490000.0, 40000.0);
  std::set<double> stamps;
  for (const auto& q : ds.train) stamps.insert(q.time);
  for (const auto& q : ds.valid) stamps.insert(q.time);
  for (const auto& q : ds.test) stamps.insert(q.time);
  EXPECT_EQ(stamps.size(), 269u);
}
