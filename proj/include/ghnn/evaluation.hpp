#pragma once
// Link ranking with raw / static / time-aware filtering and mean-tie ranks,
// plus time metrics (MAE, cHits@k). Evaluation is read-only over the model
// and parallelizes across queries into index-addressed result slots, so
// aggregates never depend on thread interleaving.

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ghnn/common.hpp"
#include "ghnn/dataset.hpp"
#include "ghnn/model.hpp"

namespace ghnn {

enum class Protocol : std::uint8_t { raw = 0, static_filter = 1, time_aware = 2 };

inline const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::raw: return "raw";
    case Protocol::static_filter: return "static";
    default: return "time-aware";
  }
}

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "raw") return Protocol::raw;
  if (s == "static") return Protocol::static_filter;
  if (s == "time-aware" || s == "time_aware") return Protocol::time_aware;
  throw std::invalid_argument("unknown protocol: " + s);
}

// Tied scores share the mean of their rank range, so a constant scorer
// cannot collect rank 1 on every query.
template <typename T>
double rank_with_ties(std::span<const T> scores, std::int32_t truth,
                      std::span<const std::uint8_t> mask) {
  if (truth < 0 || static_cast<std::size_t>(truth) >= scores.size())
    throw std::invalid_argument("rank_with_ties: truth out of range");
  if (!mask.empty() && mask.size() != scores.size())
    throw std::invalid_argument("rank_with_ties: mask size mismatch");
  if (!mask.empty() && mask[static_cast<std::size_t>(truth)])
    throw std::invalid_argument("rank_with_ties: truth is masked");
  T ref = scores[static_cast<std::size_t>(truth)];
  std::size_t above = 0, ties = 0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (!mask.empty() && mask[c]) continue;
    if (scores[c] > ref)
      ++above;
    else if (scores[c] == ref)
      ++ties;  // includes the truth itself
  }
  return static_cast<double>(above) + (static_cast<double>(ties) + 1.0) / 2.0;
}

// All (anchor, predicate, candidate) facts across every split, keyed both
// ways, for competitor filtering.
class FilterIndex {
 public:
  explicit FilterIndex(const Dataset& ds) {
    for (const auto* split : {&ds.train, &ds.valid, &ds.test})
      for (const Quadruple& q : *split) add(q);
    for (auto& [k, v] : static_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    for (auto& [k, v] : timed_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }

  // Candidates attested for (anchor, predicate) at any time.
  std::span<const std::int32_t> attested(Direction d, std::int32_t anchor,
                                         std::int32_t predicate) const {
    auto it = static_.find(key(d, anchor, predicate));
    if (it == static_.end()) return {};
    return it->second;
  }

  // Candidates attested at exactly time t.
  std::vector<std::int32_t> attested_at(Direction d, std::int32_t anchor, std::int32_t predicate,
                                        double t) const {
    std::vector<std::int32_t> out;
    auto it = timed_.find(key(d, anchor, predicate));
    if (it == timed_.end()) return out;
    const auto& v = it->second;
    auto lo = std::lower_bound(v.begin(), v.end(), std::pair<double, std::int32_t>{t, INT32_MIN});
    for (; lo != v.end() && lo->first == t; ++lo) out.push_back(lo->second);
    return out;
  }

 private:
  static std::uint64_t key(Direction d, std::int32_t anchor, std::int32_t predicate) {
    return (static_cast<std::uint64_t>(d) << 63) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(anchor)) << 31) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(predicate));
  }

  void add(const Quadruple& q) {
    static_[key(Direction::subject_side, q.subject, q.predicate)].push_back(q.object);
    static_[key(Direction::object_side, q.object, q.predicate)].push_back(q.subject);
    timed_[key(Direction::subject_side, q.subject, q.predicate)].push_back({q.time, q.object});
    timed_[key(Direction::object_side, q.object, q.predicate)].push_back({q.time, q.subject});
  }

  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> static_;
  std::unordered_map<std::uint64_t, std::vector<std::pair<double, std::int32_t>>> timed_;
};

// Excluded-candidate bitmap; the truth id is never excluded.
inline std::vector<std::uint8_t> build_filter_mask(const FilterIndex& index, Protocol protocol,
                                                   Direction d, std::int32_t anchor,
                                                   std::int32_t predicate, std::int32_t truth,
                                                   double t, std::size_t num_entities) {
  std::vector<std::uint8_t> mask(num_entities, 0);
  if (protocol == Protocol::raw) return mask;
  if (protocol == Protocol::static_filter) {
    for (std::int32_t c : index.attested(d, anchor, predicate))
      if (c != truth) mask[static_cast<std::size_t>(c)] = 1;
  } else {
    for (std::int32_t c : index.attested_at(d, anchor, predicate, t))
      if (c != truth) mask[static_cast<std::size_t>(c)] = 1;
  }
  return mask;
}

struct LinkMetrics {
  double mrr = 0, hits1 = 0, hits3 = 0, hits10 = 0;
  std::size_t count = 0;
};

struct TimeMetrics {
  double mae = 0;
  std::vector<double> ks;     // thresholds
  std::vector<double> chits;  // fraction with |error| < ks[i]
  std::size_t count = 0;
};

inline LinkMetrics aggregate_link(std::span<const double> ranks) {
  if (ranks.empty()) throw std::invalid_argument("aggregate_link: no results");
  LinkMetrics m;
  m.count = ranks.size();
  for (double r : ranks) {
    m.mrr += 1.0 / r;
    m.hits1 += r <= 1.0;
    m.hits3 += r <= 3.0;
    m.hits10 += r <= 10.0;
  }
  double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
  return m;
}

inline TimeMetrics aggregate_time(std::span<const double> abs_errors, std::span<const double> ks) {
  if (abs_errors.empty()) throw std::invalid_argument("aggregate_time: no results");
  TimeMetrics m;
  m.count = abs_errors.size();
  m.ks.assign(ks.begin(), ks.end());
  m.chits.assign(ks.size(), 0.0);
  for (double e : abs_errors) {
    m.mae += e;
    for (std::size_t i = 0; i < ks.size(); ++i) m.chits[i] += e < ks[i];
  }
  double n = static_cast<double>(abs_errors.size());
  m.mae /= n;
  for (auto& c : m.chits) c /= n;
  return m;
}

struct EvalConfig {
  std::string split = "test";
  Protocol protocol = Protocol::time_aware;
  std::size_t max_history = 10;
  double horizon = 0.0;  // <= 0: max inter-occurrence gap of the train split
  std::size_t grid_points = 1000;
  bool renormalize = true;
  bool with_time = true;
  // Histories may draw on ground-truth events from every split strictly
  // before the query; false restricts them to the train split.
  bool histories_from_all_splits = true;
  std::vector<double> chits_ks = {1.0, 3.0, 10.0};
  unsigned threads = 0;  // 0 = hardware default
};

struct QueryRecord {
  std::size_t query = 0;
  Direction direction = Direction::subject_side;
  Quadruple fact;
  double rank = 0;
};

struct TimeRecord {
  std::size_t query = 0;
  Quadruple fact;
  double t_true = 0, t_pred = 0;
};

struct EvalReport {
  std::string split;
  Protocol protocol = Protocol::raw;
  LinkMetrics link, link_subject_queries, link_object_queries;
  std::optional<TimeMetrics> time;
  std::vector<QueryRecord> queries;      // 2 per quadruple, object query first
  std::vector<TimeRecord> time_queries;  // 1 per quadruple when with_time
};

// Optional per-query observer, e.g. to capture raw score vectors in tests.
// Called from worker threads; must be thread-safe if threads > 1.
template <typename T>
using ScoreHook =
    std::function<void(std::size_t query, Direction, const std::vector<T>& scores)>;

template <typename T>
EvalReport evaluate(ModelParams<T>& params, const Dataset& ds, const EvalConfig& cfg,
                    ScoreHook<T> hook = {}) {
  const std::vector<Quadruple>& queries = ds.split(cfg.split);
  if (queries.empty()) throw data_error("evaluate: empty split " + cfg.split);
  params.validate();
  SliceIndex index = cfg.histories_from_all_splits
                         ? SliceIndex({std::span<const Quadruple>(ds.train),
                                       std::span<const Quadruple>(ds.valid),
                                       std::span<const Quadruple>(ds.test)})
                         : SliceIndex(std::span<const Quadruple>(ds.train));
  FilterIndex filters(ds);
  double horizon = cfg.horizon > 0.0 ? cfg.horizon : max_inter_occurrence_gap(ds.train);
  if (!(horizon > 0.0)) horizon = 1.0;
  std::size_t n_e = params.num_entities;

  EvalReport report;
  report.split = cfg.split;
  report.protocol = cfg.protocol;
  report.queries.resize(queries.size() * 2);
  if (cfg.with_time) report.time_queries.resize(queries.size());

  unsigned threads = cfg.threads ? cfg.threads : default_thread_count();
  parallel_chunks(queries.size(), threads, [&](unsigned, std::size_t lo, std::size_t hi) {
    for (std::size_t qi = lo; qi < hi; ++qi) {
      const Quadruple& q = queries[qi];
      Tape<T> tape;
      ModelRef<T> m(tape, params);
      HistorySequence hist_sp =
          index.history_for(Direction::subject_side, q.subject, q.predicate, q.time,
                            cfg.max_history);
      HistorySequence hist_op =
          index.history_for(Direction::object_side, q.object, q.predicate, q.time,
                            cfg.max_history);
      EncodedHistory<T> enc_sp = encode_history(m, hist_sp);
      EncodedHistory<T> enc_op = encode_history(m, hist_op);

      auto rank_one = [&](const EncodedHistory<T>& enc, Direction d, std::int32_t anchor,
                          std::int32_t truth) {
        const std::vector<T>& scores = intensity_all(m, enc, q.time).val().data;
        if (hook) hook(qi, d, scores);
        auto mask = build_filter_mask(filters, cfg.protocol, d, anchor, q.predicate, truth,
                                      q.time, n_e);
        return rank_with_ties(std::span<const T>(scores), truth,
                              std::span<const std::uint8_t>(mask));
      };
      report.queries[2 * qi] = {qi, Direction::subject_side, q,
                                rank_one(enc_sp, Direction::subject_side, q.subject, q.object)};
      report.queries[2 * qi + 1] = {qi, Direction::object_side, q,
                                    rank_one(enc_op, Direction::object_side, q.object, q.subject)};
      if (cfg.with_time) {
        auto td = time_density_and_expectation(m, enc_sp, enc_op, q.subject, q.object, horizon,
                                               cfg.grid_points, cfg.renormalize);
        report.time_queries[qi] = {qi, q, q.time, static_cast<double>(td.t_hat.item())};
      }
    }
  });

  std::vector<double> all, sp, op;
  all.reserve(report.queries.size());
  for (const QueryRecord& r : report.queries) {
    all.push_back(r.rank);
    (r.direction == Direction::subject_side ? sp : op).push_back(r.rank);
  }
  report.link = aggregate_link(all);
  report.link_subject_queries = aggregate_link(sp);
  report.link_object_queries = aggregate_link(op);
  if (cfg.with_time) {
    std::vector<double> errs;
    errs.reserve(report.time_queries.size());
    for (const TimeRecord& r : report.time_queries) errs.push_back(std::abs(r.t_true - r.t_pred));
    report.time = aggregate_time(errs, cfg.chits_ks);
  }
  return report;
}

inline std::string format_metric_report(const EvalReport& r) {
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  out << "[report]\n";
  out << "split = " << r.split << "\n";
  out << "protocol = " << to_string(r.protocol) << "\n";
  out << "queries = " << r.link.count << "\n";
  out << "mrr = " << r.link.mrr << "\n";
  out << "hits1 = " << r.link.hits1 << "\n";
  out << "hits3 = " << r.link.hits3 << "\n";
  out << "hits10 = " << r.link.hits10 << "\n";
  out << "mrr_subject_queries = " << r.link_subject_queries.mrr << "\n";
  out << "mrr_object_queries = " << r.link_object_queries.mrr << "\n";
  if (r.time) {
    out << "mae = " << r.time->mae << "\n";
    for (std::size_t i = 0; i < r.time->ks.size(); ++i) {
      std::ostringstream k;
      k << r.time->ks[i];
      out << "chits" << k.str() << " = " << r.time->chits[i] << "\n";
    }
  }
  return out.str();
}

inline void write_query_dump(const std::string& path, const EvalReport& r) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  out << "query\tsubject\tpredicate\tobject\tt\tdirection\trank\tt_true\tt_pred\n";
  out << std::setprecision(10);
  std::unordered_map<std::size_t, const TimeRecord*> times;
  for (const TimeRecord& t : r.time_queries) times[t.query] = &t;
  for (const QueryRecord& qr : r.queries) {
    out << qr.query << '\t' << qr.fact.subject << '\t' << qr.fact.predicate << '\t'
        << qr.fact.object << '\t' << qr.fact.time << '\t' << to_string(qr.direction) << '\t'
        << qr.rank << '\t';
    auto it = times.find(qr.query);
    if (it != times.end())
      out << it->second->t_true << '\t' << it->second->t_pred << '\n';
    else
      out << qr.fact.time << "\t-\n";
  }
}

}  // namespace ghnn
