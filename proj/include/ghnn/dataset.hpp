#pragma once
// Temporal knowledge graph storage: quadruple datasets in the common
// tab-separated layout (train.txt/valid.txt/test.txt + stat.txt), plus a
// slice index answering "which neighbors did this (entity, predicate) pair
// connect to at each past timestamp" for history extraction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ghnn/common.hpp"

namespace ghnn {

struct Quadruple {
  std::int32_t subject = 0;
  std::int32_t predicate = 0;
  std::int32_t object = 0;
  double time = 0.0;

  bool operator==(const Quadruple&) const = default;
};

struct Vocab {
  std::int32_t entity_count = 0;
  std::int32_t predicate_count = 0;
  std::vector<std::string> entity_names;     // optional, may be empty
  std::vector<std::string> predicate_names;  // optional, may be empty
};

struct Dataset {
  Vocab vocab;
  std::vector<Quadruple> train, valid, test;
  double time_scale = 1.0;

  const std::vector<Quadruple>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split: " + name);
  }
};

// Which side of the quadruple anchors a query. subject_side histories list
// past objects of (s, p, ·); object_side histories list past subjects.
enum class Direction : std::uint8_t { subject_side = 0, object_side = 1 };

inline const char* to_string(Direction d) {
  return d == Direction::subject_side ? "subject" : "object";
}

struct TimedNeighbors {
  double time = 0.0;
  std::vector<std::int32_t> neighbors;  // sorted, unique
};

// Up to max_len most recent neighbor groups strictly before the query time.
struct HistorySequence {
  Direction direction = Direction::subject_side;
  std::int32_t anchor = 0;
  std::int32_t predicate = 0;
  std::span<const TimedNeighbors> steps;
  std::optional<double> t_last;  // empty = "no history" sentinel

  bool empty() const { return steps.empty(); }
};

namespace detail {

inline std::int64_t parse_int_field(const std::string& tok, const std::string& where) {
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(tok, &pos);
  } catch (const std::exception&) {
    throw data_error(where + ": non-integer field '" + tok + "'");
  }
  if (pos != tok.size()) throw data_error(where + ": non-integer field '" + tok + "'");
  return v;
}

inline std::vector<Quadruple> load_split_file(const std::filesystem::path& file, const Vocab& vocab,
                                              double time_scale) {
  std::ifstream in(file);
  if (!in) throw data_error("cannot open " + file.string());
  std::vector<Quadruple> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string s, p, o, t;
    if (!(ls >> s)) continue;  // blank line
    std::string where = file.filename().string() + ":" + std::to_string(lineno);
    if (!(ls >> p >> o >> t)) throw data_error(where + ": expected 4 integer columns");
    Quadruple q;
    auto sub = parse_int_field(s, where);
    auto pred = parse_int_field(p, where);
    auto obj = parse_int_field(o, where);
    auto ts = parse_int_field(t, where);
    if (sub < 0 || sub >= vocab.entity_count || obj < 0 || obj >= vocab.entity_count)
      throw data_error(where + ": entity id out of range [0, " +
                       std::to_string(vocab.entity_count) + ")");
    if (pred < 0 || pred >= vocab.predicate_count)
      throw data_error(where + ": predicate id out of range [0, " +
                       std::to_string(vocab.predicate_count) + ")");
    if (ts < 0) throw data_error(where + ": negative timestamp");
    q.subject = static_cast<std::int32_t>(sub);
    q.predicate = static_cast<std::int32_t>(pred);
    q.object = static_cast<std::int32_t>(obj);
    q.time = static_cast<double>(ts) * time_scale;
    events.push_back(q);
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Quadruple& a, const Quadruple& b) { return a.time < b.time; });
  return events;
}

// Accepts either "id<TAB>name" or "name<TAB>id" per line.
inline std::vector<std::string> load_name_file(const std::filesystem::path& file,
                                               std::int32_t count) {
  std::ifstream in(file);
  if (!in) return {};
  std::vector<std::string> names(static_cast<std::size_t>(count));
  std::string line;
  while (std::getline(in, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    std::string a = line.substr(0, tab);
    std::string b = line.substr(tab + 1);
    while (!b.empty() && (b.back() == '\r' || b.back() == '\n')) b.pop_back();
    std::size_t pos = 0;
    long id = -1;
    try {
      id = std::stol(a, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    std::string name;
    if (pos == a.size() && pos > 0) {
      name = b;
    } else {
      name = a;
      try {
        id = std::stol(b);
      } catch (const std::exception&) {
        continue;
      }
    }
    if (id >= 0 && id < count) names[static_cast<std::size_t>(id)] = name;
  }
  return names;
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& dir, double time_scale = 1.0) {
  if (!(time_scale > 0.0)) throw data_error("time_scale must be positive");
  std::ifstream stat(dir / "stat.txt");
  if (!stat) throw data_error("cannot open " + (dir / "stat.txt").string());
  Dataset ds;
  ds.time_scale = time_scale;
  long long ne = 0, np = 0;
  if (!(stat >> ne >> np) || ne <= 0 || np <= 0)
    throw data_error("stat.txt must start with positive entity and predicate counts");
  ds.vocab.entity_count = static_cast<std::int32_t>(ne);
  ds.vocab.predicate_count = static_cast<std::int32_t>(np);
  ds.train = detail::load_split_file(dir / "train.txt", ds.vocab, time_scale);
  ds.valid = detail::load_split_file(dir / "valid.txt", ds.vocab, time_scale);
  ds.test = detail::load_split_file(dir / "test.txt", ds.vocab, time_scale);
  ds.vocab.entity_names = detail::load_name_file(dir / "entity2id.txt", ds.vocab.entity_count);
  ds.vocab.predicate_names =
      detail::load_name_file(dir / "relation2id.txt", ds.vocab.predicate_count);
  return ds;
}

// Writes splits back in the file layout load_dataset reads, undoing the
// time scaling (timestamps are rounded to the nearest integer tick).
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream stat(dir / "stat.txt");
    if (!stat) throw data_error("cannot write " + (dir / "stat.txt").string());
    stat << ds.vocab.entity_count << '\t' << ds.vocab.predicate_count << '\n';
  }
  auto write_split = [&](const char* name, const std::vector<Quadruple>& events) {
    std::ofstream out(dir / name);
    if (!out) throw data_error(std::string("cannot write ") + name);
    for (const auto& q : events) {
      out << q.subject << '\t' << q.predicate << '\t' << q.object << '\t'
          << std::llround(q.time / ds.time_scale) << '\n';
    }
  };
  write_split("train.txt", ds.train);
  write_split("valid.txt", ds.valid);
  write_split("test.txt", ds.test);
}

// Immutable time-indexed neighbor map. Construction groups events by
// (direction, anchor, predicate) and then by timestamp; queries are
// read-only and safe to run from many threads.
class SliceIndex {
 public:
  SliceIndex() = default;

  explicit SliceIndex(std::span<const Quadruple> events) { add_events(events); finalize(); }

  // Builds from several splits at once (events need not be globally sorted;
  // each group is sorted during finalize).
  explicit SliceIndex(std::initializer_list<std::span<const Quadruple>> spans) {
    for (auto s : spans) add_events(s);
    finalize();
  }

  // All neighbor groups for a key, in increasing time order.
  std::span<const TimedNeighbors> sequence(Direction d, std::int32_t anchor,
                                           std::int32_t predicate) const {
    auto it = map_.find(key(d, anchor, predicate));
    if (it == map_.end()) return {};
    return it->second;
  }

  HistorySequence history_for(Direction d, std::int32_t anchor, std::int32_t predicate,
                              double query_time, std::size_t max_len) const {
    if (max_len == 0) throw std::invalid_argument("history_for: max_len must be positive");
    HistorySequence h;
    h.direction = d;
    h.anchor = anchor;
    h.predicate = predicate;
    auto seq = sequence(d, anchor, predicate);
    auto cut = std::lower_bound(seq.begin(), seq.end(), query_time,
                                [](const TimedNeighbors& g, double t) { return g.time < t; });
    std::size_t n = static_cast<std::size_t>(cut - seq.begin());
    std::size_t take = std::min(n, max_len);
    h.steps = seq.subspan(n - take, take);
    if (take > 0) h.t_last = h.steps.back().time;
    return h;
  }

 private:
  static std::uint64_t key(Direction d, std::int32_t anchor, std::int32_t predicate) {
    return (static_cast<std::uint64_t>(d) << 63) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(anchor)) << 31) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(predicate));
  }

  void add_events(std::span<const Quadruple> events) {
    for (const auto& q : events) {
      raw_[key(Direction::subject_side, q.subject, q.predicate)].push_back({q.time, q.object});
      raw_[key(Direction::object_side, q.object, q.predicate)].push_back({q.time, q.subject});
    }
  }

  void finalize() {
    map_.reserve(raw_.size());
    for (auto& [k, entries] : raw_) {
      std::sort(entries.begin(), entries.end());
      std::vector<TimedNeighbors>& groups = map_[k];
      for (std::size_t i = 0; i < entries.size();) {
        TimedNeighbors g;
        g.time = entries[i].first;
        while (i < entries.size() && entries[i].first == g.time) {
          g.neighbors.push_back(entries[i].second);
          ++i;
        }
        g.neighbors.erase(std::unique(g.neighbors.begin(), g.neighbors.end()), g.neighbors.end());
        groups.push_back(std::move(g));
      }
    }
    raw_.clear();
  }

  std::unordered_map<std::uint64_t, std::vector<std::pair<double, std::int32_t>>> raw_;
  std::unordered_map<std::uint64_t, std::vector<TimedNeighbors>> map_;
};

namespace detail {

// Consecutive-occurrence gaps of each distinct (s, p, o) triple, reduced by
// fn(acc, gap); returns false if no triple recurs.
template <typename F>
bool fold_recurrence_gaps(std::span<const Quadruple> events, F&& fn) {
  std::map<std::array<std::int32_t, 3>, double> last;
  bool any = false;
  for (const Quadruple& q : events) {
    std::array<std::int32_t, 3> key{q.subject, q.predicate, q.object};
    auto [it, fresh] = last.try_emplace(key, q.time);
    if (!fresh) {
      double gap = q.time - it->second;
      if (gap < 0) throw data_error("events not sorted by time");
      if (gap > 0) {
        fn(gap);
        any = true;
      }
      it->second = q.time;
    }
  }
  return any;
}

inline double distinct_time_gap(std::span<const Quadruple> events, bool want_max) {
  std::vector<double> times;
  times.reserve(events.size());
  for (const Quadruple& q : events) times.push_back(q.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (times.size() < 2) return 0.0;
  if (!want_max)
    return (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  double gap = 0.0;
  for (std::size_t i = 1; i < times.size(); ++i) gap = std::max(gap, times[i] - times[i - 1]);
  return gap;
}

}  // namespace detail

// Largest gap between consecutive occurrences of the same (s, p, o) triple;
// the default truncation horizon for time-of-event expectations. Falls back
// to the largest gap between distinct timestamps when nothing recurs.
inline double max_inter_occurrence_gap(std::span<const Quadruple> events) {
  double gap = 0.0;
  bool any = detail::fold_recurrence_gaps(events, [&](double g) { gap = std::max(gap, g); });
  return any ? gap : detail::distinct_time_gap(events, true);
}

// Mean gap between consecutive occurrences of the same (s, p, o) triple,
// with the same fallback as above.
inline double mean_inter_event_gap(std::span<const Quadruple> events) {
  double sum = 0.0;
  std::size_t n = 0;
  bool any = detail::fold_recurrence_gaps(events, [&](double g) {
    sum += g;
    ++n;
  });
  return any ? sum / static_cast<double>(n) : detail::distinct_time_gap(events, false);
}

}  // namespace ghnn
