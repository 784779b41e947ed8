#pragma once
// Structured-text configuration: sectioned key = value files, preserved in
// insertion order so an echoed config is stable, plus the training
// hyperparameter block used by the CLI and checkpoints.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ghnn/common.hpp"

namespace ghnn {

class IniFile {
 public:
  static IniFile parse(std::istream& in, const std::string& origin = "<stream>") {
    IniFile f;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw data_error(origin + ":" + std::to_string(lineno) + ": unterminated section");
        section = trim(s.substr(1, s.size() - 2));
        f.section_rows(section);
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw data_error(origin + ":" + std::to_string(lineno) + ": expected key = value");
      f.set(section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return f;
  }

  static IniFile parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open " + path.string());
    return parse(in, path.filename().string());
  }

  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    const std::string* v = find(section, key);
    return v ? *v : fallback;
  }

  std::string require(const std::string& section, const std::string& key) const {
    const std::string* v = find(section, key);
    if (!v) throw data_error("missing config key [" + section + "] " + key);
    return *v;
  }

  double get_double(const std::string& section, const std::string& key, double fallback) const {
    const std::string* v = find(section, key);
    return v ? parse_double(*v, section, key) : fallback;
  }

  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      auto r = std::stoll(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("");
      return r;
    } catch (const std::exception&) {
      throw data_error("config key [" + section + "] " + key + " is not an integer: " + *v);
    }
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw data_error("config key [" + section + "] " + key + " is not a boolean: " + *v);
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    auto& rows = section_rows(section);
    for (auto& [k, v] : rows)
      if (k == key) {
        v = value;
        return;
      }
    rows.emplace_back(key, value);
  }

  // String literals would otherwise prefer the bool overload via pointer decay.
  void set(const std::string& section, const std::string& key, const char* value) {
    set(section, key, std::string(value));
  }

  void set(const std::string& section, const std::string& key, double value) {
    std::ostringstream s;
    s.precision(17);
    s << value;
    set(section, key, s.str());
  }

  void set(const std::string& section, const std::string& key, std::int64_t value) {
    set(section, key, std::to_string(value));
  }

  void set(const std::string& section, const std::string& key, bool value) {
    set(section, key, std::string(value ? "true" : "false"));
  }

  std::string str() const {
    std::ostringstream out;
    for (const auto& [name, rows] : sections_) {
      out << '[' << name << "]\n";
      for (const auto& [k, v] : rows) out << k << " = " << v << '\n';
      out << '\n';
    }
    return out.str();
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path.string());
    out << str();
  }

  const std::vector<std::pair<std::string, std::string>>* section(const std::string& name) const {
    for (const auto& [n, rows] : sections_)
      if (n == name) return &rows;
    return nullptr;
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double parse_double(const std::string& v, const std::string& section,
                             const std::string& key) {
    try {
      std::size_t pos = 0;
      double r = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("");
      return r;
    } catch (const std::exception&) {
      throw data_error("config key [" + section + "] " + key + " is not a number: " + v);
    }
  }

  const std::string* find(const std::string& section, const std::string& key) const {
    for (const auto& [n, rows] : sections_)
      if (n == section)
        for (const auto& [k, v] : rows)
          if (k == key) return &v;
    return nullptr;
  }

  std::vector<std::pair<std::string, std::string>>& section_rows(const std::string& name) {
    for (auto& [n, rows] : sections_)
      if (n == name) return rows;
    sections_.emplace_back(name, std::vector<std::pair<std::string, std::string>>{});
    return sections_.back().second;
  }

  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections_;
};

// Training and model hyperparameters. Defaults follow the reference
// configuration; fields without an established value are artifact choices.
struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 1024;
  double weight_decay = 1e-5;
  std::size_t epochs = 100;
  double nu = 0.01;  // time-loss weight
  std::size_t max_history = 10;
  std::size_t r = 200;  // embedding width
  std::size_t d = 200;  // cell width
  double s = 1.0;       // intensity softplus scale
  double psi = 1.0;     // decay-gate softplus scale
  double t_max = 0.0;   // time-expectation horizon; <= 0 derives it from train gaps
  std::size_t grid_points = 100;       // quadrature nodes in the training loss
  std::size_t eval_grid_points = 1000; // quadrature nodes for reported metrics
  double clip_norm = 10.0;
  std::uint64_t seed = 42;
  unsigned threads = 0;  // 0 = hardware default
  double time_scale = 1.0;
  std::string readout = "gate";       // gate | candidate
  std::string time_combine = "mean";  // mean | sum
  bool tanh_update = false;           // cell update gate: sigmoid default
  bool renormalize = true;            // renormalize truncated time densities

  void validate() const {
    if (!(lr > 0)) throw data_error("lr must be positive");
    if (batch_size == 0) throw data_error("batch_size must be positive");
    if (nu < 0) throw data_error("nu must be non-negative");
    if (max_history == 0) throw data_error("max_history must be positive");
    if (r == 0 || d == 0) throw data_error("embedding and cell widths must be positive");
    if (!(s > 0) || !(psi > 0)) throw data_error("softplus scales must be positive");
    if (grid_points < 2 || eval_grid_points < 2) throw data_error("grid_points must be >= 2");
    if (!(time_scale > 0)) throw data_error("time_scale must be positive");
    if (readout != "gate" && readout != "candidate")
      throw data_error("readout must be gate or candidate");
    if (time_combine != "mean" && time_combine != "sum")
      throw data_error("time_combine must be mean or sum");
  }

  static TrainConfig from_ini(const IniFile& f, const std::string& section = "train") {
    TrainConfig c;
    c.lr = f.get_double(section, "lr", c.lr);
    c.batch_size = static_cast<std::size_t>(f.get_int(section, "batch_size", static_cast<std::int64_t>(c.batch_size)));
    c.weight_decay = f.get_double(section, "weight_decay", c.weight_decay);
    c.epochs = static_cast<std::size_t>(f.get_int(section, "epochs", static_cast<std::int64_t>(c.epochs)));
    c.nu = f.get_double(section, "nu", c.nu);
    c.max_history = static_cast<std::size_t>(f.get_int(section, "max_history", static_cast<std::int64_t>(c.max_history)));
    c.r = static_cast<std::size_t>(f.get_int(section, "embed_dim", static_cast<std::int64_t>(c.r)));
    c.d = static_cast<std::size_t>(f.get_int(section, "hidden_dim", static_cast<std::int64_t>(c.d)));
    c.s = f.get_double(section, "softplus_scale", c.s);
    c.psi = f.get_double(section, "decay_scale", c.psi);
    c.t_max = f.get_double(section, "t_max", c.t_max);
    c.grid_points = static_cast<std::size_t>(f.get_int(section, "grid_points", static_cast<std::int64_t>(c.grid_points)));
    c.eval_grid_points = static_cast<std::size_t>(f.get_int(section, "eval_grid_points", static_cast<std::int64_t>(c.eval_grid_points)));
    c.clip_norm = f.get_double(section, "clip_norm", c.clip_norm);
    c.seed = static_cast<std::uint64_t>(f.get_int(section, "seed", static_cast<std::int64_t>(c.seed)));
    c.threads = static_cast<unsigned>(f.get_int(section, "threads", static_cast<std::int64_t>(c.threads)));
    c.time_scale = f.get_double(section, "time_scale", c.time_scale);
    c.readout = f.get(section, "readout", c.readout);
    c.time_combine = f.get(section, "time_combine", c.time_combine);
    c.tanh_update = f.get_bool(section, "tanh_update", c.tanh_update);
    c.renormalize = f.get_bool(section, "renormalize", c.renormalize);
    c.validate();
    return c;
  }

  void to_ini(IniFile& f, const std::string& section = "train") const {
    f.set(section, "lr", lr);
    f.set(section, "batch_size", static_cast<std::int64_t>(batch_size));
    f.set(section, "weight_decay", weight_decay);
    f.set(section, "epochs", static_cast<std::int64_t>(epochs));
    f.set(section, "nu", nu);
    f.set(section, "max_history", static_cast<std::int64_t>(max_history));
    f.set(section, "embed_dim", static_cast<std::int64_t>(r));
    f.set(section, "hidden_dim", static_cast<std::int64_t>(d));
    f.set(section, "softplus_scale", s);
    f.set(section, "decay_scale", psi);
    f.set(section, "t_max", t_max);
    f.set(section, "grid_points", static_cast<std::int64_t>(grid_points));
    f.set(section, "eval_grid_points", static_cast<std::int64_t>(eval_grid_points));
    f.set(section, "clip_norm", clip_norm);
    f.set(section, "seed", static_cast<std::int64_t>(seed));
    f.set(section, "threads", static_cast<std::int64_t>(threads));
    f.set(section, "time_scale", time_scale);
    f.set(section, "readout", readout);
    f.set(section, "time_combine", time_combine);
    f.set(section, "tanh_update", tanh_update);
    f.set(section, "renormalize", renormalize);
  }
};

}  // namespace ghnn
