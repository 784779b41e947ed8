#pragma once
// Tensor files: a short structured-text header (name, precision, shape)
// followed by the raw little-endian value array. Model parameters persist
// as one tensor file per parameter under params/.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ghnn/common.hpp"
#include "ghnn/config.hpp"
#include "ghnn/model.hpp"
#include "ghnn/tensor.hpp"

namespace ghnn {

static_assert(std::endian::native == std::endian::little,
              "tensor files assume a little-endian host");

template <typename T>
constexpr const char* precision_name();
template <>
constexpr const char* precision_name<float>() {
  return "float32";
}
template <>
constexpr const char* precision_name<double>() {
  return "float64";
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const std::string& name,
                  const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path.string());
  out << "tensor 1\n";
  out << "name " << name << "\n";
  out << "precision " << precision_name<T>() << "\n";
  out << "shape";
  for (std::size_t dim : t.shape) out << ' ' << dim;
  out << "\ndata\n";
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
  if (!out) throw data_error("short write to " + path.string());
}

template <typename T>
std::pair<std::string, Tensor<T>> read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "tensor 1")
    throw data_error(path.string() + ": not a tensor file");
  std::string name, precision;
  Shape shape;
  bool have_shape = false;
  while (std::getline(in, line) && line != "data") {
    std::istringstream ls(line);
    std::string field;
    ls >> field;
    if (field == "name") {
      ls >> std::ws;
      std::getline(ls, name);
    } else if (field == "precision") {
      ls >> precision;
    } else if (field == "shape") {
      std::size_t dim;
      while (ls >> dim) shape.push_back(dim);
      have_shape = true;
    } else {
      throw data_error(path.string() + ": unknown header field " + field);
    }
  }
  if (line != "data" || !have_shape || precision.empty())
    throw data_error(path.string() + ": incomplete tensor header");
  if (precision != precision_name<T>())
    throw data_error(path.string() + ": precision " + precision + ", expected " +
                     precision_name<T>());
  Tensor<T> t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(T)))
    throw data_error(path.string() + ": truncated tensor data");
  return {name, std::move(t)};
}

template <typename T>
void save_model_tensors(const std::filesystem::path& dir, ModelParams<T>& params) {
  std::filesystem::create_directories(dir);
  params.for_each_parameter(
      [&](Parameter<T>& p) { write_tensor(dir / (p.name + ".tensor"), p.name, p.value); });
}

// Loads tensors into an already-shaped model; any shape drift is an error.
template <typename T>
void load_model_tensors(const std::filesystem::path& dir, ModelParams<T>& params) {
  params.for_each_parameter([&](Parameter<T>& p) {
    auto [name, t] = read_tensor<T>(dir / (p.name + ".tensor"));
    if (name != p.name) throw data_error("tensor name mismatch: " + name + " vs " + p.name);
    if (t.shape != p.value.shape)
      throw data_error("tensor shape mismatch for " + p.name + ": " + shape_str(t.shape) +
                       " vs " + shape_str(p.value.shape));
    p.value = std::move(t);
  });
}

template <typename T>
void model_meta_to_ini(const ModelParams<T>& m, IniFile& f) {
  f.set("model", "num_entities", static_cast<std::int64_t>(m.num_entities));
  f.set("model", "num_predicates", static_cast<std::int64_t>(m.num_predicates));
  f.set("model", "embed_dim", static_cast<std::int64_t>(m.r));
  f.set("model", "hidden_dim", static_cast<std::int64_t>(m.d));
  f.set("model", "softplus_scale", static_cast<double>(m.softplus_scale));
  f.set("model", "decay_scale", static_cast<double>(m.clstm.psi));
  f.set("model", "readout",
        std::string(m.readout == Readout::output_gate ? "gate" : "candidate"));
  f.set("model", "time_combine",
        std::string(m.time_combine == TimeCombine::mean ? "mean" : "sum"));
  f.set("model", "tanh_update", m.clstm.tanh_update);
  f.set("model", "precision", std::string(precision_name<T>()));
}

template <typename T>
ModelParams<T> model_from_meta(const IniFile& f) {
  auto n_e = static_cast<std::size_t>(f.get_int("model", "num_entities", 0));
  auto n_p = static_cast<std::size_t>(f.get_int("model", "num_predicates", 0));
  auto r = static_cast<std::size_t>(f.get_int("model", "embed_dim", 0));
  auto d = static_cast<std::size_t>(f.get_int("model", "hidden_dim", 0));
  if (!n_e || !n_p || !r || !d) throw data_error("manifest is missing model dimensions");
  std::string precision = f.get("model", "precision", precision_name<T>());
  if (precision != precision_name<T>())
    throw data_error("checkpoint precision " + precision + ", expected " + precision_name<T>());
  ModelParams<T> m(n_e, n_p, r, d);
  m.softplus_scale = static_cast<T>(f.get_double("model", "softplus_scale", 1.0));
  m.clstm.psi = static_cast<T>(f.get_double("model", "decay_scale", 1.0));
  m.readout = f.get("model", "readout", "gate") == "candidate" ? Readout::candidate_embedding
                                                               : Readout::output_gate;
  m.time_combine =
      f.get("model", "time_combine", "mean") == "sum" ? TimeCombine::sum : TimeCombine::mean;
  m.clstm.tanh_update = f.get_bool("model", "tanh_update", false);
  m.validate();
  return m;
}

}  // namespace ghnn
