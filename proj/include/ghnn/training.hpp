#pragma once
// Joint link+time training. Each query records its own tape (two direction
// encodings, cross-entropy over log-intensities, optionally the squared
// time error through the quadrature); workers accumulate into private
// gradient stores that are reduced in worker order, so a run is bitwise
// reproducible given the same seed, batch order, and thread count.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ghnn/common.hpp"
#include "ghnn/config.hpp"
#include "ghnn/dataset.hpp"
#include "ghnn/evaluation.hpp"
#include "ghnn/model.hpp"
#include "ghnn/rng.hpp"
#include "ghnn/serialize.hpp"
#include "ghnn/tape.hpp"

namespace ghnn {

template <typename T>
Var<T> link_cross_entropy(ModelRef<T>& m, const EncodedHistory<T>& enc, std::int32_t truth,
                          double t) {
  if (truth < 0 || static_cast<std::size_t>(truth) >= m.params().num_entities)
    throw std::invalid_argument("link_cross_entropy: truth id out of range");
  return cross_entropy_with_logits(log_intensity_all(m, enc, t),
                                   static_cast<std::size_t>(truth));
}

struct QueryLossParts {
  double link = 0, time = 0;
};

// Both direction cross-entropies plus nu times the squared error of the
// expected event time. nu == 0 skips the time branch entirely.
template <typename T>
Var<T> query_total_loss(ModelRef<T>& m, const Quadruple& q, const HistorySequence& hist_sp,
                        const HistorySequence& hist_op, double nu, double horizon,
                        std::size_t grid_points, bool renormalize,
                        QueryLossParts* parts = nullptr) {
  EncodedHistory<T> enc_sp = encode_history(m, hist_sp);
  EncodedHistory<T> enc_op = encode_history(m, hist_op);
  Var<T> link = add(link_cross_entropy(m, enc_sp, q.object, q.time),
                    link_cross_entropy(m, enc_op, q.subject, q.time));
  if (parts) parts->link = static_cast<double>(link.item());
  if (nu == 0.0) return link;
  TimeDensity<T> td = time_density_and_expectation(m, enc_sp, enc_op, q.subject, q.object,
                                                   horizon, grid_points, renormalize);
  Var<T> err = sub(m.tape().constant_scalar(static_cast<T>(q.time)), td.t_hat);
  Var<T> se = mul(err, err);
  if (parts) parts->time = static_cast<double>(se.item());
  return add(link, mul_scalar(se, static_cast<T>(nu)));
}

// Scales all gradients so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
template <typename T>
double clip_gradients(ModelParams<T>& params, double max_norm) {
  double sq = 0;
  params.for_each_parameter([&](Parameter<T>& p) {
    for (T g : p.grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
  });
  double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    T scale = static_cast<T>(max_norm / norm);
    params.for_each_parameter([&](Parameter<T>& p) {
      for (T& g : p.grad.data) g *= scale;
    });
  }
  return norm;
}

// Adam with decoupled weight decay: the decay acts on the parameters
// directly and never enters the moment estimates.
template <typename T>
class AdamW {
 public:
  AdamW(ModelParams<T>& params, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    params.for_each_parameter([&](Parameter<T>& p) {
      order_.push_back(&p);
      m_.emplace_back(p.value.shape);
      v_.emplace_back(p.value.shape);
    });
  }

  void step() {
    ++t_;
    T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    T corr1 = T(1) - std::pow(b1, static_cast<T>(t_));
    T corr2 = T(1) - std::pow(b2, static_cast<T>(t_));
    T lr = static_cast<T>(lr_), wd = static_cast<T>(wd_), eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < order_.size(); ++i) {
      Parameter<T>& p = *order_[i];
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        T g = p.grad.data[j];
        m.data[j] = b1 * m.data[j] + (T(1) - b1) * g;
        v.data[j] = b2 * v.data[j] + (T(1) - b2) * g * g;
        T mhat = m.data[j] / corr1;
        T vhat = v.data[j] / corr2;
        p.value.data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.value.data[j]);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < order_.size(); ++i) {
      write_tensor(dir / (order_[i]->name + ".m.tensor"), order_[i]->name, m_[i]);
      write_tensor(dir / (order_[i]->name + ".v.tensor"), order_[i]->name, v_[i]);
    }
  }

  void load(const std::filesystem::path& dir) {
    for (std::size_t i = 0; i < order_.size(); ++i) {
      auto [mn, mt] = read_tensor<T>(dir / (order_[i]->name + ".m.tensor"));
      auto [vn, vt] = read_tensor<T>(dir / (order_[i]->name + ".v.tensor"));
      if (mt.shape != m_[i].shape || vt.shape != v_[i].shape)
        throw data_error("optimizer moment shape mismatch for " + order_[i]->name);
      m_[i] = std::move(mt);
      v_[i] = std::move(vt);
    }
  }

 private:
  std::vector<Parameter<T>*> order_;
  std::vector<Tensor<T>> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double link_loss = 0;  // mean per train quadruple
  double time_loss = 0;  // mean squared time error per train quadruple
  double val_mrr = -1;   // -1 = no validation split
  double seconds = 0;
};

inline std::string format_epoch_line(const EpochStats& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "epoch=" << s.epoch << " link_loss=" << s.link_loss << " time_loss=" << s.time_loss
     << " val_mrr=";
  if (s.val_mrr < 0)
    os << "n/a";
  else
    os << s.val_mrr;
  os << " seconds=" << std::setprecision(2) << s.seconds;
  return os.str();
}

struct TrainOutcome {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  double best_val_mrr = -1;
  std::filesystem::path best_dir, last_dir;
};

template <typename T>
ModelParams<T> model_from_config(const Dataset& ds, const TrainConfig& cfg) {
  ModelParams<T> m(static_cast<std::size_t>(ds.vocab.entity_count),
                   static_cast<std::size_t>(ds.vocab.predicate_count), cfg.r, cfg.d);
  m.softplus_scale = static_cast<T>(cfg.s);
  m.clstm.psi = static_cast<T>(cfg.psi);
  m.readout = cfg.readout == "candidate" ? Readout::candidate_embedding : Readout::output_gate;
  m.time_combine = cfg.time_combine == "sum" ? TimeCombine::sum : TimeCombine::mean;
  m.clstm.tanh_update = cfg.tanh_update;
  m.validate();
  return m;
}

template <typename T>
class Trainer {
 public:
  Trainer(const Dataset& ds, const TrainConfig& cfg)
      : ds_(&ds),
        cfg_(cfg),
        model_(model_from_config<T>(ds, cfg)),
        opt_(model_, cfg.lr, cfg.weight_decay),
        rng_(cfg.seed),
        train_index_(std::span<const Quadruple>(ds.train)) {
    cfg_.validate();
    if (ds.train.empty()) throw data_error("training split is empty");
    model_.init(rng_);
    horizon_ = cfg_.t_max > 0 ? cfg_.t_max : max_inter_occurrence_gap(ds.train);
    if (!(horizon_ > 0)) horizon_ = 1.0;
    histories_.reserve(ds.train.size());
    for (const Quadruple& q : ds.train) {
      histories_.push_back({train_index_.history_for(Direction::subject_side, q.subject,
                                                     q.predicate, q.time, cfg_.max_history),
                            train_index_.history_for(Direction::object_side, q.object,
                                                     q.predicate, q.time, cfg_.max_history)});
    }
  }

  ModelParams<T>& model() { return model_; }
  double horizon() const { return horizon_; }
  const std::vector<EpochStats>& history() const { return history_; }

  void set_data_path(const std::string& p) { data_path_ = p; }

  // Restores parameters, optimizer moments, RNG state, and epoch counter;
  // continuing from here reproduces an uninterrupted run bitwise, provided
  // config and thread count are unchanged.
  void resume_from(const std::filesystem::path& dir) {
    IniFile mf = IniFile::parse_file(dir / "manifest.ini");
    load_model_tensors(dir / "params", model_);
    opt_.load(dir / "adam");
    opt_.set_steps(mf.get_int("state", "adam_steps", 0));
    rng_.set_state(mf.require("state", "rng"));
    start_epoch_ = static_cast<std::size_t>(mf.get_int("state", "epoch", 0));
    best_val_ = mf.get_double("state", "best_val_mrr", -1);
    best_epoch_ = static_cast<std::size_t>(mf.get_int("state", "best_epoch", 0));
    horizon_ = mf.get_double("state", "horizon", horizon_);
    history_.clear();
    if (const auto* rows = mf.section("history")) {
      for (const auto& [k, v] : *rows) {
        EpochStats st;
        st.epoch = static_cast<std::size_t>(std::stoull(k.substr(1)));
        std::istringstream ls(v);
        std::string val;
        ls >> st.link_loss >> st.time_loss >> val >> st.seconds;
        st.val_mrr = val == "n/a" ? -1 : std::stod(val);
        history_.push_back(st);
      }
    }
  }

  TrainOutcome run(const std::filesystem::path& run_dir, std::ostream* echo = nullptr) {
    std::filesystem::create_directories(run_dir);
    std::ofstream log(run_dir / "log.txt",
                      start_epoch_ ? std::ios::app : std::ios::trunc);
    if (!log) throw data_error("cannot write " + (run_dir / "log.txt").string());
    std::vector<std::size_t> perm(ds_->train.size());

    for (std::size_t epoch = start_epoch_ + 1; epoch <= cfg_.epochs; ++epoch) {
      auto t0 = std::chrono::steady_clock::now();
      // Shuffling a fresh identity permutation makes each epoch's batch order
      // a function of the RNG state alone, so resumed runs reproduce it.
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng_.shuffle(perm);
      double link_sum = 0, time_sum = 0;
      for (std::size_t off = 0; off < perm.size(); off += cfg_.batch_size) {
        std::size_t len = std::min(cfg_.batch_size, perm.size() - off);
        batch_step(std::span<const std::size_t>(perm.data() + off, len), epoch, off, run_dir,
                   &link_sum, &time_sum);
      }
      EpochStats st;
      st.epoch = epoch;
      st.link_loss = link_sum / static_cast<double>(perm.size());
      st.time_loss = time_sum / static_cast<double>(perm.size());
      if (!ds_->valid.empty()) st.val_mrr = validation_mrr();
      st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      history_.push_back(st);
      std::string line = format_epoch_line(st);
      log << line << '\n' << std::flush;
      if (echo) *echo << line << '\n' << std::flush;

      save_checkpoint(run_dir / "last");
      if (st.val_mrr > best_val_) {
        best_val_ = st.val_mrr;
        best_epoch_ = epoch;
        save_checkpoint(run_dir / "best");
      }
    }

    TrainOutcome out;
    out.history = history_;
    out.best_epoch = best_epoch_;
    out.best_val_mrr = best_val_;
    out.last_dir = run_dir / "last";
    out.best_dir = std::filesystem::exists(run_dir / "best") ? run_dir / "best" : out.last_dir;
    return out;
  }

  void save_checkpoint(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    IniFile mf;
    model_meta_to_ini(model_, mf);
    cfg_.to_ini(mf);
    if (!data_path_.empty()) {
      mf.set("data", "path", data_path_);
      mf.set("data", "time_scale", cfg_.time_scale);
    }
    mf.set("state", "epoch",
           static_cast<std::int64_t>(history_.empty() ? 0 : history_.back().epoch));
    mf.set("state", "adam_steps", opt_.steps());
    mf.set("state", "rng", rng_.state());
    mf.set("state", "best_val_mrr", best_val_);
    mf.set("state", "best_epoch", static_cast<std::int64_t>(best_epoch_));
    mf.set("state", "horizon", horizon_);
    for (const EpochStats& st : history_) {
      std::ostringstream v;
      v << std::setprecision(17) << st.link_loss << ' ' << st.time_loss << ' ';
      if (st.val_mrr < 0)
        v << "n/a";
      else
        v << st.val_mrr;
      v << ' ' << st.seconds;
      mf.set("history", "e" + std::to_string(st.epoch), v.str());
    }
    mf.save(dir / "manifest.ini");
    save_model_tensors(dir / "params", model_);
    opt_.save(dir / "adam");
  }

 private:
  void batch_step(std::span<const std::size_t> batch, std::size_t epoch, std::size_t offset,
                  const std::filesystem::path& run_dir, double* link_sum, double* time_sum) {
    model_.zero_grads();
    unsigned threads = cfg_.threads ? cfg_.threads : default_thread_count();
    std::vector<GradStore<T>> stores(threads);
    std::vector<double> link_parts(threads, 0), time_parts(threads, 0);
    parallel_chunks(batch.size(), threads, [&](unsigned w, std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const Quadruple& q = ds_->train[batch[i]];
        const auto& [hsp, hop] = histories_[batch[i]];
        Tape<T> tape;
        ModelRef<T> m(tape, model_);
        QueryLossParts parts;
        Var<T> loss = query_total_loss(m, q, hsp, hop, cfg_.nu, horizon_, cfg_.grid_points,
                                       cfg_.renormalize, &parts);
        tape.backward(loss);
        tape.accumulate_grads(stores[w]);
        link_parts[w] += parts.link;
        time_parts[w] += parts.time;
      }
    });
    double batch_link = 0, batch_time = 0;
    for (unsigned w = 0; w < threads; ++w) {
      stores[w].flush_to_params();
      batch_link += link_parts[w];
      batch_time += time_parts[w];
    }
    *link_sum += batch_link;
    *time_sum += batch_time;
    double norm = clip_gradients(model_, cfg_.clip_norm);
    if (!std::isfinite(batch_link) || !std::isfinite(batch_time) || !std::isfinite(norm)) {
      dump_diagnostics(run_dir, epoch, offset, batch_link, batch_time, norm);
      throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch offset " +
                          std::to_string(offset) + " (see diagnostics.txt)");
    }
    opt_.step();
  }

  double validation_mrr() {
    EvalConfig ec;
    ec.split = "valid";
    ec.protocol = Protocol::time_aware;
    ec.with_time = false;
    ec.max_history = cfg_.max_history;
    ec.threads = cfg_.threads;
    return evaluate(model_, *ds_, ec).link.mrr;
  }

  void dump_diagnostics(const std::filesystem::path& run_dir, std::size_t epoch,
                        std::size_t offset, double link, double time, double norm) {
    std::ofstream out(run_dir / "diagnostics.txt");
    out << "non-finite loss\n";
    out << "epoch " << epoch << "\nbatch_offset " << offset << "\n";
    out << "batch_link_loss " << link << "\nbatch_time_loss " << time << "\n";
    out << "grad_norm " << norm << "\n";
    model_.for_each_parameter([&](Parameter<T>& p) {
      double vs = 0, gs = 0;
      for (T v : p.value.data) vs += static_cast<double>(v) * static_cast<double>(v);
      for (T g : p.grad.data) gs += static_cast<double>(g) * static_cast<double>(g);
      out << p.name << " value_norm " << std::sqrt(vs) << " grad_norm " << std::sqrt(gs) << "\n";
    });
  }

  const Dataset* ds_;
  TrainConfig cfg_;
  ModelParams<T> model_;
  AdamW<T> opt_;
  Rng rng_;
  SliceIndex train_index_;
  std::vector<std::pair<HistorySequence, HistorySequence>> histories_;
  double horizon_ = 1.0;
  std::size_t start_epoch_ = 0;
  std::vector<EpochStats> history_;
  double best_val_ = -1;
  std::size_t best_epoch_ = 0;
  std::string data_path_;
};

// Reads a checkpoint for inference: model meta + tensors + the echoed
// training config.
template <typename T>
struct LoadedCheckpoint {
  ModelParams<T> model;
  TrainConfig config;
  std::size_t epoch = 0;
  IniFile manifest;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  IniFile mf = IniFile::parse_file(dir / "manifest.ini");
  LoadedCheckpoint<T> out{model_from_meta<T>(mf), TrainConfig::from_ini(mf),
                          static_cast<std::size_t>(mf.get_int("state", "epoch", 0)),
                          std::move(mf)};
  load_model_tensors(dir / "params", out.model);
  return out;
}

}  // namespace ghnn
