// ghnn: train, evaluate, and query self-exciting event models over temporal
// knowledge graphs, plus synthetic dataset generation.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ghnn/ghnn.hpp"

namespace fs = std::filesystem;
using Model = ghnn::ModelParams<float>;

namespace {

std::int32_t resolve_id(const std::string& tok, const std::vector<std::string>& names,
                        std::int32_t count, const char* kind) {
  try {
    std::size_t pos = 0;
    long v = std::stol(tok, &pos);
    if (pos == tok.size()) {
      if (v < 0 || v >= count)
        throw ghnn::data_error(std::string(kind) + " id out of range: " + tok);
      return static_cast<std::int32_t>(v);
    }
  } catch (const ghnn::data_error&) {
    throw;
  } catch (const std::exception&) {
  }
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == tok) return static_cast<std::int32_t>(i);
  throw ghnn::data_error(std::string("unknown ") + kind + ": " + tok);
}

std::string name_or_id(std::int32_t id, const std::vector<std::string>& names) {
  if (static_cast<std::size_t>(id) < names.size() && !names[static_cast<std::size_t>(id)].empty())
    return names[static_cast<std::size_t>(id)];
  return std::to_string(id);
}

std::vector<std::string> split_query(const std::string& q) {
  std::istringstream is(q);
  std::vector<std::string> toks;
  std::string t;
  while (is >> t) toks.push_back(t);
  if (toks.size() != 4)
    throw std::invalid_argument("query must have 4 fields, e.g. \"12 3 ? 40\"");
  return toks;
}

// Dataset location: explicit flag, else the path echoed into the checkpoint.
ghnn::Dataset load_data_for(const ghnn::LoadedCheckpoint<float>& ck, const std::string& data_flag) {
  std::string dir = data_flag;
  if (dir.empty()) dir = ck.manifest.get("data", "path", "");
  if (dir.empty())
    throw ghnn::data_error("no dataset: pass --data (checkpoint records no data path)");
  double scale = ck.manifest.get_double("data", "time_scale", ck.config.time_scale);
  ghnn::Dataset ds = ghnn::load_dataset(dir, scale);
  if (static_cast<std::size_t>(ds.vocab.entity_count) != ck.model.num_entities ||
      static_cast<std::size_t>(ds.vocab.predicate_count) != ck.model.num_predicates)
    throw ghnn::data_error("checkpoint and dataset vocabulary sizes do not match");
  return ds;
}

ghnn::SliceIndex history_index(const ghnn::Dataset& ds, bool all_splits) {
  if (all_splits)
    return ghnn::SliceIndex({std::span<const ghnn::Quadruple>(ds.train),
                             std::span<const ghnn::Quadruple>(ds.valid),
                             std::span<const ghnn::Quadruple>(ds.test)});
  return ghnn::SliceIndex(std::span<const ghnn::Quadruple>(ds.train));
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Self-exciting event model over temporal knowledge graphs"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "Train a model and write a run directory");
  std::string tr_data, tr_out, tr_config, tr_resume;
  ghnn::TrainConfig defaults;
  double lr = defaults.lr, weight_decay = defaults.weight_decay, nu = defaults.nu;
  double sps = defaults.s, psi = defaults.psi, t_max = defaults.t_max;
  double time_scale = defaults.time_scale, clip_norm = defaults.clip_norm;
  std::size_t batch_size = defaults.batch_size, epochs = defaults.epochs;
  std::size_t history_len = defaults.max_history, embed_dim = defaults.r,
              hidden_dim = defaults.d;
  std::size_t grid_points = defaults.grid_points, eval_grid_points = defaults.eval_grid_points;
  std::uint64_t seed = defaults.seed;
  unsigned threads = defaults.threads;
  std::string readout = defaults.readout, time_combine = defaults.time_combine;
  bool tanh_update = false, no_renorm = false;

  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--out", tr_out, "run directory to create")->required();
  train->add_option("--config", tr_config, "config file ([train] section); flags override");
  train->add_option("--resume", tr_resume, "checkpoint directory to resume from");
  auto* o_lr = train->add_option("--lr", lr, "learning rate");
  auto* o_bs = train->add_option("--batch-size", batch_size, "quadruples per optimizer step");
  auto* o_wd = train->add_option("--weight-decay", weight_decay, "decoupled weight decay");
  auto* o_ep = train->add_option("--epochs", epochs, "training epochs");
  auto* o_nu = train->add_option("--nu", nu, "time-loss weight");
  auto* o_hl = train->add_option("--history-len", history_len, "max history groups per query");
  auto* o_ed = train->add_option("--embed-dim", embed_dim, "entity/predicate embedding width");
  auto* o_hd = train->add_option("--hidden-dim", hidden_dim, "recurrent cell width");
  auto* o_s = train->add_option("--softplus-scale", sps, "intensity softplus scale");
  auto* o_psi = train->add_option("--decay-scale", psi, "decay-gate softplus scale");
  auto* o_tm = train->add_option("--t-max", t_max, "time-expectation horizon (0 = from data)");
  auto* o_gp = train->add_option("--grid-points", grid_points, "training quadrature nodes");
  auto* o_egp = train->add_option("--eval-grid-points", eval_grid_points,
                                  "evaluation quadrature nodes");
  auto* o_cn = train->add_option("--clip-norm", clip_norm, "global gradient-norm clip");
  auto* o_seed = train->add_option("--seed", seed, "RNG seed");
  auto* o_thr = train->add_option("--threads", threads, "worker threads (0 = cores)");
  auto* o_ts = train->add_option("--time-scale", time_scale, "timestamp multiplier at load");
  auto* o_ro = train->add_option("--readout", readout, "hidden readout: gate | candidate")
                   ->check(CLI::IsMember({"gate", "candidate"}));
  auto* o_tc = train
                   ->add_option("--time-branch-combine", time_combine,
                                "combine subject/object intensities: mean | sum")
                   ->check(CLI::IsMember({"mean", "sum"}));
  auto* o_tu = train->add_flag("--tanh-update", tanh_update, "tanh update gate (default sigmoid)");
  auto* o_nr = train->add_flag("--no-renormalize", no_renorm,
                               "skip truncated-density renormalization");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ck, ev_data, ev_split = "test", ev_protocol = "time-aware", ev_dump, ev_report;
  std::size_t ev_grid = 0;
  double ev_tmax = 0;
  unsigned ev_threads = 0;
  bool ev_no_time = false, ev_train_hist = false;
  eval->add_option("--checkpoint", ev_ck, "checkpoint directory")->required();
  eval->add_option("--data", ev_data, "dataset directory (default: recorded in checkpoint)");
  eval->add_option("--split", ev_split, "train | valid | test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_option("--protocol", ev_protocol, "raw | static | time-aware")
      ->check(CLI::IsMember({"raw", "static", "time-aware"}));
  eval->add_option("--dump", ev_dump, "per-query TSV output file");
  eval->add_option("--report", ev_report, "metric report output file");
  eval->add_option("--grid-points", ev_grid, "time quadrature nodes");
  eval->add_option("--t-max", ev_tmax, "time-expectation horizon (0 = from data)");
  eval->add_option("--threads", ev_threads, "worker threads (0 = cores)");
  eval->add_flag("--no-time", ev_no_time, "skip time prediction metrics");
  eval->add_flag("--train-histories-only", ev_train_hist,
                 "restrict query histories to the train split");

  // ---- predict-link ----
  auto* plink = app.add_subcommand("predict-link", "Rank candidates for one query");
  std::string pl_ck, pl_data, pl_query;
  std::size_t pl_top = 10;
  bool pl_all_hist = false;
  plink->add_option("--checkpoint", pl_ck, "checkpoint directory")->required();
  plink->add_option("--data", pl_data, "dataset directory (default: recorded in checkpoint)");
  plink->add_option("--query", pl_query, "\"s p ? t\" or \"? p o t\" (ids or names)")
      ->required();
  plink->add_option("--top", pl_top, "rows to print");
  plink->add_flag("--all-split-histories", pl_all_hist,
                  "draw history from all splits (default: train only)");

  // ---- predict-time ----
  auto* ptime = app.add_subcommand("predict-time", "Expected next occurrence time of a fact");
  std::string pt_ck, pt_data, pt_query, pt_curve;
  std::size_t pt_grid = 0;
  double pt_tmax = 0;
  bool pt_all_hist = false;
  ptime->add_option("--checkpoint", pt_ck, "checkpoint directory")->required();
  ptime->add_option("--data", pt_data, "dataset directory (default: recorded in checkpoint)");
  ptime->add_option("--query", pt_query, "\"s p o ?\" (ids or names)")->required();
  ptime->add_option("--curve", pt_curve, "write the density curve CSV here");
  ptime->add_option("--grid-points", pt_grid, "quadrature nodes");
  ptime->add_option("--t-max", pt_tmax, "horizon (0 = from data)");
  ptime->add_flag("--all-split-histories", pt_all_hist,
                  "draw history from all splits (default: train only)");

  // ---- make-synth ----
  auto* synth = app.add_subcommand("make-synth", "Generate a synthetic dataset");
  ghnn::SynthSpec spec;
  std::string sy_mode = "periodic", sy_out;
  synth->add_option("--mode", sy_mode, "periodic | hawkes")
      ->check(CLI::IsMember({"periodic", "hawkes"}));
  synth->add_option("--out", sy_out, "output dataset directory")->required();
  synth->add_option("--entities", spec.n_entities, "entity vocabulary size");
  synth->add_option("--predicates", spec.n_predicates, "predicate vocabulary size");
  synth->add_option("--events", spec.n_events, "approximate total event count");
  synth->add_option("--types", spec.n_types, "recurring patterns (0 = entities)");
  synth->add_option("--seed", spec.seed, "RNG seed");
  synth->add_option("--mu", spec.mu, "hawkes base rate");
  synth->add_option("--alpha", spec.alpha, "hawkes excitation");
  synth->add_option("--beta", spec.beta, "hawkes kernel decay");
  synth->add_option("--tick", spec.tick, "timestamp discretization step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);  // prints help text or the usage error
    return rc == 0 ? 0 : 2;
  }

  if (*train) {
    ghnn::TrainConfig cfg;
    if (!tr_config.empty()) cfg = ghnn::TrainConfig::from_ini(ghnn::IniFile::parse_file(tr_config));
    auto ovr = [](const CLI::Option* o, auto& dst, const auto& src) {
      if (o->count()) dst = src;
    };
    ovr(o_lr, cfg.lr, lr);
    ovr(o_bs, cfg.batch_size, batch_size);
    ovr(o_wd, cfg.weight_decay, weight_decay);
    ovr(o_ep, cfg.epochs, epochs);
    ovr(o_nu, cfg.nu, nu);
    ovr(o_hl, cfg.max_history, history_len);
    ovr(o_ed, cfg.r, embed_dim);
    ovr(o_hd, cfg.d, hidden_dim);
    ovr(o_s, cfg.s, sps);
    ovr(o_psi, cfg.psi, psi);
    ovr(o_tm, cfg.t_max, t_max);
    ovr(o_gp, cfg.grid_points, grid_points);
    ovr(o_egp, cfg.eval_grid_points, eval_grid_points);
    ovr(o_cn, cfg.clip_norm, clip_norm);
    ovr(o_seed, cfg.seed, seed);
    ovr(o_thr, cfg.threads, threads);
    ovr(o_ts, cfg.time_scale, time_scale);
    ovr(o_ro, cfg.readout, readout);
    ovr(o_tc, cfg.time_combine, time_combine);
    if (o_tu->count()) cfg.tanh_update = tanh_update;
    if (o_nr->count()) cfg.renormalize = !no_renorm;
    cfg.validate();

    ghnn::Dataset ds = ghnn::load_dataset(tr_data, cfg.time_scale);
    fs::create_directories(tr_out);
    ghnn::IniFile echo;
    cfg.to_ini(echo);
    echo.set("data", "path", fs::absolute(tr_data).string());
    echo.set("data", "time_scale", cfg.time_scale);
    echo.save(fs::path(tr_out) / "config.ini");

    ghnn::Trainer<float> trainer(ds, cfg);
    trainer.set_data_path(fs::absolute(tr_data).string());
    if (!tr_resume.empty()) trainer.resume_from(tr_resume);
    ghnn::TrainOutcome out = trainer.run(tr_out, &std::cout);
    std::cout << "best_epoch=" << out.best_epoch << " best_val_mrr=";
    if (out.best_val_mrr < 0)
      std::cout << "n/a";
    else
      std::cout << std::fixed << std::setprecision(6) << out.best_val_mrr;
    std::cout << " checkpoint=" << out.best_dir.string() << "\n";
    return 0;
  }

  if (*eval) {
    auto ck = ghnn::load_checkpoint<float>(ev_ck);
    ghnn::Dataset ds = load_data_for(ck, ev_data);
    ghnn::EvalConfig ec;
    ec.split = ev_split;
    ec.protocol = ghnn::protocol_from_string(ev_protocol);
    ec.max_history = ck.config.max_history;
    ec.horizon = ev_tmax > 0 ? ev_tmax : ck.config.t_max;
    ec.grid_points = ev_grid ? ev_grid : ck.config.eval_grid_points;
    ec.renormalize = ck.config.renormalize;
    ec.with_time = !ev_no_time;
    ec.histories_from_all_splits = !ev_train_hist;
    ec.threads = ev_threads;
    ghnn::EvalReport report = ghnn::evaluate(ck.model, ds, ec);
    std::string text = ghnn::format_metric_report(report);
    std::cout << text;
    if (!ev_report.empty()) {
      std::ofstream f(ev_report);
      if (!f) throw ghnn::data_error("cannot write " + ev_report);
      f << text;
    }
    if (!ev_dump.empty()) ghnn::write_query_dump(ev_dump, report);
    return 0;
  }

  if (*plink) {
    auto ck = ghnn::load_checkpoint<float>(pl_ck);
    ghnn::Dataset ds = load_data_for(ck, pl_data);
    auto toks = split_query(pl_query);
    double t = 0;
    try {
      t = std::stod(toks[3]);
    } catch (const std::exception&) {
      throw std::invalid_argument("query timestamp must be a number: " + toks[3]);
    }
    bool subject_query = toks[0] == "?";
    if (subject_query == (toks[2] == "?"))
      throw std::invalid_argument("exactly one of subject/object must be ?");
    std::int32_t pred =
        resolve_id(toks[1], ds.vocab.predicate_names, ds.vocab.predicate_count, "predicate");
    ghnn::Direction dir =
        subject_query ? ghnn::Direction::object_side : ghnn::Direction::subject_side;
    std::int32_t anchor = resolve_id(subject_query ? toks[2] : toks[0], ds.vocab.entity_names,
                                     ds.vocab.entity_count, "entity");

    ghnn::SliceIndex index = history_index(ds, pl_all_hist);
    ghnn::HistorySequence hist =
        index.history_for(dir, anchor, pred, t, ck.config.max_history);
    if (hist.empty() && !index.sequence(dir, anchor, pred).empty())
      throw std::invalid_argument("query precedes history for this (entity, predicate) pair");

    ghnn::Tape<float> tape;
    ghnn::ModelRef<float> m(tape, ck.model);
    ghnn::EncodedHistory<float> enc = ghnn::encode_history(m, hist);
    const std::vector<float>& scores = ghnn::intensity_all(m, enc, t).val().data;
    double total = 0;
    for (float v : scores) total += v;
    std::vector<std::int32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    std::cout << "rank\tentity\tintensity\tprobability\n";
    std::cout << std::setprecision(6) << std::fixed;
    for (std::size_t i = 0; i < order.size() && i < pl_top; ++i) {
      std::int32_t id = order[i];
      std::cout << i + 1 << '\t' << name_or_id(id, ds.vocab.entity_names) << '\t'
                << scores[static_cast<std::size_t>(id)] << '\t'
                << scores[static_cast<std::size_t>(id)] / total << '\n';
    }
    return 0;
  }

  if (*ptime) {
    auto ck = ghnn::load_checkpoint<float>(pt_ck);
    ghnn::Dataset ds = load_data_for(ck, pt_data);
    auto toks = split_query(pt_query);
    if (toks[3] != "?") throw std::invalid_argument("predict-time query must end with ?");
    std::int32_t s = resolve_id(toks[0], ds.vocab.entity_names, ds.vocab.entity_count, "entity");
    std::int32_t pred =
        resolve_id(toks[1], ds.vocab.predicate_names, ds.vocab.predicate_count, "predicate");
    std::int32_t o = resolve_id(toks[2], ds.vocab.entity_names, ds.vocab.entity_count, "entity");

    ghnn::SliceIndex index = history_index(ds, pt_all_hist);
    double inf = std::numeric_limits<double>::infinity();
    ghnn::HistorySequence hist_sp =
        index.history_for(ghnn::Direction::subject_side, s, pred, inf, ck.config.max_history);
    ghnn::HistorySequence hist_op =
        index.history_for(ghnn::Direction::object_side, o, pred, inf, ck.config.max_history);

    double horizon = pt_tmax > 0 ? pt_tmax : ck.config.t_max;
    if (!(horizon > 0)) horizon = ghnn::max_inter_occurrence_gap(ds.train);
    if (!(horizon > 0)) horizon = 1.0;
    std::size_t grid = pt_grid ? pt_grid : ck.config.eval_grid_points;

    ghnn::Tape<float> tape;
    ghnn::ModelRef<float> m(tape, ck.model);
    ghnn::EncodedHistory<float> enc_sp = ghnn::encode_history(m, hist_sp);
    ghnn::EncodedHistory<float> enc_op = ghnn::encode_history(m, hist_op);
    auto td = ghnn::time_density_and_expectation(m, enc_sp, enc_op, s, o, horizon, grid,
                                                 ck.config.renormalize);
    double t_last = std::max(enc_sp.t_last_or(0.0), enc_op.t_last_or(0.0));
    std::cout << std::setprecision(6) << std::fixed;
    std::cout << "t_last=" << t_last << " expected_t=" << td.t_hat.item()
              << " mass=" << td.mass.item() << "\n";
    if (!pt_curve.empty()) {
      std::ofstream f(pt_curve);
      if (!f) throw ghnn::data_error("cannot write " + pt_curve);
      f << std::setprecision(10);
      for (std::size_t i = 0; i < td.grid.size(); ++i)
        f << td.grid[i] << ',' << td.density[i] << '\n';
    }
    return 0;
  }

  // make-synth
  spec.mode = sy_mode == "hawkes" ? ghnn::SynthSpec::Mode::hawkes : ghnn::SynthSpec::Mode::periodic;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ghnn::data_error(e.what());
  }
  ghnn::Dataset ds = ghnn::generate(spec);
  ghnn::save_dataset(sy_out, ds);
  std::cout << "entities=" << ds.vocab.entity_count << " predicates=" << ds.vocab.predicate_count
            << " train=" << ds.train.size() << " valid=" << ds.valid.size()
            << " test=" << ds.test.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ghnn::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const ghnn::data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
