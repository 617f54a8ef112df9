// tpld: synth | pretrain | finetune | eval | sweep-gamma

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tpld/error.hpp"
#include "tpld/log.hpp"
#include "tpld/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tpld;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::optional<double> gamma;
  bool force = false;
  bool verbose = false;
  std::string checkpoint;
  std::string split = "test";
  std::string gammas = "0,0.1,1";
};

struct Run {
  std::string command;
  RunConfig cfg;
  fs::path out;
};

fs::path default_root() {
  const char* env = std::getenv("TPLD_OUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

Run resolve(const std::string& command, const Options& o) {
  Run r;
  r.command = command;
  r.cfg = o.config.empty() ? preset_config("micro") : load_config(o.config);
  if (o.seed) {
    const auto s = std::to_string(*o.seed);
    apply_setting(r.cfg, command == "synth" ? "synth.seed" : "train.seed", s);
  }
  if (!o.mode.empty()) apply_setting(r.cfg, "train.mode", o.mode);
  if (o.gamma) {
    std::ostringstream g;
    g.precision(17);
    g << *o.gamma;
    apply_setting(r.cfg, "loss.gamma", g.str());
  }
  r.out = o.out.empty() ? default_root() / (r.cfg.preset + "-" + to_string(r.cfg.train.mode) + "-s" +
                                            std::to_string(r.cfg.train.seed))
                        : fs::path(o.out);
  return r;
}

// Refuses to overwrite earlier outputs unless --force, in which case they are removed.
void claim(const std::vector<fs::path>& paths, bool force) {
  for (const auto& p : paths) {
    if (!fs::exists(p)) continue;
    if (!force) throw UsageError("output already exists: " + p.string() + " (pass --force to overwrite)");
    fs::remove_all(p);
  }
}

void write_manifest(const Run& r, const Options& o, const std::vector<std::string>& args) {
  Manifest m;
  m.command = r.command;
  m.config_path = o.config;
  m.seed = r.command == "synth" ? r.cfg.synth.seed : r.cfg.train.seed;
  m.out_dir = r.out.string();
  m.build = build_id();
  m.config = r.cfg.dump();
  m.args = args;
  write_text(r.out / ("manifest-" + r.command + ".json"), m.to_json());
}

PreparedData data_for(const Run& r) {
  const auto dir = r.out / "data";
  if (fs::exists(dir / "corpus.jsonl")) return read_data(r.cfg, dir);
  auto d = prepare_data(r.cfg);
  write_data(d, dir);
  return d;
}

Weights<float> load_weights(const fs::path& path, const PreparedData& data) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return load_checkpoint(path, data.model, config_hash(data.model, data.vocab)).state.weights;
}

int cmd_synth(const Run& r, const Options& o) {
  claim({r.out / "data"}, o.force);
  const auto d = prepare_data(r.cfg);
  write_data(d, r.out / "data");
  std::cout << "wrote " << d.corpus.size() << " sessions to " << (r.out / "data").string() << "\n";
  return 0;
}

int cmd_pretrain(const Run& r, const Options& o) {
  claim({r.out / "metrics.jsonl", r.out / "pretrain_stage1.ckpt", r.out / "pretrain_stage2.ckpt",
         r.out / "pretrain_stage3.ckpt", r.out / "pretrain_multitask.ckpt"},
        o.force);
  const auto data = data_for(r);
  MetricsLog log(r.out / "metrics.jsonl");
  const auto res = pretrain(r.cfg, data, log, r.out);
  if (res.checkpoints.empty()) std::cout << "mode " << to_string(r.cfg.train.mode) << " has no pre-training phases\n";
  for (const auto& p : res.checkpoints) std::cout << "checkpoint " << p.string() << "\n";
  if (res.stage1_belief_accuracy) std::cout << "stage1 held-out belief accuracy " << *res.stage1_belief_accuracy << "\n";
  return 0;
}

fs::path last_pretrain_checkpoint(const Run& r) {
  const auto schedule = make_schedule(r.cfg);
  return r.out / ("pretrain_" + phase_tag(schedule.phases.back().phase) + ".ckpt");
}

int cmd_finetune(const Run& r, const Options& o) {
  const auto data = data_for(r);
  Weights<float> init;
  if (!o.checkpoint.empty()) {
    init = load_weights(o.checkpoint, data);
  } else if (make_schedule(r.cfg).phases.empty()) {
    init = init_weights<float>(data.model, r.cfg.train.seed);
  } else {
    init = load_weights(last_pretrain_checkpoint(r), data);
  }
  claim({r.out / "finetune.ckpt", r.out / "finetune_metrics.jsonl"}, o.force);
  MetricsLog log(r.out / "finetune_metrics.jsonl");
  const auto ft = finetune(r.cfg, data, init, log);
  TrainState best;
  best.weights = ft.best.clone();
  best.phase_tag = "finetune";
  best.epoch = ft.best_epoch + 1;
  save_checkpoint(best, config_hash(data.model, data.vocab), "finetune", r.out / "finetune.ckpt");
  std::cout << "best epoch " << ft.best_epoch << " valid combined " << ft.valid_combined.at(ft.best_epoch) << "\n";
  return 0;
}

int cmd_eval(const Run& r, const Options& o) {
  if (o.split != "test" && o.split != "valid") throw UsageError("--split must be test or valid");
  const auto data = data_for(r);
  // inputs first, so a failed load leaves earlier reports alone
  const auto w = load_weights(o.checkpoint.empty() ? r.out / "finetune.ckpt" : fs::path(o.checkpoint), data);
  claim({r.out / "eval_report.json", r.out / "eval_report.txt", r.out / "predictions.jsonl"}, o.force);
  const auto& sessions = o.split == "test" ? data.split.test : data.split.valid;
  std::vector<DialogRun> runs;
  const auto report = evaluate_model(w, data.vocab, sessions, data.database, data.ontology, r.cfg.eval, &runs);
  write_text(r.out / "eval_report.json", report.to_json() + "\n");
  write_text(r.out / "eval_report.txt", report.to_table());
  write_text(r.out / "predictions.jsonl", prediction_dump(runs));
  std::cout << report.to_table();
  return 0;
}

std::vector<double> parse_gammas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--gammas: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--gammas is empty");
  return out;
}

int cmd_sweep(const Run& r, const Options& o) {
  const auto gammas = parse_gammas(o.gammas);
  claim({r.out / "sweep.tsv"}, o.force);
  for (double g : gammas) {
    std::ostringstream d;
    d << "gamma_" << g;
    claim({r.out / d.str()}, o.force);
  }
  const auto rows = gamma_sweep(r.cfg, gammas, r.out);
  const auto table = sweep_table(rows);
  write_text(r.out / "sweep.tsv", table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-progressive dialog pre-training laboratory"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration file (default: micro preset)");
    sub->add_option("--seed", o.seed, "seed override (synth: generator seed; otherwise training seed)");
    sub->add_option("--out", o.out, "output directory (default: $TPLD_OUT_ROOT/<preset>-<mode>-s<seed>)");
    sub->add_option("--mode", o.mode, "training mode override");
    sub->add_option("--gamma", o.gamma, "loss decay coefficient override")->check(CLI::Range(0.0, 1.0));
    sub->add_flag("--force", o.force, "overwrite existing outputs");
    sub->add_flag("-v,--verbose", o.verbose, "progress logging");
  };
  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus, ontology and database");
  auto* pre = app.add_subcommand("pretrain", "run the pre-training schedule");
  auto* ft = app.add_subcommand("finetune", "fine-tune and keep the best validation epoch");
  auto* ev = app.add_subcommand("eval", "generate dialogs and score them");
  auto* sweep = app.add_subcommand("sweep-gamma", "pretrain, finetune and evaluate once per gamma");
  for (auto* s : {synth, pre, ft, ev, sweep}) common(s);
  ft->add_option("--checkpoint", o.checkpoint, "initial weights (default: last pre-training checkpoint)");
  ev->add_option("--checkpoint", o.checkpoint, "weights to evaluate (default: finetune.ckpt)");
  ev->add_option("--split", o.split, "test or valid");
  sweep->add_option("--gammas", o.gammas, "comma-separated gamma values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (o.verbose) log::set_level(log::Level::kInfo);
    const auto* sub = app.get_subcommands().front();
    const auto run = resolve(sub->get_name(), o);
    fs::create_directories(run.out);
    int rc = 0;
    if (sub == synth) rc = cmd_synth(run, o);
    if (sub == pre) rc = cmd_pretrain(run, o);
    if (sub == ft) rc = cmd_finetune(run, o);
    if (sub == ev) rc = cmd_eval(run, o);
    if (sub == sweep) rc = cmd_sweep(run, o);
    write_manifest(run, o, args);
    return rc;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
}
