// Experiment runner: dataset generation, strategy training, ablation sweeps
// and scatter export for the semi-supervised BMD-style regressor.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssreg/checkpoint.hpp"
#include "ssreg/data.hpp"
#include "ssreg/evaluate.hpp"
#include "ssreg/metrics.hpp"
#include "ssreg/net.hpp"
#include "ssreg/ssl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssreg;

namespace {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "out";
  std::string data_dir;  // defaults to <output_dir>/dataset
  SplitSpec split;
  SynthOptions synth;
  AugmentConfig augment;
  StrategyConfig strategy;
  std::string strategy_name = "proposed";
  NetConfig net;
};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + key + "' in " + ctx);
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

ExperimentConfig parse_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in " + path.string() + ": " + e.what());
  }

  ExperimentConfig c;
  check_keys(j, {"seed", "seeds", "output_dir", "data_dir", "dataset", "augment",
                 "strategy", "net"},
             "top level");
  get_to(j, "seed", c.seed);
  get_to(j, "seeds", c.seeds);
  get_to(j, "output_dir", c.output_dir);
  get_to(j, "data_dir", c.data_dir);

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d, {"train_labeled", "unlabeled", "validation", "test", "size",
                   "texture_noise", "clutter", "noise_sigma"},
               "dataset");
    get_to(d, "train_labeled", c.split.train_labeled);
    get_to(d, "unlabeled", c.split.unlabeled);
    get_to(d, "validation", c.split.validation);
    get_to(d, "test", c.split.test);
    get_to(d, "size", c.synth.size);
    get_to(d, "texture_noise", c.synth.texture_noise);
    get_to(d, "clutter", c.synth.clutter);
    get_to(d, "noise_sigma", c.synth.noise_sigma);
  }
  if (j.contains("augment")) {
    const json& a = j["augment"];
    check_keys(a, {"max_rotation_deg", "max_translation", "scale_min", "scale_max",
                   "brightness", "contrast_min", "contrast_max", "flip_prob"},
               "augment");
    get_to(a, "max_rotation_deg", c.augment.max_rotation_deg);
    get_to(a, "max_translation", c.augment.max_translation);
    get_to(a, "scale_min", c.augment.scale_min);
    get_to(a, "scale_max", c.augment.scale_max);
    get_to(a, "brightness", c.augment.brightness);
    get_to(a, "contrast_min", c.augment.contrast_min);
    get_to(a, "contrast_max", c.augment.contrast_max);
    get_to(a, "flip_prob", c.augment.flip_prob);
  }
  if (j.contains("strategy")) {
    const json& s = j["strategy"];
    check_keys(s, {"name", "lambda_triplet", "lambda_consistency", "margin",
                   "adaptive_triplet", "te_decay", "mt_decay", "lr_pretrain", "lr_finetune",
                   "weight_decay", "batch_size", "pretrain_epochs", "finetune_epochs",
                   "triplet_on_pseudo", "warm_start_gate"},
               "strategy");
    get_to(s, "name", c.strategy_name);
    get_to(s, "lambda_triplet", c.strategy.lambda_triplet);
    get_to(s, "lambda_consistency", c.strategy.lambda_consistency);
    get_to(s, "margin", c.strategy.margin);
    get_to(s, "adaptive_triplet", c.strategy.adaptive_triplet);
    get_to(s, "te_decay", c.strategy.te_decay);
    get_to(s, "mt_decay", c.strategy.mt_decay);
    get_to(s, "lr_pretrain", c.strategy.lr_pretrain);
    get_to(s, "lr_finetune", c.strategy.lr_finetune);
    get_to(s, "weight_decay", c.strategy.weight_decay);
    get_to(s, "batch_size", c.strategy.batch_size);
    get_to(s, "pretrain_epochs", c.strategy.pretrain_epochs);
    get_to(s, "finetune_epochs", c.strategy.finetune_epochs);
    get_to(s, "triplet_on_pseudo", c.strategy.triplet_on_pseudo);
    get_to(s, "warm_start_gate", c.strategy.warm_start_gate);
  }
  if (j.contains("net")) {
    const json& n = j["net"];
    check_keys(n, {"height", "width", "conv1_channels", "conv2_channels", "input_mean",
                   "input_scale", "head_bias_init", "head_init_scale"},
               "net");
    get_to(n, "height", c.net.height);
    get_to(n, "width", c.net.width);
    get_to(n, "conv1_channels", c.net.conv1_channels);
    get_to(n, "conv2_channels", c.net.conv2_channels);
    get_to(n, "input_mean", c.net.input_mean);
    get_to(n, "input_scale", c.net.input_scale);
    get_to(n, "head_bias_init", c.net.head_bias_init);
    get_to(n, "head_init_scale", c.net.head_init_scale);
  }
  if (c.data_dir.empty()) c.data_dir = c.output_dir + "/dataset";
  return c;
}

json resolved_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["data_dir"] = c.data_dir;
  j["dataset"] = {{"train_labeled", c.split.train_labeled}, {"unlabeled", c.split.unlabeled},
                  {"validation", c.split.validation},       {"test", c.split.test},
                  {"size", c.synth.size},                   {"texture_noise", c.synth.texture_noise},
                  {"clutter", c.synth.clutter},             {"noise_sigma", c.synth.noise_sigma}};
  j["augment"] = {{"max_rotation_deg", c.augment.max_rotation_deg},
                  {"max_translation", c.augment.max_translation},
                  {"scale_min", c.augment.scale_min},
                  {"scale_max", c.augment.scale_max},
                  {"brightness", c.augment.brightness},
                  {"contrast_min", c.augment.contrast_min},
                  {"contrast_max", c.augment.contrast_max},
                  {"flip_prob", c.augment.flip_prob}};
  j["strategy"] = {{"name", c.strategy_name},
                   {"lambda_triplet", c.strategy.lambda_triplet},
                   {"lambda_consistency", c.strategy.lambda_consistency},
                   {"margin", c.strategy.margin},
                   {"adaptive_triplet", c.strategy.adaptive_triplet},
                   {"te_decay", c.strategy.te_decay},
                   {"mt_decay", c.strategy.mt_decay},
                   {"lr_pretrain", c.strategy.lr_pretrain},
                   {"lr_finetune", c.strategy.lr_finetune},
                   {"weight_decay", c.strategy.weight_decay},
                   {"batch_size", c.strategy.batch_size},
                   {"pretrain_epochs", c.strategy.pretrain_epochs},
                   {"finetune_epochs", c.strategy.finetune_epochs},
                   {"triplet_on_pseudo", c.strategy.triplet_on_pseudo},
                   {"warm_start_gate", c.strategy.warm_start_gate}};
  j["net"] = {{"height", c.net.height},
              {"width", c.net.width},
              {"conv1_channels", c.net.conv1_channels},
              {"conv2_channels", c.net.conv2_channels},
              {"input_mean", c.net.input_mean},
              {"input_scale", c.net.input_scale},
              {"head_bias_init", c.net.head_bias_init},
              {"head_init_scale", c.net.head_init_scale}};
  return j;
}

void echo_config(const ExperimentConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir / "resolved_config.json");
  f << resolved_json(c).dump(2) << "\n";
}

Dataset load_dataset(const ExperimentConfig& c) {
  const fs::path dir = c.data_dir;
  for (const char* name : {"train_labeled.csv", "unlabeled.csv", "validation.csv", "test.csv"})
    if (!fs::exists(dir / name))
      throw DataError("dataset not found at " + dir.string() + " (missing " + name +
                      "); run the generate subcommand first");
  Dataset ds;
  ds.train_labeled = load_manifest(dir / "train_labeled.csv");
  ds.unlabeled = load_manifest(dir / "unlabeled.csv");
  ds.validation = load_manifest(dir / "validation.csv");
  ds.test = load_manifest(dir / "test.csv");
  return ds;
}

int cmd_generate(const ExperimentConfig& c, bool force) {
  const fs::path dir = c.data_dir;
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw DataError("output directory " + dir.string() + " is not empty (use --force)");
  fs::create_directories(dir);

  SplitSpec spec = c.split;
  spec.seed = c.seed;
  const Dataset ds = make_splits(spec, c.synth);
  write_manifest(ds.train_labeled, dir / "train_labeled.csv");
  write_manifest(ds.unlabeled, dir / "unlabeled.csv");
  write_manifest(ds.validation, dir / "validation.csv");
  write_manifest(ds.test, dir / "test.csv");

  std::ofstream summary(dir / "summary.txt");
  summary << "train_labeled=" << ds.train_labeled.size() << "\n"
          << "unlabeled=" << ds.unlabeled.size() << "\n"
          << "validation=" << ds.validation.size() << "\n"
          << "test=" << ds.test.size() << "\n"
          << "seed=" << c.seed << "\n";
  echo_config(c, dir);
  std::cout << "wrote dataset (" << spec.total() << " samples) to " << dir.string() << "\n";
  return 0;
}

struct StrategyRun {
  TrainResult pre;
  TrainResult fine;  // unused for "supervised"
  bool has_fine = false;
};

StrategyRun run_strategy(const std::string& name, const ExperimentConfig& c,
                         const Dataset& ds, std::uint64_t seed) {
  StrategyRun run;
  run.pre = pretrain(c.net, ds.train_labeled, ds.validation, c.strategy, c.augment,
                     derive_seed(seed, "pretrain"));
  if (name == "supervised") return run;

  const std::uint64_t fseed = derive_seed(seed, "finetune");
  run.has_fine = true;
  if (name == "proposed") {
    run.fine = self_train(c.net, run.pre.params, ds.train_labeled, ds.unlabeled,
                          ds.validation, c.strategy, c.augment, fseed);
  } else if (name == "ssl") {
    run.fine = naive_ssl(c.net, run.pre.params, ds.train_labeled, ds.unlabeled,
                         ds.validation, c.strategy, c.augment, fseed);
  } else if (name == "pi_model") {
    run.fine = pi_model(c.net, run.pre.params, ds.train_labeled, ds.unlabeled, ds.validation,
                        c.strategy, c.augment, fseed);
  } else if (name == "temporal_ensembling") {
    run.fine = temporal_ensembling(c.net, run.pre.params, ds.train_labeled, ds.unlabeled,
                                   ds.validation, c.strategy, c.augment, fseed);
  } else if (name == "mean_teacher") {
    run.fine = mean_teacher(c.net, run.pre.params, ds.train_labeled, ds.unlabeled,
                            ds.validation, c.strategy, c.augment, fseed);
  } else {
    throw ConfigError("unknown strategy '" + name +
                      "' (expected supervised|proposed|ssl|pi_model|temporal_ensembling|"
                      "mean_teacher)");
  }
  return run;
}

void write_sidecar_for(const TrainResult& res, const StrategyConfig& cfg, const fs::path& path) {
  std::map<std::string, std::string> side;
  side["adam.lr"] = format_double(cfg.lr_finetune);
  side["adam.weight_decay"] = format_double(cfg.weight_decay);
  side["adam.beta1"] = "0.9";
  side["adam.beta2"] = "0.999";
  side["adam.eps"] = "1e-08";
  side["trainer.epoch"] = std::to_string(res.state.epoch);
  side["trainer.total_epochs"] = std::to_string(res.state.total_epochs);
  side["trainer.best_r"] = format_double(res.state.gate.best_r);
  side["trainer.best_mse"] = format_double(res.state.gate.best_mse);
  std::string events;
  for (int e : res.state.regeneration_epochs)
    events += (events.empty() ? "" : ";") + std::to_string(e);
  side["trainer.regeneration_epochs"] = events;
  save_sidecar(side, path);
}

int cmd_train(const ExperimentConfig& c) {
  const Dataset ds = load_dataset(c);
  const fs::path out = c.output_dir;
  fs::create_directories(out);
  echo_config(c, out);

  const StrategyRun run = run_strategy(c.strategy_name, c, ds, c.seed);

  std::vector<EpochLog> log = run.pre.log;
  if (run.has_fine) log.insert(log.end(), run.fine.log.begin(), run.fine.log.end());
  write_training_log(log, out / "train_log.csv");

  const ParamStore<float>& final_params = run.has_fine ? run.fine.params : run.pre.params;
  save_checkpoint(run.pre.params, out / "pretrained.ckpt");
  save_checkpoint(final_params, out / "final.ckpt");
  write_sidecar_for(run.pre, c.strategy, out / "pretrained.ckpt.meta");
  write_sidecar_for(run.has_fine ? run.fine : run.pre, c.strategy, out / "final.ckpt.meta");

  const ParamStore<float> calibrated = calibrate_output(c.net, final_params, ds.validation);
  save_checkpoint(calibrated, out / "calibrated.ckpt");
  const MetricsReport test_rep = evaluate(c.net, calibrated, ds.test, "test",
                                          c.strategy.pretrain_epochs + c.strategy.finetune_epochs);
  std::ofstream mf(out / "metrics.csv");
  mf << MetricsReport::csv_header() << "\n" << test_rep.csv_row() << "\n";

  std::cout << "strategy=" << c.strategy_name << " test_r="
            << (test_rep.r_value ? format_double(*test_rep.r_value) : "undefined")
            << " test_rmse=" << format_double(test_rep.rmse) << "\n";
  return 0;
}

struct Cell {
  std::string name;
  double margin = 0.5;
  bool adaptive = true;
  // table 4 switches
  bool use_atl = true;
  std::string fine_strategy;  // empty = pretrain only
  double lambda_c = 1.0;
};

MetricsReport run_cell(const Cell& cell, const ExperimentConfig& base, std::uint64_t seed) {
  ExperimentConfig c = base;
  c.seed = seed;
  c.strategy.margin = cell.margin;
  c.strategy.adaptive_triplet = cell.adaptive;
  c.strategy.lambda_triplet = cell.use_atl ? base.strategy.lambda_triplet : 0.0;
  c.strategy.lambda_consistency = cell.lambda_c;

  // The dataset is a fixture shared by every cell and seed; the seed varies
  // the training streams (init, augmentation, mining) so that per-seed cell
  // comparisons are paired rather than confounded by dataset redraws.
  const Dataset ds = make_splits(c.split, c.synth);
  const std::string strategy = cell.fine_strategy.empty() ? "supervised" : cell.fine_strategy;
  const StrategyRun run = run_strategy(strategy, c, ds, seed);
  const ParamStore<float>& params = run.has_fine ? run.fine.params : run.pre.params;
  const ParamStore<float> calibrated = calibrate_output(c.net, params, ds.validation);
  return evaluate(c.net, calibrated, ds.test, "test", 0);
}

int cmd_ablate(const ExperimentConfig& c, int table, int threads) {
  if (c.seeds.empty()) throw ConfigError("ablate: config must list at least one seed");
  const fs::path out = c.output_dir;
  fs::create_directories(out);
  echo_config(c, out);

  std::vector<Cell> cells;
  if (table == 3) {
    for (double m : {0.1, 0.3, 0.5, 0.7, 1.0}) {
      cells.push_back({"fixed_m" + format_double(m), m, false, true, "", 1.0});
      cells.push_back({"adaptive_m" + format_double(m), m, true, true, "", 1.0});
    }
  } else if (table == 4) {
    cells.push_back({"baseline", c.strategy.margin, true, false, "", 1.0});
    cells.push_back({"baseline_atl", c.strategy.margin, true, true, "", 1.0});
    cells.push_back({"ssl", c.strategy.margin, true, false, "ssl", 1.0});
    cells.push_back({"ssl_atl", c.strategy.margin, true, true, "ssl", 1.0});
    cells.push_back({"proposed_no_consistency", c.strategy.margin, true, true, "proposed", 0.0});
    cells.push_back({"proposed", c.strategy.margin, true, true, "proposed",
                     c.strategy.lambda_consistency});
  } else {
    throw ConfigError("ablate: --table must be 3 or 4");
  }

  struct Job {
    std::size_t cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::uint64_t s : c.seeds) jobs.push_back({i, s});

  std::vector<std::vector<MetricsReport>> results(cells.size());
  for (auto& r : results) r.resize(c.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex io_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      const auto seed_pos =
          std::find(c.seeds.begin(), c.seeds.end(), job.seed) - c.seeds.begin();
      results[job.cell][seed_pos] = run_cell(cells[job.cell], c, job.seed);
      std::lock_guard<std::mutex> lock(io_mutex);
      std::cout << "cell " << cells[job.cell].name << " seed " << job.seed << " done\n";
    }
  };
  threads = std::max(1, threads);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  const fs::path csv_path = out / ("ablation_table" + std::to_string(table) + ".csv");
  std::ofstream f(csv_path);
  f << "cell,margin,adaptive,median_r,median_rmse,seeds\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::vector<double> rs, rmses;
    for (const auto& rep : results[i]) {
      rs.push_back(rep.r_value.value_or(0.0));
      rmses.push_back(rep.rmse);
    }
    f << cells[i].name << "," << format_double(cells[i].margin) << ","
      << (cells[i].adaptive ? "true" : "false") << "," << format_double(median(rs)) << ","
      << format_double(median(rmses)) << "," << c.seeds.size() << "\n";
  }
  std::cout << "wrote " << csv_path.string() << "\n";
  return 0;
}

int cmd_scatter(const ExperimentConfig& c, const std::string& checkpoint,
                const std::string& split_name, const std::string& out_file) {
  if (!fs::exists(checkpoint)) throw DataError("scatter: missing checkpoint " + checkpoint);
  const Dataset ds = load_dataset(c);
  const std::vector<Sample>* split = nullptr;
  if (split_name == "test") split = &ds.test;
  else if (split_name == "validation") split = &ds.validation;
  else if (split_name == "train_labeled") split = &ds.train_labeled;
  else throw ConfigError("scatter: unknown split '" + split_name + "'");

  const ParamStore<float> params = load_checkpoint(checkpoint);
  std::vector<const Sample*> ordered;
  for (const auto& s : *split) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const Sample* a, const Sample* b) { return a->id < b->id; });

  std::ofstream f(out_file);
  if (!f) throw DataError("scatter: cannot open " + out_file);
  f << "ground_truth,prediction\n";
  for (const Sample* s : ordered) {
    if (!s->label) throw DataError("scatter: split contains unlabeled sample " + s->id);
    f << format_double(*s->label) << "," << format_double(predict(c.net, params, s->image))
      << "\n";
  }
  std::cout << "wrote " << out_file << " (" << ordered.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised regression experiments on synthetic annulus images"};
  app.require_subcommand(1);

  std::string config_path = "config.json";
  std::string strategy_override, out_override;
  std::int64_t seed_override = -1;
  int threads = 1;
  bool force = false;
  int table = 4;
  std::string checkpoint, split_name = "test", scatter_out = "scatter.csv";

  app.add_option("--config", config_path, "Experiment config (JSON)");
  app.add_option("--seed", seed_override, "Master seed override");
  app.add_option("--out", out_override, "Output directory override");

  auto* gen = app.add_subcommand("generate", "Write the synthetic dataset to disk");
  gen->add_flag("--force", force, "Overwrite a non-empty dataset directory");

  auto* train = app.add_subcommand("train", "Pre-train and run the selected strategy");
  train->add_option("--strategy", strategy_override,
                    "supervised|proposed|ssl|pi_model|temporal_ensembling|mean_teacher");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep over the seed list");
  ablate->add_option("--table", table, "3 = margin grid, 4 = component ablation");
  ablate->add_option("--threads", threads, "Parallel cells (each cell single-threaded)");

  auto* scatter = app.add_subcommand("scatter", "Export (ground_truth, prediction) CSV");
  scatter->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  scatter->add_option("--split", split_name, "test|validation|train_labeled");
  scatter->add_option("--scatter-out", scatter_out, "Output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    ExperimentConfig cfg = parse_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!out_override.empty()) {
      const bool default_data_dir = cfg.data_dir == cfg.output_dir + "/dataset";
      cfg.output_dir = out_override;
      if (default_data_dir) cfg.data_dir = cfg.output_dir + "/dataset";
    }
    if (!strategy_override.empty()) cfg.strategy_name = strategy_override;

    if (gen->parsed()) return cmd_generate(cfg, force);
    if (train->parsed()) return cmd_train(cfg);
    if (ablate->parsed()) return cmd_ablate(cfg, table, threads);
    if (scatter->parsed()) return cmd_scatter(cfg, checkpoint, split_name, scatter_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
