// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "cli/runner.h"

#include <spawn.h>
#include <sys/resource.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

#include "context/context.h"
#include "core/errors.h"
#include "data/datasets.h"
#include "engine/checkpoint.h"
#include "metrics/metrics.h"
#include "probe/feature_dump.h"

extern char** environ;

namespace contsup {

using nlohmann::json;

namespace fs = std::filesystem;

namespace {

#ifndef CONTSUP_BUILD_REF
#define CONTSUP_BUILD_REF "unknown"
#endif

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

}  // namespace

Shape dataset_input_shape(const RunConfig& cfg) {
  if (cfg.dataset.name == "toy") {
    return Shape{3, cfg.dataset.toy.image_hw, cfg.dataset.toy.image_hw};
  }
  if (cfg.dataset.name == "stl10") return Shape{3, 96, 96};
  return Shape{3, 32, 32};  // cifar10, svhn
}

int dataset_num_classes(const RunConfig&) { return 10; }

NetworkPlan plan_from_config(const RunConfig& cfg, Shape input,
                             int num_classes) {
  NetworkPlan plan;
  BackboneConfig bc;
  bc.family = cfg.backbone.family;
  bc.depth = cfg.backbone.depth;
  bc.input = input;
  bc.num_classes = num_classes;
  plan.backbone = build_backbone(bc);
  plan.partition =
      make_partition(plan.backbone, cfg.partition.k, cfg.partition.strategy);

  const ContextSpec spec = parse_context_tag(cfg.context.mode);
  const std::vector<ContextSources> sources =
      resolve_all_sources(spec, cfg.partition.k, cfg.context.per_module);
  const HeadKind head = parse_head_kind(cfg.objective.head);
  for (int l = 1; l <= cfg.partition.k; ++l) {
    ModulePlanEntry entry;
    entry.sources = sources[l - 1];
    entry.head_kind = head;
    entry.decoder_on = cfg.objective.decoder_on && l < cfg.partition.k;
    plan.modules.push_back(entry);
  }
  plan.temperature = cfg.objective.temperature;
  plan.lambda_rec = cfg.objective.lambda_rec;
  plan.options.detach_context = cfg.context.detach;
  plan.options.adapter_zero_init = cfg.context.adapter_zero_init;
  return plan;
}

std::string resolve_data_root(const RunConfig& cfg) {
  if (!cfg.dataset.root.empty()) return cfg.dataset.root;
  if (const char* env = std::getenv("CONTSUP_DATA_ROOT")) {
    if (env[0] != '\0') return env;
  }
  return "./data";
}

std::string run_name(const RunConfig& cfg, uint64_t seed) {
  std::string name = cfg.dataset.name + "_" + cfg.backbone.family +
                     std::to_string(cfg.backbone.depth) + "_K" +
                     std::to_string(cfg.partition.k) + "_" + cfg.context.mode;
  if (cfg.partition.strategy != "equal_units") name += "_mb";
  if (cfg.objective.head != "softmax") name += "_" + cfg.objective.head;
  if (cfg.objective.decoder_on) name += "_dec";
  if (!cfg.context.detach) name += "_nodetach";
  if (!cfg.context.per_module.empty()) name += "_hybrid";
  name += "_s" + std::to_string(seed);
  return name;
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IngestError("cannot open for writing: " + tmp);
    }
    out << text;
  }
  fs::rename(tmp, path);
}

namespace {

std::string metrics_csv_text(const std::vector<EpochModuleRow>& rows) {
  std::string text =
      "epoch,module,lr,train_total,train_cls,train_rec,train_err,test_err\n";
  for (const EpochModuleRow& r : rows) {
    text += std::to_string(r.epoch) + "," + std::to_string(r.module) + "," +
            format_g(r.lr) + "," + format_g(r.train_total) + "," +
            format_g(r.train_cls) + "," + format_g(r.train_rec) + "," +
            format_g(r.train_err) + "," + format_g(r.test_err) + "\n";
  }
  return text;
}

json memory_json(const MemoryAccount& m) {
  json j;
  j["k"] = m.k;
  j["batch_size"] = m.batch_size;
  j["bytes_per_element"] = m.bytes_per_element;
  j["module_activation_bytes"] = m.module_activation_bytes;
  j["module_aux_bytes"] = m.module_aux_bytes;
  j["param_bytes"] = m.param_bytes;
  j["optimizer_state_bytes"] = m.optimizer_state_bytes;
  j["peak_training_bytes"] = m.peak_training_bytes;
  j["e2e_training_bytes"] = m.e2e_training_bytes;
  return j;
}

json overhead_json(const OverheadReport& o) {
  json j;
  j["backbone_macs"] = o.backbone_macs;
  j["aux_head_macs"] = o.aux_head_macs;
  j["context_macs"] = o.context_macs;
  j["relative_context_overhead"] = o.relative_context_overhead;
  return j;
}

LrSchedule::Kind schedule_kind(const std::string& name) {
  if (name == "cosine") return LrSchedule::Kind::kCosine;
  if (name == "multistep") return LrSchedule::Kind::kMultistep;
  return LrSchedule::Kind::kConstant;
}

int64_t peak_rss_bytes() {
  struct rusage usage;
  if (getrusage(RUSAGE_SELF, &usage) != 0) return 0;
  return static_cast<int64_t>(usage.ru_maxrss) * 1024;
}

SeedRunResult run_single(const RunConfig& cfg, uint64_t seed,
                         const Dataset& ds, bool verbose) {
  SeedRunResult result;
  result.seed = seed;

  const NetworkPlan plan = plan_from_config(cfg, ds.input, ds.num_classes);
  std::unique_ptr<Network> net = build_network(plan, seed);

  const fs::path dir = fs::path(cfg.output_dir) / run_name(cfg, seed);
  fs::create_directories(dir);
  result.run_dir = dir.string();

  // The stored snapshot pins this run's own seed so the record is
  // self-contained and reloadable.
  RunConfig snapshot = cfg;
  snapshot.seeds = {seed};
  write_text_atomic((dir / "config.json").string(),
                    run_config_json(snapshot).dump(2) + "\n");

  const bool want_images01 = cfg.objective.decoder_on && cfg.partition.k > 1;
  const AugmentPolicy augment = cfg.dataset.augment
                                    ? default_augment(cfg.dataset.name)
                                    : AugmentPolicy{0, false};
  TrainStream train_stream(ds, cfg.training.batch_size, seed, augment,
                           want_images01, cfg.training.prefetch);
  EvalStream eval_stream(ds, EvalStream::Split::kTest,
                         cfg.training.eval_batch_size);

  TrainSettings settings;
  settings.epochs = cfg.training.epochs;
  settings.lr = cfg.training.lr;
  settings.momentum = cfg.training.momentum;
  settings.weight_decay = cfg.training.weight_decay;
  settings.schedule = schedule_kind(cfg.training.schedule);
  settings.milestones = cfg.training.milestones;
  settings.gamma = cfg.training.gamma;

  const std::string checkpoint_path = (dir / "checkpoint_best.bin").string();
  json ckpt_meta;
  ckpt_meta["fingerprint"] = config_fingerprint(snapshot);
  ckpt_meta["seed"] = seed;

  const EpochHook hook = [&](const Network& n, int epoch, double err,
                             bool is_best) {
    if (is_best || epoch == 0) {
      ckpt_meta["epoch"] = epoch;
      ckpt_meta["final_test_error"] = err;
      save_checkpoint(checkpoint_path, n, ckpt_meta);
    }
    if (verbose) {
      std::printf("epoch %3d  test error %.4f%s\n", epoch, err,
                  is_best ? "  (best)" : "");
      std::fflush(stdout);
    }
  };

  result.outcome = train(*net, train_stream, eval_stream, settings, hook);

  write_text_atomic((dir / "metrics.csv").string(),
                    metrics_csv_text(result.outcome.rows));

  const MemoryAccount memory = account_memory(plan, cfg.training.batch_size);
  const OverheadReport overhead = account_overhead(plan);
  const std::vector<std::vector<double>> heatmap = adapter_weight_matrix(*net);

  // Step timing mutates parameters, so everything state-dependent is
  // gathered beforehand.
  WallTimeStats step_time;
  if (result.outcome.ok() && cfg.training.epochs > 0) {
    TrainStream timing_stream(ds, cfg.training.batch_size, seed, augment,
                              want_images01, false);
    timing_stream.start_epoch(0);
    const Batch batch = timing_stream.next();
    std::vector<SgdNesterov<float>> opts;
    opts.reserve(net->modules.size());
    for (auto& m : net->modules) {
      opts.emplace_back(m.params, settings.lr, settings.momentum,
                        settings.weight_decay);
    }
    step_time = measure_wall_time([&] { train_step(*net, batch, opts); }, 5);
  }

  json summary;
  summary["config"] = run_config_json(snapshot);
  summary["fingerprint"] = config_fingerprint(snapshot);
  summary["build_ref"] = CONTSUP_BUILD_REF;
  summary["seed"] = seed;
  summary["status"] = result.outcome.status;
  summary["steps_run"] = result.outcome.steps_run;
  summary["final_error"] = result.outcome.final_error;
  summary["best_final_error"] = result.outcome.best_final_error;
  summary["best_epoch"] = result.outcome.best_epoch;
  summary["final_module_errors"] = result.outcome.final_module_errors;
  summary["memory"] = memory_json(memory);
  summary["overhead"] = overhead_json(overhead);
  summary["adapter_weight_heatmap"] = heatmap;
  json wt;
  wt["mean_ms"] = step_time.mean_ms;
  wt["stddev_ms"] = step_time.stddev_ms;
  wt["reps"] = step_time.reps;
  wt["hardware"] = step_time.hardware;
  summary["step_time"] = wt;
  summary["process_peak_rss_bytes"] = peak_rss_bytes();
  summary["checkpoint"] = "checkpoint_best.bin";
  write_text_atomic((dir / "summary.json").string(), summary.dump(2) + "\n");

  return result;
}

}  // namespace

std::vector<SeedRunResult> run_config(const RunConfig& cfg, bool verbose) {
  std::vector<SeedRunResult> results;
  std::optional<Dataset> cached;
  for (uint64_t seed : cfg.seeds) {
    if (cfg.dataset.name == "toy") {
      cached = make_toy_dataset(seed, cfg.toy_params());
    } else if (!cached.has_value()) {
      cached = load_dataset(cfg.dataset.name, resolve_data_root(cfg));
    }
    if (verbose) {
      std::printf("run %s\n", run_name(cfg, seed).c_str());
      std::fflush(stdout);
    }
    results.push_back(run_single(cfg, seed, *cached, verbose));
  }
  return results;
}

namespace {

int spawn_and_wait_all(const std::vector<std::string>& config_paths,
                       const std::string& self_exe, int max_procs,
                       std::vector<int>& exit_codes) {
  exit_codes.assign(config_paths.size(), -1);
  std::map<pid_t, size_t> running;
  size_t next = 0;
  int failures = 0;
  while (next < config_paths.size() || !running.empty()) {
    while (next < config_paths.size() &&
           running.size() < static_cast<size_t>(max_procs)) {
      std::vector<std::string> args = {self_exe, "train", "--config",
                                       config_paths[next], "--quiet"};
      std::vector<char*> argv;
      argv.reserve(args.size() + 1);
      for (std::string& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      pid_t pid = 0;
      const int rc = posix_spawn(&pid, self_exe.c_str(), nullptr, nullptr,
                                 argv.data(), environ);
      if (rc != 0) {
        throw IngestError("sweep: failed to spawn worker process (" +
                          std::string(std::strerror(rc)) + ")");
      }
      running[pid] = next;
      ++next;
    }
    int status = 0;
    const pid_t done = waitpid(-1, &status, 0);
    if (done < 0) break;
    const auto it = running.find(done);
    if (it == running.end()) continue;
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
    exit_codes[it->second] = code;
    if (code != 0) ++failures;
    running.erase(it);
  }
  return failures;
}

}  // namespace

int run_sweep(const json& doc, bool parallel, int max_procs,
              const std::string& self_exe, bool verbose) {
  const std::vector<RunConfig> configs = expand_sweep(doc);
  if (configs.empty()) return 0;
  fs::create_directories(configs.front().output_dir);

  json report;
  report["total"] = configs.size();
  json items = json::array();
  int failures = 0;

  if (parallel && configs.size() > 1) {
    std::vector<std::string> paths;
    for (size_t i = 0; i < configs.size(); ++i) {
      const fs::path p = fs::path(configs[i].output_dir) /
                         ("sweep_item_" + std::to_string(i) + ".json");
      write_text_atomic(p.string(), run_config_json(configs[i]).dump(2) + "\n");
      paths.push_back(p.string());
    }
    std::vector<int> codes;
    failures = spawn_and_wait_all(paths, self_exe, std::max(max_procs, 1),
                                  codes);
    for (size_t i = 0; i < configs.size(); ++i) {
      json item;
      item["index"] = i;
      item["config"] = paths[i];
      item["exit_code"] = codes[i];
      item["status"] = codes[i] == 0 ? "ok" : "failed";
      items.push_back(item);
    }
  } else {
    for (size_t i = 0; i < configs.size(); ++i) {
      json item;
      item["index"] = i;
      item["runs"] = json::array();
      try {
        const std::vector<SeedRunResult> results =
            run_config(configs[i], verbose);
        bool ok = true;
        for (const SeedRunResult& r : results) {
          item["runs"].push_back(r.run_dir);
          ok = ok && r.outcome.ok();
        }
        item["status"] = ok ? "ok" : "failed";
        if (!ok) ++failures;
      } catch (const std::exception& e) {
        item["status"] = "failed";
        item["error"] = e.what();
        ++failures;
      }
      items.push_back(item);
    }
  }

  report["failures"] = failures;
  report["items"] = items;
  write_text_atomic(
      (fs::path(configs.front().output_dir) / "sweep_summary.json").string(),
      report.dump(2) + "\n");
  return failures;
}

std::vector<InfoEstimate> probe_run(const std::string& run_dir,
                                    const ProbeConfig& probe_config,
                                    int max_samples, const std::string& split,
                                    bool dump_features) {
  const RunConfig cfg = load_run_config(run_dir + "/config.json");
  const uint64_t seed = cfg.seeds.front();

  Dataset ds = cfg.dataset.name == "toy"
                   ? make_toy_dataset(seed, cfg.toy_params())
                   : load_dataset(cfg.dataset.name, resolve_data_root(cfg));

  const NetworkPlan plan = plan_from_config(cfg, ds.input, ds.num_classes);
  std::unique_ptr<Network> net = build_network(plan, seed);
  load_checkpoint(run_dir + "/checkpoint_best.bin", *net);

  const bool use_train = split == "train";
  if (!use_train && split != "test") {
    throw ConfigError("probe: split must be 'train' or 'test'");
  }
  const int64_t total = use_train ? ds.train_count() : ds.test_count();
  const int64_t n =
      max_samples > 0 ? std::min<int64_t>(max_samples, total) : total;
  if (n < 2) {
    throw ConfigError("probe: split has too few samples");
  }

  Tensor x(static_cast<int>(n), ds.input.c, ds.input.h, ds.input.w);
  std::vector<int> labels(static_cast<size_t>(n));
  EvalStream stream(ds,
                    use_train ? EvalStream::Split::kTrain
                              : EvalStream::Split::kTest,
                    256);
  stream.start_epoch(0);
  int64_t filled = 0;
  while (filled < n) {
    const Batch batch = stream.next();
    const int take = static_cast<int>(
        std::min<int64_t>(batch.size(), n - filled));
    std::copy(batch.x.vec().begin(),
              batch.x.vec().begin() +
                  static_cast<size_t>(take) * batch.x.features(),
              x.vec().begin() + filled * x.features());
    std::copy(batch.labels.begin(), batch.labels.begin() + take,
              labels.begin() + filled);
    filled += take;
  }

  const std::vector<InfoEstimate> estimates =
      info_curve(*net, x, labels, probe_config);

  std::string csv =
      "module,estimate_nats,raw_estimate_nats,label_entropy_nats,"
      "heldout_nll_nats,train_samples,eval_samples\n";
  for (const InfoEstimate& e : estimates) {
    csv += std::to_string(e.module_index) + "," + format_g(e.estimate_nats) +
           "," + format_g(e.raw_estimate_nats) + "," +
           format_g(e.label_entropy_nats) + "," +
           format_g(e.heldout_nll_nats) + "," +
           std::to_string(e.train_samples) + "," +
           std::to_string(e.eval_samples) + "\n";
  }
  write_text_atomic(run_dir + "/info_curve.csv", csv);

  if (dump_features) {
    FeatureDump dump;
    dump.labels = labels;
    std::vector<Tensor> outputs;
    forward_all(*net, x, false, nullptr, &outputs);
    for (size_t l = 0; l < outputs.size(); ++l) {
      dump.blocks.emplace_back(static_cast<int>(l + 1),
                               std::move(outputs[l]));
    }
    write_feature_dump(run_dir + "/features", dump);
  }
  return estimates;
}

json account_config(const RunConfig& cfg) {
  const NetworkPlan plan = plan_from_config(cfg, dataset_input_shape(cfg),
                                            dataset_num_classes(cfg));
  json j;
  j["memory"] = memory_json(account_memory(plan, cfg.training.batch_size));
  j["overhead"] = overhead_json(account_overhead(plan));
  return j;
}

json build_plan_json(const RunConfig& cfg) {
  const NetworkPlan plan = plan_from_config(cfg, dataset_input_shape(cfg),
                                            dataset_num_classes(cfg));
  json j;
  j["fingerprint"] = config_fingerprint(cfg);
  json units = json::array();
  for (const MinimalUnit& u : plan.backbone.units) {
    json ju;
    ju["index"] = u.index;
    ju["kind"] = u.kind == UnitKind::kStem ? "stem" : "block";
    ju["in_channels"] = u.in_channels;
    ju["out_channels"] = u.out_channels;
    ju["spatial_in"] = {u.spatial_in.h, u.spatial_in.w};
    ju["spatial_out"] = {u.spatial_out.h, u.spatial_out.w};
    ju["downsamples"] = u.downsamples;
    units.push_back(ju);
  }
  j["units"] = units;
  json modules = json::array();
  for (int l = 1; l <= plan.partition.k(); ++l) {
    json jm;
    jm["module"] = l;
    jm["units_begin"] = plan.partition.modules[l - 1].begin;
    jm["units_end"] = plan.partition.modules[l - 1].end;
    json sources = json::array();
    for (const ContextSource& s : plan.modules[l - 1].sources.sources) {
      json js;
      js["kind"] = s.kind == SourceKind::kOriginInput ? "origin_input"
                                                      : "augmented_feature";
      js["index"] = s.index;
      js["adapter"] =
          s.adapter == AdapterKind::kEncoder ? "encoder" : "aligner";
      sources.push_back(js);
    }
    jm["sources"] = sources;
    jm["head"] = l == plan.partition.k()
                     ? "final"
                     : format_head_kind(plan.modules[l - 1].head_kind);
    jm["decoder"] = plan.modules[l - 1].decoder_on;
    modules.push_back(jm);
  }
  j["modules"] = modules;
  return j;
}

}  // namespace contsup
