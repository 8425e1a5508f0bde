// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// contsup command line: config-driven training of gradient-isolated
// modular networks with context supply, plus accounting, probing,
// plotting, and dataset fetching.

#include <climits>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "cli/config.h"
#include "cli/fetch.h"
#include "cli/plot.h"
#include "cli/runner.h"
#include "core/errors.h"
#include "json.hpp"

namespace {

using contsup::ConfigError;
using contsup::IngestError;
using contsup::NumericError;
using contsup::RunConfig;

// Absolute path of the running binary, for sweep worker re-invocation.
std::string self_executable(const char* argv0) {
  char buf[PATH_MAX];
  const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n > 0) {
    buf[n] = '\0';
    return std::string(buf);
  }
  return std::string(argv0);
}

std::string default_data_root() {
  const char* env = std::getenv("CONTSUP_DATA_ROOT");
  return env != nullptr && env[0] != '\0' ? std::string(env)
                                          : std::string("./data");
}

int run_train(const std::string& config_path, bool quiet) {
  const RunConfig cfg = contsup::load_run_config(config_path);
  const auto results = contsup::run_config(cfg, !quiet);
  bool all_ok = true;
  for (const auto& r : results) {
    if (!quiet) {
      std::printf("seed %llu: %s (final error %.4f) -> %s\n",
                  static_cast<unsigned long long>(r.seed),
                  r.outcome.status.c_str(), r.outcome.final_error,
                  r.run_dir.c_str());
    }
    all_ok = all_ok && r.outcome.ok();
  }
  return all_ok ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Greedy local learning with context supply"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir;
  std::string split = "test";
  std::string kind;
  std::string out_path;
  std::string dataset_name;
  std::string data_root = default_data_root();
  std::vector<std::string> inputs;
  bool quiet = false;
  bool parallel = false;
  bool dump_features = false;
  int jobs = 2;
  int max_samples = 2048;
  contsup::ProbeConfig probe;

  auto* build_plan = app.add_subcommand(
      "build-plan", "Print the partition and context structure of a config");
  build_plan->add_option("--config", config_path, "Run config JSON")
      ->required();

  auto* train =
      app.add_subcommand("train", "Train one configuration for every seed");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_flag("--quiet", quiet, "Suppress progress output");

  auto* sweep = app.add_subcommand(
      "sweep", "Expand list-valued fields into a grid and run each point");
  sweep->add_option("--config", config_path, "Sweep config JSON")->required();
  sweep->add_flag("--parallel", parallel, "Run points in worker processes");
  sweep->add_option("--jobs", jobs, "Max concurrent workers")
      ->check(CLI::Range(1, 64));
  sweep->add_flag("--quiet", quiet, "Suppress progress output");

  auto* probe_info = app.add_subcommand(
      "probe-info",
      "Estimate per-module task information of a finished run");
  probe_info->add_option("--run", run_dir, "Run directory")->required();
  probe_info->add_option("--split", split, "Dataset split")
      ->check(CLI::IsMember({"train", "test"}));
  probe_info->add_option("--max-samples", max_samples,
                         "Cap on probed samples (0 = all)");
  probe_info->add_flag("--features", dump_features,
                       "Also write per-module feature dumps");
  probe_info->add_option("--probe-epochs", probe.epochs, "Probe epochs");
  probe_info->add_option("--probe-width", probe.width, "Probe channels");
  probe_info->add_option("--probe-lr", probe.lr, "Probe learning rate");
  probe_info->add_option("--probe-batch", probe.batch_size,
                         "Probe batch size");
  probe_info->add_option("--probe-seed", probe.seed, "Probe seed");

  auto* account = app.add_subcommand(
      "account", "Analytic memory and compute accounting of a config");
  account->add_option("--config", config_path, "Run config JSON")->required();

  auto* plot = app.add_subcommand("plot", "Render a figure from run records");
  plot->add_option("--kind", kind, "Figure kind")
      ->required()
      ->check(CLI::IsMember({"error_vs_K", "error_vs_memory", "info_curve",
                             "adapter_weight_heatmap"}));
  plot->add_option("--out", out_path, "Output SVG path")->required();
  plot->add_option("inputs", inputs, "summary.json or info_curve.csv files")
      ->required();

  auto* fetch = app.add_subcommand("fetch-data",
                                   "Download a public dataset into the root");
  fetch->add_option("name", dataset_name, "Dataset name")
      ->required()
      ->check(CLI::IsMember({"cifar10", "svhn", "stl10"}));
  fetch->add_option("--root", data_root, "Dataset root directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (build_plan->parsed()) {
      const RunConfig cfg = contsup::load_run_config(config_path);
      std::printf("%s\n", contsup::build_plan_json(cfg).dump(2).c_str());
      return 0;
    }
    if (train->parsed()) {
      return run_train(config_path, quiet);
    }
    if (sweep->parsed()) {
      const nlohmann::json doc = contsup::load_json_document(config_path);
      const int failures = contsup::run_sweep(doc, parallel, jobs,
                                              self_executable(argv[0]),
                                              !quiet);
      if (failures > 0) {
        std::fprintf(stderr, "sweep: %d configuration(s) failed\n", failures);
        return 4;
      }
      return 0;
    }
    if (probe_info->parsed()) {
      const auto estimates = contsup::probe_run(run_dir, probe, max_samples,
                                                split, dump_features);
      std::printf("module,estimate_nats,raw_nats,label_entropy_nats,"
                  "heldout_nll_nats\n");
      for (const auto& e : estimates) {
        std::printf("%d,%.6f,%.6f,%.6f,%.6f\n", e.module_index,
                    e.estimate_nats, e.raw_estimate_nats,
                    e.label_entropy_nats, e.heldout_nll_nats);
      }
      return 0;
    }
    if (account->parsed()) {
      const RunConfig cfg = contsup::load_run_config(config_path);
      std::printf("%s\n", contsup::account_config(cfg).dump(2).c_str());
      return 0;
    }
    if (plot->parsed()) {
      contsup::render_plot(kind, inputs, out_path);
      std::printf("wrote %s\n", out_path.c_str());
      return 0;
    }
    if (fetch->parsed()) {
      contsup::fetch_dataset(dataset_name, data_root);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IngestError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 0;
}
