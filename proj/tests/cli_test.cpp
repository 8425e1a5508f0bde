// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Run orchestration tests: run naming, atomic writes, analytic accounting,
// plan serialization, SVG plot rendering, and a miniature end-to-end sweep
// whose on-disk records are checked field by field.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cli/config.h"
#include "cli/plot.h"
#include "cli/runner.h"
#include "core/errors.h"
#include "data/datasets.h"
#include "doctest.h"
#include "json.hpp"
#include "probe/feature_dump.h"

namespace fs = std::filesystem;
using contsup::ConfigError;
using contsup::IngestError;
using contsup::RunConfig;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

json slurp_json(const fs::path& path) { return json::parse(slurp(path)); }

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) {
    if (c == '\n') ++n;
  }
  return n;
}

// The tensor data of a checkpoint file, skipping the JSON header (which
// embeds the config fingerprint and so varies with the output directory).
std::string checkpoint_payload(const std::string& bytes) {
  REQUIRE(bytes.size() >= 16);
  uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) {
    header_len |= static_cast<uint64_t>(
                      static_cast<unsigned char>(bytes[8 + i]))
                  << (8 * i);
  }
  REQUIRE(bytes.size() >= 16 + header_len);
  return bytes.substr(16 + header_len);
}

// Small toy workload: 60 train / 30 test samples at 12x12, four units.
RunConfig tiny_run_config(const fs::path& out_dir) {
  RunConfig cfg;
  cfg.backbone.family = "mini";
  cfg.backbone.depth = 4;
  cfg.partition.k = 2;
  cfg.context.mode = "E";
  cfg.training.epochs = 1;
  cfg.training.batch_size = 12;
  cfg.training.eval_batch_size = 30;
  cfg.training.lr = 0.05;
  cfg.dataset.name = "toy";
  cfg.dataset.toy.train_per_class = 6;
  cfg.dataset.toy.test_per_class = 3;
  cfg.dataset.toy.image_hw = 12;
  cfg.dataset.toy.noise = 0.05;
  cfg.dataset.toy.distractors = 1;
  cfg.seeds = {0};
  cfg.output_dir = out_dir.string();
  return cfg;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run names encode configuration choices") {
  RunConfig cfg;
  CHECK(contsup::run_name(cfg, 0) == "toy_mini8_K1_R0_s0");

  cfg.partition.k = 4;
  cfg.context.mode = "R1E";
  CHECK(contsup::run_name(cfg, 7) == "toy_mini8_K4_R1E_s7");

  cfg.backbone.family = "resnet";
  cfg.backbone.depth = 32;
  cfg.dataset.name = "cifar10";
  CHECK(contsup::run_name(cfg, 1) == "cifar10_resnet32_K4_R1E_s1");

  // Optional tags appear in a fixed order after the mode.
  cfg = RunConfig();
  cfg.backbone.depth = 4;
  cfg.partition.k = 2;
  cfg.partition.strategy = "memory_balanced";
  cfg.context.mode = "R1";
  cfg.context.detach = false;
  cfg.context.per_module = {"", "E"};
  cfg.objective.head = "contrast";
  cfg.objective.decoder_on = true;
  CHECK(contsup::run_name(cfg, 3) ==
        "toy_mini4_K2_R1_mb_contrast_dec_nodetach_hybrid_s3");
}

TEST_CASE("atomic writes replace files without leaving temporaries") {
  const fs::path dir = fresh_dir("contsup_cli_atomic");
  const fs::path target = dir / "note.txt";

  contsup::write_text_atomic(target.string(), "first\n");
  CHECK(slurp(target) == "first\n");
  CHECK_FALSE(fs::exists(dir / "note.txt.tmp"));

  contsup::write_text_atomic(target.string(), "second\n");
  CHECK(slurp(target) == "second\n");
  CHECK_FALSE(fs::exists(dir / "note.txt.tmp"));

  // A directory that does not exist is a writing error, not a crash.
  CHECK_THROWS_AS(
      contsup::write_text_atomic((dir / "missing" / "x.txt").string(), "x"),
      IngestError);
}

TEST_CASE("data root resolution prefers config then environment") {
  RunConfig cfg;
  unsetenv("CONTSUP_DATA_ROOT");
  CHECK(contsup::resolve_data_root(cfg) == "./data");

  setenv("CONTSUP_DATA_ROOT", "/srv/datasets", 1);
  CHECK(contsup::resolve_data_root(cfg) == "/srv/datasets");

  cfg.dataset.root = "/explicit/root";
  CHECK(contsup::resolve_data_root(cfg) == "/explicit/root");

  setenv("CONTSUP_DATA_ROOT", "", 1);
  cfg.dataset.root.clear();
  CHECK(contsup::resolve_data_root(cfg) == "./data");
  unsetenv("CONTSUP_DATA_ROOT");
}

TEST_CASE("analytic accounting reports memory and overhead") {
  RunConfig cfg;
  cfg.backbone.family = "resnet";
  cfg.backbone.depth = 32;
  cfg.dataset.name = "cifar10";
  cfg.partition.k = 4;
  cfg.context.mode = "E";

  const json j = contsup::account_config(cfg);
  REQUIRE(j.contains("memory"));
  REQUIRE(j.contains("overhead"));

  const json& m = j["memory"];
  CHECK(m.at("k").get<int>() == 4);
  CHECK(m.at("batch_size").get<int>() == cfg.training.batch_size);
  CHECK(m.at("param_bytes").get<int64_t>() > 0);
  CHECK(m.at("optimizer_state_bytes").get<int64_t>() ==
        m.at("param_bytes").get<int64_t>());
  CHECK(m.at("peak_training_bytes").get<int64_t>() > 0);
  CHECK(m.at("e2e_training_bytes").get<int64_t>() >=
        m.at("peak_training_bytes").get<int64_t>());
  CHECK(m.at("module_activation_bytes").get<json>().size() == 4);

  const json& o = j["overhead"];
  CHECK(o.at("backbone_macs").get<int64_t>() > 0);
  CHECK(o.at("aux_head_macs").get<int64_t>() > 0);
  CHECK(o.at("context_macs").get<int64_t>() > 0);
  CHECK(o.at("relative_context_overhead").get<double>() > 0.0);

  // Without any context sources the connection cost vanishes.
  cfg.context.mode = "R0";
  const json r0 = contsup::account_config(cfg);
  CHECK(r0["overhead"].at("context_macs").get<int64_t>() == 0);
  CHECK(r0["overhead"].at("relative_context_overhead").get<double>() == 0.0);
}

TEST_CASE("plan serialization lists units, sources, and heads") {
  RunConfig cfg;
  cfg.backbone.family = "mini";
  cfg.backbone.depth = 8;
  cfg.partition.k = 4;
  cfg.context.mode = "R1E";
  cfg.dataset.toy.image_hw = 16;

  const json j = contsup::build_plan_json(cfg);
  CHECK(j.at("fingerprint").get<std::string>() ==
        contsup::config_fingerprint(cfg));
  CHECK(j.at("fingerprint").get<std::string>().size() == 16);

  const json& units = j.at("units");
  REQUIRE(units.size() == 8);
  CHECK(units[0].at("kind").get<std::string>() == "stem");
  CHECK(units[1].at("kind").get<std::string>() == "block");
  CHECK(units[0].at("index").get<int>() == 0);

  const json& modules = j.at("modules");
  REQUIRE(modules.size() == 4);

  // Modules tile the unit list contiguously.
  CHECK(modules[0].at("units_begin").get<int>() == 0);
  CHECK(modules[3].at("units_end").get<int>() == 8);
  for (int i = 1; i < 4; ++i) {
    CHECK(modules[i].at("units_begin").get<int>() ==
          modules[i - 1].at("units_end").get<int>());
  }

  // First module has no incoming context; later ones list the encoder
  // path first and then the most recent stored feature.
  CHECK(modules[0].at("sources").size() == 0);
  const json& s2 = modules[1].at("sources");
  REQUIRE(s2.size() == 2);
  CHECK(s2[0].at("kind").get<std::string>() == "origin_input");
  CHECK(s2[0].at("adapter").get<std::string>() == "encoder");
  CHECK(s2[1].at("kind").get<std::string>() == "origin_input");
  CHECK(s2[1].at("adapter").get<std::string>() == "aligner");
  CHECK(s2[1].at("index").get<int>() == 0);

  const json& s4 = modules[3].at("sources");
  REQUIRE(s4.size() == 2);
  CHECK(s4[1].at("kind").get<std::string>() == "augmented_feature");
  CHECK(s4[1].at("index").get<int>() == 2);
  CHECK(s4[1].at("adapter").get<std::string>() == "aligner");

  // Auxiliary heads on interior modules, the real output on the last.
  CHECK(modules[0].at("head").get<std::string>() == "softmax");
  CHECK(modules[3].at("head").get<std::string>() == "final");
  CHECK(modules[0].at("decoder").get<bool>() == false);
}

TEST_CASE("error plots render from summary records") {
  const fs::path dir = fresh_dir("contsup_cli_plots");
  std::vector<std::string> inputs;
  int file_id = 0;
  const auto add_summary = [&](const std::string& mode, int k, double err,
                               double peak_mb) {
    json s;
    s["config"]["context"]["mode"] = mode;
    s["config"]["partition"]["k"] = k;
    s["best_final_error"] = err;
    s["memory"]["peak_training_bytes"] = peak_mb * 1.0e6;
    const fs::path p = dir / ("summary_" + std::to_string(file_id++) + ".json");
    contsup::write_text_atomic(p.string(), s.dump(2));
    inputs.push_back(p.string());
  };
  add_summary("R0", 2, 0.30, 40.0);
  add_summary("R0", 4, 0.34, 25.0);
  add_summary("E", 2, 0.28, 42.0);
  add_summary("E", 4, 0.29, 27.0);
  // A second seed of an existing cell is averaged, not drawn separately.
  add_summary("E", 4, 0.31, 27.0);

  const fs::path by_k = dir / "error_vs_k.svg";
  contsup::render_plot("error_vs_K", inputs, by_k.string());
  const std::string svg_k = slurp(by_k);
  CHECK(svg_k.find("<svg") != std::string::npos);
  CHECK(svg_k.find("</svg>") != std::string::npos);
  CHECK(svg_k.find("modules K") != std::string::npos);
  CHECK(svg_k.find("polyline") != std::string::npos);
  CHECK(svg_k.find(">R0</text>") != std::string::npos);
  CHECK(svg_k.find(">E</text>") != std::string::npos);

  const fs::path by_mem = dir / "error_vs_memory.svg";
  contsup::render_plot("error_vs_memory", inputs, by_mem.string());
  const std::string svg_m = slurp(by_mem);
  CHECK(svg_m.find("peak training memory (MB)") != std::string::npos);
  CHECK(svg_m.find("polyline") != std::string::npos);
}

TEST_CASE("information curve plots render from csv records") {
  const fs::path dir = fresh_dir("contsup_cli_plot_info");
  fs::create_directories(dir / "toy_mini4_K2_E_s0");
  const fs::path csv = dir / "toy_mini4_K2_E_s0" / "info_curve.csv";
  contsup::write_text_atomic(
      csv.string(),
      "module,estimate_nats,raw_estimate_nats,label_entropy_nats,"
      "heldout_nll_nats,train_samples,eval_samples\n"
      "1,0.9,0.9,2.302585,1.4,480,120\n"
      "2,1.7,1.7,2.302585,0.6,480,120\n");

  const fs::path out = dir / "info.svg";
  contsup::render_plot("info_curve", {csv.string()}, out.string());
  const std::string svg = slurp(out);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("module") != std::string::npos);
  // Curves are labeled by the run directory that produced them.
  CHECK(svg.find("toy_mini4_K2_E_s0") != std::string::npos);

  // Header-only and malformed files are rejected.
  const fs::path empty_csv = dir / "empty.csv";
  contsup::write_text_atomic(empty_csv.string(), "module,estimate_nats\n");
  CHECK_THROWS_AS(
      contsup::render_plot("info_curve", {empty_csv.string()},
                           (dir / "bad1.svg").string()),
      IngestError);
  const fs::path junk_csv = dir / "junk.csv";
  contsup::write_text_atomic(junk_csv.string(), "header\nnot,numbers\n");
  CHECK_THROWS_AS(
      contsup::render_plot("info_curve", {junk_csv.string()},
                           (dir / "bad2.svg").string()),
      IngestError);
}

TEST_CASE("adapter heatmap plot renders from a summary record") {
  const fs::path dir = fresh_dir("contsup_cli_plot_heat");
  json s;
  s["adapter_weight_heatmap"] = std::vector<std::vector<double>>{
      {0.0, 0.5, 0.25}, {0.0, 0.0, 0.125}, {0.0, 0.0, 0.0}};
  const fs::path p = dir / "summary.json";
  contsup::write_text_atomic(p.string(), s.dump(2));

  const fs::path out = dir / "heat.svg";
  contsup::render_plot("adapter_weight_heatmap", {p.string()}, out.string());
  const std::string svg = slurp(out);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find(">input</text>") != std::string::npos);
  CHECK(svg.find(">h1</text>") != std::string::npos);
  CHECK(svg.find(">m3</text>") != std::string::npos);
  CHECK(svg.find("<rect") != std::string::npos);

  json empty;
  empty["adapter_weight_heatmap"] = std::vector<std::vector<double>>{};
  const fs::path pe = dir / "empty.json";
  contsup::write_text_atomic(pe.string(), empty.dump(2));
  CHECK_THROWS_AS(contsup::render_plot("adapter_weight_heatmap", {pe.string()},
                                       (dir / "bad.svg").string()),
                  IngestError);
}

TEST_CASE("plot input validation") {
  const fs::path dir = fresh_dir("contsup_cli_plot_errors");
  CHECK_THROWS_AS(
      contsup::render_plot("error_vs_K", {}, (dir / "x.svg").string()),
      ConfigError);
  CHECK_THROWS_AS(
      contsup::render_plot("pie_chart", {(dir / "a.json").string()},
                           (dir / "x.svg").string()),
      ConfigError);
  CHECK_THROWS_AS(
      contsup::render_plot("error_vs_K", {(dir / "absent.json").string()},
                           (dir / "x.svg").string()),
      IngestError);
}

TEST_CASE("sequential sweep trains and records runs") {
  const fs::path out = fresh_dir("contsup_cli_sweep");
  RunConfig base = tiny_run_config(out);

  // Two configurations: the module count is swept, everything else fixed.
  json doc = contsup::run_config_json(base);
  doc["partition"]["k"] = json::array({1, 2});

  const int failures = contsup::run_sweep(doc, false, 1, "", false);
  CHECK(failures == 0);

  const json report = slurp_json(out / "sweep_summary.json");
  CHECK(report.at("total").get<int>() == 2);
  CHECK(report.at("failures").get<int>() == 0);
  REQUIRE(report.at("items").size() == 2);
  CHECK(report["items"][0].at("status").get<std::string>() == "ok");
  CHECK(report["items"][1].at("status").get<std::string>() == "ok");
  REQUIRE(report["items"][1].at("runs").size() == 1);

  const fs::path run_dir = out / "toy_mini4_K2_E_s0";
  CHECK(report["items"][1]["runs"][0].get<std::string>() == run_dir.string());
  REQUIRE(fs::exists(run_dir / "config.json"));
  REQUIRE(fs::exists(run_dir / "metrics.csv"));
  REQUIRE(fs::exists(run_dir / "summary.json"));
  REQUIRE(fs::exists(run_dir / "checkpoint_best.bin"));

  // The stored config snapshot reloads to the executed configuration.
  const RunConfig stored =
      contsup::load_run_config((run_dir / "config.json").string());
  CHECK(stored.partition.k == 2);
  CHECK(stored.seeds == std::vector<uint64_t>{0});
  CHECK(contsup::run_name(stored, 0) == "toy_mini4_K2_E_s0");

  // One epoch of a two-module network: header plus one row per module.
  const std::string metrics = slurp(run_dir / "metrics.csv");
  CHECK(metrics.rfind(
            "epoch,module,lr,train_total,train_cls,train_rec,train_err,"
            "test_err\n",
            0) == 0);
  CHECK(count_lines(metrics) == 3);

  const json summary = slurp_json(run_dir / "summary.json");
  CHECK(summary.at("status").get<std::string>() == "ok");
  CHECK(summary.at("seed").get<uint64_t>() == 0);
  CHECK(summary.at("fingerprint").get<std::string>() ==
        contsup::config_fingerprint(stored));
  CHECK(summary.at("steps_run").get<int>() == 5);
  CHECK(summary.at("final_error").get<double>() >= 0.0);
  CHECK(summary.at("final_error").get<double>() <= 1.0);
  CHECK(summary.at("best_final_error").get<double>() <=
        summary.at("final_error").get<double>() + 1e-12);
  CHECK(summary.at("final_module_errors").size() == 2);
  CHECK(summary.at("adapter_weight_heatmap").size() == 2);
  CHECK(summary.at("memory").at("k").get<int>() == 2);
  CHECK(summary.at("overhead").at("context_macs").get<int64_t>() > 0);
  CHECK(summary.at("checkpoint").get<std::string>() == "checkpoint_best.bin");
  CHECK(summary.at("step_time").at("reps").get<int>() == 5);
  CHECK(summary.at("step_time").at("mean_ms").get<double>() > 0.0);
  CHECK(summary.at("process_peak_rss_bytes").get<int64_t>() > 0);
  CHECK_FALSE(summary.at("build_ref").get<std::string>().empty());

  SUBCASE("probing a finished run writes the information curve") {
    contsup::ProbeConfig pc;
    pc.width = 8;
    pc.epochs = 6;
    pc.batch_size = 16;
    pc.patience = 3;
    pc.min_spatial = 4;

    const std::vector<contsup::InfoEstimate> estimates =
        contsup::probe_run(run_dir.string(), pc, 0, "test", true);
    REQUIRE(estimates.size() == 2);
    CHECK(estimates[0].module_index == 1);
    CHECK(estimates[1].module_index == 2);
    for (const contsup::InfoEstimate& e : estimates) {
      CHECK(e.train_samples + e.eval_samples == 30);
      CHECK(e.estimate_nats >= 0.0);
    }

    const std::string curve = slurp(run_dir / "info_curve.csv");
    CHECK(curve.rfind("module,estimate_nats,raw_estimate_nats,"
                      "label_entropy_nats,heldout_nll_nats,train_samples,"
                      "eval_samples\n",
                      0) == 0);
    CHECK(count_lines(curve) == 3);

    // The feature dump holds every probed sample with its label.
    std::vector<int> labels;
    const contsup::Tensor block = contsup::read_feature_block(
        (run_dir / "features").string(), 1, &labels);
    CHECK(block.n() == 30);
    REQUIRE(labels.size() == 30);
    for (int i = 0; i < 30; ++i) {
      CHECK(labels[static_cast<size_t>(i)] == i % 10);
    }

    CHECK_THROWS_AS(contsup::probe_run(run_dir.string(), pc, 0, "half", false),
                    ConfigError);
  }

  SUBCASE("repeating a configuration reproduces its records exactly") {
    const fs::path out2 = fresh_dir("contsup_cli_sweep_repeat");
    RunConfig repeat = base;
    repeat.partition.k = 2;
    repeat.output_dir = out2.string();
    const std::vector<contsup::SeedRunResult> results =
        contsup::run_config(repeat, false);
    REQUIRE(results.size() == 1);
    CHECK(results[0].outcome.ok());

    const fs::path run2 = out2 / "toy_mini4_K2_E_s0";
    CHECK(slurp(run2 / "metrics.csv") == slurp(run_dir / "metrics.csv"));
    CHECK(checkpoint_payload(slurp(run2 / "checkpoint_best.bin")) ==
          checkpoint_payload(slurp(run_dir / "checkpoint_best.bin")));
  }
}

}  // TEST_SUITE("cli")
