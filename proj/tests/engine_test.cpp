// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Training engine: optimizer oracles, gradient isolation, baseline
// equivalence against an independently written end-to-end loop, identity
// start, determinism, checkpoints, and failure handling.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cli/config.h"
#include "cli/runner.h"
#include "core/rng.h"
#include "data/datasets.h"
#include "doctest.h"
#include "engine/checkpoint.h"
#include "engine/engine.h"
#include "nn/losses.h"

using namespace contsup;

namespace {

ToyParams tiny_toy() {
  ToyParams p;
  p.train_per_class = 8;
  p.test_per_class = 4;
  p.image_hw = 12;
  return p;
}

RunConfig engine_config(int k, const std::string& mode, int depth = 4) {
  RunConfig cfg;
  cfg.backbone.family = "mini";
  cfg.backbone.depth = depth;
  cfg.partition.k = k;
  cfg.context.mode = mode;
  cfg.dataset.name = "toy";
  cfg.dataset.toy.train_per_class = 8;
  cfg.dataset.toy.test_per_class = 4;
  cfg.dataset.toy.image_hw = 12;
  return cfg;
}

std::unique_ptr<Network> make_net(int k, const std::string& mode,
                                  uint64_t seed, int depth = 4) {
  const RunConfig cfg = engine_config(k, mode, depth);
  return build_network(plan_from_config(cfg, {3, 12, 12}, 10), seed);
}

Batch toy_batch(const Dataset& ds, int batch_size, uint64_t seed,
                bool images01 = false) {
  TrainStream stream(ds, batch_size, seed, AugmentPolicy{}, images01);
  stream.start_epoch(0);
  return stream.next();
}

std::vector<SgdNesterov<float>> make_opts(Network& net, double lr,
                                          double momentum, double wd) {
  std::vector<SgdNesterov<float>> opts;
  opts.reserve(net.modules.size());
  for (auto& m : net.modules) opts.emplace_back(m.params, lr, momentum, wd);
  return opts;
}

bool all_zero(const Tensor& t) {
  for (auto v : t.vec()) {
    if (v != 0.0f) return false;
  }
  return true;
}

double max_rel_diff(const std::vector<Param*>& a,
                    const std::vector<Param*>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->value.numel() == b[i]->value.numel());
    for (int64_t j = 0; j < a[i]->value.numel(); ++j) {
      const double x = a[i]->value[j], y = b[i]->value[j];
      worst = std::max(worst, std::abs(x - y) /
                                  std::max({1.0, std::abs(x), std::abs(y)}));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("engine");

TEST_CASE("sgd nesterov single parameter hand oracle") {
  Param p;
  p.value = Tensor(1, 1, 1, 1);
  p.value.vec() = {1.0f};
  p.init_buffers();
  SgdNesterov<float> opt({&p}, 0.1, 0.9, 0.01);

  // Hand-tracked reference: g = grad + wd*w; buf = mu*buf + g;
  // w -= lr*(g + mu*buf).
  double w = 1.0, buf = 0.0;
  const double grads[3] = {0.5, -0.25, 0.125};
  for (double g0 : grads) {
    p.grad.vec() = {static_cast<float>(g0)};
    const double g = g0 + 0.01 * w;
    buf = 0.9 * buf + g;
    w -= 0.1 * (g + 0.9 * buf);
    opt.step();
    CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-6));
    CHECK(p.momentum[0] == doctest::Approx(buf).epsilon(1e-6));
  }
}

TEST_CASE("lr schedules") {
  LrSchedule cosine{LrSchedule::Kind::kCosine, 0.2, 10, {}, 0.1};
  CHECK(cosine.at(0) == doctest::Approx(0.2));
  CHECK(cosine.at(5) == doctest::Approx(0.1));
  CHECK(cosine.at(10) == doctest::Approx(0.0).epsilon(1e-12));
  LrSchedule steps{LrSchedule::Kind::kMultistep, 1.0, 100, {3, 6}, 0.1};
  CHECK(steps.at(0) == doctest::Approx(1.0));
  CHECK(steps.at(3) == doctest::Approx(0.1));
  CHECK(steps.at(7) == doctest::Approx(0.01));
  LrSchedule flat{LrSchedule::Kind::kConstant, 0.3, 100, {}, 0.1};
  CHECK(flat.at(50) == doctest::Approx(0.3));
}

TEST_CASE("network structure follows the plan") {
  auto net = make_net(4, "R1E", 7);
  CHECK(net->k() == 4);
  CHECK(net->modules[0].sources.empty());
  CHECK(net->modules[0].adapters.empty());
  CHECK(net->modules[1].sources.size() == 2);  // encoder + aligner(0)
  CHECK(net->modules[3].is_final);
  CHECK_FALSE(net->modules[0].is_final);
  // Bundles own disjoint parameter sets.
  std::set<const Param*> seen;
  for (const auto& m : net->modules) {
    for (const auto* p : m.params) {
      CHECK(seen.insert(p).second);
    }
  }
  CHECK(net->all_params().size() == seen.size());
}

TEST_CASE("gradient isolation with detached context") {
  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto net = make_net(3, "R1E", 11);
  const Batch batch = toy_batch(ds, 8, 1);

  for (int l = 1; l <= 3; ++l) {
    for (auto* p : net->all_params()) p->zero_grad();
    std::vector<bool> mask(3, false);
    mask[l - 1] = true;
    forward_backward(*net, batch, &mask);
    for (int m = 1; m <= 3; ++m) {
      bool any_nonzero = false;
      for (auto* p : net->modules[m - 1].params) {
        if (!all_zero(p->grad)) any_nonzero = true;
      }
      if (m == l) {
        CHECK(any_nonzero);
      } else {
        CHECK_FALSE(any_nonzero);
      }
    }
  }
}

TEST_CASE("disabling detach lets gradient cross boundaries") {
  const Dataset ds = make_toy_dataset(0, tiny_toy());
  RunConfig cfg = engine_config(3, "R1", 4);
  cfg.context.detach = false;
  cfg.context.adapter_zero_init = false;  // nonzero adapters carry gradient
  auto net = build_network(plan_from_config(cfg, {3, 12, 12}, 10), 13);
  const Batch batch = toy_batch(ds, 8, 1);

  for (auto* p : net->all_params()) p->zero_grad();
  std::vector<bool> mask{false, false, true};
  forward_backward(*net, batch, &mask);
  // Module 3's loss reaches the parameters of both earlier modules through
  // the features it consumes.
  for (int m : {0, 1}) {
    bool any = false;
    for (auto* p : net->modules[m].params) {
      if (!all_zero(p->grad)) any = true;
    }
    CHECK(any);
  }
}

TEST_CASE("baseline K=1 matches an independent end-to-end loop") {
  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto engine_net = make_net(1, "R0", 17);
  auto manual_net = make_net(1, "R0", 17);

  auto opts = make_opts(*engine_net, 0.05, 0.9, 1e-4);
  SgdNesterov<float> manual_opt(manual_net->modules[0].params, 0.05, 0.9,
                                1e-4);

  TrainStream s1(ds, 16, 3, AugmentPolicy{}, false);
  TrainStream s2(ds, 16, 3, AugmentPolicy{}, false);
  s1.start_epoch(0);
  s2.start_epoch(0);
  for (int step = 0; step < 20; ++step) {
    if (step > 0 && step % s1.batches_per_epoch() == 0) {
      s1.start_epoch(step / s1.batches_per_epoch());
      s2.start_epoch(step / s2.batches_per_epoch());
    }
    const Batch b1 = s1.next();
    const Batch b2 = s2.next();
    REQUIRE(b1.x.vec() == b2.x.vec());

    train_step(*engine_net, b1, opts);

    // Independent end-to-end step written directly against the layers.
    auto& bundle = manual_net->modules[0];
    manual_opt.zero_grad();
    Tensor h = bundle.segment.forward(b2.x, true);
    Tensor logits = bundle.head->forward(h, true);
    auto loss = cross_entropy(logits, b2.labels);
    Tensor dh = bundle.head->backward(loss.grad);
    bundle.segment.backward(dh);
    manual_opt.step();
  }
  CHECK(max_rel_diff(engine_net->all_params(), manual_net->all_params()) <
        1e-5);
}

TEST_CASE("identity start makes origin context equal the baseline") {
  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto r0 = make_net(4, "R0", 19);
  auto e = make_net(4, "E", 19);
  const Batch batch = toy_batch(ds, 8, 2);

  std::vector<Tensor> out_r0, out_e;
  Tensor y0 = forward_all(*r0, batch.x, false, nullptr, &out_r0);
  Tensor ye = forward_all(*e, batch.x, false, nullptr, &out_e);
  CHECK(y0.vec() == ye.vec());
  REQUIRE(out_r0.size() == out_e.size());
  for (size_t i = 0; i < out_r0.size(); ++i) {
    CHECK(out_r0[i].vec() == out_e[i].vec());
  }
}

TEST_CASE("context mode changes training after the first update") {
  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto r0 = make_net(2, "R0", 23);
  auto e = make_net(2, "E", 23);
  auto opts0 = make_opts(*r0, 0.1, 0.9, 0.0);
  auto optse = make_opts(*e, 0.1, 0.9, 0.0);
  const Batch batch = toy_batch(ds, 16, 4);
  // Step 1 sees identical features (identity start), so losses agree; the
  // adapter update then separates the trajectories.
  auto st0 = train_step(*r0, batch, opts0);
  auto ste = train_step(*e, batch, optse);
  CHECK(st0[1].total == doctest::Approx(ste[1].total).epsilon(1e-7));
  auto st0b = train_step(*r0, batch, opts0);
  auto steb = train_step(*e, batch, optse);
  CHECK(st0b[1].total != steb[1].total);
}

TEST_CASE("forward_all stores augmented features") {
  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto net = make_net(3, "R0", 29);
  const Batch batch = toy_batch(ds, 4, 5);
  std::vector<Tensor> stored, outputs;
  forward_all(*net, batch.x, false, &stored, &outputs);
  REQUIRE(outputs.size() == 3);
  REQUIRE(stored.size() == 3);  // input plus two interior boundaries
  CHECK(stored[0].vec() == batch.x.vec());
  // Under R0 no context is added, so stored features equal module outputs.
  CHECK(stored[1].vec() == outputs[0].vec());
  CHECK(stored[2].vec() == outputs[1].vec());
}

TEST_CASE("evaluate on an untrained network sits near chance") {
  const ToyParams params = tiny_toy();
  const Dataset ds = make_toy_dataset(1, params);
  auto net = make_net(2, "R0", 31);
  EvalStream eval(ds, EvalStream::Split::kTest, 64);
  EvalResult res = evaluate(*net, eval);
  CHECK(res.samples == 40);
  CHECK(res.final_error > 0.6);
  CHECK(res.final_error <= 1.0);
  REQUIRE(res.module_error.size() == 2);
  CHECK(res.module_error[1] == doctest::Approx(res.final_error));
}

TEST_CASE("training memorizes a tiny dataset") {
  ToyParams p = tiny_toy();
  p.noise = 0.02;
  p.distractors = 1;
  const Dataset ds = make_toy_dataset(2, p);
  auto net = make_net(2, "R0", 37);
  TrainStream train_stream(ds, 16, 5, AugmentPolicy{}, false);
  EvalStream train_eval(ds, EvalStream::Split::kTrain, 64);
  TrainSettings settings;
  settings.epochs = 30;
  settings.lr = 0.1;
  settings.weight_decay = 0.0;
  TrainOutcome out = train(*net, train_stream, train_eval, settings);
  REQUIRE(out.ok());
  // Error on the training split collapses far below the 0.9 chance level.
  CHECK(out.final_error < 0.3);
}

TEST_CASE("zero epoch training only evaluates") {
  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto net = make_net(2, "R0", 41);
  TrainStream train_stream(ds, 16, 6, AugmentPolicy{}, false);
  EvalStream eval(ds, EvalStream::Split::kTest, 64);
  TrainSettings settings;
  settings.epochs = 0;
  TrainOutcome out = train(*net, train_stream, eval, settings);
  CHECK(out.ok());
  CHECK(out.steps_run == 0);
  CHECK(out.final_error > 0.0);
  CHECK(out.rows.size() == 2);  // one evaluation row per module at epoch 0
}

TEST_CASE("training is bitwise deterministic") {
  const Dataset ds = make_toy_dataset(3, tiny_toy());
  auto run = [&](uint64_t seed) {
    auto net = make_net(2, "R1E", seed);
    TrainStream train_stream(ds, 16, seed, AugmentPolicy{1, true}, false);
    EvalStream eval(ds, EvalStream::Split::kTest, 64);
    TrainSettings settings;
    settings.epochs = 2;
    TrainOutcome out = train(*net, train_stream, eval, settings);
    REQUIRE(out.ok());
    std::vector<float> flat;
    for (auto* p : net->all_params()) {
      flat.insert(flat.end(), p->value.vec().begin(), p->value.vec().end());
    }
    return std::pair{flat, out.final_error};
  };
  auto a = run(9);
  auto b = run(9);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  auto c = run(10);
  CHECK(a.first != c.first);
}

TEST_CASE("numeric blowup aborts with a status") {
  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto net = make_net(2, "R0", 43);
  TrainStream train_stream(ds, 16, 7, AugmentPolicy{}, false);
  EvalStream eval(ds, EvalStream::Split::kTest, 64);
  TrainSettings settings;
  settings.epochs = 3;
  settings.lr = 1e9;  // guaranteed divergence
  TrainOutcome out = train(*net, train_stream, eval, settings);
  CHECK_FALSE(out.ok());
  CHECK(out.status.find("finite") != std::string::npos);
}

TEST_CASE("checkpoint round trip preserves every tensor") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "contsup_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "net.bin").string();

  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto net = make_net(2, "R1E", 47);
  auto opts = make_opts(*net, 0.1, 0.9, 1e-4);
  const Batch batch = toy_batch(ds, 8, 8);
  train_step(*net, batch, opts);  // move weights, momentum, running stats

  nlohmann::json meta;
  meta["note"] = "round-trip";
  save_checkpoint(path, *net, meta);

  auto fresh = make_net(2, "R1E", 48);  // different init to overwrite
  nlohmann::json loaded = load_checkpoint(path, *fresh);
  CHECK(loaded["note"] == "round-trip");
  CHECK(read_checkpoint_meta(path)["note"] == "round-trip");

  auto pa = net->all_params();
  auto pb = fresh->all_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value.vec() == pb[i]->value.vec());
    CHECK(pa[i]->momentum.vec() == pb[i]->momentum.vec());
  }
  // Forward agreement proves buffers (running statistics) travelled too.
  Tensor ya = forward_all(*net, batch.x, false);
  Tensor yb = forward_all(*fresh, batch.x, false);
  CHECK(ya.vec() == yb.vec());

  fs::remove_all(dir);
}

TEST_CASE("checkpoint rejects corrupt files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "contsup_ckpt_corrupt";
  fs::create_directories(dir);
  const std::string path = (dir / "net.bin").string();

  const Dataset ds = make_toy_dataset(0, tiny_toy());
  auto net = make_net(2, "R0", 53);
  save_checkpoint(path, *net, nlohmann::json::object());

  // Bad magic.
  {
    auto bytes = [&] {
      std::ifstream in(path, std::ios::binary);
      return std::vector<char>((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    }();
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    auto fresh = make_net(2, "R0", 54);
    CHECK_THROWS_AS(load_checkpoint(path, *fresh), IngestError);
  }
  // Truncated payload.
  {
    auto net2 = make_net(2, "R0", 55);
    save_checkpoint(path, *net2, nlohmann::json::object());
    std::error_code ec;
    fs::resize_file(path, fs::file_size(path) / 2, ec);
    REQUIRE_FALSE(ec);
    auto fresh = make_net(2, "R0", 56);
    CHECK_THROWS_AS(load_checkpoint(path, *fresh), IngestError);
  }
  fs::remove_all(dir);
}

TEST_CASE("adapter weight matrix shape and zero pattern") {
  auto net = make_net(4, "E", 59);
  auto m = adapter_weight_matrix(*net);
  REQUIRE(m.size() == 4);  // sources: input plus three boundaries
  for (const auto& row : m) REQUIRE(row.size() == 4);
  // Origin row has entries for modules 2..4; nothing else is connected.
  CHECK(m[0][0] == 0.0);
  for (int d = 1; d < 4; ++d) CHECK(m[0][d] > 0.0);
  for (int s = 1; s < 4; ++s) {
    for (int d = 0; d < 4; ++d) CHECK(m[s][d] == 0.0);
  }
}

TEST_SUITE_END();
