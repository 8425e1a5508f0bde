// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Training engine for greedily trained partitioned networks. The backbone
// is split into K gradient-isolated modules; each carries its own local
// objective (auxiliary head, optional decoder), its own optimizer, and the
// adapters for whatever context sources its configuration grants it.
//
// One training step processes the modules in ascending order: compose the
// incoming feature with adapted context, run the segment, evaluate the
// local objective, and backpropagate within the module only. Stored context
// features are detached by default, so no gradient crosses a module
// boundary; a configuration switch re-enables that flow for ablation, in
// which case cross-boundary gradients are accumulated before any parameter
// update so every module still updates from a consistent snapshot.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "backbone/backbone.h"
#include "backbone/partition.h"
#include "context/context.h"
#include "core/tensor.h"
#include "heads/heads.h"
#include "nn/optim.h"

namespace contsup {

struct EngineOptions {
  // Stop gradients at stored context features (the default preserves strict
  // per-module locality; disabling it is an ablation).
  bool detach_context = true;
  // Start adapters at exact zero output so a context-supplied network is
  // initially indistinguishable from the baseline.
  bool adapter_zero_init = true;
};

struct ModulePlanEntry {
  ContextSources sources;
  HeadKind head_kind = HeadKind::kSoftmax;
  bool decoder_on = false;
};

struct NetworkPlan {
  BackboneSpec backbone;
  PartitionPlan partition;
  std::vector<ModulePlanEntry> modules;  // one per partition module
  double temperature = 0.5;
  double lambda_rec = 1.0;
  EngineOptions options;
};

struct ModuleBundle {
  int index = 0;  // 1-based
  ModuleRange range;
  Sequential<float> segment;
  std::vector<ContextSource> sources;
  std::vector<std::unique_ptr<ContextAdapter>> adapters;
  std::unique_ptr<FeatureHead> head;
  std::unique_ptr<AuxDecoder> decoder;
  HeadKind head_kind = HeadKind::kSoftmax;
  bool is_final = false;
  ComposeOp compose;
  std::vector<Param*> params;
  std::vector<Tensor*> buffers;
};

class Network {
 public:
  NetworkPlan plan;
  std::vector<ModuleBundle> modules;

  int k() const { return static_cast<int>(modules.size()); }
  int num_classes() const { return plan.backbone.config.num_classes; }
  std::vector<Param*> all_params() const;
};

// Builds and initializes the network. Weight initialization draws from
// role-separated deterministic streams so that configurations differing
// only in context mode share identical backbone and head weights.
std::unique_ptr<Network> build_network(const NetworkPlan& plan, uint64_t seed);

struct Batch {
  Tensor x;                // normalized inputs
  std::vector<int> labels;
  Tensor images01;         // de-normalized reconstruction targets; may be empty

  int size() const { return x.n(); }
};

// A deterministic sequence of batches, one epoch at a time. Implementations
// may produce batches ahead of the consumer as long as order is preserved.
class BatchStream {
 public:
  virtual ~BatchStream() = default;
  virtual void start_epoch(int epoch) = 0;
  virtual int batches_per_epoch() const = 0;
  virtual Batch next() = 0;
};

struct ModuleStepStats {
  double total = 0.0;
  double classifier_term = 0.0;
  double reconstruction_term = 0.0;
  int correct = -1;  // -1 for embedding heads
  int count = 0;
};

// Forward pass through all modules. Fills per-module output features when
// requested: outputs[l-1] is module l's segment output, stored[j] is the
// augmented feature with index j (stored[0] is the batch input).
Tensor forward_all(Network& net, const Tensor& x, bool train,
                   std::vector<Tensor>* stored = nullptr,
                   std::vector<Tensor>* outputs = nullptr);

// Forward and backward without parameter updates. Gradients accumulate into
// the parameter buffers. backward_mask, when given, selects which modules'
// objectives propagate (used to examine isolation); by default all do.
// Throws NumericError if any module's loss is non-finite.
std::vector<ModuleStepStats> forward_backward(
    Network& net, const Batch& batch,
    const std::vector<bool>* backward_mask = nullptr);

// One optimization step: zero gradients, forward/backward, then per-module
// parameter updates in ascending module order.
std::vector<ModuleStepStats> train_step(Network& net, const Batch& batch,
                                        std::vector<SgdNesterov<float>>& opts);

struct EvalResult {
  // Fraction of test errors per module; NaN for modules whose heads yield
  // embeddings instead of logits.
  std::vector<double> module_error;
  double final_error = 1.0;
  int64_t samples = 0;
};

EvalResult evaluate(Network& net, BatchStream& eval_stream);

struct TrainSettings {
  int epochs = 160;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  LrSchedule::Kind schedule = LrSchedule::Kind::kCosine;
  std::vector<int> milestones;
  double gamma = 0.1;
};

struct EpochModuleRow {
  int epoch = 0;   // 1-based; 0 for the no-training evaluation pass
  int module = 0;  // 1-based
  double lr = 0.0;
  double train_total = 0.0;
  double train_cls = 0.0;
  double train_rec = 0.0;
  double train_err = 0.0;  // NaN for embedding heads
  double test_err = 0.0;   // NaN for embedding heads except the final module
};

struct TrainOutcome {
  std::vector<EpochModuleRow> rows;
  std::vector<double> final_module_errors;
  double final_error = 1.0;
  double best_final_error = 1.0;
  int best_epoch = 0;
  int64_t steps_run = 0;
  std::string status = "ok";

  bool ok() const { return status == "ok"; }
};

// Invoked after each epoch's evaluation; is_best marks a new best final
// test error (checkpoint opportunity).
using EpochHook =
    std::function<void(const Network&, int epoch, double final_test_error,
                       bool is_best)>;

// Full training loop. epochs == 0 performs a single evaluation pass at
// initialization. A non-finite loss aborts training; the outcome carries
// the rows produced so far and a status describing the failure.
TrainOutcome train(Network& net, BatchStream& train_stream,
                   BatchStream& eval_stream, const TrainSettings& settings,
                   const EpochHook& hook = nullptr);

// Mean normalized adapter weight strength as a (source, destination)
// matrix: entry [s][d-1] aggregates the adapters feeding module d from
// augmented feature s (s = 0 covers both original-input paths). Entries
// without an adapter are zero.
std::vector<std::vector<double>> adapter_weight_matrix(const Network& net);

}  // namespace contsup
