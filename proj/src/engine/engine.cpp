// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "engine/engine.h"

#include <cmath>
#include <limits>

#include "core/errors.h"

namespace contsup {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void check_finite(double loss, int module_index) {
  if (!std::isfinite(loss)) {
    throw NumericError("module " + std::to_string(module_index) +
                       ": non-finite loss");
  }
}

}  // namespace

std::vector<Param*> Network::all_params() const {
  std::vector<Param*> out;
  for (const auto& m : modules) {
    out.insert(out.end(), m.params.begin(), m.params.end());
  }
  return out;
}

std::unique_ptr<Network> build_network(const NetworkPlan& plan,
                                       uint64_t seed) {
  const int k = plan.partition.k();
  if (static_cast<int>(plan.modules.size()) != k) {
    throw InvariantViolation("build_network: plan lists " +
                             std::to_string(plan.modules.size()) +
                             " module entries for k=" + std::to_string(k));
  }
  if (plan.partition.num_units != plan.backbone.num_units()) {
    throw InvariantViolation(
        "build_network: partition covers " +
        std::to_string(plan.partition.num_units) + " units but the backbone has " +
        std::to_string(plan.backbone.num_units()));
  }

  auto net = std::make_unique<Network>();
  net->plan = plan;
  net->modules.resize(k);

  const Shape image = plan.backbone.config.input;
  const int classes = plan.backbone.config.num_classes;

  for (int l = 1; l <= k; ++l) {
    ModuleBundle& b = net->modules[l - 1];
    b.index = l;
    b.range = plan.partition.modules[l - 1];
    b.is_final = (l == k);
    for (int u = b.range.begin; u < b.range.end; ++u) {
      b.segment.add(make_unit_layer(plan.backbone.units[u]));
    }
    const Shape out_shape = plan.backbone.shape_before(b.range.end);
    if (b.is_final) {
      b.head_kind = HeadKind::kSoftmax;
      b.head = std::make_unique<FinalHead>(out_shape, classes);
    } else {
      b.head_kind = plan.modules[l - 1].head_kind;
      b.head = std::make_unique<AuxHead>(out_shape, image.h, classes,
                                         b.head_kind);
      if (plan.modules[l - 1].decoder_on) {
        b.decoder = std::make_unique<AuxDecoder>(out_shape, image);
      }
    }
    b.sources = plan.modules[l - 1].sources.sources;
    if (!b.sources.empty() && l == 1) {
      throw InvariantViolation("build_network: module 1 cannot take context");
    }
    for (const auto& src : b.sources) {
      const AdapterSpec aspec =
          make_adapter_spec(src, plan.backbone, plan.partition, l);
      b.adapters.push_back(std::make_unique<ContextAdapter>(
          aspec, plan.options.adapter_zero_init));
    }
  }

  // Role-separated initialization streams: the backbone and head draws are
  // unaffected by how many adapters or decoders the configuration builds.
  Rng backbone_rng = Rng::derive(seed, "init/backbone");
  for (auto& m : net->modules) m.segment.init(backbone_rng);
  Rng head_rng = Rng::derive(seed, "init/heads");
  for (auto& m : net->modules) m.head->init(head_rng);
  Rng adapter_rng = Rng::derive(seed, "init/adapters");
  for (auto& m : net->modules) {
    for (auto& a : m.adapters) a->init(adapter_rng);
  }
  Rng decoder_rng = Rng::derive(seed, "init/decoders");
  for (auto& m : net->modules) {
    if (m.decoder) m.decoder->init(decoder_rng);
  }

  for (auto& m : net->modules) {
    m.segment.collect_params(m.params);
    for (auto& a : m.adapters) a->collect_params(m.params);
    m.head->collect_params(m.params);
    if (m.decoder) m.decoder->collect_params(m.params);
    m.segment.collect_buffers(m.buffers);
    for (auto& a : m.adapters) a->collect_buffers(m.buffers);
    m.head->collect_buffers(m.buffers);
    if (m.decoder) m.decoder->collect_buffers(m.buffers);
  }
  return net;
}

namespace {

// Gathers the tensors feeding a module's adapters. stored[j] holds the
// augmented feature with index j; stored[0] is the original input.
std::vector<const Tensor*> gather_sources(const ModuleBundle& b,
                                          const std::vector<Tensor>& stored) {
  std::vector<const Tensor*> values;
  values.reserve(b.sources.size());
  for (const auto& src : b.sources) {
    const int j = src.kind == SourceKind::kOriginInput ? 0 : src.index;
    if (j < 0 || j >= static_cast<int>(stored.size())) {
      throw InvariantViolation("context source index " + std::to_string(j) +
                               " not yet stored");
    }
    values.push_back(&stored[j]);
  }
  return values;
}

}  // namespace

Tensor forward_all(Network& net, const Tensor& x, bool train,
                   std::vector<Tensor>* stored_out,
                   std::vector<Tensor>* outputs) {
  const int k = net.k();
  std::vector<Tensor> stored(k);
  stored[0] = x;
  Tensor h = x;
  for (int l = 1; l <= k; ++l) {
    ModuleBundle& b = net.modules[l - 1];
    const auto values = gather_sources(b, stored);
    std::vector<ContextAdapter*> adapters;
    adapters.reserve(b.adapters.size());
    for (auto& a : b.adapters) adapters.push_back(a.get());
    Tensor hc = b.compose.forward(h, adapters, values, train);
    stored[l - 1] = hc;
    h = b.segment.forward(hc, train);
    if (outputs) outputs->push_back(h);
  }
  if (stored_out) *stored_out = std::move(stored);
  return h;
}

std::vector<ModuleStepStats> forward_backward(
    Network& net, const Batch& batch, const std::vector<bool>* backward_mask) {
  const int k = net.k();
  if (backward_mask && static_cast<int>(backward_mask->size()) != k) {
    throw InvariantViolation("forward_backward: mask size mismatch");
  }
  std::vector<ModuleStepStats> stats(k);

  // stored[j]: augmented feature j (input to module j+1 after composition).
  std::vector<Tensor> stored(k);
  stored[0] = batch.x;
  // Cross-boundary gradients (non-detached mode only), kept separate per
  // landing site: pending_stored[j] has not yet flowed through the producer
  // of stored[j] (module j+1's adapters plus module j's output), while
  // pending_h[j] has already passed that composition and awaits module j's
  // segment backward.
  std::vector<Tensor> pending_stored(k);
  std::vector<Tensor> pending_h(k);
  auto add_into = [](Tensor& slot, Tensor&& grad) {
    if (slot.empty()) {
      slot = std::move(grad);
    } else {
      slot.add_(grad);
    }
  };

  Tensor h = batch.x;
  for (int l = 1; l <= k; ++l) {
    ModuleBundle& b = net.modules[l - 1];
    const auto values = gather_sources(b, stored);
    std::vector<ContextAdapter*> adapters;
    adapters.reserve(b.adapters.size());
    for (auto& a : b.adapters) adapters.push_back(a.get());
    Tensor hc = b.compose.forward(h, adapters, values, true);
    stored[l - 1] = hc;
    h = b.segment.forward(hc, true);

    const bool do_backward = !backward_mask || (*backward_mask)[l - 1];
    Tensor grad_h;
    LocalObjectiveResult obj = local_objective(
        *b.head, b.decoder.get(), h, batch.labels,
        batch.images01.empty() ? nullptr : &batch.images01,
        net.plan.temperature, net.plan.lambda_rec, true,
        do_backward ? &grad_h : nullptr);
    check_finite(obj.total, l);
    stats[l - 1] = {obj.total, obj.classifier_term, obj.reconstruction_term,
                    obj.correct, batch.size()};

    if (do_backward) {
      Tensor grad_hc = b.segment.backward(grad_h);
      std::vector<Tensor> source_grads = b.compose.backward(grad_hc);
      if (!net.plan.options.detach_context) {
        for (size_t s = 0; s < b.sources.size(); ++s) {
          const auto& src = b.sources[s];
          if (src.kind != SourceKind::kAugmentedFeature) continue;
          add_into(pending_stored[src.index], std::move(source_grads[s]));
        }
        // This module's own composition backward already covered its
        // adapters, so the remaining flow out of grad_hc lands directly on
        // the previous module's segment output.
        if (l >= 2) add_into(pending_h[l - 1], std::move(grad_hc));
      }
    }
  }

  // Resolve deferred cross-boundary gradients deepest-first so every
  // contribution lands before a shallower feature is processed.
  if (!net.plan.options.detach_context) {
    for (int j = k - 1; j >= 1; --j) {
      if (!pending_stored[j].empty()) {
        Tensor g = std::move(pending_stored[j]);
        pending_stored[j] = Tensor();
        // stored[j] = h_j + adapted context, composed by module j+1.
        ModuleBundle& producer = net.modules[j];
        std::vector<Tensor> src_grads = producer.compose.backward(g);
        for (size_t s = 0; s < producer.sources.size(); ++s) {
          const auto& src = producer.sources[s];
          if (src.kind != SourceKind::kAugmentedFeature) continue;
          add_into(pending_stored[src.index], std::move(src_grads[s]));
        }
        add_into(pending_h[j], std::move(g));
      }
      if (!pending_h[j].empty()) {
        ModuleBundle& owner = net.modules[j - 1];  // module j
        Tensor gseg = owner.segment.backward(pending_h[j]);
        pending_h[j] = Tensor();
        if (j >= 2) add_into(pending_stored[j - 1], std::move(gseg));
      }
    }
  }
  return stats;
}

std::vector<ModuleStepStats> train_step(Network& net, const Batch& batch,
                                        std::vector<SgdNesterov<float>>& opts) {
  if (static_cast<int>(opts.size()) != net.k()) {
    throw InvariantViolation("train_step: one optimizer per module required");
  }
  for (auto& o : opts) o.zero_grad();
  auto stats = forward_backward(net, batch);
  // All gradients are complete before any parameter moves, so each module's
  // forward consumed exactly the values the gradients were computed against.
  for (auto& o : opts) o.step();
  return stats;
}

EvalResult evaluate(Network& net, BatchStream& eval_stream) {
  const int k = net.k();
  EvalResult res;
  std::vector<int64_t> wrong(k, 0);
  std::vector<bool> scored(k, false);
  int64_t total = 0;

  eval_stream.start_epoch(0);
  const int nb = eval_stream.batches_per_epoch();
  for (int bi = 0; bi < nb; ++bi) {
    Batch batch = eval_stream.next();
    std::vector<Tensor> outputs;
    forward_all(net, batch.x, false, nullptr, &outputs);
    for (int l = 1; l <= k; ++l) {
      ModuleBundle& b = net.modules[l - 1];
      if (!b.head->produces_logits()) continue;
      Tensor logits = b.head->forward(outputs[l - 1], false);
      wrong[l - 1] += batch.size() - count_correct(logits, batch.labels);
      scored[l - 1] = true;
    }
    total += batch.size();
  }
  if (total == 0) {
    throw InvariantViolation("evaluate: empty evaluation stream");
  }
  res.samples = total;
  res.module_error.resize(k, kNan);
  for (int l = 0; l < k; ++l) {
    if (scored[l]) {
      res.module_error[l] = static_cast<double>(wrong[l]) / total;
    }
  }
  res.final_error = res.module_error[k - 1];
  return res;
}

TrainOutcome train(Network& net, BatchStream& train_stream,
                   BatchStream& eval_stream, const TrainSettings& settings,
                   const EpochHook& hook) {
  const int k = net.k();
  TrainOutcome out;
  out.best_final_error = std::numeric_limits<double>::infinity();

  std::vector<SgdNesterov<float>> opts;
  opts.reserve(k);
  for (auto& m : net.modules) {
    opts.emplace_back(m.params, settings.lr, settings.momentum,
                      settings.weight_decay);
  }
  LrSchedule schedule;
  schedule.kind = settings.schedule;
  schedule.base_lr = settings.lr;
  schedule.total_epochs = settings.epochs;
  schedule.milestones = settings.milestones;
  schedule.gamma = settings.gamma;

  if (settings.epochs == 0) {
    EvalResult ev = evaluate(net, eval_stream);
    for (int l = 1; l <= k; ++l) {
      EpochModuleRow row;
      row.epoch = 0;
      row.module = l;
      row.lr = 0.0;
      row.train_total = kNan;
      row.train_cls = kNan;
      row.train_rec = kNan;
      row.train_err = kNan;
      row.test_err = ev.module_error[l - 1];
      out.rows.push_back(row);
    }
    out.final_module_errors = ev.module_error;
    out.final_error = ev.final_error;
    out.best_final_error = ev.final_error;
    out.best_epoch = 0;
    if (hook) hook(net, 0, ev.final_error, true);
    return out;
  }

  for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
    const double lr = schedule.at(epoch - 1);
    for (auto& o : opts) o.set_lr(lr);

    std::vector<double> sum_total(k, 0.0), sum_cls(k, 0.0), sum_rec(k, 0.0);
    std::vector<int64_t> correct(k, 0);
    std::vector<bool> has_acc(k, false);
    int64_t seen = 0;

    train_stream.start_epoch(epoch);
    const int nb = train_stream.batches_per_epoch();
    try {
      for (int bi = 0; bi < nb; ++bi) {
        Batch batch = train_stream.next();
        auto stats = train_step(net, batch, opts);
        for (int l = 0; l < k; ++l) {
          sum_total[l] += stats[l].total * batch.size();
          sum_cls[l] += stats[l].classifier_term * batch.size();
          sum_rec[l] += stats[l].reconstruction_term * batch.size();
          if (stats[l].correct >= 0) {
            correct[l] += stats[l].correct;
            has_acc[l] = true;
          }
        }
        seen += batch.size();
        ++out.steps_run;
      }
    } catch (const NumericError& e) {
      out.status = std::string(e.what()) + " (epoch " +
                   std::to_string(epoch) + ")";
      return out;
    }

    EvalResult ev = evaluate(net, eval_stream);
    for (int l = 1; l <= k; ++l) {
      EpochModuleRow row;
      row.epoch = epoch;
      row.module = l;
      row.lr = lr;
      row.train_total = seen ? sum_total[l - 1] / seen : kNan;
      row.train_cls = seen ? sum_cls[l - 1] / seen : kNan;
      row.train_rec = seen ? sum_rec[l - 1] / seen : kNan;
      row.train_err =
          has_acc[l - 1] && seen
              ? 1.0 - static_cast<double>(correct[l - 1]) / seen
              : kNan;
      row.test_err = ev.module_error[l - 1];
      out.rows.push_back(row);
    }
    out.final_module_errors = ev.module_error;
    out.final_error = ev.final_error;
    const bool is_best = ev.final_error < out.best_final_error;
    if (is_best) {
      out.best_final_error = ev.final_error;
      out.best_epoch = epoch;
    }
    if (hook) hook(net, epoch, ev.final_error, is_best);
  }
  return out;
}

std::vector<std::vector<double>> adapter_weight_matrix(const Network& net) {
  const int k = net.k();
  std::vector<std::vector<double>> matrix(
      k, std::vector<double>(k, 0.0));
  std::vector<std::vector<int>> counts(k, std::vector<int>(k, 0));
  for (const auto& m : net.modules) {
    for (size_t s = 0; s < m.sources.size(); ++s) {
      const auto& src = m.sources[s];
      const int row = src.kind == SourceKind::kOriginInput ? 0 : src.index;
      const int col = m.index - 1;
      matrix[row][col] += m.adapters[s]->mean_normalized_l1();
      counts[row][col] += 1;
    }
  }
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) {
      if (counts[r][c] > 1) matrix[r][c] /= counts[r][c];
    }
  }
  return matrix;
}

}  // namespace contsup
