// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "cli/config.h"

#include <cstdio>
#include <fstream>

#include "context/context.h"
#include "core/errors.h"
#include "core/rng.h"
#include "heads/heads.h"

namespace contsup {

using nlohmann::json;

ToyParams RunConfig::toy_params() const {
  ToyParams p;
  p.train_per_class = dataset.toy.train_per_class;
  p.test_per_class = dataset.toy.test_per_class;
  p.image_hw = dataset.toy.image_hw;
  p.noise = dataset.toy.noise;
  p.distractors = dataset.toy.distractors;
  return p;
}

json run_config_json(const RunConfig& c) {
  json j;
  j["backbone"]["family"] = c.backbone.family;
  j["backbone"]["depth"] = c.backbone.depth;
  j["partition"]["k"] = c.partition.k;
  j["partition"]["strategy"] = c.partition.strategy;
  j["context"]["mode"] = c.context.mode;
  j["context"]["per_module"] = c.context.per_module;
  j["context"]["detach"] = c.context.detach;
  j["context"]["adapter_zero_init"] = c.context.adapter_zero_init;
  j["objective"]["head"] = c.objective.head;
  j["objective"]["temperature"] = c.objective.temperature;
  j["objective"]["decoder_on"] = c.objective.decoder_on;
  j["objective"]["lambda_rec"] = c.objective.lambda_rec;
  j["training"]["epochs"] = c.training.epochs;
  j["training"]["batch_size"] = c.training.batch_size;
  j["training"]["eval_batch_size"] = c.training.eval_batch_size;
  j["training"]["lr"] = c.training.lr;
  j["training"]["momentum"] = c.training.momentum;
  j["training"]["weight_decay"] = c.training.weight_decay;
  j["training"]["schedule"] = c.training.schedule;
  j["training"]["milestones"] = c.training.milestones;
  j["training"]["gamma"] = c.training.gamma;
  j["training"]["prefetch"] = c.training.prefetch;
  j["dataset"]["name"] = c.dataset.name;
  j["dataset"]["root"] = c.dataset.root;
  j["dataset"]["augment"] = c.dataset.augment;
  j["dataset"]["toy"]["train_per_class"] = c.dataset.toy.train_per_class;
  j["dataset"]["toy"]["test_per_class"] = c.dataset.toy.test_per_class;
  j["dataset"]["toy"]["image_hw"] = c.dataset.toy.image_hw;
  j["dataset"]["toy"]["noise"] = c.dataset.toy.noise;
  j["dataset"]["toy"]["distractors"] = c.dataset.toy.distractors;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  return j;
}

namespace {

struct SweepDim {
  std::string pointer;
  json values;
};

// Validates one array-typed leaf against its schema path.
void check_list_elements(const std::string& path, const json& arr) {
  for (const json& v : arr) {
    if (path == "/seeds") {
      if (!v.is_number_integer() && !v.is_number_unsigned()) {
        throw ConfigError("config: seeds must be integers");
      }
      if (v.is_number_integer() && v.get<int64_t>() < 0) {
        throw ConfigError("config: seeds must be non-negative");
      }
    } else if (path == "/training/milestones") {
      if (!v.is_number_integer() && !v.is_number_unsigned()) {
        throw ConfigError("config: milestones must be integers");
      }
    } else if (path == "/context/per_module") {
      if (!v.is_string()) {
        throw ConfigError("config: per_module entries must be strings");
      }
    } else {
      throw ConfigError("config: unexpected list at " + path);
    }
  }
}

bool scalar_matches(const json& ref, const json& value) {
  if (ref.is_boolean()) return value.is_boolean();
  if (ref.is_string()) return value.is_string();
  if (ref.is_number_float()) return value.is_number();
  // Integer-typed field: accept any integral number.
  return value.is_number_integer() || value.is_number_unsigned();
}

// Walks the document against the reference schema. Unknown keys and type
// mismatches raise ConfigError; missing keys inherit defaults. When dims is
// non-null, an array found at a scalar position becomes a sweep dimension
// instead of an error.
json normalize(const json& ref, const json& doc, const std::string& path,
               std::vector<SweepDim>* dims) {
  if (ref.is_object()) {
    if (!doc.is_object()) {
      throw ConfigError("config: expected an object at " +
                        (path.empty() ? "/" : path));
    }
    json out = ref;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (!ref.contains(it.key())) {
        throw ConfigError("config: unknown key " + path + "/" + it.key());
      }
      out[it.key()] =
          normalize(ref[it.key()], it.value(), path + "/" + it.key(), dims);
    }
    return out;
  }
  if (ref.is_array()) {
    if (!doc.is_array()) {
      throw ConfigError("config: expected a list at " + path);
    }
    check_list_elements(path, doc);
    return doc;
  }
  // Scalar position.
  if (doc.is_array()) {
    if (dims == nullptr) {
      throw ConfigError("config: expected a scalar at " + path +
                        " (lists are only valid in sweep documents)");
    }
    if (doc.empty()) {
      throw ConfigError("config: empty sweep list at " + path);
    }
    for (const json& v : doc) {
      if (!scalar_matches(ref, v)) {
        throw ConfigError("config: sweep values at " + path +
                          " do not match the field type");
      }
    }
    dims->push_back({path, doc});
    return ref;  // placeholder; overwritten during expansion
  }
  if (!scalar_matches(ref, doc)) {
    throw ConfigError("config: wrong type at " + path);
  }
  return doc;
}

void validate(const RunConfig& c) {
  if (c.backbone.family != "resnet" && c.backbone.family != "mini") {
    throw ConfigError("config: unknown backbone/family '" +
                      c.backbone.family + "'");
  }
  if (c.backbone.depth < 2) {
    throw ConfigError("config: backbone/depth must be at least 2");
  }
  if (c.partition.k < 1) {
    throw ConfigError("config: partition/k must be at least 1");
  }
  if (c.partition.strategy != "equal_units" &&
      c.partition.strategy != "memory_balanced") {
    throw ConfigError("config: unknown partition/strategy '" +
                      c.partition.strategy + "'");
  }
  parse_context_tag(c.context.mode);
  for (const std::string& tag : c.context.per_module) {
    if (!tag.empty()) parse_context_tag(tag);
  }
  parse_head_kind(c.objective.head);
  if (c.objective.temperature <= 0.0) {
    throw ConfigError("config: objective/temperature must be positive");
  }
  if (c.objective.lambda_rec < 0.0) {
    throw ConfigError("config: objective/lambda_rec must be non-negative");
  }
  if (c.training.epochs < 0) {
    throw ConfigError("config: training/epochs must be non-negative");
  }
  if (c.training.batch_size < 1 || c.training.eval_batch_size < 1) {
    throw ConfigError("config: batch sizes must be positive");
  }
  if (c.training.lr <= 0.0) {
    throw ConfigError("config: training/lr must be positive");
  }
  if (c.training.momentum < 0.0 || c.training.momentum >= 1.0) {
    throw ConfigError("config: training/momentum must lie in [0, 1)");
  }
  if (c.training.weight_decay < 0.0) {
    throw ConfigError("config: training/weight_decay must be non-negative");
  }
  if (c.training.schedule != "cosine" && c.training.schedule != "multistep" &&
      c.training.schedule != "constant") {
    throw ConfigError("config: unknown training/schedule '" +
                      c.training.schedule + "'");
  }
  if (c.training.gamma <= 0.0) {
    throw ConfigError("config: training/gamma must be positive");
  }
  if (c.dataset.name != "toy" && c.dataset.name != "cifar10" &&
      c.dataset.name != "svhn" && c.dataset.name != "stl10") {
    throw ConfigError("config: unknown dataset/name '" + c.dataset.name + "'");
  }
  if (c.dataset.toy.train_per_class < 1 || c.dataset.toy.test_per_class < 1 ||
      c.dataset.toy.image_hw < 8) {
    throw ConfigError("config: toy dataset parameters out of range");
  }
  if (c.dataset.toy.noise < 0.0 || c.dataset.toy.distractors < 0) {
    throw ConfigError("config: toy dataset parameters out of range");
  }
  if (c.seeds.empty()) {
    throw ConfigError("config: seeds must not be empty");
  }
  if (c.output_dir.empty()) {
    throw ConfigError("config: output_dir must not be empty");
  }
}

RunConfig from_normalized(const json& n) {
  RunConfig c;
  c.backbone.family = n["backbone"]["family"].get<std::string>();
  c.backbone.depth = n["backbone"]["depth"].get<int>();
  c.partition.k = n["partition"]["k"].get<int>();
  c.partition.strategy = n["partition"]["strategy"].get<std::string>();
  c.context.mode = n["context"]["mode"].get<std::string>();
  c.context.per_module =
      n["context"]["per_module"].get<std::vector<std::string>>();
  c.context.detach = n["context"]["detach"].get<bool>();
  c.context.adapter_zero_init = n["context"]["adapter_zero_init"].get<bool>();
  c.objective.head = n["objective"]["head"].get<std::string>();
  c.objective.temperature = n["objective"]["temperature"].get<double>();
  c.objective.decoder_on = n["objective"]["decoder_on"].get<bool>();
  c.objective.lambda_rec = n["objective"]["lambda_rec"].get<double>();
  c.training.epochs = n["training"]["epochs"].get<int>();
  c.training.batch_size = n["training"]["batch_size"].get<int>();
  c.training.eval_batch_size = n["training"]["eval_batch_size"].get<int>();
  c.training.lr = n["training"]["lr"].get<double>();
  c.training.momentum = n["training"]["momentum"].get<double>();
  c.training.weight_decay = n["training"]["weight_decay"].get<double>();
  c.training.schedule = n["training"]["schedule"].get<std::string>();
  c.training.milestones = n["training"]["milestones"].get<std::vector<int>>();
  c.training.gamma = n["training"]["gamma"].get<double>();
  c.training.prefetch = n["training"]["prefetch"].get<bool>();
  c.dataset.name = n["dataset"]["name"].get<std::string>();
  c.dataset.root = n["dataset"]["root"].get<std::string>();
  c.dataset.augment = n["dataset"]["augment"].get<bool>();
  c.dataset.toy.train_per_class =
      n["dataset"]["toy"]["train_per_class"].get<int>();
  c.dataset.toy.test_per_class =
      n["dataset"]["toy"]["test_per_class"].get<int>();
  c.dataset.toy.image_hw = n["dataset"]["toy"]["image_hw"].get<int>();
  c.dataset.toy.noise = n["dataset"]["toy"]["noise"].get<double>();
  c.dataset.toy.distractors = n["dataset"]["toy"]["distractors"].get<int>();
  c.seeds = n["seeds"].get<std::vector<uint64_t>>();
  c.output_dir = n["output_dir"].get<std::string>();
  validate(c);
  return c;
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  const json ref = run_config_json(RunConfig{});
  const json normalized = normalize(ref, doc, "", nullptr);
  return from_normalized(normalized);
}

json load_json_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config: cannot open " + path);
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return doc;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(load_json_document(path));
}

std::vector<RunConfig> expand_sweep(const json& doc) {
  const json ref = run_config_json(RunConfig{});
  std::vector<SweepDim> dims;
  normalize(ref, doc, "", &dims);

  std::vector<RunConfig> configs;
  std::vector<size_t> odo(dims.size(), 0);
  while (true) {
    json concrete = doc;
    for (size_t d = 0; d < dims.size(); ++d) {
      concrete[json::json_pointer(dims[d].pointer)] = dims[d].values[odo[d]];
    }
    configs.push_back(parse_run_config(concrete));
    // Advance the odometer, last dimension fastest.
    size_t d = dims.size();
    while (d > 0) {
      --d;
      if (++odo[d] < dims[d].values.size()) break;
      odo[d] = 0;
      if (d == 0) return configs;
    }
    if (dims.empty()) return configs;
  }
}

std::string config_fingerprint(const RunConfig& config) {
  const std::string canonical = run_config_json(config).dump();
  const uint64_t h = fnv1a64(canonical);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace contsup
