// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-module heads. Every module but the last carries an auxiliary head
// that defines its local objective: either a small classifier trained with
// cross-entropy or a projection head trained with the supervised
// contrastive loss, optionally joined by a reconstruction decoder. The last
// module uses the plain pooled linear classifier that would terminate the
// unpartitioned network.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core/tensor.h"
#include "nn/layers.h"
#include "nn/losses.h"

namespace contsup {

enum class HeadKind { kSoftmax, kContrast };

HeadKind parse_head_kind(const std::string& name);
std::string format_head_kind(HeadKind kind);

// Interface implemented by classifier heads (and by test doubles).
class FeatureHead {
 public:
  virtual ~FeatureHead() = default;
  virtual Tensor forward(const Tensor& features, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(std::vector<Param*>& out) = 0;
  virtual void collect_buffers(std::vector<Tensor*>& out) = 0;
  virtual void init(Rng& rng) = 0;
  // True when forward() yields class logits; false when it yields embeddings
  // for the contrastive objective.
  virtual bool produces_logits() const = 0;
};

// Auxiliary head: one 3x3 convolution whose stride and width depend on how
// much the feature map is already reduced relative to the input image
// (full or half resolution: stride 2, at 32 or 64 channels; quarter or
// less: stride 1 at 64 channels), then norm, rectification, global average
// pooling and a two-layer classifier or projector.
class AuxHead : public FeatureHead {
 public:
  AuxHead(Shape feature_shape, int image_h, int num_classes, HeadKind kind);

  Tensor forward(const Tensor& features, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Tensor*>& out) override;
  void init(Rng& rng) override;
  bool produces_logits() const override { return kind_ == HeadKind::kSoftmax; }

  int conv_channels() const { return conv_channels_; }
  int conv_stride() const { return conv_stride_; }
  int64_t param_count() const;
  int64_t activation_elements() const;
  int64_t mac_count() const;

 private:
  Shape in_shape_;
  HeadKind kind_;
  int conv_channels_ = 0;
  int conv_stride_ = 1;
  int out_width_ = 0;
  Sequential<float> net_;
};

// Final-module head: global average pooling followed by a linear classifier.
class FinalHead : public FeatureHead {
 public:
  FinalHead(Shape feature_shape, int num_classes);

  Tensor forward(const Tensor& features, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Tensor*>& out) override;
  void init(Rng& rng) override;
  bool produces_logits() const override { return true; }

  int64_t param_count() const;
  int64_t activation_elements() const;
  int64_t mac_count() const;

 private:
  Shape in_shape_;
  int num_classes_;
  Sequential<float> net_;
};

// Reconstruction decoder: bilinear resize to the image resolution, a 3x3
// convolution to 12 channels with norm and rectification, and a 3x3
// convolution to 3 channels squashed into [0, 1].
class AuxDecoder {
 public:
  AuxDecoder(Shape feature_shape, Shape image_shape);

  Tensor forward(const Tensor& features, bool train);
  Tensor backward(const Tensor& grad_out);
  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Tensor*>& out);
  void init(Rng& rng);

  int64_t param_count() const;
  int64_t activation_elements() const;
  int64_t mac_count() const;

 private:
  Shape in_shape_;
  Shape image_shape_;
  Sequential<float> net_;
};

// One module's local objective evaluated on features h:
//   total = classifier_term + lambda_rec * reconstruction_term
// When grad_h is non-null the full backward pass runs: head and decoder
// parameter gradients accumulate and *grad_h receives d total / d h.
struct LocalObjectiveResult {
  double total = 0.0;
  double classifier_term = 0.0;
  double reconstruction_term = 0.0;
  // Correct top-1 predictions on this batch; -1 when the head yields
  // embeddings rather than logits.
  int correct = -1;
  bool had_positive_pair = true;
};

LocalObjectiveResult local_objective(FeatureHead& head, AuxDecoder* decoder,
                                     const Tensor& features,
                                     const std::vector<int>& labels,
                                     const Tensor* images01, double temperature,
                                     double lambda_rec, bool train,
                                     Tensor* grad_h);

// Top-1 correct count for a logits batch.
int count_correct(const Tensor& logits, const std::vector<int>& labels);

}  // namespace contsup
