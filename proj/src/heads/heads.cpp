// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "heads/heads.h"

#include "core/errors.h"

namespace contsup {

HeadKind parse_head_kind(const std::string& name) {
  if (name == "softmax") return HeadKind::kSoftmax;
  if (name == "contrast") return HeadKind::kContrast;
  throw ConfigError("unknown head kind '" + name +
                    "' (expected 'softmax' or 'contrast')");
}

std::string format_head_kind(HeadKind kind) {
  return kind == HeadKind::kSoftmax ? "softmax" : "contrast";
}

AuxHead::AuxHead(Shape feature_shape, int image_h, int num_classes,
                 HeadKind kind)
    : in_shape_(feature_shape), kind_(kind) {
  if (feature_shape.h <= 0 || image_h < feature_shape.h) {
    throw InvariantViolation("aux head: feature height " +
                             std::to_string(feature_shape.h) +
                             " exceeds image height " + std::to_string(image_h));
  }
  const int reduction = image_h / feature_shape.h;
  if (reduction <= 1) {
    conv_stride_ = 2;
    conv_channels_ = 32;
  } else if (reduction == 2) {
    conv_stride_ = 2;
    conv_channels_ = 64;
  } else {
    conv_stride_ = 1;
    conv_channels_ = 64;
  }
  out_width_ = kind == HeadKind::kSoftmax ? num_classes : 128;

  net_.emplace<Conv2d<float>>(feature_shape.c, conv_channels_, 3, conv_stride_,
                              1, false);
  net_.emplace<BatchNorm2d<float>>(conv_channels_);
  net_.emplace<ReLU<float>>();
  net_.emplace<AdaptiveAvgPool2d<float>>(1, 1);
  net_.emplace<Linear<float>>(conv_channels_, 128);
  net_.emplace<ReLU<float>>();
  net_.emplace<Linear<float>>(128, out_width_);
}

Tensor AuxHead::forward(const Tensor& features, bool train) {
  return net_.forward(features, train);
}
Tensor AuxHead::backward(const Tensor& grad_out) {
  return net_.backward(grad_out);
}
void AuxHead::collect_params(std::vector<Param*>& out) {
  net_.collect_params(out);
}
void AuxHead::collect_buffers(std::vector<Tensor*>& out) {
  net_.collect_buffers(out);
}
void AuxHead::init(Rng& rng) { net_.init(rng); }

int64_t AuxHead::param_count() const {
  const int64_t conv = static_cast<int64_t>(in_shape_.c) * conv_channels_ * 9;
  const int64_t bn = 2 * conv_channels_;
  const int64_t fc1 = static_cast<int64_t>(conv_channels_) * 128 + 128;
  const int64_t fc2 = static_cast<int64_t>(128) * out_width_ + out_width_;
  return conv + bn + fc1 + fc2;
}

int64_t AuxHead::activation_elements() const {
  const int ho = (in_shape_.h + 2 - 3) / conv_stride_ + 1;
  const int wo = (in_shape_.w + 2 - 3) / conv_stride_ + 1;
  // conv, norm, relu maps plus the two fully connected outputs (the second
  // linear input is the first's rectified output).
  return 3 * static_cast<int64_t>(conv_channels_) * ho * wo + 2 * 128 +
         out_width_;
}

int64_t AuxHead::mac_count() const {
  const int ho = (in_shape_.h + 2 - 3) / conv_stride_ + 1;
  const int wo = (in_shape_.w + 2 - 3) / conv_stride_ + 1;
  return static_cast<int64_t>(in_shape_.c) * conv_channels_ * 9 * ho * wo +
         static_cast<int64_t>(conv_channels_) * 128 + 128LL * out_width_;
}

FinalHead::FinalHead(Shape feature_shape, int num_classes)
    : in_shape_(feature_shape), num_classes_(num_classes) {
  net_.emplace<AdaptiveAvgPool2d<float>>(1, 1);
  net_.emplace<Linear<float>>(feature_shape.c, num_classes);
}

Tensor FinalHead::forward(const Tensor& features, bool train) {
  return net_.forward(features, train);
}
Tensor FinalHead::backward(const Tensor& grad_out) {
  return net_.backward(grad_out);
}
void FinalHead::collect_params(std::vector<Param*>& out) {
  net_.collect_params(out);
}
void FinalHead::collect_buffers(std::vector<Tensor*>& out) {
  net_.collect_buffers(out);
}
void FinalHead::init(Rng& rng) { net_.init(rng); }

int64_t FinalHead::param_count() const {
  return static_cast<int64_t>(in_shape_.c) * num_classes_ + num_classes_;
}
int64_t FinalHead::activation_elements() const { return num_classes_; }
int64_t FinalHead::mac_count() const {
  return static_cast<int64_t>(in_shape_.c) * num_classes_;
}

AuxDecoder::AuxDecoder(Shape feature_shape, Shape image_shape)
    : in_shape_(feature_shape), image_shape_(image_shape) {
  net_.emplace<BilinearUpsample<float>>(image_shape.h, image_shape.w);
  net_.emplace<Conv2d<float>>(feature_shape.c, 12, 3, 1, 1, false);
  net_.emplace<BatchNorm2d<float>>(12);
  net_.emplace<ReLU<float>>();
  net_.emplace<Conv2d<float>>(12, image_shape.c, 3, 1, 1, true);
  net_.emplace<Sigmoid<float>>();
}

Tensor AuxDecoder::forward(const Tensor& features, bool train) {
  return net_.forward(features, train);
}
Tensor AuxDecoder::backward(const Tensor& grad_out) {
  return net_.backward(grad_out);
}
void AuxDecoder::collect_params(std::vector<Param*>& out) {
  net_.collect_params(out);
}
void AuxDecoder::collect_buffers(std::vector<Tensor*>& out) {
  net_.collect_buffers(out);
}
void AuxDecoder::init(Rng& rng) { net_.init(rng); }

int64_t AuxDecoder::param_count() const {
  const int64_t conv1 = static_cast<int64_t>(in_shape_.c) * 12 * 9 + 2 * 12;
  const int64_t conv2 =
      static_cast<int64_t>(12) * image_shape_.c * 9 + image_shape_.c;
  return conv1 + conv2;
}

int64_t AuxDecoder::activation_elements() const {
  const int64_t hw = static_cast<int64_t>(image_shape_.h) * image_shape_.w;
  // conv/norm/relu at 12 channels, then conv and sigmoid maps at the image
  // channel count, all at image resolution.
  return 3 * 12 * hw + 2 * static_cast<int64_t>(image_shape_.c) * hw;
}

int64_t AuxDecoder::mac_count() const {
  const int64_t hw = static_cast<int64_t>(image_shape_.h) * image_shape_.w;
  return static_cast<int64_t>(in_shape_.c) * 12 * 9 * hw +
         static_cast<int64_t>(12) * image_shape_.c * 9 * hw;
}

int count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const int classes = static_cast<int>(logits.features());
  int correct = 0;
  for (int i = 0; i < logits.n(); ++i) {
    const float* z = logits.data() + static_cast<size_t>(i) * classes;
    int arg = 0;
    for (int k = 1; k < classes; ++k) {
      if (z[k] > z[arg]) arg = k;
    }
    if (arg == labels[i]) ++correct;
  }
  return correct;
}

LocalObjectiveResult local_objective(FeatureHead& head, AuxDecoder* decoder,
                                     const Tensor& features,
                                     const std::vector<int>& labels,
                                     const Tensor* images01, double temperature,
                                     double lambda_rec, bool train,
                                     Tensor* grad_h) {
  LocalObjectiveResult res;
  Tensor out = head.forward(features, train);
  if (head.produces_logits()) {
    res.correct = count_correct(out, labels);
    LossResult<float> ce = cross_entropy(out, labels);
    res.classifier_term = ce.loss;
    if (grad_h) *grad_h = head.backward(ce.grad);
  } else {
    ContrastiveResult<float> sc =
        supervised_contrastive(out, labels, temperature);
    res.classifier_term = sc.loss;
    res.had_positive_pair = sc.had_positive_pair;
    if (grad_h) *grad_h = head.backward(sc.grad);
  }
  res.total = res.classifier_term;

  if (decoder) {
    if (!images01) {
      throw InvariantViolation(
          "local_objective: decoder enabled but no image targets supplied");
    }
    Tensor rec = decoder->forward(features, train);
    LossResult<float> mse = mean_squared_error(rec, *images01);
    res.reconstruction_term = mse.loss;
    res.total += lambda_rec * mse.loss;
    if (grad_h) {
      mse.grad.scale_(static_cast<float>(lambda_rec));
      grad_h->add_(decoder->backward(mse.grad));
    }
  }
  return res;
}

}  // namespace contsup
