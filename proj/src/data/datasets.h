// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion and batch production. Images are stored as raw bytes in
// sample-major channel/row/column order; streams normalize by per-channel
// training statistics and apply the per-dataset augmentation policy
// (zero-padded random translation, optional horizontal flip). All
// randomness is derived from the stream seed, so batch sequences are
// reproducible sample for sample.

#pragma once

#include <array>
#include <cstdint>
#include <future>
#include <string>
#include <vector>

#include "core/rng.h"
#include "core/tensor.h"
#include "engine/engine.h"

namespace contsup {

struct Dataset {
  std::string name;
  Shape input;
  int num_classes = 0;
  std::vector<uint8_t> train_x;  // train_count * c*h*w bytes
  std::vector<int> train_y;
  std::vector<uint8_t> test_x;
  std::vector<int> test_y;
  // Channel statistics over the training split, in [0, 1] pixel units.
  std::array<float, 3> channel_mean{};
  std::array<float, 3> channel_std{};

  int64_t sample_elements() const {
    return static_cast<int64_t>(input.c) * input.h * input.w;
  }
  int64_t train_count() const {
    return sample_elements() ? static_cast<int64_t>(train_x.size()) / sample_elements() : 0;
  }
  int64_t test_count() const {
    return sample_elements() ? static_cast<int64_t>(test_x.size()) / sample_elements() : 0;
  }
};

struct AugmentPolicy {
  int translate = 0;  // uniform offset in [-translate, translate], zero fill
  bool hflip = false;
};

// The shipped per-dataset policies: 4-pixel translation with flip for the
// 32x32 and 96x96 natural-image sets, 2-pixel translation without flip for
// the digit set, nothing for the synthetic set.
AugmentPolicy default_augment(const std::string& dataset_name);

struct ToyParams {
  int train_per_class = 200;
  int test_per_class = 40;
  int image_hw = 16;
  // Blob extent as a fraction of image side.
  double blob_sigma_frac = 0.14;
  double signal_amp = 1.0;
  double distractor_amp = 0.45;
  int distractors = 2;
  double background = 0.2;
  double noise = 0.05;
};

// Synthetic 10-class set: classes are position/texture signatures. Class c
// places a Gaussian blob at one of five canonical positions (c mod 5) and
// fills it with a two-tone stripe pattern whose orientation is horizontal
// or vertical (c div 5). The stripes alternate at single-pixel pitch, so
// average color is identical across the two orientations and the texture
// bit does not survive 2x spatial averaging. Fainter distractor blobs with
// random signatures and pixel noise complete the image. Deterministic in
// (seed, params); sample i of a split depends only on (seed, split, i).
Dataset make_toy_dataset(uint64_t seed, const ToyParams& params = {});

Dataset load_cifar10(const std::string& root);
Dataset load_svhn(const std::string& root);
Dataset load_stl10(const std::string& root);

// Dispatch over {toy, cifar10, svhn, stl10}. Real datasets raise an
// ingestion error with fetch instructions when files are absent.
Dataset load_dataset(const std::string& name, const std::string& root,
                     uint64_t toy_seed = 0, const ToyParams& toy = {});

// Computes channel statistics from the training split (called by loaders).
void compute_channel_stats(Dataset& ds);

// Shuffled, augmented, normalized training batches; the trailing partial
// batch is dropped. With prefetch enabled the next batch is assembled on a
// worker thread while the consumer trains; order is unchanged.
class TrainStream final : public BatchStream {
 public:
  TrainStream(const Dataset& ds, int batch_size, uint64_t seed,
              AugmentPolicy augment, bool want_images01,
              bool prefetch = false);
  ~TrainStream() override;

  void start_epoch(int epoch) override;
  int batches_per_epoch() const override;
  Batch next() override;

 private:
  Batch build_batch();

  const Dataset& ds_;
  int batch_size_;
  uint64_t seed_;
  AugmentPolicy augment_;
  bool want_images01_;
  bool prefetch_;
  std::vector<int> order_;
  int64_t cursor_ = 0;
  Rng aug_rng_;
  std::future<Batch> pending_;
};

// Deterministic in-order pass over one split, no augmentation, partial
// final batch included.
class EvalStream final : public BatchStream {
 public:
  enum class Split { kTrain, kTest };

  EvalStream(const Dataset& ds, Split split, int batch_size,
             bool want_images01 = false);

  void start_epoch(int epoch) override;
  int batches_per_epoch() const override;
  Batch next() override;

 private:
  const Dataset& ds_;
  Split split_;
  int batch_size_;
  bool want_images01_;
  int64_t cursor_ = 0;
};

}  // namespace contsup
