// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "data/datasets.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "core/errors.h"
#include "data/archive.h"
#include "data/mat5.h"

namespace contsup {

namespace {

uint8_t quantize01(double v) {
  const double scaled = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<uint8_t>(scaled);
}

void require_file(const std::string& path, const std::string& hint) {
  if (!std::filesystem::exists(path)) {
    throw IngestError("missing dataset file: " + path + "\n" + hint);
  }
}

const char* kCifarHint =
    "Run `contsup fetch-data cifar10 --root <dir>` or download "
    "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz and extract it "
    "under the dataset root.";
const char* kSvhnHint =
    "Run `contsup fetch-data svhn --root <dir>` or download "
    "http://ufldl.stanford.edu/housenumbers/{train,test}_32x32.mat into "
    "<root>/svhn/.";
const char* kStlHint =
    "Run `contsup fetch-data stl10 --root <dir>` or download "
    "http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz and extract "
    "it under the dataset root.";

}  // namespace

AugmentPolicy default_augment(const std::string& dataset_name) {
  if (dataset_name == "cifar10") return {4, true};
  if (dataset_name == "svhn") return {2, false};
  if (dataset_name == "stl10") return {4, true};
  if (dataset_name == "toy") return {0, false};
  throw ConfigError("unknown dataset name: " + dataset_name);
}

void compute_channel_stats(Dataset& ds) {
  const int64_t n = ds.train_count();
  const int64_t plane = static_cast<int64_t>(ds.input.h) * ds.input.w;
  for (int c = 0; c < ds.input.c; ++c) {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const uint8_t* p =
          ds.train_x.data() + i * ds.sample_elements() + c * plane;
      for (int64_t j = 0; j < plane; ++j) {
        const double v = p[j] / 255.0;
        sum += v;
        sum_sq += v * v;
      }
    }
    const double count = static_cast<double>(n) * plane;
    const double mean = sum / count;
    const double var = std::max(sum_sq / count - mean * mean, 0.0);
    ds.channel_mean[c] = static_cast<float>(mean);
    ds.channel_std[c] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
}

namespace {

// Canonical blob centers as fractions of the image side: four off-center
// positions and the middle.
constexpr double kCenters[5][2] = {
    {0.28, 0.28}, {0.28, 0.72}, {0.72, 0.28}, {0.72, 0.72}, {0.5, 0.5}};

void render_blob(std::vector<double>& img, int hw, double cy, double cx,
                 double sigma, double amp, int orientation, int phase) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      const double m = amp * std::exp(-d2 * inv);
      if (m < 1e-4) continue;
      const int parity = ((orientation == 0 ? y : x) + phase) & 1;
      const double hi = 0.95;
      const double lo = 0.25;
      img[static_cast<size_t>(0) * hw * hw + y * hw + x] +=
          m * (parity ? hi : lo);
      img[static_cast<size_t>(1) * hw * hw + y * hw + x] += m * 0.5;
      img[static_cast<size_t>(2) * hw * hw + y * hw + x] +=
          m * (parity ? lo : hi);
    }
  }
}

void render_toy_sample(std::vector<uint8_t>& out, int64_t offset, int label,
                       Rng& rng, const ToyParams& p) {
  const int hw = p.image_hw;
  std::vector<double> img(static_cast<size_t>(3) * hw * hw, p.background);

  const int position = label % 5;
  const int orientation = label / 5;
  const double sigma = p.blob_sigma_frac * hw;
  const double jy = static_cast<double>(rng.uniform_int(-1, 1));
  const double jx = static_cast<double>(rng.uniform_int(-1, 1));
  const double cy = kCenters[position][0] * hw + jy;
  const double cx = kCenters[position][1] * hw + jx;
  render_blob(img, hw, cy, cx, sigma, p.signal_amp, orientation, 0);

  for (int d = 0; d < p.distractors; ++d) {
    const double dy =
        static_cast<double>(rng.uniform_int(3, std::max(hw - 4, 3)));
    const double dx =
        static_cast<double>(rng.uniform_int(3, std::max(hw - 4, 3)));
    const int dk = static_cast<int>(rng.uniform_int(0, 1));
    const int dphase = static_cast<int>(rng.uniform_int(0, 1));
    render_blob(img, hw, dy, dx, sigma, p.distractor_amp, dk, dphase);
  }

  for (size_t i = 0; i < img.size(); ++i) {
    img[i] += p.noise * rng.normal();
  }
  for (size_t i = 0; i < img.size(); ++i) {
    out[offset + i] = quantize01(img[i]);
  }
}

void fill_toy_split(std::vector<uint8_t>& x, std::vector<int>& y,
                    int per_class, uint64_t seed, const std::string& split,
                    const ToyParams& p) {
  const int64_t n = static_cast<int64_t>(per_class) * 10;
  const int64_t sample = static_cast<int64_t>(3) * p.image_hw * p.image_hw;
  x.resize(n * sample);
  y.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 10);
    Rng rng = Rng::derive(seed, "toy/" + split + "/" + std::to_string(i));
    render_toy_sample(x, i * sample, label, rng, p);
    y[i] = label;
  }
}

}  // namespace

Dataset make_toy_dataset(uint64_t seed, const ToyParams& params) {
  if (params.image_hw < 8) {
    throw ConfigError("toy dataset: image size must be at least 8");
  }
  if (params.train_per_class < 1 || params.test_per_class < 1) {
    throw ConfigError("toy dataset: per-class counts must be positive");
  }
  Dataset ds;
  ds.name = "toy";
  ds.input = Shape{3, params.image_hw, params.image_hw};
  ds.num_classes = 10;
  fill_toy_split(ds.train_x, ds.train_y, params.train_per_class, seed, "train",
                 params);
  fill_toy_split(ds.test_x, ds.test_y, params.test_per_class, seed, "test",
                 params);
  compute_channel_stats(ds);
  return ds;
}

Dataset load_cifar10(const std::string& root) {
  const std::string dir = root + "/cifar-10-batches-bin";
  Dataset ds;
  ds.name = "cifar10";
  ds.input = Shape{3, 32, 32};
  ds.num_classes = 10;

  const int64_t sample = ds.sample_elements();
  auto read_batch = [&](const std::string& path, std::vector<uint8_t>& x,
                        std::vector<int>& y) {
    require_file(path, kCifarHint);
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    const size_t record = 1 + static_cast<size_t>(sample);
    if (bytes.size() % record != 0) {
      throw IngestError("cifar10: unexpected file size for " + path);
    }
    const size_t count = bytes.size() / record;
    for (size_t i = 0; i < count; ++i) {
      const uint8_t* rec = bytes.data() + i * record;
      if (rec[0] > 9) {
        throw IngestError("cifar10: label out of range in " + path);
      }
      y.push_back(rec[0]);
      x.insert(x.end(), rec + 1, rec + record);
    }
  };

  for (int b = 1; b <= 5; ++b) {
    read_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", ds.train_x,
               ds.train_y);
  }
  read_batch(dir + "/test_batch.bin", ds.test_x, ds.test_y);
  compute_channel_stats(ds);
  return ds;
}

Dataset load_svhn(const std::string& root) {
  Dataset ds;
  ds.name = "svhn";
  ds.input = Shape{3, 32, 32};
  ds.num_classes = 10;

  auto read_split = [&](const std::string& path, std::vector<uint8_t>& x,
                        std::vector<int>& y) {
    require_file(path, kSvhnHint);
    const std::vector<MatVar> vars = read_mat5(path);
    const MatVar& xv = find_mat_var(vars, "X", path);
    const MatVar& yv = find_mat_var(vars, "y", path);
    if (xv.dims.size() != 4 || xv.dims[0] != 32 || xv.dims[1] != 32 ||
        xv.dims[2] != 3) {
      throw IngestError("svhn: X has unexpected dimensions in " + path);
    }
    const int64_t n = xv.dims[3];
    if (yv.element_count() < n) {
      throw IngestError("svhn: label count mismatch in " + path);
    }
    x.resize(static_cast<size_t>(n) * 3 * 32 * 32);
    y.resize(n);
    // X is stored column-major as (row, column, channel, sample).
    for (int64_t i = 0; i < n; ++i) {
      uint8_t* dst = x.data() + i * 3072;
      for (int c = 0; c < 3; ++c) {
        for (int yy = 0; yy < 32; ++yy) {
          for (int xx = 0; xx < 32; ++xx) {
            const int64_t src = yy + 32 * xx + 1024 * c + 3072 * i;
            dst[(c * 32 + yy) * 32 + xx] =
                static_cast<uint8_t>(xv.value_at(src));
          }
        }
      }
      const int label = static_cast<int>(yv.value_at(i));
      if (label < 1 || label > 10) {
        throw IngestError("svhn: label out of range in " + path);
      }
      y[i] = label % 10;  // digit labels use 10 for zero
    }
  };

  read_split(root + "/svhn/train_32x32.mat", ds.train_x, ds.train_y);
  read_split(root + "/svhn/test_32x32.mat", ds.test_x, ds.test_y);
  compute_channel_stats(ds);
  return ds;
}

Dataset load_stl10(const std::string& root) {
  const std::string dir = root + "/stl10_binary";
  Dataset ds;
  ds.name = "stl10";
  ds.input = Shape{3, 96, 96};
  ds.num_classes = 10;

  auto read_split = [&](const std::string& xpath, const std::string& ypath,
                        std::vector<uint8_t>& x, std::vector<int>& y) {
    require_file(xpath, kStlHint);
    require_file(ypath, kStlHint);
    const std::vector<uint8_t> xb = read_file_bytes(xpath);
    const std::vector<uint8_t> yb = read_file_bytes(ypath);
    const size_t sample = 3 * 96 * 96;
    if (xb.size() % sample != 0 || xb.size() / sample != yb.size()) {
      throw IngestError("stl10: size mismatch between " + xpath + " and " +
                        ypath);
    }
    const size_t n = yb.size();
    x.resize(n * sample);
    y.resize(n);
    // Each plane is stored column-major; transpose to row-major.
    for (size_t i = 0; i < n; ++i) {
      const uint8_t* src = xb.data() + i * sample;
      uint8_t* dst = x.data() + i * sample;
      for (int c = 0; c < 3; ++c) {
        for (int yy = 0; yy < 96; ++yy) {
          for (int xx = 0; xx < 96; ++xx) {
            dst[(c * 96 + yy) * 96 + xx] = src[c * 9216 + xx * 96 + yy];
          }
        }
      }
      if (yb[i] < 1 || yb[i] > 10) {
        throw IngestError("stl10: label out of range in " + ypath);
      }
      y[i] = yb[i] - 1;
    }
  };

  read_split(dir + "/train_X.bin", dir + "/train_y.bin", ds.train_x,
             ds.train_y);
  read_split(dir + "/test_X.bin", dir + "/test_y.bin", ds.test_x, ds.test_y);
  compute_channel_stats(ds);
  return ds;
}

Dataset load_dataset(const std::string& name, const std::string& root,
                     uint64_t toy_seed, const ToyParams& toy) {
  if (name == "toy") return make_toy_dataset(toy_seed, toy);
  if (name == "cifar10") return load_cifar10(root);
  if (name == "svhn") return load_svhn(root);
  if (name == "stl10") return load_stl10(root);
  throw ConfigError("unknown dataset name: " + name);
}

namespace {

// Copies one stored sample into batch slot i, applying translation/flip in
// [0, 1] pixel space and then channel normalization. images01, when
// non-null, receives the un-normalized pixels (reconstruction targets).
void emit_sample(const Dataset& ds, const uint8_t* src, int dy, int dx,
                 bool flip, Tensor& x, Tensor* images01, int i) {
  const int c = ds.input.c;
  const int h = ds.input.h;
  const int w = ds.input.w;
  for (int ch = 0; ch < c; ++ch) {
    const float mean = ds.channel_mean[ch];
    const float inv_std = 1.0f / ds.channel_std[ch];
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const int sx = (flip ? w - 1 - xx : xx) - dx;
        const int sy = y - dy;
        float v = 0.0f;
        if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
          v = src[(ch * h + sy) * w + sx] / 255.0f;
        }
        if (images01 != nullptr) {
          images01->at(i, ch, y, xx) = v;
        }
        x.at(i, ch, y, xx) = (v - mean) * inv_std;
      }
    }
  }
}

}  // namespace

TrainStream::TrainStream(const Dataset& ds, int batch_size, uint64_t seed,
                         AugmentPolicy augment, bool want_images01,
                         bool prefetch)
    : ds_(ds),
      batch_size_(batch_size),
      seed_(seed),
      augment_(augment),
      want_images01_(want_images01),
      prefetch_(prefetch),
      aug_rng_(0) {
  if (batch_size_ < 1) {
    throw ConfigError("training stream: batch size must be positive");
  }
  if (ds_.train_count() < batch_size_) {
    throw ConfigError("training stream: batch size " +
                      std::to_string(batch_size_) +
                      " exceeds training set size " +
                      std::to_string(ds_.train_count()));
  }
}

TrainStream::~TrainStream() {
  if (pending_.valid()) pending_.wait();
}

int TrainStream::batches_per_epoch() const {
  return static_cast<int>(ds_.train_count() / batch_size_);
}

void TrainStream::start_epoch(int epoch) {
  if (pending_.valid()) pending_.get();
  Rng shuffle_rng =
      Rng::derive(seed_, "data/shuffle/" + std::to_string(epoch));
  order_ = shuffle_rng.permutation(static_cast<int>(ds_.train_count()));
  aug_rng_ = Rng::derive(seed_, "data/augment/" + std::to_string(epoch));
  cursor_ = 0;
  if (prefetch_) {
    pending_ = std::async(std::launch::async, [this] { return build_batch(); });
  }
}

Batch TrainStream::build_batch() {
  Batch batch;
  batch.x = Tensor(batch_size_, ds_.input.c, ds_.input.h, ds_.input.w);
  if (want_images01_) {
    batch.images01 = Tensor(batch_size_, ds_.input.c, ds_.input.h, ds_.input.w);
  }
  batch.labels.resize(batch_size_);
  for (int i = 0; i < batch_size_; ++i) {
    const int64_t idx = order_[cursor_ + i];
    int dy = 0;
    int dx = 0;
    bool flip = false;
    if (augment_.translate > 0) {
      dy = static_cast<int>(
          aug_rng_.uniform_int(-augment_.translate, augment_.translate));
      dx = static_cast<int>(
          aug_rng_.uniform_int(-augment_.translate, augment_.translate));
    }
    if (augment_.hflip) flip = aug_rng_.bernoulli(0.5);
    emit_sample(ds_, ds_.train_x.data() + idx * ds_.sample_elements(), dy, dx,
                flip, batch.x, want_images01_ ? &batch.images01 : nullptr, i);
    batch.labels[i] = ds_.train_y[static_cast<size_t>(idx)];
  }
  cursor_ += batch_size_;
  return batch;
}

Batch TrainStream::next() {
  if (cursor_ + (pending_.valid() ? 0 : batch_size_) >
      static_cast<int64_t>(batches_per_epoch()) * batch_size_) {
    throw InvariantViolation("training stream: epoch exhausted");
  }
  Batch batch = pending_.valid() ? pending_.get() : build_batch();
  if (prefetch_ &&
      cursor_ + batch_size_ <=
          static_cast<int64_t>(batches_per_epoch()) * batch_size_) {
    pending_ = std::async(std::launch::async, [this] { return build_batch(); });
  }
  return batch;
}

EvalStream::EvalStream(const Dataset& ds, Split split, int batch_size,
                       bool want_images01)
    : ds_(ds),
      split_(split),
      batch_size_(batch_size),
      want_images01_(want_images01) {
  if (batch_size_ < 1) {
    throw ConfigError("evaluation stream: batch size must be positive");
  }
}

int EvalStream::batches_per_epoch() const {
  const int64_t n =
      split_ == Split::kTrain ? ds_.train_count() : ds_.test_count();
  return static_cast<int>((n + batch_size_ - 1) / batch_size_);
}

void EvalStream::start_epoch(int) { cursor_ = 0; }

Batch EvalStream::next() {
  const bool train_split = split_ == Split::kTrain;
  const int64_t n = train_split ? ds_.train_count() : ds_.test_count();
  const std::vector<uint8_t>& xs = train_split ? ds_.train_x : ds_.test_x;
  const std::vector<int>& ys = train_split ? ds_.train_y : ds_.test_y;
  if (cursor_ >= n) {
    throw InvariantViolation("evaluation stream: epoch exhausted");
  }
  const int count = static_cast<int>(std::min<int64_t>(batch_size_, n - cursor_));
  Batch batch;
  batch.x = Tensor(count, ds_.input.c, ds_.input.h, ds_.input.w);
  if (want_images01_) {
    batch.images01 = Tensor(count, ds_.input.c, ds_.input.h, ds_.input.w);
  }
  batch.labels.resize(count);
  for (int i = 0; i < count; ++i) {
    const int64_t idx = cursor_ + i;
    emit_sample(ds_, xs.data() + idx * ds_.sample_elements(), 0, 0, false,
                batch.x, want_images01_ ? &batch.images01 : nullptr, i);
    batch.labels[i] = ys[static_cast<size_t>(idx)];
  }
  cursor_ += count;
  return batch;
}

}  // namespace contsup
