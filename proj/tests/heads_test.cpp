// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Auxiliary heads, final head, decoder, and the local objective that ties
// them to the losses.

#include <cmath>
#include <vector>

#include "core/rng.h"
#include "doctest.h"
#include "heads/heads.h"
#include "nn/losses.h"

using namespace contsup;

namespace {

Tensor random_features(int n, Shape s, uint64_t seed) {
  Rng rng = Rng::derive(seed, "test/features");
  Tensor t(n, s);
  for (auto& v : t.vec()) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("heads");

TEST_CASE("aux head width and stride follow the reduction rule") {
  // Full resolution (reduction 1): stride 2, 32 channels.
  AuxHead full({16, 32, 32}, 32, 10, HeadKind::kSoftmax);
  CHECK(full.conv_channels() == 32);
  CHECK(full.conv_stride() == 2);
  // Half resolution (reduction 2): stride 2, 64 channels.
  AuxHead half({32, 16, 16}, 32, 10, HeadKind::kSoftmax);
  CHECK(half.conv_channels() == 64);
  CHECK(half.conv_stride() == 2);
  // Quarter resolution and beyond: stride 1, 64 channels.
  AuxHead quarter({64, 8, 8}, 32, 10, HeadKind::kSoftmax);
  CHECK(quarter.conv_channels() == 64);
  CHECK(quarter.conv_stride() == 1);
  // The larger image family scales the same way by reduction factor.
  AuxHead stl({16, 96, 96}, 96, 10, HeadKind::kSoftmax);
  CHECK(stl.conv_channels() == 32);
  CHECK(stl.conv_stride() == 2);
  AuxHead stl_deep({64, 24, 24}, 96, 10, HeadKind::kSoftmax);
  CHECK(stl_deep.conv_channels() == 64);
  CHECK(stl_deep.conv_stride() == 1);
}

TEST_CASE("softmax aux head emits class logits") {
  AuxHead head({16, 8, 8}, 16, 10, HeadKind::kSoftmax);
  Rng rng = Rng::derive(1, "init/heads");
  head.init(rng);
  CHECK(head.produces_logits());
  Tensor x = random_features(4, {16, 8, 8}, 2);
  Tensor logits = head.forward(x, true);
  CHECK(logits.n() == 4);
  CHECK(logits.features() == 10);
}

TEST_CASE("contrast aux head emits 128-wide embeddings") {
  AuxHead head({16, 8, 8}, 16, 10, HeadKind::kContrast);
  Rng rng = Rng::derive(3, "init/heads");
  head.init(rng);
  CHECK_FALSE(head.produces_logits());
  Tensor x = random_features(4, {16, 8, 8}, 4);
  Tensor emb = head.forward(x, true);
  CHECK(emb.features() == 128);
}

TEST_CASE("final head is pool plus linear") {
  FinalHead head({24, 4, 4}, 10);
  Rng rng = Rng::derive(5, "init/heads");
  head.init(rng);
  CHECK(head.param_count() == 24 * 10 + 10);
  Tensor x = random_features(3, {24, 4, 4}, 6);
  Tensor logits = head.forward(x, true);
  CHECK(logits.n() == 3);
  CHECK(logits.features() == 10);
  // Pool-then-linear equals linear applied to channel means.
  Tensor pooled(3, 24, 1, 1);
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 24; ++c) {
      double s = 0.0;
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) s += x.at(n, c, h, w);
      pooled.at(n, c, 0, 0) = static_cast<float>(s / 16.0);
    }
  // Check via variance: identical logits when fed the pooled tensor padded
  // back to the spatial shape as constants.
  Tensor xc(3, 24, 4, 4);
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 24; ++c)
      for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) xc.at(n, c, h, w) = pooled.at(n, c, 0, 0);
  Tensor logits2 = head.forward(xc, true);
  for (int64_t i = 0; i < logits.numel(); ++i) {
    CHECK(logits[i] == doctest::Approx(logits2[i]).epsilon(1e-4));
  }
}

TEST_CASE("aux head parameter count oracle") {
  // Feature (16, 8, 8) on a 16-pixel image: reduction 2 -> 64ch stride 2.
  // conv3x3 16->64 no bias: 9216; bn: 128; fc1 64->128 + bias: 8320;
  // fc2 128->10 + bias: 1290. Total 18954.
  AuxHead head({16, 8, 8}, 16, 10, HeadKind::kSoftmax);
  CHECK(head.conv_channels() == 64);
  CHECK(head.conv_stride() == 2);
  CHECK(head.param_count() == 9216 + 128 + 8320 + 1290);
}

TEST_CASE("decoder reconstructs into the unit interval at image shape") {
  AuxDecoder dec({8, 4, 4}, {3, 16, 16});
  Rng rng = Rng::derive(7, "init/decoders");
  dec.init(rng);
  Tensor x = random_features(2, {8, 4, 4}, 8);
  Tensor img = dec.forward(x, true);
  CHECK(img.n() == 2);
  CHECK(img.shape() == Shape{3, 16, 16});
  for (auto v : img.vec()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("decoder parameter count oracle") {
  // conv3x3 8->12 no bias 864 + bn 24 + conv3x3 12->3 with bias 324+3.
  AuxDecoder dec({8, 4, 4}, {3, 16, 16});
  CHECK(dec.param_count() == 864 + 24 + 324 + 3);
}

TEST_CASE("local objective composes classifier and reconstruction terms") {
  const Shape fs{8, 8, 8};
  AuxHead head(fs, 16, 10, HeadKind::kSoftmax);
  AuxDecoder dec(fs, {3, 16, 16});
  Rng hr = Rng::derive(9, "init/heads");
  head.init(hr);
  Rng dr = Rng::derive(9, "init/decoders");
  dec.init(dr);

  Tensor x = random_features(4, fs, 10);
  std::vector<int> labels{1, 0, 9, 5};
  Tensor images(4, 3, 16, 16);
  Rng ir(11);
  for (auto& v : images.vec()) v = static_cast<float>(ir.uniform());

  auto with = local_objective(head, &dec, x, labels, &images, 0.5, 0.7, true,
                              nullptr);
  auto cls_only = local_objective(head, nullptr, x, labels, nullptr, 0.5, 0.7,
                                  true, nullptr);
  CHECK(with.classifier_term ==
        doctest::Approx(cls_only.classifier_term).epsilon(1e-6));
  CHECK(with.reconstruction_term > 0.0);
  CHECK(with.total == doctest::Approx(with.classifier_term +
                                      0.7 * with.reconstruction_term));
  CHECK(cls_only.total == doctest::Approx(cls_only.classifier_term));
  CHECK(with.correct >= 0);
  CHECK(with.correct <= 4);
}

TEST_CASE("local objective zero lambda keeps decoder out of the total") {
  const Shape fs{4, 4, 4};
  AuxHead head(fs, 8, 10, HeadKind::kSoftmax);
  AuxDecoder dec(fs, {3, 8, 8});
  Rng hr = Rng::derive(13, "init/heads");
  head.init(hr);
  Rng dr = Rng::derive(13, "init/decoders");
  dec.init(dr);
  Tensor x = random_features(2, fs, 14);
  Tensor images(2, 3, 8, 8);
  images.fill(0.5f);
  auto res = local_objective(head, &dec, x, {3, 7}, &images, 0.5, 0.0, true,
                             nullptr);
  CHECK(res.total == doctest::Approx(res.classifier_term));
  CHECK(res.reconstruction_term > 0.0);
}

TEST_CASE("local objective gradient matches finite differences") {
  const Shape fs{4, 6, 6};
  AuxHead head(fs, 12, 10, HeadKind::kSoftmax);
  AuxDecoder dec(fs, {3, 12, 12});
  Rng hr = Rng::derive(15, "init/heads");
  head.init(hr);
  Rng dr = Rng::derive(15, "init/decoders");
  dec.init(dr);

  Tensor x = random_features(2, fs, 16);
  std::vector<int> labels{2, 8};
  Tensor images(2, 3, 12, 12);
  Rng ir(17);
  for (auto& v : images.vec()) v = static_cast<float>(ir.uniform());

  Tensor grad;
  auto res =
      local_objective(head, &dec, x, labels, &images, 0.5, 0.3, true, &grad);
  REQUIRE(grad.same_shape(x));

  // Spot-check a handful of coordinates with float-precision FD. The BN
  // inside the head makes each forward depend on the whole batch, which the
  // objective call repeats consistently.
  const float eps = 1e-2f;
  Rng pick(18);
  for (int trial = 0; trial < 12; ++trial) {
    const int64_t i = pick.uniform_int(0, x.numel() - 1);
    const float keep = x[i];
    x[i] = keep + eps;
    auto up = local_objective(head, &dec, x, labels, &images, 0.5, 0.3, true,
                              nullptr);
    x[i] = keep - eps;
    auto down = local_objective(head, &dec, x, labels, &images, 0.5, 0.3,
                                true, nullptr);
    x[i] = keep;
    const double fd = (up.total - down.total) / (2.0 * eps);
    CHECK(std::abs(fd - grad[i]) < 2e-2);
  }
  (void)res;
}

TEST_CASE("contrastive local objective reports no accuracy") {
  const Shape fs{4, 4, 4};
  AuxHead head(fs, 8, 10, HeadKind::kContrast);
  Rng hr = Rng::derive(19, "init/heads");
  head.init(hr);
  Tensor x = random_features(4, fs, 20);
  auto res = local_objective(head, nullptr, x, {0, 0, 1, 1}, nullptr, 0.5,
                             1.0, true, nullptr);
  CHECK(res.correct == -1);
  CHECK(res.had_positive_pair);
  CHECK(res.total > 0.0);
}

TEST_CASE("count_correct top-1 oracle") {
  Tensor logits(3, 4, 1, 1);
  logits.vec() = {0.1f, 0.9f, 0.0f, 0.2f,   // argmax 1
                  2.0f, 1.0f, 0.0f, -1.0f,  // argmax 0
                  0.0f, 0.0f, 0.0f, 3.0f};  // argmax 3
  CHECK(count_correct(logits, {1, 0, 3}) == 3);
  CHECK(count_correct(logits, {1, 1, 1}) == 1);
  CHECK(count_correct(logits, {0, 1, 2}) == 0);
}

TEST_CASE("head kind parsing") {
  CHECK(parse_head_kind("softmax") == HeadKind::kSoftmax);
  CHECK(parse_head_kind("contrast") == HeadKind::kContrast);
  CHECK(format_head_kind(HeadKind::kSoftmax) == "softmax");
  CHECK(format_head_kind(HeadKind::kContrast) == "contrast");
  CHECK_THROWS_AS(parse_head_kind("linear"), ConfigError);
}

TEST_SUITE_END();
