#include <doctest.h>

#include <random>

#include "dicl/feature_net.hpp"

using namespace dicl;

TEST_SUITE("featurenet") {
  TEST_CASE("pyramid extents at 64x64") {
    std::mt19937_64 rng(1);
    FeatureNet net(rng);
    const FeaturePyramid p = net.extract(Tensor::uniform({3, 64, 64}, rng, 0.0, 1.0), Mode::eval);
    const std::size_t sizes[] = {16, 8, 4, 2, 1};
    for (std::size_t k = 0; k < kPyramidLevels; ++k) {
      CAPTURE(k);
      CHECK(p.levels[k]->value.shape() == Shape{1, kFeatureChannels, sizes[k], sizes[k]});
      CHECK(level_stride(k) == 64 / sizes[k]);
    }
    // Batch statistics at the 1x1 level need at least two images.
    CHECK_THROWS_AS(net.extract(Tensor({3, 64, 64}), Mode::train), ShapeError);
    CHECK_NOTHROW(net.extract(Tensor::uniform({2, 3, 64, 64}, rng, 0.0, 1.0), Mode::train));
  }

  TEST_CASE("level 0 of a 128x192 image is 32x32x48") {
    std::mt19937_64 rng(2);
    FeatureNet net(rng);
    const FeaturePyramid p = net.extract(Tensor::uniform({1, 3, 128, 192}, rng, 0.0, 1.0), Mode::train);
    CHECK(p.levels[0]->value.shape() == Shape{1, 32, 32, 48});
    CHECK(p.levels[4]->value.shape() == Shape{1, 32, 2, 3});
  }

  TEST_CASE("extract rejects extents that are not multiples of 64") {
    std::mt19937_64 rng(3);
    FeatureNet net(rng);
    CHECK_THROWS_AS(net.extract(Tensor({3, 100, 64}), Mode::eval), ShapeError);
    CHECK_THROWS_AS(net.extract(Tensor({1, 1, 64, 64}), Mode::eval), ShapeError);
  }

  TEST_CASE("shared weights: equal frames give equal pyramids") {
    std::mt19937_64 rng(4);
    FeatureNet net(rng);
    const Tensor img = Tensor::uniform({3, 64, 128}, rng, 0.0, 1.0);
    Tensor pair({2, 3, 64, 128});
    std::copy(img.storage().begin(), img.storage().end(), pair.data());
    std::copy(img.storage().begin(), img.storage().end(), pair.data() + img.numel());
    const FeaturePyramid p = net.extract(pair, Mode::train);
    for (std::size_t k = 0; k < kPyramidLevels; ++k) {
      const Tensor& f = p.levels[k]->value;
      const std::size_t half = f.numel() / 2;
      for (std::size_t i = 0; i < half; ++i) REQUIRE(f[i] == f[half + i]);
    }
    const FeaturePyramid q = net.extract(img, Mode::eval);
    const FeaturePyramid r = net.extract(img, Mode::eval);
    for (std::size_t k = 0; k < kPyramidLevels; ++k) CHECK(bit_equal(q.levels[k]->value, r.levels[k]->value));
  }

  TEST_CASE("zeroed weights give constant pyramids for any inputs") {
    std::mt19937_64 rng(5);
    FeatureNet net(rng);
    ParamList params;
    net.collect("f", params);
    for (auto& p : params.params) p.var->value.fill(0.0);
    const FeaturePyramid a = net.extract(Tensor::uniform({2, 3, 64, 64}, rng, 0.0, 1.0), Mode::train);
    const FeaturePyramid b = net.extract(Tensor::uniform({2, 3, 64, 64}, rng, 0.0, 1.0), Mode::train);
    for (std::size_t k = 0; k < kPyramidLevels; ++k) {
      CHECK(bit_equal(a.levels[k]->value, b.levels[k]->value));
      const Tensor& f = a.levels[k]->value;
      for (std::size_t i = 1; i < f.numel(); ++i) REQUIRE(f[i] == f[0]);
    }
  }

  TEST_CASE("translation covariance of level-0 features") {
    // B is A cyclically shifted left by 64 columns, so both have the same
    // mean; interior level-0 features then shift by 16 columns.
    std::mt19937_64 rng(6);
    FeatureNet net(rng);
    // Give the running statistics non-trivial values first.
    net.extract(Tensor::uniform({2, 3, 64, 64}, rng, 0.0, 1.0), Mode::train);

    const std::size_t h = 64, w = 256;
    const Tensor a = Tensor::uniform({3, h, w}, rng, 0.0, 1.0);
    Tensor b({3, h, w});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) b.at(c, y, x) = a.at(c, y, (x + 64) % w);
    const Tensor fa = net.extract(a, Mode::eval).levels[0]->value;
    const Tensor fb = net.extract(b, Mode::eval).levels[0]->value;

    const std::size_t margin = 4;  // receptive-field radius in level-0 pixels
    double worst = 0.0;
    std::size_t compared = 0;
    for (std::size_t c = 0; c < kFeatureChannels; ++c)
      for (std::size_t y = margin; y + margin < h / 4; ++y)
        for (std::size_t x = margin; x + 16 + margin < w / 4; ++x) {
          worst = std::max(worst, std::abs(fb.at(0, c, y, x) - fa.at(0, c, y, x + 16)));
          ++compared;
        }
    CHECK(compared > 10000);
    CHECK(worst <= 1e-9);
  }

  TEST_CASE("pad_to_multiple and crop_to") {
    const PaddedImage p = pad_to_multiple(Tensor({3, 100, 150}, 1.0));
    CHECK(p.image.shape() == Shape{3, 128, 192});
    CHECK(p.height == 100);
    CHECK(p.width == 150);
    CHECK(p.image.at(0, 99, 149) == 1.0);
    CHECK(p.image.at(0, 100, 0) == 0.0);
    CHECK(p.image.at(2, 0, 150) == 0.0);

    const Tensor sq({3, 64, 64}, 2.0);
    CHECK(bit_equal(pad_to_multiple(sq).image, sq));

    // A flow estimated on the padded frame crops back to the original extent.
    const Tensor flow({1, 2, 128, 192}, 0.5);
    CHECK(crop_to(flow, p.height, p.width).shape() == Shape{1, 2, 100, 150});
    CHECK_THROWS_AS(crop_to(flow, 129, 10), ShapeError);
  }
}
