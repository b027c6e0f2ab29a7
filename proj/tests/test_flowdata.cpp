#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "dicl/flowdata.hpp"
#include "dicl/ops.hpp"

using namespace dicl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(DICL_TEST_DATA_DIR) / "flowdata";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <class T>
void append_le(std::vector<unsigned char>& out, T v) {
  static_assert(std::endian::native == std::endian::little);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

// Constant flow (u, v) over an h x w field.
Tensor constant_flow(std::size_t h, std::size_t w, double u, double v) {
  Tensor f({2, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    f[i] = u;
    f[h * w + i] = v;
  }
  return f;
}

Tensor rounded_to_float(Tensor t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  return t;
}

}  // namespace

TEST_SUITE("flowdata") {
  TEST_CASE("motion kind names round-trip") {
    for (MotionKind k : {MotionKind::translation, MotionKind::affine, MotionKind::smooth})
      CHECK(parse_motion_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_motion_kind("rotation"), std::invalid_argument);
  }

  TEST_CASE("translation samples have constant flow within max_mag") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      const FlowSample s = gen_synthetic(seed, MotionKind::translation, 64, 64, 8.0);
      CHECK(s.img1.shape() == Shape{3, 64, 64});
      CHECK(s.img2.shape() == Shape{3, 64, 64});
      CHECK(s.gt_flow.shape() == Shape{2, 64, 64});
      CHECK(s.valid.shape() == Shape{1, 64, 64});
      const double u = s.gt_flow[0], v = s.gt_flow[64 * 64];
      CHECK(std::hypot(u, v) <= 8.0);
      for (std::size_t i = 0; i < 64 * 64; ++i) {
        REQUIRE(s.gt_flow[i] == u);
        REQUIRE(s.gt_flow[64 * 64 + i] == v);
      }
    }
  }

  TEST_CASE("sample value ranges and masks for every kind") {
    for (MotionKind k : {MotionKind::translation, MotionKind::affine, MotionKind::smooth}) {
      CAPTURE(to_string(k));
      const FlowSample s = gen_synthetic(11, k, 64, 128, 8.0);
      for (const Tensor* t : {&s.img1, &s.img2})
        for (double x : t->values()) {
          REQUIRE(x >= 0.0);
          REQUIRE(x <= 1.0);
        }
      double peak = 0.0;
      for (std::size_t i = 0; i < 64 * 128; ++i) {
        const double u = s.gt_flow[i], v = s.gt_flow[64 * 128 + i];
        REQUIRE(std::isfinite(u));
        peak = std::max(peak, std::hypot(u, v));
        const double x = static_cast<double>(i % 128) + u, y = static_cast<double>(i / 128) + v;
        const bool inside = x >= 0.0 && x <= 127.0 && y >= 0.0 && y <= 63.0;
        REQUIRE(s.valid[i] == (inside ? 1.0 : 0.0));
      }
      CHECK(peak <= 8.0 + 1e-9);
    }
    CHECK_THROWS_AS(gen_synthetic(1, MotionKind::smooth, 32, 64, 9.0), std::invalid_argument);
  }

  TEST_CASE("same seed gives bit-identical samples") {
    for (MotionKind k : {MotionKind::translation, MotionKind::affine, MotionKind::smooth}) {
      const FlowSample a = gen_synthetic(42, k, 64, 64, 8.0), b = gen_synthetic(42, k, 64, 64, 8.0);
      CHECK(bit_equal(a.img1, b.img1));
      CHECK(bit_equal(a.img2, b.img2));
      CHECK(bit_equal(a.gt_flow, b.gt_flow));
      CHECK(bit_equal(a.valid, b.valid));
      CHECK_FALSE(bit_equal(a.img1, gen_synthetic(43, k, 64, 64, 8.0).img1));
    }
  }

  TEST_CASE("img2 sampled at p + gt(p) reconstructs img1") {
    for (MotionKind k : {MotionKind::translation, MotionKind::affine, MotionKind::smooth}) {
      CAPTURE(to_string(k));
      const std::size_t h = 64, w = 64;
      const FlowSample s = gen_synthetic(7, k, h, w, 8.0);
      const Tensor back = bilinear_warp(constant(s.img2.reshaped({1, 3, h, w})),
                                        constant(s.gt_flow.reshaped({1, 2, h, w})))
                              .warped->value;
      const std::size_t margin = 10;
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = margin; y < h - margin; ++y)
          for (std::size_t x = margin; x < w - margin; ++x) {
            if (s.valid.at(0, y, x) == 0.0) continue;
            sum += std::abs(back.at(0, c, y, x) - s.img1.at(c, y, x));
            ++n;
          }
      REQUIRE(n > 1000);
      CHECK(sum / static_cast<double>(n) < 2e-2);
    }
  }

  TEST_CASE("gen_translation uses the requested vector") {
    const FlowSample s = gen_translation(3, 64, 64, 3.0, 4.0);
    for (std::size_t i = 0; i < 64 * 64; ++i) {
      REQUIRE(s.gt_flow[i] == 3.0);
      REQUIRE(s.gt_flow[64 * 64 + i] == 4.0);
    }
    CHECK(s.valid.at(0, 63, 63) == 0.0);
    CHECK(s.valid.at(0, 0, 0) == 1.0);
  }

  TEST_CASE("stack adds a leading batch axis") {
    std::vector<FlowSample> v{gen_synthetic(1, MotionKind::smooth, 64, 64, 4.0),
                              gen_synthetic(2, MotionKind::translation, 64, 64, 4.0)};
    const FlowBatch b = stack(v);
    CHECK(b.size() == 2);
    CHECK(b.img1.shape() == Shape{2, 3, 64, 64});
    CHECK(b.valid.shape() == Shape{2, 1, 64, 64});
    CHECK(std::equal(v[1].gt_flow.storage().begin(), v[1].gt_flow.storage().end(),
                     b.gt_flow.storage().begin() + static_cast<std::ptrdiff_t>(v[0].gt_flow.numel())));
    CHECK_THROWS(stack(std::span<const FlowSample>()));
    v.push_back(gen_synthetic(3, MotionKind::smooth, 64, 128, 4.0));
    CHECK_THROWS(stack(v));
  }

  TEST_CASE("an oracle prediction scores zero") {
    for (MotionKind k : {MotionKind::translation, MotionKind::affine, MotionKind::smooth}) {
      const FlowSample s = gen_synthetic(5, k, 64, 64, 8.0);
      const EvalResult r = evaluate(s.gt_flow, s.gt_flow, s.valid);
      CHECK(r.epe == 0.0);
      CHECK(r.fl_all == 0.0);
    }
  }

  TEST_CASE("epe examples") {
    const Tensor gt = constant_flow(4, 4, 1.0, -2.0), all({1, 4, 4}, 1.0);
    CHECK(epe(gt, gt, all) == 0.0);
    CHECK(epe(constant_flow(4, 4, 4.0, 2.0), gt, all) == 5.0);

    Tensor pred = gt;
    for (std::size_t i = 0; i < 16; ++i) pred[i] += i < 8 ? 1.0 : 3.0;
    CHECK(epe(pred, gt, all) == 2.0);

    // Invalid pixels are ignored.
    Tensor half({1, 4, 4});
    for (std::size_t i = 0; i < 8; ++i) half[i] = 1.0;
    CHECK(epe(pred, gt, half) == 1.0);

    // Batched operands.
    CHECK(epe(pred.reshaped({1, 2, 4, 4}), gt.reshaped({1, 2, 4, 4}), all.reshaped({1, 1, 4, 4})) == 2.0);

    CHECK_THROWS(epe(gt, gt, Tensor({1, 4, 4})));
    CHECK_THROWS(epe(constant_flow(4, 5, 0, 0), gt, all));
  }

  TEST_CASE("fl_all outlier rule") {
    const Tensor one({1, 1, 1}, 1.0);
    // 4 px error on magnitude 10: 4 > 3 and 0.4 > 0.05.
    CHECK(fl_all(constant_flow(1, 1, 14.0, 0.0), constant_flow(1, 1, 10.0, 0.0), one) == 1.0);
    // 4 px error on magnitude 100: 0.04 < 0.05.
    CHECK(fl_all(constant_flow(1, 1, 100.0, 4.0), constant_flow(1, 1, 100.0, 0.0), one) == 0.0);
    // 2 px on magnitude 1 fails the absolute threshold.
    CHECK(fl_all(constant_flow(1, 1, 3.0, 0.0), constant_flow(1, 1, 1.0, 0.0), one) == 0.0);
    CHECK(fl_all(constant_flow(1, 1, 0.0, 0.0), constant_flow(1, 1, 0.0, 0.0), one) == 0.0);

    Tensor pred = constant_flow(2, 2, 10.0, 0.0);
    pred[0] = 14.0;
    const double f = fl_all(pred, constant_flow(2, 2, 10.0, 0.0), Tensor({1, 2, 2}, 1.0));
    CHECK(f == 0.25);
    CHECK_THROWS(fl_all(pred, pred, Tensor({1, 2, 2})));
  }

  TEST_CASE("metrics are invariant to pixel permutations") {
    std::mt19937_64 rng(9);
    const std::size_t h = 8, w = 8, n = h * w;
    const Tensor pred = Tensor::randn({2, h, w}, rng, 4.0), gt = Tensor::randn({2, h, w}, rng, 4.0);
    Tensor valid({1, h, w});
    for (std::size_t i = 0; i < n; ++i) valid[i] = (i % 3 != 0) ? 1.0 : 0.0;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor p2({2, h, w}), g2({2, h, w}), v2({1, h, w});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        p2[c * n + i] = pred[c * n + perm[i]];
        g2[c * n + i] = gt[c * n + perm[i]];
      }
      v2[i] = valid[perm[i]];
    }
    const EvalResult a = evaluate(pred, gt, valid), b = evaluate(p2, g2, v2);
    CHECK(std::abs(a.epe - b.epe) <= 1e-12);
    CHECK(a.fl_all == b.fl_all);
    CHECK(a.epe >= 0.0);
    CHECK(a.fl_all >= 0.0);
    CHECK(a.fl_all <= 1.0);
  }

  TEST_CASE(".flo round trip is bit-exact at float precision") {
    std::mt19937_64 rng(10);
    const Tensor f = rounded_to_float(Tensor::randn({2, 5, 7}, rng, 10.0));
    const fs::path p = scratch("random.flo");
    write_flo(p, f);
    const Tensor g = read_flo(p);
    CHECK(g.shape() == f.shape());
    CHECK(bit_equal(f, g));
    CHECK(read_bytes(p).size() == 12 + 5 * 7 * 8);

    // Doubles are stored as their float32 rounding.
    const Tensor d = Tensor::randn({2, 3, 3}, rng);
    write_flo(p, d);
    CHECK(bit_equal(read_flo(p), rounded_to_float(d)));
  }

  TEST_CASE("hand-built 1x1 .flo fixture") {
    std::vector<unsigned char> bytes;
    append_le(bytes, 202021.25f);
    append_le(bytes, std::int32_t{1});
    append_le(bytes, std::int32_t{1});
    append_le(bytes, 1.5f);
    append_le(bytes, -2.5f);
    const fs::path p = scratch("fixture.flo");
    write_bytes(p, bytes);
    const Tensor f = read_flo(p);
    CHECK(f.shape() == Shape{2, 1, 1});
    CHECK(f[0] == 1.5);
    CHECK(f[1] == -2.5);

    // Writing it back reproduces the fixture byte for byte.
    const fs::path q = scratch("fixture_copy.flo");
    write_flo(q, f);
    CHECK(read_bytes(q) == bytes);
  }

  TEST_CASE(".flo rejects bad magic, truncation and trailing data") {
    std::vector<unsigned char> good;
    append_le(good, kFloMagic);
    append_le(good, std::int32_t{2});
    append_le(good, std::int32_t{1});
    for (float v : {1.0f, 2.0f, 3.0f, 4.0f}) append_le(good, v);

    std::vector<unsigned char> bad = good;
    bad[0] ^= 0x01;
    write_bytes(scratch("bad_magic.flo"), bad);
    CHECK_THROWS_AS(read_flo(scratch("bad_magic.flo")), FlowFileError);

    std::vector<unsigned char> cut(good.begin(), good.end() - 3);
    write_bytes(scratch("truncated.flo"), cut);
    CHECK_THROWS_AS(read_flo(scratch("truncated.flo")), FlowFileError);

    std::vector<unsigned char> header(good.begin(), good.begin() + 6);
    write_bytes(scratch("header.flo"), header);
    CHECK_THROWS_AS(read_flo(scratch("header.flo")), FlowFileError);

    std::vector<unsigned char> extra = good;
    extra.push_back(0);
    write_bytes(scratch("extra.flo"), extra);
    CHECK_THROWS_AS(read_flo(scratch("extra.flo")), FlowFileError);

    CHECK_THROWS_AS(read_flo(scratch("missing.flo")), FlowFileError);
    CHECK_THROWS(write_flo(scratch("bad_shape.flo"), Tensor({3, 2, 2})));
  }

  TEST_CASE("flow colors: zero is white, opposite directions have opposite hues") {
    const RgbImage white = flow_to_color(Tensor({2, 3, 4}));
    CHECK(white.width == 4);
    CHECK(white.height == 3);
    for (std::uint8_t b : white.pixels) CHECK(b == 255);

    Tensor f({2, 1, 2});
    f[0] = 5.0;
    f[1] = -5.0;
    const RgbImage img = flow_to_color(f, 5.0);
    // Opposite hues are complementary on the wheel: RGB sums are close to
    // symmetric around the white point.
    bool differ = false;
    for (std::size_t c = 0; c < 3; ++c) differ |= img.at(0, 0, c) != img.at(0, 1, c);
    CHECK(differ);
    const auto hue = [](const RgbImage& im, std::size_t x) {
      const double r = im.at(0, x, 0), g = im.at(0, x, 1), b = im.at(0, x, 2);
      return std::atan2(std::sqrt(3.0) * (g - b), 2.0 * r - g - b);
    };
    double dh = std::abs(hue(img, 0) - hue(img, 1));
    dh = std::min(dh, 2.0 * std::numbers::pi - dh);
    CHECK(dh > 0.75 * std::numbers::pi);

    std::mt19937_64 rng(12);
    const RgbImage big = flow_to_color(Tensor::randn({2, 16, 16}, rng, 100.0), 1.0);
    CHECK(big.pixels.size() == 16 * 16 * 3);
  }

  TEST_CASE("error map colors") {
    const Tensor gt = constant_flow(1, 3, 0.0, 0.0);
    Tensor pred = gt;
    pred[1] = 1.5;
    pred[2] = 10.0;
    Tensor valid({1, 1, 3}, 1.0);
    const RgbImage e = error_map(pred, gt, valid, 3.0);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(e.at(0, 0, c) == 0);
      CHECK(e.at(0, 2, c) == 255);
    }
    valid[0] = 0.0;
    const RgbImage m = error_map(pred, gt, valid, 3.0);
    CHECK(m.at(0, 0, 2) > m.at(0, 0, 0));
  }

  TEST_CASE("PNG round trip and tensor conversion") {
    RgbImage img{5, 3, {}};
    for (std::size_t i = 0; i < 5 * 3 * 3; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17 % 256));
    const fs::path p = scratch("rgb.png");
    write_png(p, img);
    const RgbImage back = read_png(p);
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.pixels == img.pixels);

    const Tensor t = to_tensor(img);
    CHECK(t.shape() == Shape{3, 3, 5});
    CHECK(t.at(1, 0, 0) == doctest::Approx(17.0 / 255.0));
    CHECK(to_image(t).pixels == img.pixels);

    std::vector<std::uint8_t> gray{0, 64, 128, 255};
    write_gray_png(scratch("gray.png"), 2, 2, gray);
    const RgbImage g = read_png(scratch("gray.png"));
    CHECK(g.at(1, 1, 0) == 255);
    CHECK(g.at(0, 1, 2) == 64);
    CHECK_THROWS(read_png(scratch("missing.png")));
  }
}
