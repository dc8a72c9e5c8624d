#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gazecontact/error.hpp"
#include "gazecontact/imaging.hpp"

using namespace gc;

namespace {

FacePatch smoothPatch(int w, int h, int channels) {
  FacePatch p(w, h, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        p.at(x, y, c) = static_cast<std::uint8_t>(
            std::lround(128 + 60 * std::sin(x * 0.11 + c) * std::cos(y * 0.07) + 20 * std::sin((x + y) * 0.05)));
  return p;
}

double psnr(const FacePatch& a, const FacePatch& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) se += std::pow(double(a.pixels[i]) - double(b.pixels[i]), 2);
  const double mse = se / static_cast<double>(a.pixels.size());
  return mse == 0 ? 1e9 : 10 * std::log10(255.0 * 255.0 / mse);
}

// Independent HOG: per-cell loops, orientation histogram with linear votes
// between bin centers k*20 deg, 2x2 blocks with L2-Hys.
std::vector<double> hogOracle(const EyePatch& e) {
  const int W = EyePatch::kWidth, H = EyePatch::kHeight;
  auto px = [&](int x, int y) { return e.at(std::clamp(x, 0, W - 1), std::clamp(y, 0, H - 1)); };
  const int cx = W / 8, cy = H / 8;
  std::vector<std::array<double, 9>> cells(static_cast<std::size_t>(cx * cy));
  for (int j = 0; j < cy; ++j)
    for (int i = 0; i < cx; ++i) {
      auto& h = cells[static_cast<std::size_t>(j * cx + i)];
      h.fill(0.0);
      for (int y = j * 8; y < j * 8 + 8; ++y)
        for (int x = i * 8; x < i * 8 + 8; ++x) {
          const double gx = px(x + 1, y) - px(x - 1, y), gy = px(x, y + 1) - px(x, y - 1);
          const double m = std::sqrt(gx * gx + gy * gy);
          if (m == 0) continue;
          double a = std::atan2(gy, gx) * 180.0 / M_PI;
          while (a < 0) a += 180.0;
          while (a >= 180.0) a -= 180.0;
          const int lo = static_cast<int>(a / 20.0);
          const double t = a / 20.0 - lo;
          h[static_cast<std::size_t>(lo % 9)] += m * (1 - t);
          h[static_cast<std::size_t>((lo + 1) % 9)] += m * t;
        }
    }
  std::vector<double> out;
  for (int j = 0; j + 1 < cy; ++j)
    for (int i = 0; i + 1 < cx; ++i) {
      std::vector<double> b;
      for (int dj = 0; dj < 2; ++dj)
        for (int di = 0; di < 2; ++di)
          for (double v : cells[static_cast<std::size_t>((j + dj) * cx + i + di)]) b.push_back(v);
      for (int pass = 0; pass < 2; ++pass) {
        double n = 0;
        for (double v : b) n += v * v;
        n = std::sqrt(n);
        for (auto& v : b) v = n > 0 ? v / n : 0.0;
        if (pass == 0)
          for (auto& v : b) v = std::min(v, 0.2);
      }
      out.insert(out.end(), b.begin(), b.end());
    }
  return out;
}

EyePatch randomEye(Rng& rng) {
  EyePatch e;
  for (auto& v : e.pixels) v = rng.uniform(0, 255);
  return e;
}

}  // namespace

TEST_CASE("resize to the network input size") {
  const auto p = smoothPatch(145, 198, 3);
  const auto r = resizePatch(p, 227, 227);
  CHECK(r.width == 227);
  CHECK(r.height == 227);
  CHECK(r.channels == 3);
  CHECK(r.pixels.size() == 227u * 227u * 3u);
}

TEST_CASE("resize identity and constant images") {
  const auto p = smoothPatch(227, 227, 1);
  CHECK(resizePatch(p, 227, 227) == p);
  FacePatch c(50, 50, 1, 77);
  const auto big = resizePatch(c, 227, 227);
  for (auto v : big.pixels) REQUIRE(v == 77);
  CHECK_THROWS_AS(resizePatch(FacePatch{}, 20, 20), Error);
}

TEST_CASE("resize round trip keeps smooth images above 30 dB") {
  const auto p = smoothPatch(64, 64, 3);
  const auto back = resizePatch(resizePatch(p, 97, 81), 64, 64);
  CHECK(psnr(p, back) > 30.0);
}

TEST_CASE("gray conversion uses 601 luma") {
  FacePatch p(8, 8, 3);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      p.at(x, y, 0) = 200;
      p.at(x, y, 1) = 100;
      p.at(x, y, 2) = 50;
    }
  const auto g = toGray(p);
  CHECK(g.channels == 1);
  CHECK(int(g.at(3, 3)) == std::lround(0.299 * 200 + 0.587 * 100 + 0.114 * 50));
}

TEST_CASE("hog layout: 864 per eye, 1728 per pair") {
  Rng rng(1);
  const auto e = randomEye(rng);
  const auto h = extractHog(e);
  CHECK(h.values.size() == static_cast<std::size_t>((73 / 8 - 1) * (37 / 8 - 1) * 4 * 9));
  CHECK(h.values.size() == 864);
  CHECK(h.layout.cells_x == 9);
  CHECK(h.layout.cells_y == 4);
  CHECK(h.layout.bins == 9);
  CHECK(eyePairHog({e, e}).size() == 1728);
}

TEST_CASE("hog matches a brute-force implementation") {
  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    const auto e = randomEye(rng);
    const auto ours = extractHog(e).values;
    const auto ref = hogOracle(e);
    REQUIRE(ours.size() == ref.size());
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ours[i] - ref[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("hog of a constant image is zero") {
  EyePatch e;
  std::fill(e.pixels.begin(), e.pixels.end(), 93.0);
  for (double v : extractHog(e).values) REQUIRE(v == 0.0);
}

TEST_CASE("hog of a vertical step edge votes into the horizontal-gradient bin") {
  EyePatch e;
  for (int y = 0; y < 37; ++y)
    for (int x = 0; x < 73; ++x) e.at(x, y) = x < 36 ? 40.0 : 200.0;
  const auto h = extractHog(e);
  // Cells 4 (x 32..39) hold the edge. Every block containing it has all its
  // energy in bin 0 of the edge cells.
  const auto& v = h.values;
  for (int by = 0; by < 3; ++by)
    for (int bx = 0; bx < 8; ++bx) {
      const std::size_t base = static_cast<std::size_t>((by * 8 + bx) * 36);
      const bool has_edge = bx == 3 || bx == 4;
      for (int cell = 0; cell < 4; ++cell)
        for (int b = 0; b < 9; ++b) {
          const double x = v[base + static_cast<std::size_t>(cell * 9 + b)];
          const int cell_x = bx + cell % 2;
          if (has_edge && cell_x == 4 && b == 0)
            CHECK(x > 0.5);
          else
            CHECK(x == doctest::Approx(0.0));
        }
    }
}

TEST_CASE("hog block norms are bounded and invariant to brightness and contrast") {
  Rng rng(3);
  const auto e = randomEye(rng);
  const auto h = extractHog(e).values;
  for (std::size_t b = 0; b < h.size(); b += 36) {
    double n = 0;
    for (std::size_t i = b; i < b + 36; ++i) n += h[i] * h[i];
    CHECK(std::sqrt(n) <= 1.0 + 1e-6);
  }
  EyePatch shifted = e, scaled = e;
  for (auto& v : shifted.pixels) v += 37.0;
  for (auto& v : scaled.pixels) v *= 1.7;
  const auto hs = extractHog(shifted).values, hc = extractHog(scaled).values;
  for (std::size_t i = 0; i < h.size(); ++i) {
    CHECK(std::abs(hs[i] - h[i]) < 1e-6);
    CHECK(std::abs(hc[i] - h[i]) < 1e-6);
  }
}

TEST_CASE("augment identity, flip involution and brightness") {
  const auto p = smoothPatch(40, 40, 3);
  AugmentSpec id;
  CHECK(id.isIdentity());
  CHECK(augment(p, id) == p);

  AugmentSpec flip;
  flip.flip = true;
  const auto f = augment(p, flip);
  CHECK_FALSE(f == p);
  CHECK(f.at(0, 5, 1) == p.at(39, 5, 1));
  CHECK(augment(f, flip) == p);

  FacePatch c(20, 20, 1, 100);
  AugmentSpec bright;
  bright.brightness_delta = 20.0;
  for (auto v : augment(c, bright).pixels) REQUIRE(v == 120);
  bright.brightness_delta = 400.0;
  for (auto v : augment(c, bright).pixels) REQUIRE(v == 255);
}

TEST_CASE("sampled augmentations respect the limits") {
  Rng rng(4);
  AugmentLimits lim;
  for (int i = 0; i < 500; ++i) {
    const auto s = sampleAugment(lim, rng);
    CHECK(std::abs(s.rotation_deg) <= 10.0);
    CHECK(std::abs(s.brightness_delta) <= 20.0);
    CHECK(s.contrast_scale >= 0.9);
    CHECK(s.contrast_scale <= 1.1);
    for (double j : s.channel_jitter) CHECK(std::abs(j) <= 8.0);
  }
  lim.allow_flip = false;
  for (int i = 0; i < 100; ++i) CHECK_FALSE(sampleAugment(lim, rng).flip);
}

namespace {

// Light background, dark markers a fixed offset above each eye.
FacePatch markerFace(Point2 l, Point2 r) {
  FacePatch p(128, 128, 1, 200);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x)
      if (std::hypot(x - l.x, y - (l.y - 8)) < 3 || std::hypot(x - r.x, y - (r.y - 8)) < 3) p.at(x, y) = 0;
  return p;
}

Point2 darkCentroid(const EyePatch& e) {
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < EyePatch::kHeight; ++y)
    for (int x = 20; x < 53; ++x) {
      const double wgt = std::max(0.0, 150.0 - e.at(x, y));
      sx += wgt * x, sy += wgt * y, n += wgt;
    }
  return {sx / n, sy / n};
}

}  // namespace

TEST_CASE("align eyes with zero roll is an axis-aligned crop") {
  const Point2 l{44, 64}, r{84, 64};
  const auto eyes = alignEyes(markerFace(l, r), l, r, 0.0);
  // 2.2 x 40 px spans 73 samples: the marker 8 px above sits 8 * 73 / 88 px above center.
  for (const auto* e : {&eyes.left, &eyes.right}) {
    const auto c = darkCentroid(*e);
    CHECK(std::abs(c.x - 36.0) < 0.5);
    CHECK(std::abs(c.y - (18.0 - 8.0 * 73.0 / 88.0)) < 0.5);
  }
}

TEST_CASE("align eyes undoes a known roll") {
  const Point2 l{44, 64}, r{84, 64};
  const auto flat = alignEyes(markerFace(l, r), l, r, 0.0);
  for (double roll : {30.0, -20.0, 10.0}) {
    AugmentSpec spin;
    spin.rotation_deg = roll;
    const auto rotated = augment(markerFace(l, r), spin);
    // augment turns content by +roll about the image center
    const double c = std::cos(roll * M_PI / 180), s = std::sin(roll * M_PI / 180), cx = 63.5, cy = 63.5;
    auto turn = [&](Point2 p) {
      return Point2{c * (p.x - cx) - s * (p.y - cy) + cx, s * (p.x - cx) + c * (p.y - cy) + cy};
    };
    const auto aligned = alignEyes(rotated, turn(l), turn(r), roll);
    for (int k = 0; k < 2; ++k) {
      const auto a = darkCentroid(k ? flat.right : flat.left);
      const auto b = darkCentroid(k ? aligned.right : aligned.left);
      CHECK(std::abs(a.x - b.x) <= 1.0);
      CHECK(std::abs(a.y - b.y) <= 1.0);
    }
  }
}

TEST_CASE("align eyes fails beyond the padding limit") {
  FacePatch p(64, 64, 1, 128);
  try {
    alignEyes(p, {1, 1}, {60, 1}, 0.0);
    FAIL("expected OutOfBounds");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OutOfBounds);
  }
}

TEST_CASE("netpbm round trip") {
  const auto rgb = smoothPatch(13, 9, 3);
  const auto gray = smoothPatch(10, 12, 1);
  CHECK(decodeNetpbm(encodeNetpbm(rgb)) == rgb);
  CHECK(decodeNetpbm(encodeNetpbm(gray)) == gray);
  const auto bytes = encodeNetpbm(gray);
  CHECK(std::string(bytes.begin(), bytes.begin() + 2) == "P5");
  CHECK(bytes.size() == std::string("P5\n10 12\n255\n").size() + 120);
  const auto path = std::filesystem::temp_directory_path() / "gc_netpbm_test.ppm";
  writeNetpbm(path, rgb);
  CHECK(readNetpbm(path) == rgb);
  std::filesystem::remove(path);
  std::vector<std::uint8_t> junk{'P', '7', '\n'};
  CHECK_THROWS_AS(decodeNetpbm(junk), Error);
  CHECK_THROWS_AS(readNetpbm("/nonexistent/x.ppm"), Error);
}
