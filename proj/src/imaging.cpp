#include "gazecontact/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"

namespace gc {
namespace {

constexpr double kDegToRad = M_PI / 180.0;

std::uint8_t toByte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// Mirrors a continuous coordinate back into [0, n - 1].
double reflect(double c, int n) {
  const double hi = static_cast<double>(n - 1);
  if (n == 1) return 0.0;
  const double period = 2.0 * hi;
  c = std::fmod(c, period);
  if (c < 0) c += period;
  return c > hi ? period - c : c;
}

double sampleBilinear(const std::vector<double>& img, int w, int h, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  auto px = [&](int xx, int yy) { return img[static_cast<std::size_t>(yy) * w + xx]; };
  const double top = px(x0, y0) + fx * (px(x1, y0) - px(x0, y0));
  const double bot = px(x0, y1) + fx * (px(x1, y1) - px(x0, y1));
  return top + fy * (bot - top);
}

std::vector<double> channelPlane(const FacePatch& p, int c) {
  std::vector<double> plane(static_cast<std::size_t>(p.width) * p.height);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) plane[static_cast<std::size_t>(y) * p.width + x] = p.at(x, y, c);
  return plane;
}

void skipSpaceAndComments(std::span<const std::uint8_t> b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
}

int readHeaderInt(std::span<const std::uint8_t> b, std::size_t& pos) {
  skipSpaceAndComments(b, pos);
  if (pos >= b.size() || !std::isdigit(b[pos])) fail(ErrorKind::IoError, "netpbm: malformed header");
  long v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    if (v > (1 << 24)) fail(ErrorKind::IoError, "netpbm: header value too large");
    ++pos;
  }
  return static_cast<int>(v);
}

}  // namespace

FacePatch::FacePatch(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c),
      pixels(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0) * std::max(c, 0), fill) {}

void FacePatch::validate() const {
  if (channels != 1 && channels != 3) fail(ErrorKind::ShapeMismatch, "patch channels must be 1 or 3");
  if (width < 8 || height < 8) fail(ErrorKind::ShapeMismatch, "patch must be at least 8x8");
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
    fail(ErrorKind::ShapeMismatch, "patch pixel count does not match its dimensions");
}

bool AugmentSpec::isIdentity() const noexcept {
  return !flip && rotation_deg == 0.0 && brightness_delta == 0.0 && contrast_scale == 1.0 &&
         channel_jitter[0] == 0.0 && channel_jitter[1] == 0.0 && channel_jitter[2] == 0.0;
}

FacePatch toGray(const FacePatch& patch) {
  if (patch.channels == 1) return patch;
  FacePatch out(patch.width, patch.height, 1);
  for (int y = 0; y < patch.height; ++y)
    for (int x = 0; x < patch.width; ++x)
      out.at(x, y) = toByte(0.299 * patch.at(x, y, 0) + 0.587 * patch.at(x, y, 1) + 0.114 * patch.at(x, y, 2));
  return out;
}

std::vector<double> grayValues(const FacePatch& patch) {
  std::vector<double> g(static_cast<std::size_t>(patch.width) * patch.height);
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) {
      double v = patch.channels == 1
                     ? patch.at(x, y)
                     : 0.299 * patch.at(x, y, 0) + 0.587 * patch.at(x, y, 1) + 0.114 * patch.at(x, y, 2);
      g[static_cast<std::size_t>(y) * patch.width + x] = v;
    }
  }
  return g;
}

FacePatch resizePatch(const FacePatch& patch, int out_w, int out_h) {
  if (patch.width <= 0 || patch.height <= 0 || patch.pixels.empty())
    fail(ErrorKind::DegenerateInput, "resizePatch: zero-area input");
  if (out_w < 8 || out_h < 8) fail(ErrorKind::DegenerateInput, "resizePatch: output must be at least 8x8");
  if (out_w == patch.width && out_h == patch.height) return patch;

  FacePatch out(out_w, out_h, patch.channels);
  const double sx = static_cast<double>(patch.width) / out_w;
  const double sy = static_cast<double>(patch.height) / out_h;
  for (int c = 0; c < patch.channels; ++c) {
    auto plane = channelPlane(patch, c);
    for (int y = 0; y < out_h; ++y) {
      const double srcy = (y + 0.5) * sy - 0.5;
      for (int x = 0; x < out_w; ++x) {
        const double srcx = (x + 0.5) * sx - 0.5;
        out.at(x, y, c) = toByte(sampleBilinear(plane, patch.width, patch.height, srcx, srcy));
      }
    }
  }
  return out;
}

EyePair alignEyes(const FacePatch& patch, Point2 left_eye, Point2 right_eye, double roll_deg) {
  patch.validate();
  const int w = patch.width;
  const int h = patch.height;
  auto inside = [&](Point2 p) { return p.x >= 0 && p.y >= 0 && p.x <= w - 1 && p.y <= h - 1; };
  if (!inside(left_eye) || !inside(right_eye)) fail(ErrorKind::OutOfBounds, "alignEyes: eye point outside the patch");

  const double dist = std::hypot(right_eye.x - left_eye.x, right_eye.y - left_eye.y);
  if (dist < 1.0) fail(ErrorKind::DegenerateInput, "alignEyes: eye points coincide");

  const auto gray = grayValues(patch);
  const Point2 mid{0.5 * (left_eye.x + right_eye.x), 0.5 * (left_eye.y + right_eye.y)};
  const double cr = std::cos(roll_deg * kDegToRad);
  const double sr = std::sin(roll_deg * kDegToRad);
  // aligned = R(-roll)(p - mid) + mid; source = R(roll)(aligned - mid) + mid
  auto toAligned = [&](Point2 p) {
    const double dx = p.x - mid.x;
    const double dy = p.y - mid.y;
    return Point2{cr * dx + sr * dy + mid.x, -sr * dx + cr * dy + mid.y};
  };
  auto toSource = [&](double ax, double ay) {
    const double dx = ax - mid.x;
    const double dy = ay - mid.y;
    return Point2{cr * dx - sr * dy + mid.x, sr * dx + cr * dy + mid.y};
  };

  const double scale = kEyeCropWidthFactor * dist / EyePatch::kWidth;
  const double pad_x = 0.25 * w;
  const double pad_y = 0.25 * h;
  const bool rotate = roll_deg != 0.0;

  auto crop = [&](Point2 eye) {
    EyePatch out;
    const Point2 center = rotate ? toAligned(eye) : eye;
    for (int v = 0; v < EyePatch::kHeight; ++v) {
      for (int u = 0; u < EyePatch::kWidth; ++u) {
        const double ax = center.x + (u + 0.5 - 0.5 * EyePatch::kWidth) * scale;
        const double ay = center.y + (v + 0.5 - 0.5 * EyePatch::kHeight) * scale;
        const Point2 src = rotate ? toSource(ax, ay) : Point2{ax, ay};
        if (src.x < -pad_x || src.y < -pad_y || src.x > w - 1 + pad_x || src.y > h - 1 + pad_y)
          fail(ErrorKind::OutOfBounds, "alignEyes: crop exceeds the reflective padding limit");
        out.at(u, v) = sampleBilinear(gray, w, h, reflect(src.x, w), reflect(src.y, h));
      }
    }
    return out;
  };
  return {crop(left_eye), crop(right_eye)};
}

HogFeature extractHog(const EyePatch& eye) {
  constexpr int kW = EyePatch::kWidth;
  constexpr int kH = EyePatch::kHeight;
  constexpr int kCell = 8;
  constexpr int kBins = 9;
  constexpr int kCellsX = kW / kCell;
  constexpr int kCellsY = kH / kCell;
  constexpr double kBinWidth = 180.0 / kBins;

  std::vector<double> hist(static_cast<std::size_t>(kCellsX) * kCellsY * kBins, 0.0);
  for (int y = 0; y < kCellsY * kCell; ++y) {
    for (int x = 0; x < kCellsX * kCell; ++x) {
      const double gx = eye.at(std::min(x + 1, kW - 1), y) - eye.at(std::max(x - 1, 0), y);
      const double gy = eye.at(x, std::min(y + 1, kH - 1)) - eye.at(x, std::max(y - 1, 0));
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx) / kDegToRad;
      if (angle < 0) angle += 180.0;
      if (angle >= 180.0) angle -= 180.0;
      // bin k is centered at k * 20 degrees; vote split between the two nearest centers
      const double pos = angle / kBinWidth;
      const int b0 = static_cast<int>(std::floor(pos)) % kBins;
      const int b1 = (b0 + 1) % kBins;
      const double frac = pos - std::floor(pos);
      double* cell = &hist[(static_cast<std::size_t>(y / kCell) * kCellsX + x / kCell) * kBins];
      cell[b0] += mag * (1.0 - frac);
      cell[b1] += mag * frac;
    }
  }

  HogFeature feature;
  feature.layout = {kCellsX, kCellsY, kBins};
  feature.values.reserve(static_cast<std::size_t>(kCellsX - 1) * (kCellsY - 1) * 4 * kBins);
  std::vector<double> block(4 * kBins);
  auto normalize = [](std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    if (ss <= 1e-30) {
      std::fill(v.begin(), v.end(), 0.0);
      return;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (auto& x : v) x *= inv;
  };
  for (int by = 0; by + 1 < kCellsY; ++by) {
    for (int bx = 0; bx + 1 < kCellsX; ++bx) {
      std::size_t k = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double* cell = &hist[(static_cast<std::size_t>(by + dy) * kCellsX + bx + dx) * kBins];
          for (int b = 0; b < kBins; ++b) block[k++] = cell[b];
        }
      normalize(block);
      for (auto& v : block) v = std::min(v, 0.2);
      normalize(block);
      feature.values.insert(feature.values.end(), block.begin(), block.end());
    }
  }
  return feature;
}

std::vector<double> eyePairHog(const EyePair& eyes) {
  auto left = extractHog(eyes.left).values;
  auto right = extractHog(eyes.right).values;
  left.insert(left.end(), right.begin(), right.end());
  return left;
}

AugmentSpec sampleAugment(const AugmentLimits& limits, Rng& rng) {
  AugmentSpec spec;
  spec.flip = limits.allow_flip && rng.bernoulli(0.5);
  spec.rotation_deg = rng.uniform(-limits.max_rotation_deg, limits.max_rotation_deg);
  spec.brightness_delta = rng.uniform(-limits.brightness, limits.brightness);
  spec.contrast_scale = rng.uniform(limits.contrast_lo, limits.contrast_hi);
  for (auto& j : spec.channel_jitter) j = rng.uniform(-limits.channel_jitter, limits.channel_jitter);
  return spec;
}

FacePatch augment(const FacePatch& patch, const AugmentSpec& spec) {
  if (spec.isIdentity()) return patch;
  const int w = patch.width;
  const int h = patch.height;
  const int ch = patch.channels;

  std::vector<std::vector<double>> planes;
  for (int c = 0; c < ch; ++c) {
    auto plane = channelPlane(patch, c);
    if (spec.flip) {
      for (int y = 0; y < h; ++y) std::reverse(plane.begin() + y * w, plane.begin() + (y + 1) * w);
    }
    planes.push_back(std::move(plane));
  }

  if (spec.rotation_deg != 0.0) {
    // Output p samples the input at R(-theta)(p - c) + c, so content turns by +theta.
    const double cx = 0.5 * (w - 1);
    const double cy = 0.5 * (h - 1);
    const double ct = std::cos(spec.rotation_deg * kDegToRad);
    const double st = std::sin(spec.rotation_deg * kDegToRad);
    for (auto& plane : planes) {
      std::vector<double> rotated(plane.size());
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double dx = x - cx;
          const double dy = y - cy;
          const double sx = ct * dx + st * dy + cx;
          const double sy = -st * dx + ct * dy + cy;
          rotated[static_cast<std::size_t>(y) * w + x] = sampleBilinear(plane, w, h, reflect(sx, w), reflect(sy, h));
        }
      }
      plane = std::move(rotated);
    }
  }

  FacePatch out(w, h, ch);
  for (int c = 0; c < ch; ++c) {
    const double jitter = c < 3 ? spec.channel_jitter[c] : 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double v = planes[c][static_cast<std::size_t>(y) * w + x];
        v = (v - 128.0) * spec.contrast_scale + 128.0 + spec.brightness_delta + jitter;
        out.at(x, y, c) = toByte(v);
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> encodeNetpbm(const FacePatch& patch) {
  patch.validate();
  const std::string header = std::string(patch.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(patch.width) +
                             " " + std::to_string(patch.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), patch.pixels.begin(), patch.pixels.end());
  return out;
}

FacePatch decodeNetpbm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    fail(ErrorKind::IoError, "netpbm: only binary P5/P6 images are supported");
  const int channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const int w = readHeaderInt(bytes, pos);
  const int h = readHeaderInt(bytes, pos);
  const int maxval = readHeaderInt(bytes, pos);
  if (maxval != 255) fail(ErrorKind::IoError, "netpbm: maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail(ErrorKind::IoError, "netpbm: malformed header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() - pos < need) fail(ErrorKind::IoError, "netpbm: pixel data truncated");
  FacePatch patch(w, h, channels);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, patch.pixels.begin());
  return patch;
}

void writeNetpbm(const std::filesystem::path& path, const FacePatch& patch) { atomicWrite(path, encodeNetpbm(patch)); }

FacePatch readNetpbm(const std::filesystem::path& path) { return decodeNetpbm(readBytes(path)); }

}  // namespace gc
