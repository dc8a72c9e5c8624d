#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gazecontact/numerics.hpp"

namespace gc {

/// One detected face: u8 pixels, row-major, channel-interleaved.
struct FacePatch {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 or 3
  std::vector<std::uint8_t> pixels;

  FacePatch() = default;
  FacePatch(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  /// Throws ShapeMismatch when the invariants do not hold.
  void validate() const;
  bool operator==(const FacePatch&) const = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Aligned single-eye crop, always 73 wide by 37 high, real-valued gray.
struct EyePatch {
  static constexpr int kWidth = 73;
  static constexpr int kHeight = 37;
  std::vector<double> pixels = std::vector<double>(kWidth * kHeight, 0.0);

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * kWidth + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * kWidth + x]; }
};

struct HogLayout {
  int cells_x = 0;
  int cells_y = 0;
  int bins = 0;
};

struct HogFeature {
  std::vector<double> values;
  HogLayout layout;
};

struct AugmentLimits {
  bool allow_flip = true;
  double max_rotation_deg = 10.0;
  double brightness = 20.0;  // symmetric range
  double contrast_lo = 0.9;
  double contrast_hi = 1.1;
  double channel_jitter = 8.0;  // symmetric range per channel
};

struct AugmentSpec {
  bool flip = false;
  double rotation_deg = 0.0;
  double brightness_delta = 0.0;
  double contrast_scale = 1.0;
  double channel_jitter[3] = {0.0, 0.0, 0.0};

  bool isIdentity() const noexcept;
};

/// Gray conversion with ITU-R 601 luma weights.
FacePatch toGray(const FacePatch& patch);
std::vector<double> grayValues(const FacePatch& patch);

/// Bilinear resize with pixel-center alignment.
FacePatch resizePatch(const FacePatch& patch, int out_w, int out_h);

/// Rotates by -roll_deg about the eye midpoint and crops one 73x37 patch per
/// eye. The crop spans 2.2x the inter-eye distance horizontally; samples up
/// to 25% of the patch size outside the image are reflected, beyond that the
/// call fails with OutOfBounds.
struct EyePair {
  EyePatch left;
  EyePatch right;
};
EyePair alignEyes(const FacePatch& patch, Point2 left_eye, Point2 right_eye, double roll_deg);

inline constexpr double kEyeCropWidthFactor = 2.2;

/// Dalal-Triggs HOG: 8x8 cells, 9 unsigned bins, 2x2 blocks at stride 1,
/// L2-Hys with clipping at 0.2. A 73x37 eye yields 864 values.
HogFeature extractHog(const EyePatch& eye);
std::vector<double> eyePairHog(const EyePair& eyes);

AugmentSpec sampleAugment(const AugmentLimits& limits, Rng& rng);
/// Flip, then rotate about the center with reflective padding, then
/// photometric jitter, clamped to [0, 255].
FacePatch augment(const FacePatch& patch, const AugmentSpec& spec);

/// Binary Netpbm: P5 for one channel, P6 for three channels, maxval 255.
std::vector<std::uint8_t> encodeNetpbm(const FacePatch& patch);
FacePatch decodeNetpbm(std::span<const std::uint8_t> bytes);
void writeNetpbm(const std::filesystem::path& path, const FacePatch& patch);
FacePatch readNetpbm(const std::filesystem::path& path);

}  // namespace gc
