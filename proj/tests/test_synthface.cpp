#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"
#include "gazecontact/synthface.hpp"

using namespace gc;

namespace {

// Centroid of the darkest pixels in a window around a point.
Point2 darkCentroid(const FacePatch& p, Point2 around, int radius) {
  double lo = 1e9;
  auto lum = [&](int x, int y) { return (p.at(x, y, 0) + p.at(x, y, 1) + p.at(x, y, 2)) / 3.0; };
  const int x0 = static_cast<int>(std::lround(around.x)), y0 = static_cast<int>(std::lround(around.y));
  for (int y = y0 - radius; y <= y0 + radius; ++y)
    for (int x = x0 - radius; x <= x0 + radius; ++x) lo = std::min(lo, lum(x, y));
  double sx = 0, sy = 0, n = 0;
  for (int y = y0 - radius; y <= y0 + radius; ++y)
    for (int x = x0 - radius; x <= x0 + radius; ++x)
      if (lum(x, y) < lo + 25) sx += x + 0.5, sy += y + 0.5, n += 1;
  return {sx / n, sy / n};
}

double availability(const std::vector<DatasetFrame>& frames) {
  double a = 0;
  for (const auto& f : frames) a += f.sample.landmark_available;
  return a / static_cast<double>(frames.size());
}

}  // namespace

TEST_CASE("frontal face with straight gaze is eye contact with centered irises") {
  Rng rng(1);
  const auto s = renderFace(SceneParams{}, 128, rng);
  CHECK(s.eye_contact);
  CHECK(s.landmark_available);
  CHECK(contactAngleDeg(SceneParams{}) == doctest::Approx(0.0));
  CHECK(s.eye_centers[0].x < s.eye_centers[1].x);
  CHECK(s.eye_centers[0].y == doctest::Approx(s.eye_centers[1].y));
  for (const auto& c : s.eye_centers) {
    const auto d = darkCentroid(s.patch, c, 4);
    CHECK(std::abs(d.x - c.x) < 1.0);
    CHECK(std::abs(d.y - c.y) < 1.0);
  }
}

TEST_CASE("averted eyes shift the iris toward the gaze") {
  Rng a(2), b(2);
  SceneParams side;
  side.gaze_az = 25;
  const auto straight = renderFace(SceneParams{}, 128, a);
  const auto turned = renderFace(side, 128, b);
  for (int e = 0; e < 2; ++e) {
    const auto d0 = darkCentroid(straight.patch, straight.eye_centers[e], 6);
    const auto d1 = darkCentroid(turned.patch, turned.eye_centers[e], 6);
    CHECK(std::abs(d1.x - d0.x) > 1.5);
  }
}

TEST_CASE("surrogate landmark rule") {
  SceneParams p;
  p.yaw = 60;
  CHECK_FALSE(landmarkAvailable(p));
  p.yaw = 45;
  CHECK(landmarkAvailable(p));
  p.pitch = -31;
  CHECK_FALSE(landmarkAvailable(p));
  p.pitch = 0;
  p.occlusion_fraction = 0.3;
  CHECK_FALSE(landmarkAvailable(p));
  p.occlusion_fraction = 0.29;
  CHECK(landmarkAvailable(p));
}

TEST_CASE("gaze ten degrees off axis is not contact at a five degree threshold") {
  SceneParams p;
  p.gaze_az = 10;
  CHECK(contactAngleDeg(p) == doctest::Approx(10.0));
  Rng rng(3);
  CHECK_FALSE(renderFace(p, 64, rng, 5.0).eye_contact);
  Rng rng2(3);
  CHECK(renderFace(p, 64, rng2, 12.0).eye_contact);
}

TEST_CASE("head turn compensated by the eyes keeps contact") {
  SceneParams p;
  p.yaw = 30;
  p.gaze_az = -30;
  CHECK(contactAngleDeg(p) == doctest::Approx(0.0));
  SceneParams q;
  q.pitch = 20;
  q.gaze_el = -20;
  CHECK(contactAngleDeg(q) < 1e-6);
  // roll spins about the camera axis and cannot move a centered gaze
  q.roll = 10;
  CHECK(contactAngleDeg(q) < 1e-6);
  SceneParams r;
  r.roll = 30;
  r.gaze_az = 4;
  CHECK(contactAngleDeg(r) == doctest::Approx(4.0));
}

TEST_CASE("render size precondition and determinism") {
  Rng rng(4);
  CHECK_THROWS_AS(renderFace(SceneParams{}, 31, rng), Error);
  Rng a(9), b(9);
  SceneParams p;
  p.yaw = 12;
  p.identity_id = 7;
  CHECK(renderFace(p, 64, a).patch == renderFace(p, 64, b).patch);
}

TEST_CASE("dataset positive count follows the binomial bound") {
  Rng rng(5);
  const auto frames = generateDataset(1000, SynthConfig{}, rng);
  REQUIRE(frames.size() == 1000);
  int pos = 0;
  for (const auto& f : frames) pos += f.sample.eye_contact;
  CHECK(pos >= 60);
  CHECK(pos <= 100);
}

TEST_CASE("positive rate zero yields no positives") {
  SynthConfig cfg;
  cfg.positive_rate = 0.0;
  Rng rng(6);
  for (const auto& f : generateDataset(500, cfg, rng)) CHECK_FALSE(f.sample.eye_contact);
}

TEST_CASE("labels agree with the recomputed contact angle") {
  Rng rng(7);
  SynthConfig cfg;
  cfg.positive_rate = 0.3;
  for (const auto& f : generateDataset(600, cfg, rng)) {
    REQUIRE(f.sample.eye_contact == (contactAngleDeg(f.sample.params) <= cfg.contact_threshold_deg));
    REQUIRE(f.sample.landmark_available == landmarkAvailable(f.sample.params));
  }
}

TEST_CASE("sessions are contiguous with a temporally smooth pose") {
  SynthConfig cfg;
  cfg.session_length = 50;
  Rng rng(8);
  const auto frames = generateDataset(230, cfg, rng);
  CHECK(frames.front().session_id == "s0000");
  CHECK(frames.back().session_id == "s0004");
  CHECK(frames.back().frame_index == 29);
  double step = 0;
  int steps = 0;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].session_id != frames[i - 1].session_id) {
      CHECK(frames[i].frame_index == 0);
      continue;
    }
    CHECK(frames[i].frame_index == frames[i - 1].frame_index + 1);
    CHECK(frames[i].subject_id == frames[i - 1].subject_id);
    step += std::abs(frames[i].sample.pose.yaw - frames[i - 1].sample.pose.yaw);
    ++steps;
  }
  CHECK(step / steps < 2 * cfg.pose_step_deg);
  for (const auto& f : frames) {
    CHECK(std::abs(f.sample.pose.yaw) <= cfg.yaw_range);
    CHECK(std::abs(f.sample.pose.pitch) <= cfg.pitch_range);
    CHECK(std::abs(f.sample.pose.roll) <= cfg.roll_range);
  }
}

TEST_CASE("default generator gives roughly three quarters landmark availability") {
  Rng rng(11);
  const double a = availability(generateDataset(2000, SynthConfig{}, rng));
  CHECK(a > 0.70);
  CHECK(a < 0.81);
}

TEST_CASE("availability does not increase with a wider yaw range") {
  double prev = 1.1;
  for (double range : {30.0, 45.0, 60.0, 75.0, 90.0}) {
    SynthConfig cfg;
    cfg.yaw_range = range;
    cfg.occlusion_rate = 0.0;
    Rng rng(12);
    const double a = availability(generateDataset(1500, cfg, rng));
    CHECK(a <= prev + 1e-12);
    prev = a;
  }
}

TEST_CASE("same seed writes byte-identical datasets") {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "gc_test_synthface";
  fs::remove_all(root);
  std::vector<std::string> manifests;
  for (int k = 0; k < 2; ++k) {
    Rng rng(13);
    const auto dir = root / std::to_string(k);
    fs::create_directories(dir);
    const auto m = writeDataset(dir, generateDataset(120, SynthConfig{}, rng));
    manifests.push_back(readText(m));
  }
  CHECK(manifests[0] == manifests[1]);
  int images = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "0")) {
    if (!e.is_regular_file() || e.path().extension() != ".ppm") continue;
    const auto twin = root / "1" / fs::relative(e.path(), root / "0");
    REQUIRE(fs::exists(twin));
    CHECK(readBytes(e.path()) == readBytes(twin));
    ++images;
  }
  CHECK(images == 120);
  fs::remove_all(root);
}

TEST_CASE("dataset preconditions") {
  Rng rng(14);
  CHECK_THROWS_AS(generateDataset(0, SynthConfig{}, rng), Error);
  SynthConfig bad;
  bad.session_length = 0;
  CHECK_THROWS_AS(generateDataset(10, bad, rng), Error);
}

TEST_CASE("stream frames carry the child most of the time") {
  Rng rng(15);
  StreamConfig cfg;
  const auto frames = generateStream(200, cfg, rng);
  REQUIRE(frames.size() == 200);
  int with_child = 0;
  for (const auto& f : frames) {
    if (f.child_detection >= 0) {
      ++with_child;
      CHECK(f.detections[static_cast<std::size_t>(f.child_detection)].identity == cfg.child_identity);
    }
    for (const auto& d : f.detections) {
      CHECK(d.x >= 0);
      CHECK(d.y >= 0);
      CHECK(d.x + d.w <= cfg.frame_width);
      CHECK(d.y + d.h <= cfg.frame_height);
    }
  }
  CHECK(with_child > 170);
  const auto img = composeFrame(frames[0], cfg);
  CHECK(img.width == cfg.frame_width);
  CHECK(img.height == cfg.frame_height);
}
