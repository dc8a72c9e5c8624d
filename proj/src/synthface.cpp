#include "gazecontact/synthface.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"

namespace gc {
namespace {

constexpr double kDeg = M_PI / 180.0;

struct Vec3 {
  double x, y, z;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot3(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 normalized(Vec3 a) { return (1.0 / std::sqrt(dot3(a, a))) * a; }

// Row-major 3x3 rotation.
struct Rot {
  double m[9];
  Vec3 apply(Vec3 v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Vec3 applyT(Vec3 v) const {
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z, m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
};

Rot mul(const Rot& a, const Rot& b) {
  Rot r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a.m[i * 3 + k] * b.m[k * 3 + j];
      r.m[i * 3 + j] = s;
    }
  return r;
}

// Camera frame: x right, y down, z toward the camera. Forward of a neutral head is +z.
Rot rotY(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  return {{c, 0, s, 0, 1, 0, -s, 0, c}};
}
Rot rotX(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  return {{1, 0, 0, 0, c, s, 0, -s, c}};
}
Rot rotZ(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  return {{c, -s, 0, s, c, 0, 0, 0, 1}};
}

Rot headRotation(double yaw, double pitch, double roll) { return mul(rotZ(roll), mul(rotY(yaw), rotX(pitch))); }

Vec3 eyeDirection(double az, double el) { return mul(rotY(az), rotX(el)).apply({0, 0, 1}); }

struct Identity {
  double scale = 1.0;
  double eye_spacing = 1.0;
  Vec3 skin{200, 160, 130};
  Vec3 hair{60, 40, 25};
  Vec3 iris{70, 45, 25};
  Vec3 lips{170, 90, 90};
};

Identity identityFor(int id, bool population_mean) {
  Identity g;
  if (population_mean) return g;
  Rng r = Rng::substream(0x1de7171ULL, static_cast<std::uint64_t>(id));
  g.scale = r.uniform(0.94, 1.06);
  g.eye_spacing = r.uniform(0.93, 1.07);
  const double tone = r.uniform();
  g.skin = {120 + 120 * tone + r.uniform(-10, 10), 80 + 100 * tone + r.uniform(-10, 10), 55 + 95 * tone + r.uniform(-10, 10)};
  const double h = r.uniform();
  g.hair = {20 + 180 * h * h + r.uniform(-10, 10), 15 + 120 * h * h, 10 + 60 * h};
  const double ir = r.uniform();
  g.iris = {30 + 60 * (1 - ir), 30 + 50 * ir, 20 + 110 * ir};
  g.lips = {g.skin.x * 0.85, g.skin.y * 0.55, g.skin.z * 0.6};
  return g;
}

// Head geometry in head coordinates (units of half the patch size).
struct Geometry {
  double ax, ay, az;  // ellipsoid radii
  double center_y;
  double eye_x, eye_y;
  double eyeball_r;
  double eyeball_depth;  // eyeball center below the surface
  double eyeball_z;
};

Geometry geometryFor(const Identity& id) {
  Geometry g{};
  g.ax = 0.64 * id.scale;
  g.ay = 0.82 * id.scale;
  g.az = 0.62 * id.scale;
  g.center_y = 0.06;
  g.eye_x = 0.27 * id.scale * id.eye_spacing;
  g.eye_y = -0.12 * id.scale;
  g.eyeball_r = 0.16 * id.scale;
  g.eyeball_depth = 0.10 * id.scale;
  const double t = 1.0 - (g.eye_x / g.ax) * (g.eye_x / g.ax) - (g.eye_y / g.ay) * (g.eye_y / g.ay);
  g.eyeball_z = g.az * std::sqrt(std::max(t, 0.0)) - g.eyeball_depth;
  return g;
}

Point2 toPixel(Vec3 cam, int size) {
  const double half = 0.5 * size;
  return {cam.x * half + half - 0.5, cam.y * half + half - 0.5};
}

struct Scene {
  Rot rot;
  Geometry geo;
  Identity id;
  Vec3 eye_centers[2];  // camera frame
  Vec3 gaze;            // camera frame
  double illumination;
  double band_top;  // occlusion band top in camera y; +inf when none
  Vec3 background_a, background_b;
};

Vec3 shadeAt(const Scene& s, double u, double v) {
  const Geometry& g = s.geo;
  const Vec3 bg = (0.5 + 0.5 * v) * s.background_b + (0.5 - 0.5 * v) * s.background_a;

  // Occluding band (a hand in front of the lower face).
  if (v >= s.band_top && std::abs(u) < g.ax + 0.1) {
    const double ripple = 0.9 + 0.1 * std::sin(18.0 * u);
    return ripple * s.illumination * Vec3{215, 165, 150};
  }

  // Orthographic ray (u, v, z) against the rotated ellipsoid.
  const Vec3 p0 = s.rot.applyT({u, v - g.center_y, 0.0});
  const Vec3 dir = s.rot.applyT({0.0, 0.0, 1.0});
  const double ia = 1.0 / (g.ax * g.ax), ib = 1.0 / (g.ay * g.ay), ic = 1.0 / (g.az * g.az);
  const double A = dir.x * dir.x * ia + dir.y * dir.y * ib + dir.z * dir.z * ic;
  const double B = 2.0 * (p0.x * dir.x * ia + p0.y * dir.y * ib + p0.z * dir.z * ic);
  const double C = p0.x * p0.x * ia + p0.y * p0.y * ib + p0.z * p0.z * ic - 1.0;
  const double disc = B * B - 4 * A * C;
  if (disc < 0) return bg;
  const double z = (-B + std::sqrt(disc)) / (2 * A);
  const Vec3 h = p0 + z * dir;  // head coordinates on the surface

  const Vec3 normal = s.rot.apply(normalized({h.x * ia, h.y * ib, h.z * ic}));
  const Vec3 light = normalized({-0.3, -0.5, 0.8});
  const double lambert = 0.35 + 0.65 * std::max(0.0, dot3(normal, light));
  const double shade = lambert * s.illumination;

  if (h.y < -0.40 * g.ay / 0.82 || h.z < -0.12) return shade * s.id.hair;

  if (h.z > 0.0) {
    for (int e = 0; e < 2; ++e) {
      const double ex = (e == 0 ? -g.eye_x : g.eye_x);
      // eyebrow
      if (std::abs(h.x - ex) < 0.12 && std::abs(h.y - (g.eye_y - 0.16)) < 0.025) return shade * s.id.hair;
      const double lx = (h.x - ex) / 0.15;
      const double ly = (h.y - g.eye_y) / 0.075;
      if (lx * lx + ly * ly < 1.0) {
        const Vec3 c = s.eye_centers[e];
        const double dx = u - c.x, dy = v - c.y;
        const double r2 = g.eyeball_r * g.eyeball_r - dx * dx - dy * dy;
        if (r2 <= 0) return 0.3 * shade * s.id.skin;
        const Vec3 q = (1.0 / g.eyeball_r) * Vec3{dx, dy, std::sqrt(r2)};
        const double cosang = dot3(q, s.gaze);
        if (cosang > std::cos(0.17)) return Vec3{15, 12, 12};
        if (cosang > std::cos(0.42)) return s.illumination * s.id.iris;
        return s.illumination * Vec3{235, 232, 225};
      }
    }
    const double nx = h.x / 0.07, ny = (h.y - 0.12) / 0.10;
    if (nx * nx + ny * ny < 1.0) return 0.8 * shade * s.id.skin;
    const double mx = h.x / 0.20, my = (h.y - 0.40) / 0.045;
    if (mx * mx + my * my < 1.0) return shade * s.id.lips;
  }
  return shade * s.id.skin;
}

Scene buildScene(const SceneParams& p, bool population_mean) {
  Scene s;
  s.id = identityFor(p.identity_id, population_mean);
  s.geo = geometryFor(s.id);
  s.rot = headRotation(p.yaw, p.pitch, p.roll);
  for (int e = 0; e < 2; ++e) {
    const double ex = (e == 0 ? -s.geo.eye_x : s.geo.eye_x);
    s.eye_centers[e] = s.rot.apply({ex, s.geo.eye_y, s.geo.eyeball_z}) + Vec3{0, s.geo.center_y, 0};
  }
  s.gaze = s.rot.apply(eyeDirection(p.gaze_az, p.gaze_el));
  s.illumination = p.illumination;
  const double chin = s.geo.center_y + s.geo.ay;
  s.band_top = p.occlusion_fraction > 0.0 ? chin - p.occlusion_fraction * 2.0 * s.geo.ay : 1e9;
  return s;
}

// Converts a desired camera-frame gaze direction into eye-in-head angles.
bool eyeAnglesFor(const HeadPose& pose, Vec3 cam_dir, double& az, double& el) {
  const Vec3 g = headRotation(pose.yaw, pose.pitch, pose.roll).applyT(cam_dir);
  el = std::asin(std::clamp(g.y, -1.0, 1.0)) / kDeg;
  az = std::atan2(g.x, g.z) / kDeg;
  return std::abs(az) <= 55.0 && std::abs(el) <= 40.0;
}

Vec3 directionAt(double angle_deg, double phi) {
  const double a = angle_deg * kDeg;
  return {std::sin(a) * std::cos(phi), std::sin(a) * std::sin(phi), std::cos(a)};
}

double reflectInto(double v, double lim) {
  if (lim <= 0) return 0.0;
  while (v > lim || v < -lim) v = v > lim ? 2 * lim - v : -2 * lim - v;
  return v;
}

const char* kProtocols[] = {"ESCS", "v-BOSCC", "nv-BOSCC", "R-ABC", "Clinic"};

std::string padded(const char* prefix, int v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, v);
  return buf;
}

}  // namespace

double contactAngleDeg(const SceneParams& p) {
  const Vec3 d = headRotation(p.yaw, p.pitch, p.roll).apply(eyeDirection(p.gaze_az, p.gaze_el));
  return std::acos(std::clamp(d.z, -1.0, 1.0)) / kDeg;
}

bool landmarkAvailable(const SceneParams& p) {
  return std::abs(p.yaw) <= 45.0 && std::abs(p.pitch) <= 30.0 && p.occlusion_fraction < 0.3;
}

SynthSample renderFace(const SceneParams& params, int size, Rng& rng, double contact_threshold_deg) {
  if (size < 32) fail(ErrorKind::DegenerateInput, "renderFace: size must be at least 32");
  Scene scene = buildScene(params, false);
  Rng bg = Rng::substream(0xb6ULL, static_cast<std::uint64_t>(params.identity_id));
  scene.background_a = {bg.uniform(40, 200), bg.uniform(40, 200), bg.uniform(40, 200)};
  scene.background_b = {bg.uniform(40, 200), bg.uniform(40, 200), bg.uniform(40, 200)};

  SynthSample out;
  out.params = params;
  out.pose = {params.yaw, params.pitch, params.roll};
  out.patch = FacePatch(size, size, 3);
  const double half = 0.5 * size;
  constexpr int kSuper = 3;
  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      Vec3 acc{0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = (px + (sx + 0.5) / kSuper - half) / half;
          const double v = (py + (sy + 0.5) / kSuper - half) / half;
          acc = acc + shadeAt(scene, u, v);
        }
      acc = (1.0 / (kSuper * kSuper)) * acc;
      const double noise[3] = {rng.normal() * 3.0, rng.normal() * 3.0, rng.normal() * 3.0};
      const double rgb[3] = {acc.x, acc.y, acc.z};
      for (int c = 0; c < 3; ++c)
        out.patch.at(px, py, c) = static_cast<std::uint8_t>(std::clamp(std::floor(rgb[c] + noise[c] + 0.5), 0.0, 255.0));
    }
  }
  out.eye_contact = contactAngleDeg(params) <= contact_threshold_deg;
  out.landmark_available = landmarkAvailable(params);
  for (int e = 0; e < 2; ++e) out.eye_centers[e] = toPixel(scene.eye_centers[e], size);
  return out;
}

std::array<Point2, 2> surrogateEyeCenters(const HeadPose& pose, int size) {
  SceneParams p;
  p.yaw = pose.yaw;
  p.pitch = pose.pitch;
  p.roll = pose.roll;
  Scene scene = buildScene(p, true);
  return {toPixel(scene.eye_centers[0], size), toPixel(scene.eye_centers[1], size)};
}

std::vector<DatasetFrame> generateDataset(int n, const SynthConfig& config, Rng& rng) {
  if (n < 1) fail(ErrorKind::DegenerateInput, "generateDataset: n must be at least 1");
  if (config.session_length < 1) fail(ErrorKind::DegenerateInput, "generateDataset: session_length must be positive");
  const int sessions = (n + config.session_length - 1) / config.session_length;
  const int subjects = config.subjects > 0 ? std::min(config.subjects, sessions) : sessions;
  const std::uint64_t base = rng.nextU64();

  // Session -> subject: every subject gets one session, the rest are drawn.
  std::vector<int> subject_of(sessions);
  Rng roster = Rng::substream(base, 0xfeedULL);
  for (int s = 0; s < sessions; ++s)
    subject_of[s] = s < subjects ? s : static_cast<int>(roster.below(static_cast<std::uint64_t>(subjects)));

  std::vector<DatasetFrame> frames;
  frames.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < sessions; ++s) {
    Rng rs = Rng::substream(base, static_cast<std::uint64_t>(s) + 1);
    const int subject = subject_of[s];
    Rng rsub = Rng::substream(base ^ 0x5ab1ec7ULL, static_cast<std::uint64_t>(subject));
    const std::string diagnosis = rsub.uniform() < config.asd_fraction ? "ASD" : "TD";
    const std::string protocol = kProtocols[rs.below(5)];
    const double session_light = rs.uniform(0.85, 1.15);

    HeadPose pose{rs.uniform(-config.yaw_range, config.yaw_range), rs.uniform(-config.pitch_range, config.pitch_range),
                  rs.uniform(-config.roll_range, config.roll_range)};
    const int count = std::min(config.session_length, n - s * config.session_length);
    for (int f = 0; f < count; ++f) {
      if (f > 0) {
        pose.yaw = reflectInto(pose.yaw + rs.normal() * config.pose_step_deg, config.yaw_range);
        pose.pitch = reflectInto(pose.pitch + rs.normal() * config.pose_step_deg, config.pitch_range);
        pose.roll = reflectInto(pose.roll + rs.normal() * 0.5 * config.pose_step_deg, config.roll_range);
      }
      SceneParams params;
      params.yaw = pose.yaw;
      params.pitch = pose.pitch;
      params.roll = pose.roll;
      params.identity_id = subject + 1;
      params.illumination = session_light * (1.0 + 0.03 * rs.normal());
      params.occlusion_fraction = rs.bernoulli(config.occlusion_rate) ? rs.uniform(0.30, 0.38) : 0.0;

      const bool contact = rs.bernoulli(config.positive_rate);
      for (int attempt = 0;; ++attempt) {
        const double angle = contact ? rs.uniform(0.0, 0.8 * config.contact_threshold_deg)
                                     : rs.uniform(config.negative_min_angle_deg, config.negative_max_angle_deg);
        const double phi = rs.uniform(0.0, 2.0 * M_PI);
        if (eyeAnglesFor(pose, directionAt(angle, phi), params.gaze_az, params.gaze_el) || attempt > 50) break;
      }

      DatasetFrame frame;
      frame.sample = renderFace(params, config.patch_size, rs, config.contact_threshold_deg);
      frame.session_id = padded("s", s, 4);
      frame.subject_id = padded("c", subject, 4);
      frame.frame_index = f;
      frame.diagnosis = diagnosis;
      frame.protocol = protocol;
      frames.push_back(std::move(frame));
    }
  }
  return frames;
}

std::filesystem::path writeDataset(const std::filesystem::path& out_dir, const std::vector<DatasetFrame>& frames) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(out_dir)) fail(ErrorKind::IoError, "output directory does not exist: " + out_dir.string());
  fs::create_directories(out_dir / "images", ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + (out_dir / "images").string() + ": " + ec.message());

  std::ostringstream csv;
  csv << "session_id,subject_id,frame_index,image_path,label,yaw,pitch,roll,landmark_available,diagnosis,protocol\n";
  std::string current;
  for (const auto& f : frames) {
    if (f.session_id != current) {
      current = f.session_id;
      fs::create_directories(out_dir / "images" / current, ec);
      if (ec) fail(ErrorKind::IoError, "cannot create session directory: " + ec.message());
    }
    const std::string rel = "images/" + f.session_id + "/" + padded("", f.frame_index, 5) + ".ppm";
    writeNetpbm(out_dir / rel, f.sample.patch);
    csv << f.session_id << ',' << f.subject_id << ',' << f.frame_index << ',' << rel << ','
        << (f.sample.eye_contact ? 1 : 0) << ',';
    if (f.sample.landmark_available) {
      csv << formatReal(f.sample.pose.yaw) << ',' << formatReal(f.sample.pose.pitch) << ','
          << formatReal(f.sample.pose.roll);
    } else {
      csv << ",,";
    }
    csv << ',' << (f.sample.landmark_available ? 1 : 0) << ',' << f.diagnosis << ',' << f.protocol << '\n';
  }
  const auto manifest = out_dir / "manifest.csv";
  atomicWrite(manifest, csv.str());
  return manifest;
}

// ---------------------------------------------------------------------------

std::vector<StreamFrame> generateStream(int frames, const StreamConfig& config, Rng& rng) {
  std::vector<StreamFrame> out;
  const double W = config.frame_width, H = config.frame_height;
  double child_x = 0.5 * W, child_y = 0.5 * H, child_s = 0.34 * H;
  double other_x = 0.2 * W, other_y = 0.4 * H, other_s = 0.2 * H;
  HeadPose child_pose, other_pose;
  for (int f = 0; f < frames; ++f) {
    StreamFrame frame;
    frame.frame_index = f;
    child_x = std::clamp(child_x + rng.normal() * 3.0, 0.35 * W, 0.65 * W);
    child_y = std::clamp(child_y + rng.normal() * 3.0, 0.35 * H, 0.65 * H);
    child_s = std::clamp(child_s + rng.normal() * 2.0, 0.28 * H, 0.42 * H);
    other_x = std::clamp(other_x + rng.normal() * 3.0, 0.1 * W, 0.9 * W);
    other_y = std::clamp(other_y + rng.normal() * 3.0, 0.25 * H, 0.6 * H);
    other_s = std::clamp(other_s + rng.normal() * 2.0, 0.15 * H, 0.26 * H);
    child_pose.yaw = reflectInto(child_pose.yaw + rng.normal() * 5.0, 40.0);
    child_pose.pitch = reflectInto(child_pose.pitch + rng.normal() * 3.0, 20.0);
    other_pose.yaw = reflectInto(other_pose.yaw + rng.normal() * 5.0, 40.0);
    other_pose.pitch = reflectInto(other_pose.pitch + rng.normal() * 3.0, 20.0);

    auto add = [&](double cx, double cy, double s, const HeadPose& pose, int identity) {
      SceneParams p;
      p.yaw = pose.yaw;
      p.pitch = pose.pitch;
      p.identity_id = identity;
      p.gaze_az = rng.uniform(-20, 20);
      p.gaze_el = rng.uniform(-10, 10);
      p.illumination = rng.uniform(0.9, 1.1);
      StreamDetection d;
      d.x = std::clamp(cx - 0.5 * s, 0.0, W - s);
      d.y = std::clamp(cy - 0.5 * s, 0.0, H - s);
      d.w = d.h = s;
      d.score = rng.uniform(0.8, 1.0);
      d.patch = renderFace(p, config.patch_size, rng).patch;
      d.identity = identity;
      frame.detections.push_back(std::move(d));
    };
    const bool child = rng.bernoulli(config.child_presence);
    const bool other = rng.bernoulli(config.other_presence);
    // detection order is shuffled so position in the list carries no information
    const bool child_first = rng.bernoulli(0.5);
    if (child_first && child) add(child_x, child_y, child_s, child_pose, config.child_identity);
    if (other) add(other_x, other_y, other_s, other_pose, config.other_identity);
    if (!child_first && child) add(child_x, child_y, child_s, child_pose, config.child_identity);
    for (std::size_t i = 0; i < frame.detections.size(); ++i)
      if (frame.detections[i].identity == config.child_identity) frame.child_detection = static_cast<int>(i);
    out.push_back(std::move(frame));
  }
  return out;
}

FacePatch composeFrame(const StreamFrame& frame, const StreamConfig& config) {
  FacePatch canvas(config.frame_width, config.frame_height, 3, 90);
  for (const auto& d : frame.detections) {
    const int w = std::max(8, static_cast<int>(std::lround(d.w)));
    const int h = std::max(8, static_cast<int>(std::lround(d.h)));
    const FacePatch scaled = resizePatch(d.patch, w, h);
    const int x0 = static_cast<int>(std::lround(d.x));
    const int y0 = static_cast<int>(std::lround(d.y));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int cx = x0 + x, cy = y0 + y;
        if (cx < 0 || cy < 0 || cx >= canvas.width || cy >= canvas.height) continue;
        for (int c = 0; c < 3; ++c) canvas.at(cx, cy, c) = scaled.at(x, y, c);
      }
  }
  return canvas;
}

}  // namespace gc
