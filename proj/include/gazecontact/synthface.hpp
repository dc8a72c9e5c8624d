#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gazecontact/imaging.hpp"
#include "gazecontact/numerics.hpp"
#include "gazecontact/posecluster.hpp"

namespace gc {

struct SceneParams {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  double gaze_az = 0.0;  // eye-in-head rotation, degrees
  double gaze_el = 0.0;
  int identity_id = 0;
  double occlusion_fraction = 0.0;  // lower-face band, fraction of face height
  double illumination = 1.0;
};

struct SynthSample {
  FacePatch patch;
  HeadPose pose;
  SceneParams params;
  bool eye_contact = false;
  bool landmark_available = false;
  Point2 eye_centers[2];  // image-left eye first
};

inline constexpr double kDefaultContactThresholdDeg = 5.0;

/// Angle in degrees between the rendered gaze ray and the camera axis.
double contactAngleDeg(const SceneParams& params);

/// Surrogate for a landmark detector's success: frontal-enough, unoccluded.
bool landmarkAvailable(const SceneParams& params);

SynthSample renderFace(const SceneParams& params, int size, Rng& rng,
                       double contact_threshold_deg = kDefaultContactThresholdDeg);

/// Eye centers a landmark detector would report for a face of the given
/// pose, using the population-average face geometry (no identity info).
std::array<Point2, 2> surrogateEyeCenters(const HeadPose& pose, int size);

struct SynthConfig {
  int patch_size = 64;
  double positive_rate = 0.08;
  double contact_threshold_deg = kDefaultContactThresholdDeg;
  double negative_min_angle_deg = 15.0;
  double negative_max_angle_deg = 50.0;
  double yaw_range = 45.0;
  double pitch_range = 25.0;
  double roll_range = 15.0;
  double pose_step_deg = 4.0;  // random-walk step
  double occlusion_rate = 0.25;
  int session_length = 100;
  int subjects = 0;  // 0: one subject per session
  double asd_fraction = 0.6;
};

struct DatasetFrame {
  SynthSample sample;
  std::string session_id;
  std::string subject_id;
  int frame_index = 0;
  std::string diagnosis;
  std::string protocol;
};

std::vector<DatasetFrame> generateDataset(int n, const SynthConfig& config, Rng& rng);

/// Writes images under out_dir/images and the manifest CSV at
/// out_dir/manifest.csv. Returns the manifest path.
std::filesystem::path writeDataset(const std::filesystem::path& out_dir, const std::vector<DatasetFrame>& frames);

// ---------------------------------------------------------------------------
// Multi-face stream used by child-face selection.

struct StreamDetection {
  double x = 0, y = 0, w = 0, h = 0, score = 1.0;
  FacePatch patch;
  int identity = 0;
};

struct StreamFrame {
  int frame_index = 0;
  std::vector<StreamDetection> detections;
  int child_detection = -1;  // index into detections, -1 when absent
};

struct StreamConfig {
  int frame_width = 320;
  int frame_height = 240;
  int child_identity = 1;
  int other_identity = 2;
  double child_presence = 0.95;
  double other_presence = 0.6;
  int patch_size = 48;
};

std::vector<StreamFrame> generateStream(int frames, const StreamConfig& config, Rng& rng);

/// Full frame with each detection pasted at its box.
FacePatch composeFrame(const StreamFrame& frame, const StreamConfig& config);

}  // namespace gc
