#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gazecontact/baselines.hpp"
#include "gazecontact/container.hpp"
#include "gazecontact/eval.hpp"
#include "gazecontact/picnn.hpp"
#include "gazecontact/synthface.hpp"

namespace gc {

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRow {
  std::string session_id;
  std::string subject_id;
  std::int64_t frame_index = 0;
  std::string image_path;  // relative to the manifest directory unless absolute
  int label = 0;
  std::optional<HeadPose> pose;
  bool landmark_available = false;
  std::string diagnosis;
  std::string protocol;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  std::filesystem::path imagePath(const ManifestRow& row) const;
  std::vector<SessionMeta> sessions() const;  // first-appearance order
  Manifest subset(const std::vector<std::string>& session_ids) const;
};

inline constexpr const char* kManifestHeader =
    "session_id,subject_id,frame_index,image_path,label,yaw,pitch,roll,landmark_available,diagnosis,protocol";

Manifest parseManifest(const std::string& text, const std::filesystem::path& base_dir);
Manifest readManifest(const std::filesystem::path& path);
std::string manifestCsv(const Manifest& manifest);
Manifest manifestFromDataset(const std::vector<DatasetFrame>& frames);

// ---------------------------------------------------------------------------
// Run configuration: key=value lines, '#' starts a comment.

class RunConfig {
 public:
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  static const std::vector<std::string>& knownKeys();

  /// UsageError for unknown keys.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  std::uint64_t seed(std::uint64_t fallback) const;

  SynthConfig synth() const;
  PicnnConfig picnn(bool pose_branch) const;
  PeecParams peec() const;
  GazeLockParams gazelock() const;
  double rebalanceTarget() const { return number("train.rebalance_target", 0.4); }
  AugmentLimits augmentLimits() const;

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Frames and methods

enum class Method { Picnn = 1, Alexnet = 2, Peec = 3, GazeLock = 4 };

Method parseMethod(const std::string& name);
std::string methodName(Method m);

struct LoadedFrame {
  const ManifestRow* row = nullptr;
  FacePatch patch;
};

/// Reads every image of the manifest (in parallel). Frames point at rows of
/// `manifest`, which must outlive them.
std::vector<LoadedFrame> loadFrames(const Manifest& manifest);

/// Frames whose session is in `session_ids`, in their original order.
std::vector<LoadedFrame> selectSessions(const std::vector<LoadedFrame>& frames,
                                        const std::vector<std::string>& session_ids);

/// In-memory frames straight from the generator, bypassing the disk.
struct FrameSet {
  Manifest manifest;
  std::vector<LoadedFrame> frames;
};
FrameSet frameSetFromDataset(const std::vector<DatasetFrame>& data);

/// Eye patches from surrogate landmarks when the frame has them; frames
/// whose crop leaves the padded image count as landmark failures.
EyeFrame toEyeFrame(const LoadedFrame& frame);

/// Rebalanced, augmented network training samples. Flips negate yaw and
/// roll targets; rotations add to roll.
std::vector<TrainSample> buildTrainSamples(const std::vector<LoadedFrame>& frames, double target,
                                           const AugmentLimits& limits, Rng& rng, RebalancePlan* plan_out = nullptr);

struct TrainedModel {
  Method method = Method::Picnn;
  ModelContainer container;
  std::string log_csv;  // empty for methods without an iterative log
  std::size_t used = 0, excluded = 0;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> progress;
};

TrainedModel trainMethod(Method method, const std::vector<LoadedFrame>& frames, const RunConfig& config, Rng& rng,
                         const TrainHooks& hooks = {});

/// A model file opened for prediction.
class Detector {
 public:
  static Detector fromContainer(const ModelContainer& container);
  static Detector load(const std::filesystem::path& path);

  Method method() const noexcept { return method_; }
  /// Empty optional marks a frame the method cannot score.
  std::vector<std::optional<double>> score(const std::vector<LoadedFrame>& frames) const;
  const PicnnModel* picnn() const noexcept { return picnn_ ? &*picnn_ : nullptr; }

 private:
  Method method_ = Method::Picnn;
  std::optional<PicnnModel> picnn_;
  std::optional<PeecModel> peec_;
  std::optional<GazeLockModel> gazelock_;
};

std::vector<ScoredFrame> scoreFrames(const Detector& detector, const std::vector<LoadedFrame>& frames);

std::string scoresCsv(const std::vector<ScoredFrame>& frames);
std::vector<ScoredFrame> parseScoresCsv(const std::string& text);

}  // namespace gc
