#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "gazecontact/classifiers.hpp"
#include "gazecontact/imaging.hpp"

namespace gc {

struct DetectionBox {
  double x = 0, y = 0, w = 0, h = 0;
  double score = 1.0;
  int frame_index = 0;
};

/// Intersection over union; 0 for boxes without positive area.
double iou(const DetectionBox& a, const DetectionBox& b) noexcept;

struct DetectionEval {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t matched = 0, predicted = 0, truth = 0;
};

/// Per frame, candidate pairs with IoU >= threshold are matched greedily in
/// descending IoU order, each box used at most once. Ratios with an empty
/// denominator are 1 when the other side is empty too, else 0.
DetectionEval evaluateDetections(const std::vector<std::vector<DetectionBox>>& predicted,
                                 const std::vector<std::vector<DetectionBox>>& truth, double iou_threshold);

/// Detections file: one JSON object per line, {"frame": int, "boxes": [[x,y,w,h,score], ...]}.
/// Returned frames are indexed by position; boxes carry their frame number.
std::vector<std::vector<DetectionBox>> parseDetectionsJsonl(std::string_view text);
std::string detectionsJsonl(const std::vector<std::vector<DetectionBox>>& frames);

/// Crops a box (clamped to the frame) and resizes it to size x size.
FacePatch cropBox(const FacePatch& frame, const DetectionBox& box, int size);

// ---------------------------------------------------------------------------

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dims() const = 0;
  virtual std::vector<double> embed(const FacePatch& patch) const = 0;
};

/// 64-bin gray histogram followed by an 8x8 area-averaged thumbnail; each
/// half is scaled to norm 1/sqrt(2).
class HistogramEmbedding final : public EmbeddingProvider {
 public:
  std::size_t dims() const override { return 128; }
  std::vector<double> embed(const FacePatch& patch) const override;
};

struct SelectionOptions {
  int classes = 2;
  int bootstrap_frames = 5;      // frames labeled by the largest-box rule
  std::size_t warm_updates = 10;  // cosine-to-prototype assignment before this many updates
  double learning_rate = 0.05;
};

struct SelectionInput {
  DetectionBox box;
  FacePatch patch;
};

struct SelectionResult {
  std::optional<std::size_t> child;  // index into the frame's detections
  std::vector<int> assignments;       // class per detection; class 0 is the child
};

class SelectionState {
 public:
  SelectionState(const SelectionOptions& options, std::size_t embedding_dims);

  const SelectionOptions& options() const noexcept { return options_; }
  const OnlineLogRegModel& model() const noexcept { return model_; }
  int framesSeen() const noexcept { return frames_seen_; }
  /// Running-mean embeddings, empty for classes not yet seeded.
  const std::vector<std::vector<double>>& prototypes() const noexcept { return prototypes_; }

  /// Assigns every detection to a class, updates the online model once per
  /// assignment and returns the detection assigned to the child class.
  /// At most one detection per frame is the child.
  SelectionResult step(const std::vector<std::vector<double>>& embeddings, const std::vector<DetectionBox>& boxes);

 private:
  int nearestPrototype(const std::vector<double>& e, int skip) const;
  void learn(const std::vector<double>& e, int cls);

  SelectionOptions options_;
  OnlineLogRegModel model_;
  std::vector<std::vector<double>> prototypes_;
  std::vector<std::size_t> prototype_counts_;
  int frames_seen_ = 0;
};

SelectionResult selectStep(SelectionState& state, const EmbeddingProvider& provider,
                           const std::vector<SelectionInput>& detections);

}  // namespace gc
