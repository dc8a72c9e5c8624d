#pragma once

#include <optional>
#include <span>
#include <vector>

#include "gazecontact/classifiers.hpp"
#include "gazecontact/container.hpp"
#include "gazecontact/imaging.hpp"
#include "gazecontact/posecluster.hpp"

namespace gc {

/// One frame as seen by the landmark-dependent detectors. `eyes` is empty
/// when no landmarks were found; such frames get no prediction.
struct EyeFrame {
  std::optional<HeadPose> pose;
  std::optional<EyePair> eyes;
  int label = 0;
};

// ---------------------------------------------------------------------------

struct PeecModel {
  GmmPoseModel gmm;
  std::vector<ForestModel> forests;  // one per mixture component
};

struct PeecParams {
  int clusters = 3;
  ForestParams forest;
};

struct PeecTrainResult {
  PeecModel model;
  std::size_t used = 0;
  std::size_t excluded = 0;  // frames without pose or eye patches
};

/// Frames are hard-assigned to their most responsible pose cluster and one
/// forest is grown per cluster on the two-eye HOG descriptor.
PeecTrainResult trainPeec(std::span<const EyeFrame> frames, Rng& rng, const PeecParams& params = {});

/// sum_c P(c | pose) * P(contact | c, hog)
double predictPeec(const PeecModel& model, const HeadPose& pose, std::span<const double> hog);
std::optional<double> predictPeec(const PeecModel& model, const EyeFrame& frame);

void savePeec(ModelContainer& out, const PeecModel& model);
PeecModel loadPeec(const ModelContainer& in);

// ---------------------------------------------------------------------------

struct GazeLockModel {
  PcaModel pca;
  MdaModel mda;
  LinearSvmModel svm;
};

struct GazeLockParams {
  int pca_dims = 200;
  int mda_dims = 6;
  int pose_buckets = 3;
  SvmParams svm;
};

struct GazeLockTrainResult {
  GazeLockModel model;
  std::size_t used = 0;
  std::size_t excluded = 0;
  std::size_t pseudo_classes = 0;
};

/// Left and right eye intensities, scaled to [0, 1] and concatenated.
std::vector<double> eyeIntensities(const EyePair& eyes);

/// Intensities -> PCA -> MDA -> linear SVM. MDA is fit on pseudo-classes
/// (label x pose bucket) so that it can keep more than one dimension;
/// pseudo-classes with fewer than two members are left out of the MDA fit.
GazeLockTrainResult trainGazeLock(std::span<const EyeFrame> frames, Rng& rng, const GazeLockParams& params = {});

/// sigmoid(svm score)
double predictGazeLock(const GazeLockModel& model, const EyePatch& left, const EyePatch& right);
std::optional<double> predictGazeLock(const GazeLockModel& model, const EyeFrame& frame);

void saveGazeLock(ModelContainer& out, const GazeLockModel& model);
GazeLockModel loadGazeLock(const ModelContainer& in);

void appendPca(std::vector<double>& out, const PcaModel& model);
PcaModel readPca(PayloadReader& in);
void appendMda(std::vector<double>& out, const MdaModel& model);
MdaModel readMda(PayloadReader& in);

}  // namespace gc
