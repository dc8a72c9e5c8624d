#pragma once

#include <array>
#include <span>
#include <vector>

#include "gazecontact/numerics.hpp"

namespace gc {

/// Head orientation in degrees relative to the camera.
struct HeadPose {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  bool valid() const noexcept;
};

/// Mixture over (pitch, yaw). Roll is never used for clustering.
struct GmmPoseModel {
  std::vector<double> weights;
  std::vector<std::array<double, 2>> means;        // (pitch, yaw)
  std::vector<std::array<double, 4>> covariances;  // row-major 2x2

  std::size_t k() const noexcept { return weights.size(); }
};

struct GmmOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-6;
  double covariance_floor = 1e-6;
};

struct GmmFitTrace {
  std::vector<double> log_likelihood;  // at the initialization, then after each EM iteration
  int iterations = 0;
  bool converged = false;
};

/// EM from a k-means++ initialization; requires at least 2k distinct points.
GmmPoseModel fitGmm(std::span<const HeadPose> poses, std::size_t k, Rng& rng, const GmmOptions& options = {},
                    GmmFitTrace* trace = nullptr);

/// Posterior P(cluster | pose).
std::vector<double> responsibilities(const GmmPoseModel& model, const HeadPose& pose);
std::size_t hardAssign(const GmmPoseModel& model, const HeadPose& pose);

/// Mean log-density of the poses under the mixture.
double meanLogLikelihood(const GmmPoseModel& model, std::span<const HeadPose> poses);

void appendGmm(std::vector<double>& out, const GmmPoseModel& model);
class PayloadReader;
GmmPoseModel readGmm(PayloadReader& in);

}  // namespace gc
