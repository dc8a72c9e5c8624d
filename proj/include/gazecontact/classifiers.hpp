#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gazecontact/numerics.hpp"

namespace gc {

class PayloadReader;

// ---------------------------------------------------------------------------
// Random forest with randomized (feature, threshold) proposals per node.

struct ForestParams {
  int n_trees = 100;
  int candidates_per_node = 10;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double positive = 0.0;  // leaf P(y = 1)
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(std::span<const double> x) const;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  int n_trees = 0;
  int candidates_per_node = 0;
  std::size_t dims = 0;
};

/// Each tree is grown on a bootstrap sample until its leaves are pure or
/// hold fewer than two samples. Splits are chosen among random proposals
/// (feature, value of a random node sample) by weighted Gini impurity.
ForestModel fitForest(const Matrix& features, std::span<const int> labels, Rng& rng, const ForestParams& params = {});

/// Mean of the leaf positive-class probabilities over all trees.
double predictForest(const ForestModel& model, std::span<const double> feature);

void appendForest(std::vector<double>& out, const ForestModel& model);
ForestModel readForest(PayloadReader& in);

// ---------------------------------------------------------------------------

struct LinearSvmModel {
  std::vector<double> weights;
  double bias = 0.0;
  double c = 1.0;

  double decision(std::span<const double> x) const;
};

struct SvmParams {
  double c = 1.0;
  int epochs = 200;
};

/// Primal hinge-loss SVM trained with the Pegasos subgradient schedule.
/// Labels are +1 / -1. The bias is learned as the weight of a constant
/// feature, so it is regularized with the rest.
LinearSvmModel fitLinearSvm(const Matrix& features, std::span<const int> labels, Rng& rng, const SvmParams& params = {});

void appendSvm(std::vector<double>& out, const LinearSvmModel& model);
LinearSvmModel readSvm(PayloadReader& in);

// ---------------------------------------------------------------------------

/// Multinomial logistic regression updated one sample at a time.
class OnlineLogRegModel {
 public:
  OnlineLogRegModel(int classes, std::size_t dims, double learning_rate = 0.05, double l2_decay = 1e-4);

  int classes() const noexcept { return classes_; }
  std::size_t dims() const noexcept { return dims_; }
  std::size_t updates() const noexcept { return updates_; }
  double learningRate() const noexcept { return learning_rate_; }

  std::vector<double> probabilities(std::span<const double> x) const;
  int predict(std::span<const double> x) const;

  /// One SGD step on the cross-entropy of (x, assigned_class).
  void update(std::span<const double> x, int assigned_class);

  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<double>& biases() const noexcept { return biases_; }

 private:
  int classes_;
  std::size_t dims_;
  double learning_rate_;
  double l2_decay_;
  std::size_t updates_ = 0;
  std::vector<double> weights_;  // classes x dims
  std::vector<double> biases_;
};

double sigmoid(double x) noexcept;

}  // namespace gc
