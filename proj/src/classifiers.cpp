#include "gazecontact/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gazecontact/container.hpp"
#include "gazecontact/error.hpp"
#include "gazecontact/parallel.hpp"

namespace gc {
namespace {

double gini(std::size_t pos, std::size_t total) {
  if (total == 0) return 0.0;
  const double p = static_cast<double>(pos) / static_cast<double>(total);
  return 2.0 * p * (1.0 - p);
}

DecisionTree growTree(const Matrix& x, std::span<const int> labels, Rng& rng, int candidates) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  std::vector<std::size_t> sample(n);
  for (auto& s : sample) s = static_cast<std::size_t>(rng.below(n));

  DecisionTree tree;
  struct Pending {
    int node;
    std::size_t begin, end;  // range in `sample`
  };
  tree.nodes.emplace_back();
  std::vector<Pending> stack{{0, 0, n}};
  while (!stack.empty()) {
    const Pending job = stack.back();
    stack.pop_back();
    const std::size_t m = job.end - job.begin;
    std::size_t pos = 0;
    for (std::size_t i = job.begin; i < job.end; ++i) pos += labels[sample[i]] == 1;

    auto makeLeaf = [&] {
      tree.nodes[job.node].feature = -1;
      tree.nodes[job.node].positive = m ? static_cast<double>(pos) / static_cast<double>(m) : 0.0;
    };
    if (m < 2 || pos == 0 || pos == m) {
      makeLeaf();
      continue;
    }

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_score = std::numeric_limits<double>::infinity();
    for (int c = 0; c < candidates; ++c) {
      const auto f = static_cast<std::size_t>(rng.below(d));
      const double v = x(sample[job.begin + rng.below(m)], f);
      std::size_t nl = 0, pl = 0;
      for (std::size_t i = job.begin; i < job.end; ++i) {
        if (x(sample[i], f) <= v) {
          ++nl;
          pl += labels[sample[i]] == 1;
        }
      }
      if (nl == 0 || nl == m) continue;
      const std::size_t nr = m - nl, pr = pos - pl;
      const double score = (static_cast<double>(nl) * gini(pl, nl) + static_cast<double>(nr) * gini(pr, nr)) /
                           static_cast<double>(m);
      if (score < best_score) {
        best_score = score;
        best_feature = static_cast<int>(f);
        best_threshold = v;
      }
    }
    if (best_feature < 0) {
      makeLeaf();
      continue;
    }

    auto mid = std::stable_partition(sample.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                     sample.begin() + static_cast<std::ptrdiff_t>(job.end),
                                     [&](std::size_t s) { return x(s, best_feature) <= best_threshold; });
    const std::size_t split = static_cast<std::size_t>(mid - sample.begin());
    const int left = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const int right = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    auto& node = tree.nodes[job.node];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = left;
    node.right = right;
    stack.push_back({right, split, job.end});
    stack.push_back({left, job.begin, split});
  }
  return tree;
}

}  // namespace

double DecisionTree::predict(std::span<const double> x) const {
  int i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return nodes[i].positive;
}

ForestModel fitForest(const Matrix& features, std::span<const int> labels, Rng& rng, const ForestParams& params) {
  const std::size_t n = features.rows();
  if (labels.size() != n) fail(ErrorKind::DimensionMismatch, "fitForest: label count mismatch");
  if (n < 2) fail(ErrorKind::DegenerateInput, "fitForest: need at least 2 samples");
  if (params.n_trees < 1 || params.candidates_per_node < 1)
    fail(ErrorKind::DegenerateInput, "fitForest: n_trees and candidates_per_node must be positive");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorKind::DegenerateInput, "fitForest: labels must be 0 or 1");
    pos += y == 1;
  }
  if (pos == 0 || pos == n) fail(ErrorKind::DegenerateInput, "fitForest: both classes must be present");

  ForestModel model;
  model.n_trees = params.n_trees;
  model.candidates_per_node = params.candidates_per_node;
  model.dims = features.cols();
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(params.n_trees));
  for (auto& s : seeds) s = rng.nextU64();
  model.trees.resize(seeds.size());
  parallelFor(seeds.size(), [&](std::size_t t) {
    Rng tree_rng(seeds[t]);
    model.trees[t] = growTree(features, labels, tree_rng, params.candidates_per_node);
  });
  return model;
}

double predictForest(const ForestModel& model, std::span<const double> feature) {
  if (feature.size() != model.dims)
    fail(ErrorKind::DimensionMismatch, "predictForest: expected " + std::to_string(model.dims) + " features, got " +
                                           std::to_string(feature.size()));
  double s = 0.0;
  for (const auto& t : model.trees) s += t.predict(feature);
  return model.trees.empty() ? 0.0 : s / static_cast<double>(model.trees.size());
}

void appendForest(std::vector<double>& out, const ForestModel& model) {
  out.push_back(static_cast<double>(model.n_trees));
  out.push_back(static_cast<double>(model.candidates_per_node));
  out.push_back(static_cast<double>(model.dims));
  out.push_back(static_cast<double>(model.trees.size()));
  for (const auto& t : model.trees) {
    out.push_back(static_cast<double>(t.nodes.size()));
    for (const auto& n : t.nodes) {
      out.push_back(n.feature);
      out.push_back(n.threshold);
      out.push_back(n.left);
      out.push_back(n.right);
      out.push_back(n.positive);
    }
  }
}

ForestModel readForest(PayloadReader& in) {
  ForestModel m;
  m.n_trees = static_cast<int>(in.integer());
  m.candidates_per_node = static_cast<int>(in.integer());
  m.dims = in.count();
  m.trees.resize(in.count());
  for (auto& t : m.trees) {
    t.nodes.resize(in.count());
    for (auto& n : t.nodes) {
      n.feature = static_cast<int>(in.integer());
      n.threshold = in.real();
      n.left = static_cast<int>(in.integer());
      n.right = static_cast<int>(in.integer());
      n.positive = in.real();
    }
    for (const auto& n : t.nodes) {
      const auto size = static_cast<int>(t.nodes.size());
      if (n.feature >= static_cast<int>(m.dims) || (n.feature >= 0 && (n.left <= 0 || n.left >= size || n.right <= 0 ||
                                                                         n.right >= size)))
        fail(ErrorKind::IoError, "forest payload: malformed node");
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

double LinearSvmModel::decision(std::span<const double> x) const {
  if (x.size() != weights.size()) fail(ErrorKind::DimensionMismatch, "svm: feature length mismatch");
  return dot(weights, x) + bias;
}

LinearSvmModel fitLinearSvm(const Matrix& features, std::span<const int> labels, Rng& rng, const SvmParams& params) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (labels.size() != n) fail(ErrorKind::DimensionMismatch, "fitLinearSvm: label count mismatch");
  bool has_pos = false, has_neg = false;
  for (int y : labels) {
    if (y != 1 && y != -1) fail(ErrorKind::DegenerateInput, "fitLinearSvm: labels must be +1 or -1");
    has_pos |= y == 1;
    has_neg |= y == -1;
  }
  if (!has_pos || !has_neg) fail(ErrorKind::DegenerateInput, "fitLinearSvm: both classes must be present");
  if (params.c < 0.0) fail(ErrorKind::DegenerateInput, "fitLinearSvm: C must be non-negative");

  LinearSvmModel model;
  model.c = params.c;
  model.weights.assign(d, 0.0);
  if (params.c == 0.0) return model;

  // minimize lambda/2 |w|^2 + mean hinge, lambda = 1 / (C n); w[d] is the bias weight
  const double lambda = 1.0 / (params.c * static_cast<double>(n));
  const double radius = 1.0 / std::sqrt(lambda);
  std::vector<double> w(d + 1, 0.0), avg(d + 1, 0.0);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t t = 0;
  std::size_t averaged = 0;
  const int average_from = params.epochs / 2;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto x = features.row(i);
      const double y = labels[i];
      double margin = w[d];
      for (std::size_t k = 0; k < d; ++k) margin += w[k] * x[k];
      margin *= y;
      const double shrink = 1.0 - eta * lambda;
      for (auto& v : w) v *= shrink;
      if (margin < 1.0) {
        for (std::size_t k = 0; k < d; ++k) w[k] += eta * y * x[k];
        w[d] += eta * y;
      }
      double norm = 0.0;
      for (double v : w) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > radius) {
        const double s = radius / norm;
        for (auto& v : w) v *= s;
      }
      if (epoch >= average_from) {
        ++averaged;
        for (std::size_t k = 0; k <= d; ++k) avg[k] += (w[k] - avg[k]) / static_cast<double>(averaged);
      }
    }
  }
  std::copy_n(avg.begin(), d, model.weights.begin());
  model.bias = avg[d];
  for (double v : model.weights)
    if (!std::isfinite(v)) fail(ErrorKind::NumericFailure, "fitLinearSvm: non-finite weights");
  return model;
}

void appendSvm(std::vector<double>& out, const LinearSvmModel& model) {
  out.push_back(model.c);
  out.push_back(model.bias);
  out.push_back(static_cast<double>(model.weights.size()));
  out.insert(out.end(), model.weights.begin(), model.weights.end());
}

LinearSvmModel readSvm(PayloadReader& in) {
  LinearSvmModel m;
  m.c = in.real();
  m.bias = in.real();
  m.weights = in.reals(in.count());
  return m;
}

// ---------------------------------------------------------------------------

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

OnlineLogRegModel::OnlineLogRegModel(int classes, std::size_t dims, double learning_rate, double l2_decay)
    : classes_(classes), dims_(dims), learning_rate_(learning_rate), l2_decay_(l2_decay) {
  if (classes < 1 || classes > 4) fail(ErrorKind::DegenerateInput, "online classifier supports 1 to 4 classes");
  if (dims == 0) fail(ErrorKind::DegenerateInput, "online classifier needs a positive feature dimension");
  weights_.assign(static_cast<std::size_t>(classes) * dims, 0.0);
  biases_.assign(static_cast<std::size_t>(classes), 0.0);
}

std::vector<double> OnlineLogRegModel::probabilities(std::span<const double> x) const {
  if (x.size() != dims_) fail(ErrorKind::DimensionMismatch, "online classifier: feature length mismatch");
  std::vector<double> logits(static_cast<std::size_t>(classes_));
  for (int k = 0; k < classes_; ++k) {
    double s = biases_[k];
    const double* w = &weights_[static_cast<std::size_t>(k) * dims_];
    for (std::size_t i = 0; i < dims_; ++i) s += w[i] * x[i];
    logits[k] = s;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) z += (l = std::exp(l - mx));
  for (auto& l : logits) l /= z;
  return logits;
}

int OnlineLogRegModel::predict(std::span<const double> x) const {
  auto p = probabilities(x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

void OnlineLogRegModel::update(std::span<const double> x, int assigned_class) {
  if (assigned_class < 0 || assigned_class >= classes_)
    fail(ErrorKind::DimensionMismatch, "online classifier: class index out of range");
  const auto p = probabilities(x);
  for (int k = 0; k < classes_; ++k) {
    const double err = p[k] - (k == assigned_class ? 1.0 : 0.0);
    double* w = &weights_[static_cast<std::size_t>(k) * dims_];
    for (std::size_t i = 0; i < dims_; ++i) w[i] -= learning_rate_ * (err * x[i] + l2_decay_ * w[i]);
    biases_[k] -= learning_rate_ * err;
  }
  ++updates_;
}

}  // namespace gc
