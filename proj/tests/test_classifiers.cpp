#include <cmath>

#include "doctest.h"
#include "gazecontact/container.hpp"
#include "gazecontact/error.hpp"
#include "gazecontact/classifiers.hpp"

using namespace gc;

namespace {

struct Data {
  Matrix x;
  std::vector<int> y;
};

Data gaussianPair(Rng& rng, int n, std::size_t dims, double gap) {
  Data d{Matrix(static_cast<std::size_t>(n), dims), {}};
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    d.y.push_back(label);
    for (std::size_t j = 0; j < dims; ++j)
      d.x(static_cast<std::size_t>(i), j) = rng.normal() + (j == 0 ? (label ? gap : -gap) : 0.0);
  }
  return d;
}

}  // namespace

TEST_CASE("forest separates one-dimensional data exactly") {
  Rng data(1);
  Data d{Matrix(60, 1), {}};
  for (std::size_t i = 0; i < 60; ++i) {
    const bool pos = i % 3 == 0;
    d.x(i, 0) = pos ? data.uniform(0.1, 5) : data.uniform(-5, -0.1);
    d.y.push_back(pos);
  }
  Rng rng(2);
  const auto f = fitForest(d.x, d.y, rng);
  CHECK(f.n_trees == 100);
  CHECK(f.trees.size() == 100);
  for (std::size_t i = 0; i < 60; ++i) CHECK((predictForest(f, d.x.row(i)) > 0.5) == (d.y[i] == 1));
}

TEST_CASE("constant feature gives the class prior") {
  Matrix x(40, 1, 3.0);
  std::vector<int> y(40, 0);
  for (int i = 0; i < 10; ++i) y[static_cast<std::size_t>(i)] = 1;
  Rng rng(3);
  const auto f = fitForest(x, y, rng, {300, 10});
  // each tree is a single bootstrap leaf; its mean estimates the prior
  for (const auto& t : f.trees) CHECK(t.nodes.size() == 1);
  const std::vector<double> q = {3.0};
  CHECK(predictForest(f, q) == doctest::Approx(0.25).epsilon(0.15));
}

TEST_CASE("all trees voting positive gives probability one") {
  ForestModel f;
  f.dims = 2;
  f.n_trees = 5;
  for (int t = 0; t < 5; ++t) {
    DecisionTree tree;
    tree.nodes = {{0, 0.0, 1, 2, 0.0}, {-1, 0, -1, -1, 1.0}, {-1, 0, -1, -1, 1.0}};
    f.trees.push_back(tree);
  }
  const std::vector<double> a = {-1, 0}, b = {1, 0};
  CHECK(predictForest(f, a) == 1.0);
  CHECK(predictForest(f, b) == 1.0);
}

TEST_CASE("forest on pure label noise stays near one half") {
  Rng data(4);
  Data d{Matrix(400, 5), {}};
  for (std::size_t i = 0; i < 400; ++i) {
    for (std::size_t j = 0; j < 5; ++j) d.x(i, j) = data.normal();
    d.y.push_back(data.bernoulli(0.5));
  }
  Rng rng(5);
  const auto f = fitForest(d.x, d.y, rng);
  double mean = 0;
  std::vector<double> q(5);
  for (int i = 0; i < 1000; ++i) {
    for (auto& v : q) v = data.normal();
    const double p = predictForest(f, q);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    mean += p;
  }
  mean /= 1000;
  CHECK(std::abs(mean - 0.5) < 0.1);
}

TEST_CASE("forest is invariant to monotone feature transforms") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng data(10 + seed);
    auto d = gaussianPair(data, 80, 3, 0.7);
    Matrix t = d.x;
    for (std::size_t i = 0; i < t.rows(); ++i) {
      t(i, 0) = std::exp(t(i, 0));
      t(i, 1) = 3 * t(i, 1) - 7;
      t(i, 2) = std::pow(t(i, 2), 3) + t(i, 2);
    }
    Rng a(seed), b(seed);
    const auto fa = fitForest(d.x, d.y, a, {20, 10});
    const auto fb = fitForest(t, d.y, b, {20, 10});
    for (int i = 0; i < 50; ++i) {
      const std::vector<double> q = {data.normal(), data.normal(), data.normal()};
      const std::vector<double> qt = {std::exp(q[0]), 3 * q[1] - 7, std::pow(q[2], 3) + q[2]};
      CHECK(predictForest(fa, q) == predictForest(fb, qt));
    }
  }
}

TEST_CASE("forest preconditions and serialization") {
  Rng rng(6);
  Matrix x(4, 2, 1.0);
  const std::vector<int> one_class = {1, 1, 1, 1};
  CHECK_THROWS_AS(fitForest(x, one_class, rng), Error);
  const std::vector<int> short_labels = {0, 1};
  CHECK_THROWS_AS(fitForest(x, short_labels, rng), Error);

  Rng data(7);
  const auto d = gaussianPair(data, 50, 4, 1.0);
  const auto f = fitForest(d.x, d.y, rng, {10, 10});
  const std::vector<double> wrong(3, 0.0);
  CHECK_THROWS_AS(predictForest(f, wrong), Error);
  std::vector<double> payload;
  appendForest(payload, f);
  PayloadReader in(payload);
  const auto back = readForest(in);
  CHECK(in.done());
  for (std::size_t i = 0; i < d.x.rows(); ++i) CHECK(predictForest(back, d.x.row(i)) == predictForest(f, d.x.row(i)));
}

TEST_CASE("svm separates a two-point problem") {
  Matrix x(2, 1);
  x(0, 0) = -1;
  x(1, 0) = 1;
  const std::vector<int> y = {-1, 1};
  Rng rng(8);
  const auto m = fitLinearSvm(x, y, rng);
  CHECK(m.decision(x.row(0)) < 0);
  CHECK(m.decision(x.row(1)) > 0);
}

TEST_CASE("svm decision signs survive scaling and duplication") {
  Rng data(9);
  auto d = gaussianPair(data, 60, 3, 6.0);
  std::vector<int> y;
  for (int v : d.y) y.push_back(v ? 1 : -1);
  Rng r0(10);
  const auto base = fitLinearSvm(d.x, y, r0);

  Matrix scaled = d.x;
  for (auto& v : scaled.data()) v *= 10;
  Rng r1(10);
  const auto ms = fitLinearSvm(scaled, y, r1);

  Matrix dup(d.x.rows() * 2, d.x.cols());
  std::vector<int> ydup;
  for (std::size_t i = 0; i < dup.rows(); ++i) {
    for (std::size_t j = 0; j < dup.cols(); ++j) dup(i, j) = d.x(i % d.x.rows(), j);
    ydup.push_back(y[i % y.size()]);
  }
  Rng r2(10);
  const auto md = fitLinearSvm(dup, ydup, r2);
  int agree_scaled = 0, agree_dup = 0;
  for (std::size_t i = 0; i < d.x.rows(); ++i) {
    const bool s = base.decision(d.x.row(i)) > 0;
    agree_scaled += s == (ms.decision(scaled.row(i)) > 0);
    agree_dup += s == (md.decision(d.x.row(i)) > 0);
  }
  CHECK(agree_scaled == 60);
  CHECK(agree_dup == 60);
}

TEST_CASE("svm with zero C has zero weights") {
  Rng data(11);
  auto d = gaussianPair(data, 30, 4, 1.0);
  std::vector<int> y;
  for (int v : d.y) y.push_back(v ? 1 : -1);
  Rng rng(12);
  const auto m = fitLinearSvm(d.x, y, rng, {0.0, 200});
  for (double w : m.weights) CHECK(w == 0.0);
  CHECK(m.bias == 0.0);
  std::vector<double> payload;
  appendSvm(payload, m);
  PayloadReader in(payload);
  CHECK(readSvm(in).weights == m.weights);
}

TEST_CASE("online logistic regression on a fixed pair increases its probability") {
  OnlineLogRegModel m(3, 4);
  const std::vector<double> x = {0.5, -1, 2, 0.1};
  double prev = m.probabilities(x)[0];
  CHECK(prev == doctest::Approx(1.0 / 3));
  for (int i = 0; i < 50; ++i) {
    m.update(x, 0);
    const double p = m.probabilities(x)[0];
    CHECK(p > prev);
    prev = p;
  }
  CHECK(m.updates() == 50);
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  OnlineLogRegModel m(2, 3, 0.0);
  const auto w = m.weights();
  const auto b = m.biases();
  const std::vector<double> x = {1, 2, 3};
  for (int i = 0; i < 10; ++i) m.update(x, 1);
  CHECK(m.weights() == w);
  CHECK(m.biases() == b);
}

TEST_CASE("streamed separable identities are learned") {
  Rng data(13);
  OnlineLogRegModel m(2, 8);
  std::vector<std::vector<double>> centers(2, std::vector<double>(8));
  for (auto& c : centers)
    for (auto& v : c) v = data.normal();
  int correct = 0, tail = 0;
  for (int t = 0; t < 2000; ++t) {
    const int c = static_cast<int>(data.below(2));
    std::vector<double> x = centers[static_cast<std::size_t>(c)];
    for (auto& v : x) v += 0.3 * data.normal();
    if (t >= 1500) {
      correct += m.predict(x) == c;
      ++tail;
    }
    m.update(x, c);
  }
  CHECK(double(correct) / tail >= 0.95);
}

TEST_CASE("identical streams give bit-identical online models") {
  auto run = [] {
    Rng data(14);
    OnlineLogRegModel m(4, 6);
    for (int t = 0; t < 300; ++t) {
      std::vector<double> x(6);
      for (auto& v : x) v = data.normal();
      m.update(x, static_cast<int>(data.below(4)));
    }
    return m;
  };
  const auto a = run(), b = run();
  CHECK(a.weights() == b.weights());
  CHECK(a.biases() == b.biases());
  OnlineLogRegModel m(2, 3);
  const std::vector<double> x = {1, 2, 3};
  CHECK_THROWS_AS(m.update(x, 2), Error);
}

TEST_CASE("sigmoid is stable at the extremes") {
  CHECK(sigmoid(0) == 0.5);
  CHECK(sigmoid(800) == 1.0);
  CHECK(sigmoid(-800) == doctest::Approx(0.0));
  CHECK(std::isfinite(sigmoid(-800)));
}
