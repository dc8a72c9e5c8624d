#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gazecontact/container.hpp"
#include "gazecontact/error.hpp"
#include "gazecontact/posecluster.hpp"

using namespace gc;

namespace {

// Bivariate normal density, written out directly.
double density(const std::array<double, 2>& mean, const std::array<double, 4>& cov, double pitch, double yaw) {
  const double det = cov[0] * cov[3] - cov[1] * cov[2];
  const double dx = pitch - mean[0], dy = yaw - mean[1];
  const double q = (cov[3] * dx * dx - (cov[1] + cov[2]) * dx * dy + cov[0] * dy * dy) / det;
  return std::exp(-0.5 * q) / (2 * M_PI * std::sqrt(det));
}

std::vector<HeadPose> blobs(Rng& rng, const std::vector<std::array<double, 2>>& centers, int each, double sd) {
  std::vector<HeadPose> out;
  for (const auto& c : centers)
    for (int i = 0; i < each; ++i) out.push_back({rng.normal(c[1], sd), rng.normal(c[0], sd), rng.uniform(-20, 20)});
  return out;
}

GmmPoseModel symmetricThree() {
  GmmPoseModel m;
  m.weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  for (int c = 0; c < 3; ++c) {
    const double a = c * 2 * M_PI / 3;
    m.means.push_back({10 * std::cos(a), 10 * std::sin(a)});
    m.covariances.push_back({4, 0, 0, 4});
  }
  return m;
}

}  // namespace

TEST_CASE("three separated blobs are recovered") {
  Rng data(1);
  const std::vector<std::array<double, 2>> centers = {{-20, -30}, {0, 30}, {20, 0}};
  const auto poses = blobs(data, centers, 300, 3.0);
  Rng rng(2);
  const auto m = fitGmm(poses, 3, rng);
  REQUIRE(m.k() == 3);
  for (const auto& c : centers) {
    double best = 1e9;
    for (const auto& mu : m.means) best = std::min(best, std::hypot(mu[0] - c[0], mu[1] - c[1]));
    CHECK(best < 1.0);
  }
  CHECK(std::accumulate(m.weights.begin(), m.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  for (double w : m.weights) CHECK(w == doctest::Approx(1.0 / 3).epsilon(0.05));
}

TEST_CASE("one component is the sample mean and covariance") {
  Rng data(3);
  std::vector<HeadPose> poses;
  for (int i = 0; i < 200; ++i) {
    const double a = data.normal(), b = data.normal();
    poses.push_back({5 + 8 * a, -3 + 2 * a + 4 * b, 0});
  }
  double mp = 0, my = 0;
  for (const auto& p : poses) mp += p.pitch, my += p.yaw;
  mp /= 200, my /= 200;
  double spp = 0, spy = 0, syy = 0;
  for (const auto& p : poses) {
    spp += (p.pitch - mp) * (p.pitch - mp);
    spy += (p.pitch - mp) * (p.yaw - my);
    syy += (p.yaw - my) * (p.yaw - my);
  }
  Rng rng(4);
  const auto m = fitGmm(poses, 1, rng);
  CHECK(m.weights[0] == doctest::Approx(1.0));
  CHECK(m.means[0][0] == doctest::Approx(mp));
  CHECK(m.means[0][1] == doctest::Approx(my));
  CHECK(m.covariances[0][0] == doctest::Approx(spp / 200));
  CHECK(m.covariances[0][1] == doctest::Approx(spy / 200));
  CHECK(m.covariances[0][2] == doctest::Approx(spy / 200));
  CHECK(m.covariances[0][3] == doctest::Approx(syy / 200));
  CHECK(responsibilities(m, poses[7]) == std::vector<double>{1.0});
}

TEST_CASE("too few distinct poses is degenerate") {
  Rng rng(5);
  const std::vector<HeadPose> same(50, HeadPose{3, 4, 5});
  CHECK_THROWS_AS(fitGmm(same, 2, rng), Error);
  const std::vector<HeadPose> three = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  CHECK_THROWS_AS(fitGmm(three, 2, rng), Error);
  CHECK_THROWS_AS(fitGmm(three, 0, rng), Error);
  const std::vector<HeadPose> bad = {{0, 0, 0}, {1, 0, 0}, {NAN, 0, 0}, {3, 1, 0}};
  CHECK_THROWS_AS(fitGmm(bad, 1, rng), Error);
}

TEST_CASE("roll does not influence the fit") {
  Rng data(6);
  auto poses = blobs(data, {{-15, -15}, {15, 15}}, 100, 3.0);
  Rng a(7), b(7);
  const auto m1 = fitGmm(poses, 2, a);
  for (auto& p : poses) p.roll = -p.roll * 0.5 + 3;
  const auto m2 = fitGmm(poses, 2, b);
  CHECK(m1.means == m2.means);
  CHECK(m1.covariances == m2.covariances);
}

TEST_CASE("symmetric components share a symmetric point equally") {
  const auto m = symmetricThree();
  const auto r = responsibilities(m, HeadPose{0, 0, 0});
  for (double v : r) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("a point at a far component mean belongs to it") {
  const auto m = symmetricThree();
  for (std::size_t c = 0; c < 3; ++c) {
    const HeadPose at{m.means[c][1], m.means[c][0], 0};
    const auto r = responsibilities(m, at);
    double total = 0;
    for (std::size_t j = 0; j < 3; ++j) total += m.weights[j] * density(m.means[j], m.covariances[j], at.pitch, at.yaw);
    CHECK(r[c] > 0.99);
    CHECK(r[c] == doctest::Approx(m.weights[c] * density(m.means[c], m.covariances[c], at.pitch, at.yaw) / total));
    CHECK(hardAssign(m, at) == c);
  }
}

TEST_CASE("EM log-likelihood never decreases and responsibilities stay normalized") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng data(1000 + seed);
    const int n = 40 + static_cast<int>(data.below(200));
    std::vector<HeadPose> poses;
    for (int i = 0; i < n; ++i) poses.push_back({data.uniform(-60, 60), data.uniform(-40, 40), 0});
    Rng rng(seed);
    GmmFitTrace trace;
    const std::size_t k = 1 + seed % 4;
    const auto m = fitGmm(poses, k, rng, {}, &trace);
    REQUIRE(trace.iterations + 1 == static_cast<int>(trace.log_likelihood.size()));
    for (std::size_t i = 1; i < trace.log_likelihood.size(); ++i)
      REQUIRE(trace.log_likelihood[i] >= trace.log_likelihood[i - 1] - 1e-12 * std::abs(trace.log_likelihood[i - 1]));
    CHECK(meanLogLikelihood(m, poses) == doctest::Approx(trace.log_likelihood.back()).epsilon(1e-6));
    for (const auto& p : poses) {
      const auto r = responsibilities(m, p);
      double s = 0;
      for (double v : r) {
        REQUIRE(v >= 0.0);
        s += v;
      }
      REQUIRE(std::abs(s - 1.0) < 1e-9);
    }
    for (const auto& c : m.covariances) {
      const double tr = c[0] + c[3], det = c[0] * c[3] - c[1] * c[2];
      const double lo = 0.5 * tr - std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
      REQUIRE(lo >= 1e-6 * (1 - 1e-9));
    }
  }
}

TEST_CASE("responsibilities survive extreme distances") {
  const auto m = symmetricThree();
  const auto r = responsibilities(m, HeadPose{170, 170, 0});
  double s = 0;
  for (double v : r) {
    CHECK(std::isfinite(v));
    s += v;
  }
  CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("fit is deterministic and serializes exactly") {
  Rng data(8);
  const auto poses = blobs(data, {{-10, 0}, {10, 20}, {30, -20}}, 80, 4.0);
  Rng a(9), b(9);
  const auto m1 = fitGmm(poses, 3, a);
  const auto m2 = fitGmm(poses, 3, b);
  CHECK(m1.means == m2.means);
  CHECK(m1.weights == m2.weights);
  std::vector<double> payload;
  appendGmm(payload, m1);
  PayloadReader in(payload);
  const auto back = readGmm(in);
  CHECK(in.done());
  CHECK(back.weights == m1.weights);
  CHECK(back.means == m1.means);
  CHECK(back.covariances == m1.covariances);
}
