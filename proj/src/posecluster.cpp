#include "gazecontact/posecluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>

#include "gazecontact/container.hpp"
#include "gazecontact/error.hpp"

namespace gc {
namespace {

using Vec2 = std::array<double, 2>;
using Cov2 = std::array<double, 4>;

Vec2 feature(const HeadPose& p) { return {p.pitch, p.yaw}; }

Cov2 floorCovariance(Cov2 c, double floor) {
  const double a = c[0];
  const double b = 0.5 * (c[1] + c[2]);
  const double d = c[3];
  const double mid = 0.5 * (a + d);
  const double rad = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
  const double l1 = mid + rad;
  const double l2 = mid - rad;
  if (l2 >= floor) return {a, b, b, d};
  // eigenvector of l1
  double vx, vy;
  if (std::abs(b) > 1e-300) {
    vx = l1 - d;
    vy = b;
  } else if (a >= d) {
    vx = 1.0;
    vy = 0.0;
  } else {
    vx = 0.0;
    vy = 1.0;
  }
  const double norm = std::hypot(vx, vy);
  vx /= norm;
  vy /= norm;
  const double e1 = std::max(l1, floor);
  const double e2 = std::max(l2, floor);
  // V diag(e1, e2) V^T with second eigenvector (-vy, vx)
  return {e1 * vx * vx + e2 * vy * vy, (e1 - e2) * vx * vy, (e1 - e2) * vx * vy, e1 * vy * vy + e2 * vx * vx};
}

double logGauss(const Vec2& x, const Vec2& mu, const Cov2& c) {
  const double det = c[0] * c[3] - c[1] * c[2];
  const double dx = x[0] - mu[0];
  const double dy = x[1] - mu[1];
  const double maha = (c[3] * dx * dx - (c[1] + c[2]) * dx * dy + c[0] * dy * dy) / det;
  return -std::log(2.0 * M_PI) - 0.5 * std::log(det) - 0.5 * maha;
}

// log w_c + log N(x | c) for every component
void componentLogs(const GmmPoseModel& m, const Vec2& x, std::vector<double>& out) {
  out.resize(m.k());
  for (std::size_t c = 0; c < m.k(); ++c) {
    out[c] = m.weights[c] > 0.0 ? std::log(m.weights[c]) + logGauss(x, m.means[c], m.covariances[c])
                                : -std::numeric_limits<double>::infinity();
  }
}

double logSumExp(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

bool HeadPose::valid() const noexcept {
  return std::isfinite(yaw) && std::isfinite(pitch) && std::isfinite(roll) && std::abs(yaw) <= 180.0 &&
         std::abs(pitch) <= 180.0 && std::abs(roll) <= 180.0;
}

GmmPoseModel fitGmm(std::span<const HeadPose> poses, std::size_t k, Rng& rng, const GmmOptions& options,
                    GmmFitTrace* trace) {
  if (k == 0) fail(ErrorKind::DegenerateInput, "fitGmm: k must be positive");
  const std::size_t n = poses.size();
  std::vector<Vec2> xs;
  xs.reserve(n);
  std::set<std::pair<double, double>> distinct;
  for (const auto& p : poses) {
    if (!p.valid()) fail(ErrorKind::DegenerateInput, "fitGmm: non-finite or out-of-range pose");
    xs.push_back(feature(p));
    distinct.insert({p.pitch, p.yaw});
  }
  if (n < 2 * k || distinct.size() < 2 * k)
    fail(ErrorKind::DegenerateInput, "fitGmm: need at least 2k distinct poses (k=" + std::to_string(k) + ")");

  // k-means++ seeding
  GmmPoseModel model;
  model.means.push_back(xs[rng.below(n)]);
  std::vector<double> d2(n);
  while (model.means.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& m : model.means) {
        const double dx = xs[i][0] - m[0];
        const double dy = xs[i][1] - m[1];
        best = std::min(best, dx * dx + dy * dy);
      }
      d2[i] = best;
      total += best;
    }
    double target = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= d2[i];
      if (target < 0.0 && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
    model.means.push_back(xs[pick]);
  }

  Vec2 grand{0.0, 0.0};
  for (const auto& x : xs) {
    grand[0] += x[0];
    grand[1] += x[1];
  }
  grand[0] /= static_cast<double>(n);
  grand[1] /= static_cast<double>(n);
  Cov2 pooled{0, 0, 0, 0};
  for (const auto& x : xs) {
    const double dx = x[0] - grand[0];
    const double dy = x[1] - grand[1];
    pooled[0] += dx * dx;
    pooled[1] += dx * dy;
    pooled[3] += dy * dy;
  }
  for (auto& v : pooled) v /= static_cast<double>(n);
  pooled[2] = pooled[1];
  pooled = floorCovariance(pooled, options.covariance_floor);
  model.weights.assign(k, 1.0 / static_cast<double>(k));
  model.covariances.assign(k, pooled);

  GmmFitTrace local;
  GmmFitTrace& tr = trace ? *trace : local;
  tr = {};

  std::vector<double> resp(n * k);
  std::vector<double> logs;
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it <= options.max_iterations; ++it) {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      componentLogs(model, xs[i], logs);
      const double lse = logSumExp(logs);
      ll += lse;
      for (std::size_t c = 0; c < k; ++c) resp[i * k + c] = std::exp(logs[c] - lse);
    }
    ll /= static_cast<double>(n);
    if (!std::isfinite(ll)) fail(ErrorKind::NumericFailure, "fitGmm: log-likelihood is not finite");
    tr.log_likelihood.push_back(ll);
    if (it > 0 && ll - prev <= options.relative_tolerance * std::abs(prev)) {
      tr.converged = true;
      break;
    }
    if (it == options.max_iterations) break;
    prev = ll;
    tr.iterations = it + 1;

    for (std::size_t c = 0; c < k; ++c) {
      double nc = 0.0;
      Vec2 mu{0.0, 0.0};
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * k + c];
        nc += r;
        mu[0] += r * xs[i][0];
        mu[1] += r * xs[i][1];
      }
      if (nc < 1e-12) continue;  // dead component keeps its parameters
      mu[0] /= nc;
      mu[1] /= nc;
      Cov2 cov{0, 0, 0, 0};
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * k + c];
        const double dx = xs[i][0] - mu[0];
        const double dy = xs[i][1] - mu[1];
        cov[0] += r * dx * dx;
        cov[1] += r * dx * dy;
        cov[3] += r * dy * dy;
      }
      cov[0] /= nc;
      cov[1] /= nc;
      cov[3] /= nc;
      cov[2] = cov[1];
      model.weights[c] = nc / static_cast<double>(n);
      model.means[c] = mu;
      model.covariances[c] = floorCovariance(cov, options.covariance_floor);
    }
    double wsum = 0.0;
    for (double w : model.weights) wsum += w;
    for (auto& w : model.weights) w /= wsum;
  }
  return model;
}

std::vector<double> responsibilities(const GmmPoseModel& model, const HeadPose& pose) {
  std::vector<double> logs;
  componentLogs(model, feature(pose), logs);
  const double lse = logSumExp(logs);
  std::vector<double> r(model.k());
  if (!std::isfinite(lse)) {
    std::fill(r.begin(), r.end(), 1.0 / static_cast<double>(model.k()));
    return r;
  }
  double s = 0.0;
  for (std::size_t c = 0; c < r.size(); ++c) s += (r[c] = std::exp(logs[c] - lse));
  for (auto& x : r) x /= s;
  return r;
}

std::size_t hardAssign(const GmmPoseModel& model, const HeadPose& pose) {
  auto r = responsibilities(model, pose);
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

double meanLogLikelihood(const GmmPoseModel& model, std::span<const HeadPose> poses) {
  std::vector<double> logs;
  double ll = 0.0;
  for (const auto& p : poses) {
    componentLogs(model, feature(p), logs);
    ll += logSumExp(logs);
  }
  return poses.empty() ? 0.0 : ll / static_cast<double>(poses.size());
}

void appendGmm(std::vector<double>& out, const GmmPoseModel& model) {
  out.push_back(static_cast<double>(model.k()));
  for (std::size_t c = 0; c < model.k(); ++c) {
    out.push_back(model.weights[c]);
    out.insert(out.end(), model.means[c].begin(), model.means[c].end());
    out.insert(out.end(), model.covariances[c].begin(), model.covariances[c].end());
  }
}

GmmPoseModel readGmm(PayloadReader& in) {
  GmmPoseModel m;
  const auto k = in.count();
  for (std::size_t c = 0; c < k; ++c) {
    m.weights.push_back(in.real());
    auto mu = in.reals(2);
    m.means.push_back({mu[0], mu[1]});
    auto cov = in.reals(4);
    m.covariances.push_back({cov[0], cov[1], cov[2], cov[3]});
  }
  return m;
}

}  // namespace gc
