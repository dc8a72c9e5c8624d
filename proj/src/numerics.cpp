#include "gazecontact/numerics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "gazecontact/error.hpp"

namespace gc {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return ConstMap(m.data().data(), m.rows(), m.cols()); }
MutMap view(Matrix& m) { return MutMap(m.data().data(), m.rows(), m.cols()); }

std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

void fixSign(std::span<double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (!v.empty() && v[best] < 0.0) {
    for (auto& x : v) x = -x;
  }
}

// Orthonormalizes the columns of m in place (modified Gram-Schmidt, two passes).
void orthonormalizeColumns(RowMajor& m) {
  const Eigen::Index cols = m.cols();
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < j; ++i) {
        double r = m.col(i).dot(m.col(j));
        m.col(j) -= r * m.col(i);
      }
      double norm = m.col(j).norm();
      if (norm < 1e-300) fail(ErrorKind::NumericFailure, "subspace iteration collapsed");
      m.col(j) /= norm;
    }
  }
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) fail(ErrorKind::DimensionMismatch, "matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmulTransB(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) fail(ErrorKind::DimensionMismatch, "matmulTransB: inner dimensions differ");
  Matrix out(a.rows(), b.rows());
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::DimensionMismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) noexcept {
  std::uint64_t sm = seed;
  for (auto& s : s_) s = splitmix64(sm);
}

Rng Rng::substream(std::uint64_t seed, std::uint64_t stream_id) noexcept {
  std::uint64_t a = seed;
  std::uint64_t b = stream_id ^ 0xd1b54a32d192ed03ULL;
  std::uint64_t h = splitmix64(a) ^ rotl(splitmix64(b), 17);
  return Rng(h);
}

std::uint64_t Rng::nextU64() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() noexcept {
  return static_cast<double>(nextU64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Lemire's nearly-divisionless method with rejection.
  std::uint64_t x = nextU64();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  std::uint64_t low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      x = nextU64();
      m = static_cast<__uint128_t>(x) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::array<std::uint64_t, 4> Rng::state() const noexcept { return {s_[0], s_[1], s_[2], s_[3]}; }

Rng rngStream(std::uint64_t seed) noexcept { return Rng(seed); }

// ---------------------------------------------------------------------------

SymmetricEigen jacobiEigen(const Matrix& symmetric, double tolerance, int max_sweeps) {
  const std::size_t n = symmetric.rows();
  if (n != symmetric.cols()) fail(ErrorKind::ShapeMismatch, "jacobiEigen: matrix not square");
  Matrix a = symmetric;
  Matrix v = Matrix::identity(n);

  double total = 0.0;
  for (double x : a.data()) total += x * x;
  const double scale = std::sqrt(total);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tolerance * scale || off == 0.0) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = a(p, r) = c * arp - s * arq;
          a(r, q) = a(q, r) = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(k, r) = v(r, order[k]);
  }
  return out;
}

Matrix cholesky(const Matrix& spd) {
  const std::size_t n = spd.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = spd(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) fail(ErrorKind::NumericFailure, "cholesky: matrix not positive definite");
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = spd(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

// ---------------------------------------------------------------------------

std::vector<double> PcaModel::project(std::span<const double> x) const {
  if (x.size() != mean.size()) fail(ErrorKind::DimensionMismatch, "PCA projection: input length mismatch");
  std::vector<double> centered(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) centered[i] = x[i] - mean[i];
  std::vector<double> z(components.rows());
  for (std::size_t k = 0; k < components.rows(); ++k) z[k] = dot(components.row(k), centered);
  return z;
}

Matrix PcaModel::project(const Matrix& samples) const {
  if (samples.cols() != mean.size()) fail(ErrorKind::DimensionMismatch, "PCA projection: input width mismatch");
  Matrix centered = samples;
  for (std::size_t r = 0; r < centered.rows(); ++r)
    for (std::size_t c = 0; c < centered.cols(); ++c) centered(r, c) -= mean[c];
  return matmulTransB(centered, components);
}

std::vector<double> PcaModel::reconstruct(std::span<const double> z) const {
  if (z.size() != components.rows()) fail(ErrorKind::DimensionMismatch, "PCA reconstruction: code length mismatch");
  std::vector<double> x = mean;
  for (std::size_t k = 0; k < z.size(); ++k) {
    auto comp = components.row(k);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += z[k] * comp[i];
  }
  return x;
}

PcaModel fitPca(const Matrix& samples, std::size_t target_dims, const PcaOptions& options) {
  const std::size_t n = samples.rows();
  const std::size_t d = samples.cols();
  if (n < 2) fail(ErrorKind::DegenerateInput, "fitPca: need at least 2 samples");
  if (target_dims == 0 || target_dims > std::min(n - 1, d))
    fail(ErrorKind::DegenerateInput, "fitPca: target_dims must be in [1, min(n-1, d)]");

  PcaModel model;
  model.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) model.mean[c] += samples(r, c);
  for (auto& m : model.mean) m /= static_cast<double>(n);

  Matrix centered = samples;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) centered(r, c) -= model.mean[c];
  const double denom = static_cast<double>(n - 1);
  auto x = view(centered);

  model.components = Matrix(target_dims, d);
  model.explained_variance.resize(target_dims);

  if (d <= options.direct_max_dims || target_dims + options.oversample >= d) {
    Matrix cov(d, d);
    view(cov).noalias() = x.transpose() * x / denom;
    auto eig = jacobiEigen(cov);
    for (std::size_t k = 0; k < target_dims; ++k) {
      model.explained_variance[k] = std::max(0.0, eig.values[k]);
      auto dst = model.components.row(k);
      auto src = eig.vectors.row(k);
      std::copy(src.begin(), src.end(), dst.begin());
      fixSign(dst);
    }
    return model;
  }

  // Block subspace iteration on the covariance operator, never forming d x d.
  const std::size_t block = std::min(d, target_dims + options.oversample);
  Rng rng(options.seed);
  RowMajor q(d, block);
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < q.cols(); ++j) q(i, j) = rng.normal();
  orthonormalizeColumns(q);
  for (int it = 0; it < options.subspace_iterations; ++it) {
    RowMajor xq = x * q;
    q.noalias() = x.transpose() * xq;
    orthonormalizeColumns(q);
  }
  RowMajor xq = x * q;
  Matrix small(block, block);
  view(small).noalias() = xq.transpose() * xq / denom;
  auto eig = jacobiEigen(small);
  for (std::size_t k = 0; k < target_dims; ++k) {
    model.explained_variance[k] = std::max(0.0, eig.values[k]);
    Eigen::Map<const Eigen::VectorXd> coeffs(eig.vectors.row(k).data(), static_cast<Eigen::Index>(block));
    Eigen::VectorXd comp = q * coeffs;
    comp.normalize();
    auto dst = model.components.row(k);
    for (std::size_t i = 0; i < d; ++i) dst[i] = comp(static_cast<Eigen::Index>(i));
    fixSign(dst);
  }
  return model;
}

// ---------------------------------------------------------------------------

std::vector<double> MdaModel::project(std::span<const double> x) const {
  if (x.size() != projection.cols()) fail(ErrorKind::DimensionMismatch, "MDA projection: input length mismatch");
  std::vector<double> z(projection.rows());
  for (std::size_t k = 0; k < projection.rows(); ++k) z[k] = dot(projection.row(k), x);
  return z;
}

MdaModel fitMda(const Matrix& samples, std::span<const int> labels, std::size_t target_dims) {
  const std::size_t n = samples.rows();
  const std::size_t d = samples.cols();
  if (labels.size() != n) fail(ErrorKind::DimensionMismatch, "fitMda: label count mismatch");
  if (target_dims == 0) fail(ErrorKind::DegenerateInput, "fitMda: target_dims must be positive");

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  if (members.size() < 2) fail(ErrorKind::DegenerateInput, "fitMda: need at least 2 classes");
  for (const auto& [id, idx] : members) {
    if (idx.size() < 2)
      fail(ErrorKind::DegenerateInput, "fitMda: class " + std::to_string(id) + " has fewer than 2 samples");
  }

  const std::size_t classes = members.size();
  MdaModel model;
  model.clamped = target_dims > classes - 1;
  const std::size_t out_dims = std::min(target_dims, classes - 1);

  std::vector<double> grand(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) grand[c] += samples(r, c);
  for (auto& g : grand) g /= static_cast<double>(n);

  model.class_means = Matrix(classes, d);
  Matrix within(d, d);
  Matrix between(d, d);
  std::size_t ci = 0;
  for (const auto& [id, idx] : members) {
    model.class_ids.push_back(id);
    auto mean = model.class_means.row(ci);
    for (auto i : idx)
      for (std::size_t c = 0; c < d; ++c) mean[c] += samples(i, c);
    for (auto& m : mean) m /= static_cast<double>(idx.size());

    Matrix dev(idx.size(), d);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t c = 0; c < d; ++c) dev(k, c) = samples(idx[k], c) - mean[c];
    view(within).noalias() += view(dev).transpose() * view(dev);

    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        between(a, b) += static_cast<double>(idx.size()) * (mean[a] - grand[a]) * (mean[b] - grand[b]);
    ++ci;
  }

  // Within-class covariance, regularized so the Cholesky factor exists.
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += within(i, i);
  const double eps = 1e-6 * trace / static_cast<double>(d);
  const double cov_scale = 1.0 / static_cast<double>(n - classes);
  for (auto& w : within.data()) w *= cov_scale;
  for (std::size_t i = 0; i < d; ++i) within(i, i) += eps * cov_scale + (trace == 0.0 ? 1e-12 : 0.0);
  for (auto& b : between.data()) b *= cov_scale;

  // Whitened problem: L^-1 Sb L^-T u = lambda u, w = L^-T u gives w^T Sw w = 1.
  Matrix l = cholesky(within);
  const RowMajor lm = view(l);
  const auto tri = lm.triangularView<Eigen::Lower>();
  RowMajor tmp = tri.solve(RowMajor(view(between)));
  RowMajor tmpT = tmp.transpose();
  RowMajor whitened = tri.solve(tmpT);
  Matrix sym(d, d);
  auto symv = view(sym);
  symv = 0.5 * (whitened + whitened.transpose());
  auto eig = jacobiEigen(sym);

  model.projection = Matrix(out_dims, d);
  for (std::size_t k = 0; k < out_dims; ++k) {
    Eigen::Map<const Eigen::VectorXd> u(eig.vectors.row(k).data(), static_cast<Eigen::Index>(d));
    Eigen::VectorXd w = lm.transpose().triangularView<Eigen::Upper>().solve(Eigen::VectorXd(u));
    auto dst = model.projection.row(k);
    for (std::size_t i = 0; i < d; ++i) dst[i] = w(static_cast<Eigen::Index>(i));
    fixSign(dst);
  }
  return model;
}

}  // namespace gc
