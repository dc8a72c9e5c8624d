#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gc {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix transposed() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// N-dimensional row-major array. Shape entries are positive.
template <class T>
struct BasicTensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<std::size_t> dims, T fill = T{})
      : shape(std::move(dims)), data(elementCount(shape), fill) {}

  static std::size_t elementCount(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

  std::size_t size() const noexcept { return data.size(); }
};

using Tensor = BasicTensor<double>;

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmulTransB(const Matrix& a, const Matrix& b);
double dot(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Deterministic PRNG: xoshiro256** seeded through splitmix64. Every draw is
// computed with integer arithmetic or explicitly specified floating-point
// transforms, so streams agree across compilers and standard libraries.

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  /// Independent stream derived by hashing (seed, stream_id).
  static Rng substream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

  std::uint64_t nextU64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (no cached second value).
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& values) noexcept {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  std::array<std::uint64_t, 4> state() const noexcept;

 private:
  std::uint64_t s_[4];
};

Rng rngStream(std::uint64_t seed) noexcept;

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition by cyclic Jacobi rotations.

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // row i is the eigenvector for values[i]
};

SymmetricEigen jacobiEigen(const Matrix& symmetric, double tolerance = 1e-13,
                           int max_sweeps = 100);

/// Lower-triangular Cholesky factor; throws NumericFailure if not SPD.
Matrix cholesky(const Matrix& spd);

// ---------------------------------------------------------------------------

struct PcaModel {
  std::vector<double> mean;
  Matrix components;  // d_out x d_in, orthonormal rows
  std::vector<double> explained_variance;

  std::size_t inputDims() const noexcept { return mean.size(); }
  std::size_t outputDims() const noexcept { return components.rows(); }

  std::vector<double> project(std::span<const double> x) const;
  Matrix project(const Matrix& samples) const;
  std::vector<double> reconstruct(std::span<const double> z) const;
};

struct PcaOptions {
  /// Above this input dimension (and when samples are fewer than dims plus
  /// oversampling) the top subspace is found by block subspace iteration
  /// followed by a Jacobi Rayleigh-Ritz step instead of a full Jacobi solve.
  std::size_t direct_max_dims = 400;
  int subspace_iterations = 4;
  std::size_t oversample = 20;
  std::uint64_t seed = 0x5eed;
};

PcaModel fitPca(const Matrix& samples, std::size_t target_dims, const PcaOptions& options = {});

struct MdaModel {
  Matrix projection;    // d_out x d_in
  Matrix class_means;   // classes x d_in
  std::vector<int> class_ids;
  bool clamped = false;  // requested dims exceeded classes - 1

  std::size_t outputDims() const noexcept { return projection.rows(); }
  std::vector<double> project(std::span<const double> x) const;
};

/// Multi-class discriminant analysis. Requested dimensions above
/// (classes - 1) are clamped and the model's `clamped` flag is set.
MdaModel fitMda(const Matrix& samples, std::span<const int> labels, std::size_t target_dims);

}  // namespace gc
