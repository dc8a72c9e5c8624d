#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gazecontact/container.hpp"
#include "gazecontact/imaging.hpp"
#include "gazecontact/numerics.hpp"

namespace gc {

/// Heap storage on 64-byte boundaries. Vectorized kernels split work by
/// address alignment, so fixing it keeps float results identical across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

struct PicnnConfig {
  int input_size = 64;
  double channel_scale = 0.25;  // applied to 96, 256, 384, 384, 256
  int fc_width = 128;
  bool pose_branch = true;
  double pose_loss_weight = 0.1;
  int batch_size = 128;
  std::vector<std::pair<int, double>> lr_schedule{{2500, 0.005}, {5000, 0.0005}};  // (until iteration, lr)
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double init_std = 0.01;  // <= 0 selects He scaling sqrt(2 / fan_in)

  static PicnnConfig fullScale();
  static PicnnConfig desk();

  /// Learning rate at a 1-based iteration; the last entry's rate past the end.
  double learningRate(int iteration) const;
  int iterations() const;
  std::array<int, 5> channels() const;
  /// Proportionally rescales the schedule breakpoints to end at `total`.
  void rescaleSchedule(int total);
  void validate() const;
};

enum class LayerKind { Conv, FullyConnected };
enum class Branch { Trunk, Eye, Pose };

struct ParamBlock {
  std::string name;  // e.g. "conv1.w", "fc8p.b"
  LayerKind kind;
  Branch branch;
  bool bias = false;
  std::size_t offset = 0;
  std::size_t size = 0;
  int fan_in = 0;
};

struct LossTerms {
  double total = 0.0;
  double ce = 0.0;
  double pose = 0.0;  // masked mean squared error, before the lambda weight
};

/// L = mean_i CE_i + lambda * sum_i mask_i |pose_i - target_i|^2 / max(1, sum_i mask_i).
/// Writes dL/dlogits and dL/dpose when the output spans are non-empty.
LossTerms multitaskLoss(std::span<const double> logits, std::span<const double> pose, std::span<const int> labels,
                        std::span<const double> pose_targets, std::span<const int> masks, double lambda,
                        std::span<double> dlogits = {}, std::span<double> dpose = {});

template <class T>
struct PicnnBatch {
  std::span<const T> inputs;  // n x 3 x S x S, already normalized
  std::span<const int> labels;
  std::span<const double> pose_targets;  // n x 3
  std::span<const int> masks;
  std::size_t size = 0;
};

struct PicnnOutputs {
  std::vector<double> probabilities;  // n x 2 softmax
  std::vector<double> pose;           // n x 3, zeros when the branch is absent
};

struct ActivationMaps {
  struct Map {
    int channels = 0, height = 0, width = 0;
    std::vector<double> values;
  };
  std::array<Map, 3> conv;  // post-ReLU conv1..conv3
};

/// Trunk of five conv stages and fc6, then an eye-contact branch
/// (fc7e, fc8e -> 2 logits) and an optional pose branch (fc7p, fc8p -> 3).
/// Parameters live in one flat buffer described by blocks().
template <class T>
class PicnnNet {
 public:
  explicit PicnnNet(const PicnnConfig& config);

  const PicnnConfig& config() const noexcept { return config_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  AlignedVector<T>& params() noexcept { return params_; }
  const AlignedVector<T>& params() const noexcept { return params_; }
  const ParamBlock& block(const std::string& name) const;
  std::size_t inputLength() const noexcept;

  /// Gaussian weights, zero biases. Each layer draws from its own substream
  /// of `seed`, so networks with and without the pose branch share the
  /// trunk and eye-branch initialization.
  void initialize(std::uint64_t seed);

  PicnnOutputs forward(std::span<const T> inputs, std::size_t n) const;

  /// Loss over the batch; accumulates the exact gradient into `grad` (resized
  /// and zeroed) when non-null. Samples are split into a fixed number of
  /// chunks reduced in order, so results do not depend on the thread count.
  LossTerms lossAndGradient(const PicnnBatch<T>& batch, std::vector<T>* grad) const;

  /// Hash of every ReLU on/off state and pooling argmax for the inputs.
  std::uint64_t activationSignature(std::span<const T> inputs, std::size_t n) const;

  ActivationMaps activations(std::span<const T> input) const;

  struct Geometry {
    std::array<int, 5> channels{};
    int s1 = 0, p1 = 0, p2 = 0, p5 = 0;  // conv1 out, pool1 out, pool2 out, pool5 out
    std::size_t flat = 0;
  };
  const Geometry& geometry() const noexcept { return geo_; }

  struct Tape;

 private:
  void forwardSample(const T* input, Tape& tape, std::uint64_t* signature) const;
  void backwardSample(Tape& tape, const double* dlogits, const double* dpose, bool pose_active, T* grad) const;

  PicnnConfig config_;
  Geometry geo_;
  std::vector<ParamBlock> blocks_;
  AlignedVector<T> params_;
  std::size_t conv_w_[5]{}, conv_b_[5]{};
  std::size_t fc_w_[5]{}, fc_b_[5]{};  // fc6, fc7e, fc8e, fc7p, fc8p
};

extern template class PicnnNet<float>;
extern template class PicnnNet<double>;

using PicnnModel = PicnnNet<float>;

/// Converts a patch to network input: bilinear resize to S x S, three
/// channels, p / 255 - 0.5, channel-major.
template <class T>
void patchToInput(const FacePatch& patch, int size, T* out);

// ---------------------------------------------------------------------------
// Layer primitives, exposed for tests.

/// 3x3 stride-2 max pooling without padding. `argmax` receives the flat
/// input index chosen for each output; ties resolve to the first maximum.
template <class T>
void maxPoolForward(const T* in, int channels, int h, int w, T* out, std::int32_t* argmax);
template <class T>
void maxPoolBackward(const T* dout, const std::int32_t* argmax, std::size_t out_size, T* din);
inline int pooledSize(int n) { return (n - 3) / 2 + 1; }

// ---------------------------------------------------------------------------

struct TrainSample {
  FacePatch patch;
  int label = 0;
  std::array<double, 3> pose{};  // yaw, pitch, roll in degrees / 90
  int pose_mask = 0;
};

struct TrainLogRow {
  int iteration = 0;
  double lr = 0.0;
  LossTerms loss;
};

struct PicnnTrainResult {
  PicnnModel model;
  std::vector<TrainLogRow> log;
};

struct TrainOptions {
  /// Stop after this many iterations if positive (the schedule is not rescaled).
  int max_iterations = 0;
  std::function<void(const TrainLogRow&)> progress;
};

/// Momentum SGD with weight decay on weights (not biases). Minibatches are
/// consecutive slices of a reshuffled sample order.
PicnnTrainResult trainPicnn(std::span<const TrainSample> data, const PicnnConfig& config, Rng& rng,
                            const TrainOptions& options = {});

std::string trainLogCsv(std::span<const TrainLogRow> log);

/// P(eye contact) per patch.
std::vector<double> predictPicnn(const PicnnModel& model, std::span<const FacePatch> patches);

void savePicnn(ModelContainer& out, const PicnnModel& model);
PicnnModel loadPicnn(const ModelContainer& in);

/// conv1 filters tiled into filters.ppm and conv1..conv3 activation maps for
/// `patch` tiled into actN.pgm. Returns the written paths.
std::vector<std::filesystem::path> dumpFiltersAndActivations(const PicnnModel& model, const FacePatch& patch,
                                                             const std::filesystem::path& out_dir);

/// Grid of conv1 filter tiles (RGB), one tile per output channel.
FacePatch conv1FilterGrid(const PicnnModel& model, int* tiles = nullptr);

}  // namespace gc
