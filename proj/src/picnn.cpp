#include "gazecontact/picnn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"
#include "gazecontact/parallel.hpp"

namespace gc {

// ---------------------------------------------------------------------------
// Config

PicnnConfig PicnnConfig::fullScale() {
  PicnnConfig c;
  c.input_size = 227;
  c.channel_scale = 1.0;
  c.fc_width = 4096;
  c.batch_size = 128;
  c.lr_schedule = {{100000, 0.005}, {200000, 0.0005}};
  c.init_std = 0.01;
  return c;
}

PicnnConfig PicnnConfig::desk() {
  PicnnConfig c;
  c.batch_size = 32;
  c.init_std = 0.0;
  return c;
}

double PicnnConfig::learningRate(int iteration) const {
  for (const auto& [until, lr] : lr_schedule)
    if (iteration <= until) return lr;
  return lr_schedule.empty() ? 0.0 : lr_schedule.back().second;
}

int PicnnConfig::iterations() const { return lr_schedule.empty() ? 0 : lr_schedule.back().first; }

std::array<int, 5> PicnnConfig::channels() const {
  const int base[5] = {96, 256, 384, 384, 256};
  std::array<int, 5> out{};
  for (int i = 0; i < 5; ++i) out[i] = std::max(1, static_cast<int>(std::lround(base[i] * channel_scale)));
  return out;
}

void PicnnConfig::rescaleSchedule(int total) {
  if (total < 1) fail(ErrorKind::DegenerateInput, "picnn: iteration count must be positive");
  const double old_total = iterations();
  if (old_total <= 0) fail(ErrorKind::DegenerateInput, "picnn: empty learning-rate schedule");
  for (auto& [until, lr] : lr_schedule)
    until = std::max(1, static_cast<int>(std::lround(until * total / old_total)));
  lr_schedule.back().first = total;
}

void PicnnConfig::validate() const {
  if (!(channel_scale > 0.0 && channel_scale <= 1.0)) fail(ErrorKind::DegenerateInput, "picnn: channel_scale must lie in (0, 1]");
  if (fc_width < 1) fail(ErrorKind::DegenerateInput, "picnn: fc_width must be positive");
  if (batch_size < 1) fail(ErrorKind::DegenerateInput, "picnn: batch_size must be positive");
  if (pose_loss_weight < 0.0) fail(ErrorKind::DegenerateInput, "picnn: pose_loss_weight must be non-negative");
  if (lr_schedule.empty()) fail(ErrorKind::DegenerateInput, "picnn: empty learning-rate schedule");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (lr_schedule[i].second < 0.0 || lr_schedule[i].first < 1 ||
        (i > 0 && lr_schedule[i].first <= lr_schedule[i - 1].first))
      fail(ErrorKind::DegenerateInput, "picnn: schedule breakpoints must increase and rates be non-negative");
  }
  if (input_size < 7) fail(ErrorKind::DegenerateInput, "picnn: input_size must be at least 7");
  const int s1 = (input_size - 7) / 2 + 1;
  if (s1 < 3 || pooledSize(s1) < 3 || pooledSize(pooledSize(s1)) < 3)
    fail(ErrorKind::DegenerateInput, "picnn: input_size " + std::to_string(input_size) + " too small for the layer stack");
}

// ---------------------------------------------------------------------------
// Loss

namespace {

struct SampleLoss {
  double ce = 0.0, pose = 0.0;
};

// inv_n = 1 / batch size, pose_scale = 1 / max(1, sum of masks)
SampleLoss sampleLoss(const double* z, const double* pose, int label, const double* target, int mask, double inv_n,
                      double pose_scale, double lambda, double* dz, double* dpose) {
  SampleLoss out;
  const double m = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  const double lse = m + std::log(e0 + e1);
  out.ce = lse - z[label];
  if (dz) {
    const double p0 = e0 / (e0 + e1);
    dz[0] = (p0 - (label == 0 ? 1.0 : 0.0)) * inv_n;
    dz[1] = ((1.0 - p0) - (label == 1 ? 1.0 : 0.0)) * inv_n;
  }
  for (int j = 0; j < 3; ++j) {
    const double d = mask ? pose[j] - target[j] : 0.0;
    out.pose += d * d;
    if (dpose) dpose[j] = lambda * 2.0 * d * pose_scale;
  }
  return out;
}

double poseScale(std::span<const int> masks) {
  double s = 0.0;
  for (int m : masks) s += m != 0;
  return 1.0 / std::max(1.0, s);
}

std::uint64_t fnv(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t nameHash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

LossTerms multitaskLoss(std::span<const double> logits, std::span<const double> pose, std::span<const int> labels,
                        std::span<const double> pose_targets, std::span<const int> masks, double lambda,
                        std::span<double> dlogits, std::span<double> dpose) {
  const std::size_t n = labels.size();
  if (logits.size() != 2 * n || pose.size() != 3 * n || pose_targets.size() != 3 * n || masks.size() != n ||
      (!dlogits.empty() && dlogits.size() != 2 * n) || (!dpose.empty() && dpose.size() != 3 * n))
    fail(ErrorKind::ShapeMismatch, "multitaskLoss: inconsistent batch shapes");
  if (n == 0) return {};
  const double inv_n = 1.0 / static_cast<double>(n);
  const double ps = poseScale(masks);
  double ce = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = sampleLoss(&logits[2 * i], &pose[3 * i], labels[i], &pose_targets[3 * i], masks[i], inv_n, ps, lambda,
                              dlogits.empty() ? nullptr : &dlogits[2 * i], dpose.empty() ? nullptr : &dpose[3 * i]);
    ce += s.ce;
    pe += s.pose;
  }
  LossTerms t;
  t.ce = ce * inv_n;
  t.pose = pe * ps;
  t.total = t.ce + lambda * t.pose;
  return t;
}

// ---------------------------------------------------------------------------
// Primitives

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
void maxPoolForward(const T* in, int channels, int h, int w, T* out, std::int32_t* argmax) {
  const int ho = pooledSize(h), wo = pooledSize(w);
  for (int c = 0; c < channels; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        int best = (oy * 2) * w + ox * 2;
        for (int dy = 0; dy < 3; ++dy)
          for (int dx = 0; dx < 3; ++dx) {
            const int idx = (oy * 2 + dy) * w + ox * 2 + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(c) * ho + oy) * wo + ox;
        out[o] = plane[best];
        argmax[o] = static_cast<std::int32_t>(static_cast<std::size_t>(c) * h * w + best);
      }
    }
  }
}

template <class T>
void maxPoolBackward(const T* dout, const std::int32_t* argmax, std::size_t out_size, T* din) {
  for (std::size_t o = 0; o < out_size; ++o) din[argmax[o]] += dout[o];
}

template void maxPoolForward<float>(const float*, int, int, int, float*, std::int32_t*);
template void maxPoolForward<double>(const double*, int, int, int, double*, std::int32_t*);
template void maxPoolBackward<float>(const float*, const std::int32_t*, std::size_t, float*);
template void maxPoolBackward<double>(const double*, const std::int32_t*, std::size_t, double*);

namespace {

struct ConvShape {
  int cin, h, k, stride, pad, cout, ho;
  std::size_t K() const { return static_cast<std::size_t>(cin) * k * k; }
  std::size_t P() const { return static_cast<std::size_t>(ho) * ho; }
};

// Output columns ox in [lo, hi) read inside the row for kernel offset kx.
inline void validRange(const ConvShape& s, int kx, int& lo, int& hi) {
  lo = 0;
  while (lo < s.ho && lo * s.stride - s.pad + kx < 0) ++lo;
  hi = s.ho;
  while (hi > lo && (hi - 1) * s.stride - s.pad + kx >= s.h) --hi;
}

template <class T>
void im2col(const T* in, const ConvShape& s, T* col) {
  const std::size_t P = s.P();
  for (int c = 0; c < s.cin; ++c)
    for (int ky = 0; ky < s.k; ++ky)
      for (int kx = 0; kx < s.k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * s.k + ky) * s.k + kx) * P;
        int lo, hi;
        validRange(s, kx, lo, hi);
        for (int oy = 0; oy < s.ho; ++oy) {
          T* dst = row + static_cast<std::size_t>(oy) * s.ho;
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.h) {
            std::fill(dst, dst + s.ho, T(0));
            continue;
          }
          const T* src = in + (static_cast<std::size_t>(c) * s.h + iy) * s.h - s.pad + kx;
          std::fill(dst, dst + lo, T(0));
          if (s.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s.stride];
          }
          std::fill(dst + hi, dst + s.ho, T(0));
        }
      }
}

template <class T>
void col2im(const T* col, const ConvShape& s, T* din) {
  const std::size_t P = s.P();
  for (int c = 0; c < s.cin; ++c)
    for (int ky = 0; ky < s.k; ++ky)
      for (int kx = 0; kx < s.k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * s.k + ky) * s.k + kx) * P;
        int lo, hi;
        validRange(s, kx, lo, hi);
        for (int oy = 0; oy < s.ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * s.ho;
          T* dst = din + (static_cast<std::size_t>(c) * s.h + iy) * s.h - s.pad + kx;
          for (int ox = lo; ox < hi; ++ox) dst[ox * s.stride] += src[ox];
        }
      }
}

// conv + bias + ReLU
template <class T>
void convForward(const T* in, const ConvShape& s, const T* w, const T* b, T* out, AlignedVector<T>& col) {
  col.resize(s.K() * s.P());
  im2col(in, s, col.data());
  Eigen::Map<RowMat<T>> o(out, s.cout, static_cast<Eigen::Index>(s.P()));
  o.noalias() = Eigen::Map<const RowMat<T>>(w, s.cout, static_cast<Eigen::Index>(s.K())) *
                Eigen::Map<const RowMat<T>>(col.data(), static_cast<Eigen::Index>(s.K()), static_cast<Eigen::Index>(s.P()));
  for (int c = 0; c < s.cout; ++c) {
    T* r = out + static_cast<std::size_t>(c) * s.P();
    for (std::size_t p = 0; p < s.P(); ++p) r[p] = std::max(T(0), r[p] + b[c]);
  }
}

// dout is the gradient w.r.t. the post-ReLU output and is masked in place.
template <class T>
void convBackward(const T* in, const ConvShape& s, const T* w, const T* out, T* dout, T* gw, T* gb, T* din,
                  AlignedVector<T>& col) {
  const std::size_t P = s.P(), K = s.K();
  for (std::size_t i = 0; i < static_cast<std::size_t>(s.cout) * P; ++i)
    if (!(out[i] > T(0))) dout[i] = T(0);
  col.resize(K * P);
  im2col(in, s, col.data());
  Eigen::Map<const RowMat<T>> d(dout, s.cout, static_cast<Eigen::Index>(P));
  Eigen::Map<const RowMat<T>> c(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
  Eigen::Map<RowMat<T>>(gw, s.cout, static_cast<Eigen::Index>(K)).noalias() += d * c.transpose();
  Eigen::Map<Vec<T>>(gb, s.cout) += d.rowwise().sum();
  if (din) {
    thread_local AlignedVector<T> dcol;
    dcol.resize(K * P);
    Eigen::Map<RowMat<T>>(dcol.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P)).noalias() =
        Eigen::Map<const RowMat<T>>(w, s.cout, static_cast<Eigen::Index>(K)).transpose() * d;
    col2im(dcol.data(), s, din);
  }
}

template <class T>
void fcForward(const T* x, int in, int out, const T* w, const T* b, T* y, bool relu) {
  Eigen::Map<Vec<T>> yv(y, out);
  yv.noalias() = Eigen::Map<const RowMat<T>>(w, out, in) * Eigen::Map<const Vec<T>>(x, in);
  yv += Eigen::Map<const Vec<T>>(b, out);
  if (relu)
    for (int i = 0; i < out; ++i) y[i] = std::max(T(0), y[i]);
}

template <class T>
void fcBackward(const T* x, int in, int out, const T* w, const T* dy, T* gw, T* gb, T* dx) {
  Eigen::Map<const Vec<T>> d(dy, out);
  Eigen::Map<RowMat<T>>(gw, out, in).noalias() += d * Eigen::Map<const Vec<T>>(x, in).transpose();
  Eigen::Map<Vec<T>>(gb, out) += d;
  if (dx) Eigen::Map<Vec<T>>(dx, in).noalias() += Eigen::Map<const RowMat<T>>(w, out, in).transpose() * d;
}

template <class T>
void maskRelu(const T* y, T* dy, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(y[i] > T(0))) dy[i] = T(0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Network

template <class T>
struct PicnnNet<T>::Tape {
  const T* input = nullptr;
  AlignedVector<T> col;
  AlignedVector<T> a[5];  // post-ReLU conv outputs
  AlignedVector<T> p1, p2, p5;
  std::vector<std::int32_t> i1, i2, i5;
  AlignedVector<T> h6, h7e, z8e, h7p, z8p;
  // gradients
  AlignedVector<T> da[5], dp1, dp2, dp5, dh6, dh7e, dh7p;
};

template <class T>
PicnnNet<T>::PicnnNet(const PicnnConfig& config) : config_(config) {
  config_.validate();
  geo_.channels = config_.channels();
  geo_.s1 = (config_.input_size - 7) / 2 + 1;
  geo_.p1 = pooledSize(geo_.s1);
  geo_.p2 = pooledSize(geo_.p1);
  geo_.p5 = pooledSize(geo_.p2);
  const auto& ch = geo_.channels;
  geo_.flat = static_cast<std::size_t>(ch[4]) * geo_.p5 * geo_.p5;

  std::size_t offset = 0;
  auto add = [&](const std::string& name, LayerKind kind, Branch branch, bool bias, std::size_t size, int fan_in) {
    blocks_.push_back({name, kind, branch, bias, offset, size, fan_in});
    offset += size;
    return blocks_.back().offset;
  };
  const int cin[5] = {3, ch[0], ch[1], ch[2], ch[3]};
  const int ks[5] = {7, 5, 3, 3, 3};
  for (int l = 0; l < 5; ++l) {
    const std::string n = "conv" + std::to_string(l + 1);
    const int fan = cin[l] * ks[l] * ks[l];
    conv_w_[l] = add(n + ".w", LayerKind::Conv, Branch::Trunk, false, static_cast<std::size_t>(ch[l]) * fan, fan);
    conv_b_[l] = add(n + ".b", LayerKind::Conv, Branch::Trunk, true, static_cast<std::size_t>(ch[l]), fan);
  }
  const int F = config_.fc_width;
  struct FcDef {
    const char* name;
    Branch branch;
    int in, out;
  };
  const FcDef fcs[5] = {{"fc6", Branch::Trunk, static_cast<int>(geo_.flat), F},
                        {"fc7e", Branch::Eye, F, F},
                        {"fc8e", Branch::Eye, F, 2},
                        {"fc7p", Branch::Pose, F, F},
                        {"fc8p", Branch::Pose, F, 3}};
  for (int l = 0; l < 5; ++l) {
    if (fcs[l].branch == Branch::Pose && !config_.pose_branch) continue;
    const std::string n = fcs[l].name;
    fc_w_[l] = add(n + ".w", LayerKind::FullyConnected, fcs[l].branch, false,
                   static_cast<std::size_t>(fcs[l].out) * fcs[l].in, fcs[l].in);
    fc_b_[l] = add(n + ".b", LayerKind::FullyConnected, fcs[l].branch, true, static_cast<std::size_t>(fcs[l].out),
                   fcs[l].in);
  }
  params_.assign(offset, T(0));
}

template <class T>
const ParamBlock& PicnnNet<T>::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  fail(ErrorKind::DegenerateInput, "picnn: no parameter block named " + name);
}

template <class T>
std::size_t PicnnNet<T>::inputLength() const noexcept {
  return 3 * static_cast<std::size_t>(config_.input_size) * config_.input_size;
}

template <class T>
void PicnnNet<T>::initialize(std::uint64_t seed) {
  for (const auto& b : blocks_) {
    T* p = params_.data() + b.offset;
    if (b.bias) {
      std::fill(p, p + b.size, T(0));
      continue;
    }
    Rng r = Rng::substream(seed, nameHash(b.name));
    const double sd = config_.init_std > 0 ? config_.init_std : std::sqrt(2.0 / b.fan_in);
    for (std::size_t i = 0; i < b.size; ++i) p[i] = static_cast<T>(r.normal(0.0, sd));
  }
}

template <class T>
void PicnnNet<T>::forwardSample(const T* input, Tape& t, std::uint64_t* signature) const {
  const auto& ch = geo_.channels;
  const T* P = params_.data();
  const int S = config_.input_size, F = config_.fc_width;
  t.input = input;
  const ConvShape c1{3, S, 7, 2, 0, ch[0], geo_.s1};
  const ConvShape c2{ch[0], geo_.p1, 5, 1, 2, ch[1], geo_.p1};
  const ConvShape c3{ch[1], geo_.p2, 3, 1, 1, ch[2], geo_.p2};
  const ConvShape c4{ch[2], geo_.p2, 3, 1, 1, ch[3], geo_.p2};
  const ConvShape c5{ch[3], geo_.p2, 3, 1, 1, ch[4], geo_.p2};
  const ConvShape shapes[5] = {c1, c2, c3, c4, c5};
  for (int l = 0; l < 5; ++l) t.a[l].resize(static_cast<std::size_t>(shapes[l].cout) * shapes[l].P());

  auto pool = [&](const AlignedVector<T>& in, int c, int h, AlignedVector<T>& out, std::vector<std::int32_t>& idx) {
    const int ho = pooledSize(h);
    out.resize(static_cast<std::size_t>(c) * ho * ho);
    idx.resize(out.size());
    maxPoolForward(in.data(), c, h, h, out.data(), idx.data());
  };

  convForward(input, c1, P + conv_w_[0], P + conv_b_[0], t.a[0].data(), t.col);
  pool(t.a[0], ch[0], geo_.s1, t.p1, t.i1);
  convForward(t.p1.data(), c2, P + conv_w_[1], P + conv_b_[1], t.a[1].data(), t.col);
  pool(t.a[1], ch[1], geo_.p1, t.p2, t.i2);
  convForward(t.p2.data(), c3, P + conv_w_[2], P + conv_b_[2], t.a[2].data(), t.col);
  convForward(t.a[2].data(), c4, P + conv_w_[3], P + conv_b_[3], t.a[3].data(), t.col);
  convForward(t.a[3].data(), c5, P + conv_w_[4], P + conv_b_[4], t.a[4].data(), t.col);
  pool(t.a[4], ch[4], geo_.p2, t.p5, t.i5);

  t.h6.resize(F);
  fcForward(t.p5.data(), static_cast<int>(geo_.flat), F, P + fc_w_[0], P + fc_b_[0], t.h6.data(), true);
  t.h7e.resize(F);
  t.z8e.resize(2);
  fcForward(t.h6.data(), F, F, P + fc_w_[1], P + fc_b_[1], t.h7e.data(), true);
  fcForward(t.h7e.data(), F, 2, P + fc_w_[2], P + fc_b_[2], t.z8e.data(), false);
  if (config_.pose_branch) {
    t.h7p.resize(F);
    t.z8p.resize(3);
    fcForward(t.h6.data(), F, F, P + fc_w_[3], P + fc_b_[3], t.h7p.data(), true);
    fcForward(t.h7p.data(), F, 3, P + fc_w_[4], P + fc_b_[4], t.z8p.data(), false);
  }

  if (signature) {
    std::uint64_t h = *signature;
    auto bits = [&](const AlignedVector<T>& v) {
      std::uint64_t word = 0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        word = (word << 1) | (v[i] > T(0) ? 1u : 0u);
        if (i % 64 == 63) h = fnv(h, word), word = 0;
      }
      h = fnv(h, word);
    };
    for (const auto& a : t.a) bits(a);
    bits(t.h6);
    bits(t.h7e);
    if (config_.pose_branch) bits(t.h7p);
    for (const auto* idx : {&t.i1, &t.i2, &t.i5})
      for (auto i : *idx) h = fnv(h, static_cast<std::uint64_t>(i));
    *signature = h;
  }
}

template <class T>
void PicnnNet<T>::backwardSample(Tape& t, const double* dlogits, const double* dpose, bool pose_active, T* grad) const {
  const auto& ch = geo_.channels;
  const T* P = params_.data();
  const int S = config_.input_size, F = config_.fc_width;
  const int flat = static_cast<int>(geo_.flat);

  t.dh6.assign(F, T(0));
  {
    const T dz[2] = {static_cast<T>(dlogits[0]), static_cast<T>(dlogits[1])};
    t.dh7e.assign(F, T(0));
    fcBackward(t.h7e.data(), F, 2, P + fc_w_[2], dz, grad + fc_w_[2], grad + fc_b_[2], t.dh7e.data());
    maskRelu(t.h7e.data(), t.dh7e.data(), F);
    fcBackward(t.h6.data(), F, F, P + fc_w_[1], t.dh7e.data(), grad + fc_w_[1], grad + fc_b_[1], t.dh6.data());
  }
  if (pose_active) {
    const T dp[3] = {static_cast<T>(dpose[0]), static_cast<T>(dpose[1]), static_cast<T>(dpose[2])};
    t.dh7p.assign(F, T(0));
    fcBackward(t.h7p.data(), F, 3, P + fc_w_[4], dp, grad + fc_w_[4], grad + fc_b_[4], t.dh7p.data());
    maskRelu(t.h7p.data(), t.dh7p.data(), F);
    fcBackward(t.h6.data(), F, F, P + fc_w_[3], t.dh7p.data(), grad + fc_w_[3], grad + fc_b_[3], t.dh6.data());
  }
  maskRelu(t.h6.data(), t.dh6.data(), F);
  t.dp5.assign(geo_.flat, T(0));
  fcBackward(t.p5.data(), flat, F, P + fc_w_[0], t.dh6.data(), grad + fc_w_[0], grad + fc_b_[0], t.dp5.data());

  const ConvShape c1{3, S, 7, 2, 0, ch[0], geo_.s1};
  const ConvShape c2{ch[0], geo_.p1, 5, 1, 2, ch[1], geo_.p1};
  const ConvShape c3{ch[1], geo_.p2, 3, 1, 1, ch[2], geo_.p2};
  const ConvShape c4{ch[2], geo_.p2, 3, 1, 1, ch[3], geo_.p2};
  const ConvShape c5{ch[3], geo_.p2, 3, 1, 1, ch[4], geo_.p2};

  for (int l = 0; l < 5; ++l) t.da[l].assign(t.a[l].size(), T(0));
  maxPoolBackward(t.dp5.data(), t.i5.data(), t.dp5.size(), t.da[4].data());
  convBackward(t.a[3].data(), c5, P + conv_w_[4], t.a[4].data(), t.da[4].data(), grad + conv_w_[4], grad + conv_b_[4],
               t.da[3].data(), t.col);
  convBackward(t.a[2].data(), c4, P + conv_w_[3], t.a[3].data(), t.da[3].data(), grad + conv_w_[3], grad + conv_b_[3],
               t.da[2].data(), t.col);
  t.dp2.assign(t.p2.size(), T(0));
  convBackward(t.p2.data(), c3, P + conv_w_[2], t.a[2].data(), t.da[2].data(), grad + conv_w_[2], grad + conv_b_[2],
               t.dp2.data(), t.col);
  maxPoolBackward(t.dp2.data(), t.i2.data(), t.dp2.size(), t.da[1].data());
  t.dp1.assign(t.p1.size(), T(0));
  convBackward(t.p1.data(), c2, P + conv_w_[1], t.a[1].data(), t.da[1].data(), grad + conv_w_[1], grad + conv_b_[1],
               t.dp1.data(), t.col);
  maxPoolBackward(t.dp1.data(), t.i1.data(), t.dp1.size(), t.da[0].data());
  convBackward(t.input, c1, P + conv_w_[0], t.a[0].data(), t.da[0].data(), grad + conv_w_[0], grad + conv_b_[0],
               static_cast<T*>(nullptr), t.col);
}

namespace {

std::size_t chunkCount(std::size_t n) { return std::min<std::size_t>(n, 8); }

}  // namespace

template <class T>
PicnnOutputs PicnnNet<T>::forward(std::span<const T> inputs, std::size_t n) const {
  const std::size_t L = inputLength();
  if (inputs.size() != n * L)
    fail(ErrorKind::ShapeMismatch, "picnn forward: expected " + std::to_string(n) + " inputs of " + std::to_string(L) +
                                       " values, got " + std::to_string(inputs.size()) + " values");
  PicnnOutputs out;
  out.probabilities.assign(2 * n, 0.0);
  out.pose.assign(3 * n, 0.0);
  const std::size_t chunks = chunkCount(n);
  parallelFor(chunks, [&](std::size_t c) {
    Tape t;
    for (std::size_t i = c * n / chunks; i < (c + 1) * n / chunks; ++i) {
      forwardSample(inputs.data() + i * L, t, nullptr);
      const double z0 = t.z8e[0], z1 = t.z8e[1];
      const double m = std::max(z0, z1);
      const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
      out.probabilities[2 * i] = e0 / (e0 + e1);
      out.probabilities[2 * i + 1] = e1 / (e0 + e1);
      if (config_.pose_branch)
        for (int j = 0; j < 3; ++j) out.pose[3 * i + j] = t.z8p[j];
    }
  });
  return out;
}

template <class T>
LossTerms PicnnNet<T>::lossAndGradient(const PicnnBatch<T>& b, std::vector<T>* grad) const {
  const std::size_t n = b.size, L = inputLength();
  if (n == 0) fail(ErrorKind::ShapeMismatch, "picnn: empty batch");
  if (b.inputs.size() != n * L || b.labels.size() != n || b.pose_targets.size() != 3 * n || b.masks.size() != n)
    fail(ErrorKind::ShapeMismatch, "picnn: inconsistent batch shapes");
  for (int y : b.labels)
    if (y != 0 && y != 1) fail(ErrorKind::DegenerateInput, "picnn: labels must be 0 or 1");

  const double lambda = config_.pose_branch ? config_.pose_loss_weight : 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double ps = poseScale(b.masks);
  bool any_mask = false;
  for (int m : b.masks) any_mask |= m != 0;
  const bool pose_active = config_.pose_branch && lambda != 0.0 && any_mask;

  const std::size_t chunks = chunkCount(n);
  std::vector<AlignedVector<T>> grads(grad ? chunks : 0);
  std::vector<double> ce(chunks, 0.0), pe(chunks, 0.0);
  parallelFor(chunks, [&](std::size_t c) {
    Tape t;
    if (grad) grads[c].assign(params_.size(), T(0));
    for (std::size_t i = c * n / chunks; i < (c + 1) * n / chunks; ++i) {
      forwardSample(b.inputs.data() + i * L, t, nullptr);
      const double z[2] = {static_cast<double>(t.z8e[0]), static_cast<double>(t.z8e[1])};
      double pose[3] = {0, 0, 0};
      if (config_.pose_branch)
        for (int j = 0; j < 3; ++j) pose[j] = t.z8p[j];
      double dz[2], dp[3];
      const auto s = sampleLoss(z, pose, b.labels[i], &b.pose_targets[3 * i], config_.pose_branch ? b.masks[i] : 0,
                                inv_n, ps, lambda, dz, dp);
      ce[c] += s.ce;
      pe[c] += s.pose;
      if (grad) backwardSample(t, dz, dp, pose_active, grads[c].data());
    }
  });
  LossTerms out;
  double ce_sum = 0.0, pe_sum = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    ce_sum += ce[c];
    pe_sum += pe[c];
  }
  out.ce = ce_sum * inv_n;
  out.pose = pe_sum * ps;
  out.total = out.ce + lambda * out.pose;
  if (grad) {
    grad->assign(grads[0].begin(), grads[0].end());
    for (std::size_t c = 1; c < chunks; ++c)
      for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += grads[c][i];
  }
  return out;
}

template <class T>
std::uint64_t PicnnNet<T>::activationSignature(std::span<const T> inputs, std::size_t n) const {
  const std::size_t L = inputLength();
  if (inputs.size() != n * L) fail(ErrorKind::ShapeMismatch, "picnn signature: input size mismatch");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  Tape t;
  for (std::size_t i = 0; i < n; ++i) forwardSample(inputs.data() + i * L, t, &h);
  return h;
}

template <class T>
ActivationMaps PicnnNet<T>::activations(std::span<const T> input) const {
  if (input.size() != inputLength()) fail(ErrorKind::ShapeMismatch, "picnn activations: input size mismatch");
  Tape t;
  forwardSample(input.data(), t, nullptr);
  ActivationMaps m;
  const int sizes[3] = {geo_.s1, geo_.p1, geo_.p2};
  for (int l = 0; l < 3; ++l) {
    m.conv[l].channels = geo_.channels[l];
    m.conv[l].height = m.conv[l].width = sizes[l];
    m.conv[l].values.assign(t.a[l].begin(), t.a[l].end());
  }
  return m;
}

template class PicnnNet<float>;
template class PicnnNet<double>;

template <class T>
void patchToInput(const FacePatch& patch, int size, T* out) {
  patch.validate();
  FacePatch resized;
  const FacePatch* src = &patch;
  if (patch.width != size || patch.height != size) {
    resized = resizePatch(patch, size, size);
    src = &resized;
  }
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        const int sc = src->channels == 3 ? c : 0;
        out[c * plane + static_cast<std::size_t>(y) * size + x] = static_cast<T>(src->at(x, y, sc) / 255.0 - 0.5);
      }
}

template void patchToInput<float>(const FacePatch&, int, float*);
template void patchToInput<double>(const FacePatch&, int, double*);

// ---------------------------------------------------------------------------
// Training

PicnnTrainResult trainPicnn(std::span<const TrainSample> data, const PicnnConfig& config, Rng& rng,
                            const TrainOptions& options) {
  config.validate();
  const std::size_t n = data.size();
  std::size_t pos = 0;
  for (const auto& s : data) {
    if (s.label != 0 && s.label != 1) fail(ErrorKind::DegenerateInput, "trainPicnn: labels must be 0 or 1");
    pos += s.label == 1;
  }
  if (pos == 0 || pos == n) fail(ErrorKind::DegenerateInput, "trainPicnn: both classes must be present");

  const std::uint64_t seed = rng.nextU64();
  PicnnTrainResult result{PicnnModel(config), {}};
  auto& model = result.model;
  model.initialize(seed);
  Rng order_rng = Rng::substream(seed, 0x0bd3);

  const std::size_t L = model.inputLength();
  const int S = config.input_size;
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  order_rng.shuffle(order);
  std::size_t cursor = 0;

  std::vector<float> inputs(B * L), momentum(model.params().size(), 0.0f), grad;
  std::vector<int> labels(B), masks(B);
  std::vector<double> targets(3 * B);
  const int total = options.max_iterations > 0 ? options.max_iterations : config.iterations();
  result.log.reserve(static_cast<std::size_t>(total));
  const auto mu = static_cast<float>(config.momentum);
  const auto wd = static_cast<float>(config.weight_decay);

  for (int it = 1; it <= total; ++it) {
    if (cursor + B > n) {
      order_rng.shuffle(order);
      cursor = 0;
    }
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   order.begin() + static_cast<std::ptrdiff_t>(cursor + B));
    cursor += B;
    parallelFor(B, [&](std::size_t i) { patchToInput(data[batch[i]].patch, S, inputs.data() + i * L); });
    for (std::size_t i = 0; i < B; ++i) {
      const auto& s = data[batch[i]];
      labels[i] = s.label;
      masks[i] = s.pose_mask;
      for (int j = 0; j < 3; ++j) targets[3 * i + j] = s.pose[j];
    }
    const LossTerms loss = model.lossAndGradient({inputs, labels, targets, masks, B}, &grad);
    if (!std::isfinite(loss.total)) fail(ErrorKind::NumericFailure, "trainPicnn: loss diverged at iteration " + std::to_string(it));

    const auto lr = static_cast<float>(config.learningRate(it));
    auto& w = model.params();
    for (const auto& blk : model.blocks()) {
      for (std::size_t i = blk.offset; i < blk.offset + blk.size; ++i) {
        const float g = grad[i] + (blk.bias ? 0.0f : wd * w[i]);
        momentum[i] = mu * momentum[i] - lr * g;
        w[i] += momentum[i];
      }
    }
    result.log.push_back({it, lr, loss});
    if (options.progress) options.progress(result.log.back());
  }
  return result;
}

std::string trainLogCsv(std::span<const TrainLogRow> log) {
  std::ostringstream s;
  s << "iteration,lr,total_loss,ce_loss,pose_loss\n";
  for (const auto& r : log)
    s << r.iteration << ',' << formatReal(r.lr) << ',' << formatReal(r.loss.total) << ',' << formatReal(r.loss.ce) << ','
      << formatReal(r.loss.pose) << '\n';
  return s.str();
}

std::vector<double> predictPicnn(const PicnnModel& model, std::span<const FacePatch> patches) {
  const std::size_t L = model.inputLength();
  std::vector<double> out;
  out.reserve(patches.size());
  constexpr std::size_t kBlock = 256;
  std::vector<float> inputs;
  for (std::size_t start = 0; start < patches.size(); start += kBlock) {
    const std::size_t m = std::min(kBlock, patches.size() - start);
    inputs.assign(m * L, 0.0f);
    parallelFor(m, [&](std::size_t i) {
      patchToInput(patches[start + i], model.config().input_size, inputs.data() + i * L);
    });
    const auto o = model.forward(inputs, m);
    for (std::size_t i = 0; i < m; ++i) out.push_back(o.probabilities[2 * i + 1]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

void savePicnn(ModelContainer& out, const PicnnModel& model) {
  const auto& c = model.config();
  std::vector<double> cfg{static_cast<double>(c.input_size), c.channel_scale, static_cast<double>(c.fc_width),
                          c.pose_branch ? 1.0 : 0.0, c.pose_loss_weight, static_cast<double>(c.batch_size),
                          c.momentum, c.weight_decay, c.init_std, static_cast<double>(c.lr_schedule.size())};
  for (const auto& [until, lr] : c.lr_schedule) {
    cfg.push_back(until);
    cfg.push_back(lr);
  }
  out.add(kTagPicnnConfig, std::move(cfg));
  std::vector<double> p(model.params().begin(), model.params().end());
  out.add(kTagPicnnParams, std::move(p));
}

PicnnModel loadPicnn(const ModelContainer& in) {
  PayloadReader r(in.get(kTagPicnnConfig).values);
  PicnnConfig c;
  c.input_size = static_cast<int>(r.integer());
  c.channel_scale = r.real();
  c.fc_width = static_cast<int>(r.integer());
  c.pose_branch = r.integer() != 0;
  c.pose_loss_weight = r.real();
  c.batch_size = static_cast<int>(r.integer());
  c.momentum = r.real();
  c.weight_decay = r.real();
  c.init_std = r.real();
  c.lr_schedule.resize(r.count());
  for (auto& [until, lr] : c.lr_schedule) {
    until = static_cast<int>(r.integer());
    lr = r.real();
  }
  PicnnModel m(c);
  const auto& values = in.get(kTagPicnnParams).values;
  if (values.size() != m.params().size())
    fail(ErrorKind::IoError, "picnn model: expected " + std::to_string(m.params().size()) + " parameters, found " +
                                 std::to_string(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m.params()[i] = static_cast<float>(values[i]);
  return m;
}

// ---------------------------------------------------------------------------
// Visualization

namespace {

int gridColumns(int tiles) { return std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(tiles))))); }

// Min-max normalizes `values` to [0, 255]; a constant map becomes all zeros.
std::vector<std::uint8_t> normalizeTile(const double* values, std::size_t n) {
  const auto [lo, hi] = std::minmax_element(values, values + n);
  std::vector<std::uint8_t> out(n, 0);
  if (*hi > *lo)
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / (*hi - *lo)));
  return out;
}

FacePatch mapGrid(const ActivationMaps::Map& m) {
  const int cols = gridColumns(m.channels), rows = (m.channels + cols - 1) / cols;
  FacePatch g;
  g.width = cols * (m.width + 1) + 1;
  g.height = rows * (m.height + 1) + 1;
  g.channels = 1;
  g.pixels.assign(static_cast<std::size_t>(g.width) * g.height, 255);
  const std::size_t plane = static_cast<std::size_t>(m.width) * m.height;
  for (int c = 0; c < m.channels; ++c) {
    const auto tile = normalizeTile(m.values.data() + c * plane, plane);
    const int ox = 1 + (c % cols) * (m.width + 1), oy = 1 + (c / cols) * (m.height + 1);
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) g.at(ox + x, oy + y) = tile[static_cast<std::size_t>(y) * m.width + x];
  }
  return g;
}

}  // namespace

FacePatch conv1FilterGrid(const PicnnModel& model, int* tiles) {
  constexpr int kZoom = 4, k = 7;
  const int n = model.geometry().channels[0];
  if (tiles) *tiles = n;
  const int cols = gridColumns(n), rows = (n + cols - 1) / cols;
  const int tw = k * kZoom;
  FacePatch g;
  g.width = cols * (tw + 1) + 1;
  g.height = rows * (tw + 1) + 1;
  g.channels = 3;
  g.pixels.assign(static_cast<std::size_t>(g.width) * g.height * 3, 255);
  const auto& blk = model.block("conv1.w");
  const std::size_t per = 3 * k * k;
  for (int f = 0; f < n; ++f) {
    std::vector<double> w(per);
    for (std::size_t i = 0; i < per; ++i) w[i] = model.params()[blk.offset + f * per + i];
    const auto tile = normalizeTile(w.data(), per);
    const int ox = 1 + (f % cols) * (tw + 1), oy = 1 + (f / cols) * (tw + 1);
    for (int y = 0; y < tw; ++y)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < 3; ++c) g.at(ox + x, oy + y, c) = tile[(c * k + y / kZoom) * k + x / kZoom];
  }
  return g;
}

std::vector<std::filesystem::path> dumpFiltersAndActivations(const PicnnModel& model, const FacePatch& patch,
                                                             const std::filesystem::path& out_dir) {
  if (!std::filesystem::is_directory(out_dir))
    fail(ErrorKind::IoError, "viz: output directory does not exist: " + out_dir.string());
  std::vector<std::filesystem::path> written;
  written.push_back(out_dir / "filters.ppm");
  writeNetpbm(written.back(), conv1FilterGrid(model));
  std::vector<float> input(model.inputLength());
  patchToInput(patch, model.config().input_size, input.data());
  const auto maps = model.activations(input);
  for (int l = 0; l < 3; ++l) {
    written.push_back(out_dir / ("act" + std::to_string(l + 1) + ".pgm"));
    writeNetpbm(written.back(), mapGrid(maps.conv[l]));
  }
  return written;
}

}  // namespace gc
