#pragma once

// Central-difference gradient oracle for the double-precision network,
// shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "gazecontact/picnn.hpp"

namespace gc::testing {

struct FdBatch {
  std::vector<double> inputs;
  std::vector<int> labels;
  std::vector<double> targets;
  std::vector<int> masks;
  std::size_t n = 0;

  PicnnBatch<double> view() const { return {inputs, labels, targets, masks, n}; }
};

inline FdBatch randomFdBatch(const PicnnNet<double>& net, std::size_t n, Rng& rng, bool masked = true) {
  FdBatch b;
  b.n = n;
  b.inputs.resize(n * net.inputLength());
  for (auto& v : b.inputs) v = rng.uniform(-0.5, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    b.labels.push_back(static_cast<int>(i % 2));
    b.masks.push_back(masked && i != 1 ? 1 : 0);
    for (int j = 0; j < 3; ++j) b.targets.push_back(rng.uniform(-0.6, 0.6));
  }
  return b;
}

struct FdProbe {
  std::string block;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative = 0.0;
};

struct FdSummary {
  std::map<LayerKind, std::vector<FdProbe>> probes;
  std::size_t kinks_skipped = 0;

  double worst(LayerKind kind) const {
    double w = 0.0;
    auto it = probes.find(kind);
    if (it != probes.end())
      for (const auto& p : it->second) w = std::max(w, p.relative);
    return w;
  }
};

inline double fdRelative(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

/// Probes `per_kind` parameters per layer kind, cycling through the blocks
/// of that kind and picking a random element of each. A probe whose +/-step
/// evaluations straddle a ReLU or pooling switch is redrawn.
inline FdSummary finiteDifferenceCheck(PicnnNet<double>& net, const FdBatch& batch, int per_kind, Rng& rng,
                                       double step = 1e-5) {
  std::vector<double> grad;
  net.lossAndGradient(batch.view(), &grad);
  FdSummary out;
  auto& w = net.params();
  for (LayerKind kind : {LayerKind::Conv, LayerKind::FullyConnected}) {
    std::vector<const ParamBlock*> blocks;
    for (const auto& b : net.blocks())
      if (b.kind == kind) blocks.push_back(&b);
    auto& list = out.probes[kind];
    std::size_t next = 0;
    while (static_cast<int>(list.size()) < per_kind) {
      const ParamBlock& blk = *blocks[next++ % blocks.size()];
      const std::size_t idx = blk.offset + static_cast<std::size_t>(rng.below(blk.size));
      const double orig = w[idx];
      w[idx] = orig + step;
      const double up = net.lossAndGradient(batch.view(), nullptr).total;
      w[idx] = orig - step;
      const double down = net.lossAndGradient(batch.view(), nullptr).total;
      FdProbe p{blk.name, grad[idx], (up - down) / (2 * step), 0.0};
      p.relative = fdRelative(p.analytic, p.numeric);
      if (p.relative >= 1e-4) {
        const auto sig_down = net.activationSignature(batch.inputs, batch.n);
        w[idx] = orig + step;
        const auto sig_up = net.activationSignature(batch.inputs, batch.n);
        if (sig_up != sig_down) {
          w[idx] = orig;
          ++out.kinks_skipped;
          continue;
        }
      }
      w[idx] = orig;
      list.push_back(p);
    }
  }
  return out;
}

}  // namespace gc::testing
