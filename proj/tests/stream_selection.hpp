#pragma once

// Runs the online child selector over a generated two-identity stream and
// scores the chosen boxes against the generator's child boxes.

#include <vector>

#include "gazecontact/selection.hpp"
#include "gazecontact/synthface.hpp"

namespace gc::testing {

struct StreamRun {
  DetectionEval eval;
  std::vector<std::vector<int>> assignments;
};

inline StreamRun runStreamSelection(int frames, std::uint64_t seed, const SelectionOptions& options = {}) {
  Rng rng(seed);
  const StreamConfig sc;
  const auto stream = generateStream(frames, sc, rng);
  HistogramEmbedding provider;
  SelectionState state(options, provider.dims());
  std::vector<std::vector<DetectionBox>> chosen, truth;
  StreamRun run;
  for (const auto& f : stream) {
    std::vector<SelectionInput> inputs;
    for (const auto& d : f.detections) inputs.push_back({{d.x, d.y, d.w, d.h, d.score, f.frame_index}, d.patch});
    const auto r = selectStep(state, provider, inputs);
    run.assignments.push_back(r.assignments);
    auto& c = chosen.emplace_back();
    if (r.child) c.push_back(inputs[*r.child].box);
    auto& t = truth.emplace_back();
    if (f.child_detection >= 0) t.push_back(inputs[static_cast<std::size_t>(f.child_detection)].box);
  }
  run.eval = evaluateDetections(chosen, truth, 0.5);
  return run;
}

}  // namespace gc::testing
