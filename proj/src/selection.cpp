#include "gazecontact/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"

namespace gc {

double iou(const DetectionBox& a, const DetectionBox& b) noexcept {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0)) return 0.0;
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double area_a = a.w * a.h, area_b = b.w * b.h;
  const double uni = std::min(area_a, area_b) + std::max(area_a, area_b) - inter;  // order-free sum
  return uni > 0 ? inter / uni : 0.0;
}

DetectionEval evaluateDetections(const std::vector<std::vector<DetectionBox>>& predicted,
                                 const std::vector<std::vector<DetectionBox>>& truth, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    fail(ErrorKind::DegenerateInput, "evaluateDetections: IoU threshold must lie in (0, 1)");
  DetectionEval out;
  const std::size_t frames = std::max(predicted.size(), truth.size());
  static const std::vector<DetectionBox> kNone;
  for (std::size_t f = 0; f < frames; ++f) {
    const auto& p = f < predicted.size() ? predicted[f] : kNone;
    const auto& t = f < truth.size() ? truth[f] : kNone;
    out.predicted += p.size();
    out.truth += t.size();
    struct Pair {
      double v;
      std::size_t i, j;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < t.size(); ++j)
        if (const double v = iou(p[i], t[j]); v >= iou_threshold) pairs.push_back({v, i, j});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.v > b.v; });
    std::vector<bool> used_p(p.size()), used_t(t.size());
    for (const auto& pr : pairs) {
      if (used_p[pr.i] || used_t[pr.j]) continue;
      used_p[pr.i] = used_t[pr.j] = true;
      ++out.matched;
    }
  }
  auto ratio = [](std::size_t num, std::size_t den, std::size_t other) {
    if (den == 0) return other == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  out.precision = ratio(out.matched, out.predicted, out.truth);
  out.recall = ratio(out.matched, out.truth, out.predicted);
  return out;
}

std::vector<std::vector<DetectionBox>> parseDetectionsJsonl(std::string_view text) {
  std::vector<std::vector<DetectionBox>> frames;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      std::vector<DetectionBox> boxes;
      const int frame = j.at("frame").get<int>();
      for (const auto& b : j.at("boxes")) {
        if (b.size() < 4 || b.size() > 5) fail(ErrorKind::DegenerateInput, "box needs 4 or 5 numbers");
        DetectionBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>(),
                         b.size() == 5 ? b[4].get<double>() : 1.0, frame};
        if (!(box.w > 0 && box.h > 0)) fail(ErrorKind::DegenerateInput, "box width and height must be positive");
        boxes.push_back(box);
      }
      frames.push_back(std::move(boxes));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::DegenerateInput, "detections line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.kind(), "detections line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return frames;
}

std::string detectionsJsonl(const std::vector<std::vector<DetectionBox>>& frames) {
  std::string out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    nlohmann::json boxes = nlohmann::json::array();
    int frame = static_cast<int>(f);
    for (const auto& b : frames[f]) {
      boxes.push_back({b.x, b.y, b.w, b.h, b.score});
      frame = b.frame_index;
    }
    out += nlohmann::json{{"frame", frame}, {"boxes", boxes}}.dump();
    out += '\n';
  }
  return out;
}

FacePatch cropBox(const FacePatch& frame, const DetectionBox& box, int size) {
  const int x0 = std::clamp(static_cast<int>(std::floor(box.x)), 0, frame.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(box.y)), 0, frame.height - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil(box.x + box.w)), x0 + 1, frame.width);
  const int y1 = std::clamp(static_cast<int>(std::ceil(box.y + box.h)), y0 + 1, frame.height);
  FacePatch crop;
  crop.width = x1 - x0;
  crop.height = y1 - y0;
  crop.channels = frame.channels;
  crop.pixels.resize(static_cast<std::size_t>(crop.width) * crop.height * crop.channels);
  for (int y = 0; y < crop.height; ++y)
    for (int x = 0; x < crop.width; ++x)
      for (int c = 0; c < crop.channels; ++c) crop.at(x, y, c) = frame.at(x0 + x, y0 + y, c);
  return resizePatch(crop, size, size);
}

// ---------------------------------------------------------------------------

std::vector<double> HistogramEmbedding::embed(const FacePatch& patch) const {
  const auto gray = grayValues(patch);
  std::vector<double> e(128, 0.0);
  for (double v : gray) e[std::min(63, static_cast<int>(v / 4.0))] += 1.0;
  for (int gy = 0; gy < 8; ++gy) {
    for (int gx = 0; gx < 8; ++gx) {
      const int xa = gx * patch.width / 8, xb = std::max(xa + 1, (gx + 1) * patch.width / 8);
      const int ya = gy * patch.height / 8, yb = std::max(ya + 1, (gy + 1) * patch.height / 8);
      double s = 0.0;
      for (int y = ya; y < yb; ++y)
        for (int x = xa; x < xb; ++x) s += gray[static_cast<std::size_t>(y) * patch.width + x];
      e[64 + gy * 8 + gx] = s / ((xb - xa) * (yb - ya) * 255.0);
    }
  }
  for (int half = 0; half < 2; ++half) {
    double n = 0.0;
    for (int i = 0; i < 64; ++i) n += e[half * 64 + i] * e[half * 64 + i];
    if (n > 0)
      for (int i = 0; i < 64; ++i) e[half * 64 + i] /= std::sqrt(2.0 * n);
  }
  return e;
}

// ---------------------------------------------------------------------------

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

}  // namespace

SelectionState::SelectionState(const SelectionOptions& options, std::size_t embedding_dims)
    : options_(options), model_(options.classes, embedding_dims, options.learning_rate) {
  prototypes_.resize(static_cast<std::size_t>(options.classes));
  prototype_counts_.assign(static_cast<std::size_t>(options.classes), 0);
}

int SelectionState::nearestPrototype(const std::vector<double>& e, int skip) const {
  int best = -1;
  double best_sim = -2.0;
  for (int c = 0; c < options_.classes; ++c) {
    if (c == skip || prototypes_[c].empty()) continue;
    if (const double s = cosine(e, prototypes_[c]); s > best_sim) {
      best_sim = s;
      best = c;
    }
  }
  if (best >= 0) return best;
  for (int c = 0; c < options_.classes; ++c)
    if (c != skip) return c;
  return skip;
}

void SelectionState::learn(const std::vector<double>& e, int cls) {
  model_.update(e, cls);
  auto& p = prototypes_[cls];
  auto& n = prototype_counts_[cls];
  if (p.empty()) p.assign(e.size(), 0.0);
  ++n;
  for (std::size_t i = 0; i < e.size(); ++i) p[i] += (e[i] - p[i]) / static_cast<double>(n);
}

SelectionResult SelectionState::step(const std::vector<std::vector<double>>& embeddings,
                                     const std::vector<DetectionBox>& boxes) {
  SelectionResult result;
  const std::size_t n = boxes.size();
  if (embeddings.size() != n) fail(ErrorKind::DimensionMismatch, "selectStep: one embedding per detection required");
  if (n == 0) return result;
  for (const auto& e : embeddings)
    if (e.size() != model_.dims()) fail(ErrorKind::DimensionMismatch, "selectStep: embedding length mismatch");

  std::vector<std::size_t> by_area(n);
  std::iota(by_area.begin(), by_area.end(), 0);
  std::stable_sort(by_area.begin(), by_area.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].w * boxes[a].h > boxes[b].w * boxes[b].h; });

  auto& assign = result.assignments;
  assign.assign(n, 0);
  std::vector<double> child_score(n, 0.0);
  const int k = options_.classes;

  if (k == 1) {
    result.child = by_area[0];
  } else if (frames_seen_ < options_.bootstrap_frames) {
    assign[by_area[0]] = 0;
    child_score[by_area[0]] = 1.0;
    for (std::size_t r = 1; r < n; ++r) {
      const std::size_t i = by_area[r];
      int cls = -1;
      for (int c = 1; c < k && cls < 0; ++c)
        if (prototypes_[c].empty()) cls = c;
      assign[i] = cls >= 0 ? cls : nearestPrototype(embeddings[i], 0);
    }
  } else {
    const bool warm = model_.updates() >= options_.warm_updates;
    for (std::size_t i = 0; i < n; ++i) {
      if (warm) {
        const auto p = model_.probabilities(embeddings[i]);
        assign[i] = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        child_score[i] = p[0];
      } else {
        assign[i] = nearestPrototype(embeddings[i], -1);
        child_score[i] = prototypes_[0].empty() ? 0.0 : cosine(embeddings[i], prototypes_[0]);
      }
    }
    // one child per frame: the most child-like keeps the label
    std::optional<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i)
      if (assign[i] == 0 && (!keep || child_score[i] > child_score[*keep])) keep = i;
    for (std::size_t i = 0; i < n; ++i) {
      if (assign[i] != 0 || i == *keep) continue;
      if (warm) {
        const auto p = model_.probabilities(embeddings[i]);
        assign[i] = static_cast<int>(std::max_element(p.begin() + 1, p.end()) - p.begin());
      } else {
        assign[i] = nearestPrototype(embeddings[i], 0);
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    learn(embeddings[i], assign[i]);
    if (assign[i] == 0 && !result.child) result.child = i;
  }
  ++frames_seen_;
  return result;
}

SelectionResult selectStep(SelectionState& state, const EmbeddingProvider& provider,
                           const std::vector<SelectionInput>& detections) {
  std::vector<std::vector<double>> embeddings;
  std::vector<DetectionBox> boxes;
  for (const auto& d : detections) {
    embeddings.push_back(provider.embed(d.patch));
    boxes.push_back(d.box);
  }
  return state.step(embeddings, boxes);
}

}  // namespace gc
