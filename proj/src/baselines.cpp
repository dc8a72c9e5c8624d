#include "gazecontact/baselines.hpp"

#include <algorithm>
#include <map>

#include "gazecontact/error.hpp"
#include "gazecontact/parallel.hpp"

namespace gc {

PeecTrainResult trainPeec(std::span<const EyeFrame> frames, Rng& rng, const PeecParams& params) {
  if (params.clusters < 1) fail(ErrorKind::DegenerateInput, "trainPeec: cluster count must be positive");
  std::vector<const EyeFrame*> used;
  for (const auto& f : frames)
    if (f.pose && f.eyes) used.push_back(&f);
  PeecTrainResult result;
  result.used = used.size();
  result.excluded = frames.size() - used.size();
  if (used.empty())
    fail(ErrorKind::DegenerateInput, "trainPeec: no training frame has both a head pose and eye patches (" +
                                         std::to_string(result.excluded) + " excluded)");

  std::vector<HeadPose> poses;
  for (const auto* f : used) poses.push_back(*f->pose);
  auto& model = result.model;
  model.gmm = fitGmm(poses, static_cast<std::size_t>(params.clusters), rng);

  const std::size_t d = 2 * 864;
  Matrix hog(used.size(), d);
  parallelFor(used.size(), [&](std::size_t i) {
    const auto h = eyePairHog(*used[i]->eyes);
    std::copy(h.begin(), h.end(), hog.row(i).begin());
  });

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(params.clusters));
  for (std::size_t i = 0; i < used.size(); ++i) members[hardAssign(model.gmm, poses[i])].push_back(i);
  for (std::size_t c = 0; c < members.size(); ++c) {
    const auto& idx = members[c];
    Matrix x(idx.size(), d);
    std::vector<int> y(idx.size());
    std::size_t pos = 0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy(hog.row(idx[r]).begin(), hog.row(idx[r]).end(), x.row(r).begin());
      y[r] = used[idx[r]]->label;
      pos += y[r] == 1;
    }
    if (pos == 0 || pos == idx.size() || idx.size() < 2)
      fail(ErrorKind::DegenerateInput, "trainPeec: pose cluster " + std::to_string(c) + " has " +
                                           std::to_string(idx.size()) + " frames with " + std::to_string(pos) +
                                           " positives; every cluster needs both classes");
    model.forests.push_back(fitForest(x, y, rng, params.forest));
  }
  return result;
}

double predictPeec(const PeecModel& model, const HeadPose& pose, std::span<const double> hog) {
  if (model.forests.size() != model.gmm.k()) fail(ErrorKind::ShapeMismatch, "PEEC: forest count differs from clusters");
  const auto r = responsibilities(model.gmm, pose);
  double p = 0.0;
  for (std::size_t c = 0; c < r.size(); ++c) p += r[c] * predictForest(model.forests[c], hog);
  return std::clamp(p, 0.0, 1.0);
}

std::optional<double> predictPeec(const PeecModel& model, const EyeFrame& frame) {
  if (!frame.pose || !frame.eyes) return std::nullopt;
  return predictPeec(model, *frame.pose, eyePairHog(*frame.eyes));
}

void savePeec(ModelContainer& out, const PeecModel& model) {
  std::vector<double> g;
  appendGmm(g, model.gmm);
  out.add(kTagGmm, std::move(g));
  for (const auto& f : model.forests) {
    std::vector<double> v;
    appendForest(v, f);
    out.add(kTagForest, std::move(v));
  }
}

PeecModel loadPeec(const ModelContainer& in) {
  PeecModel m;
  PayloadReader g(in.get(kTagGmm).values);
  m.gmm = readGmm(g);
  for (const auto* rec : in.all(kTagForest)) {
    PayloadReader r(rec->values);
    m.forests.push_back(readForest(r));
  }
  if (m.forests.size() != m.gmm.k()) fail(ErrorKind::IoError, "PEEC model: forest count differs from clusters");
  return m;
}

// ---------------------------------------------------------------------------

std::vector<double> eyeIntensities(const EyePair& eyes) {
  std::vector<double> v;
  v.reserve(eyes.left.pixels.size() + eyes.right.pixels.size());
  for (double p : eyes.left.pixels) v.push_back(p / 255.0);
  for (double p : eyes.right.pixels) v.push_back(p / 255.0);
  return v;
}

GazeLockTrainResult trainGazeLock(std::span<const EyeFrame> frames, Rng& rng, const GazeLockParams& params) {
  std::vector<const EyeFrame*> used;
  for (const auto& f : frames)
    if (f.eyes) used.push_back(&f);
  GazeLockTrainResult result;
  result.used = used.size();
  result.excluded = frames.size() - used.size();
  const std::size_t n = used.size();
  if (n < 3) fail(ErrorKind::DegenerateInput, "trainGazeLock: need at least 3 frames with eye patches");

  const std::size_t d = 2 * static_cast<std::size_t>(EyePatch::kWidth) * EyePatch::kHeight;
  Matrix x(n, d);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = eyeIntensities(*used[i]->eyes);
    std::copy(v.begin(), v.end(), x.row(i).begin());
    labels[i] = used[i]->label;
  }

  auto& model = result.model;
  const auto pca_dims = std::min<std::size_t>(static_cast<std::size_t>(params.pca_dims), std::min(n - 1, d));
  model.pca = fitPca(x, pca_dims);
  const Matrix z = model.pca.project(x);

  // pseudo-classes: label x pose bucket
  std::vector<int> bucket(n, 0);
  std::vector<HeadPose> poses;
  std::vector<std::size_t> with_pose;
  for (std::size_t i = 0; i < n; ++i)
    if (used[i]->pose) {
      poses.push_back(*used[i]->pose);
      with_pose.push_back(i);
    }
  if (params.pose_buckets > 1 && poses.size() >= 2 * static_cast<std::size_t>(params.pose_buckets)) {
    try {
      const auto gmm = fitGmm(poses, static_cast<std::size_t>(params.pose_buckets), rng);
      for (std::size_t j = 0; j < with_pose.size(); ++j)
        bucket[with_pose[j]] = static_cast<int>(hardAssign(gmm, poses[j]));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateInput) throw;
    }
  }
  std::map<int, std::size_t> sizes;
  std::vector<int> pseudo(n);
  for (std::size_t i = 0; i < n; ++i) ++sizes[pseudo[i] = labels[i] * 16 + bucket[i]];
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (sizes[pseudo[i]] >= 2) keep.push_back(i);
  Matrix zk(keep.size(), z.cols());
  std::vector<int> pk(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    std::copy(z.row(keep[r]).begin(), z.row(keep[r]).end(), zk.row(r).begin());
    pk[r] = pseudo[keep[r]];
  }
  result.pseudo_classes = 0;
  for (const auto& [cls, count] : sizes) result.pseudo_classes += count >= 2;
  model.mda = fitMda(zk, pk, static_cast<std::size_t>(params.mda_dims));

  Matrix w(n, model.mda.outputDims());
  std::vector<int> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = model.mda.project(z.row(i));
    std::copy(m.begin(), m.end(), w.row(i).begin());
    ys[i] = labels[i] == 1 ? 1 : -1;
  }
  model.svm = fitLinearSvm(w, ys, rng, params.svm);
  return result;
}

double predictGazeLock(const GazeLockModel& model, const EyePatch& left, const EyePatch& right) {
  const auto v = eyeIntensities({left, right});
  if (v.size() != model.pca.inputDims()) fail(ErrorKind::DimensionMismatch, "GazeLock: eye patch size mismatch");
  return sigmoid(model.svm.decision(model.mda.project(model.pca.project(v))));
}

std::optional<double> predictGazeLock(const GazeLockModel& model, const EyeFrame& frame) {
  if (!frame.eyes) return std::nullopt;
  return predictGazeLock(model, frame.eyes->left, frame.eyes->right);
}

void appendPca(std::vector<double>& out, const PcaModel& m) {
  out.push_back(static_cast<double>(m.mean.size()));
  out.insert(out.end(), m.mean.begin(), m.mean.end());
  appendMatrix(out, m.components);
  out.push_back(static_cast<double>(m.explained_variance.size()));
  out.insert(out.end(), m.explained_variance.begin(), m.explained_variance.end());
}

PcaModel readPca(PayloadReader& in) {
  PcaModel m;
  m.mean = in.reals(in.count());
  m.components = readMatrix(in);
  m.explained_variance = in.reals(in.count());
  if (m.components.cols() != m.mean.size()) fail(ErrorKind::IoError, "PCA payload: inconsistent dimensions");
  return m;
}

void appendMda(std::vector<double>& out, const MdaModel& m) {
  appendMatrix(out, m.projection);
  appendMatrix(out, m.class_means);
  out.push_back(static_cast<double>(m.class_ids.size()));
  for (int c : m.class_ids) out.push_back(c);
  out.push_back(m.clamped ? 1.0 : 0.0);
}

MdaModel readMda(PayloadReader& in) {
  MdaModel m;
  m.projection = readMatrix(in);
  m.class_means = readMatrix(in);
  m.class_ids.resize(in.count());
  for (auto& c : m.class_ids) c = static_cast<int>(in.integer());
  m.clamped = in.integer() != 0;
  return m;
}

void saveGazeLock(ModelContainer& out, const GazeLockModel& model) {
  std::vector<double> a, b, c;
  appendPca(a, model.pca);
  appendMda(b, model.mda);
  appendSvm(c, model.svm);
  out.add(kTagPca, std::move(a));
  out.add(kTagMda, std::move(b));
  out.add(kTagSvm, std::move(c));
}

GazeLockModel loadGazeLock(const ModelContainer& in) {
  GazeLockModel m;
  PayloadReader a(in.get(kTagPca).values), b(in.get(kTagMda).values), c(in.get(kTagSvm).values);
  m.pca = readPca(a);
  m.mda = readMda(b);
  m.svm = readSvm(c);
  if (m.mda.projection.cols() != m.pca.outputDims() || m.svm.weights.size() != m.mda.outputDims())
    fail(ErrorKind::IoError, "GazeLock model: stage dimensions do not chain");
  return m;
}

}  // namespace gc
