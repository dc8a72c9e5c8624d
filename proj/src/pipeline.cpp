#include "gazecontact/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"
#include "gazecontact/parallel.hpp"

namespace gc {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parseReal(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v))
    fail(ErrorKind::DegenerateInput, what + ": not a number: '" + s + "'");
  return v;
}

std::int64_t parseInt(const std::string& s, const std::string& what) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) fail(ErrorKind::DegenerateInput, what + ": not an integer: '" + s + "'");
  return v;
}

std::string framePath(const std::string& session, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return "images/" + session + "/" + buf + ".ppm";
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest

std::filesystem::path Manifest::imagePath(const ManifestRow& row) const {
  const std::filesystem::path p(row.image_path);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<SessionMeta> Manifest::sessions() const {
  std::vector<SessionMeta> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : rows)
    if (seen.insert(r.session_id).second) out.push_back({r.session_id, r.subject_id, r.diagnosis, r.protocol});
  return out;
}

Manifest Manifest::subset(const std::vector<std::string>& session_ids) const {
  const std::unordered_set<std::string> keep(session_ids.begin(), session_ids.end());
  Manifest m{base_dir, {}};
  for (const auto& r : rows)
    if (keep.count(r.session_id)) m.rows.push_back(r);
  return m;
}

Manifest parseManifest(const std::string& text, const std::filesystem::path& base_dir) {
  Manifest m{base_dir, {}};
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kManifestHeader)
    fail(ErrorKind::DegenerateInput, std::string("manifest: header must be ") + kManifestHeader);
  std::set<std::pair<std::string, std::int64_t>> keys;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = splitCsvLine(line);
    const std::string where = "manifest line " + std::to_string(line_no);
    if (f.size() != 11) fail(ErrorKind::DegenerateInput, where + ": expected 11 fields, found " + std::to_string(f.size()));
    ManifestRow r;
    r.session_id = f[0];
    r.subject_id = f[1];
    r.frame_index = parseInt(f[2], where + " frame_index");
    r.image_path = f[3];
    r.label = static_cast<int>(parseInt(f[4], where + " label"));
    if (r.label != 0 && r.label != 1) fail(ErrorKind::DegenerateInput, where + ": label must be 0 or 1");
    const bool any_pose = !f[5].empty() || !f[6].empty() || !f[7].empty();
    if (any_pose) {
      if (f[5].empty() || f[6].empty() || f[7].empty())
        fail(ErrorKind::DegenerateInput, where + ": yaw, pitch and roll must be given together");
      r.pose = HeadPose{parseReal(f[5], where + " yaw"), parseReal(f[6], where + " pitch"), parseReal(f[7], where + " roll")};
      if (!r.pose->valid()) fail(ErrorKind::DegenerateInput, where + ": head pose out of range");
    }
    const auto lm = parseInt(f[8], where + " landmark_available");
    if (lm != 0 && lm != 1) fail(ErrorKind::DegenerateInput, where + ": landmark_available must be 0 or 1");
    r.landmark_available = lm == 1;
    r.diagnosis = f[9];
    r.protocol = f[10];
    if (r.session_id.empty() || r.subject_id.empty() || r.image_path.empty())
      fail(ErrorKind::DegenerateInput, where + ": session_id, subject_id and image_path are required");
    if (!keys.emplace(r.session_id, r.frame_index).second)
      fail(ErrorKind::DegenerateInput, where + ": duplicate (session_id, frame_index)");
    m.rows.push_back(std::move(r));
  }
  return m;
}

Manifest readManifest(const std::filesystem::path& path) {
  return parseManifest(readText(path), path.parent_path());
}

std::string manifestCsv(const Manifest& m) {
  std::ostringstream s;
  s << kManifestHeader << '\n';
  for (const auto& r : m.rows) {
    s << r.session_id << ',' << r.subject_id << ',' << r.frame_index << ',' << r.image_path << ',' << r.label << ',';
    if (r.pose)
      s << formatReal(r.pose->yaw) << ',' << formatReal(r.pose->pitch) << ',' << formatReal(r.pose->roll);
    else
      s << ",,";
    s << ',' << (r.landmark_available ? 1 : 0) << ',' << r.diagnosis << ',' << r.protocol << '\n';
  }
  return s.str();
}

Manifest manifestFromDataset(const std::vector<DatasetFrame>& frames) {
  Manifest m;
  m.rows.reserve(frames.size());
  for (const auto& f : frames) {
    ManifestRow r;
    r.session_id = f.session_id;
    r.subject_id = f.subject_id;
    r.frame_index = f.frame_index;
    r.image_path = framePath(f.session_id, f.frame_index);
    r.label = f.sample.eye_contact ? 1 : 0;
    r.landmark_available = f.sample.landmark_available;
    if (r.landmark_available) r.pose = f.sample.pose;
    r.diagnosis = f.diagnosis;
    r.protocol = f.protocol;
    m.rows.push_back(std::move(r));
  }
  return m;
}

// ---------------------------------------------------------------------------
// RunConfig

const std::vector<std::string>& RunConfig::knownKeys() {
  static const std::vector<std::string> keys{
      "seed",
      "synth.n",
      "synth.patch_size",
      "synth.positive_rate",
      "synth.contact_threshold",
      "synth.negative_min_angle",
      "synth.negative_max_angle",
      "synth.yaw_range",
      "synth.pitch_range",
      "synth.roll_range",
      "synth.occlusion_rate",
      "synth.session_length",
      "synth.subjects",
      "synth.asd_fraction",
      "picnn.input_size",
      "picnn.channel_scale",
      "picnn.fc_width",
      "picnn.pose_loss_weight",
      "picnn.batch_size",
      "picnn.iterations",
      "picnn.lr",
      "picnn.momentum",
      "picnn.weight_decay",
      "picnn.init_std",
      "train.rebalance_target",
      "train.allow_flip",
      "train.max_rotation",
      "train.brightness",
      "peec.clusters",
      "peec.trees",
      "peec.candidates",
      "gazelock.pca_dims",
      "gazelock.mda_dims",
      "gazelock.pose_buckets",
      "gazelock.svm_c",
      "gazelock.svm_epochs",
      "eval.folds",
      "selection.classes",
      "selection.bootstrap_frames",
  };
  return keys;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::UsageError, "config line " + std::to_string(line_no) + ": expected key=value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(readText(path)); }

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = knownKeys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) fail(ErrorKind::UsageError, "unknown config key '" + key + "'");
  if (value.empty()) fail(ErrorKind::UsageError, "config key '" + key + "' has an empty value");
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) != 0; }

double RunConfig::number(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parseReal(it->second, key);
  } catch (const Error& e) {
    fail(ErrorKind::UsageError, e.what());
  }
}

int RunConfig::integer(const std::string& key, int fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return static_cast<int>(parseInt(it->second, key));
  } catch (const Error& e) {
    fail(ErrorKind::UsageError, e.what());
  }
}

std::uint64_t RunConfig::seed(std::uint64_t fallback) const {
  const auto it = values_.find("seed");
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorKind::UsageError, "seed must be an unsigned integer");
  return v;
}

SynthConfig RunConfig::synth() const {
  SynthConfig c;
  c.patch_size = integer("synth.patch_size", c.patch_size);
  c.positive_rate = number("synth.positive_rate", c.positive_rate);
  c.contact_threshold_deg = number("synth.contact_threshold", c.contact_threshold_deg);
  c.negative_min_angle_deg = number("synth.negative_min_angle", c.negative_min_angle_deg);
  c.negative_max_angle_deg = number("synth.negative_max_angle", c.negative_max_angle_deg);
  c.yaw_range = number("synth.yaw_range", c.yaw_range);
  c.pitch_range = number("synth.pitch_range", c.pitch_range);
  c.roll_range = number("synth.roll_range", c.roll_range);
  c.occlusion_rate = number("synth.occlusion_rate", c.occlusion_rate);
  c.session_length = integer("synth.session_length", c.session_length);
  c.subjects = integer("synth.subjects", c.subjects);
  c.asd_fraction = number("synth.asd_fraction", c.asd_fraction);
  return c;
}

PicnnConfig RunConfig::picnn(bool pose_branch) const {
  PicnnConfig c = PicnnConfig::desk();
  c.pose_branch = pose_branch;
  c.input_size = integer("picnn.input_size", c.input_size);
  c.channel_scale = number("picnn.channel_scale", c.channel_scale);
  c.fc_width = integer("picnn.fc_width", c.fc_width);
  c.pose_loss_weight = number("picnn.pose_loss_weight", c.pose_loss_weight);
  c.batch_size = integer("picnn.batch_size", c.batch_size);
  c.momentum = number("picnn.momentum", c.momentum);
  c.weight_decay = number("picnn.weight_decay", c.weight_decay);
  c.init_std = number("picnn.init_std", c.init_std);
  if (has("picnn.lr")) {
    const double lr = number("picnn.lr", 0.005);
    c.lr_schedule = {{c.lr_schedule.front().first, lr}, {c.iterations(), lr / 10.0}};
  }
  if (has("picnn.iterations")) c.rescaleSchedule(integer("picnn.iterations", c.iterations()));
  c.validate();
  return c;
}

PeecParams RunConfig::peec() const {
  PeecParams p;
  p.clusters = integer("peec.clusters", p.clusters);
  p.forest.n_trees = integer("peec.trees", p.forest.n_trees);
  p.forest.candidates_per_node = integer("peec.candidates", p.forest.candidates_per_node);
  return p;
}

GazeLockParams RunConfig::gazelock() const {
  GazeLockParams p;
  p.pca_dims = integer("gazelock.pca_dims", p.pca_dims);
  p.mda_dims = integer("gazelock.mda_dims", p.mda_dims);
  p.pose_buckets = integer("gazelock.pose_buckets", p.pose_buckets);
  p.svm.c = number("gazelock.svm_c", p.svm.c);
  p.svm.epochs = integer("gazelock.svm_epochs", p.svm.epochs);
  return p;
}

AugmentLimits RunConfig::augmentLimits() const {
  AugmentLimits l;
  l.allow_flip = integer("train.allow_flip", 1) != 0;
  l.max_rotation_deg = number("train.max_rotation", l.max_rotation_deg);
  l.brightness = number("train.brightness", l.brightness);
  return l;
}

// ---------------------------------------------------------------------------
// Frames

Method parseMethod(const std::string& name) {
  if (name == "picnn") return Method::Picnn;
  if (name == "alexnet") return Method::Alexnet;
  if (name == "peec") return Method::Peec;
  if (name == "gazelock") return Method::GazeLock;
  fail(ErrorKind::UsageError, "unknown method '" + name + "' (expected picnn, alexnet, peec or gazelock)");
}

std::string methodName(Method m) {
  switch (m) {
    case Method::Picnn: return "picnn";
    case Method::Alexnet: return "alexnet";
    case Method::Peec: return "peec";
    case Method::GazeLock: return "gazelock";
  }
  return "unknown";
}

std::vector<LoadedFrame> loadFrames(const Manifest& manifest) {
  std::vector<LoadedFrame> frames(manifest.rows.size());
  parallelFor(frames.size(), [&](std::size_t i) {
    frames[i].row = &manifest.rows[i];
    frames[i].patch = readNetpbm(manifest.imagePath(manifest.rows[i]));
  });
  return frames;
}

std::vector<LoadedFrame> selectSessions(const std::vector<LoadedFrame>& frames,
                                        const std::vector<std::string>& session_ids) {
  const std::unordered_set<std::string> keep(session_ids.begin(), session_ids.end());
  std::vector<LoadedFrame> out;
  for (const auto& f : frames)
    if (keep.count(f.row->session_id)) out.push_back(f);
  return out;
}

FrameSet frameSetFromDataset(const std::vector<DatasetFrame>& data) {
  FrameSet set;
  set.manifest = manifestFromDataset(data);
  set.frames.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    set.frames[i].row = &set.manifest.rows[i];
    set.frames[i].patch = data[i].sample.patch;
  }
  return set;
}

EyeFrame toEyeFrame(const LoadedFrame& frame) {
  EyeFrame e;
  e.label = frame.row->label;
  e.pose = frame.row->pose;
  if (!frame.row->landmark_available || !frame.row->pose) return e;
  const auto c = surrogateEyeCenters(*frame.row->pose, frame.patch.width);
  try {
    e.eyes = alignEyes(frame.patch, c[0], c[1], frame.row->pose->roll);
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::OutOfBounds) throw;
  }
  return e;
}

std::vector<TrainSample> buildTrainSamples(const std::vector<LoadedFrame>& frames, double target,
                                           const AugmentLimits& limits, Rng& rng, RebalancePlan* plan_out) {
  std::vector<int> labels(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) labels[i] = frames[i].row->label;
  RebalancePlan plan = rebalance(labels, target, rng);
  std::vector<TrainSample> out(plan.entries.size());
  parallelFor(out.size(), [&](std::size_t i) {
    const auto& entry = plan.entries[i];
    const auto& src = frames[entry.source];
    const AugmentSpec spec = rebalanceAugment(entry, limits);
    auto& s = out[i];
    s.patch = augment(src.patch, spec);
    s.label = src.row->label;
    if (src.row->pose) {
      HeadPose p = *src.row->pose;
      if (spec.flip) {
        p.yaw = -p.yaw;
        p.roll = -p.roll;
      }
      p.roll += spec.rotation_deg;
      s.pose = {p.yaw / 90.0, p.pitch / 90.0, p.roll / 90.0};
      s.pose_mask = 1;
    }
  });
  if (plan_out) *plan_out = std::move(plan);
  return out;
}

TrainedModel trainMethod(Method method, const std::vector<LoadedFrame>& frames, const RunConfig& config, Rng& rng,
                         const TrainHooks& hooks) {
  if (frames.empty()) fail(ErrorKind::DegenerateInput, "train: no frames");
  TrainedModel out;
  out.method = method;
  out.container.add(kTagMethod, std::vector<double>{static_cast<double>(method)});
  switch (method) {
    case Method::Picnn:
    case Method::Alexnet: {
      const PicnnConfig cfg = config.picnn(method == Method::Picnn);
      const auto samples = buildTrainSamples(frames, config.rebalanceTarget(), config.augmentLimits(), rng);
      TrainOptions opts;
      opts.progress = hooks.progress;
      auto result = trainPicnn(samples, cfg, rng, opts);
      savePicnn(out.container, result.model);
      out.log_csv = trainLogCsv(result.log);
      out.used = frames.size();
      break;
    }
    case Method::Peec:
    case Method::GazeLock: {
      std::vector<EyeFrame> eyes(frames.size());
      parallelFor(frames.size(), [&](std::size_t i) { eyes[i] = toEyeFrame(frames[i]); });
      if (method == Method::Peec) {
        const auto r = trainPeec(eyes, rng, config.peec());
        savePeec(out.container, r.model);
        out.used = r.used;
        out.excluded = r.excluded;
      } else {
        const auto r = trainGazeLock(eyes, rng, config.gazelock());
        saveGazeLock(out.container, r.model);
        out.used = r.used;
        out.excluded = r.excluded;
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detector

Detector Detector::fromContainer(const ModelContainer& c) {
  Detector d;
  const auto& tag = c.get(kTagMethod).values;
  if (tag.size() != 1) fail(ErrorKind::IoError, "model file: malformed method record");
  const int m = static_cast<int>(tag[0]);
  if (m < 1 || m > 4) fail(ErrorKind::IoError, "model file: unknown method id " + std::to_string(m));
  d.method_ = static_cast<Method>(m);
  switch (d.method_) {
    case Method::Picnn:
    case Method::Alexnet: d.picnn_.emplace(loadPicnn(c)); break;
    case Method::Peec: d.peec_.emplace(loadPeec(c)); break;
    case Method::GazeLock: d.gazelock_.emplace(loadGazeLock(c)); break;
  }
  return d;
}

Detector Detector::load(const std::filesystem::path& path) { return fromContainer(ModelContainer::load(path)); }

std::vector<std::optional<double>> Detector::score(const std::vector<LoadedFrame>& frames) const {
  std::vector<std::optional<double>> out(frames.size());
  if (picnn_) {
    std::vector<FacePatch> patches;
    patches.reserve(frames.size());
    for (const auto& f : frames) patches.push_back(f.patch);
    const auto p = predictPicnn(*picnn_, patches);
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i];
    return out;
  }
  parallelFor(frames.size(), [&](std::size_t i) {
    const EyeFrame e = toEyeFrame(frames[i]);
    out[i] = peec_ ? predictPeec(*peec_, e) : predictGazeLock(*gazelock_, e);
  });
  return out;
}

std::vector<ScoredFrame> scoreFrames(const Detector& detector, const std::vector<LoadedFrame>& frames) {
  const auto scores = detector.score(frames);
  std::vector<ScoredFrame> out(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i)
    out[i] = {frames[i].row->session_id, frames[i].row->frame_index, frames[i].row->label, scores[i]};
  return out;
}

std::string scoresCsv(const std::vector<ScoredFrame>& frames) {
  std::ostringstream s;
  s << "session_id,frame_index,truth,score\n";
  for (const auto& f : frames) {
    s << f.session_id << ',' << f.frame_index << ',' << f.truth << ',';
    if (f.score) s << formatReal(*f.score);
    s << '\n';
  }
  return s.str();
}

std::vector<ScoredFrame> parseScoresCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "session_id,frame_index,truth,score")
    fail(ErrorKind::DegenerateInput, "scores: header must be session_id,frame_index,truth,score");
  std::vector<ScoredFrame> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto f = splitCsvLine(line);
    if (f.size() == 3) f.emplace_back();
    const std::string where = "scores line " + std::to_string(line_no);
    if (f.size() != 4) fail(ErrorKind::DegenerateInput, where + ": expected 4 fields");
    ScoredFrame s;
    s.session_id = f[0];
    s.frame_index = parseInt(f[1], where + " frame_index");
    s.truth = static_cast<int>(parseInt(f[2], where + " truth"));
    if (s.truth != 0 && s.truth != 1) fail(ErrorKind::DegenerateInput, where + ": truth must be 0 or 1");
    if (!f[3].empty()) s.score = parseReal(f[3], where + " score");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gc
