#include "gazecontact/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"
#include "gazecontact/plot.hpp"

namespace gc {

double precision(const ConfusionCounts& c) noexcept {
  return c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
}

double recall(const ConfusionCounts& c) noexcept {
  return c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
}

double f1(const ConfusionCounts& c) noexcept {
  if (c.tp == 0) return 0.0;
  const double p = precision(c), r = recall(c);
  return 2.0 * p * r / (p + r);
}

double mcc(const ConfusionCounts& c) noexcept {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  const double d1 = tp + fp, d2 = tp + fn, d3 = tn + fp, d4 = tn + fn;
  if (d1 == 0 || d2 == 0 || d3 == 0 || d4 == 0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(d1 * d2 * d3 * d4);
}

ConfusionCounts countAt(std::span<const ScoredFrame> frames, double threshold) {
  ConfusionCounts c;
  for (const auto& f : frames) {
    const bool predicted = f.score && *f.score >= threshold;
    if (f.truth == 1) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

MetricsReport sweepThresholds(std::span<const ScoredFrame> frames) {
  MetricsReport r;
  std::vector<std::pair<double, int>> scored;
  scored.reserve(frames.size());
  for (const auto& f : frames) {
    if (f.truth != 0 && f.truth != 1) fail(ErrorKind::DegenerateInput, "sweepThresholds: truth must be 0 or 1");
    (f.truth == 1 ? r.positives : r.negatives) += 1;
    if (f.score) {
      if (!std::isfinite(*f.score)) fail(ErrorKind::DegenerateInput, "sweepThresholds: non-finite score");
      scored.emplace_back(*f.score, f.truth);
    } else {
      ++r.unscored;
    }
  }
  if (r.positives == 0 || r.negatives == 0)
    fail(ErrorKind::DegenerateInput, "sweepThresholds: both truth classes must be present");
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  ConfusionCounts c;
  c.fn = r.positives;
  c.tn = r.negatives;
  double prev_recall = 0.0;
  bool have_best = false;
  for (std::size_t i = 0; i < scored.size();) {
    const double t = scored[i].first;
    for (; i < scored.size() && scored[i].first == t; ++i) {
      if (scored[i].second == 1) {
        ++c.tp;
        --c.fn;
      } else {
        ++c.fp;
        --c.tn;
      }
    }
    const double p = precision(c), rec = recall(c);
    r.curve.push_back({t, p, rec});
    r.auc_pr += (rec - prev_recall) * p;
    prev_recall = rec;
    const double fv = f1(c), mv = mcc(c);
    if (!have_best || fv > r.max_f1) {
      r.max_f1 = fv;
      r.precision_at_max_f1 = p;
      r.recall_at_max_f1 = rec;
      r.threshold_at_max_f1 = t;
    }
    if (!have_best || mv > r.max_mcc) r.max_mcc = mv;
    have_best = true;
  }
  return r;
}

std::string reportCsv(const MetricsReport& r) {
  std::ostringstream s;
  s << "metric,value\n";
  s << "max_f1," << formatReal(r.max_f1) << '\n';
  s << "max_mcc," << formatReal(r.max_mcc) << '\n';
  s << "auc_pr," << formatReal(r.auc_pr) << '\n';
  s << "precision," << formatReal(r.precision_at_max_f1) << '\n';
  s << "recall," << formatReal(r.recall_at_max_f1) << '\n';
  s << "threshold," << formatReal(r.threshold_at_max_f1) << '\n';
  s << "positives," << r.positives << '\n';
  s << "negatives," << r.negatives << '\n';
  s << "unscored," << r.unscored << '\n';
  return s.str();
}

std::string curveCsv(const MetricsReport& r) {
  std::ostringstream s;
  s << "threshold,precision,recall\n";
  for (const auto& p : r.curve)
    s << formatReal(p.threshold) << ',' << formatReal(p.precision) << ',' << formatReal(p.recall) << '\n';
  return s.str();
}

std::string curveSvg(const MetricsReport& r, const std::string& title) {
  PlotSeries pr{"AP " + formatReal(std::round(r.auc_pr * 1000) / 1000), {}};
  for (const auto& p : r.curve) pr.points.emplace_back(p.recall, p.precision);
  return lineChartSvg({title, "recall", "precision", 0, 1, 0, 1}, {pr});
}

// ---------------------------------------------------------------------------

int FoldSplit::foldOf(const std::string& session_id) const {
  for (int f = 0; f < n_folds; ++f)
    if (std::binary_search(test_sessions[f].begin(), test_sessions[f].end(), session_id)) return f;
  return -1;
}

std::vector<std::string> FoldSplit::trainSessions(int fold) const {
  std::vector<std::string> out;
  for (int f = 0; f < n_folds; ++f)
    if (f != fold) out.insert(out.end(), test_sessions[f].begin(), test_sessions[f].end());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::string stratumOf(const SessionMeta& s) { return s.diagnosis + "|" + s.protocol; }

// subject -> stratum of its first listed session
std::map<std::string, std::string> subjectStrata(std::span<const SessionMeta> sessions) {
  std::map<std::string, std::string> out;
  for (const auto& s : sessions) out.emplace(s.subject_id, stratumOf(s));
  return out;
}

}  // namespace

FoldSplit makeFolds(std::span<const SessionMeta> sessions, int n_folds, Rng& rng) {
  if (n_folds < 2) fail(ErrorKind::DegenerateInput, "makeFolds: need at least 2 folds");
  std::set<std::string> seen;
  for (const auto& s : sessions)
    if (!seen.insert(s.session_id).second) fail(ErrorKind::DegenerateInput, "makeFolds: duplicate session " + s.session_id);
  const auto strata_of = subjectStrata(sessions);
  if (strata_of.size() < static_cast<std::size_t>(n_folds))
    fail(ErrorKind::DegenerateInput, "makeFolds: " + std::to_string(strata_of.size()) + " subjects cannot fill " +
                                         std::to_string(n_folds) + " folds");

  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& [subject, stratum] : strata_of) strata[stratum].push_back(subject);

  std::map<std::string, int> fold_of_subject;
  std::size_t position = 0;
  for (auto& [stratum, subjects] : strata) {
    rng.shuffle(subjects);
    for (const auto& subject : subjects) fold_of_subject[subject] = static_cast<int>(position++ % n_folds);
  }

  FoldSplit split;
  split.n_folds = n_folds;
  split.test_sessions.resize(static_cast<std::size_t>(n_folds));
  split.test_subjects.resize(static_cast<std::size_t>(n_folds));
  for (const auto& [subject, fold] : fold_of_subject) split.test_subjects[fold].push_back(subject);
  for (const auto& s : sessions) split.test_sessions[fold_of_subject[s.subject_id]].push_back(s.session_id);
  for (auto& v : split.test_sessions) std::sort(v.begin(), v.end());
  return split;
}

std::vector<std::string> checkFolds(const FoldSplit& split, std::span<const SessionMeta> sessions) {
  std::vector<std::string> problems;
  std::map<std::string, int> session_fold;
  for (int f = 0; f < split.n_folds; ++f) {
    if (split.test_sessions[f].empty()) problems.push_back("fold " + std::to_string(f) + " is empty");
    for (const auto& s : split.test_sessions[f])
      if (!session_fold.emplace(s, f).second) problems.push_back("session " + s + " is in more than one fold");
  }
  std::map<std::string, int> subject_fold;
  std::map<std::string, std::vector<int>> stratum_counts;
  const auto strata_of = subjectStrata(sessions);
  for (const auto& s : sessions) {
    auto it = session_fold.find(s.session_id);
    if (it == session_fold.end()) {
      problems.push_back("session " + s.session_id + " is in no fold");
      continue;
    }
    auto [sf, inserted] = subject_fold.emplace(s.subject_id, it->second);
    if (inserted) {
      auto& counts = stratum_counts[strata_of.at(s.subject_id)];
      counts.resize(static_cast<std::size_t>(split.n_folds), 0);
      ++counts[it->second];
    } else if (sf->second != it->second) {
      problems.push_back("subject " + s.subject_id + " appears in folds " + std::to_string(sf->second) + " and " +
                         std::to_string(it->second));
    }
  }
  if (session_fold.size() != sessions.size()) problems.push_back("folds list sessions that are not in the roster");
  for (const auto& [stratum, counts] : stratum_counts) {
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    if (*hi - *lo > 1) problems.push_back("stratum " + stratum + " is unevenly spread across folds");
  }
  return problems;
}

std::string foldsCsv(const FoldSplit& split, std::span<const SessionMeta> sessions) {
  std::ostringstream s;
  s << "session_id,subject_id,diagnosis,protocol,fold\n";
  for (const auto& m : sessions)
    s << m.session_id << ',' << m.subject_id << ',' << m.diagnosis << ',' << m.protocol << ',' << split.foldOf(m.session_id)
      << '\n';
  return s.str();
}

FoldSplit parseFoldsCsv(const std::string& text, std::vector<SessionMeta>* sessions) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("session_id,subject_id,diagnosis,protocol,fold", 0) != 0)
    fail(ErrorKind::DegenerateInput, "folds: header must be session_id,subject_id,diagnosis,protocol,fold");
  std::vector<std::pair<SessionMeta, int>> rows;
  int max_fold = -1;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = splitCsvLine(line);
    if (f.size() != 5) fail(ErrorKind::DegenerateInput, "folds: expected 5 fields in '" + line + "'");
    int fold = -1;
    const auto [p, ec] = std::from_chars(f[4].data(), f[4].data() + f[4].size(), fold);
    if (ec != std::errc() || p != f[4].data() + f[4].size() || fold < 0)
      fail(ErrorKind::DegenerateInput, "folds: bad fold index '" + f[4] + "'");
    max_fold = std::max(max_fold, fold);
    rows.push_back({{f[0], f[1], f[2], f[3]}, fold});
  }
  if (rows.empty()) fail(ErrorKind::DegenerateInput, "folds: no sessions");
  FoldSplit split;
  split.n_folds = max_fold + 1;
  split.test_sessions.resize(static_cast<std::size_t>(split.n_folds));
  split.test_subjects.resize(static_cast<std::size_t>(split.n_folds));
  for (const auto& [m, fold] : rows) {
    split.test_sessions[static_cast<std::size_t>(fold)].push_back(m.session_id);
    auto& subj = split.test_subjects[static_cast<std::size_t>(fold)];
    if (std::find(subj.begin(), subj.end(), m.subject_id) == subj.end()) subj.push_back(m.subject_id);
  }
  for (auto& v : split.test_sessions) std::sort(v.begin(), v.end());
  for (auto& v : split.test_subjects) std::sort(v.begin(), v.end());
  if (sessions) {
    sessions->clear();
    for (const auto& r : rows) sessions->push_back(r.first);
  }
  return split;
}

// ---------------------------------------------------------------------------

double RebalancePlan::positiveFraction() const noexcept {
  const auto n = positives + negatives;
  return n ? static_cast<double>(positives) / static_cast<double>(n) : 0.0;
}

RebalancePlan rebalance(std::span<const int> labels, double target, Rng& rng) {
  if (!(target > 0.0 && target < 1.0)) fail(ErrorKind::DegenerateInput, "rebalance: target must lie in (0, 1)");
  std::vector<std::uint32_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) pos.push_back(static_cast<std::uint32_t>(i));
    else if (labels[i] == 0) neg.push_back(static_cast<std::uint32_t>(i));
    else fail(ErrorKind::DegenerateInput, "rebalance: labels must be 0 or 1");
  }
  if (pos.empty() || neg.empty()) fail(ErrorKind::DegenerateInput, "rebalance: both classes must be present");

  const double P = static_cast<double>(pos.size()), N = static_cast<double>(neg.size());
  const double odds = target / (1.0 - target);
  const double f = odds / (P / N);
  auto pos_out = static_cast<std::size_t>(std::llround(P * std::pow(f, 0.65)));
  auto neg_out = static_cast<std::size_t>(std::llround(static_cast<double>(pos_out) / odds));
  if (neg_out > neg.size()) {
    neg_out = neg.size();
    pos_out = static_cast<std::size_t>(std::llround(N * odds));
  }
  pos_out = std::max<std::size_t>(pos_out, 1);
  neg_out = std::max<std::size_t>(neg_out, 1);

  RebalancePlan plan;
  plan.entries.reserve(pos_out + neg_out);
  if (pos_out >= pos.size()) {
    for (auto i : pos) plan.entries.push_back({i, 0, true});
    std::vector<std::uint32_t> order = pos;
    rng.shuffle(order);
    for (std::size_t j = 0; j < pos_out - pos.size(); ++j)
      plan.entries.push_back({order[j % order.size()], rng.nextU64() | 1u, true});
  } else {
    for (std::size_t j = 0; j < pos_out; ++j) std::swap(pos[j], pos[j + rng.below(pos.size() - j)]);
    std::sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(pos_out));
    for (std::size_t j = 0; j < pos_out; ++j) plan.entries.push_back({pos[j], 0, true});
  }
  for (std::size_t j = 0; j < neg_out; ++j) std::swap(neg[j], neg[j + rng.below(neg.size() - j)]);
  std::sort(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(neg_out));
  for (std::size_t j = 0; j < neg_out; ++j) plan.entries.push_back({neg[j], 0, false});
  plan.positives = pos_out;
  plan.negatives = neg_out;
  return plan;
}

AugmentSpec rebalanceAugment(const RebalanceEntry& entry, const AugmentLimits& limits) {
  if (entry.augment_seed == 0) return {};
  Rng r(entry.augment_seed);
  return sampleAugment(limits, r);
}

// ---------------------------------------------------------------------------

namespace {

void meanStd(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<AvailabilityRow> availabilityRates(std::span<const AvailabilityRecord> records) {
  struct Tally {
    std::string group;
    std::size_t positives = 0, faces = 0, landmarks = 0;
  };
  std::map<std::string, Tally> sessions;
  for (const auto& r : records) {
    auto& t = sessions[r.session_id];
    if (t.group.empty()) t.group = r.group;
    if (r.truth != 1) continue;
    ++t.positives;
    t.faces += r.face_found;
    t.landmarks += r.face_found && r.landmark_available;
  }
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::map<std::string, std::size_t> frames;
  for (const auto& [id, t] : sessions) {
    if (t.positives == 0) continue;
    const double n = static_cast<double>(t.positives);
    for (const std::string& g : {t.group, std::string("All")}) {
      groups[g].first.push_back(100.0 * static_cast<double>(t.faces) / n);
      groups[g].second.push_back(100.0 * static_cast<double>(t.landmarks) / n);
      frames[g] += t.positives;
    }
  }
  std::vector<AvailabilityRow> rows;
  for (const auto& [g, rates] : groups) {
    if (g == "All") continue;
    AvailabilityRow row{g, rates.first.size(), frames[g]};
    meanStd(rates.first, row.face_mean, row.face_std);
    meanStd(rates.second, row.landmark_mean, row.landmark_std);
    rows.push_back(row);
  }
  if (auto it = groups.find("All"); it != groups.end()) {
    AvailabilityRow row{"All", it->second.first.size(), frames["All"]};
    meanStd(it->second.first, row.face_mean, row.face_std);
    meanStd(it->second.second, row.landmark_mean, row.landmark_std);
    rows.push_back(row);
  }
  return rows;
}

std::string availabilityCsv(std::span<const AvailabilityRow> rows) {
  std::ostringstream s;
  s << "group,sessions,positive_frames,face_found_mean,face_found_std,landmark_mean,landmark_std\n";
  for (const auto& r : rows)
    s << r.group << ',' << r.sessions << ',' << r.frames << ',' << formatReal(r.face_mean) << ',' << formatReal(r.face_std)
      << ',' << formatReal(r.landmark_mean) << ',' << formatReal(r.landmark_std) << '\n';
  return s.str();
}

// ---------------------------------------------------------------------------

std::vector<SweepPoint> trainingSizeSweep(std::span<const int> session_counts,
                                          std::span<const std::string> train_sessions, Rng& rng,
                                          const std::function<MetricsReport(const std::vector<std::string>&)>& evaluate) {
  if (session_counts.empty()) fail(ErrorKind::DegenerateInput, "trainingSizeSweep: no session counts");
  for (int c : session_counts)
    if (c <= 0 || static_cast<std::size_t>(c) > train_sessions.size())
      fail(ErrorKind::DegenerateInput, "trainingSizeSweep: count " + std::to_string(c) + " outside [1, " +
                                           std::to_string(train_sessions.size()) + "]");
  std::vector<std::string> order(train_sessions.begin(), train_sessions.end());
  rng.shuffle(order);
  std::vector<SweepPoint> out;
  for (int c : session_counts) {
    std::vector<std::string> subset(order.begin(), order.begin() + c);
    std::sort(subset.begin(), subset.end());
    const auto r = evaluate(subset);
    out.push_back({c, r.precision_at_max_f1, r.recall_at_max_f1, r.max_f1, r.auc_pr});
  }
  return out;
}

std::string sweepCsv(std::span<const SweepPoint> points) {
  std::ostringstream s;
  s << "sessions,precision,recall,f1,auc_pr\n";
  for (const auto& p : points)
    s << p.sessions << ',' << formatReal(p.precision) << ',' << formatReal(p.recall) << ',' << formatReal(p.f1) << ','
      << formatReal(p.auc_pr) << '\n';
  return s.str();
}

std::string sweepSvg(std::span<const SweepPoint> points, const std::string& title) {
  PlotSeries prec{"precision", {}}, rec{"recall", {}};
  double x_hi = 1.0;
  for (const auto& p : points) {
    prec.points.emplace_back(p.sessions, p.precision);
    rec.points.emplace_back(p.sessions, p.recall);
    x_hi = std::max(x_hi, static_cast<double>(p.sessions));
  }
  return lineChartSvg({title, "training sessions", "score", 0, x_hi, 0, 1}, {prec, rec});
}

// ---------------------------------------------------------------------------

namespace {

template <std::size_t N>
void addTo(std::array<std::int64_t, N>& hist, double v, double lo, double hi) {
  auto bin = static_cast<std::int64_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(N)));
  bin = std::clamp<std::int64_t>(bin, 0, static_cast<std::int64_t>(N) - 1);
  ++hist[static_cast<std::size_t>(bin)];
}

template <std::size_t N>
HistogramPanel panel(const std::string& title, const std::array<std::int64_t, N>& h, double lo, double hi) {
  return {title, lo, hi, std::vector<std::int64_t>(h.begin(), h.end())};
}

}  // namespace

DatasetStats datasetStats(std::span<const StatsRecord> records) {
  DatasetStats s;
  for (const auto& r : records) {
    if (r.center_x && std::isfinite(*r.center_x)) addTo(s.center_x, *r.center_x, 0.0, 1.0);
    if (r.center_y && std::isfinite(*r.center_y)) addTo(s.center_y, *r.center_y, 0.0, 1.0);
    if (r.yaw && std::isfinite(*r.yaw)) addTo(s.yaw, *r.yaw, -90.0, 90.0);
    if (r.pitch && std::isfinite(*r.pitch)) addTo(s.pitch, *r.pitch, -90.0, 90.0);
    if (r.roll && std::isfinite(*r.roll)) addTo(s.roll, *r.roll, -90.0, 90.0);
  }
  return s;
}

std::string statsCsv(const DatasetStats& s) {
  std::ostringstream o;
  o << "quantity,bin,lo,hi,count\n";
  auto emit = [&](const char* name, const auto& h, double lo, double hi) {
    const double w = (hi - lo) / static_cast<double>(h.size());
    for (std::size_t i = 0; i < h.size(); ++i)
      o << name << ',' << i << ',' << formatReal(lo + w * static_cast<double>(i)) << ','
        << formatReal(lo + w * static_cast<double>(i + 1)) << ',' << h[i] << '\n';
  };
  emit("center_x", s.center_x, 0, 1);
  emit("center_y", s.center_y, 0, 1);
  emit("yaw", s.yaw, -90, 90);
  emit("pitch", s.pitch, -90, 90);
  emit("roll", s.roll, -90, 90);
  return o.str();
}

std::string statsSvg(const DatasetStats& s) {
  return histogramSvg({panel("face center x", s.center_x, 0, 1), panel("face center y", s.center_y, 0, 1),
                       panel("yaw", s.yaw, -90, 90), panel("pitch", s.pitch, -90, 90), panel("roll", s.roll, -90, 90)});
}

}  // namespace gc
