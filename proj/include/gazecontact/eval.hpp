#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazecontact/imaging.hpp"
#include "gazecontact/numerics.hpp"

namespace gc {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t total() const noexcept { return tp + fp + tn + fn; }
};

double precision(const ConfusionCounts& c) noexcept;
double recall(const ConfusionCounts& c) noexcept;
/// 0 when tp == 0.
double f1(const ConfusionCounts& c) noexcept;
/// 0 when any factor of the denominator is zero.
double mcc(const ConfusionCounts& c) noexcept;

struct ScoredFrame {
  std::string session_id;
  std::int64_t frame_index = 0;
  int truth = 0;
  std::optional<double> score;  // empty: the detector made no prediction
};

/// Frames without a score never count as predicted positives.
ConfusionCounts countAt(std::span<const ScoredFrame> frames, double threshold);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct MetricsReport {
  double max_f1 = 0.0;
  double max_mcc = 0.0;
  double auc_pr = 0.0;
  double precision_at_max_f1 = 0.0;
  double recall_at_max_f1 = 0.0;
  double threshold_at_max_f1 = 0.0;
  std::int64_t positives = 0;
  std::int64_t negatives = 0;
  std::int64_t unscored = 0;
  std::vector<PrPoint> curve;  // thresholds descending
};

/// Every distinct score is a threshold (score >= threshold predicts
/// positive). Average precision sums (R_i - R_{i-1}) P_i in descending
/// threshold order.
MetricsReport sweepThresholds(std::span<const ScoredFrame> frames);

std::string reportCsv(const MetricsReport& report);
std::string curveCsv(const MetricsReport& report);
std::string curveSvg(const MetricsReport& report, const std::string& title);

// ---------------------------------------------------------------------------

struct SessionMeta {
  std::string session_id;
  std::string subject_id;
  std::string diagnosis;
  std::string protocol;
};

struct FoldSplit {
  int n_folds = 0;
  std::vector<std::vector<std::string>> test_sessions;  // per fold, sorted
  std::vector<std::vector<std::string>> test_subjects;  // per fold, sorted

  int foldOf(const std::string& session_id) const;
  /// Sessions outside the given test fold.
  std::vector<std::string> trainSessions(int fold) const;
};

/// Subjects are grouped by (diagnosis, protocol of their first session),
/// shuffled within each group, and dealt round-robin across folds with the
/// dealing position carried over between groups.
FoldSplit makeFolds(std::span<const SessionMeta> sessions, int n_folds, Rng& rng);

/// Empty when the split is a valid partition that keeps subjects on one
/// side; otherwise human-readable problems.
std::vector<std::string> checkFolds(const FoldSplit& split, std::span<const SessionMeta> sessions);

std::string foldsCsv(const FoldSplit& split, std::span<const SessionMeta> sessions);
/// Inverse of foldsCsv; returns the split and fills `sessions` when non-null.
FoldSplit parseFoldsCsv(const std::string& text, std::vector<SessionMeta>* sessions = nullptr);

// ---------------------------------------------------------------------------

struct RebalanceEntry {
  std::uint32_t source = 0;
  std::uint64_t augment_seed = 0;  // 0: use the source unchanged
  bool positive = false;
};

struct RebalancePlan {
  std::vector<RebalanceEntry> entries;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double positiveFraction() const noexcept;
};

/// Moves the positive fraction to `target`. With f the required change of
/// the pos/neg ratio, positives grow by f^0.65 through augmented copies and
/// negatives are subsampled without replacement to close the ratio. If the
/// negatives run short, all negatives are kept and positives subsampled.
/// Augmented copies carry a seed for sampleAugment under `limits`.
RebalancePlan rebalance(std::span<const int> labels, double target, Rng& rng);

/// Per-entry augmentation; identity for original samples.
AugmentSpec rebalanceAugment(const RebalanceEntry& entry, const AugmentLimits& limits);

// ---------------------------------------------------------------------------

struct AvailabilityRecord {
  std::string session_id;
  std::string group;
  int truth = 0;
  bool face_found = true;
  bool landmark_available = false;
};

struct AvailabilityRow {
  std::string group;
  std::size_t sessions = 0;
  std::size_t frames = 0;
  double face_mean = 0.0, face_std = 0.0;          // percent
  double landmark_mean = 0.0, landmark_std = 0.0;  // percent
};

/// Truth-positive frames only. Per-session rates, then mean and sample
/// standard deviation across the sessions of each group, plus an "All" row.
std::vector<AvailabilityRow> availabilityRates(std::span<const AvailabilityRecord> records);
std::string availabilityCsv(std::span<const AvailabilityRow> rows);

// ---------------------------------------------------------------------------

struct SweepPoint {
  int sessions = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc_pr = 0.0;
};

/// Retrains on nested prefixes of a shuffled copy of `train_sessions`.
/// `evaluate` receives the subset and returns the test report.
std::vector<SweepPoint> trainingSizeSweep(std::span<const int> session_counts,
                                          std::span<const std::string> train_sessions, Rng& rng,
                                          const std::function<MetricsReport(const std::vector<std::string>&)>& evaluate);
std::string sweepCsv(std::span<const SweepPoint> points);
std::string sweepSvg(std::span<const SweepPoint> points, const std::string& title);

// ---------------------------------------------------------------------------

struct StatsRecord {
  std::optional<double> center_x, center_y;  // normalized to [0, 1]
  std::optional<double> yaw, pitch, roll;    // degrees
};

struct DatasetStats {
  static constexpr int kPositionBins = 50;
  static constexpr int kAngleBins = 36;
  std::array<std::int64_t, kPositionBins> center_x{}, center_y{};
  std::array<std::int64_t, kAngleBins> yaw{}, pitch{}, roll{};
};

/// Values outside the binning range land in the edge bins.
DatasetStats datasetStats(std::span<const StatsRecord> records);
std::string statsCsv(const DatasetStats& stats);
std::string statsSvg(const DatasetStats& stats);

}  // namespace gc
