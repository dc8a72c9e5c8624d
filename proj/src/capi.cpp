#include "gazecontact.h"

#include <cstdio>
#include <exception>
#include <filesystem>
#include <memory>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "gazecontact/error.hpp"
#include "gazecontact/fileio.hpp"
#include "gazecontact/pipeline.hpp"
#include "gazecontact/selection.hpp"
#include "gazecontact/synthface.hpp"

struct gc_config {
  gc::RunConfig config;
};

struct gc_dataset {
  gc::Manifest manifest;
  std::vector<gc::LoadedFrame> frames;
};

struct gc_model {
  gc::Method method = gc::Method::Picnn;
  std::string method_name;
  gc::ModelContainer container;
  std::string log_csv;
  std::size_t used = 0, excluded = 0;
  std::optional<gc::Detector> detector;

  const gc::Detector& open() {
    if (!detector) detector = gc::Detector::fromContainer(container);
    return *detector;
  }
};

namespace {

thread_local std::string g_last_error;

gc_status statusOf(gc::ErrorKind kind) {
  switch (kind) {
    case gc::ErrorKind::DegenerateInput: return GC_ERR_DEGENERATE_INPUT;
    case gc::ErrorKind::DimensionMismatch: return GC_ERR_DIMENSION_MISMATCH;
    case gc::ErrorKind::ShapeMismatch: return GC_ERR_SHAPE_MISMATCH;
    case gc::ErrorKind::OutOfBounds: return GC_ERR_OUT_OF_BOUNDS;
    case gc::ErrorKind::IoError: return GC_ERR_IO;
    case gc::ErrorKind::UsageError: return GC_ERR_USAGE;
    case gc::ErrorKind::NumericFailure: return GC_ERR_NUMERIC;
  }
  return GC_ERR_INTERNAL;
}

template <class F>
gc_status guarded(F&& body) {
  try {
    body();
    return GC_OK;
  } catch (const gc::Error& e) {
    g_last_error = e.what();
    return statusOf(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return GC_ERR_INTERNAL;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return GC_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GC_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return GC_ERR_INTERNAL;
  }
}

#define GC_REQUIRE(p)                                       \
  do {                                                      \
    if (!(p)) {                                             \
      g_last_error = std::string(#p) + " must not be null"; \
      return GC_ERR_INVALID_ARGUMENT;                       \
    }                                                       \
  } while (0)

void writeIf(const char* path, const std::string& text) {
  if (path) gc::atomicWrite(path, text);
}

std::string frameName(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d.ppm", index);
  return buf;
}

void requireDir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) gc::fail(gc::ErrorKind::IoError, "output directory does not exist: " + dir.string());
}

std::unique_ptr<gc_dataset> subsetOf(const gc_dataset& src, const std::vector<std::string>& sessions) {
  auto out = std::make_unique<gc_dataset>();
  out->manifest = src.manifest.subset(sessions);
  out->frames.reserve(out->manifest.rows.size());
  const std::unordered_set<std::string> keep(sessions.begin(), sessions.end());
  std::size_t r = 0;
  for (const auto& f : src.frames)
    if (keep.count(f.row->session_id)) out->frames.push_back({&out->manifest.rows[r++], f.patch});
  return out;
}

gc::MetricsReport scoreAndSweep(const gc::Detector& d, const std::vector<gc::LoadedFrame>& frames) {
  const auto scored = gc::scoreFrames(d, frames);
  return gc::sweepThresholds(scored);
}

}  // namespace

extern "C" {

const char* gc_version(void) { return "1.0.0"; }

const char* gc_status_name(gc_status status) {
  switch (status) {
    case GC_OK: return "ok";
    case GC_ERR_DEGENERATE_INPUT: return "degenerate input";
    case GC_ERR_DIMENSION_MISMATCH: return "dimension mismatch";
    case GC_ERR_SHAPE_MISMATCH: return "shape mismatch";
    case GC_ERR_OUT_OF_BOUNDS: return "out of bounds";
    case GC_ERR_IO: return "i/o error";
    case GC_ERR_USAGE: return "usage error";
    case GC_ERR_NUMERIC: return "numeric failure";
    case GC_ERR_INVALID_ARGUMENT: return "invalid argument";
    case GC_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* gc_last_error(void) { return g_last_error.c_str(); }

// ---- configuration --------------------------------------------------------

gc_status gc_config_new(gc_config** out) {
  GC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] { *out = new gc_config(); });
}

gc_status gc_config_load(const char* path, gc_config** out) {
  GC_REQUIRE(path);
  GC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] { *out = new gc_config{gc::RunConfig::load(path)}; });
}

gc_status gc_config_set(gc_config* config, const char* key, const char* value) {
  GC_REQUIRE(config);
  GC_REQUIRE(key);
  GC_REQUIRE(value);
  return guarded([&] { config->config.set(key, value); });
}

void gc_config_free(gc_config* config) { delete config; }

// ---- synthetic data -------------------------------------------------------

gc_status gc_synth_dataset(const gc_config* config, int n, uint64_t seed, const char* out_dir) {
  GC_REQUIRE(out_dir);
  return guarded([&] {
    const gc::RunConfig cfg = config ? config->config : gc::RunConfig{};
    if (n <= 0) n = cfg.integer("synth.n", 5000);
    if (n <= 0) gc::fail(gc::ErrorKind::UsageError, "synth: frame count must be positive");
    requireDir(out_dir);
    gc::Rng rng(seed);
    const auto frames = gc::generateDataset(n, cfg.synth(), rng);
    gc::writeDataset(out_dir, frames);
  });
}

gc_status gc_synth_stream(int frames, uint64_t seed, const char* out_dir) {
  GC_REQUIRE(out_dir);
  return guarded([&] {
    if (frames <= 0) gc::fail(gc::ErrorKind::UsageError, "stream: frame count must be positive");
    const std::filesystem::path dir(out_dir);
    requireDir(dir);
    gc::Rng rng(seed);
    const gc::StreamConfig sc;
    const auto stream = gc::generateStream(frames, sc, rng);
    std::filesystem::create_directories(dir / "frames");
    std::vector<std::vector<gc::DetectionBox>> dets, truth;
    for (const auto& f : stream) {
      gc::writeNetpbm(dir / "frames" / frameName(f.frame_index), gc::composeFrame(f, sc));
      auto& d = dets.emplace_back();
      for (const auto& b : f.detections) d.push_back({b.x, b.y, b.w, b.h, b.score, f.frame_index});
      auto& t = truth.emplace_back();
      if (f.child_detection >= 0) t.push_back(d[static_cast<std::size_t>(f.child_detection)]);
    }
    gc::atomicWrite(dir / "detections.jsonl", gc::detectionsJsonl(dets));
    gc::atomicWrite(dir / "truth.jsonl", gc::detectionsJsonl(truth));
  });
}

// ---- datasets -------------------------------------------------------------

gc_status gc_dataset_open(const char* manifest_path, gc_dataset** out) {
  GC_REQUIRE(manifest_path);
  GC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    auto ds = std::make_unique<gc_dataset>();
    ds->manifest = gc::readManifest(manifest_path);
    ds->frames = gc::loadFrames(ds->manifest);
    *out = ds.release();
  });
}

gc_status gc_dataset_fold(const gc_dataset* dataset, const char* folds_csv, int fold, gc_fold_side side,
                          gc_dataset** out) {
  GC_REQUIRE(dataset);
  GC_REQUIRE(folds_csv);
  GC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    const auto split = gc::parseFoldsCsv(gc::readText(folds_csv));
    if (fold < 0 || fold >= split.n_folds)
      gc::fail(gc::ErrorKind::UsageError,
               "fold " + std::to_string(fold) + " outside [0, " + std::to_string(split.n_folds) + ")");
    const auto sessions =
        side == GC_FOLD_TEST ? split.test_sessions[static_cast<std::size_t>(fold)] : split.trainSessions(fold);
    auto sub = subsetOf(*dataset, sessions);
    if (sub->frames.empty()) gc::fail(gc::ErrorKind::DegenerateInput, "fold selects no frames of this manifest");
    *out = sub.release();
  });
}

size_t gc_dataset_frames(const gc_dataset* dataset) { return dataset ? dataset->frames.size() : 0; }

size_t gc_dataset_sessions(const gc_dataset* dataset) { return dataset ? dataset->manifest.sessions().size() : 0; }

size_t gc_dataset_positives(const gc_dataset* dataset) {
  if (!dataset) return 0;
  std::size_t n = 0;
  for (const auto& r : dataset->manifest.rows) n += r.label == 1;
  return n;
}

void gc_dataset_free(gc_dataset* dataset) { delete dataset; }

gc_status gc_folds_write(const gc_dataset* dataset, const gc_config* config, int n_folds, uint64_t seed,
                         const char* out_csv) {
  GC_REQUIRE(dataset);
  GC_REQUIRE(out_csv);
  return guarded([&] {
    if (n_folds <= 0) n_folds = config ? config->config.integer("eval.folds", 5) : 5;
    const auto sessions = dataset->manifest.sessions();
    gc::Rng rng(seed);
    const auto split = gc::makeFolds(sessions, n_folds, rng);
    const auto problems = gc::checkFolds(split, sessions);
    if (!problems.empty()) gc::fail(gc::ErrorKind::DegenerateInput, "folds: " + problems.front());
    gc::atomicWrite(out_csv, gc::foldsCsv(split, sessions));
  });
}

// ---- models ---------------------------------------------------------------

gc_status gc_train(const gc_dataset* dataset, const char* method, const gc_config* config, uint64_t seed,
                   gc_progress_fn progress, void* user, gc_model** out) {
  GC_REQUIRE(dataset);
  GC_REQUIRE(method);
  GC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    const gc::RunConfig cfg = config ? config->config : gc::RunConfig{};
    const gc::Method m = gc::parseMethod(method);
    gc::TrainHooks hooks;
    if (progress)
      hooks.progress = [&](const gc::TrainLogRow& r) {
        progress(r.iteration, r.lr, r.loss.total, r.loss.ce, r.loss.pose, user);
      };
    gc::Rng rng(seed);
    auto trained = gc::trainMethod(m, dataset->frames, cfg, rng, hooks);
    auto model = std::make_unique<gc_model>();
    model->method = m;
    model->method_name = gc::methodName(m);
    model->container = std::move(trained.container);
    model->log_csv = std::move(trained.log_csv);
    model->used = trained.used;
    model->excluded = trained.excluded;
    *out = model.release();
  });
}

gc_status gc_model_load(const char* path, gc_model** out) {
  GC_REQUIRE(path);
  GC_REQUIRE(out);
  *out = nullptr;
  return guarded([&] {
    auto model = std::make_unique<gc_model>();
    model->container = gc::ModelContainer::load(path);
    model->method = model->open().method();
    model->method_name = gc::methodName(model->method);
    *out = model.release();
  });
}

gc_status gc_model_save(const gc_model* model, const char* path) {
  GC_REQUIRE(model);
  GC_REQUIRE(path);
  return guarded([&] { model->container.save(path); });
}

gc_status gc_model_save_log(const gc_model* model, const char* path) {
  GC_REQUIRE(model);
  GC_REQUIRE(path);
  return guarded([&] {
    if (model->log_csv.empty())
      gc::fail(gc::ErrorKind::UsageError, "no training log for method " + model->method_name);
    gc::atomicWrite(path, model->log_csv);
  });
}

const char* gc_model_method(const gc_model* model) { return model ? model->method_name.c_str() : ""; }

uint64_t gc_model_hash(const gc_model* model) {
  if (!model) return 0;
  const auto bytes = model->container.encode();
  return gc::contentHash(bytes);
}

size_t gc_model_used(const gc_model* model) { return model ? model->used : 0; }
size_t gc_model_excluded(const gc_model* model) { return model ? model->excluded : 0; }

void gc_model_free(gc_model* model) { delete model; }

gc_status gc_predict(const gc_model* model, const gc_dataset* dataset, const char* scores_csv, size_t* unscored) {
  GC_REQUIRE(model);
  GC_REQUIRE(dataset);
  return guarded([&] {
    const auto scored = gc::scoreFrames(const_cast<gc_model*>(model)->open(), dataset->frames);
    if (unscored) {
      *unscored = 0;
      for (const auto& s : scored) *unscored += !s.score.has_value();
    }
    writeIf(scores_csv, gc::scoresCsv(scored));
  });
}

gc_status gc_visualize(const gc_model* model, const char* image_path, const char* out_dir) {
  GC_REQUIRE(model);
  GC_REQUIRE(image_path);
  GC_REQUIRE(out_dir);
  return guarded([&] {
    const auto* net = const_cast<gc_model*>(model)->open().picnn();
    if (!net) gc::fail(gc::ErrorKind::UsageError, "viz needs a network model, got " + model->method_name);
    requireDir(out_dir);
    gc::dumpFiltersAndActivations(*net, gc::readNetpbm(image_path), out_dir);
  });
}

// ---- evaluation -----------------------------------------------------------

gc_status gc_evaluate(const char* scores_csv, const char* report_csv, const char* curve_csv, const char* curve_svg,
                      gc_metrics* out) {
  GC_REQUIRE(scores_csv);
  return guarded([&] {
    const auto frames = gc::parseScoresCsv(gc::readText(scores_csv));
    const auto r = gc::sweepThresholds(frames);
    writeIf(report_csv, gc::reportCsv(r));
    writeIf(curve_csv, gc::curveCsv(r));
    writeIf(curve_svg, gc::curveSvg(r, "Precision-recall"));
    if (out)
      *out = {r.max_f1,
              r.max_mcc,
              r.auc_pr,
              r.precision_at_max_f1,
              r.recall_at_max_f1,
              r.threshold_at_max_f1,
              static_cast<size_t>(r.positives),
              static_cast<size_t>(r.negatives),
              static_cast<size_t>(r.unscored)};
  });
}

gc_status gc_stats(const gc_dataset* dataset, const char* detections_jsonl, int frame_width, int frame_height,
                   const char* stats_csv, const char* stats_svg, const char* availability_csv) {
  return guarded([&] {
    std::vector<gc::StatsRecord> records;
    if (dataset)
      for (const auto& r : dataset->manifest.rows) {
        gc::StatsRecord s;
        if (r.pose) {
          s.yaw = r.pose->yaw;
          s.pitch = r.pose->pitch;
          s.roll = r.pose->roll;
        }
        records.push_back(s);
      }
    if (detections_jsonl) {
      if (frame_width <= 0 || frame_height <= 0)
        gc::fail(gc::ErrorKind::UsageError, "stats: frame size is required with detections");
      for (const auto& frame : gc::parseDetectionsJsonl(gc::readText(detections_jsonl)))
        for (const auto& b : frame) {
          gc::StatsRecord s;
          s.center_x = (b.x + 0.5 * b.w) / frame_width;
          s.center_y = (b.y + 0.5 * b.h) / frame_height;
          records.push_back(s);
        }
    }
    const auto stats = gc::datasetStats(records);
    writeIf(stats_csv, gc::statsCsv(stats));
    writeIf(stats_svg, gc::statsSvg(stats));
    if (availability_csv) {
      if (!dataset) gc::fail(gc::ErrorKind::UsageError, "stats: availability needs a dataset");
      std::vector<gc::AvailabilityRecord> av;
      for (const auto& r : dataset->manifest.rows)
        av.push_back({r.session_id, r.diagnosis, r.label, true, r.landmark_available});
      gc::atomicWrite(availability_csv, gc::availabilityCsv(gc::availabilityRates(av)));
    }
  });
}

gc_status gc_sweep(const gc_dataset* train, const gc_dataset* test, const char* method, const gc_config* config,
                   const int* session_counts, size_t n_counts, uint64_t seed, const char* sweep_csv,
                   const char* sweep_svg) {
  GC_REQUIRE(train);
  GC_REQUIRE(test);
  GC_REQUIRE(method);
  GC_REQUIRE(session_counts);
  return guarded([&] {
    const gc::RunConfig cfg = config ? config->config : gc::RunConfig{};
    const gc::Method m = gc::parseMethod(method);
    std::vector<std::string> sessions;
    for (const auto& s : train->manifest.sessions()) sessions.push_back(s.session_id);
    const std::vector<int> counts(session_counts, session_counts + n_counts);
    gc::Rng rng(seed);
    const auto points = gc::trainingSizeSweep(counts, sessions, rng, [&](const std::vector<std::string>& subset) {
      const auto frames = gc::selectSessions(train->frames, subset);
      gc::Rng trng = gc::Rng::substream(seed, subset.size());
      const auto trained = gc::trainMethod(m, frames, cfg, trng);
      return scoreAndSweep(gc::Detector::fromContainer(trained.container), test->frames);
    });
    writeIf(sweep_csv, gc::sweepCsv(points));
    writeIf(sweep_svg, gc::sweepSvg(points, "Training-size sweep (" + gc::methodName(m) + ")"));
  });
}

// ---- selection --------------------------------------------------------------

gc_status gc_select(const char* detections_jsonl, const char* frames_dir, const gc_config* config,
                    const char* child_csv, const char* child_jsonl) {
  GC_REQUIRE(detections_jsonl);
  GC_REQUIRE(frames_dir);
  return guarded([&] {
    const gc::RunConfig cfg = config ? config->config : gc::RunConfig{};
    gc::SelectionOptions opts;
    opts.classes = cfg.integer("selection.classes", opts.classes);
    opts.bootstrap_frames = cfg.integer("selection.bootstrap_frames", opts.bootstrap_frames);
    if (opts.classes < 1 || opts.classes > 4) gc::fail(gc::ErrorKind::UsageError, "selection.classes must be in 1..4");
    const gc::HistogramEmbedding provider;
    gc::SelectionState state(opts, provider.dims());
    const auto frames = gc::parseDetectionsJsonl(gc::readText(detections_jsonl));
    const int patch_size = gc::StreamConfig{}.patch_size;
    std::ostringstream csv;
    csv << "frame,x,y,w,h,score\n";
    std::vector<std::vector<gc::DetectionBox>> picked;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const auto& boxes = frames[f];
      const int index = boxes.empty() ? static_cast<int>(f) : boxes.front().frame_index;
      std::vector<gc::SelectionInput> inputs;
      if (!boxes.empty()) {
        const auto image = gc::readNetpbm(std::filesystem::path(frames_dir) / frameName(index));
        for (const auto& b : boxes) inputs.push_back({b, gc::cropBox(image, b, patch_size)});
      }
      const auto result = gc::selectStep(state, provider, inputs);
      auto& out = picked.emplace_back();
      csv << index << ',';
      if (result.child) {
        const auto& b = boxes[*result.child];
        out.push_back(b);
        csv << gc::formatReal(b.x) << ',' << gc::formatReal(b.y) << ',' << gc::formatReal(b.w) << ','
            << gc::formatReal(b.h) << ',' << gc::formatReal(b.score) << '\n';
      } else {
        csv << ",,,,\n";
      }
    }
    writeIf(child_csv, csv.str());
    writeIf(child_jsonl, gc::detectionsJsonl(picked));
  });
}

gc_status gc_box_eval(const char* predicted_jsonl, const char* truth_jsonl, double iou_threshold, double* precision,
                      double* recall) {
  GC_REQUIRE(predicted_jsonl);
  GC_REQUIRE(truth_jsonl);
  return guarded([&] {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
      gc::fail(gc::ErrorKind::UsageError, "IoU threshold must lie in (0, 1)");
    const auto pred = gc::parseDetectionsJsonl(gc::readText(predicted_jsonl));
    const auto truth = gc::parseDetectionsJsonl(gc::readText(truth_jsonl));
    const auto r = gc::evaluateDetections(pred, truth, iou_threshold);
    if (precision) *precision = r.precision;
    if (recall) *recall = r.recall;
  });
}

}  // extern "C"
