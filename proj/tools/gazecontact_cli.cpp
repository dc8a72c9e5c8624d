// Command-line front end. Talks to the library only through gazecontact.h.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gazecontact.h"

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct Failure {
  gc_status status;
  std::string message;
};

int exitCode(gc_status s) {
  switch (s) {
    case GC_OK: return kOk;
    case GC_ERR_USAGE:
    case GC_ERR_INVALID_ARGUMENT: return kUsage;
    case GC_ERR_NUMERIC: return kNumeric;
    default: return kData;
  }
}

void check(gc_status s, const std::string& context) {
  if (s != GC_OK) throw Failure{s, context + ": " + gc_last_error()};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<gc_config, Deleter<gc_config, gc_config_free>>;
using DatasetPtr = std::unique_ptr<gc_dataset, Deleter<gc_dataset, gc_dataset_free>>;
using ModelPtr = std::unique_ptr<gc_model, Deleter<gc_model, gc_model_free>>;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key=value run configuration")->check(CLI::ExistingFile);
    app->add_option("--set", overrides, "override one configuration key (key=value)");
  }

  ConfigPtr build() const {
    gc_config* c = nullptr;
    if (file.empty())
      check(gc_config_new(&c), "config");
    else
      check(gc_config_load(file.c_str(), &c), "config " + file);
    ConfigPtr owned(c);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Failure{GC_ERR_USAGE, "--set expects key=value, got '" + kv + "'"};
      check(gc_config_set(c, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "--set " + kv);
    }
    return owned;
  }
};

DatasetPtr openDataset(const std::string& manifest) {
  gc_dataset* d = nullptr;
  check(gc_dataset_open(manifest.c_str(), &d), "manifest " + manifest);
  return DatasetPtr(d);
}

DatasetPtr foldOf(const gc_dataset* all, const std::string& folds, int fold, gc_fold_side side) {
  gc_dataset* d = nullptr;
  check(gc_dataset_fold(all, folds.c_str(), fold, side, &d), "folds " + folds);
  return DatasetPtr(d);
}

const char* optional(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void progressLine(int iteration, double lr, double total, double ce, double pose, void*) {
  if (iteration % 100 == 0)
    std::fprintf(stderr, "iter %6d  lr %.2g  loss %.5f  ce %.5f  pose %.5f\n", iteration, lr, total, ce, pose);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Eye-contact detection on face patches"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(gc_version()));

  // synth
  auto* synth = app.add_subcommand("synth", "render a synthetic face-patch dataset");
  std::string synth_out;
  int synth_n = 0;
  std::uint64_t synth_seed = 0;
  ConfigArgs synth_cfg;
  synth->add_option("--out", synth_out, "output directory (must exist)")->required();
  synth->add_option("--n", synth_n, "number of frames (default synth.n or 5000)");
  synth->add_option("--seed", synth_seed, "random seed")->required();
  synth_cfg.attach(synth);

  // stream
  auto* stream = app.add_subcommand("stream", "render a two-identity multi-face stream with detections");
  std::string stream_out;
  int stream_frames = 500;
  std::uint64_t stream_seed = 0;
  stream->add_option("--out", stream_out, "output directory (must exist)")->required();
  stream->add_option("--frames", stream_frames, "number of frames")->capture_default_str();
  stream->add_option("--seed", stream_seed, "random seed")->required();

  // folds
  auto* folds = app.add_subcommand("folds", "subject-disjoint stratified cross-validation folds");
  std::string folds_manifest, folds_out;
  int folds_n = 0;
  std::uint64_t folds_seed = 0;
  ConfigArgs folds_cfg;
  folds->add_option("--manifest", folds_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  folds->add_option("--out", folds_out, "folds CSV")->required();
  folds->add_option("--folds", folds_n, "number of folds (default eval.folds or 5)");
  folds->add_option("--seed", folds_seed, "random seed")->required();
  folds_cfg.attach(folds);

  // train
  auto* train = app.add_subcommand("train", "train a detector");
  std::string train_method, train_manifest, train_out, train_log, train_folds;
  int train_fold = -1;
  std::uint64_t train_seed = 0;
  bool train_quiet = false;
  ConfigArgs train_cfg;
  train->add_option("method", train_method, "picnn, alexnet, peec or gazelock")
      ->required()
      ->check(CLI::IsMember({"picnn", "alexnet", "peec", "gazelock"}));
  train->add_option("--manifest", train_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "model file")->required();
  train->add_option("--log", train_log, "training log CSV (network methods)");
  train->add_option("--folds", train_folds, "folds CSV; trains on the sessions outside --fold")->check(CLI::ExistingFile);
  train->add_option("--fold", train_fold, "held-out fold index");
  train->add_option("--seed", train_seed, "random seed")->required();
  train->add_flag("--quiet", train_quiet, "no progress output");
  train_cfg.attach(train);

  // predict
  auto* predict = app.add_subcommand("predict", "score every frame of a manifest");
  std::string pred_model, pred_manifest, pred_out, pred_folds;
  int pred_fold = -1;
  predict->add_option("--model", pred_model, "model file")->required()->check(CLI::ExistingFile);
  predict->add_option("--manifest", pred_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", pred_out, "scores CSV")->required();
  predict->add_option("--folds", pred_folds, "folds CSV; scores only the sessions of --fold")->check(CLI::ExistingFile);
  predict->add_option("--fold", pred_fold, "test fold index");

  // eval
  auto* eval = app.add_subcommand("eval", "threshold sweep, F1, MCC and AUC-PR from a scores CSV");
  std::string eval_scores, eval_report, eval_curve, eval_svg;
  eval->add_option("--scores", eval_scores, "scores CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--report", eval_report, "metrics CSV");
  eval->add_option("--curve", eval_curve, "precision-recall curve CSV");
  eval->add_option("--svg", eval_svg, "precision-recall plot");

  // select
  auto* select = app.add_subcommand("select", "pick the child face among per-frame detections");
  std::string sel_dets, sel_frames, sel_out, sel_jsonl;
  ConfigArgs sel_cfg;
  select->add_option("--detections", sel_dets, "detections JSON lines")->required()->check(CLI::ExistingFile);
  select->add_option("--frames", sel_frames, "directory of NNNNN.ppm frames")->required()->check(CLI::ExistingDirectory);
  select->add_option("--out", sel_out, "child-box CSV")->required();
  select->add_option("--jsonl", sel_jsonl, "child boxes as detections JSON lines");
  sel_cfg.attach(select);

  // boxeval
  auto* boxeval = app.add_subcommand("boxeval", "IoU precision and recall of detections against truth");
  std::string box_pred, box_truth;
  std::vector<double> box_iou{0.5, 0.75};
  boxeval->add_option("--pred", box_pred, "predicted boxes (JSON lines)")->required()->check(CLI::ExistingFile);
  boxeval->add_option("--truth", box_truth, "truth boxes (JSON lines)")->required()->check(CLI::ExistingFile);
  boxeval->add_option("--iou", box_iou, "IoU thresholds")->capture_default_str();

  // stats
  auto* stats = app.add_subcommand("stats", "face position and head pose histograms, landmark availability");
  std::string st_manifest, st_dets, st_csv, st_svg, st_avail;
  int st_w = 0, st_h = 0;
  stats->add_option("--manifest", st_manifest, "dataset manifest")->check(CLI::ExistingFile);
  stats->add_option("--detections", st_dets, "detections JSON lines")->check(CLI::ExistingFile);
  stats->add_option("--frame-width", st_w, "frame width for --detections");
  stats->add_option("--frame-height", st_h, "frame height for --detections");
  stats->add_option("--csv", st_csv, "histogram CSV");
  stats->add_option("--svg", st_svg, "histogram plot");
  stats->add_option("--availability", st_avail, "landmark availability CSV (needs --manifest)");

  // viz
  auto* viz = app.add_subcommand("viz", "conv1 filters and early activations of a network model");
  std::string viz_model, viz_image, viz_out;
  viz->add_option("--model", viz_model, "picnn or alexnet model")->required()->check(CLI::ExistingFile);
  viz->add_option("--image", viz_image, "face patch (PPM/PGM)")->required()->check(CLI::ExistingFile);
  viz->add_option("--out", viz_out, "output directory (must exist)")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "precision and recall against the number of training sessions");
  std::string sw_method, sw_manifest, sw_folds, sw_csv, sw_svg;
  int sw_fold = 0;
  std::vector<int> sw_counts{5, 15, 30};
  std::uint64_t sw_seed = 0;
  ConfigArgs sw_cfg;
  sweep->add_option("method", sw_method, "picnn, alexnet, peec or gazelock")
      ->required()
      ->check(CLI::IsMember({"picnn", "alexnet", "peec", "gazelock"}));
  sweep->add_option("--manifest", sw_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  sweep->add_option("--folds", sw_folds, "folds CSV")->required()->check(CLI::ExistingFile);
  sweep->add_option("--fold", sw_fold, "test fold index")->capture_default_str();
  sweep->add_option("--counts", sw_counts, "training session counts")->delimiter(',')->capture_default_str();
  sweep->add_option("--csv", sw_csv, "sweep CSV")->required();
  sweep->add_option("--svg", sw_svg, "sweep plot");
  sweep->add_option("--seed", sw_seed, "random seed")->required();
  sw_cfg.attach(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) {
      const auto cfg = synth_cfg.build();
      check(gc_synth_dataset(cfg.get(), synth_n, synth_seed, synth_out.c_str()), "synth");
      std::printf("wrote %s/manifest.csv\n", synth_out.c_str());
    } else if (*stream) {
      check(gc_synth_stream(stream_frames, stream_seed, stream_out.c_str()), "stream");
      std::printf("wrote %d frames to %s\n", stream_frames, stream_out.c_str());
    } else if (*folds) {
      const auto cfg = folds_cfg.build();
      const auto ds = openDataset(folds_manifest);
      check(gc_folds_write(ds.get(), cfg.get(), folds_n, folds_seed, folds_out.c_str()), "folds");
      std::printf("wrote %s for %zu sessions\n", folds_out.c_str(), gc_dataset_sessions(ds.get()));
    } else if (*train) {
      const auto cfg = train_cfg.build();
      auto ds = openDataset(train_manifest);
      if (!train_folds.empty()) {
        if (train_fold < 0) throw Failure{GC_ERR_USAGE, "--folds needs --fold"};
        ds = foldOf(ds.get(), train_folds, train_fold, GC_FOLD_TRAIN);
      }
      gc_model* m = nullptr;
      check(gc_train(ds.get(), train_method.c_str(), cfg.get(), train_seed, train_quiet ? nullptr : progressLine,
                     nullptr, &m),
            "train " + train_method);
      ModelPtr model(m);
      check(gc_model_save(model.get(), train_out.c_str()), "save " + train_out);
      if (!train_log.empty()) check(gc_model_save_log(model.get(), train_log.c_str()), "log " + train_log);
      std::printf("%s: %zu frames used, %zu excluded, model %016llx\n", train_method.c_str(), gc_model_used(model.get()),
                  gc_model_excluded(model.get()), static_cast<unsigned long long>(gc_model_hash(model.get())));
    } else if (*predict) {
      gc_model* m = nullptr;
      check(gc_model_load(pred_model.c_str(), &m), "model " + pred_model);
      ModelPtr model(m);
      auto ds = openDataset(pred_manifest);
      if (!pred_folds.empty()) {
        if (pred_fold < 0) throw Failure{GC_ERR_USAGE, "--folds needs --fold"};
        ds = foldOf(ds.get(), pred_folds, pred_fold, GC_FOLD_TEST);
      }
      size_t unscored = 0;
      check(gc_predict(model.get(), ds.get(), pred_out.c_str(), &unscored), "predict");
      std::printf("%zu frames scored, %zu without a prediction\n", gc_dataset_frames(ds.get()) - unscored, unscored);
    } else if (*eval) {
      gc_metrics r{};
      check(gc_evaluate(eval_scores.c_str(), optional(eval_report), optional(eval_curve), optional(eval_svg), &r),
            "eval");
      std::printf("max_f1 %.4f  max_mcc %.4f  auc_pr %.4f  precision %.4f  recall %.4f  threshold %.4f\n", r.max_f1,
                  r.max_mcc, r.auc_pr, r.precision, r.recall, r.threshold);
      std::printf("positives %zu  negatives %zu  unscored %zu\n", r.positives, r.negatives, r.unscored);
    } else if (*select) {
      const auto cfg = sel_cfg.build();
      check(gc_select(sel_dets.c_str(), sel_frames.c_str(), cfg.get(), sel_out.c_str(), optional(sel_jsonl)), "select");
    } else if (*boxeval) {
      for (double t : box_iou) {
        double p = 0, r = 0;
        check(gc_box_eval(box_pred.c_str(), box_truth.c_str(), t, &p, &r), "boxeval");
        std::printf("iou %.2f  precision %.4f  recall %.4f\n", t, p, r);
      }
    } else if (*stats) {
      if (st_manifest.empty() && st_dets.empty()) throw Failure{GC_ERR_USAGE, "stats needs --manifest or --detections"};
      DatasetPtr ds;
      if (!st_manifest.empty()) ds = openDataset(st_manifest);
      check(gc_stats(ds.get(), optional(st_dets), st_w, st_h, optional(st_csv), optional(st_svg), optional(st_avail)),
            "stats");
    } else if (*viz) {
      gc_model* m = nullptr;
      check(gc_model_load(viz_model.c_str(), &m), "model " + viz_model);
      ModelPtr model(m);
      check(gc_visualize(model.get(), viz_image.c_str(), viz_out.c_str()), "viz");
    } else if (*sweep) {
      const auto cfg = sw_cfg.build();
      const auto all = openDataset(sw_manifest);
      const auto tr = foldOf(all.get(), sw_folds, sw_fold, GC_FOLD_TRAIN);
      const auto te = foldOf(all.get(), sw_folds, sw_fold, GC_FOLD_TEST);
      check(gc_sweep(tr.get(), te.get(), sw_method.c_str(), cfg.get(), sw_counts.data(), sw_counts.size(), sw_seed,
                     sw_csv.c_str(), optional(sw_svg)),
            "sweep");
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error (%s): %s\n", gc_status_name(f.status), f.message.c_str());
    return exitCode(f.status);
  }
  return kOk;
}
