// stmbr: two-stage CT slice analysis. `stmbr --help` lists subcommands.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stmbr/gradcheck_suite.hpp"
#include "stmbr/image_io.hpp"
#include "stmbr/nifti.hpp"
#include "stmbr/phantom.hpp"
#include "stmbr/session.hpp"

namespace fs = std::filesystem;
using namespace stmbr;

namespace {

struct CliOptions {
  RunConfig run;
  std::string config_path;
  std::string data_dir, out_path, out_dir = ".", history_path;
  std::string ckpt, detect_ckpt, seg_ckpt, aux_ckpt, nii_path;
  std::string split = "test";
  PhantomSpec phantom;
  bool infected_only = false;
  bool resume = false;
};

void add_common_flags(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--config", o.config_path, "key = value config file (flags override it)");
  cmd->add_option("--seed", o.run.seed, "master seed for all named RNG streams");
  cmd->add_option("--precision", o.run.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--threads", o.run.threads, "worker threads (0 = sequential, -1 = auto)");
}

void add_train_flags(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--lr", o.run.hyper.lr, "learning rate");
  cmd->add_option("--epochs", o.run.hyper.epochs, "training epochs");
  cmd->add_option("--batch", o.run.hyper.batch_size, "mini-batch size");
  cmd->add_option("--momentum", o.run.hyper.momentum, "SGD momentum");
  cmd->add_option("--test-ratio", o.run.test_ratio, "held-out test fraction");
  cmd->add_option("--val-ratio", o.run.val_ratio, "validation fraction of the train pool");
  cmd->add_flag("--paper-scale", o.run.paper_scale, "use the full-scale 256/512 STM widths");
  cmd->add_option("--input-size", o.run.model.height, "square input size");
}

void echo_config(const CliOptions& o) {
  std::cerr << "run configuration:\n";
  o.run.echo(std::cerr);
}

void apply_threads(const CliOptions& o) { set_worker_count(o.run.threads); }

SampleSet load_input_set(const CliOptions& o) {
  if (!o.nii_path.empty()) {
    auto [meta, vol] = read_nifti(o.nii_path);
    SampleSet set;
    set.height = vol.shape[2];
    set.width = vol.shape[3];
    for (int z = 0; z < vol.shape[0]; ++z) {
      Sample s;
      char id[32];
      std::snprintf(id, sizeof(id), "slice%04d", z);
      s.id = id;
      s.image = Tensor<float>({1, set.height, set.width});
      std::copy_n(vol.data.data() + static_cast<int64_t>(z) * set.height * set.width,
                  static_cast<int64_t>(set.height) * set.width, s.image.data.data());
      set.samples.push_back(std::move(s));
    }
    return set;
  }
  if (o.data_dir.empty()) throw std::invalid_argument("--data (or --nii) is required");
  return load_dataset(o.data_dir);
}

SampleSet pick_split(const SampleSet& all, const RunConfig& run, const std::string& which) {
  if (which == "all") return all;
  Splits sp = split_dataset(all, run.test_ratio, run.val_ratio, run.seed);
  if (which == "test") return sp.test;
  if (which == "val") return sp.val;
  if (which == "train") return sp.train;
  throw std::invalid_argument("--split must be train, val, test or all");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failure: " + path.string());
}

int run_synth(const CliOptions& o) {
  PhantomSpec spec = o.phantom;
  spec.seed = o.run.seed;
  SampleSet set = gen_phantoms(spec);
  save_dataset(set, o.out_dir);
  std::cerr << "wrote " << set.size() << " phantom slices to " << o.out_dir << "\n";
  return 0;
}

template <typename T>
int run_train_detect(CliOptions& o) {
  o.run.validate();
  SampleSet all = load_dataset(o.data_dir);

  DetectorSession<T> s;
  TrainHistory hist;
  int start_epoch = 0;
  if (o.resume) {
    s = load_detector<T>(o.ckpt.empty() ? o.out_path : o.ckpt);
    s.run.hyper.epochs = o.run.hyper.epochs;  // allow extending the run
    start_epoch = s.epochs_done;
  }
  // The split must follow the checkpoint on resume or the replay diverges.
  const RunConfig& rc = o.resume ? s.run : o.run;
  Splits sp = split_dataset(all, rc.test_ratio, rc.val_ratio, rc.seed);
  std::cerr << "split: " << sp.train.size() << " train / " << sp.val.size() << " val / "
            << sp.test.size() << " test\n";
  if (!o.resume) {
    s.run = o.run;
    s.streams = RngStreams(o.run.seed);
    const ModelConfig cfg = s.run.effective_model();
    s.aux = AuxNet<T>(cfg.in_channels, cfg.cp1(), cfg.cp2(), cfg.num_classes, s.streams.init);
    s.model = StmBrNet<T>(cfg, s.streams.init);
    s.opt = SgdOptimizer<T>(o.run.hyper.lr, o.run.hyper.momentum);
    std::cerr << "pretraining auxiliary network (" << s.aux.reg.count() << " parameters)\n";
    train_aux(s.aux, sp.train, aux_pretrain_hyper(), s.streams);
  }
  std::cerr << "training STM-BRNet (" << s.model.reg.count() << " parameters)\n";
  hist = train_detector(s.model, s.aux, sp.train, sp.val, s.run.hyper, s.streams, s.opt,
                        start_epoch, [&s](const EpochStats& st) {
                          std::cerr << "epoch " << st.epoch << ": train loss " << st.train_loss
                                    << " acc " << st.train_acc << ", val loss " << st.val_loss
                                    << " acc " << st.val_acc << "\n";
                          s.epochs_done = st.epoch;
                          return true;
                        });
  save_detector(o.out_path, s);
  std::cerr << "checkpoint written to " << o.out_path << "\n";
  if (!o.history_path.empty()) write_text(o.history_path, history_csv(hist));
  return 0;
}

template <typename T>
int run_train_seg(CliOptions& o) {
  o.run.validate();
  SampleSet all = load_dataset(o.data_dir);
  if (o.infected_only) {
    SampleSet filtered;
    filtered.height = all.height;
    filtered.width = all.width;
    for (auto& s : all.samples)
      if (s.label == 1) filtered.samples.push_back(std::move(s));
    all = std::move(filtered);
    if (all.empty()) throw std::invalid_argument("--infected-only left no samples");
  }
  SegmenterSession<T> s;
  int start_epoch = 0;
  if (o.resume) {
    s = load_segmenter<T>(o.ckpt.empty() ? o.out_path : o.ckpt);
    s.run.hyper.epochs = o.run.hyper.epochs;
    start_epoch = s.epochs_done;
  }
  const RunConfig& rc = o.resume ? s.run : o.run;
  Splits sp = split_dataset(all, rc.test_ratio, rc.val_ratio, rc.seed);
  std::cerr << "split: " << sp.train.size() << " train / " << sp.val.size() << " val / "
            << sp.test.size() << " test\n";
  if (!o.resume) {
    s.run = o.run;
    s.streams = RngStreams(o.run.seed);
    const ModelConfig cfg = s.run.effective_model();
    if (cfg.use_cb) {
      if (!o.aux_ckpt.empty()) {
        s.aux = load_aux<T>(o.aux_ckpt, cfg.in_channels, cfg.num_classes);
        if (!s.aux.trained) throw std::runtime_error("--aux checkpoint holds an untrained auxiliary");
      } else {
        s.aux = AuxNet<T>(cfg.in_channels, 8, 16, cfg.num_classes, s.streams.init);
        std::cerr << "pretraining auxiliary network on " << o.data_dir << "\n";
        train_aux(s.aux, sp.train, aux_pretrain_hyper(), s.streams);
      }
    } else {
      Rng scratch(0);
      s.aux = AuxNet<T>(cfg.in_channels, 8, 16, cfg.num_classes, scratch);
    }
    s.model = SaCbBrSeg<T>(cfg, cfg.use_cb ? &s.aux : nullptr, s.streams.init);
    s.opt = SgdOptimizer<T>(o.run.hyper.lr, o.run.hyper.momentum);
  }
  const std::vector<double> weights =
      s.run.class_weights ? inverse_frequency_weights(sp.train) : std::vector<double>{};
  std::cerr << "training SA-CB-BRSeg (" << s.model.reg.count() << " parameters)\n";
  auto hist = train_segmenter(s.model, s.model.cfg.use_cb ? &s.aux : nullptr, sp.train, sp.val,
                              s.run.hyper, s.streams, s.opt, weights, start_epoch,
                              [&s](const EpochStats& st) {
                                std::cerr << "epoch " << st.epoch << ": train loss "
                                          << st.train_loss << " pixel acc " << st.train_acc
                                          << ", val loss " << st.val_loss << " acc " << st.val_acc
                                          << "\n";
                                s.epochs_done = st.epoch;
                                return true;
                              });
  save_segmenter(o.out_path, s);
  std::cerr << "checkpoint written to " << o.out_path << "\n";
  if (!o.history_path.empty()) write_text(o.history_path, history_csv(hist));
  return 0;
}

template <typename T>
int run_eval_detect(CliOptions& o) {
  DetectorSession<T> s = load_detector<T>(o.ckpt);
  SampleSet all = load_input_set(o);
  SampleSet eval_set = pick_split(all, s.run, o.split);
  std::cerr << "evaluating " << eval_set.size() << " slices (" << o.split << " split)\n";
  auto ev = evaluate_detector(s.model, s.aux, eval_set, s.run.hyper.batch_size);

  DetectionReport report = detection_metrics(
      confusion(ev.predictions, ev.labels, 1));
  Curve roc = curve_auc(ev.scores, ev.labels, CurveKind::kRoc);
  Curve pr = curve_auc(ev.scores, ev.labels, CurveKind::kPr);
  report.roc_auc = roc.auc;
  report.pr_auc = pr.auc;

  fs::create_directories(o.out_dir);
  write_text(fs::path(o.out_dir) / "detect_report.csv", detection_report_csv(report));
  write_text(fs::path(o.out_dir) / "detect_report.txt", detection_report_kv(report));
  write_text(fs::path(o.out_dir) / "roc.csv", curve_csv(roc, CurveKind::kRoc));
  write_text(fs::path(o.out_dir) / "pr.csv", curve_csv(pr, CurveKind::kPr));

  auto pca = pca_project(ev.hidden_features, std::min<int>(3, ev.hidden_features.shape[1]));
  std::ostringstream pcsv;
  pcsv << "id,label";
  for (int c = 0; c < pca.projected.shape[1]; ++c) pcsv << ",pc" << c + 1;
  pcsv << "\n";
  pcsv.setf(std::ios::fixed);
  pcsv.precision(6);
  for (int r = 0; r < pca.projected.shape[0]; ++r) {
    pcsv << eval_set.samples[static_cast<size_t>(r)].id << "," << ev.labels[static_cast<size_t>(r)];
    for (int c = 0; c < pca.projected.shape[1]; ++c) pcsv << "," << pca.projected.at2(r, c);
    pcsv << "\n";
  }
  write_text(fs::path(o.out_dir) / "pca.csv", pcsv.str());

  std::cout << detection_report_kv(report);
  std::cerr << "reports written to " << o.out_dir << "\n";
  return 0;
}

template <typename T>
int run_eval_seg(CliOptions& o) {
  SegmenterSession<T> s = load_segmenter<T>(o.ckpt);
  SampleSet all = load_input_set(o);
  SampleSet eval_set = pick_split(all, s.run, o.split);
  std::cerr << "evaluating " << eval_set.size() << " slices (" << o.split << " split)\n";
  auto ev = evaluate_segmenter(s.model, s.model.cfg.use_cb ? &s.aux : nullptr, eval_set,
                               s.run.hyper.batch_size);
  fs::create_directories(o.out_dir);
  write_text(fs::path(o.out_dir) / "seg_report.csv", seg_report_csv(ev.report));
  write_text(fs::path(o.out_dir) / "seg_report.txt", seg_report_kv(ev.report));
  std::cout << seg_report_kv(ev.report);
  std::cerr << "reports written to " << o.out_dir << "\n";
  return 0;
}

template <typename T>
int run_segment(CliOptions& o) {
  SegmenterSession<T> s = load_segmenter<T>(o.ckpt);
  SampleSet set = load_input_set(o);
  fs::create_directories(fs::path(o.out_dir) / "masks");
  fs::create_directories(fs::path(o.out_dir) / "overlays");
  const AuxNet<T>* aux = s.model.cfg.use_cb ? &s.aux : nullptr;
  for (const auto& sample : set.samples) {
    Tensor<uint8_t> mask = predict_mask(s.model, aux, sample.image);
    write_mask_pgm(mask, (fs::path(o.out_dir) / "masks" / (sample.id + ".pgm")).string());
    write_overlay_ppm(sample.image, mask,
                      (fs::path(o.out_dir) / "overlays" / (sample.id + ".ppm")).string());
  }
  std::cerr << "segmented " << set.size() << " slices into " << o.out_dir << "\n";
  return 0;
}

template <typename T>
int run_pipeline(CliOptions& o) {
  DetectorSession<T> det = load_detector<T>(o.detect_ckpt);
  SegmenterSession<T> seg = load_segmenter<T>(o.seg_ckpt);
  SampleSet set = load_input_set(o);
  fs::create_directories(fs::path(o.out_dir) / "masks");
  fs::create_directories(fs::path(o.out_dir) / "overlays");
  const AuxNet<T>* seg_aux = seg.model.cfg.use_cb ? &seg.aux : nullptr;

  auto ev = evaluate_detector(det.model, det.aux, set, det.run.hyper.batch_size);
  std::ostringstream csv;
  csv << "id,score,detected,segmented\n";
  int positives = 0;
  for (size_t i = 0; i < set.samples.size(); ++i) {
    const auto& sample = set.samples[i];
    const bool positive = ev.predictions[i] == 1;
    bool segmented = false;
    if (positive) {
      ++positives;
      Tensor<uint8_t> mask = predict_mask(seg.model, seg_aux, sample.image);
      write_mask_pgm(mask, (fs::path(o.out_dir) / "masks" / (sample.id + ".pgm")).string());
      write_overlay_ppm(sample.image, mask,
                        (fs::path(o.out_dir) / "overlays" / (sample.id + ".ppm")).string());
      segmented = true;
    }
    csv.setf(std::ios::fixed);
    csv.precision(6);
    csv << sample.id << "," << ev.scores[i] << "," << (positive ? 1 : 0) << ","
        << (segmented ? 1 : 0) << "\n";
  }
  write_text(fs::path(o.out_dir) / "pipeline.csv", csv.str());
  std::cerr << "pipeline: " << positives << " of " << set.size()
            << " slices classified infected and segmented\n";
  return 0;
}

int run_gradcheck() {
  auto cases = run_gradcheck_suite(5);
  bool ok = true;
  std::printf("%-28s max relative error\n", "op");
  for (const auto& c : cases) {
    std::printf("%-28s %.3e\n", c.name.c_str(), c.max_rel_err);
    ok = ok && c.max_rel_err < 1e-4;
  }
  std::printf("gradient verification: %s\n", ok ? "all checks < 1e-4" : "FAILED");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stmbr: two-stage CT slice classification and infection segmentation"};
  app.require_subcommand(1);
  CliOptions o;

  auto* synth = app.add_subcommand("synth", "generate a phantom dataset");
  add_common_flags(synth, o);
  synth->add_option("--out", o.out_dir, "output dataset directory")->required();
  synth->add_option("--count", o.phantom.count, "number of slices");
  synth->add_option("--size", o.phantom.size, "square image size");
  synth->add_option("--infected-fraction", o.phantom.infected_fraction, "fraction with lesions");

  auto* td = app.add_subcommand("train-detect", "train the STM-BRNet slice classifier");
  add_common_flags(td, o);
  add_train_flags(td, o);
  td->add_option("--data", o.data_dir, "dataset directory")->required();
  td->add_option("--out", o.out_path, "checkpoint path (default detect.ckpt)");
  td->add_option("--history", o.history_path, "write per-epoch history CSV here");
  td->add_flag("--resume", o.resume, "resume from the checkpoint at --out (or --ckpt)");
  td->add_option("--ckpt", o.ckpt, "checkpoint to resume from");

  auto* ts = app.add_subcommand("train-seg", "train the SA-CB-BRSeg segmenter");
  add_common_flags(ts, o);
  add_train_flags(ts, o);
  ts->add_option("--data", o.data_dir, "dataset directory")->required();
  ts->add_option("--out", o.out_path, "checkpoint path (default seg.ckpt)");
  ts->add_option("--history", o.history_path, "write per-epoch history CSV here");
  ts->add_option("--aux", o.aux_ckpt, "borrow the frozen auxiliary from this checkpoint");
  ts->add_flag("--resume", o.resume, "resume from the checkpoint at --out (or --ckpt)");
  ts->add_option("--ckpt", o.ckpt, "checkpoint to resume from");
  ts->add_flag("--infected-only", o.infected_only, "train on infected slices only");
  ts->add_flag("--class-weights", o.run.class_weights, "inverse-frequency pixel class weights");
  auto* no_cb = ts->add_flag("--no-cb", "disable channel boosting");
  auto* no_sa = ts->add_flag("--no-sa", "disable the static attention gate");

  auto* ed = app.add_subcommand("eval-detect", "detection report, ROC/PR curves and PCA CSV");
  add_common_flags(ed, o);
  ed->add_option("--data", o.data_dir, "dataset directory");
  ed->add_option("--nii", o.nii_path, "evaluate slices of one NIfTI volume");
  ed->add_option("--ckpt", o.ckpt, "detector checkpoint")->required();
  ed->add_option("--out-dir", o.out_dir, "report directory");
  ed->add_option("--split", o.split, "train | val | test | all");

  auto* es = app.add_subcommand("eval-seg", "segmentation report");
  add_common_flags(es, o);
  es->add_option("--data", o.data_dir, "dataset directory");
  es->add_option("--nii", o.nii_path, "evaluate slices of one NIfTI volume");
  es->add_option("--ckpt", o.ckpt, "segmenter checkpoint")->required();
  es->add_option("--out-dir", o.out_dir, "report directory");
  es->add_option("--split", o.split, "train | val | test | all");

  auto* sg = app.add_subcommand("segment", "write a mask PGM and overlay PPM per slice");
  add_common_flags(sg, o);
  sg->add_option("--data", o.data_dir, "dataset directory");
  sg->add_option("--nii", o.nii_path, "segment slices of one NIfTI volume");
  sg->add_option("--ckpt", o.ckpt, "segmenter checkpoint")->required();
  sg->add_option("--out-dir", o.out_dir, "output directory");

  auto* pl = app.add_subcommand("pipeline", "detect, then segment only the infected slices");
  add_common_flags(pl, o);
  pl->add_option("--data", o.data_dir, "dataset directory");
  pl->add_option("--nii", o.nii_path, "run on slices of one NIfTI volume");
  pl->add_option("--detect", o.detect_ckpt, "detector checkpoint")->required();
  pl->add_option("--seg", o.seg_ckpt, "segmenter checkpoint")->required();
  pl->add_option("--out-dir", o.out_dir, "output directory");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of every op");
  add_common_flags(gc, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!o.config_path.empty()) {
      o.run.apply(parse_config_file(o.config_path));
      // Flags win over the file: parse again on top of the file values.
      try {
        app.clear();
        app.parse(argc, argv);
      } catch (const CLI::ParseError&) {
        // already validated above
      }
    }
    if (ts->parsed()) {
      if (no_cb->count()) o.run.model.use_cb = false;
      if (no_sa->count()) o.run.model.use_sa = false;
    }
    o.run.model.width = o.run.model.height;  // inputs are square
    echo_config(o);
    apply_threads(o);

    if (o.out_path.empty()) o.out_path = ts->parsed() ? "seg.ckpt" : "detect.ckpt";
    const bool f64 = o.run.precision == "f64";
    if (synth->parsed()) return run_synth(o);
    if (td->parsed()) return f64 ? run_train_detect<double>(o) : run_train_detect<float>(o);
    if (ts->parsed()) return f64 ? run_train_seg<double>(o) : run_train_seg<float>(o);
    if (ed->parsed()) return f64 ? run_eval_detect<double>(o) : run_eval_detect<float>(o);
    if (es->parsed()) return f64 ? run_eval_seg<double>(o) : run_eval_seg<float>(o);
    if (sg->parsed()) return f64 ? run_segment<double>(o) : run_segment<float>(o);
    if (pl->parsed()) return f64 ? run_pipeline<double>(o) : run_pipeline<float>(o);
    if (gc->parsed()) return run_gradcheck();
    std::cerr << "no subcommand selected\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
