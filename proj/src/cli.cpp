#include "unportrait/cli.hpp"

#include "unportrait/calibration.hpp"
#include "unportrait/metrics.hpp"
#include "unportrait/preprocess.hpp"
#include "unportrait/synth.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace unportrait {

namespace {

namespace fs = std::filesystem;

void write_meta(const fs::path& dir, const std::string& stem, const std::string& arch,
                int image_size, int levels, int base_channels) {
  KeyValueFile meta;
  meta.kind = "model-meta";
  Record r;
  r.set("arch", arch);
  r.set_long("image_size", image_size);
  if (levels > 0) {
    r.set_long("levels", levels);
    r.set_long("base_channels", base_channels);
  }
  meta.records.push_back(std::move(r));
  write_keyvalue(dir / (stem + ".meta"), meta);
}

Record read_meta(const fs::path& dir, const std::string& stem, const std::string& arch) {
  const fs::path path = dir / (stem + ".meta");
  if (!fs::exists(path))
    throw std::invalid_argument("missing model bundle: " + path.string());
  const KeyValueFile meta = read_keyvalue(path, "model-meta");
  if (meta.records.size() != 1 || meta.records[0].get("arch") != arch)
    throw std::runtime_error("unexpected model meta in " + path.string());
  return meta.records[0];
}

}  // namespace

void save_flownet_bundle(const fs::path& dir, FlowNetModel& model) {
  fs::create_directories(dir);
  write_meta(dir, "flownet", "flownet", model.image_size(), model.net.config().levels,
             model.net.config().base_channels);
  save_params(dir / "flownet.updm", model.params());
}

FlowNetModel load_flownet_bundle(const fs::path& dir) {
  const Record r = read_meta(dir, "flownet", "flownet");
  FlowNetModel model(int(r.get_long("image_size")), int(r.get_long("levels")),
                     int(r.get_long("base_channels")));
  load_params(dir / "flownet.updm", model.params());
  return model;
}

void save_completion_bundle(const fs::path& dir, CompletionModel& model) {
  fs::create_directories(dir);
  write_meta(dir, "completion", "completion", model.image_size(), model.net.config().levels,
             model.net.config().base_channels);
  save_params(dir / "completion.updm", model.params());
}

CompletionModel load_completion_bundle(const fs::path& dir) {
  const Record r = read_meta(dir, "completion", "completion");
  CompletionModel model(int(r.get_long("image_size")), int(r.get_long("levels")),
                        int(r.get_long("base_channels")));
  load_params(dir / "completion.updm", model.params());
  return model;
}

void save_classifier_bundle(const fs::path& dir, ClassifierModel& model) {
  fs::create_directories(dir);
  write_meta(dir, "classifier", "classifier", model.image_size(), 0, 0);
  save_params(dir / "classifier.updm", model.params());
}

ClassifierModel load_classifier_bundle(const fs::path& dir) {
  const Record r = read_meta(dir, "classifier", "classifier");
  ClassifierModel model(int(r.get_long("image_size")));
  load_params(dir / "classifier.updm", model.params());
  return model;
}

namespace {

// ---- synth -------------------------------------------------------------------

struct SynthOpts {
  DatasetSpec spec;
  std::string out;
  std::vector<std::string> meshes;
};

void run_synth(SynthOpts& o) {
  for (const std::string& m : o.meshes) o.spec.mesh_files.emplace_back(m);
  const KeyValueFile manifest = generate_dataset(o.spec, o.out);
  long ok = 0;
  for (const Record& r : manifest.records)
    if (r.get("status") == "ok") ++ok;
  std::printf("rows=%zu\nok=%ld\nrejected=%ld\nmanifest=%s\n", manifest.records.size(), ok,
              long(manifest.records.size()) - ok, (fs::path(o.out) / "manifest.txt").string().c_str());
}

void setup_synth(CLI::App& app) {
  auto o = std::make_shared<SynthOpts>();
  CLI::App* cmd = app.add_subcommand("synth", "Generate a paired near/far dataset with flows");
  cmd->add_option("--out", o->out, "Output directory")->required();
  cmd->add_option("--subjects", o->spec.subject_count, "Procedural subjects");
  cmd->add_option("--views", o->spec.poses_per_subject, "Poses per subject");
  cmd->add_option("--distances", o->spec.distance_count, "Distances per pose");
  cmd->add_option("--size", o->spec.image_size, "Render size in pixels");
  cmd->add_option("--seed", o->spec.master_seed, "Master seed");
  cmd->add_option("--pose-range", o->spec.pose_range_deg, "Pose range, +/- degrees per axis");
  cmd->add_option("--min-distance", o->spec.min_distance_cm, "Closest distance, cm");
  cmd->add_option("--max-distance", o->spec.max_distance_cm, "Farthest distance, cm");
  cmd->add_option("--mesh", o->meshes, "Extra subject mesh (.obj with .landmarks sidecar)")
      ->check(CLI::ExistingFile);
  cmd->callback([o]() { run_synth(*o); });
}

// ---- preprocess ----------------------------------------------------------------

struct PreprocessOpts {
  std::string input, out;
  std::vector<double> eye_right, eye_left, anchor;
  int size = 512;
  double ipd = 0.0;  // 0: scale the default with --size
};

void run_preprocess(const PreprocessOpts& o) {
  PreprocessSpec spec;
  spec.width = spec.height = o.size;
  const double k = double(o.size) / 512.0;
  spec.target_ipd_px = o.ipd > 0.0 ? o.ipd : kEyeSepPx512 * k;
  spec.anchor = o.anchor.empty() ? Eigen::Vector2d(kAnchorX512 * k, kAnchorY512 * k)
                                 : Eigen::Vector2d(o.anchor[0], o.anchor[1]);
  EyeLandmarks eyes;
  eyes.right_inner = {o.eye_right[0], o.eye_right[1]};
  eyes.left_inner = {o.eye_left[0], o.eye_left[1]};

  const PreprocessResult res = preprocess(read_png(o.input), eyes, spec);
  if (const fs::path parent = fs::path(o.out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  write_png(o.out, res.image);
  std::printf("scale=%.6f\ntx=%.6f\nty=%.6f\nout=%s\n", res.transform.scale, res.transform.t.x(),
              res.transform.t.y(), o.out.c_str());
}

void setup_preprocess(CLI::App& app) {
  auto o = std::make_shared<PreprocessOpts>();
  CLI::App* cmd = app.add_subcommand("preprocess", "Align a portrait to the canonical framing");
  cmd->add_option("--input", o->input, "Input image")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o->out, "Output image")->required();
  cmd->add_option("--eye-right", o->eye_right, "Right eye inner corner, x y px")
      ->required()
      ->expected(2);
  cmd->add_option("--eye-left", o->eye_left, "Left eye inner corner, x y px")
      ->required()
      ->expected(2);
  cmd->add_option("--size", o->size, "Output frame size");
  cmd->add_option("--ipd", o->ipd, "Target eye separation, px");
  cmd->add_option("--anchor", o->anchor, "Right eye target, x y px")->expected(2);
  cmd->callback([o]() { run_preprocess(*o); });
}

// ---- training -------------------------------------------------------------------

struct TrainOpts {
  std::string data, out;
  TrainConfig cfg;
  bool toy = false;
  bool full = false;
  CLI::Option* o_epochs = nullptr;
  CLI::Option* o_size = nullptr;
  CLI::Option* o_levels = nullptr;
  CLI::Option* o_base = nullptr;
};

void add_train_options(CLI::App* cmd, TrainOpts& o) {
  cmd->add_option("--data", o.data, "Dataset directory with manifest.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  cmd->add_option("--out", o.out, "Checkpoint directory")->required();
  o.o_epochs = cmd->add_option("--epochs", o.cfg.epochs, "Training epochs");
  cmd->add_option("--lr", o.cfg.lr, "Learning rate");
  cmd->add_option("--seed", o.cfg.seed, "Training seed");
  o.o_size = cmd->add_option("--size", o.cfg.image_size, "Model resolution");
  o.o_levels = cmd->add_option("--levels", o.cfg.levels, "Network levels");
  o.o_base = cmd->add_option("--base-channels", o.cfg.base_channels, "First-level channels");
  CLI::Option* toy = cmd->add_flag("--toy", o.toy, "Small preset: 32 px, 3 levels, 3 epochs");
  cmd->add_flag("--full", o.full, "Default preset (explicit flags still win)")->excludes(toy);
}

// The presets fill in whatever the user did not set explicitly.
void apply_preset(TrainOpts& o) {
  if (!o.toy) return;
  if (!o.o_epochs->count()) o.cfg.epochs = 3;
  if (!o.o_size->count()) o.cfg.image_size = 32;
  if (!o.o_levels->count()) o.cfg.levels = 3;
  if (!o.o_base->count()) o.cfg.base_channels = 8;
}

void print_training(const std::vector<double>& losses, size_t samples, const std::string& out) {
  std::printf("samples=%zu\n", samples);
  for (size_t k = 0; k < losses.size(); ++k)
    std::printf("epoch=%zu loss=%.6f\n", k + 1, losses[k]);
  std::printf("saved=%s\n", out.c_str());
}

void run_train_flownet(TrainOpts& o) {
  apply_preset(o);
  const KeyValueFile manifest = read_keyvalue(fs::path(o.data) / "manifest.txt", "dataset");
  const std::vector<FlowSample> samples = load_flow_samples(manifest, o.data, o.cfg.image_size);
  const fs::path out = o.out;
  fs::create_directories(out);
  std::vector<double> losses;
  FlowNetModel model = train_flownet(samples, o.cfg, &losses, &out);
  save_flownet_bundle(out, model);
  print_training(losses, samples.size(), o.out);
}

void run_train_completion(TrainOpts& o) {
  apply_preset(o);
  const KeyValueFile manifest = read_keyvalue(fs::path(o.data) / "manifest.txt", "dataset");
  const std::vector<CompletionSample> samples =
      make_completion_samples(manifest, o.data, o.cfg.image_size);
  const fs::path out = o.out;
  fs::create_directories(out);
  std::vector<double> losses;
  CompletionModel model = train_completion(samples, o.cfg, &losses, &out);
  save_completion_bundle(out, model);
  print_training(losses, samples.size(), o.out);
}

void setup_train_flownet(CLI::App& app) {
  auto o = std::make_shared<TrainOpts>();
  CLI::App* cmd = app.add_subcommand("train-flownet", "Train the corrective flow predictor");
  add_train_options(cmd, *o);
  cmd->add_flag("--adversarial", o->cfg.adversarial, "Add the conditional adversarial term");
  cmd->add_option("--l1-weight", o->cfg.l1_weight, "Flow L1 weight");
  cmd->add_option("--gan-weight", o->cfg.gan_weight, "Adversarial weight");
  cmd->callback([o]() { run_train_flownet(*o); });
}

void setup_train_completion(CLI::App& app) {
  auto o = std::make_shared<TrainOpts>();
  CLI::App* cmd = app.add_subcommand("train-completion", "Train the hole-filling stage");
  add_train_options(cmd, *o);
  cmd->add_option("--novel-weight", o->cfg.novel_weight, "Weight on never-hit pixels");
  cmd->callback([o]() { run_train_completion(*o); });
}

struct TrainClassifierOpts {
  std::string data, out;
  ClassifierTrainConfig cfg;
  bool toy = false;
  bool full = false;
  CLI::Option* o_epochs = nullptr;
  CLI::Option* o_size = nullptr;
};

void run_train_classifier(TrainClassifierOpts& o) {
  if (o.toy) {
    if (!o.o_epochs->count()) o.cfg.epochs = 4;
    if (!o.o_size->count()) o.cfg.image_size = 32;
  }
  const KeyValueFile manifest = read_keyvalue(fs::path(o.data) / "manifest.txt", "dataset");
  std::vector<LabeledImage> dataset;
  for (const Record& r : manifest.records) {
    if (r.get("status") != "ok") continue;
    LabeledImage li;
    li.image = resize_area(read_png(fs::path(o.data) / r.get("near_png")), o.cfg.image_size,
                           o.cfg.image_size);
    li.distance_cm = r.get_double("distance_cm");
    dataset.push_back(std::move(li));
  }
  std::vector<double> losses;
  ClassifierModel model = train_classifier(dataset, o.cfg, &losses);
  save_classifier_bundle(o.out, model);
  print_training(losses, dataset.size(), o.out);
}

void setup_train_classifier(CLI::App& app) {
  auto o = std::make_shared<TrainClassifierOpts>();
  CLI::App* cmd = app.add_subcommand("train-classifier", "Train the distance probe");
  cmd->add_option("--data", o->data, "Dataset directory with manifest.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  cmd->add_option("--out", o->out, "Checkpoint directory")->required();
  o->o_epochs = cmd->add_option("--epochs", o->cfg.epochs, "Training epochs");
  cmd->add_option("--lr", o->cfg.lr, "Learning rate");
  cmd->add_option("--seed", o->cfg.seed, "Training seed");
  o->o_size = cmd->add_option("--size", o->cfg.image_size, "Model resolution");
  cmd->add_option("--query-sigma", o->cfg.query_sigma, "Query spread in log2 distance");
  CLI::Option* toy = cmd->add_flag("--toy", o->toy, "Small preset: 32 px, 4 epochs");
  cmd->add_flag("--full", o->full, "Default preset")->excludes(toy);
  cmd->callback([o]() { run_train_classifier(*o); });
}

// ---- estimate -------------------------------------------------------------------

struct EstimateOpts {
  std::string input, models;
};

void run_estimate(const EstimateOpts& o) {
  ClassifierModel model = load_classifier_bundle(o.models);
  ImageBuffer img = read_png(o.input);
  if (img.width != model.image_size() || img.height != model.image_size())
    img = resize_area(img, model.image_size(), model.image_size());
  const DistanceEstimate est = estimate_distance(model, img);
  const DistanceLabel label = label_from_estimate(est.distance_cm);
  std::printf("distance_cm=%.6f\nlabel=%d\nclamped=%d\nresponse=%.6f\nprobe_calls=%d\n",
              est.distance_cm, label.index, label.clamped ? 1 : 0, est.response, est.probe_calls);
  std::printf("below_range=%d\nabove_range=%d\nnon_monotone=%d\n", est.below_range ? 1 : 0,
              est.above_range ? 1 : 0, est.non_monotone ? 1 : 0);
}

void setup_estimate(CLI::App& app) {
  auto o = std::make_shared<EstimateOpts>();
  CLI::App* cmd = app.add_subcommand("estimate", "Estimate the camera distance of a portrait");
  cmd->add_option("--input", o->input, "Input image")->required()->check(CLI::ExistingFile);
  cmd->add_option("--models", o->models, "Checkpoint directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  cmd->callback([o]() { run_estimate(*o); });
}

// ---- undistort ------------------------------------------------------------------

struct UndistortOpts {
  std::string input, models, out, mask, flow;
  double distance = 0.0;
  CLI::Option* o_distance = nullptr;
};

void run_undistort(const UndistortOpts& o) {
  ImageBuffer img = read_png(o.input);
  if (!o.mask.empty()) {
    const ImageBuffer m = read_png(o.mask);
    if (m.width != img.width || m.height != img.height)
      throw std::invalid_argument("undistort: mask dimensions differ from the input");
    img.mask = m.has_mask() ? m.mask : m.rgba[0];
  }

  UndistortModels models;
  std::optional<CompletionModel> completion = load_completion_bundle(o.models);
  models.completion = &*completion;
  std::optional<FlowNetModel> flownet;
  std::optional<ClassifierModel> classifier;
  std::optional<FlowMap> oracle;
  if (!o.flow.empty()) {
    oracle = read_flow(o.flow);
  } else {
    flownet.emplace(load_flownet_bundle(o.models));
    models.flownet = &*flownet;
  }
  const bool known = o.o_distance->count() > 0;
  if (!known) {
    classifier.emplace(load_classifier_bundle(o.models));
    models.classifier = &*classifier;
  }

  const UndistortResult res = undistort(img, models, oracle ? &*oracle : nullptr,
                                        known ? &o.distance : nullptr, nullptr);

  const fs::path out = o.out;
  fs::create_directories(out);
  write_flow(out / "flow.flw", res.flow);
  write_png(out / "warped.png", res.warped);
  write_png(out / "completed.png", res.completed);
  write_png(out / "final.png", res.blended);

  KeyValueFile report;
  report.kind = "undistort-report";
  Record r;
  r.set("input", o.input);
  r.set("distance_source", known ? "known" : "estimated");
  r.set("flow_source", oracle ? "oracle" : "predicted");
  r.set_double("distance_cm", res.distance_cm);
  r.set_long("label", res.label.index);
  r.set_long("clamped", res.label.clamped ? 1 : 0);
  r.set("flow", "flow.flw");
  r.set("warped", "warped.png");
  r.set("completed", "completed.png");
  r.set("final", "final.png");
  report.records.push_back(std::move(r));
  write_keyvalue(out / "report.txt", report);

  std::printf("distance_cm=%.6f\nlabel=%d\nfinal=%s\n", res.distance_cm, res.label.index,
              (out / "final.png").string().c_str());
}

void setup_undistort(CLI::App& app) {
  auto o = std::make_shared<UndistortOpts>();
  CLI::App* cmd = app.add_subcommand("undistort", "Correct perspective distortion in a portrait");
  cmd->add_option("--input", o->input, "Input image")->required()->check(CLI::ExistingFile);
  cmd->add_option("--models", o->models, "Checkpoint directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  cmd->add_option("--out", o->out, "Output directory")->required();
  cmd->add_option("--mask", o->mask, "Coverage mask image")->check(CLI::ExistingFile);
  o->o_distance = cmd->add_option("--distance", o->distance, "Known camera distance, cm");
  cmd->add_option("--flow", o->flow, "Oracle flow file replacing the predictor")
      ->check(CLI::ExistingFile);
  cmd->callback([o]() { run_undistort(*o); });
}

// ---- eval -----------------------------------------------------------------------

struct EvalOpts {
  std::string manifest, pred, out;
};

void run_eval(const EvalOpts& o) {
  const KeyValueFile manifest = read_keyvalue(o.manifest, "dataset");
  const KeyValueFile preds = read_keyvalue(o.pred, "distance-predictions");

  std::map<std::string, double> truth;
  for (const Record& r : manifest.records) truth[r.get("id")] = r.get_double("distance_cm");

  std::vector<double> p, t;
  for (const Record& r : preds.records) {
    const auto it = truth.find(r.get("id"));
    if (it == truth.end())
      throw std::invalid_argument("eval: prediction id not in manifest: " + r.get("id"));
    p.push_back(r.get_double("distance_cm"));
    t.push_back(it->second);
  }

  const DistanceStats s = distance_stats(p, t);
  std::printf("samples=%zu\nmean_rel_err=%.6f\nstd_rel_err=%.6f\n", p.size(), s.mean_rel_err,
              s.std_rel_err);
  std::printf("label_accuracy=%.6f\none_step_accuracy=%.6f\n", s.label_accuracy,
              s.one_step_accuracy);

  if (!o.out.empty()) {
    KeyValueFile report;
    report.kind = "eval-report";
    Record r;
    r.set_long("samples", long(p.size()));
    r.set_double("mean_rel_err", s.mean_rel_err);
    r.set_double("std_rel_err", s.std_rel_err);
    r.set_double("label_accuracy", s.label_accuracy);
    r.set_double("one_step_accuracy", s.one_step_accuracy);
    report.records.push_back(std::move(r));
    write_keyvalue(o.out, report);
  }
}

void setup_eval(CLI::App& app) {
  auto o = std::make_shared<EvalOpts>();
  CLI::App* cmd = app.add_subcommand("eval", "Score distance predictions against a manifest");
  cmd->add_option("--manifest", o->manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  cmd->add_option("--pred", o->pred, "Predictions file (distance-predictions)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", o->out, "Optional report file");
  cmd->callback([o]() { run_eval(*o); });
}

// ---- calibration ------------------------------------------------------------------

struct CalibrateColorOpts {
  std::string samples, out;
  bool affine = false;
};

void run_calibrate_color(const CalibrateColorOpts& o) {
  const std::vector<ChartSample> samples = read_chart_samples(o.samples);
  const ColorFit fit = fit_color_matrix(samples, o.affine);
  write_calibration_report(o.out, &fit, nullptr);
  std::printf("patches=%zu\nrms=%.6f\nreport=%s\n", samples.size(), fit.rms, o.out.c_str());
}

void setup_calibrate_color(CLI::App& app) {
  auto o = std::make_shared<CalibrateColorOpts>();
  CLI::App* cmd = app.add_subcommand("calibrate-color", "Fit a color correction matrix");
  cmd->add_option("--samples", o->samples, "Chart sample file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o->out, "Report file")->required();
  cmd->add_flag("--affine", o->affine, "Fit an offset column too");
  cmd->callback([o]() { run_calibrate_color(*o); });
}

struct CalibrateAlignOpts {
  std::string points, out;
};

void run_calibrate_align(const CalibrateAlignOpts& o) {
  const PointPairs pairs = read_point_pairs(o.points);
  const SimilarityFit fit = fit_similarity(pairs.src, pairs.dst);
  write_calibration_report(o.out, nullptr, &fit);
  std::printf("points=%zu\nscale=%.6f\ntheta_rad=%.6f\ntx=%.6f\nty=%.6f\nrms=%.6f\nreport=%s\n",
              pairs.src.size(), fit.transform.scale, fit.transform.theta_rad, fit.transform.t.x(),
              fit.transform.t.y(), fit.rms, o.out.c_str());
}

void setup_calibrate_align(CLI::App& app) {
  auto o = std::make_shared<CalibrateAlignOpts>();
  CLI::App* cmd = app.add_subcommand("calibrate-align", "Fit the pair alignment similarity");
  cmd->add_option("--points", o->points, "Point correspondence file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", o->out, "Report file")->required();
  cmd->callback([o]() { run_calibrate_align(*o); });
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Portrait distance estimation and perspective undistortion"};
  app.require_subcommand(1);
  setup_synth(app);
  setup_preprocess(app);
  setup_train_flownet(app);
  setup_train_completion(app);
  setup_train_classifier(app);
  setup_estimate(app);
  setup_undistort(app);
  setup_eval(app);
  setup_calibrate_color(app);
  setup_calibrate_align(app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace unportrait
