#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cornerdet/bench.hpp"
#include "cornerdet/checkpoint.hpp"
#include "cornerdet/dataset.hpp"
#include "cornerdet/detector.hpp"
#include "cornerdet/gradcheck_suite.hpp"
#include "cornerdet/trainer.hpp"

namespace cornerdet {

namespace cli_detail {

struct GenDataArgs {
  std::string out;
  int count = 100;
  uint64_t seed = 1;
  int size = 64;
  int classes = 3;
  int max_instances = 3;
  double min_size_frac = 0.25;
  double max_size_frac = 0.65;
  double noise = 0.08;
};

inline void run_gen_data(const GenDataArgs& a) {
  GenConfig cfg;
  cfg.image_size = a.size;
  cfg.class_count = a.classes;
  cfg.max_instances = a.max_instances;
  cfg.min_size_frac = a.min_size_frac;
  cfg.max_size_frac = a.max_size_frac;
  cfg.noise_level = a.noise;
  std::vector<SceneSample> samples;
  samples.reserve(static_cast<size_t>(a.count));
  for (int i = 0; i < a.count; ++i) {
    SceneSample s = gen_scene(derive_seed(a.seed, {static_cast<uint64_t>(i)}), cfg);
    std::ostringstream id;
    id << "img" << std::setw(5) << std::setfill('0') << i;
    s.id = id.str();
    samples.push_back(std::move(s));
  }
  write_dataset(a.out, samples);
  std::cout << "wrote " << samples.size() << " scenes to " << a.out << "\n";
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string resume;
  std::string preset = "desk";
  std::string variant = "plain";
  int epochs = 30;
  uint64_t seed = 1;
  int n = 8;
  double lambda_s = 1.0;
  double lambda_t = 100.0;
  double lambda_b = 1.0;
  int classes = 3;
  int batch_size = 8;
  double lr = 0.1;
  int log_every = 25;
  int checkpoint_every = 10;
  bool no_augment = false;
};

inline Variant parse_variant(const std::string& name) {
  if (name == "plain") return Variant::kPlain;
  if (name == "skip") return Variant::kSkip;
  return Variant::kWide;
}

inline void run_train(const TrainArgs& a) {
  std::vector<SceneSample> data = load_dataset(a.data, a.classes);
  if (data.empty()) throw std::runtime_error("train: dataset is empty");

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.seed = a.seed;
  tc.batch_size = a.batch_size;
  tc.lr_initial = a.lr;
  tc.log_every = a.log_every;
  tc.checkpoint_every_epochs = a.checkpoint_every;
  tc.augment_enabled = !a.no_augment;
  tc.out_dir = a.out;
  tc.loss.lambda_class = a.lambda_s;
  tc.loss.lambda_corner = a.lambda_t;
  tc.loss.lambda_box = a.lambda_b;
  // scale the drop schedule with the epoch budget: drops at 1/3 and 2/3
  tc.lr_drop_epochs = {std::max(1, a.epochs / 3), std::max(2, 2 * a.epochs / 3)};

  TrainResult result;
  if (!a.resume.empty()) {
    std::map<std::string, Tensor<float>> velocities;
    Checkpoint ckpt = load_checkpoint(a.resume);
    Network<float> net = restore_network(ckpt, &velocities);
    tc.loss = ckpt.weights;
    result = train(net, data, tc, ckpt.step, std::move(velocities));
  } else {
    ModelConfig mc = a.preset == "paper" ? paper_config(parse_variant(a.variant))
                                         : desk_config(parse_variant(a.variant));
    mc.input_size = data[0].image.dim(1);
    mc.class_count = a.classes;
    mc.roi_grid = a.n;
    mc.validate();
    Network<float> net(mc);
    net.init_params(a.seed);
    result = train(net, data, tc);
  }
  std::cout << "trained " << result.final_step << " steps, final loss " << result.final_loss << "\n";
  if (!result.final_checkpoint.empty()) std::cout << "checkpoint: " << result.final_checkpoint << "\n";
}

struct DetectArgs {
  std::string model;
  std::string input;
  std::string out;
  double nms_iou = 0.5;
  double min_conf = 0.25;
};

inline void run_detect(const DetectArgs& a) {
  namespace fs = std::filesystem;
  Checkpoint ckpt = load_checkpoint(a.model);
  Network<float> net = restore_network(ckpt);

  std::vector<std::pair<std::string, std::string>> inputs;  // (id, path)
  if (fs::is_directory(a.input)) {
    fs::path dir(a.input);
    if (fs::is_directory(dir / "images")) dir /= "images";
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) inputs.emplace_back(f.stem().string(), f.string());
  } else {
    inputs.emplace_back(fs::path(a.input).stem().string(), a.input);
  }
  if (inputs.empty()) throw std::runtime_error("detect: no .ppm images under " + a.input);

  DetectOptions opts{a.nms_iou, a.min_conf};
  const int S = net.config().input_size;
  AugmentConfig aug;
  aug.input_size = S;
  Rng dummy(0);

  std::ofstream out(a.out);
  if (!out) throw std::runtime_error("detect: cannot open " + a.out);
  out << "# image_id class_id confidence x1 y1 x2 y2\n" << std::setprecision(8);
  int total = 0;
  for (const auto& [id, path] : inputs) {
    Tensor<float> image = read_ppm(path);
    const double inv = static_cast<double>(std::max(image.dim(1), image.dim(2))) / S;
    AugmentedSample prepared = augment_sample(image, {}, dummy, Mode::kEval, aug);
    Tensor<float> batch = prepared.image.reshaped({1, 3, S, S});
    auto dets = detect_batch(net, batch, opts);
    for (const DetectionHit& h : dets[0].hits) {
      const BBox b = h.box.scaled(inv);
      out << id << ' ' << h.class_id << ' ' << h.confidence << ' ' << b.x1 << ' ' << b.y1 << ' ' << b.x2
          << ' ' << b.y2 << '\n';
      ++total;
    }
  }
  std::cout << "wrote " << total << " detections for " << inputs.size() << " images to " << a.out << "\n";
}

struct EvalArgs {
  std::string model;
  std::string data;
  std::string report;
  double nms_iou = 0.5;
  double min_conf = 0.05;
  int batch = 8;
  bool pascal_11pt = false;
};

inline void run_eval(const EvalArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.model);
  Network<float> net = restore_network(ckpt);
  std::vector<SceneSample> data = load_dataset(a.data, net.config().class_count);
  EvalReport report = evaluate_model(net, data, a.batch, DetectOptions{a.nms_iou, a.min_conf}, a.pascal_11pt);
  std::ofstream out(a.report);
  if (!out) throw std::runtime_error("eval: cannot open " + a.report);
  out << eval_report_csv(report);
  if (!out) throw std::runtime_error("eval: short write to " + a.report);
  std::cout << eval_report_table(report);
}

inline int run_gradcheck() {
  const auto cases = run_gradcheck_suite();
  bool ok = true;
  for (const auto& c : cases) {
    std::cout << std::left << std::setw(12) << c.name << " max_rel_err " << std::scientific
              << std::setprecision(3) << c.max_rel_err << (c.max_rel_err < 1e-4 ? "  ok" : "  FAIL") << "\n";
    ok = ok && c.max_rel_err < 1e-4;
  }
  return ok ? 0 : 1;
}

struct BenchArgs {
  std::string model;
  std::string data;
  int batch = 4;
};

inline void run_bench(const BenchArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.model);
  Network<float> net = restore_network(ckpt);
  std::vector<SceneSample> data = load_dataset(a.data, net.config().class_count);
  TimingBreakdown t = timing_run(net, data, a.batch);
  std::cout << timing_csv(t);
}

}  // namespace cli_detail

// Entry point. Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline int cli_run(int argc, char** argv) {
  using namespace cli_detail;
  CLI::App app{"corner-matching sparse-sampling object detector"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
  gen_cmd->add_option("--out", gen.out, "output dataset directory")->required();
  gen_cmd->add_option("--count", gen.count, "number of scenes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "random seed");
  gen_cmd->add_option("--size", gen.size, "square image size in pixels")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--classes", gen.classes, "number of shape classes (<= 3)")->check(CLI::Range(1, 3));
  gen_cmd->add_option("--max-instances", gen.max_instances, "max instances per scene")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--min-size-frac", gen.min_size_frac, "min instance extent / image size");
  gen_cmd->add_option("--max-size-frac", gen.max_size_frac, "max instance extent / image size");
  gen_cmd->add_option("--noise", gen.noise, "background noise level");

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train a detector");
  train_cmd->add_option("--data", tr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", tr.out, "output directory for checkpoints and metrics")->required();
  train_cmd->add_option("--epochs", tr.epochs, "training epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.seed, "random seed");
  train_cmd->add_option("--variant", tr.variant, "model variant")
      ->check(CLI::IsMember({"plain", "skip", "wide"}));
  train_cmd->add_option("--preset", tr.preset, "configuration preset")->check(CLI::IsMember({"desk", "paper"}));
  train_cmd->add_option("--n", tr.n, "sampling grid side (keeps n^2 boxes)")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lambda-s", tr.lambda_s, "classification cost strength");
  train_cmd->add_option("--lambda-t", tr.lambda_t, "corner cost strength");
  train_cmd->add_option("--lambda-b", tr.lambda_b, "box regression cost strength");
  train_cmd->add_option("--classes", tr.classes, "number of classes")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", tr.batch_size, "images per step")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tr.lr, "initial learning rate");
  train_cmd->add_option("--log-every", tr.log_every, "steps between metric rows")->check(CLI::PositiveNumber);
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "epochs between checkpoints");
  train_cmd->add_option("--resume", tr.resume, "resume from checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_flag("--no-augment", tr.no_augment, "disable crop/mirror/photometric augmentation");

  DetectArgs det;
  CLI::App* detect_cmd = app.add_subcommand("detect", "run detection on images");
  detect_cmd->add_option("--model", det.model, "checkpoint file")->required()->check(CLI::ExistingFile);
  detect_cmd->add_option("--input", det.input, "a .ppm image, or a directory of them")
      ->required()
      ->check(CLI::ExistingPath);
  detect_cmd->add_option("--out", det.out, "output detections file")->required();
  detect_cmd->add_option("--nms-iou", det.nms_iou, "suppression overlap threshold");
  detect_cmd->add_option("--min-conf", det.min_conf, "minimum confidence");

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a model on a labelled dataset");
  eval_cmd->add_option("--model", ev.model, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--report", ev.report, "output CSV report")->required();
  eval_cmd->add_option("--nms-iou", ev.nms_iou, "suppression overlap threshold");
  eval_cmd->add_option("--min-conf", ev.min_conf, "minimum confidence");
  eval_cmd->add_option("--batch", ev.batch, "evaluation batch size")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--pascal-11pt", ev.pascal_11pt, "11-point interpolated AP");

  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "verify gradients against finite differences");

  BenchArgs be;
  CLI::App* bench_cmd = app.add_subcommand("bench", "time the four detection stages");
  bench_cmd->add_option("--model", be.model, "checkpoint file")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--data", be.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  bench_cmd->add_option("--batch", be.batch, "images per batch")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen_cmd->parsed()) {
      run_gen_data(gen);
    } else if (train_cmd->parsed()) {
      run_train(tr);
    } else if (detect_cmd->parsed()) {
      run_detect(det);
    } else if (eval_cmd->parsed()) {
      run_eval(ev);
    } else if (gradcheck_cmd->parsed()) {
      return run_gradcheck();
    } else if (bench_cmd->parsed()) {
      run_bench(be);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace cornerdet
