#include "densebox/cli.hpp"

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "densebox/commands.hpp"
#include "densebox/errors.hpp"

namespace densebox {

namespace {

// Overrides arrive as "section.key=value" tokens.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw DataError("override must look like key=value, got: " + s);
    }
    apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
}

RunConfig load_config_arg(const std::string& config_path,
                          const std::vector<std::string>& sets) {
  RunConfig cfg = config_path.empty() ? default_run_config() : load_run_config(config_path);
  apply_overrides(cfg, sets);
  return cfg;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"dense anchor-free detector: dataset synthesis, training, "
               "multi-scale detection and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "JSON run configuration")->expected(1);
  app.add_option("--set", overrides, "override a config field, key.path=value");
  auto* seed_opt = app.add_option("--seed", seed, "override the run seed");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene dataset");
  std::string synth_out;
  synth->add_option("--out", synth_out, "output dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a detector on a dataset");
  std::string train_manifest, train_out;
  train->add_option("--dataset", train_manifest, "dataset manifest.json")->required();
  train->add_option("--out", train_out, "output checkpoint path")->required();

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "run multi-scale detection");
  std::string det_ckpt, det_out, det_split = "test", det_overlays;
  std::vector<std::string> det_images;
  double score_thresh = -1.0;
  bool use_refine = false;
  detect_cmd->add_option("--checkpoint", det_ckpt, "model checkpoint")->required();
  detect_cmd->add_option("--images", det_images,
                         "dataset manifest.json or a list of PPM files")
      ->required();
  detect_cmd->add_option("--split", det_split, "manifest split to process");
  detect_cmd->add_option("--out", det_out, "output detections JSON")->required();
  detect_cmd->add_option("--overlay-dir", det_overlays, "write box overlays here");
  detect_cmd->add_option("--score-thresh", score_thresh, "override score threshold");
  detect_cmd->add_flag("--use-refine", use_refine, "decode the refine score channel");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score detections against annotations");
  std::string eval_dets, eval_manifest, eval_out, eval_pr, eval_split = "test";
  double eval_iou = -1.0;
  eval_cmd->add_option("--detections", eval_dets, "detections JSON")->required();
  eval_cmd->add_option("--annotations", eval_manifest, "dataset manifest.json")->required();
  eval_cmd->add_option("--split", eval_split, "manifest split to score");
  eval_cmd->add_option("--iou", eval_iou, "IoU threshold for true positives");
  eval_cmd->add_option("--out", eval_out, "output report JSON")->required();
  eval_cmd->add_option("--pr-curve", eval_pr, "render the PR curve to this PPM");

  std::vector<const char*> argv;
  argv.push_back("densebox");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  seed_set = seed_opt->count() > 0;

  try {
    RunConfig cfg = load_config_arg(config_path, overrides);
    if (seed_set) cfg.seed = seed;

    if (synth->parsed()) {
      SynthResult r = cmd_synth(cfg, synth_out);
      std::printf("synth: %d scenes, %ld objects -> %s\n", r.scenes, r.objects,
                  r.manifest.string().c_str());
    } else if (train->parsed()) {
      TrainResult r = cmd_train(cfg, train_manifest, train_out);
      if (!r.log.empty()) {
        std::printf("train: %zu iterations, final %s\n", r.log.size(),
                    r.log.back().log_line().c_str());
      } else {
        std::printf("train: 0 iterations, checkpoint is the initialization\n");
      }
      std::printf("checkpoint: %s\n", r.checkpoint.string().c_str());
    } else if (detect_cmd->parsed()) {
      if (score_thresh >= 0.0) cfg.pyramid.score_threshold = score_thresh;
      if (use_refine) cfg.use_refine = true;
      DetectResult r = cmd_detect(cfg, det_ckpt, det_images, det_split, det_out,
                                  det_overlays.empty() ? std::filesystem::path{}
                                                       : std::filesystem::path(det_overlays));
      std::printf("detect: %ld images, %ld detections -> %s\n", r.images, r.detections,
                  r.output.string().c_str());
    } else if (eval_cmd->parsed()) {
      const double iou_thr = eval_iou > 0.0 ? eval_iou : 0.5;
      EvalReport rep = cmd_eval(eval_dets, eval_manifest, eval_split, iou_thr, eval_out,
                                eval_pr.empty() ? std::filesystem::path{}
                                                : std::filesystem::path(eval_pr));
      std::printf("eval: ap=%.6f at iou=%.2f over %ld gts, %ld detections\n", rep.ap,
                  rep.iou_threshold, rep.n_gt, rep.n_det);
    }
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace densebox
