#include "densebox/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "densebox/checkpoint.hpp"
#include "densebox/errors.hpp"
#include "densebox/image.hpp"
#include "densebox/parallel.hpp"
#include "densebox/pyramid.hpp"
#include "densebox/rng.hpp"
#include "densebox/synth.hpp"

namespace densebox {

using nlohmann::json;
using nlohmann::ordered_json;

namespace fs = std::filesystem;

// ---- dataset files ------------------------------------------------------------

Dataset load_manifest(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("cannot open manifest: " + manifest_path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  Dataset ds;
  ds.root = manifest_path.parent_path();
  for (const json& e : j.at("scenes")) {
    ds.entries.push_back(ManifestEntry{e.at("image").get<std::string>(),
                                       e.at("annotation").get<std::string>(),
                                       e.at("split").get<std::string>()});
  }
  return ds;
}

std::vector<AnnotatedObject> load_annotation(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open annotation: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("annotation parse error in " + path.string() + ": " + e.what());
  }
  std::vector<AnnotatedObject> objects;
  for (const json& o : j.at("objects")) {
    AnnotatedObject obj;
    const auto box = o.at("box").get<std::vector<double>>();
    if (box.size() != 4) throw DataError("annotation box needs 4 numbers: " + path.string());
    obj.box = BBox{box[0], box[1], box[2], box[3]};
    if (o.contains("landmarks")) {
      for (const json& lm : o.at("landmarks")) {
        if (lm.is_null()) {
          obj.landmarks.push_back(std::nullopt);
        } else {
          const auto pt = lm.get<std::vector<double>>();
          if (pt.size() != 2) throw DataError("bad landmark in " + path.string());
          obj.landmarks.push_back(Point{pt[0], pt[1]});
        }
      }
    }
    objects.push_back(std::move(obj));
  }
  return objects;
}

void save_annotation(const fs::path& path, const std::vector<AnnotatedObject>& objects) {
  ordered_json j;
  j["objects"] = ordered_json::array();
  for (const AnnotatedObject& o : objects) {
    ordered_json entry;
    entry["box"] = {o.box.xmin, o.box.ymin, o.box.xmax, o.box.ymax};
    ordered_json lms = ordered_json::array();
    for (const auto& lm : o.landmarks) {
      if (lm) {
        lms.push_back({lm->x, lm->y});
      } else {
        lms.push_back(nullptr);
      }
    }
    entry["landmarks"] = std::move(lms);
    j["objects"].push_back(std::move(entry));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write annotation: " + path.string());
  os << j.dump(2) << "\n";
}

// ---- checkpoint with header -----------------------------------------------------

void save_model_checkpoint(const fs::path& path, const Model& m, long iteration) {
  auto params = m.parameters();
  std::vector<const Param*> ptrs(params.begin(), params.end());
  save_checkpoint(path, ptrs);
  ordered_json header;
  header["format"] = kCheckpointMagic;
  header["model"] = model_config_to_json(m.cfg);
  header["iteration"] = iteration;
  fs::path hpath = path;
  hpath += ".json";
  std::ofstream os(hpath, std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint header: " + hpath.string());
  os << header.dump(2) << "\n";
}

Model load_model_checkpoint(const fs::path& path) {
  fs::path hpath = path;
  hpath += ".json";
  std::ifstream is(hpath);
  if (!is) throw DataError("cannot open checkpoint header: " + hpath.string());
  json header;
  try {
    is >> header;
  } catch (const json::exception& e) {
    throw DataError("checkpoint header parse error: " + std::string(e.what()));
  }
  ModelConfig cfg = model_config_from_json(header.at("model"));
  Model m = build_model(cfg, 0);
  auto params = m.parameters();
  load_checkpoint(path, params);
  return m;
}

void check_model_config(const ModelConfig& expected, const ModelConfig& actual) {
  auto mismatch = [&]() -> std::string {
    if (expected.stage_channels != actual.stage_channels) return "stage_channels";
    if (expected.head_hidden != actual.head_hidden) return "head_hidden";
    if (expected.n_landmarks != actual.n_landmarks) return "n_landmarks";
    if (expected.refine_hidden != actual.refine_hidden) return "refine_hidden";
    if (expected.input_channels != actual.input_channels) return "input_channels";
    return "";
  }();
  if (!mismatch.empty()) {
    throw DataError("checkpoint/config mismatch on model." + mismatch);
  }
}

// ---- detections + report files -------------------------------------------------

void save_detections(const fs::path& path, const std::vector<ImageDetections>& dets) {
  ordered_json j;
  j["images"] = ordered_json::array();
  for (const ImageDetections& d : dets) {
    ordered_json entry;
    entry["image"] = d.image;
    ordered_json list = ordered_json::array();
    for (const Detection& det : d.detections) {
      list.push_back({{"box", {det.box.xmin, det.box.ymin, det.box.xmax, det.box.ymax}},
                      {"score", det.score},
                      {"scale", det.scale}});
    }
    entry["detections"] = std::move(list);
    j["images"].push_back(std::move(entry));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write detections: " + path.string());
  os << j.dump(2) << "\n";
}

std::vector<ImageDetections> load_detections(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open detections: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("detections parse error: " + std::string(e.what()));
  }
  std::vector<ImageDetections> out;
  for (const json& e : j.at("images")) {
    ImageDetections d;
    d.image = e.at("image").get<std::string>();
    for (const json& det : e.at("detections")) {
      const auto box = det.at("box").get<std::vector<double>>();
      if (box.size() != 4) throw DataError("bad detection box in " + path.string());
      d.detections.push_back(Detection{BBox{box[0], box[1], box[2], box[3]},
                                       det.at("score").get<double>(),
                                       det.value("scale", 1.0)});
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_eval_report(const fs::path& path, const EvalReport& report) {
  ordered_json j;
  j["iou_threshold"] = report.iou_threshold;
  j["ap"] = report.ap;
  j["n_gt"] = report.n_gt;
  j["n_det"] = report.n_det;
  ordered_json curve = ordered_json::array();
  for (const PrPoint& p : report.pr_curve) curve.push_back({p.recall, p.precision});
  j["pr_curve"] = std::move(curve);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write eval report: " + path.string());
  os << j.dump(2) << "\n";
}

// ---- synth ---------------------------------------------------------------------

SynthResult cmd_synth(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "annotations");
  save_run_config(out_dir / "config.json", cfg);

  const int n = cfg.scene_count;
  const int n_train = static_cast<int>(std::llround(cfg.split_train * n));
  const int n_val = static_cast<int>(std::llround(cfg.split_val * n));

  ordered_json manifest;
  manifest["scenes"] = ordered_json::array();
  SynthResult result;
  result.scenes = n;
  for (int i = 0; i < n; ++i) {
    SceneAnnotation scene = generate_scene(derive_seed(cfg.seed, 0x7363ULL, i), cfg.synth);
    char name[64];
    std::snprintf(name, sizeof(name), "scene_%05d", i);
    const std::string image_rel = std::string("images/") + name + ".ppm";
    const std::string ann_rel = std::string("annotations/") + name + ".json";
    write_ppm(out_dir / image_rel, scene.image);
    save_annotation(out_dir / ann_rel, scene.objects);
    const char* split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    manifest["scenes"].push_back(
        {{"image", image_rel}, {"annotation", ann_rel}, {"split", split}});
    result.objects += static_cast<long>(scene.objects.size());
  }
  result.manifest = out_dir / "manifest.json";
  std::ofstream os(result.manifest, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest: " + result.manifest.string());
  os << manifest.dump(2) << "\n";
  return result;
}

// ---- train ---------------------------------------------------------------------

namespace {

struct BatchPlanItem {
  PatchKind kind;
  size_t scene = 0;
  size_t object = 0;
  uint64_t seed = 0;
};

}  // namespace

TrainResult cmd_train(const RunConfig& cfg, const fs::path& manifest_path,
                      const fs::path& out_checkpoint) {
  cfg.validate();
  Dataset ds = load_manifest(manifest_path);

  std::vector<SceneAnnotation> train_scenes;
  for (const ManifestEntry& e : ds.entries) {
    if (e.split != "train") continue;
    SceneAnnotation s;
    s.image = read_ppm(ds.root / e.image);
    s.objects = load_annotation(ds.root / e.annotation);
    train_scenes.push_back(std::move(s));
  }
  if (train_scenes.empty()) throw DataError("no train-split scenes in manifest");

  std::vector<std::pair<size_t, size_t>> positives;  // (scene, object)
  for (size_t s = 0; s < train_scenes.size(); ++s) {
    for (size_t o = 0; o < train_scenes[s].objects.size(); ++o) positives.emplace_back(s, o);
  }
  if (positives.empty()) throw DataError("train split has no annotated objects");

  if (!out_checkpoint.parent_path().empty()) {
    fs::create_directories(out_checkpoint.parent_path());
  }
  fs::path cfg_echo = out_checkpoint;
  cfg_echo += ".config.json";
  save_run_config(cfg_echo, cfg);

  Model model = build_model(cfg.model, cfg.seed);
  save_model_checkpoint(out_checkpoint, model, 0);

  const SamplerConfig sampler_cfg = cfg.sampler();
  const long iters = cfg.optimizer.iterations;
  const long ckpt_every = std::max<long>(1, iters / 10);
  const int batch = cfg.optimizer.batch_size;

  fs::path log_path = out_checkpoint;
  log_path += ".log";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw DataError("cannot write training log: " + log_path.string());

  TrainResult result;
  result.checkpoint = out_checkpoint;

  long pos_counter = 0, rand_counter = 0;
  for (long iter = 0; iter < iters; ++iter) {
    std::vector<BatchPlanItem> plan(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      BatchPlanItem& item = plan[static_cast<size_t>(b)];
      if (b % 2 == 0) {  // 1:1 positive/random, deterministic alternation
        const auto& [s, o] = positives[static_cast<size_t>(pos_counter) % positives.size()];
        item = {PatchKind::positive, s, o,
                derive_seed(cfg.seed, 0x706fULL, static_cast<uint64_t>(pos_counter))};
        ++pos_counter;
      } else {
        item = {PatchKind::random,
                static_cast<size_t>(rand_counter) % train_scenes.size(), 0,
                derive_seed(cfg.seed, 0x726eULL, static_cast<uint64_t>(rand_counter))};
        ++rand_counter;
      }
    }

    std::vector<TrainItem> items(plan.size());
    parallel_for(plan.size(), cfg.threads, [&](size_t i) {
      Rng rng(plan[i].seed);
      PatchSample sample =
          plan[i].kind == PatchKind::positive
              ? sample_positive_patch(train_scenes[plan[i].scene], plan[i].object,
                                      sampler_cfg, rng)
              : sample_random_patch(train_scenes[plan[i].scene], sampler_cfg, rng);
      items[i] = TrainItem{sample.patch, encode_patch(sample.annotation, cfg.geometry)};
    });

    TrainStepConfig step_cfg;
    step_cfg.loss = cfg.loss;
    step_cfg.mining = cfg.mining;
    step_cfg.optim.lr = cfg.optimizer.lr;
    if (cfg.optimizer.lr_decay_every > 0) {
      step_cfg.optim.lr *= std::pow(cfg.optimizer.lr_decay_factor,
                                    static_cast<double>(iter / cfg.optimizer.lr_decay_every));
    }
    step_cfg.optim.momentum = cfg.optimizer.momentum;
    step_cfg.optim.weight_decay = cfg.optimizer.weight_decay;
    step_cfg.r_near = cfg.geometry.r_near;
    step_cfg.refine_uses_det_mask = cfg.refine_uses_det_mask;
    step_cfg.threads = cfg.threads;
    step_cfg.seed = cfg.seed;

    TrainStats stats = train_step(model, items, step_cfg, iter);
    log << stats.log_line() << "\n";
    result.log.push_back(stats);

    if (!std::isfinite(stats.full)) {
      // leave the last periodic checkpoint in place
      log.flush();
      throw NumericError("non-finite loss at iteration " + std::to_string(iter) +
                         "; last checkpoint retained at " + out_checkpoint.string());
    }
    if ((iter + 1) % ckpt_every == 0) {
      save_model_checkpoint(out_checkpoint, model, iter + 1);
    }
  }
  save_model_checkpoint(out_checkpoint, model, iters);
  return result;
}

// ---- detect ---------------------------------------------------------------------

DetectResult cmd_detect(const RunConfig& cfg, const fs::path& checkpoint,
                        const std::vector<std::string>& inputs, const std::string& split,
                        const fs::path& out_json, const fs::path& overlay_dir) {
  cfg.validate();
  Model model = load_model_checkpoint(checkpoint);
  check_model_config(cfg.model, model.cfg);

  std::vector<std::pair<std::string, fs::path>> images;  // (key, absolute path)
  if (inputs.size() == 1 && inputs[0].size() > 5 &&
      inputs[0].substr(inputs[0].size() - 5) == ".json") {
    Dataset ds = load_manifest(inputs[0]);
    for (const ManifestEntry& e : ds.entries) {
      if (e.split == split) images.emplace_back(e.image, ds.root / e.image);
    }
  } else {
    for (const std::string& p : inputs) images.emplace_back(p, fs::path(p));
  }

  PyramidConfig pyr = cfg.pyramid;
  pyr.threads = cfg.threads;

  std::vector<ImageDetections> results;
  long total = 0;
  for (const auto& [key, path] : images) {
    Image8 img = read_ppm(path);
    Tensor tensor = image_to_tensor(img);
    std::vector<Detection> dets = detect(tensor, model, pyr, cfg.use_refine);
    total += static_cast<long>(dets.size());
    if (!overlay_dir.empty()) {
      fs::create_directories(overlay_dir);
      Image8 overlay = img;
      for (const Detection& d : dets) draw_box(overlay, d.box, 255, 32, 32);
      write_ppm(overlay_dir / fs::path(key).filename(), overlay);
    }
    results.push_back(ImageDetections{key, std::move(dets)});
  }
  if (!out_json.parent_path().empty()) fs::create_directories(out_json.parent_path());
  save_detections(out_json, results);
  fs::path cfg_echo = out_json;
  cfg_echo += ".config.json";
  save_run_config(cfg_echo, cfg);
  return DetectResult{out_json, static_cast<long>(images.size()), total};
}

// ---- eval ---------------------------------------------------------------------

EvalReport cmd_eval(const fs::path& detections_json, const fs::path& manifest_path,
                    const std::string& split, double iou_threshold,
                    const fs::path& out_report, const fs::path& pr_curve_ppm) {
  std::vector<ImageDetections> dets = load_detections(detections_json);
  Dataset ds = load_manifest(manifest_path);

  std::map<std::string, fs::path> gt_files;
  for (const ManifestEntry& e : ds.entries) {
    if (e.split == split) gt_files[e.image] = ds.root / e.annotation;
  }

  std::vector<std::string> unmatched;
  std::set<std::string> det_keys;
  for (const ImageDetections& d : dets) {
    det_keys.insert(d.image);
    if (!gt_files.count(d.image)) unmatched.push_back("detections-only: " + d.image);
  }
  for (const auto& [key, _] : gt_files) {
    if (!det_keys.count(key)) unmatched.push_back("ground-truth-only: " + key);
  }
  if (!unmatched.empty()) {
    std::string msg = "detection/annotation keys do not match:";
    for (const std::string& u : unmatched) msg += "\n  " + u;
    throw DataError(msg);
  }

  std::vector<MatchResult> matches;
  for (const ImageDetections& d : dets) {
    std::vector<AnnotatedObject> objects = load_annotation(gt_files.at(d.image));
    std::vector<BBox> boxes;
    boxes.reserve(objects.size());
    for (const AnnotatedObject& o : objects) boxes.push_back(o.box);
    matches.push_back(match_detections(d.detections, boxes, iou_threshold));
  }
  EvalReport report = average_precision(matches, iou_threshold);
  if (!out_report.empty()) {
    if (!out_report.parent_path().empty()) fs::create_directories(out_report.parent_path());
    save_eval_report(out_report, report);
    ordered_json echo;  // resolved parameters of this evaluation
    echo["detections"] = detections_json.string();
    echo["manifest"] = manifest_path.string();
    echo["split"] = split;
    echo["iou_threshold"] = iou_threshold;
    fs::path echo_path = out_report;
    echo_path += ".config.json";
    std::ofstream os(echo_path, std::ios::trunc);
    if (os) os << echo.dump(2) << "\n";
  }
  if (!pr_curve_ppm.empty()) render_pr_curve(pr_curve_ppm, report);
  return report;
}

}  // namespace densebox
