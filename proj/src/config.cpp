#include "densebox/config.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "densebox/errors.hpp"

namespace densebox {

using nlohmann::json;
using nlohmann::ordered_json;

SamplerConfig RunConfig::sampler() const {
  SamplerConfig s;
  s.patch_size = geometry.patch_size;
  s.target_height = geometry.target_height;
  s.scale_jitter_low = geometry.scale_low;
  s.scale_jitter_high = geometry.scale_high;
  s.translation_frac = jitter_translation_frac;
  s.flip_prob = 0.5;
  s.flip_pairs = {{0, 1}};  // the two eye landmarks
  s.random_zoom_low = random_zoom_low;
  s.random_zoom_high = random_zoom_high;
  s.jitter = true;
  return s;
}

void RunConfig::validate() const {
  geometry.validate();
  model.validate();
  mining.validate();
  pyramid.validate();
  synth.validate();
  if (model.n_landmarks != geometry.n_landmarks) {
    throw DataError("model.n_landmarks must match geometry.n_landmarks");
  }
  if (model.n_landmarks > 0 && synth.n_landmarks != model.n_landmarks) {
    throw DataError("synth.n_landmarks must match model.n_landmarks when landmarks are on");
  }
  if (std::abs(pyramid.reg_norm - geometry.reg_norm) > 1e-12) {
    throw DataError("pyramid.reg_norm must equal geometry.reg_norm");
  }
  if (optimizer.batch_size <= 0) throw DataError("optimizer.batch_size must be > 0");
  if (optimizer.iterations < 0) throw DataError("optimizer.iterations must be >= 0");
  if (optimizer.lr <= 0) throw DataError("optimizer.lr must be > 0");
  if (scene_count < 0) throw DataError("scene_count must be >= 0");
  if (split_train < 0 || split_val < 0 || split_train + split_val > 1.0) {
    throw DataError("split fractions must be nonnegative and sum to <= 1");
  }
  if (!(random_zoom_low > 0 && random_zoom_high >= random_zoom_low)) {
    throw DataError("random_zoom range is invalid");
  }
  if (loss.lambda_loc < 0 || loss.lambda_det < 0 || loss.lambda_lm < 0) {
    throw DataError("loss weights must be >= 0");
  }
}

RunConfig default_run_config() { return RunConfig{}; }

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  if (j.contains("stage_channels")) {
    auto v = j.at("stage_channels").get<std::vector<int>>();
    if (v.size() != 3) throw DataError("model.stage_channels needs 3 entries");
    m.stage_channels = {v[0], v[1], v[2]};
  }
  get_if(j, "head_hidden", m.head_hidden);
  get_if(j, "n_landmarks", m.n_landmarks);
  get_if(j, "refine_hidden", m.refine_hidden);
  get_if(j, "input_channels", m.input_channels);
  return m;
}

ordered_json model_config_to_json(const ModelConfig& m) {
  ordered_json j;
  j["stage_channels"] = m.stage_channels;
  j["head_hidden"] = m.head_hidden;
  j["n_landmarks"] = m.n_landmarks;
  j["refine_hidden"] = m.refine_hidden;
  j["input_channels"] = m.input_channels;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  get_if(j, "seed", c.seed);
  get_if(j, "threads", c.threads);
  if (j.contains("geometry")) {
    const json& g = j.at("geometry");
    get_if(g, "patch_size", c.geometry.patch_size);
    get_if(g, "target_height", c.geometry.target_height);
    get_if(g, "r_c_factor", c.geometry.r_c_factor);
    get_if(g, "scale_low", c.geometry.scale_low);
    get_if(g, "scale_high", c.geometry.scale_high);
    get_if(g, "r_near", c.geometry.r_near);
    get_if(g, "r_l", c.geometry.r_l);
    get_if(g, "n_landmarks", c.geometry.n_landmarks);
    c.geometry.reg_norm = c.geometry.target_height / c.geometry.down_factor;
    get_if(g, "reg_norm", c.geometry.reg_norm);
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("mining")) {
    const json& m = j.at("mining");
    get_if(m, "hard_fraction", c.mining.hard_fraction);
    get_if(m, "hard_share", c.mining.hard_share);
    get_if(m, "neg_pos_ratio", c.mining.neg_pos_ratio);
    get_if(m, "fallback_negatives", c.mining.fallback_negatives);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    get_if(l, "lambda_loc", c.loss.lambda_loc);
    get_if(l, "lambda_det", c.loss.lambda_det);
    get_if(l, "lambda_lm", c.loss.lambda_lm);
    get_if(l, "refine_uses_det_mask", c.refine_uses_det_mask);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    get_if(o, "lr", c.optimizer.lr);
    get_if(o, "momentum", c.optimizer.momentum);
    get_if(o, "weight_decay", c.optimizer.weight_decay);
    get_if(o, "batch_size", c.optimizer.batch_size);
    get_if(o, "iterations", c.optimizer.iterations);
    get_if(o, "lr_decay_every", c.optimizer.lr_decay_every);
    get_if(o, "lr_decay_factor", c.optimizer.lr_decay_factor);
  }
  if (j.contains("pyramid")) {
    const json& p = j.at("pyramid");
    get_if(p, "min_exp", c.pyramid.min_exp);
    get_if(p, "max_exp", c.pyramid.max_exp);
    get_if(p, "step", c.pyramid.step);
    get_if(p, "score_threshold", c.pyramid.score_threshold);
    get_if(p, "nms_iou", c.pyramid.nms_iou);
    get_if(p, "max_side", c.pyramid.max_side);
    c.pyramid.reg_norm = c.geometry.reg_norm;
    get_if(p, "reg_norm", c.pyramid.reg_norm);
  } else {
    c.pyramid.reg_norm = c.geometry.reg_norm;
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    get_if(s, "width", c.synth.width);
    get_if(s, "height", c.synth.height);
    get_if(s, "min_objects", c.synth.min_objects);
    get_if(s, "max_objects", c.synth.max_objects);
    get_if(s, "min_height", c.synth.min_height);
    get_if(s, "max_height", c.synth.max_height);
    get_if(s, "clutter_count", c.synth.clutter_count);
    get_if(s, "n_landmarks", c.synth.n_landmarks);
    get_if(s, "landmark_fraction", c.synth.landmark_fraction);
  }
  get_if(j, "scene_count", c.scene_count);
  get_if(j, "split_train", c.split_train);
  get_if(j, "split_val", c.split_val);
  get_if(j, "jitter_translation_frac", c.jitter_translation_frac);
  get_if(j, "random_zoom_low", c.random_zoom_low);
  get_if(j, "random_zoom_high", c.random_zoom_high);
  get_if(j, "eval_iou", c.eval_iou);
  get_if(j, "use_refine", c.use_refine);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("config parse error in " + path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const json::exception& e) {
    throw DataError("config field error in " + path.string() + ": " + e.what());
  }
}

ordered_json run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["geometry"] = {{"patch_size", c.geometry.patch_size},
                   {"target_height", c.geometry.target_height},
                   {"r_c_factor", c.geometry.r_c_factor},
                   {"scale_low", c.geometry.scale_low},
                   {"scale_high", c.geometry.scale_high},
                   {"r_near", c.geometry.r_near},
                   {"r_l", c.geometry.r_l},
                   {"n_landmarks", c.geometry.n_landmarks},
                   {"reg_norm", c.geometry.reg_norm}};
  j["model"] = model_config_to_json(c.model);
  j["mining"] = {{"hard_fraction", c.mining.hard_fraction},
                 {"hard_share", c.mining.hard_share},
                 {"neg_pos_ratio", c.mining.neg_pos_ratio},
                 {"fallback_negatives", c.mining.fallback_negatives}};
  j["loss"] = {{"lambda_loc", c.loss.lambda_loc},
               {"lambda_det", c.loss.lambda_det},
               {"lambda_lm", c.loss.lambda_lm},
               {"refine_uses_det_mask", c.refine_uses_det_mask}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"batch_size", c.optimizer.batch_size},
                    {"iterations", c.optimizer.iterations},
                    {"lr_decay_every", c.optimizer.lr_decay_every},
                    {"lr_decay_factor", c.optimizer.lr_decay_factor}};
  j["pyramid"] = {{"min_exp", c.pyramid.min_exp},
                  {"max_exp", c.pyramid.max_exp},
                  {"step", c.pyramid.step},
                  {"score_threshold", c.pyramid.score_threshold},
                  {"nms_iou", c.pyramid.nms_iou},
                  {"reg_norm", c.pyramid.reg_norm},
                  {"max_side", c.pyramid.max_side}};
  j["synth"] = {{"width", c.synth.width},
                {"height", c.synth.height},
                {"min_objects", c.synth.min_objects},
                {"max_objects", c.synth.max_objects},
                {"min_height", c.synth.min_height},
                {"max_height", c.synth.max_height},
                {"clutter_count", c.synth.clutter_count},
                {"n_landmarks", c.synth.n_landmarks},
                {"landmark_fraction", c.synth.landmark_fraction}};
  j["scene_count"] = c.scene_count;
  j["split_train"] = c.split_train;
  j["split_val"] = c.split_val;
  j["jitter_translation_frac"] = c.jitter_translation_frac;
  j["random_zoom_low"] = c.random_zoom_low;
  j["random_zoom_high"] = c.random_zoom_high;
  j["eval_iou"] = c.eval_iou;
  j["use_refine"] = c.use_refine;
  return j;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write config: " + path.string());
  os << run_config_to_json(cfg).dump(2) << "\n";
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  json doc = run_config_to_json(cfg);
  std::string pointer = "/";
  for (char ch : key) pointer += (ch == '.') ? '/' : ch;
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }
  try {
    json::json_pointer ptr(pointer);
    if (!doc.contains(ptr)) {
      throw DataError("unknown config key: " + key);
    }
    doc[ptr] = parsed;
  } catch (const json::exception&) {
    throw DataError("unknown config key: " + key);
  }
  // reg_norm is derived from target_height unless set explicitly
  if (key != "geometry.reg_norm") doc["geometry"].erase("reg_norm");
  if (key != "pyramid.reg_norm" && key != "geometry.reg_norm") {
    doc["pyramid"].erase("reg_norm");
  }
  cfg = run_config_from_json(doc);
}

}  // namespace densebox
