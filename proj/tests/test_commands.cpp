#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "densebox/cli.hpp"
#include "densebox/commands.hpp"
#include "densebox/errors.hpp"

using namespace densebox;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("densebox_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_run_config(int n_landmarks) {
  RunConfig cfg;
  cfg.seed = 21;
  cfg.threads = 2;
  cfg.geometry.patch_size = 48;
  cfg.geometry.target_height = 12.0;
  cfg.geometry.reg_norm = 3.0;
  cfg.geometry.n_landmarks = n_landmarks;
  cfg.model.stage_channels = {2, 3, 4};
  cfg.model.head_hidden = 4;
  cfg.model.refine_hidden = 3;
  cfg.model.n_landmarks = n_landmarks;
  cfg.pyramid.reg_norm = 3.0;
  cfg.pyramid.min_exp = -0.6;
  cfg.pyramid.max_exp = 0.6;
  cfg.pyramid.step = 0.3;
  cfg.synth.width = 96;
  cfg.synth.height = 96;
  cfg.synth.min_height = 24;
  cfg.synth.max_height = 48;
  cfg.synth.clutter_count = 10;
  cfg.scene_count = 10;
  cfg.optimizer.iterations = 2;
  cfg.optimizer.batch_size = 4;
  return cfg;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void check_trees_identical(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> files_a;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) files_a.push_back(fs::relative(e.path(), a));
  }
  std::sort(files_a.begin(), files_a.end());
  for (const fs::path& rel : files_a) {
    CAPTURE(rel.string());
    REQUIRE(fs::exists(b / rel));
    CHECK(slurp(a / rel) == slurp(b / rel));
  }
}

}  // namespace

TEST_CASE("cmd_synth writes a reproducible dataset with the expected split") {
  RunConfig cfg = tiny_run_config(4);
  const fs::path d1 = fresh_dir("synth1");
  const fs::path d2 = fresh_dir("synth2");
  SynthResult r1 = cmd_synth(cfg, d1);
  SynthResult r2 = cmd_synth(cfg, d2);
  CHECK(r1.scenes == 10);
  check_trees_identical(d1, d2);

  Dataset ds = load_manifest(r1.manifest);
  int train = 0, val = 0, test = 0;
  for (const auto& e : ds.entries) {
    if (e.split == "train") ++train;
    if (e.split == "val") ++val;
    if (e.split == "test") ++test;
  }
  CHECK(train == 8);
  CHECK(val == 1);
  CHECK(test == 1);
  CHECK(fs::exists(d1 / "config.json"));

  // annotations round-trip through the JSON format
  auto objects = load_annotation(ds.root / ds.entries[0].annotation);
  for (const auto& o : objects) {
    CHECK(o.box.xmax > o.box.xmin);
    CHECK(o.landmarks.size() == 4);
  }
}

TEST_CASE("cmd_synth with zero scenes succeeds with an empty manifest") {
  RunConfig cfg = tiny_run_config(0);
  cfg.scene_count = 0;
  const fs::path dir = fresh_dir("synth0");
  SynthResult r = cmd_synth(cfg, dir);
  CHECK(r.scenes == 0);
  Dataset ds = load_manifest(r.manifest);
  CHECK(ds.entries.empty());
}

TEST_CASE("cmd_train with zero iterations checkpoints the initialization") {
  RunConfig cfg = tiny_run_config(0);
  cfg.optimizer.iterations = 0;
  const fs::path dir = fresh_dir("train0");
  SynthResult synth = cmd_synth(cfg, dir / "data");
  TrainResult r = cmd_train(cfg, synth.manifest, dir / "model.ckpt");
  CHECK(r.log.empty());

  Model fresh = build_model(cfg.model, cfg.seed);
  const fs::path ref = dir / "fresh.ckpt";
  save_model_checkpoint(ref, fresh, 0);
  CHECK(slurp(dir / "model.ckpt") == slurp(ref));
}

TEST_CASE("cmd_train is byte-reproducible and emits the training log") {
  RunConfig cfg = tiny_run_config(2);
  cfg.synth.n_landmarks = 2;
  const fs::path dir = fresh_dir("train_rep");
  SynthResult synth = cmd_synth(cfg, dir / "data");
  TrainResult a = cmd_train(cfg, synth.manifest, dir / "a.ckpt");
  TrainResult b = cmd_train(cfg, synth.manifest, dir / "b.ckpt");
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  CHECK(slurp(dir / "a.ckpt.log") == slurp(dir / "b.ckpt.log"));
  REQUIRE(a.log.size() == 2);
  CHECK(a.log[0].log_line().find("det_loss=") != std::string::npos);
  CHECK(a.log[0].n_pos > 0);
}

TEST_CASE("training aborts on a numeric blowup but keeps the checkpoint") {
  RunConfig cfg = tiny_run_config(0);
  cfg.optimizer.lr = 1e18;
  cfg.optimizer.iterations = 30;
  const fs::path dir = fresh_dir("train_nan");
  SynthResult synth = cmd_synth(cfg, dir / "data");
  CHECK_THROWS_AS(cmd_train(cfg, synth.manifest, dir / "model.ckpt"), NumericError);
  CHECK(fs::exists(dir / "model.ckpt"));
  // the retained checkpoint still loads
  Model m = load_model_checkpoint(dir / "model.ckpt");
  CHECK(m.cfg == cfg.model);
}

TEST_CASE("detect and eval round-trip on dataset files") {
  RunConfig cfg = tiny_run_config(0);
  cfg.scene_count = 6;
  cfg.split_train = 0.5;
  cfg.split_val = 0.0;
  cfg.optimizer.iterations = 1;
  const fs::path dir = fresh_dir("det_eval");
  SynthResult synth = cmd_synth(cfg, dir / "data");
  cmd_train(cfg, synth.manifest, dir / "model.ckpt");

  DetectResult det = cmd_detect(cfg, dir / "model.ckpt", {synth.manifest.string()},
                                "test", dir / "dets.json", dir / "overlays");
  CHECK(det.images == 3);
  CHECK(fs::exists(dir / "dets.json"));
  CHECK(fs::exists(dir / "dets.json.config.json"));

  DetectResult det2 = cmd_detect(cfg, dir / "model.ckpt", {synth.manifest.string()},
                                 "test", dir / "dets2.json");
  CHECK(slurp(dir / "dets.json") == slurp(dir / "dets2.json"));

  // constructing detections from the annotations themselves gives AP 1
  Dataset ds = load_manifest(synth.manifest);
  std::vector<ImageDetections> ideal;
  for (const auto& e : ds.entries) {
    if (e.split != "test") continue;
    ImageDetections d;
    d.image = e.image;
    for (const auto& o : load_annotation(ds.root / e.annotation)) {
      d.detections.push_back(Detection{o.box, 1.0, 1.0});
    }
    ideal.push_back(std::move(d));
  }
  save_detections(dir / "ideal.json", ideal);
  EvalReport perfect = cmd_eval(dir / "ideal.json", synth.manifest, "test", 0.5,
                                dir / "report.json", dir / "pr.ppm");
  CHECK(perfect.ap == doctest::Approx(1.0));
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "pr.ppm"));

  // empty detections give AP 0
  std::vector<ImageDetections> empty;
  for (const auto& e : ds.entries) {
    if (e.split == "test") empty.push_back(ImageDetections{e.image, {}});
  }
  save_detections(dir / "empty.json", empty);
  EvalReport zero = cmd_eval(dir / "empty.json", synth.manifest, "test", 0.5, {});
  CHECK(zero.ap == 0.0);

  // strict profile never beats the loose one
  EvalReport loose = cmd_eval(dir / "dets.json", synth.manifest, "test", 0.5, {});
  EvalReport strict = cmd_eval(dir / "dets.json", synth.manifest, "test", 0.7, {});
  CHECK(strict.ap <= loose.ap + 1e-12);

  // report files are byte-reproducible
  cmd_eval(dir / "ideal.json", synth.manifest, "test", 0.5, dir / "report2.json");
  CHECK(slurp(dir / "report.json") == slurp(dir / "report2.json"));

  // unmatched keys abort
  std::vector<ImageDetections> extra = ideal;
  extra.push_back(ImageDetections{"images/odd.ppm", {}});
  save_detections(dir / "extra.json", extra);
  CHECK_THROWS_AS(cmd_eval(dir / "extra.json", synth.manifest, "test", 0.5, {}), DataError);
}

TEST_CASE("checkpoint header mismatches name the diverging field") {
  RunConfig cfg = tiny_run_config(0);
  const fs::path dir = fresh_dir("ckpt_mismatch");
  Model m = build_model(cfg.model, 1);
  save_model_checkpoint(dir / "m.ckpt", m, 0);
  RunConfig other = cfg;
  other.model.head_hidden = 6;
  try {
    cmd_detect(other, dir / "m.ckpt", {}, "test", dir / "d.json");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("head_hidden") != std::string::npos);
  }
}

TEST_CASE("cli exit codes") {
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"synth"}) == 1);  // missing --out
  CHECK(run_cli({"--config", "/nonexistent/cfg.json", "synth", "--out", "/tmp/x"}) == 2);
  const fs::path dir = fresh_dir("cli");
  // config overrides flow through --set
  CHECK(run_cli({"--set", "scene_count=3", "--set", "synth.width=96",
                 "--set", "synth.height=96", "--set", "synth.min_height=24",
                 "--set", "synth.max_height=40", "--set", "geometry.patch_size=48",
                 "--set", "geometry.target_height=12", "--set", "geometry.n_landmarks=0",
                 "--set", "model.n_landmarks=0", "synth", "--out",
                 (dir / "ds").string()}) == 0);
  Dataset ds = load_manifest(dir / "ds" / "manifest.json");
  CHECK(ds.entries.size() == 3);
  CHECK(run_cli({"--set", "bogus.key=1", "synth", "--out", (dir / "x").string()}) == 2);
}
