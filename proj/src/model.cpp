#include "densebox/model.hpp"

#include <cmath>
#include <cstdio>

#include "densebox/errors.hpp"
#include "densebox/parallel.hpp"
#include "densebox/rng.hpp"

namespace densebox {

void ModelConfig::validate() const {
  for (int c : stage_channels) {
    if (c <= 0) throw DataError("model.stage_channels must be positive");
  }
  if (head_hidden <= 0) throw DataError("model.head_hidden must be positive");
  if (refine_hidden <= 0) throw DataError("model.refine_hidden must be positive");
  if (input_channels <= 0) throw DataError("model.input_channels must be positive");
  if (n_landmarks < 0) throw DataError("model.n_landmarks must be >= 0");
}

namespace {

ConvLayer make_conv(const std::string& name, int out_c, int in_c, int k, Rng& rng) {
  Tensor w = Tensor::zeros({out_c, in_c, k, k});
  const double fan_in = static_cast<double>(in_c) * k * k;
  const double fan_out = static_cast<double>(out_c) * k * k;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  double* wd = w.data();
  for (int64_t i = 0; i < w.size(); ++i) wd[i] = rng.uniform(-limit, limit);
  ConvLayer layer;
  layer.w = Param(name + ".weight", std::move(w));
  layer.b = Param(name + ".bias", Tensor::zeros({out_c}));
  return layer;
}

inline Tensor conv_relu(const ConvLayer& l, const Tensor& x, Tape* tape) {
  const int k = l.w.value.dim(2);
  return relu(conv2d(x, l.w.value, l.b.value, (k - 1) / 2, tape), tape);
}

inline Tensor conv_only(const ConvLayer& l, const Tensor& x, Tape* tape) {
  const int k = l.w.value.dim(2);
  return conv2d(x, l.w.value, l.b.value, (k - 1) / 2, tape);
}

}  // namespace

Model build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed));
  const int c1 = cfg.stage_channels[0];
  const int c2 = cfg.stage_channels[1];
  const int c3 = cfg.stage_channels[2];
  const int fused = c2 + c3;

  Model m;
  m.cfg = cfg;
  m.s1a = make_conv("stage1.conv1", c1, cfg.input_channels, 3, rng);
  m.s1b = make_conv("stage1.conv2", c1, c1, 3, rng);
  m.s2a = make_conv("stage2.conv1", c2, c1, 3, rng);
  m.s2b = make_conv("stage2.conv2", c2, c2, 3, rng);
  m.s3a = make_conv("stage3.conv1", c3, c2, 3, rng);
  m.s3b = make_conv("stage3.conv2", c3, c3, 3, rng);
  m.score1 = make_conv("head.score.conv1", cfg.head_hidden, fused, 1, rng);
  m.score2 = make_conv("head.score.conv2", 1, cfg.head_hidden, 1, rng);
  m.reg1 = make_conv("head.reg.conv1", cfg.head_hidden, fused, 1, rng);
  m.reg2 = make_conv("head.reg.conv2", 4, cfg.head_hidden, 1, rng);
  if (cfg.n_landmarks > 0) {
    m.lm1 = make_conv("head.landmark.conv1", cfg.head_hidden, fused, 1, rng);
    m.lm2 = make_conv("head.landmark.conv2", cfg.n_landmarks, cfg.head_hidden, 1, rng);
    m.rf1 = make_conv("refine.conv1", cfg.refine_hidden, 1 + cfg.n_landmarks, 3, rng);
    m.rf2 = make_conv("refine.conv2", cfg.refine_hidden, cfg.refine_hidden, 3, rng);
    m.rf3 = make_conv("refine.conv3", 1, cfg.refine_hidden, 1, rng);
  }
  return m;
}

std::vector<Param*> Model::parameters() {
  std::vector<Param*> out;
  ConvLayer* layers[] = {&s1a, &s1b, &s2a, &s2b, &s3a, &s3b,
                         &score1, &score2, &reg1, &reg2};
  for (ConvLayer* l : layers) {
    out.push_back(&l->w);
    out.push_back(&l->b);
  }
  if (has_landmarks()) {
    ConvLayer* extra[] = {&lm1, &lm2, &rf1, &rf2, &rf3};
    for (ConvLayer* l : extra) {
      out.push_back(&l->w);
      out.push_back(&l->b);
    }
  }
  return out;
}

std::vector<const Param*> Model::parameters() const {
  auto mutable_params = const_cast<Model*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

Model Model::clone_values() const {
  Model copy;
  copy.cfg = cfg;
  auto src = parameters();
  // build the same layer layout, then overwrite tensors with deep copies
  copy.s1a = s1a;
  copy.s1b = s1b;
  copy.s2a = s2a;
  copy.s2b = s2b;
  copy.s3a = s3a;
  copy.s3b = s3b;
  copy.score1 = score1;
  copy.score2 = score2;
  copy.reg1 = reg1;
  copy.reg2 = reg2;
  copy.lm1 = lm1;
  copy.lm2 = lm2;
  copy.rf1 = rf1;
  copy.rf2 = rf2;
  copy.rf3 = rf3;
  for (Param* p : copy.parameters()) {
    p->value = p->value.clone();
    p->value.set_requires_grad(true);
  }
  return copy;
}

OutputMaps forward(const Model& m, const Tensor& image, Tape* tape) {
  if (!image.defined() || image.shape().size() != 3 ||
      image.dim(0) != m.cfg.input_channels) {
    throw ShapeError("forward expects a " + std::to_string(m.cfg.input_channels) +
                     "xHxW image");
  }
  if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0) {
    throw ShapeError("forward needs H and W divisible by 8; pad the input first");
  }

  Tensor x = conv_relu(m.s1a, image, tape);
  x = conv_relu(m.s1b, x, tape);
  x = maxpool2(x, tape);  // /2
  x = conv_relu(m.s2a, x, tape);
  x = conv_relu(m.s2b, x, tape);
  Tensor f_low = maxpool2(x, tape);  // /4

  Tensor y = maxpool2(f_low, tape);  // /8
  y = conv_relu(m.s3a, y, tape);
  y = conv_relu(m.s3b, y, tape);
  Tensor f_high = bilinear_upsample2(y, tape);  // back to /4

  Tensor fused = concat_channels(f_low, f_high, tape);

  OutputMaps out;
  out.score = conv_only(m.score2, conv_relu(m.score1, fused, tape), tape);
  out.reg = conv_only(m.reg2, conv_relu(m.reg1, fused, tape), tape);
  if (m.has_landmarks()) {
    out.landmarks = conv_only(m.lm2, conv_relu(m.lm1, fused, tape), tape);
    Tensor rf_in = concat_channels(out.score, out.landmarks, tape);
    Tensor r = conv_relu(m.rf1, rf_in, tape);
    r = conv_relu(m.rf2, r, tape);
    out.refine_score = conv_only(m.rf3, r, tape);
  }
  return out;
}

PatchMasks mine_patch(const OutputMaps& maps, const GroundTruthMap& gt,
                      const MiningConfig& mining, double r_near,
                      bool refine_uses_det_mask) {
  PatchMasks masks;
  Tensor det_loss_map = pixel_sq_loss(maps.score, gt.score);
  masks.det = mine_and_select(det_loss_map, gt.score, gt.ignore, mining);
  if (maps.landmarks.defined() && gt.landmarks.dim(0) > 0) {
    masks.lm = mine_landmark_masks(maps.landmarks, gt.landmarks, r_near, mining);
  }
  if (maps.refine_score.defined() && !refine_uses_det_mask) {
    Tensor rf_loss_map = pixel_sq_loss(maps.refine_score, gt.score);
    masks.refine = mine_and_select(rf_loss_map, gt.score, gt.ignore,
                                   mining.with_seed(derive_seed(mining.rng_seed, 0x7266ULL, 0)));
    masks.separate_refine = true;
  }
  return masks;
}

PatchLoss patch_loss(const OutputMaps& maps, const GroundTruthMap& gt,
                     const PatchMasks& masks, const LossWeights& w, Tape* tape) {
  PatchLoss out;
  DetectionLoss det = detection_loss(maps.score, maps.reg, gt, masks.det, w, tape);
  out.det = det.total.value();
  out.n_pos = masks.det.n_pos;
  out.n_hard = masks.det.n_hard;
  out.n_rand = masks.det.n_rand;

  Tensor lm_total, rf_total;
  if (maps.landmarks.defined() && !masks.lm.empty()) {
    lm_total = landmark_loss_with_masks(maps.landmarks, gt.landmarks, masks.lm, tape);
    out.lm = lm_total.value();
  }
  if (maps.refine_score.defined()) {
    const SampleMask& rmask = masks.separate_refine ? masks.refine : masks.det;
    rf_total = masked_l2(maps.refine_score, gt.score, rmask.m, tape);
    out.rf = rf_total.value();
  }
  out.full = full_loss(det.total, lm_total, rf_total, w, tape);
  return out;
}

std::string TrainStats::log_line() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "iter=%ld det_loss=%.9g lm_loss=%.9g rf_loss=%.9g full_loss=%.9g "
                "n_pos=%ld n_hard=%ld n_rand=%ld",
                iter, det, lm, rf, full, n_pos, n_hard, n_rand);
  return std::string(buf);
}

TrainStats train_step(Model& m, const std::vector<TrainItem>& batch,
                      const TrainStepConfig& cfg, long iter) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  const size_t n = batch.size();
  const double inv_batch = 1.0 / static_cast<double>(n);

  std::vector<PatchLoss> losses(n);
  std::vector<std::vector<Tensor>> grads(n);  // per item, per parameter

  parallel_for(n, cfg.threads, [&](size_t i) {
    Model view = m.clone_values();
    Tape tape;
    OutputMaps maps = forward(view, batch[i].patch, &tape);
    MiningConfig mining = cfg.mining.with_seed(
        derive_seed(cfg.seed, 0x6d696eULL, static_cast<uint64_t>(iter) * n + i));
    PatchMasks masks = mine_patch(maps, batch[i].gt, mining, cfg.r_near,
                                  cfg.refine_uses_det_mask);
    PatchLoss loss = patch_loss(maps, batch[i].gt, masks, cfg.loss, &tape);
    tape.backward(loss.full, inv_batch);
    losses[i] = loss;
    auto params = view.parameters();
    grads[i].reserve(params.size());
    for (Param* p : params) {
      const double* g = p->value.grad_data();
      grads[i].push_back(g ? Tensor::from_data(p->value.shape(),
                                               std::vector<double>(g, g + p->value.size()))
                           : Tensor());
    }
  });

  // reduce gradients in batch order, independent of thread scheduling
  auto params = m.parameters();
  for (size_t i = 0; i < n; ++i) {
    for (size_t pi = 0; pi < params.size(); ++pi) {
      if (!grads[i][pi].defined()) continue;
      double* dst = params[pi]->value.grad();
      const double* src = grads[i][pi].data();
      for (int64_t k = 0; k < grads[i][pi].size(); ++k) dst[k] += src[k];
    }
  }
  sgd_step(params, cfg.optim.lr, cfg.optim.momentum, cfg.optim.weight_decay);

  TrainStats stats;
  stats.iter = iter;
  for (const PatchLoss& l : losses) {
    stats.det += l.det * inv_batch;
    stats.lm += l.lm * inv_batch;
    stats.rf += l.rf * inv_batch;
    stats.full += l.full.value() * inv_batch;
    stats.n_pos += l.n_pos;
    stats.n_hard += l.n_hard;
    stats.n_rand += l.n_rand;
  }
  return stats;
}

}  // namespace densebox
