#include "densebox/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "densebox/errors.hpp"
#include "densebox/rng.hpp"

namespace densebox {

void MiningConfig::validate() const {
  if (!(hard_fraction > 0.0 && hard_fraction <= 1.0)) {
    throw DataError("mining.hard_fraction must be in (0,1]");
  }
  if (!(hard_share >= 0.0 && hard_share <= 1.0)) {
    throw DataError("mining.hard_share must be in [0,1]");
  }
  if (neg_pos_ratio < 0.0) throw DataError("mining.neg_pos_ratio must be >= 0");
  if (fallback_negatives < 0) throw DataError("mining.fallback_negatives must be >= 0");
}

Tensor pixel_sq_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw ShapeError("pixel_sq_loss shape mismatch");
  Tensor out = Tensor::zeros(pred.shape());
  const double* p = pred.data();
  const double* t = target.data();
  double* o = out.data();
  for (int64_t i = 0; i < pred.size(); ++i) {
    const double d = p[i] - t[i];
    o[i] = d * d;
  }
  return out;
}

SampleMask mine_and_select(const Tensor& cls_loss_map, const Tensor& labels,
                           const Tensor& ignore, const MiningConfig& cfg) {
  if (!cls_loss_map.same_shape(labels) || !cls_loss_map.same_shape(ignore)) {
    throw ShapeError("mine_and_select shape mismatch");
  }
  const int64_t n = cls_loss_map.size();
  const double* loss = cls_loss_map.data();
  const double* lab = labels.data();
  const double* ign = ignore.data();

  SampleMask mask;
  mask.f_ign = ignore.clone();
  mask.f_sel = Tensor::zeros(labels.shape());
  double* sel = mask.f_sel.data();

  std::vector<int64_t> eligible;
  eligible.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    if (lab[i] == 1.0) {
      sel[i] = 1.0;
      ++mask.n_pos;
    } else if (ign[i] == 0.0) {
      eligible.push_back(i);
    }
  }

  int64_t quota;
  if (mask.n_pos > 0) {
    quota = std::llround(cfg.neg_pos_ratio * mask.n_pos);
  } else {
    quota = cfg.fallback_negatives;
    mask.used_fallback = true;
  }
  quota = std::min<int64_t>(quota, static_cast<int64_t>(eligible.size()));

  if (quota > 0) {
    // hard pool: top fraction by loss, descending; index order breaks ties
    std::stable_sort(eligible.begin(), eligible.end(),
                     [&](int64_t a, int64_t b) { return loss[a] > loss[b]; });
    const int64_t pool_size = std::min<int64_t>(
        static_cast<int64_t>(std::ceil(cfg.hard_fraction * static_cast<double>(eligible.size()))),
        static_cast<int64_t>(eligible.size()));
    const int64_t want_hard = std::min<int64_t>(pool_size, std::llround(quota * cfg.hard_share));
    for (int64_t i = 0; i < want_hard; ++i) sel[eligible[static_cast<size_t>(i)]] = 1.0;
    mask.n_hard = static_cast<int>(want_hard);

    int64_t remaining = quota - want_hard;
    // uniform draw without replacement from the non-hard eligible negatives
    std::vector<int64_t> rest(eligible.begin() + want_hard + (pool_size - want_hard),
                              eligible.end());
    std::sort(rest.begin(), rest.end());
    if (remaining >= static_cast<int64_t>(rest.size())) {
      for (int64_t i : rest) sel[i] = 1.0;
      mask.n_rand = static_cast<int>(rest.size());
      remaining -= static_cast<int64_t>(rest.size());
      // shortfall: backfill from the unused part of the pool
      for (int64_t i = want_hard; i < pool_size && remaining > 0; ++i, --remaining) {
        sel[eligible[static_cast<size_t>(i)]] = 1.0;
        ++mask.n_hard;
      }
    } else {
      Rng rng(cfg.rng_seed);
      for (int64_t i = 0; i < remaining; ++i) {
        const uint64_t j = i + rng.uniform_index(rest.size() - static_cast<size_t>(i));
        std::swap(rest[static_cast<size_t>(i)], rest[j]);
        sel[rest[static_cast<size_t>(i)]] = 1.0;
      }
      mask.n_rand = static_cast<int>(remaining);
    }
  }
  mask.n_neg = mask.n_hard + mask.n_rand;

  mask.m = Tensor::zeros(labels.shape());
  double* m = mask.m.data();
  const double* fi = mask.f_ign.data();
  for (int64_t i = 0; i < n; ++i) m[i] = (1.0 - fi[i]) * sel[i];
  return mask;
}

DetectionLoss detection_loss(const Tensor& pred_score, const Tensor& pred_reg,
                             const GroundTruthMap& gt, const SampleMask& mask,
                             const LossWeights& w, Tape* tape) {
  if (!pred_score.same_shape(gt.score) || !pred_reg.same_shape(gt.reg)) {
    throw ShapeError("detection_loss shape mismatch");
  }
  DetectionLoss result;
  result.n_sel = static_cast<int>(count_ones(mask.m));
  Tensor cls = masked_l2(pred_score, gt.score, mask.m, tape);

  // positive-and-selected mask, replicated over the 4 regression channels
  const int h = gt.score.dim(1), wdt = gt.score.dim(2);
  const size_t plane = static_cast<size_t>(h) * wdt;
  Tensor posmask = Tensor::zeros({4, h, wdt});
  const double* m = mask.m.data();
  const double* y = gt.score.data();
  double* pm = posmask.data();
  int n_pos = 0;
  for (size_t i = 0; i < plane; ++i) {
    if (m[i] == 1.0 && y[i] > 0.0) {
      ++n_pos;
      for (int c = 0; c < 4; ++c) pm[c * plane + i] = 1.0;
    }
  }
  result.n_pos = n_pos;

  Tensor loc_sq = masked_sq_sum(pred_reg, gt.reg, posmask, tape);
  const double loc_w = w.lambda_loc / static_cast<double>(std::max(1, n_pos));
  const Tensor terms[] = {cls, loc_sq};
  const double weights[] = {1.0, loc_w};
  result.total = weighted_sum(terms, weights, tape);
  result.cls = cls.value();
  result.loc = loc_sq.value() * loc_w;
  return result;
}

std::vector<SampleMask> mine_landmark_masks(const Tensor& pred_lm, const Tensor& gt_lm,
                                            double r_near, const MiningConfig& cfg) {
  if (!pred_lm.same_shape(gt_lm)) throw ShapeError("landmark map shape mismatch");
  const int n_ch = gt_lm.dim(0);
  std::vector<SampleMask> masks;
  masks.reserve(static_cast<size_t>(n_ch));
  for (int k = 0; k < n_ch; ++k) {
    Tensor pred_k = slice_channel(pred_lm, k, nullptr);
    Tensor gt_k = slice_channel(gt_lm, k, nullptr);
    Tensor ign_k = compute_ignore_flags(gt_k, r_near);
    Tensor loss_k = pixel_sq_loss(pred_k, gt_k);
    masks.push_back(mine_and_select(loss_k, gt_k, ign_k,
                                    cfg.with_seed(derive_seed(cfg.rng_seed, 0x6c6dULL, k))));
  }
  return masks;
}

Tensor landmark_loss_with_masks(const Tensor& pred_lm, const Tensor& gt_lm,
                                const std::vector<SampleMask>& masks, Tape* tape) {
  const int n_ch = gt_lm.dim(0);
  if (static_cast<int>(masks.size()) != n_ch) {
    throw ShapeError("landmark mask count mismatch");
  }
  std::vector<Tensor> terms;
  std::vector<double> weights;
  for (int k = 0; k < n_ch; ++k) {
    Tensor pred_k = slice_channel(pred_lm, k, tape);
    Tensor gt_k = slice_channel(gt_lm, k, nullptr);
    terms.push_back(masked_l2(pred_k, gt_k, masks[static_cast<size_t>(k)].m, tape));
    weights.push_back(1.0 / n_ch);
  }
  return weighted_sum(terms, weights, tape);
}

Tensor full_loss(const Tensor& det, const Tensor& lm, const Tensor& rf,
                 const LossWeights& w, Tape* tape) {
  std::vector<Tensor> terms{det};
  std::vector<double> weights{w.lambda_det};
  if (lm.defined()) {
    terms.push_back(lm);
    weights.push_back(w.lambda_lm);
  }
  if (rf.defined()) {
    terms.push_back(rf);
    weights.push_back(1.0);
  }
  return weighted_sum(terms, weights, tape);
}

double full_loss_value(double det, double lm, double rf, const LossWeights& w) {
  return w.lambda_det * det + w.lambda_lm * lm + rf;
}

}  // namespace densebox
