#pragma once

#include <cstdint>
#include <vector>

#include "densebox/groundtruth.hpp"
#include "densebox/tensor.hpp"

namespace densebox {

// Per-pixel training flags. m holds the Eq-style mask identity
// m = (1 - f_ign) * f_sel.
struct SampleMask {
  Tensor f_ign;
  Tensor f_sel;
  Tensor m;
  int n_pos = 0;
  int n_neg = 0;
  int n_hard = 0;
  int n_rand = 0;
  bool used_fallback = false;  // zero positives in the map
};

struct MiningConfig {
  double hard_fraction = 0.01;  // share of eligible negatives forming the hard pool
  double hard_share = 0.5;      // share of the negative quota taken from the pool
  double neg_pos_ratio = 1.0;
  int fallback_negatives = 16;  // quota when the map has no positives
  uint64_t rng_seed = 0;

  void validate() const;
  MiningConfig with_seed(uint64_t seed) const {
    MiningConfig c = *this;
    c.rng_seed = seed;
    return c;
  }
};

struct LossWeights {
  double lambda_loc = 3.0;
  double lambda_det = 1.0;
  double lambda_lm = 0.5;
};

// Selects all positives plus a mined set of negatives: the quota is
// round(neg_pos_ratio * n_pos); a hard pool of the top
// ceil(hard_fraction * #eligible) negatives by loss supplies
// round(quota * hard_share) of it and the rest is drawn uniformly from the
// non-hard eligible negatives (backfilled from the pool on shortfall).
SampleMask mine_and_select(const Tensor& cls_loss_map, const Tensor& labels,
                           const Tensor& ignore, const MiningConfig& cfg);

// Elementwise (pred - target)^2; selection input for mining. Not recorded on
// any tape: sample selection is not differentiated through.
Tensor pixel_sq_loss(const Tensor& pred, const Tensor& target);

struct DetectionLoss {
  Tensor total;   // scalar, on tape
  double cls = 0;
  double loc = 0;
  int n_pos = 0;  // selected positive pixels
  int n_sel = 0;  // all selected pixels
};

// cls term: sum(m*(s-y)^2)/max(1,n_sel). loc term:
// lambda_loc * sum([y>0]*m*sum_4ch (d-d*)^2)/max(1,n_pos).
DetectionLoss detection_loss(const Tensor& pred_score, const Tensor& pred_reg,
                             const GroundTruthMap& gt, const SampleMask& mask,
                             const LossWeights& w, Tape* tape);

// Masked L2 per landmark channel with an independently mined mask, averaged
// over channels.
Tensor landmark_loss_with_masks(const Tensor& pred_lm, const Tensor& gt_lm,
                                const std::vector<SampleMask>& masks, Tape* tape);

std::vector<SampleMask> mine_landmark_masks(const Tensor& pred_lm, const Tensor& gt_lm,
                                            double r_near, const MiningConfig& cfg);

// lambda_det*det + lambda_lm*lm + rf. Undefined lm/rf terms contribute 0.
Tensor full_loss(const Tensor& det, const Tensor& lm, const Tensor& rf,
                 const LossWeights& w, Tape* tape);
double full_loss_value(double det, double lm, double rf, const LossWeights& w);

}  // namespace densebox
