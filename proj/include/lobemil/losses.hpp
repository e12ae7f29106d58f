#pragma once

#include <optional>

#include "lobemil/tensor.hpp"

namespace lobemil {

struct LossConfig {
  double lambda = 0.01;    // trade-off between MIL and segmentation terms
  double dice_eps = 1e-6;  // smoothing added to the Dice denominator
};

// Negative log softmax probability of the true class. logits: [C], C >= 2.
Tensor mil_loss(const Tensor& logits, int label);

// Combined per-patch cross-entropy (pixel mean) plus per-class Dice terms
// 1 - 2|P().G|/(|P|+|G|+eps), summed over classes present in the patch's
// ground truth and averaged over mask-bearing patches. Patches whose mask
// pointer is null contribute nothing; with no masks at all the result is an
// exact constant zero that propagates no gradient.
// logits: [n, C, S, S]; masks[i] points at S*S labels in [0, C) or is null.
Tensor seg_loss(const Tensor& logits,
                const std::vector<const uint8_t*>& masks,
                double dice_eps = 1e-6);

// lambda * mil + seg.
Tensor total_loss(const Tensor& mil, const Tensor& seg, const LossConfig& cfg);

}  // namespace lobemil
