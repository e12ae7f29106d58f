#include "lobemil/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "lobemil/nn.hpp"

namespace lobemil {

Tensor mil_loss(const Tensor& logits, int label) {
  if (logits.shape().size() != 1 || logits.numel() < 2)
    throw std::invalid_argument("mil_loss: expected [C>=2] logits, got " +
                                shape_str(logits.shape()));
  int64_t c = logits.numel();
  if (label < 0 || label >= c)
    throw std::invalid_argument("mil_loss: label " + std::to_string(label) +
                                " outside [0," + std::to_string(c) + ")");
  const auto& z = logits.data();
  double mx = z[0];
  for (int64_t i = 1; i < c; ++i) mx = std::max(mx, z[size_t(i)]);
  double lse = 0.0;
  for (int64_t i = 0; i < c; ++i) lse += std::exp(z[size_t(i)] - mx);
  lse = std::log(lse) + mx;
  double loss = lse - z[size_t(label)];

  return Tensor::make(
      {1}, {loss}, {logits},
      [logits, label, lse, c](TensorImpl& self) mutable {
        if (!logits.requires_grad()) return;
        double g = (*self.grad)[0];
        auto& gz = logits.mutable_grad();
        const auto& z2 = logits.data();
        for (int64_t i = 0; i < c; ++i) {
          double p = std::exp(z2[size_t(i)] - lse);
          gz[size_t(i)] += g * (p - (i == label ? 1.0 : 0.0));
        }
      },
      "mil_loss");
}

Tensor seg_loss(const Tensor& logits,
                const std::vector<const uint8_t*>& masks, double dice_eps) {
  if (logits.shape().size() != 4)
    throw std::invalid_argument("seg_loss: expected [n,C,S,S] logits, got " +
                                shape_str(logits.shape()));
  int64_t n = logits.dim(0), c = logits.dim(1);
  int64_t sh = logits.dim(2), sw = logits.dim(3);
  int64_t px = sh * sw;
  if (int64_t(masks.size()) != n)
    throw std::invalid_argument("seg_loss: mask list length " +
                                std::to_string(masks.size()) +
                                " does not match batch " + std::to_string(n));

  std::vector<int64_t> with_mask;
  for (int64_t i = 0; i < n; ++i)
    if (masks[size_t(i)] != nullptr) with_mask.push_back(i);
  if (with_mask.empty()) return Tensor::scalar(0.0);

  for (int64_t i : with_mask)
    for (int64_t q = 0; q < px; ++q)
      if (masks[size_t(i)][q] >= c)
        throw std::invalid_argument(
            "seg_loss: mask label " + std::to_string(masks[size_t(i)][q]) +
            " outside [0," + std::to_string(c) + ")");

  int64_t m = int64_t(with_mask.size());
  const auto& z = logits.data();

  // The backward closure owns a copy of the masked labels; callers are free
  // to drop their buffers after the forward pass.
  std::vector<uint8_t> labels(size_t(m * px));
  for (int64_t mi = 0; mi < m; ++mi)
    std::copy(masks[size_t(with_mask[size_t(mi)])],
              masks[size_t(with_mask[size_t(mi)])] + px,
              labels.begin() + mi * px);

  // Per masked patch: softmax probabilities, per-class sums, loss pieces.
  std::vector<double> probs(size_t(m * c * px));
  std::vector<double> class_pred(size_t(m * c), 0.0);   // sum of probs
  std::vector<double> class_inter(size_t(m * c), 0.0);  // sum over gt pixels
  std::vector<int64_t> class_gt(size_t(m * c), 0);
  double total = 0.0;
  for (int64_t mi = 0; mi < m; ++mi) {
    int64_t i = with_mask[size_t(mi)];
    const uint8_t* lab = masks[size_t(i)];
    const double* zp = z.data() + i * c * px;
    double* pp = probs.data() + mi * c * px;
    double ce = 0.0;
    for (int64_t q = 0; q < px; ++q) {
      double mx = zp[q];
      for (int64_t k = 1; k < c; ++k) mx = std::max(mx, zp[k * px + q]);
      double lse = 0.0;
      for (int64_t k = 0; k < c; ++k) lse += std::exp(zp[k * px + q] - mx);
      lse = std::log(lse) + mx;
      for (int64_t k = 0; k < c; ++k)
        pp[k * px + q] = std::exp(zp[k * px + q] - lse);
      ce += lse - zp[int64_t(lab[q]) * px + q];
    }
    total += ce / double(px);
    for (int64_t q = 0; q < px; ++q) ++class_gt[size_t(mi * c + lab[q])];
    for (int64_t k = 0; k < c; ++k) {
      double psum = 0.0, isum = 0.0;
      for (int64_t q = 0; q < px; ++q) {
        psum += pp[k * px + q];
        if (lab[q] == k) isum += pp[k * px + q];
      }
      class_pred[size_t(mi * c + k)] = psum;
      class_inter[size_t(mi * c + k)] = isum;
      // Classes absent from the ground truth are skipped so that a perfect
      // prediction scores exactly zero.
      if (class_gt[size_t(mi * c + k)] > 0) {
        double denom = psum + double(class_gt[size_t(mi * c + k)]) + dice_eps;
        total += 1.0 - 2.0 * isum / denom;
      }
    }
  }
  total /= double(m);

  return Tensor::make(
      {1}, {total}, {logits},
      [logits, with_mask, labels = std::move(labels),
       probs = std::move(probs), class_pred = std::move(class_pred),
       class_inter = std::move(class_inter), class_gt = std::move(class_gt),
       m, c, px, dice_eps](TensorImpl& self) mutable {
        if (!logits.requires_grad()) return;
        double g = (*self.grad)[0] / double(m);
        auto& gz = logits.mutable_grad();
        std::vector<double> gprob(size_t(c), 0.0);
        for (int64_t mi = 0; mi < m; ++mi) {
          int64_t i = with_mask[size_t(mi)];
          const uint8_t* lab = labels.data() + mi * px;
          const double* pp = probs.data() + mi * c * px;
          double* gzp = gz.data() + i * c * px;
          // Dice sensitivity to each class total.
          std::vector<double> dice_dI(size_t(c), 0.0), dice_dP(size_t(c), 0.0);
          for (int64_t k = 0; k < c; ++k) {
            int64_t gt = class_gt[size_t(mi * c + k)];
            if (gt == 0) continue;
            double denom = class_pred[size_t(mi * c + k)] + double(gt) +
                           dice_eps;
            double inter = class_inter[size_t(mi * c + k)];
            dice_dI[size_t(k)] = -2.0 / denom;
            dice_dP[size_t(k)] = 2.0 * inter / (denom * denom);
          }
          for (int64_t q = 0; q < px; ++q) {
            // d(ce)/dz via softmax-minus-onehot, dice via the chain rule
            // through the per-pixel softmax.
            for (int64_t k = 0; k < c; ++k)
              gprob[size_t(k)] =
                  dice_dP[size_t(k)] +
                  (lab[q] == k ? dice_dI[size_t(k)] : 0.0);
            double dot = 0.0;
            for (int64_t k = 0; k < c; ++k)
              dot += gprob[size_t(k)] * pp[k * px + q];
            for (int64_t k = 0; k < c; ++k) {
              double pk = pp[k * px + q];
              double ce_term =
                  (pk - (lab[q] == k ? 1.0 : 0.0)) / double(px);
              double dice_term = pk * (gprob[size_t(k)] - dot);
              gzp[k * px + q] += g * (ce_term + dice_term);
            }
          }
        }
      },
      "seg_loss");
}

Tensor total_loss(const Tensor& mil, const Tensor& seg,
                  const LossConfig& cfg) {
  if (mil.numel() != 1 || seg.numel() != 1)
    throw std::invalid_argument("total_loss: both terms must be scalar");
  if (!std::isfinite(mil.item()) || !std::isfinite(seg.item()))
    throw std::invalid_argument("total_loss: non-finite loss term");
  return add(scale(mil, cfg.lambda), seg);
}

}  // namespace lobemil
