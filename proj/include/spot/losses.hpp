#pragma once

#include "spot/masking.hpp"
#include "spot/ops.hpp"

namespace spot {

enum class RepairLossVariant { Saturating, NonSaturating };

/// Mean squared error over every element.
template <typename S>
Tensor<S> mse_mean(const Tensor<S>& pred, const Tensor<S>& target) {
  detail::require_same_shape("mse_mean", pred, target);
  auto pn = pred.node();
  const ArrayX<S> diff = pn->value - target.values();
  const S inv = S(1) / static_cast<S>(diff.size());
  ArrayX<S> v(1);
  v[0] = diff.square().sum() * inv;
  return Tensor<S>::make_result(Shape{1}, std::move(v), {pn},
                                [pn, diff, inv](const ArrayX<S>& g) {
                                  if (pn->requires_grad)
                                    pn->accumulate((diff * (S(2) * inv * g[0])).eval());
                                });
}

/// Mean binary cross-entropy in the numerically stable logit form:
/// per element max(z,0) - z t + log(1 + exp(-|z|)); finite for all finite z.
template <typename S>
Tensor<S> bce_with_logits_mean(const Tensor<S>& logits, const ArrayX<S>& targets) {
  auto ln = logits.node();
  detail::require(targets.size() == ln->value.size(),
                  "bce_with_logits_mean: target length " + std::to_string(targets.size()) +
                      " does not match logits shape " + logits.shape().str());
  const ArrayX<S>& z = ln->value;
  const S inv = S(1) / static_cast<S>(z.size());
  ArrayX<S> v(1);
  v[0] = (z.max(S(0)) - z * targets + (S(1) + (-z.abs()).exp()).log()).sum() * inv;
  return Tensor<S>::make_result(
      Shape{1}, std::move(v), {ln}, [ln, targets, inv](const ArrayX<S>& g) {
        if (!ln->requires_grad) return;
        const ArrayX<S> sig = S(1) / (S(1) + (-ln->value).exp());
        ln->accumulate(((sig - targets) * (inv * g[0])).eval());
      });
}

/// Reconstruction objective: mean over batch and pixels of the squared
/// difference between the decoded image and the input.
template <typename S>
Tensor<S> loss_auto(const Tensor<S>& x_hat, const Tensor<S>& x) {
  return mse_mean(x_hat, x);
}

/// Classifier side of the adversarial objective,
/// -mean[log s(real)] - mean[log(1 - s(fake))], evaluated in logit space.
template <typename S>
Tensor<S> loss_discriminator_class(const Tensor<S>& real_logits, const Tensor<S>& fake_logits) {
  Tensor<S> lr = bce_with_logits_mean(real_logits, ArrayX<S>::Ones(real_logits.size()).eval());
  Tensor<S> lf = bce_with_logits_mean(fake_logits, ArrayX<S>::Zero(fake_logits.size()).eval());
  return add(lr, lf);
}

/// Repair side of the adversarial objective. Saturating is the literal
/// minimax term +mean[log(1 - s(fake))]; non-saturating is the usual
/// -mean[log s(fake)] surrogate with the same gradient sign.
template <typename S>
Tensor<S> loss_repair_class(const Tensor<S>& fake_logits, RepairLossVariant variant) {
  if (variant == RepairLossVariant::Saturating)
    return scale(
        bce_with_logits_mean(fake_logits, ArrayX<S>::Zero(fake_logits.size()).eval()), S(-1));
  return bce_with_logits_mean(fake_logits, ArrayX<S>::Ones(fake_logits.size()).eval());
}

/// Per-site sigmoid cross-entropy between predicted mask logits (N,1,M,N)
/// and the ground-truth drop masks; mean over sites and batch. Applied to
/// corrupt images only.
template <typename S>
Tensor<S> loss_mask(const Tensor<S>& mask_logits, const std::vector<MaskGrid>& masks) {
  detail::require(mask_logits.shape().rank() == 4 && mask_logits.shape().c() == 1,
                  "loss_mask: logits must be (N,1,M,N), got " + mask_logits.shape().str());
  const int n = mask_logits.shape().n();
  detail::require(static_cast<int>(masks.size()) == n,
                  "loss_mask: " + std::to_string(masks.size()) + " masks for batch of " +
                      std::to_string(n));
  const int m = mask_logits.shape().h(), w = mask_logits.shape().w();
  ArrayX<S> targets(mask_logits.size());
  Eigen::Index at = 0;
  for (const MaskGrid& grid : masks) {
    detail::require(grid.height == m && grid.width == w,
                    "loss_mask: mask " + std::to_string(grid.height) + "x" +
                        std::to_string(grid.width) + " vs logits " + std::to_string(m) + "x" +
                        std::to_string(w));
    for (int i = 0; i < m * w; ++i) targets[at++] = static_cast<S>(grid.bits[i]);
  }
  return bce_with_logits_mean(mask_logits, targets);
}

template <typename S>
Tensor<S> loss_mask(const Tensor<S>& mask_logits, const MaskGrid& mask) {
  return loss_mask(mask_logits, std::vector<MaskGrid>{mask});
}

}  // namespace spot
