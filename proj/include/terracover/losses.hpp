#pragma once

#include <cmath>

#include "terracover/raster.hpp"
#include "terracover/tensor.hpp"

namespace terra {

template <typename Scalar>
struct LossValue {
  Scalar loss = 0;
  typename Tensor<Scalar>::Array grad;  // dL/dlogits, same layout as logits
};

// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets over all
// B*K entries. Stable form: max(z,0) - z*t + log1p(exp(-|z|)).
template <typename Scalar>
LossValue<Scalar> bce_multilabel_loss(const Tensor<Scalar>& logits,
                                      const Tensor<Scalar>& targets) {
  if (!logits.same_shape(targets)) {
    throw DataError("bce: logits shape " + shape_string(logits.shape()) +
                    " vs targets " + shape_string(targets.shape()));
  }
  for (Eigen::Index i = 0; i < targets.size(); ++i) {
    const Scalar t = targets.values()[i];
    if (t != Scalar(0) && t != Scalar(1)) {
      throw DataError("bce targets must be 0 or 1");
    }
  }

  const auto& z = logits.values();
  const auto& t = targets.values();
  const Scalar n = static_cast<Scalar>(logits.size());

  LossValue<Scalar> out;
  out.loss = (z.max(Scalar(0)) - z * t + (-z.abs()).exp().log1p()).sum() / n;
  // sigmoid(z) via the stable tanh identity.
  out.grad = (Scalar(0.5) * (Scalar(1) + (z * Scalar(0.5)).tanh()) - t) / n;
  return out;
}

// Mean negative log softmax probability of the true class over non-nodata
// pixels. Logits are [B,K,H,W]; masks carry one row-major [H,W] plane per
// batch item with 255 = nodata.
template <typename Scalar>
LossValue<Scalar> pixel_crossentropy_loss(const Tensor<Scalar>& logits,
                                          std::span<const MaskGrid> masks) {
  if (logits.rank() != 4 || static_cast<std::size_t>(logits.dim(0)) != masks.size()) {
    throw DataError("pixel_ce: logits must be [B,K,H,W] with one mask per item");
  }
  const Eigen::Index batch = logits.dim(0), k = logits.dim(1);
  const Eigen::Index h = logits.dim(2), w = logits.dim(3);
  const Eigen::Index hw = h * w;

  LossValue<Scalar> out;
  out.grad = Tensor<Scalar>::Array::Zero(logits.size());

  // First pass counts valid pixels so the gradient can be scaled in place.
  Eigen::Index valid = 0;
  for (const MaskGrid& mask : masks) {
    if (mask.height != h || mask.width != w) {
      throw DataError("pixel_ce: mask shape mismatch");
    }
    for (std::uint8_t v : mask.values) {
      if (v == kNodata) continue;
      if (v >= k) throw DataError("pixel_ce: mask class out of range");
      ++valid;
    }
  }
  if (valid == 0) throw DataError("pixel_ce: all pixels are nodata");

  Scalar total = 0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Scalar* src = logits.data() + b * k * hw;
    Scalar* g = out.grad.data() + b * k * hw;
    const MaskGrid& mask = masks[static_cast<std::size_t>(b)];
    for (Eigen::Index p = 0; p < hw; ++p) {
      const std::uint8_t label = mask.values[static_cast<std::size_t>(p)];
      if (label == kNodata) continue;

      Scalar top = src[p];
      for (Eigen::Index c = 1; c < k; ++c) top = std::max(top, src[c * hw + p]);
      Scalar denom = 0;
      for (Eigen::Index c = 0; c < k; ++c) denom += std::exp(src[c * hw + p] - top);
      const Scalar log_denom = std::log(denom) + top;
      total += log_denom - src[label * hw + p];

      for (Eigen::Index c = 0; c < k; ++c) {
        const Scalar softmax = std::exp(src[c * hw + p] - log_denom);
        g[c * hw + p] = (softmax - (c == label ? Scalar(1) : Scalar(0))) /
                        static_cast<Scalar>(valid);
      }
    }
  }
  out.loss = total / static_cast<Scalar>(valid);
  return out;
}

}  // namespace terra
