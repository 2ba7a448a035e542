#include "stgan/losses.hpp"

#include <cmath>

#include "stgan/errors.hpp"
#include "stgan/ops.hpp"

namespace stgan {

using detail::grad_buffer;
using detail::TensorImpl;

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) +
                     " vs target " + shape_str(target.shape()));
  }
  const auto z = logits.data();
  const auto y = target.data();
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::fabs(z[i])));
  }
  return Tensor::make_result(
      {}, {total / n}, {logits, target},
      [n](TensorImpl& self) {
        TensorImpl& iz = *self.inputs[0];
        TensorImpl& iy = *self.inputs[1];
        const double g = self.grad[0] / n;
        if (iz.requires_grad) {
          auto& gz = grad_buffer(iz);
          for (std::size_t i = 0; i < gz.size(); ++i) {
            const double zi = iz.value[i];
            const double s = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi))
                                     : std::exp(zi) / (1.0 + std::exp(zi));
            gz[i] += g * (s - iy.value[i]);
          }
        }
        if (iy.requires_grad) {
          auto& gy = grad_buffer(iy);
          for (std::size_t i = 0; i < gy.size(); ++i) gy[i] -= g * iz.value[i];
        }
      },
      "bce_with_logits");
}

Tensor bce_probs(const Tensor& probs, const Tensor& target) {
  if (probs.shape() != target.shape()) {
    throw ShapeError("bce_probs: probs " + shape_str(probs.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const Tensor positive = target * log(probs);
  const Tensor negative = (1.0 - target) * log(1.0 - probs);
  return -mean(positive + negative);
}

Tensor dice_loss(const Tensor& probs, const Tensor& target) {
  if (probs.shape() != target.shape()) {
    throw ShapeError("dice_loss: probs " + shape_str(probs.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const Tensor overlap = sum(probs * target) * 2.0 + kDiceSmoothing;
  const Tensor total = (sum(probs) + sum(target)) + kDiceSmoothing;
  return 1.0 - overlap / total;
}

Tensor supervised_loss(const Tensor& probs, const Tensor& target) {
  return bce_probs(probs, target) * 0.5 + dice_loss(probs, target) * 0.5;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) { return mean(abs(a - b)); }

Tensor discriminator_loss(const Discriminator& d, const Tensor& condition,
                          const Tensor& real, const Tensor& fake) {
  const Tensor real_logits = d(condition, real);
  const Tensor fake_logits = d(condition, fake);
  const Tensor real_term =
      bce_with_logits(real_logits, Tensor::full(real_logits.shape(), 1.0));
  const Tensor fake_term =
      bce_with_logits(fake_logits, Tensor::zeros(fake_logits.shape()));
  return (real_term + fake_term) * 0.5;
}

Tensor adversarial_loss(const Discriminator& d, const Tensor& condition,
                        const Tensor& fake) {
  const Tensor logits = d(condition, fake);
  return bce_with_logits(logits, Tensor::full(logits.shape(), 1.0));
}

GanLosses gan_losses(const Generator& g, const Discriminator& d, const Tensor& image,
                     const Tensor& gt_mask, double lambda_seg) {
  GanLosses out;
  out.prediction = g(image);
  out.loss_d = discriminator_loss(d, image, gt_mask, out.prediction.detach());
  out.adversarial = adversarial_loss(d, image, out.prediction);
  out.supervised = supervised_loss(out.prediction, gt_mask);
  out.loss_g = out.adversarial + out.supervised * lambda_seg;
  return out;
}

CycleGanLosses cyclegan_losses(const Generator& g1, const Generator& g2,
                               const Discriminator& d1, const Discriminator& d2,
                               const Tensor& image, const Tensor& gt_mask,
                               double lambda_seg, double lambda_cyc) {
  CycleGanLosses out;
  out.fake_mask = g1(image);
  out.fake_image = g2(gt_mask);
  out.loss_d1 = discriminator_loss(d1, image, gt_mask, out.fake_mask.detach());
  out.loss_d2 = discriminator_loss(d2, gt_mask, image, out.fake_image.detach());
  out.adversarial_g1 = adversarial_loss(d1, image, out.fake_mask);
  out.adversarial_g2 = adversarial_loss(d2, gt_mask, out.fake_image);
  out.supervised = supervised_loss(out.fake_mask, gt_mask);
  const Tensor image_cycle = l1_loss(g2(out.fake_mask), image);
  const Tensor mask_cycle = l1_loss(g1(out.fake_image), gt_mask);
  out.cycle = (image_cycle + mask_cycle) * lambda_cyc;
  out.loss_g1 = out.adversarial_g1 + out.cycle + out.supervised * lambda_seg;
  out.loss_g2 = out.adversarial_g2 + out.cycle;
  out.generator_total =
      out.adversarial_g1 + out.adversarial_g2 + out.cycle + out.supervised * lambda_seg;
  return out;
}

}  // namespace stgan
