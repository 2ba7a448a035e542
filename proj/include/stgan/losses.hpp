#pragma once

#include "stgan/models.hpp"
#include "stgan/tensor.hpp"

namespace stgan {

// Mean of max(z,0) - z*y + log(1 + exp(-|z|)) over all elements.
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

// Binary cross-entropy on probabilities, logs clamped at kLogFloor.
Tensor bce_probs(const Tensor& probs, const Tensor& target);

inline constexpr double kDiceSmoothing = 1.0;

// 1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s), s = kDiceSmoothing.
Tensor dice_loss(const Tensor& probs, const Tensor& target);

// 0.5 * bce_probs + 0.5 * dice_loss.
Tensor supervised_loss(const Tensor& probs, const Tensor& target);

// mean |a - b|
Tensor l1_loss(const Tensor& a, const Tensor& b);

// 0.5 * [bce(D(c, real), 1) + bce(D(c, fake), 0)]. Pass a detached fake.
Tensor discriminator_loss(const Discriminator& d, const Tensor& condition,
                          const Tensor& real, const Tensor& fake);

// Non-saturating generator term bce(D(c, fake), 1).
Tensor adversarial_loss(const Discriminator& d, const Tensor& condition,
                        const Tensor& fake);

struct GanLosses {
  Tensor prediction;   // G(image)
  Tensor loss_d;
  Tensor adversarial;  // generator's adversarial term
  Tensor supervised;   // unweighted 0.5*bce + 0.5*dice
  Tensor loss_g;       // adversarial + lambda_seg * supervised
};

// Vanilla conditional GAN objective for one (image, mask) batch. The
// discriminator term sees a detached prediction, so loss_d never reaches G.
GanLosses gan_losses(const Generator& g, const Discriminator& d, const Tensor& image,
                     const Tensor& gt_mask, double lambda_seg);

struct CycleGanLosses {
  Tensor fake_mask;       // G1(image)
  Tensor fake_image;      // G2(gt_mask)
  Tensor loss_d1;         // mask discriminator
  Tensor loss_d2;         // image discriminator
  Tensor adversarial_g1;
  Tensor adversarial_g2;
  Tensor supervised;      // unweighted, on G1(image)
  Tensor cycle;           // lambda_cyc * (|G2(G1(x)) - x| + |G1(G2(y)) - y|)
  Tensor loss_g1;         // adversarial_g1 + cycle + lambda_seg * supervised
  Tensor loss_g2;         // adversarial_g2 + cycle
  Tensor generator_total; // adversarial_g1 + adversarial_g2 + cycle + lambda_seg * supervised
};

// G1: image -> mask, G2: mask -> image. D1 scores masks conditioned on the
// image, D2 scores images conditioned on the mask.
CycleGanLosses cyclegan_losses(const Generator& g1, const Generator& g2,
                               const Discriminator& d1, const Discriminator& d2,
                               const Tensor& image, const Tensor& gt_mask,
                               double lambda_seg, double lambda_cyc);

}  // namespace stgan
