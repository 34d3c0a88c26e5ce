#pragma once

#include <span>

namespace screenseg {

// Segmentation losses. All functions take flattened per-pixel arrays; the
// prediction is a probability map (sigmoid output) and the target may be soft
// (mean-sampled labels) or binary. Values and gradients are computed in
// double precision.
//
// Conventions:
//   - predictions are clamped to [kClampEps, 1 - kClampEps] before any log;
//   - the soft Dice coefficient carries a smooth term in numerator and
//     denominator, which defines the empty-vs-empty case as exactly 1;
//   - the optimized Dice loss is 1 - coefficient (the coefficient itself is
//     the reported metric).

inline constexpr double kDiceSmooth = 1e-6;
inline constexpr double kClampEps = 1e-7;

enum class Reduction { kSum, kMean };

// Soft Dice coefficient: (2 sum(p*t) + s) / (sum(p) + sum(t) + s), in [0,1].
double soft_dice(std::span<const float> pred, std::span<const float> target,
                 double smooth = kDiceSmooth);

// 1 - soft_dice.
double dice_loss(std::span<const float> pred, std::span<const float> target);
void dice_loss_grad(std::span<const float> pred, std::span<const float> target,
                    std::span<float> grad);

// Binary cross-entropy: -sum_n [ x_n log p_n + (1 - x_n) log(1 - p_n) ],
// optionally divided by the pixel count (kMean, the default).
double bce(std::span<const float> pred, std::span<const float> target,
           Reduction reduction = Reduction::kMean);
void bce_grad(std::span<const float> pred, std::span<const float> target, std::span<float> grad,
              Reduction reduction = Reduction::kMean);

// Equal-weight combo: 0.5 * dice_loss + 0.5 * bce. Computed by composing the
// two components, never reimplemented.
double dice_bce(std::span<const float> pred, std::span<const float> target,
                Reduction reduction = Reduction::kMean);
void dice_bce_grad(std::span<const float> pred, std::span<const float> target,
                   std::span<float> grad, Reduction reduction = Reduction::kMean);

// Per-class weights for the weighted BCE. w0 multiplies the positive-pixel
// term (x_n log p_n) and w1 the negative-pixel term, with
// w1 = 1 / max(1, #positives) and w0 = 1 - w1. The max(1,.) guard covers
// frames without positive pixels, where the positive term vanishes anyway.
struct ClassWeights {
    double w0 = 0.5;
    double w1 = 0.5;

    ClassWeights swapped() const { return {w1, w0}; }
};

// Soft targets are thresholded at 0.5 for the positive-pixel count.
ClassWeights class_weights(std::span<const float> target);

// Weighted BCE: -sum_n [ w0 x_n log p_n + w1 (1 - x_n) log(1 - p_n) ].
double w_bce(std::span<const float> pred, std::span<const float> target,
             const ClassWeights& weights, Reduction reduction = Reduction::kMean);
void w_bce_grad(std::span<const float> pred, std::span<const float> target,
                const ClassWeights& weights, std::span<float> grad,
                Reduction reduction = Reduction::kMean);

// Scalar BCE on a single probability (frame classifier loss helper).
double bce_scalar(double pred, double target);
double bce_scalar_grad(double pred, double target);

}  // namespace screenseg
