#include "screenseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "screenseg/error.hpp"

namespace screenseg {

namespace {

inline void check_shapes(std::span<const float> pred, std::span<const float> target) {
    if (pred.size() != target.size())
        throw ShapeError("loss: pred has " + std::to_string(pred.size()) + " pixels, target has " +
                         std::to_string(target.size()));
    if (pred.empty()) throw ShapeError("loss: empty input");
}

inline double clamp_prob(double p) {
    return std::min(1.0 - kClampEps, std::max(kClampEps, p));
}

}  // namespace

double soft_dice(std::span<const float> pred, std::span<const float> target, double smooth) {
    check_shapes(pred, target);
    double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        inter += static_cast<double>(pred[i]) * static_cast<double>(target[i]);
        sum_p += pred[i];
        sum_t += target[i];
    }
    return (2.0 * inter + smooth) / (sum_p + sum_t + smooth);
}

double dice_loss(std::span<const float> pred, std::span<const float> target) {
    return 1.0 - soft_dice(pred, target);
}

void dice_loss_grad(std::span<const float> pred, std::span<const float> target,
                    std::span<float> grad) {
    check_shapes(pred, target);
    if (grad.size() != pred.size()) throw ShapeError("dice_loss_grad: grad size mismatch");
    double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        inter += static_cast<double>(pred[i]) * static_cast<double>(target[i]);
        sum_p += pred[i];
        sum_t += target[i];
    }
    const double num = 2.0 * inter + kDiceSmooth;
    const double den = sum_p + sum_t + kDiceSmooth;
    // d(1 - num/den)/dp_i = -(2 t_i den - num) / den^2
    const double inv_den2 = 1.0 / (den * den);
    for (size_t i = 0; i < pred.size(); ++i)
        grad[i] = static_cast<float>(-(2.0 * target[i] * den - num) * inv_den2);
}

double bce(std::span<const float> pred, std::span<const float> target, Reduction reduction) {
    check_shapes(pred, target);
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double p = clamp_prob(pred[i]);
        const double x = target[i];
        acc -= x * std::log(p) + (1.0 - x) * std::log(1.0 - p);
    }
    return reduction == Reduction::kMean ? acc / static_cast<double>(pred.size()) : acc;
}

void bce_grad(std::span<const float> pred, std::span<const float> target, std::span<float> grad,
              Reduction reduction) {
    check_shapes(pred, target);
    if (grad.size() != pred.size()) throw ShapeError("bce_grad: grad size mismatch");
    const double scale =
        reduction == Reduction::kMean ? 1.0 / static_cast<double>(pred.size()) : 1.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double p = clamp_prob(pred[i]);
        const double x = target[i];
        grad[i] = static_cast<float>(scale * (-(x / p) + (1.0 - x) / (1.0 - p)));
    }
}

double dice_bce(std::span<const float> pred, std::span<const float> target, Reduction reduction) {
    return 0.5 * dice_loss(pred, target) + 0.5 * bce(pred, target, reduction);
}

void dice_bce_grad(std::span<const float> pred, std::span<const float> target,
                   std::span<float> grad, Reduction reduction) {
    if (grad.size() != pred.size()) throw ShapeError("dice_bce_grad: grad size mismatch");
    std::vector<float> tmp(pred.size());
    dice_loss_grad(pred, target, tmp);
    bce_grad(pred, target, grad, reduction);
    for (size_t i = 0; i < grad.size(); ++i) grad[i] = 0.5f * tmp[i] + 0.5f * grad[i];
}

ClassWeights class_weights(std::span<const float> target) {
    size_t positives = 0;
    for (float t : target) positives += (t > 0.5f) ? 1 : 0;
    const double w1 = 1.0 / static_cast<double>(std::max<size_t>(1, positives));
    return {1.0 - w1, w1};
}

double w_bce(std::span<const float> pred, std::span<const float> target,
             const ClassWeights& weights, Reduction reduction) {
    check_shapes(pred, target);
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double p = clamp_prob(pred[i]);
        const double x = target[i];
        acc -= weights.w0 * x * std::log(p) + weights.w1 * (1.0 - x) * std::log(1.0 - p);
    }
    return reduction == Reduction::kMean ? acc / static_cast<double>(pred.size()) : acc;
}

void w_bce_grad(std::span<const float> pred, std::span<const float> target,
                const ClassWeights& weights, std::span<float> grad, Reduction reduction) {
    check_shapes(pred, target);
    if (grad.size() != pred.size()) throw ShapeError("w_bce_grad: grad size mismatch");
    const double scale =
        reduction == Reduction::kMean ? 1.0 / static_cast<double>(pred.size()) : 1.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double p = clamp_prob(pred[i]);
        const double x = target[i];
        grad[i] =
            static_cast<float>(scale * (-(weights.w0 * x / p) + weights.w1 * (1.0 - x) / (1.0 - p)));
    }
}

double bce_scalar(double pred, double target) {
    const double p = clamp_prob(pred);
    return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double bce_scalar_grad(double pred, double target) {
    const double p = clamp_prob(pred);
    return -(target / p) + (1.0 - target) / (1.0 - p);
}

}  // namespace screenseg
