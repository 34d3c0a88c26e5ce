#pragma once

#include <cmath>
#include <vector>

#include "screenseg/nn/layers.hpp"

namespace screenseg::nn {

// Adam with bias correction. State order follows the parameter list handed in
// at construction, which is the models' fixed registration order.
class Adam {
public:
    explicit Adam(std::vector<ParamRef> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.value->shape());
            v_.emplace_back(p.value->shape());
        }
    }

    void zero_grad() {
        for (auto& p : params_)
            if (p.grad) p.grad->fill(0.0f);
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].grad) continue;
            Tensor& w = *params_[i].value;
            const Tensor& g = *params_[i].grad;
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (size_t j = 0; j < w.numel(); ++j) {
                const double gj = g[j];
                m[j] = static_cast<float>(beta1_ * m[j] + (1.0 - beta1_) * gj);
                v[j] = static_cast<float>(beta2_ * v[j] + (1.0 - beta2_) * gj * gj);
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                w[j] = static_cast<float>(w[j] - lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

private:
    std::vector<ParamRef> params_;
    std::vector<Tensor> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace screenseg::nn
