#pragma once

#include <string>
#include <vector>

#include "screenseg/rng.hpp"
#include "screenseg/tensor.hpp"

namespace screenseg::nn {

// Named handle onto a layer's tensor pair (value, gradient). Collected in a
// fixed registration order, which also fixes initialization, checkpoint and
// optimizer-state order.
struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;  // null for non-trainable buffers (BN running stats)
};

// Layers cache whatever their backward pass needs while `training` is true;
// in eval mode forward passes keep no state. Each layer instance appears at
// most once per forward graph, so a single cache slot per layer suffices.

// --------------------------------------------------------------------------
// Conv2d: NCHW convolution via im2col + GEMM, optional channel groups.
// --------------------------------------------------------------------------
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, int groups = 1,
           bool with_bias = true);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void set_training(bool t) { training_ = t; }

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }
    Tensor& weight() { return weight_; }

private:
    int in_ch_ = 0, out_ch_ = 0, ksize_ = 0, stride_ = 1, pad_ = 0, groups_ = 1;
    bool with_bias_ = true;
    bool training_ = true;
    Tensor weight_, wgrad_;  // [out_ch, in_ch/groups, k, k]
    Tensor bias_, bgrad_;    // [out_ch]
    Tensor cached_x_;
    // reusable patch-matrix scratch (grow-only)
    std::vector<float> scratch_col_, scratch_dcol_, scratch_out_;
};

// --------------------------------------------------------------------------
// ConvTranspose2d: stride-s upsampling convolution (weight [in, out, k, k]).
// --------------------------------------------------------------------------
class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(int in_ch, int out_ch, int ksize, int stride, bool with_bias = true);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void set_training(bool t) { training_ = t; }

private:
    int in_ch_ = 0, out_ch_ = 0, ksize_ = 0, stride_ = 1;
    bool with_bias_ = true;
    bool training_ = true;
    Tensor weight_, wgrad_;
    Tensor bias_, bgrad_;
    Tensor cached_x_;
};

// --------------------------------------------------------------------------
// BatchNorm2d with running statistics (momentum 0.1, eps 1e-5).
// --------------------------------------------------------------------------
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void set_training(bool t) { training_ = t; }

private:
    int channels_ = 0;
    bool training_ = true;
    Tensor gamma_, ggrad_, beta_, bgrad_;
    Tensor running_mean_, running_var_;
    // Saved batch statistics and normalized input for backward. The xhat
    // buffer is reused across steps.
    Tensor saved_xhat_;
    std::vector<double> saved_inv_std_;
    bool has_saved_ = false;
};

// --------------------------------------------------------------------------
// Pointwise and pooling layers.
// --------------------------------------------------------------------------
class ReLU {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void set_training(bool t) { training_ = t; }

private:
    bool training_ = true;
    Tensor cached_y_;
};

class Sigmoid {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void set_training(bool t) { training_ = t; }

private:
    bool training_ = true;
    Tensor cached_y_;
};

class MaxPool2d {
public:
    MaxPool2d() = default;
    MaxPool2d(int ksize, int stride, int pad = 0) : ksize_(ksize), stride_(stride), pad_(pad) {}

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void set_training(bool t) { training_ = t; }

private:
    int ksize_ = 2, stride_ = 2, pad_ = 0;
    bool training_ = true;
    std::vector<int> in_shape_;
    std::vector<size_t> argmax_;
};

// Nearest-neighbour 2x upsample (config alternative to ConvTranspose2d).
class NearestUpsample2x {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void set_training(bool) {}
};

class GlobalAvgPool {
public:
    Tensor forward(const Tensor& x);  // NCHW -> [N, C]
    Tensor backward(const Tensor& dy);
    void set_training(bool) {}

private:
    std::vector<int> in_shape_;
};

class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features);

    Tensor forward(const Tensor& x);  // [N, in] -> [N, out]
    Tensor backward(const Tensor& dy);

    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void set_training(bool t) { training_ = t; }

private:
    int in_ = 0, out_ = 0;
    bool training_ = true;
    Tensor weight_, wgrad_;  // [out, in]
    Tensor bias_, bgrad_;
    Tensor cached_x_;
};

// --------------------------------------------------------------------------
// Graph helpers used by the hand-wired model forward/backward passes.
// --------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int channels_a, Tensor& da, Tensor& db);

}  // namespace screenseg::nn
