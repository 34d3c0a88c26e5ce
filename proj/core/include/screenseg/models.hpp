#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "screenseg/image.hpp"
#include "screenseg/nn/layers.hpp"

namespace screenseg {

// --------------------------------------------------------------------------
// Architecture specs
// --------------------------------------------------------------------------

// 5-level residual encoder-decoder. `depth` counts resolution levels, so the
// input height/width must be divisible by 2^(depth-1).
struct SegNetSpec {
    int depth = 5;
    int base_channels = 16;
    bool transposed_upsample = true;  // false: nearest-neighbour + 3x3 conv
    bool preactivation = false;

    int divisor() const { return 1 << (depth - 1); }
    void validate() const;
};

// Grouped-convolution residual classifier. The stage arrays must have equal
// length; `cardinality` is the group count of each stage's 3x3 convolution.
struct ClassifierSpec {
    int stem_channels = 16;
    std::vector<int> stage_blocks = {1, 1};
    std::vector<int> stage_width = {32, 64};
    std::vector<int> stage_out = {64, 128};
    int cardinality = 8;
    int input_size = 224;
    float norm_mean = 0.449f;
    float norm_std = 0.226f;

    void validate() const;

    // Reduced 2-stage variant for desk-scale runs.
    static ClassifierSpec desk();
    // Smallest standard grouped-residual variant: 4 stages, cardinality 32.
    static ClassifierSpec full();
    static ClassifierSpec preset(const std::string& name);
};

// --------------------------------------------------------------------------
// Residual blocks
// --------------------------------------------------------------------------

namespace detail {

// Two 3x3 convolutions with an identity (or projected) shortcut. Ordering is
// conv-bn-relu by default, or pre-activation when requested.
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(int in_ch, int out_ch, bool preact);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
    void set_training(bool t);

private:
    bool preact_ = false;
    bool projected_ = false;
    nn::Conv2d conv1_, conv2_, proj_;
    nn::BatchNorm2d bn1_, bn2_, bn_proj_;
    nn::ReLU relu1_, relu2_;
};

// ResNeXt-style bottleneck: 1x1 reduce, grouped 3x3, 1x1 expand.
class GroupedBottleneck {
public:
    GroupedBottleneck() = default;
    GroupedBottleneck(int in_ch, int width, int out_ch, int cardinality, int stride);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void init(Rng& rng);
    void collect(const std::string& prefix, std::vector<nn::ParamRef>& out);
    void set_training(bool t);

private:
    bool projected_ = false;
    nn::Conv2d reduce_, grouped_, expand_, proj_;
    nn::BatchNorm2d bn1_, bn2_, bn3_, bn_proj_;
    nn::ReLU relu1_, relu2_, relu3_;
};

}  // namespace detail

// --------------------------------------------------------------------------
// Segmentation network
// --------------------------------------------------------------------------

class SegNet {
public:
    SegNet() = default;
    explicit SegNet(const SegNetSpec& spec);

    // Input [N,1,H,W] in (normalized) floats; output per-pixel probabilities
    // in (0,1) with the same spatial shape.
    Tensor forward(const Tensor& x);
    // dloss/dprob in, dloss/dinput out; parameter grads accumulate.
    Tensor backward(const Tensor& dprob);

    void init(uint64_t seed);
    void set_training(bool t);
    bool training() const { return training_; }

    std::vector<nn::ParamRef> trainable_params();
    std::vector<nn::ParamRef> named_tensors();  // trainable + running stats

    const SegNetSpec& spec() const { return spec_; }
    void check_input_shape(int h, int w) const;

private:
    SegNetSpec spec_;
    bool training_ = true;
    std::vector<detail::ResBlock> encoders_;
    std::vector<nn::MaxPool2d> pools_;
    std::vector<nn::ConvTranspose2d> up_convt_;
    std::vector<nn::NearestUpsample2x> up_nn_;
    std::vector<nn::Conv2d> up_conv_;  // used with nearest upsampling
    std::vector<detail::ResBlock> decoders_;
    nn::Conv2d head_;
    nn::Sigmoid out_sigmoid_;
    std::vector<int> skip_channels_;
};

// --------------------------------------------------------------------------
// Frame classifier
// --------------------------------------------------------------------------

class FrameClassifier {
public:
    FrameClassifier() = default;
    explicit FrameClassifier(const ClassifierSpec& spec);

    // Input [N,1,S,S] (S = spec.input_size, already normalized); output [N,1]
    // raw logits.
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dlogit);

    void init(uint64_t seed);
    void set_training(bool t);
    bool training() const { return training_; }

    std::vector<nn::ParamRef> trainable_params();
    std::vector<nn::ParamRef> named_tensors();

    const ClassifierSpec& spec() const { return spec_; }

private:
    ClassifierSpec spec_;
    bool training_ = true;
    nn::Conv2d stem_;
    nn::BatchNorm2d stem_bn_;
    nn::ReLU stem_relu_;
    nn::MaxPool2d stem_pool_;
    std::vector<detail::GroupedBottleneck> blocks_;
    nn::GlobalAvgPool gap_;
    nn::Linear head_;
};

// --------------------------------------------------------------------------
// Builders, preprocessing, checkpoints
// --------------------------------------------------------------------------

SegNet build_segmenter(const SegNetSpec& spec, uint64_t seed);

// With `pretrained_path` set, parameters are loaded from that checkpoint
// after validation; a 3-channel first convolution is collapsed to 1 channel
// by averaging across input channels.
FrameClassifier build_classifier(const ClassifierSpec& spec, uint64_t seed,
                                 const std::optional<std::filesystem::path>& pretrained_path = {});

// Classifier path: resize to spec.input_size then (x - mean) / std.
ImageF normalize_for_classifier(const ImageF& img, const ClassifierSpec& spec);

// Segmenter path: per-image standardization to zero mean / unit variance with
// an eps guard (constant images map to all zeros).
ImageF normalize_for_segmenter(const ImageF& img);

// Checkpoints: a directory holding params.bin (raw little-endian float32
// tensors with names) and spec.json (model kind, spec, seed). Round-trips are
// bit-exact.
void save_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                     const std::string& spec_json, uint64_t seed,
                     std::vector<nn::ParamRef> tensors);

struct SegmenterCheckpoint {
    SegNet model;
    uint64_t seed = 0;
};
struct ClassifierCheckpoint {
    FrameClassifier model;
    uint64_t seed = 0;
};

SegmenterCheckpoint load_segmenter(const std::filesystem::path& dir);
ClassifierCheckpoint load_classifier(const std::filesystem::path& dir);

std::string segnet_spec_to_json(const SegNetSpec& spec);
SegNetSpec segnet_spec_from_json(const std::string& json_text);
std::string classifier_spec_to_json(const ClassifierSpec& spec);
ClassifierSpec classifier_spec_from_json(const std::string& json_text);

// FNV-1a over all named tensors in registration order; used by the
// determinism checks.
uint64_t parameter_checksum(std::vector<nn::ParamRef> tensors);

}  // namespace screenseg
