#include "screenseg/models.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

#include "screenseg/error.hpp"
#include "screenseg/util.hpp"

namespace screenseg {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

void SegNetSpec::validate() const {
    if (depth < 2) throw ValidationError("segmenter spec: depth must be >= 2");
    if (base_channels < 1) throw ValidationError("segmenter spec: base_channels must be >= 1");
}

void ClassifierSpec::validate() const {
    const size_t s = stage_blocks.size();
    if (s == 0) throw ValidationError("classifier spec: at least one stage required");
    if (stage_width.size() != s || stage_out.size() != s)
        throw ValidationError("classifier spec: stage arrays must have equal length");
    if (stem_channels < 1) throw ValidationError("classifier spec: stem_channels must be >= 1");
    if (cardinality < 1) throw ValidationError("classifier spec: cardinality must be >= 1");
    for (size_t i = 0; i < s; ++i) {
        if (stage_blocks[i] < 1) throw ValidationError("classifier spec: empty stage");
        if (stage_width[i] % cardinality != 0)
            throw ValidationError("classifier spec: stage width must be divisible by cardinality");
    }
    if (input_size < 32) throw ValidationError("classifier spec: input_size must be >= 32");
    if (norm_std <= 0.0f) throw ValidationError("classifier spec: norm_std must be positive");
}

ClassifierSpec ClassifierSpec::desk() { return ClassifierSpec{}; }

ClassifierSpec ClassifierSpec::full() {
    ClassifierSpec s;
    s.stem_channels = 64;
    s.stage_blocks = {3, 4, 6, 3};
    s.stage_width = {128, 256, 512, 1024};
    s.stage_out = {256, 512, 1024, 2048};
    s.cardinality = 32;
    return s;
}

ClassifierSpec ClassifierSpec::preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "full") return full();
    throw ValidationError("unknown classifier preset '" + name + "' (expected desk | full)");
}

// ---------------------------------------------------------------------------
// ResBlock
// ---------------------------------------------------------------------------

namespace detail {

ResBlock::ResBlock(int in_ch, int out_ch, bool preact)
    : preact_(preact),
      projected_(in_ch != out_ch),
      conv1_(in_ch, out_ch, 3, 1, 1, 1, false),
      conv2_(out_ch, out_ch, 3, 1, 1, 1, false),
      bn1_(preact ? in_ch : out_ch),
      bn2_(out_ch),
      bn_proj_(out_ch) {
    if (projected_) proj_ = nn::Conv2d(in_ch, out_ch, 1, 1, 0, 1, false);
}

void ResBlock::init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    bn1_.init(rng);
    bn2_.init(rng);
    if (projected_) {
        proj_.init(rng);
        bn_proj_.init(rng);
    }
}

void ResBlock::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) {
    conv1_.collect(prefix + ".conv1", out);
    bn1_.collect(prefix + ".bn1", out);
    conv2_.collect(prefix + ".conv2", out);
    bn2_.collect(prefix + ".bn2", out);
    if (projected_) {
        proj_.collect(prefix + ".proj", out);
        bn_proj_.collect(prefix + ".bn_proj", out);
    }
}

void ResBlock::set_training(bool t) {
    conv1_.set_training(t);
    conv2_.set_training(t);
    bn1_.set_training(t);
    bn2_.set_training(t);
    relu1_.set_training(t);
    relu2_.set_training(t);
    if (projected_) {
        proj_.set_training(t);
        bn_proj_.set_training(t);
    }
}

Tensor ResBlock::forward(const Tensor& x) {
    if (!preact_) {
        Tensor main = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x)))));
        Tensor shortcut = projected_ ? bn_proj_.forward(proj_.forward(x)) : x;
        return relu2_.forward(nn::add(main, shortcut));
    }
    // pre-activation: shortcut taken from the pre-activated input when
    // projecting, from the raw input otherwise
    Tensor h = relu1_.forward(bn1_.forward(x));
    Tensor main = conv2_.forward(relu2_.forward(bn2_.forward(conv1_.forward(h))));
    Tensor shortcut = projected_ ? bn_proj_.forward(proj_.forward(h)) : x;
    return nn::add(main, shortcut);
}

Tensor ResBlock::backward(const Tensor& dy) {
    if (!preact_) {
        Tensor dsum = relu2_.backward(dy);
        Tensor dmain =
            conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(dsum)))));
        if (projected_) {
            Tensor dshort = proj_.backward(bn_proj_.backward(dsum));
            return nn::add(dmain, dshort);
        }
        return nn::add(dmain, dsum);
    }
    Tensor dh = conv1_.backward(bn2_.backward(relu2_.backward(conv2_.backward(dy))));
    if (projected_) {
        Tensor dh_short = proj_.backward(bn_proj_.backward(dy));
        dh = nn::add(dh, dh_short);
        return bn1_.backward(relu1_.backward(dh));
    }
    Tensor dx = bn1_.backward(relu1_.backward(dh));
    return nn::add(dx, dy);
}

// ---------------------------------------------------------------------------
// GroupedBottleneck
// ---------------------------------------------------------------------------

GroupedBottleneck::GroupedBottleneck(int in_ch, int width, int out_ch, int cardinality, int stride)
    : projected_(in_ch != out_ch || stride != 1),
      reduce_(in_ch, width, 1, 1, 0, 1, false),
      grouped_(width, width, 3, stride, 1, cardinality, false),
      expand_(width, out_ch, 1, 1, 0, 1, false),
      bn1_(width),
      bn2_(width),
      bn3_(out_ch),
      bn_proj_(out_ch) {
    if (projected_) proj_ = nn::Conv2d(in_ch, out_ch, 1, stride, 0, 1, false);
}

void GroupedBottleneck::init(Rng& rng) {
    reduce_.init(rng);
    grouped_.init(rng);
    expand_.init(rng);
    bn1_.init(rng);
    bn2_.init(rng);
    bn3_.init(rng);
    if (projected_) {
        proj_.init(rng);
        bn_proj_.init(rng);
    }
}

void GroupedBottleneck::collect(const std::string& prefix, std::vector<nn::ParamRef>& out) {
    reduce_.collect(prefix + ".reduce", out);
    bn1_.collect(prefix + ".bn1", out);
    grouped_.collect(prefix + ".grouped", out);
    bn2_.collect(prefix + ".bn2", out);
    expand_.collect(prefix + ".expand", out);
    bn3_.collect(prefix + ".bn3", out);
    if (projected_) {
        proj_.collect(prefix + ".proj", out);
        bn_proj_.collect(prefix + ".bn_proj", out);
    }
}

void GroupedBottleneck::set_training(bool t) {
    reduce_.set_training(t);
    grouped_.set_training(t);
    expand_.set_training(t);
    proj_.set_training(t);
    bn1_.set_training(t);
    bn2_.set_training(t);
    bn3_.set_training(t);
    bn_proj_.set_training(t);
    relu1_.set_training(t);
    relu2_.set_training(t);
    relu3_.set_training(t);
}

Tensor GroupedBottleneck::forward(const Tensor& x) {
    Tensor h = relu1_.forward(bn1_.forward(reduce_.forward(x)));
    h = relu2_.forward(bn2_.forward(grouped_.forward(h)));
    h = bn3_.forward(expand_.forward(h));
    Tensor shortcut = projected_ ? bn_proj_.forward(proj_.forward(x)) : x;
    return relu3_.forward(nn::add(h, shortcut));
}

Tensor GroupedBottleneck::backward(const Tensor& dy) {
    Tensor dsum = relu3_.backward(dy);
    Tensor dh = expand_.backward(bn3_.backward(dsum));
    dh = grouped_.backward(bn2_.backward(relu2_.backward(dh)));
    Tensor dx = reduce_.backward(bn1_.backward(relu1_.backward(dh)));
    if (projected_) {
        Tensor dshort = proj_.backward(bn_proj_.backward(dsum));
        return nn::add(dx, dshort);
    }
    return nn::add(dx, dsum);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SegNet
// ---------------------------------------------------------------------------

SegNet::SegNet(const SegNetSpec& spec) : spec_(spec) {
    spec_.validate();
    const int depth = spec_.depth;
    skip_channels_.resize(static_cast<size_t>(depth));
    int in_ch = 1;
    for (int i = 0; i < depth; ++i) {
        const int out_ch = spec_.base_channels << i;
        skip_channels_[static_cast<size_t>(i)] = out_ch;
        encoders_.emplace_back(in_ch, out_ch, spec_.preactivation);
        in_ch = out_ch;
    }
    for (int i = 0; i < depth - 1; ++i) pools_.emplace_back(2, 2, 0);
    for (int i = 0; i < depth - 1; ++i) {
        const int hi_ch = spec_.base_channels << (i + 1);
        const int lo_ch = spec_.base_channels << i;
        if (spec_.transposed_upsample) {
            up_convt_.emplace_back(hi_ch, lo_ch, 2, 2, true);
        } else {
            up_nn_.emplace_back();
            up_conv_.emplace_back(hi_ch, lo_ch, 3, 1, 1, 1, true);
        }
        decoders_.emplace_back(2 * lo_ch, lo_ch, spec_.preactivation);
    }
    head_ = nn::Conv2d(spec_.base_channels, 1, 1, 1, 0, 1, true);
}

void SegNet::check_input_shape(int h, int w) const {
    const int d = spec_.divisor();
    if (h % d != 0 || w % d != 0)
        throw ShapeError("segmenter input " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by " + std::to_string(d));
}

void SegNet::init(uint64_t seed) {
    Rng rng(seed);
    for (auto& e : encoders_) e.init(rng);
    for (auto& u : up_convt_) u.init(rng);
    for (auto& u : up_conv_) u.init(rng);
    for (auto& d : decoders_) d.init(rng);
    head_.init(rng);
}

void SegNet::set_training(bool t) {
    training_ = t;
    for (auto& e : encoders_) e.set_training(t);
    for (auto& p : pools_) p.set_training(t);
    for (auto& u : up_convt_) u.set_training(t);
    for (auto& u : up_conv_) u.set_training(t);
    for (auto& d : decoders_) d.set_training(t);
    head_.set_training(t);
    out_sigmoid_.set_training(t);
}

Tensor SegNet::forward(const Tensor& x) {
    if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("segmenter expects [N,1,H,W] input");
    check_input_shape(x.dim(2), x.dim(3));
    const int depth = spec_.depth;
    std::vector<Tensor> enc_out(static_cast<size_t>(depth));
    Tensor cur = x;
    for (int i = 0; i < depth; ++i) {
        enc_out[static_cast<size_t>(i)] = encoders_[static_cast<size_t>(i)].forward(cur);
        if (i < depth - 1) cur = pools_[static_cast<size_t>(i)].forward(enc_out[static_cast<size_t>(i)]);
    }
    Tensor d = enc_out[static_cast<size_t>(depth - 1)];
    for (int i = depth - 2; i >= 0; --i) {
        Tensor up;
        if (spec_.transposed_upsample) {
            up = up_convt_[static_cast<size_t>(i)].forward(d);
        } else {
            up = up_conv_[static_cast<size_t>(i)].forward(
                up_nn_[static_cast<size_t>(i)].forward(d));
        }
        Tensor cat = nn::concat_channels(up, enc_out[static_cast<size_t>(i)]);
        d = decoders_[static_cast<size_t>(i)].forward(cat);
    }
    return out_sigmoid_.forward(head_.forward(d));
}

Tensor SegNet::backward(const Tensor& dprob) {
    const int depth = spec_.depth;
    Tensor dd = head_.backward(out_sigmoid_.backward(dprob));
    std::vector<Tensor> denc(static_cast<size_t>(depth));
    for (int i = 0; i <= depth - 2; ++i) {
        Tensor dcat = decoders_[static_cast<size_t>(i)].backward(dd);
        Tensor dup, dskip;
        nn::split_channels(dcat, skip_channels_[static_cast<size_t>(i)], dup, dskip);
        denc[static_cast<size_t>(i)] = std::move(dskip);
        if (spec_.transposed_upsample) {
            dd = up_convt_[static_cast<size_t>(i)].backward(dup);
        } else {
            dd = up_nn_[static_cast<size_t>(i)].backward(
                up_conv_[static_cast<size_t>(i)].backward(dup));
        }
    }
    // dd is now the gradient at the bottom encoder output.
    Tensor g = std::move(dd);
    Tensor dx;
    for (int i = depth - 1; i >= 0; --i) {
        dx = encoders_[static_cast<size_t>(i)].backward(g);
        if (i > 0) {
            g = nn::add(pools_[static_cast<size_t>(i - 1)].backward(dx),
                        denc[static_cast<size_t>(i - 1)]);
        }
    }
    return dx;
}

std::vector<nn::ParamRef> SegNet::trainable_params() {
    std::vector<nn::ParamRef> all = named_tensors();
    std::vector<nn::ParamRef> out;
    for (auto& p : all)
        if (p.grad) out.push_back(p);
    return out;
}

std::vector<nn::ParamRef> SegNet::named_tensors() {
    std::vector<nn::ParamRef> out;
    for (size_t i = 0; i < encoders_.size(); ++i)
        encoders_[i].collect("enc" + std::to_string(i), out);
    for (size_t i = 0; i < up_convt_.size(); ++i)
        up_convt_[i].collect("up" + std::to_string(i), out);
    for (size_t i = 0; i < up_conv_.size(); ++i)
        up_conv_[i].collect("up" + std::to_string(i) + ".conv", out);
    for (size_t i = 0; i < decoders_.size(); ++i)
        decoders_[i].collect("dec" + std::to_string(i), out);
    head_.collect("head", out);
    return out;
}

// ---------------------------------------------------------------------------
// FrameClassifier
// ---------------------------------------------------------------------------

FrameClassifier::FrameClassifier(const ClassifierSpec& spec) : spec_(spec) {
    spec_.validate();
    stem_ = nn::Conv2d(1, spec_.stem_channels, 7, 2, 3, 1, false);
    stem_bn_ = nn::BatchNorm2d(spec_.stem_channels);
    stem_pool_ = nn::MaxPool2d(3, 2, 1);
    int in_ch = spec_.stem_channels;
    for (size_t s = 0; s < spec_.stage_blocks.size(); ++s) {
        for (int b = 0; b < spec_.stage_blocks[s]; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            blocks_.emplace_back(in_ch, spec_.stage_width[s], spec_.stage_out[s],
                                 spec_.cardinality, stride);
            in_ch = spec_.stage_out[s];
        }
    }
    head_ = nn::Linear(in_ch, 1);
}

void FrameClassifier::init(uint64_t seed) {
    Rng rng(seed);
    stem_.init(rng);
    stem_bn_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    head_.init(rng);
}

void FrameClassifier::set_training(bool t) {
    training_ = t;
    stem_.set_training(t);
    stem_bn_.set_training(t);
    stem_relu_.set_training(t);
    stem_pool_.set_training(t);
    for (auto& b : blocks_) b.set_training(t);
    head_.set_training(t);
}

Tensor FrameClassifier::forward(const Tensor& x) {
    if (x.rank() != 4 || x.dim(1) != 1) throw ShapeError("classifier expects [N,1,H,W] input");
    Tensor cur = stem_pool_.forward(stem_relu_.forward(stem_bn_.forward(stem_.forward(x))));
    for (auto& b : blocks_) cur = b.forward(cur);
    return head_.forward(gap_.forward(cur));
}

Tensor FrameClassifier::backward(const Tensor& dlogit) {
    Tensor d = gap_.backward(head_.backward(dlogit));
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
    return stem_.backward(stem_bn_.backward(stem_relu_.backward(stem_pool_.backward(d))));
}

std::vector<nn::ParamRef> FrameClassifier::trainable_params() {
    std::vector<nn::ParamRef> all = named_tensors();
    std::vector<nn::ParamRef> out;
    for (auto& p : all)
        if (p.grad) out.push_back(p);
    return out;
}

std::vector<nn::ParamRef> FrameClassifier::named_tensors() {
    std::vector<nn::ParamRef> out;
    stem_.collect("stem", out);
    stem_bn_.collect("stem.bn", out);
    for (size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect("block" + std::to_string(i), out);
    head_.collect("head", out);
    return out;
}

// ---------------------------------------------------------------------------
// Builders + preprocessing
// ---------------------------------------------------------------------------

SegNet build_segmenter(const SegNetSpec& spec, uint64_t seed) {
    SegNet net(spec);
    net.init(seed);
    return net;
}

namespace {

struct NamedTensorFile {
    std::vector<std::pair<std::string, Tensor>> tensors;
};

NamedTensorFile read_param_blob(const std::filesystem::path& file);

void apply_pretrained(FrameClassifier& model, const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    fs::path file = path;
    if (fs::is_directory(file)) file /= "params.bin";
    if (!fs::exists(file))
        throw ValidationError("pretrained checkpoint not found: " + file.string());
    const NamedTensorFile blob = read_param_blob(file);
    auto refs = model.named_tensors();
    if (blob.tensors.size() != refs.size())
        throw ValidationError("pretrained checkpoint incompatible: has " +
                              std::to_string(blob.tensors.size()) + " tensors, model expects " +
                              std::to_string(refs.size()));
    for (size_t i = 0; i < refs.size(); ++i) {
        const auto& [name, t] = blob.tensors[i];
        if (name != refs[i].name)
            throw ValidationError("pretrained checkpoint incompatible at tensor '" + name +
                                  "' (expected '" + refs[i].name + "')");
        if (t.shape() == refs[i].value->shape()) {
            *refs[i].value = t;
            continue;
        }
        // RGB-trained first convolution: collapse 3 input channels to 1 by
        // averaging, matching the grayscale normalization constants.
        const auto& want = refs[i].value->shape();
        const auto& have = t.shape();
        const bool collapsible = name == "stem.weight" && have.size() == 4 && want.size() == 4 &&
                                 have[0] == want[0] && have[1] == 3 && want[1] == 1 &&
                                 have[2] == want[2] && have[3] == want[3];
        if (!collapsible)
            throw ValidationError("pretrained checkpoint incompatible: tensor '" + name +
                                  "' has mismatched shape");
        Tensor collapsed(want);
        const int oc = want[0], k = want[2];
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x) {
                    float s = 0.0f;
                    for (int c = 0; c < 3; ++c) s += t.at(o, c, y, x);
                    collapsed.at(o, 0, y, x) = s / 3.0f;
                }
        *refs[i].value = std::move(collapsed);
    }
}

}  // namespace

FrameClassifier build_classifier(const ClassifierSpec& spec, uint64_t seed,
                                 const std::optional<std::filesystem::path>& pretrained_path) {
    FrameClassifier net(spec);
    net.init(seed);
    if (pretrained_path) apply_pretrained(net, *pretrained_path);
    return net;
}

ImageF normalize_for_classifier(const ImageF& img, const ClassifierSpec& spec) {
    ImageF resized = resize_bilinear(img, spec.input_size, spec.input_size);
    for (auto& v : resized.v) v = (v - spec.norm_mean) / spec.norm_std;
    return resized;
}

ImageF normalize_for_segmenter(const ImageF& img) {
    const double mu = mean(img);
    double var = 0.0;
    for (float x : img.v) {
        const double d = x - mu;
        var += d * d;
    }
    var /= static_cast<double>(img.v.size());
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    ImageF out(img.height, img.width);
    for (size_t i = 0; i < img.v.size(); ++i)
        out.v[i] = static_cast<float>((img.v[i] - mu) * inv);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kParamMagic[8] = {'S', 'S', 'E', 'G', 'P', 'R', 'M', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated parameter blob");
    return v;
}

NamedTensorFile read_param_blob(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open parameter blob: " + file.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kParamMagic, 8) != 0)
        throw ValidationError("not a parameter blob: " + file.string());
    const auto count = read_pod<uint32_t>(in);
    NamedTensorFile out;
    out.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = read_pod<uint32_t>(in);
        std::vector<int> shape(rank);
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(read_pod<uint32_t>(in));
            numel *= static_cast<size_t>(shape[d]);
        }
        std::vector<float> data(numel);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!in) throw IoError("truncated parameter blob: " + file.string());
        out.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                     const std::string& spec_json, uint64_t seed,
                     std::vector<nn::ParamRef> tensors) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "params.bin", std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint: " + (dir / "params.bin").string());
        out.write(kParamMagic, 8);
        write_pod<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
        for (const auto& t : tensors) {
            write_pod<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
            out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
            write_pod<uint32_t>(out, static_cast<uint32_t>(t.value->rank()));
            for (int d = 0; d < t.value->rank(); ++d)
                write_pod<uint32_t>(out, static_cast<uint32_t>(t.value->dim(d)));
            out.write(reinterpret_cast<const char*>(t.value->data()),
                      static_cast<std::streamsize>(t.value->numel() * sizeof(float)));
        }
    }
    json sidecar;
    sidecar["kind"] = kind;
    sidecar["seed"] = seed;
    sidecar["spec"] = json::parse(spec_json);
    write_text_file(dir / "spec.json", sidecar.dump(2) + "\n");
}

namespace {

json load_sidecar(const std::filesystem::path& dir, const std::string& expected_kind) {
    const auto path = dir / "spec.json";
    if (!std::filesystem::exists(path))
        throw IoError("missing checkpoint sidecar: " + path.string());
    json sidecar = json::parse(read_text_file(path));
    if (sidecar.value("kind", "") != expected_kind)
        throw ValidationError("checkpoint at " + dir.string() + " is not a " + expected_kind);
    return sidecar;
}

void load_tensors_into(std::vector<nn::ParamRef> refs, const std::filesystem::path& file) {
    const NamedTensorFile blob = read_param_blob(file);
    if (blob.tensors.size() != refs.size())
        throw ValidationError("checkpoint tensor count mismatch in " + file.string());
    for (size_t i = 0; i < refs.size(); ++i) {
        const auto& [name, t] = blob.tensors[i];
        if (name != refs[i].name || t.shape() != refs[i].value->shape())
            throw ValidationError("checkpoint tensor '" + name + "' does not match model in " +
                                  file.string());
        *refs[i].value = t;
    }
}

}  // namespace

SegmenterCheckpoint load_segmenter(const std::filesystem::path& dir) {
    const json sidecar = load_sidecar(dir, "segmenter");
    SegmenterCheckpoint out;
    out.seed = sidecar.value("seed", 0ULL);
    out.model = SegNet(segnet_spec_from_json(sidecar["spec"].dump()));
    load_tensors_into(out.model.named_tensors(), dir / "params.bin");
    out.model.set_training(false);
    return out;
}

ClassifierCheckpoint load_classifier(const std::filesystem::path& dir) {
    const json sidecar = load_sidecar(dir, "classifier");
    ClassifierCheckpoint out;
    out.seed = sidecar.value("seed", 0ULL);
    out.model = FrameClassifier(classifier_spec_from_json(sidecar["spec"].dump()));
    load_tensors_into(out.model.named_tensors(), dir / "params.bin");
    out.model.set_training(false);
    return out;
}

std::string segnet_spec_to_json(const SegNetSpec& spec) {
    json j;
    j["depth"] = spec.depth;
    j["base_channels"] = spec.base_channels;
    j["transposed_upsample"] = spec.transposed_upsample;
    j["preactivation"] = spec.preactivation;
    return j.dump();
}

SegNetSpec segnet_spec_from_json(const std::string& json_text) {
    const json j = json::parse(json_text);
    SegNetSpec spec;
    spec.depth = j.value("depth", spec.depth);
    spec.base_channels = j.value("base_channels", spec.base_channels);
    spec.transposed_upsample = j.value("transposed_upsample", spec.transposed_upsample);
    spec.preactivation = j.value("preactivation", spec.preactivation);
    spec.validate();
    return spec;
}

std::string classifier_spec_to_json(const ClassifierSpec& spec) {
    json j;
    j["stem_channels"] = spec.stem_channels;
    j["stage_blocks"] = spec.stage_blocks;
    j["stage_width"] = spec.stage_width;
    j["stage_out"] = spec.stage_out;
    j["cardinality"] = spec.cardinality;
    j["input_size"] = spec.input_size;
    j["norm_mean"] = spec.norm_mean;
    j["norm_std"] = spec.norm_std;
    return j.dump();
}

ClassifierSpec classifier_spec_from_json(const std::string& json_text) {
    const json j = json::parse(json_text);
    ClassifierSpec spec;
    spec.stem_channels = j.value("stem_channels", spec.stem_channels);
    spec.stage_blocks = j.value("stage_blocks", spec.stage_blocks);
    spec.stage_width = j.value("stage_width", spec.stage_width);
    spec.stage_out = j.value("stage_out", spec.stage_out);
    spec.cardinality = j.value("cardinality", spec.cardinality);
    spec.input_size = j.value("input_size", spec.input_size);
    spec.norm_mean = j.value("norm_mean", spec.norm_mean);
    spec.norm_std = j.value("norm_std", spec.norm_std);
    spec.validate();
    return spec;
}

uint64_t parameter_checksum(std::vector<nn::ParamRef> tensors) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors) {
        h = fnv1a64(t.name.data(), t.name.size(), h);
        for (int d = 0; d < t.value->rank(); ++d) {
            const int32_t dim = t.value->dim(d);
            h = fnv1a64(&dim, sizeof(dim), h);
        }
        h = fnv1a64(t.value->data(), t.value->numel() * sizeof(float), h);
    }
    return h;
}

}  // namespace screenseg
