#define EIGEN_DONT_PARALLELIZE
#include "screenseg/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "screenseg/error.hpp"

namespace screenseg::nn {

namespace {

// Activation tensors run to tens of MB; with glibc's default mmap threshold
// every allocation round-trips through mmap/munmap and pays page faults on
// first touch. Keeping large blocks on the heap free lists removes that cost
// from the training loop.
struct MallocTuning {
    MallocTuning() {
#ifdef __GLIBC__
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    }
};
const MallocTuning malloc_tuning;

}  // namespace

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatCM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;
using MapCM = Eigen::Map<MatCM>;
using ConstMapCM = Eigen::Map<const MatCM>;

// Scratch buffers grow monotonically and are reused across calls; the
// returned span may contain stale garbage, every use overwrites it first.
inline float* ensure_scratch(std::vector<float>& buf, size_t n) {
    if (buf.size() < n) buf.resize(n);
    return buf.data();
}

inline int conv_out_size(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

void check_input(const Tensor& x, int expected_ch, const char* who) {
    if (x.rank() != 4) throw ShapeError(std::string(who) + ": expected NCHW input");
    if (x.dim(1) != expected_ch)
        throw ShapeError(std::string(who) + ": expected " + std::to_string(expected_ch) +
                         " channels, got " + std::to_string(x.dim(1)));
}

// Patch matrix over an image chunk [n0, n1), stored so that column r of the
// column-major (P x K) view holds patch element r = (c, ky, kx) across all
// chunk pixels p = (n, yo, xo). Rows are contiguous pixel runs of the input,
// so the k=3/s=1/p=1 case (the U-Net workhorse) reduces to shifted row
// copies.
void im2col_t(const Tensor& x, int base_c, int cg, int k, int stride, int pad, int ho, int wo,
              int n0, int n1, float* colt) {
    const int cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const size_t cols = static_cast<size_t>(n1 - n0) * ho * wo;
    const size_t plane = static_cast<size_t>(ho) * wo;
    const bool fast = k == 3 && stride == 1 && pad == 1 && ho == h && wo == w;

    for (int c = 0; c < cg; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* row = colt + (static_cast<size_t>((c * k + ky) * k + kx)) * cols;
                for (int n = n0; n < n1; ++n) {
                    const float* chan =
                        x.data() + ((static_cast<size_t>(n) * cin + base_c + c) * h) * w;
                    float* dst = row + static_cast<size_t>(n - n0) * plane;
                    if (fast) {
                        const int dy = ky - 1, dx = kx - 1;
                        for (int yo = 0; yo < ho; ++yo, dst += wo) {
                            const int yy = yo + dy;
                            if (yy < 0 || yy >= h) {
                                std::fill(dst, dst + wo, 0.0f);
                                continue;
                            }
                            const float* line = chan + static_cast<size_t>(yy) * w;
                            if (dx == 0) {
                                std::copy(line, line + wo, dst);
                            } else if (dx < 0) {
                                dst[0] = 0.0f;
                                std::copy(line, line + wo - 1, dst + 1);
                            } else {
                                std::copy(line + 1, line + w, dst);
                                dst[wo - 1] = 0.0f;
                            }
                        }
                    } else {
                        for (int yo = 0; yo < ho; ++yo, dst += wo) {
                            const int yy = yo * stride - pad + ky;
                            if (yy < 0 || yy >= h) {
                                std::fill(dst, dst + wo, 0.0f);
                                continue;
                            }
                            const float* line = chan + static_cast<size_t>(yy) * w;
                            for (int xo = 0; xo < wo; ++xo) {
                                const int xx = xo * stride - pad + kx;
                                dst[xo] = (xx < 0 || xx >= w) ? 0.0f : line[xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of the transposed column gradient back into the input chunk.
void col2im_t(const float* dcolt, int base_c, int cg, int k, int stride, int pad, int ho, int wo,
              int n0, int n1, Tensor& dx) {
    const int cin = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
    const size_t cols = static_cast<size_t>(n1 - n0) * ho * wo;
    const size_t plane = static_cast<size_t>(ho) * wo;

    for (int c = 0; c < cg; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* row = dcolt + (static_cast<size_t>((c * k + ky) * k + kx)) * cols;
                for (int n = n0; n < n1; ++n) {
                    float* chan = dx.data() + ((static_cast<size_t>(n) * cin + base_c + c) * h) * w;
                    const float* src = row + static_cast<size_t>(n - n0) * plane;
                    for (int yo = 0; yo < ho; ++yo, src += wo) {
                        const int yy = yo * stride - pad + ky;
                        if (yy < 0 || yy >= h) continue;
                        float* line = chan + static_cast<size_t>(yy) * w;
                        if (stride == 1) {
                            const int x0 = -pad + kx;
                            const int lo = std::max(0, -x0);
                            const int hi = std::min(wo, w - x0);
                            for (int xo = lo; xo < hi; ++xo) line[x0 + xo] += src[xo];
                        } else {
                            for (int xo = 0; xo < wo; ++xo) {
                                const int xx = xo * stride - pad + kx;
                                if (xx >= 0 && xx < w) line[xx] += src[xo];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Images per chunk so the patch matrix stays cache-resident.
int chunk_images(size_t plane, int krows, int n) {
    const size_t bytes_per_image = plane * static_cast<size_t>(krows) * sizeof(float);
    const size_t budget = 16u << 20;
    int nc = static_cast<int>(std::max<size_t>(1, budget / std::max<size_t>(1, bytes_per_image)));
    return std::min(nc, n);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, int groups, bool with_bias)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      stride_(stride),
      pad_(pad),
      groups_(groups),
      with_bias_(with_bias) {
    if (in_ch % groups != 0 || out_ch % groups != 0)
        throw ValidationError("Conv2d: channels must be divisible by groups");
    weight_ = Tensor({out_ch, in_ch / groups, ksize, ksize});
    wgrad_ = Tensor({out_ch, in_ch / groups, ksize, ksize});
    if (with_bias_) {
        bias_ = Tensor({out_ch});
        bgrad_ = Tensor({out_ch});
    }
}

void Conv2d::init(Rng& rng) {
    // He-normal, fan-in mode.
    const int fan_in = (in_ch_ / groups_) * ksize_ * ksize_;
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& v : weight_.vec()) v = static_cast<float>(rng.normal(0.0, std));
    if (with_bias_) bias_.fill(0.0f);
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight_, &wgrad_});
    if (with_bias_) out.push_back({prefix + ".bias", &bias_, &bgrad_});
}

Tensor Conv2d::forward(const Tensor& x) {
    check_input(x, in_ch_, "Conv2d");
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = conv_out_size(h, ksize_, stride_, pad_);
    const int wo = conv_out_size(w, ksize_, stride_, pad_);
    if (ho <= 0 || wo <= 0) throw ShapeError("Conv2d: input smaller than kernel");

    Tensor y({n, out_ch_, ho, wo});
    const int cg = in_ch_ / groups_, og = out_ch_ / groups_;
    const size_t plane = static_cast<size_t>(ho) * wo;
    const int krows = cg * ksize_ * ksize_;
    const bool pointwise = ksize_ == 1 && stride_ == 1 && pad_ == 0 && groups_ == 1;
    const int nc = chunk_images(plane, krows, n);

    float* colt = ensure_scratch(scratch_col_, plane * static_cast<size_t>(nc) * krows);
    float* ymat = ensure_scratch(scratch_out_, plane * static_cast<size_t>(nc) * og);

    for (int n0 = 0; n0 < n; n0 += nc) {
        const int n1 = std::min(n, n0 + nc);
        const size_t cols = static_cast<size_t>(n1 - n0) * plane;
        for (int g = 0; g < groups_; ++g) {
            const float* colt_data;
            if (pointwise && n1 - n0 == 1) {
                colt_data = x.data() + static_cast<size_t>(n0) * in_ch_ * plane;
            } else if (pointwise) {
                for (int c = 0; c < in_ch_; ++c)
                    for (int nn = n0; nn < n1; ++nn)
                        std::copy_n(x.data() + ((static_cast<size_t>(nn) * in_ch_ + c) * plane),
                                    plane,
                                    colt + static_cast<size_t>(c) * cols +
                                        static_cast<size_t>(nn - n0) * plane);
                colt_data = colt;
            } else {
                im2col_t(x, g * cg, cg, ksize_, stride_, pad_, ho, wo, n0, n1, colt);
                colt_data = colt;
            }

            // y_cm [cols, og] = col_cm [cols, krows] * W^T; each output column
            // is one channel's contiguous chunk planes.
            ConstMapCM cm(colt_data, static_cast<Eigen::Index>(cols), krows);
            ConstMapRM wm(weight_.data() + static_cast<size_t>(g) * og * krows, og, krows);
            MapCM ym(ymat, static_cast<Eigen::Index>(cols), og);
            ym.noalias() = cm * wm.transpose();

            for (int c = 0; c < og; ++c) {
                const float* src = ymat + static_cast<size_t>(c) * cols;
                const float b = with_bias_ ? bias_[static_cast<size_t>(g * og + c)] : 0.0f;
                for (int nn = n0; nn < n1; ++nn) {
                    float* dst =
                        y.data() + ((static_cast<size_t>(nn) * out_ch_ + g * og + c) * plane);
                    const float* s = src + static_cast<size_t>(nn - n0) * plane;
                    if (with_bias_) {
                        for (size_t p = 0; p < plane; ++p) dst[p] = s[p] + b;
                    } else {
                        std::copy_n(s, plane, dst);
                    }
                }
            }
        }
    }
    if (training_) cached_x_ = x;
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    if (cached_x_.empty()) throw ShapeError("Conv2d::backward called without cached forward");
    const Tensor& x = cached_x_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = dy.dim(2), wo = dy.dim(3);
    const int cg = in_ch_ / groups_, og = out_ch_ / groups_;
    const size_t plane = static_cast<size_t>(ho) * wo;
    const int krows = cg * ksize_ * ksize_;
    const bool pointwise = ksize_ == 1 && stride_ == 1 && pad_ == 0 && groups_ == 1;
    const int nc = chunk_images(plane, krows, n);

    Tensor dx({n, in_ch_, h, w});
    float* colt = ensure_scratch(scratch_col_, plane * static_cast<size_t>(nc) * krows);
    float* dcolt = ensure_scratch(scratch_dcol_, plane * static_cast<size_t>(nc) * krows);
    float* dymat = ensure_scratch(scratch_out_, plane * static_cast<size_t>(nc) * og);

    for (int n0 = 0; n0 < n; n0 += nc) {
        const int n1 = std::min(n, n0 + nc);
        const size_t cols = static_cast<size_t>(n1 - n0) * plane;
        for (int g = 0; g < groups_; ++g) {
            for (int c = 0; c < og; ++c)
                for (int nn = n0; nn < n1; ++nn)
                    std::copy_n(
                        dy.data() + ((static_cast<size_t>(nn) * out_ch_ + g * og + c) * plane),
                        plane,
                        dymat + static_cast<size_t>(c) * cols +
                            static_cast<size_t>(nn - n0) * plane);
            ConstMapCM dym(dymat, static_cast<Eigen::Index>(cols), og);

            const float* colt_data;
            if (pointwise && n1 - n0 == 1) {
                colt_data = x.data() + static_cast<size_t>(n0) * in_ch_ * plane;
            } else if (pointwise) {
                for (int c = 0; c < in_ch_; ++c)
                    for (int nn = n0; nn < n1; ++nn)
                        std::copy_n(x.data() + ((static_cast<size_t>(nn) * in_ch_ + c) * plane),
                                    plane,
                                    colt + static_cast<size_t>(c) * cols +
                                        static_cast<size_t>(nn - n0) * plane);
                colt_data = colt;
            } else {
                im2col_t(x, g * cg, cg, ksize_, stride_, pad_, ho, wo, n0, n1, colt);
                colt_data = colt;
            }
            ConstMapCM cm(colt_data, static_cast<Eigen::Index>(cols), krows);

            // dW [og, krows] += dY^T * col
            MapRM dwm(wgrad_.data() + static_cast<size_t>(g) * og * krows, og, krows);
            dwm.noalias() += dym.transpose() * cm;

            // dcol_cm [cols, krows] = dY [cols, og] * W [og, krows]
            ConstMapRM wm(weight_.data() + static_cast<size_t>(g) * og * krows, og, krows);
            MapCM dcm(dcolt, static_cast<Eigen::Index>(cols), krows);
            dcm.noalias() = dym * wm;

            if (pointwise) {
                for (int c = 0; c < in_ch_; ++c)
                    for (int nn = n0; nn < n1; ++nn) {
                        const float* src = dcolt + static_cast<size_t>(c) * cols +
                                           static_cast<size_t>(nn - n0) * plane;
                        float* dst = dx.data() + ((static_cast<size_t>(nn) * in_ch_ + c) * plane);
                        for (size_t p = 0; p < plane; ++p) dst[p] += src[p];
                    }
            } else {
                col2im_t(dcolt, g * cg, cg, ksize_, stride_, pad_, ho, wo, n0, n1, dx);
            }

            if (with_bias_) {
                for (int c = 0; c < og; ++c) {
                    double acc = 0.0;
                    const float* row = dymat + static_cast<size_t>(c) * cols;
                    for (size_t p = 0; p < cols; ++p) acc += row[p];
                    bgrad_[static_cast<size_t>(g * og + c)] += static_cast<float>(acc);
                }
            }
        }
    }
    cached_x_ = Tensor();
    return dx;
}

// ---------------------------------------------------------------------------
// ConvTranspose2d
// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch, int ksize, int stride, bool with_bias)
    : in_ch_(in_ch), out_ch_(out_ch), ksize_(ksize), stride_(stride), with_bias_(with_bias) {
    weight_ = Tensor({in_ch, out_ch, ksize, ksize});
    wgrad_ = Tensor({in_ch, out_ch, ksize, ksize});
    if (with_bias_) {
        bias_ = Tensor({out_ch});
        bgrad_ = Tensor({out_ch});
    }
}

void ConvTranspose2d::init(Rng& rng) {
    const int fan_in = in_ch_ * ksize_ * ksize_;
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& v : weight_.vec()) v = static_cast<float>(rng.normal(0.0, std));
    if (with_bias_) bias_.fill(0.0f);
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight_, &wgrad_});
    if (with_bias_) out.push_back({prefix + ".bias", &bias_, &bgrad_});
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    check_input(x, in_ch_, "ConvTranspose2d");
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = (h - 1) * stride_ + ksize_;
    const int wo = (w - 1) * stride_ + ksize_;
    Tensor y({n, out_ch_, ho, wo});

    // xmat rows = N*H*W, cols = Cin (gathered); M = xmat * Wmat, Wmat [Cin, Cout*k*k]
    const size_t rows = static_cast<size_t>(n) * h * w;
    const int kk = ksize_ * ksize_;
    std::vector<float> xmat(rows * in_ch_);
    for (int nn = 0; nn < n; ++nn)
        for (int c = 0; c < in_ch_; ++c) {
            const float* src = x.data() + ((static_cast<size_t>(nn) * in_ch_ + c) * h) * w;
            float* dstbase = xmat.data() + static_cast<size_t>(nn) * h * w * in_ch_ + c;
            for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p) dstbase[p * in_ch_] = src[p];
        }
    std::vector<float> m(rows * static_cast<size_t>(out_ch_) * kk);
    {
        ConstMapRM xm(xmat.data(), static_cast<Eigen::Index>(rows), in_ch_);
        ConstMapRM wm(weight_.data(), in_ch_, out_ch_ * kk);
        MapRM mm(m.data(), static_cast<Eigen::Index>(rows), out_ch_ * kk);
        mm.noalias() = xm * wm;
    }
    // Scatter-add into output (disjoint when stride == ksize).
    for (int nn = 0; nn < n; ++nn) {
        for (int yi = 0; yi < h; ++yi) {
            for (int xi = 0; xi < w; ++xi) {
                const float* row = m.data() +
                                   (static_cast<size_t>((nn * h + yi) * w + xi)) * out_ch_ * kk;
                for (int c = 0; c < out_ch_; ++c) {
                    float* chan = y.data() + ((static_cast<size_t>(nn) * out_ch_ + c) * ho) * wo;
                    for (int ky = 0; ky < ksize_; ++ky)
                        for (int kx = 0; kx < ksize_; ++kx)
                            chan[static_cast<size_t>(yi * stride_ + ky) * wo + xi * stride_ + kx] +=
                                row[(c * ksize_ + ky) * ksize_ + kx];
                }
            }
        }
    }
    if (with_bias_) {
        for (int nn = 0; nn < n; ++nn)
            for (int c = 0; c < out_ch_; ++c) {
                float* dst = y.data() + ((static_cast<size_t>(nn) * out_ch_ + c) * ho) * wo;
                const float b = bias_[static_cast<size_t>(c)];
                for (size_t p = 0; p < static_cast<size_t>(ho) * wo; ++p) dst[p] += b;
            }
    }
    if (training_) cached_x_ = x;
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
    if (cached_x_.empty())
        throw ShapeError("ConvTranspose2d::backward called without cached forward");
    const Tensor& x = cached_x_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = dy.dim(2), wo = dy.dim(3);
    const size_t rows = static_cast<size_t>(n) * h * w;
    const int kk = ksize_ * ksize_;

    // Gather dM from dy: dM[row, c*kk + ko] = dy[n, c, yi*s+ky, xi*s+kx]
    std::vector<float> dm(rows * static_cast<size_t>(out_ch_) * kk);
    for (int nn = 0; nn < n; ++nn) {
        for (int yi = 0; yi < h; ++yi) {
            for (int xi = 0; xi < w; ++xi) {
                float* row =
                    dm.data() + (static_cast<size_t>((nn * h + yi) * w + xi)) * out_ch_ * kk;
                for (int c = 0; c < out_ch_; ++c) {
                    const float* chan =
                        dy.data() + ((static_cast<size_t>(nn) * out_ch_ + c) * ho) * wo;
                    for (int ky = 0; ky < ksize_; ++ky)
                        for (int kx = 0; kx < ksize_; ++kx)
                            row[(c * ksize_ + ky) * ksize_ + kx] =
                                chan[static_cast<size_t>(yi * stride_ + ky) * wo + xi * stride_ +
                                     kx];
                }
            }
        }
    }

    // dW += xmat^T * dM ; dxmat = dM * Wmat^T
    std::vector<float> xmat(rows * in_ch_);
    for (int nn = 0; nn < n; ++nn)
        for (int c = 0; c < in_ch_; ++c) {
            const float* src = x.data() + ((static_cast<size_t>(nn) * in_ch_ + c) * h) * w;
            float* dstbase = xmat.data() + static_cast<size_t>(nn) * h * w * in_ch_ + c;
            for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p) dstbase[p * in_ch_] = src[p];
        }
    Tensor dx({n, in_ch_, h, w});
    {
        ConstMapRM xm(xmat.data(), static_cast<Eigen::Index>(rows), in_ch_);
        ConstMapRM dmm(dm.data(), static_cast<Eigen::Index>(rows), out_ch_ * kk);
        MapRM dwm(wgrad_.data(), in_ch_, out_ch_ * kk);
        dwm.noalias() += xm.transpose() * dmm;

        ConstMapRM wm(weight_.data(), in_ch_, out_ch_ * kk);
        std::vector<float> dxmat(rows * in_ch_);
        MapRM dxm(dxmat.data(), static_cast<Eigen::Index>(rows), in_ch_);
        dxm.noalias() = dmm * wm.transpose();
        for (int nn = 0; nn < n; ++nn)
            for (int c = 0; c < in_ch_; ++c) {
                float* dst = dx.data() + ((static_cast<size_t>(nn) * in_ch_ + c) * h) * w;
                const float* srcbase = dxmat.data() + static_cast<size_t>(nn) * h * w * in_ch_ + c;
                for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p) dst[p] = srcbase[p * in_ch_];
            }
    }
    if (with_bias_) {
        for (int c = 0; c < out_ch_; ++c) {
            double acc = 0.0;
            for (int nn = 0; nn < n; ++nn) {
                const float* chan = dy.data() + ((static_cast<size_t>(nn) * out_ch_ + c) * ho) * wo;
                for (size_t p = 0; p < static_cast<size_t>(ho) * wo; ++p) acc += chan[p];
            }
            bgrad_[static_cast<size_t>(c)] += static_cast<float>(acc);
        }
    }
    cached_x_ = Tensor();
    return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
}  // namespace

BatchNorm2d::BatchNorm2d(int channels) : channels_(channels) {
    gamma_ = Tensor({channels}, 1.0f);
    ggrad_ = Tensor({channels});
    beta_ = Tensor({channels});
    bgrad_ = Tensor({channels});
    running_mean_ = Tensor({channels});
    running_var_ = Tensor({channels}, 1.0f);
}

void BatchNorm2d::init(Rng&) {
    gamma_.fill(1.0f);
    beta_.fill(0.0f);
    running_mean_.fill(0.0f);
    running_var_.fill(1.0f);
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".gamma", &gamma_, &ggrad_});
    out.push_back({prefix + ".beta", &beta_, &bgrad_});
    out.push_back({prefix + ".running_mean", &running_mean_, nullptr});
    out.push_back({prefix + ".running_var", &running_var_, nullptr});
}

namespace {
using ArrF = Eigen::Array<float, Eigen::Dynamic, 1>;
using MapArrF = Eigen::Map<ArrF>;
using ConstMapArrF = Eigen::Map<const ArrF>;
}  // namespace

Tensor BatchNorm2d::forward(const Tensor& x) {
    check_input(x, channels_, "BatchNorm2d");
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t m = static_cast<size_t>(n) * plane;
    Tensor y({n, channels_, h, w});

    if (training_) {
        if (!saved_xhat_.same_shape(x)) saved_xhat_ = Tensor(x.shape());
        saved_inv_std_.assign(static_cast<size_t>(channels_), 0.0);
        has_saved_ = true;
    }

    for (int c = 0; c < channels_; ++c) {
        double mu, var;
        if (training_) {
            // per-plane float reductions, accumulated in double across planes
            double s = 0.0, s2 = 0.0;
            for (int nn = 0; nn < n; ++nn) {
                ConstMapArrF p(x.data() + ((static_cast<size_t>(nn) * channels_ + c) * plane),
                               static_cast<Eigen::Index>(plane));
                s += p.sum();
                s2 += p.square().sum();
            }
            mu = s / static_cast<double>(m);
            const double sv = std::max(0.0, s2 - s * mu);
            var = sv / static_cast<double>(m);  // biased, used for normalization
            const double unbiased = m > 1 ? sv / static_cast<double>(m - 1) : var;
            running_mean_[static_cast<size_t>(c)] = static_cast<float>(
                (1.0 - kBnMomentum) * running_mean_[static_cast<size_t>(c)] + kBnMomentum * mu);
            running_var_[static_cast<size_t>(c)] = static_cast<float>(
                (1.0 - kBnMomentum) * running_var_[static_cast<size_t>(c)] + kBnMomentum * unbiased);
        } else {
            mu = running_mean_[static_cast<size_t>(c)];
            var = running_var_[static_cast<size_t>(c)];
        }
        const float inv_std = static_cast<float>(1.0 / std::sqrt(var + kBnEps));
        const float fmu = static_cast<float>(mu);
        const float g = gamma_[static_cast<size_t>(c)], b = beta_[static_cast<size_t>(c)];
        for (int nn = 0; nn < n; ++nn) {
            const size_t off = (static_cast<size_t>(nn) * channels_ + c) * plane;
            ConstMapArrF p(x.data() + off, static_cast<Eigen::Index>(plane));
            MapArrF q(y.data() + off, static_cast<Eigen::Index>(plane));
            if (training_) {
                MapArrF xh(saved_xhat_.data() + off, static_cast<Eigen::Index>(plane));
                xh = (p - fmu) * inv_std;
                q = g * xh + b;
            } else {
                q = (p - fmu) * (g * inv_std) + b;
            }
        }
        if (training_) saved_inv_std_[static_cast<size_t>(c)] = inv_std;
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    if (!has_saved_ || !saved_xhat_.same_shape(dy))
        throw ShapeError("BatchNorm2d::backward called without forward");
    const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t m = static_cast<size_t>(n) * plane;
    Tensor dx({n, channels_, h, w});

    for (int c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int nn = 0; nn < n; ++nn) {
            const size_t off = (static_cast<size_t>(nn) * channels_ + c) * plane;
            ConstMapArrF gp(dy.data() + off, static_cast<Eigen::Index>(plane));
            ConstMapArrF xh(saved_xhat_.data() + off, static_cast<Eigen::Index>(plane));
            sum_dy += gp.sum();
            sum_dy_xhat += (gp * xh).sum();
        }
        ggrad_[static_cast<size_t>(c)] += static_cast<float>(sum_dy_xhat);
        bgrad_[static_cast<size_t>(c)] += static_cast<float>(sum_dy);

        const float g = gamma_[static_cast<size_t>(c)];
        const float inv_std = static_cast<float>(saved_inv_std_[static_cast<size_t>(c)]);
        const float k1 = static_cast<float>(sum_dy / static_cast<double>(m));
        const float k2 = static_cast<float>(sum_dy_xhat / static_cast<double>(m));
        for (int nn = 0; nn < n; ++nn) {
            const size_t off = (static_cast<size_t>(nn) * channels_ + c) * plane;
            ConstMapArrF gp(dy.data() + off, static_cast<Eigen::Index>(plane));
            ConstMapArrF xh(saved_xhat_.data() + off, static_cast<Eigen::Index>(plane));
            MapArrF dp(dx.data() + off, static_cast<Eigen::Index>(plane));
            dp = (gp - k1 - xh * k2) * (g * inv_std);
        }
    }
    has_saved_ = false;
    return dx;
}

// ---------------------------------------------------------------------------
// Pointwise / pooling
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
    Tensor y = x;
    MapArrF ym(y.data(), static_cast<Eigen::Index>(y.numel()));
    ym = ym.max(0.0f);
    if (training_) cached_y_ = y;  // backward gates on y > 0
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    if (cached_y_.numel() != dy.numel()) throw ShapeError("ReLU::backward without forward");
    Tensor dx = dy;
    MapArrF dxm(dx.data(), static_cast<Eigen::Index>(dx.numel()));
    ConstMapArrF ym(cached_y_.data(), static_cast<Eigen::Index>(cached_y_.numel()));
    dxm = (ym > 0.0f).select(dxm, 0.0f);
    cached_y_ = Tensor();
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
    Tensor y = x;
    for (size_t i = 0; i < y.numel(); ++i) y[i] = 1.0f / (1.0f + std::exp(-y[i]));
    if (training_) cached_y_ = y;
    return y;
}

Tensor Sigmoid::backward(const Tensor& dy) {
    if (cached_y_.numel() != dy.numel()) throw ShapeError("Sigmoid::backward without forward");
    Tensor dx = dy;
    for (size_t i = 0; i < dx.numel(); ++i) {
        const float s = cached_y_[i];
        dx[i] *= s * (1.0f - s);
    }
    return dx;
}

Tensor MaxPool2d::forward(const Tensor& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = conv_out_size(h, ksize_, stride_, pad_);
    const int wo = conv_out_size(w, ksize_, stride_, pad_);
    Tensor y({n, c, ho, wo});
    if (training_) {
        in_shape_ = x.shape();
        argmax_.assign(y.numel(), 0);
    }
    size_t o = 0;
    for (int nn = 0; nn < n; ++nn) {
        for (int cc = 0; cc < c; ++cc) {
            const float* chan = x.data() + ((static_cast<size_t>(nn) * c + cc) * h) * w;
            for (int yo = 0; yo < ho; ++yo) {
                for (int xo = 0; xo < wo; ++xo, ++o) {
                    const int y0 = yo * stride_ - pad_, x0 = xo * stride_ - pad_;
                    float best = -std::numeric_limits<float>::infinity();
                    size_t best_idx = 0;
                    for (int ky = 0; ky < ksize_; ++ky) {
                        const int yy = y0 + ky;
                        if (yy < 0 || yy >= h) continue;
                        for (int kx = 0; kx < ksize_; ++kx) {
                            const int xx = x0 + kx;
                            if (xx < 0 || xx >= w) continue;
                            const float v = chan[static_cast<size_t>(yy) * w + xx];
                            if (v > best) {
                                best = v;
                                best_idx = ((static_cast<size_t>(nn) * c + cc) * h + yy) * w + xx;
                            }
                        }
                    }
                    y[o] = best;
                    if (training_) argmax_[o] = best_idx;
                }
            }
        }
    }
    return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
    if (argmax_.size() != dy.numel()) throw ShapeError("MaxPool2d::backward without forward");
    Tensor dx(in_shape_);
    for (size_t o = 0; o < dy.numel(); ++o) dx[argmax_[o]] += dy[o];
    return dx;
}

Tensor NearestUpsample2x::forward(const Tensor& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({n, c, 2 * h, 2 * w});
    for (int nn = 0; nn < n; ++nn)
        for (int cc = 0; cc < c; ++cc) {
            const float* src = x.data() + ((static_cast<size_t>(nn) * c + cc) * h) * w;
            float* dst = y.data() + ((static_cast<size_t>(nn) * c + cc) * 2 * h) * 2 * w;
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) {
                    const float v = src[static_cast<size_t>(yy) * w + xx];
                    float* d = dst + (static_cast<size_t>(2 * yy) * 2 * w + 2 * xx);
                    d[0] = v;
                    d[1] = v;
                    d[2 * w] = v;
                    d[2 * w + 1] = v;
                }
        }
    return y;
}

Tensor NearestUpsample2x::backward(const Tensor& dy) {
    const int n = dy.dim(0), c = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
    const int h = ho / 2, w = wo / 2;
    Tensor dx({n, c, h, w});
    for (int nn = 0; nn < n; ++nn)
        for (int cc = 0; cc < c; ++cc) {
            const float* src = dy.data() + ((static_cast<size_t>(nn) * c + cc) * ho) * wo;
            float* dst = dx.data() + ((static_cast<size_t>(nn) * c + cc) * h) * w;
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) {
                    const float* s = src + (static_cast<size_t>(2 * yy) * wo + 2 * xx);
                    dst[static_cast<size_t>(yy) * w + xx] = s[0] + s[1] + s[wo] + s[wo + 1];
                }
        }
    return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    in_shape_ = x.shape();
    Tensor y({n, c});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int nn = 0; nn < n; ++nn)
        for (int cc = 0; cc < c; ++cc) {
            const float* p = x.data() + ((static_cast<size_t>(nn) * c + cc) * plane);
            double s = 0.0;
            for (size_t i = 0; i < plane; ++i) s += p[i];
            y[static_cast<size_t>(nn) * c + cc] = static_cast<float>(s / static_cast<double>(plane));
        }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
    const int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    Tensor dx(in_shape_);
    const size_t plane = static_cast<size_t>(h) * w;
    const float inv = 1.0f / static_cast<float>(plane);
    for (int nn = 0; nn < n; ++nn)
        for (int cc = 0; cc < c; ++cc) {
            const float g = dy[static_cast<size_t>(nn) * c + cc] * inv;
            float* p = dx.data() + ((static_cast<size_t>(nn) * c + cc) * plane);
            for (size_t i = 0; i < plane; ++i) p[i] = g;
        }
    return dx;
}

Linear::Linear(int in_features, int out_features) : in_(in_features), out_(out_features) {
    weight_ = Tensor({out_, in_});
    wgrad_ = Tensor({out_, in_});
    bias_ = Tensor({out_});
    bgrad_ = Tensor({out_});
}

void Linear::init(Rng& rng) {
    const double std = std::sqrt(2.0 / in_);
    for (auto& v : weight_.vec()) v = static_cast<float>(rng.normal(0.0, std));
    bias_.fill(0.0f);
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight_, &wgrad_});
    out.push_back({prefix + ".bias", &bias_, &bgrad_});
}

Tensor Linear::forward(const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != in_) throw ShapeError("Linear: bad input shape");
    const int n = x.dim(0);
    Tensor y({n, out_});
    ConstMapRM xm(x.data(), n, in_);
    ConstMapRM wm(weight_.data(), out_, in_);
    MapRM ym(y.data(), n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int nn = 0; nn < n; ++nn)
        for (int o = 0; o < out_; ++o) y.data()[static_cast<size_t>(nn) * out_ + o] += bias_[static_cast<size_t>(o)];
    if (training_) cached_x_ = x;
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    if (cached_x_.empty()) throw ShapeError("Linear::backward without forward");
    const int n = dy.dim(0);
    ConstMapRM dym(dy.data(), n, out_);
    ConstMapRM xm(cached_x_.data(), n, in_);
    MapRM dwm(wgrad_.data(), out_, in_);
    dwm.noalias() += dym.transpose() * xm;
    for (int o = 0; o < out_; ++o) {
        double acc = 0.0;
        for (int nn = 0; nn < n; ++nn) acc += dy.data()[static_cast<size_t>(nn) * out_ + o];
        bgrad_[static_cast<size_t>(o)] += static_cast<float>(acc);
    }
    Tensor dx({n, in_});
    ConstMapRM wm(weight_.data(), out_, in_);
    MapRM dxm(dx.data(), n, in_);
    dxm.noalias() = dym * wm;
    cached_x_ = Tensor();
    return dx;
}

// ---------------------------------------------------------------------------
// Graph helpers
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    Tensor y = a;
    for (size_t i = 0; i < y.numel(); ++i) y[i] += b[i];
    return y;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: spatial/batch mismatch");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor y({n, ca + cb, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int nn = 0; nn < n; ++nn) {
        std::copy_n(a.data() + static_cast<size_t>(nn) * ca * plane, static_cast<size_t>(ca) * plane,
                    y.data() + static_cast<size_t>(nn) * (ca + cb) * plane);
        std::copy_n(b.data() + static_cast<size_t>(nn) * cb * plane, static_cast<size_t>(cb) * plane,
                    y.data() + static_cast<size_t>(nn) * (ca + cb) * plane + static_cast<size_t>(ca) * plane);
    }
    return y;
}

void split_channels(const Tensor& d, int channels_a, Tensor& da, Tensor& db) {
    const int n = d.dim(0), c = d.dim(1), h = d.dim(2), w = d.dim(3);
    const int cb = c - channels_a;
    da = Tensor({n, channels_a, h, w});
    db = Tensor({n, cb, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int nn = 0; nn < n; ++nn) {
        std::copy_n(d.data() + static_cast<size_t>(nn) * c * plane,
                    static_cast<size_t>(channels_a) * plane,
                    da.data() + static_cast<size_t>(nn) * channels_a * plane);
        std::copy_n(d.data() + static_cast<size_t>(nn) * c * plane + static_cast<size_t>(channels_a) * plane,
                    static_cast<size_t>(cb) * plane, db.data() + static_cast<size_t>(nn) * cb * plane);
    }
}

}  // namespace screenseg::nn
