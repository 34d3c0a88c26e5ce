#include "screenseg/image.hpp"

#include <algorithm>
#include <cmath>

namespace screenseg {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Forward affine: rotate by theta, scale, then translate, all about the image
// centre. For inverse mapping we apply the inverse transform to output
// coordinates.
struct InverseAffine {
    double m00, m01, m10, m11;  // inverse linear part
    double cx, cy;              // centre
    double tx, ty;              // translation in pixels

    InverseAffine(const AffineParams& p, int h, int w) {
        const double theta = p.rotate_deg * M_PI / 180.0;
        const double s = p.scale;
        const double c = std::cos(theta), sn = std::sin(theta);
        // forward linear part A = s * R(theta); inverse = R(-theta)/s
        m00 = c / s;
        m01 = sn / s;
        m10 = -sn / s;
        m11 = c / s;
        cx = (w - 1) / 2.0;
        cy = (h - 1) / 2.0;
        tx = p.translate_x * w;
        ty = p.translate_y * h;
    }

    void map(double yo, double xo, double& yi, double& xi) const {
        const double dx = xo - cx - tx;
        const double dy = yo - cy - ty;
        xi = m00 * dx + m01 * dy + cx;
        yi = m10 * dx + m11 * dy + cy;
    }
};

inline float sample_bilinear(const ImageF& src, double y, double x, float fill) {
    if (y < -1.0 || x < -1.0 || y > src.height || x > src.width) return fill;
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto px = [&](int yy, int xx) -> float {
        if (yy < 0 || yy >= src.height || xx < 0 || xx >= src.width) return fill;
        return src.at(yy, xx);
    };
    const float v00 = px(y0, x0), v01 = px(y0, x0 + 1);
    const float v10 = px(y0 + 1, x0), v11 = px(y0 + 1, x0 + 1);
    const double top = v00 + fx * (v01 - v00);
    const double bot = v10 + fx * (v11 - v10);
    return static_cast<float>(top + fy * (bot - top));
}

}  // namespace

ImageF resize_bilinear(const ImageF& src, int out_h, int out_w) {
    ImageF dst(out_h, out_w);
    if (src.height == out_h && src.width == out_w) {
        dst.v = src.v;
        return dst;
    }
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        // pixel-centre alignment
        const double yi = (y + 0.5) * sy - 0.5;
        const int y0 = clampi(static_cast<int>(std::floor(yi)), 0, src.height - 1);
        const int y1 = clampi(y0 + 1, 0, src.height - 1);
        const double fy = std::clamp(yi - y0, 0.0, 1.0);
        for (int x = 0; x < out_w; ++x) {
            const double xi = (x + 0.5) * sx - 0.5;
            const int x0 = clampi(static_cast<int>(std::floor(xi)), 0, src.width - 1);
            const int x1 = clampi(x0 + 1, 0, src.width - 1);
            const double fx = std::clamp(xi - x0, 0.0, 1.0);
            const double top = src.at(y0, x0) + fx * (src.at(y0, x1) - src.at(y0, x0));
            const double bot = src.at(y1, x0) + fx * (src.at(y1, x1) - src.at(y1, x0));
            dst.at(y, x) = static_cast<float>(top + fy * (bot - top));
        }
    }
    return dst;
}

ImageF warp_affine(const ImageF& src, const AffineParams& p, float fill) {
    ImageF dst(src.height, src.width);
    const InverseAffine inv(p, src.height, src.width);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double yi, xi;
            inv.map(y, x, yi, xi);
            dst.at(y, x) = sample_bilinear(src, yi, xi, fill);
        }
    }
    return dst;
}

ImageF warp_affine_nearest(const ImageF& src, const AffineParams& p, float fill) {
    ImageF dst(src.height, src.width);
    const InverseAffine inv(p, src.height, src.width);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double yi, xi;
            inv.map(y, x, yi, xi);
            const int yn = static_cast<int>(std::lround(yi));
            const int xn = static_cast<int>(std::lround(xi));
            dst.at(y, x) = (yn < 0 || yn >= src.height || xn < 0 || xn >= src.width)
                               ? fill
                               : src.at(yn, xn);
        }
    }
    return dst;
}

Mask warp_affine(const Mask& src, const AffineParams& p) {
    Mask dst(src.height, src.width);
    const InverseAffine inv(p, src.height, src.width);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double yi, xi;
            inv.map(y, x, yi, xi);
            const int yn = static_cast<int>(std::lround(yi));
            const int xn = static_cast<int>(std::lround(xi));
            dst.at(y, x) = (yn < 0 || yn >= src.height || xn < 0 || xn >= src.width)
                               ? 0
                               : src.at(yn, xn);
        }
    }
    return dst;
}

ImageF flip_horizontal(const ImageF& src) {
    ImageF dst(src.height, src.width);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) dst.at(y, x) = src.at(y, src.width - 1 - x);
    return dst;
}

Mask flip_horizontal(const Mask& src) {
    Mask dst(src.height, src.width);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) dst.at(y, x) = src.at(y, src.width - 1 - x);
    return dst;
}

Mask warp_displacement(const Mask& src, const std::vector<float>& dy,
                       const std::vector<float>& dx) {
    if (dy.size() != src.numel() || dx.size() != src.numel())
        throw ShapeError("displacement field does not match mask shape");
    Mask dst(src.height, src.width);
    size_t i = 0;
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x, ++i) {
            const int yn = static_cast<int>(std::lround(y + dy[i]));
            const int xn = static_cast<int>(std::lround(x + dx[i]));
            dst.at(y, x) = (yn < 0 || yn >= src.height || xn < 0 || xn >= src.width)
                               ? 0
                               : src.at(yn, xn);
        }
    }
    return dst;
}

ImageF gaussian_blur(const ImageF& src, double sigma) {
    if (sigma <= 0.0) return src;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += kernel[static_cast<size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= norm;

    ImageF tmp(src.height, src.width), dst(src.height, src.width);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<size_t>(i + radius)] *
                       src.at(y, clampi(x + i, 0, src.width - 1));
            tmp.at(y, x) = static_cast<float>(acc);
        }
    }
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<size_t>(i + radius)] *
                       tmp.at(clampi(y + i, 0, src.height - 1), x);
            dst.at(y, x) = static_cast<float>(acc);
        }
    }
    return dst;
}

namespace {

// Disk offsets for the given radius, precomputed per call (radii are small).
std::vector<std::pair<int, int>> disk_offsets(int radius) {
    std::vector<std::pair<int, int>> out;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) out.emplace_back(dy, dx);
    return out;
}

}  // namespace

Mask dilate(const Mask& src, int radius) {
    if (radius <= 0) return src;
    const auto offs = disk_offsets(radius);
    Mask dst(src.height, src.width);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            if (!src.at(y, x)) continue;
            for (const auto& [dy, dx] : offs) {
                const int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < src.height && xx >= 0 && xx < src.width) dst.at(yy, xx) = 1;
            }
        }
    }
    return dst;
}

Mask erode(const Mask& src, int radius) {
    if (radius <= 0) return src;
    const auto offs = disk_offsets(radius);
    Mask dst(src.height, src.width);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            bool keep = src.at(y, x) != 0;
            for (size_t i = 0; keep && i < offs.size(); ++i) {
                const int yy = y + offs[i].first, xx = x + offs[i].second;
                keep = yy >= 0 && yy < src.height && xx >= 0 && xx < src.width &&
                       src.at(yy, xx) != 0;
            }
            dst.at(y, x) = keep ? 1 : 0;
        }
    }
    return dst;
}

Mask boundary_ring(const Mask& src, int outer, int inner) {
    const Mask d = dilate(src, outer);
    const Mask e = erode(src, inner);
    Mask out(src.height, src.width);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = (d.v[i] && !e.v[i]) ? 1 : 0;
    return out;
}

double mean(const ImageF& img) {
    double s = 0.0;
    for (float x : img.v) s += x;
    return img.v.empty() ? 0.0 : s / static_cast<double>(img.v.size());
}

double stddev(const ImageF& img, double mean_value) {
    double s = 0.0;
    for (float x : img.v) {
        const double d = x - mean_value;
        s += d * d;
    }
    return img.v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(img.v.size()));
}

double mask_dice(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) throw ShapeError("mask_dice: shape mismatch");
    size_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        na += a.v[i];
        nb += b.v[i];
        inter += static_cast<size_t>(a.v[i] & b.v[i]);
    }
    if (na + nb == 0) return 1.0;  // both empty
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace screenseg
