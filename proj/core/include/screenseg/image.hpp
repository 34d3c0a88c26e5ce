#pragma once

#include <cstdint>
#include <vector>

#include "screenseg/error.hpp"

namespace screenseg {

// Single-channel float image, row-major, values nominally in [0,1].
struct ImageF {
    int height = 0;
    int width = 0;
    std::vector<float> v;

    ImageF() = default;
    ImageF(int h, int w, float fill = 0.0f)
        : height(h), width(w), v(static_cast<size_t>(h) * w, fill) {}

    float& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    float at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
    size_t numel() const { return v.size(); }
    bool same_shape(const ImageF& o) const { return height == o.height && width == o.width; }
};

// Binary mask; values are 0 or 1.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int h, int w, uint8_t fill = 0)
        : height(h), width(w), v(static_cast<size_t>(h) * w, fill) {}

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
    size_t numel() const { return v.size(); }
    bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }

    size_t count() const {
        size_t n = 0;
        for (uint8_t b : v) n += b;
        return n;
    }
    bool any() const {
        for (uint8_t b : v) {
            if (b) return true;
        }
        return false;
    }
    bool operator==(const Mask& o) const {
        return height == o.height && width == o.width && v == o.v;
    }
};

// Geometric parameters shared between an image and its label during
// augmentation: rotation about the image centre, fractional translation,
// isotropic scale. Mirroring is a separate op (flip_horizontal).
struct AffineParams {
    double rotate_deg = 0.0;
    double translate_x = 0.0;  // fraction of width
    double translate_y = 0.0;  // fraction of height
    double scale = 1.0;
};

// --------------------------------------------------------------------------
// Resampling
// --------------------------------------------------------------------------

// Bilinear resize with edge clamping.
ImageF resize_bilinear(const ImageF& src, int out_h, int out_w);

// Inverse-mapped affine warp about the image centre. Bilinear for images,
// nearest for masks (keeps labels binary). Out-of-bounds samples take the
// fill value.
ImageF warp_affine(const ImageF& src, const AffineParams& p, float fill = 0.0f);
ImageF warp_affine_nearest(const ImageF& src, const AffineParams& p, float fill = 0.0f);
Mask warp_affine(const Mask& src, const AffineParams& p);

ImageF flip_horizontal(const ImageF& src);
Mask flip_horizontal(const Mask& src);

// Warp by a dense per-pixel displacement field (dy, dx in pixels), nearest
// neighbour, used by the rater simulator.
Mask warp_displacement(const Mask& src, const std::vector<float>& dy,
                       const std::vector<float>& dx);

// --------------------------------------------------------------------------
// Filtering and morphology
// --------------------------------------------------------------------------

// Separable Gaussian blur, edge-clamped; radius = ceil(3 sigma).
ImageF gaussian_blur(const ImageF& src, double sigma);

// Morphological dilation/erosion with a Euclidean disk of the given radius.
Mask dilate(const Mask& src, int radius);
Mask erode(const Mask& src, int radius);

// Pixels inside `outer` dilation but outside `inner` erosion: a boundary ring.
Mask boundary_ring(const Mask& src, int outer, int inner);

// --------------------------------------------------------------------------
// Scalar reductions
// --------------------------------------------------------------------------

double mean(const ImageF& img);
double stddev(const ImageF& img, double mean_value);

// Dice overlap of two binary masks; both-empty is defined as 1.
double mask_dice(const Mask& a, const Mask& b);

}  // namespace screenseg
