#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <vector>

#include "screenseg/error.hpp"

namespace screenseg {

// Dense row-major float tensor of rank <= 4. Rank-4 tensors follow the
// (batch, channel, height, width) convention used by the conv layers.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0f);
    }

    Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)) {
        data_.assign(count(shape_), fill);
    }

    static Tensor from(std::vector<int> shape, std::vector<float> data) {
        Tensor t;
        if (count(shape) != data.size()) throw ShapeError("tensor data does not match shape");
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    // NCHW accessors.
    float& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    float at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            assert(d >= 0);
            n *= static_cast<size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }

    size_t offset(int n, int c, int h, int w) const {
        assert(rank() == 4);
        return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

}  // namespace screenseg
