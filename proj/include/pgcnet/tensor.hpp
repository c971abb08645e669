#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pgcnet/error.hpp"

namespace pgcnet {

/// Channels-first dense volume C x D x H x W. 2D feature maps use D == 1.
template <typename T>
class Volume {
public:
    Volume() = default;
    Volume(int c, int d, int h, int w, T fill = T(0))
        : shape_{c, d, h, w}, data_(static_cast<std::size_t>(c) * d * h * w, fill) {
        if (c < 0 || d < 0 || h < 0 || w < 0) throw ShapeError("negative volume extent");
    }

    int channels() const { return shape_[0]; }
    int depth() const { return shape_[1]; }
    int height() const { return shape_[2]; }
    int width() const { return shape_[3]; }
    const std::array<int, 4>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t spatial_size() const {
        return static_cast<std::size_t>(shape_[1]) * shape_[2] * shape_[3];
    }

    T& operator()(int c, int d, int y, int x) { return data_[index(c, d, y, x)]; }
    const T& operator()(int c, int d, int y, int x) const { return data_[index(c, d, y, x)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    /// Pointer to the start of channel c.
    T* channel(int c) { return data_.data() + static_cast<std::size_t>(c) * spatial_size(); }
    const T* channel(int c) const {
        return data_.data() + static_cast<std::size_t>(c) * spatial_size();
    }

    bool same_shape(const Volume& o) const { return shape_ == o.shape_; }

    std::string shape_string() const {
        return std::to_string(shape_[0]) + "x" + std::to_string(shape_[1]) + "x" +
               std::to_string(shape_[2]) + "x" + std::to_string(shape_[3]);
    }

    template <typename U>
    Volume<U> cast() const {
        Volume<U> out(shape_[0], shape_[1], shape_[2], shape_[3]);
        std::transform(data_.begin(), data_.end(), out.values().begin(),
                       [](T v) { return static_cast<U>(v); });
        return out;
    }

private:
    std::size_t index(int c, int d, int y, int x) const {
        assert(c >= 0 && c < shape_[0] && d >= 0 && d < shape_[1] && y >= 0 &&
               y < shape_[2] && x >= 0 && x < shape_[3]);
        return ((static_cast<std::size_t>(c) * shape_[1] + d) * shape_[2] + y) * shape_[3] + x;
    }

    std::array<int, 4> shape_{0, 0, 0, 0};
    std::vector<T> data_;
};

/// Row-major H x W map (disparity, log-variance, masks, grayscale images).
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int h, int w, T fill = T())
        : h_(h), w_(w), data_(static_cast<std::size_t>(h) * w, fill) {
        if (h < 0 || w < 0) throw ShapeError("negative grid extent");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int y, int x) {
        assert(y >= 0 && y < h_ && x >= 0 && x < w_);
        return data_[static_cast<std::size_t>(y) * w_ + x];
    }
    const T& operator()(int y, int x) const {
        assert(y >= 0 && y < h_ && x >= 0 && x < w_);
        return data_[static_cast<std::size_t>(y) * w_ + x];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    template <typename U>
    bool same_shape(const Grid<U>& o) const {
        return h_ == o.height() && w_ == o.width();
    }

    template <typename U>
    Grid<U> cast() const {
        Grid<U> out(h_, w_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.h_ == b.h_ && a.w_ == b.w_ && a.data_ == b.data_;
    }

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<T> data_;
};

using Mask = Grid<unsigned char>;

}  // namespace pgcnet
