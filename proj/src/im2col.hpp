#pragma once

#include <array>
#include <cstring>

#include "pgcnet/variational.hpp"

namespace pgcnet::detail {

// Unfolds a C x (D,H,W) input into a (C*kd*kh*kw) x (Do*Ho*Wo) row-major patch matrix.
template <typename T>
void im2col(const T* input, int channels, const std::array<int, 3>& in, const ConvGeometry& g,
            const std::array<int, 3>& out, T* cols) {
    const int kd = g.kernel[0], kh = g.kernel[1], kw = g.kernel[2];
    const std::size_t in_plane = static_cast<std::size_t>(in[1]) * in[2];
    const std::size_t in_vol = in_plane * in[0];
    const std::size_t out_count = static_cast<std::size_t>(out[0]) * out[1] * out[2];
    T* row = cols;
    for (int c = 0; c < channels; ++c) {
        const T* src_c = input + c * in_vol;
        for (int a = 0; a < kd; ++a)
            for (int b = 0; b < kh; ++b)
                for (int e = 0; e < kw; ++e, row += out_count) {
                    T* dst = row;
                    for (int od = 0; od < out[0]; ++od) {
                        const int id = od * g.stride[0] - g.padding[0] + a;
                        if (id < 0 || id >= in[0]) {
                            std::memset(dst, 0, sizeof(T) * out[1] * out[2]);
                            dst += out[1] * out[2];
                            continue;
                        }
                        for (int oh = 0; oh < out[1]; ++oh) {
                            const int ih = oh * g.stride[1] - g.padding[1] + b;
                            if (ih < 0 || ih >= in[1]) {
                                std::memset(dst, 0, sizeof(T) * out[2]);
                                dst += out[2];
                                continue;
                            }
                            const T* src = src_c + id * in_plane + static_cast<std::size_t>(ih) * in[2];
                            const int sw = g.stride[2];
                            const int off = e - g.padding[2];
                            for (int ow = 0; ow < out[2]; ++ow) {
                                const int iw = ow * sw + off;
                                *dst++ = (iw >= 0 && iw < in[2]) ? src[iw] : T(0);
                            }
                        }
                    }
                }
    }
}

// Adjoint of im2col: scatters-adds patch columns back into a zero-initialized input buffer.
template <typename T>
void col2im(const T* cols, int channels, const std::array<int, 3>& in, const ConvGeometry& g,
            const std::array<int, 3>& out, T* input) {
    const int kd = g.kernel[0], kh = g.kernel[1], kw = g.kernel[2];
    const std::size_t in_plane = static_cast<std::size_t>(in[1]) * in[2];
    const std::size_t in_vol = in_plane * in[0];
    const std::size_t out_count = static_cast<std::size_t>(out[0]) * out[1] * out[2];
    const T* row = cols;
    for (int c = 0; c < channels; ++c) {
        T* dst_c = input + c * in_vol;
        for (int a = 0; a < kd; ++a)
            for (int b = 0; b < kh; ++b)
                for (int e = 0; e < kw; ++e, row += out_count) {
                    const T* src = row;
                    for (int od = 0; od < out[0]; ++od) {
                        const int id = od * g.stride[0] - g.padding[0] + a;
                        if (id < 0 || id >= in[0]) {
                            src += out[1] * out[2];
                            continue;
                        }
                        for (int oh = 0; oh < out[1]; ++oh) {
                            const int ih = oh * g.stride[1] - g.padding[1] + b;
                            if (ih < 0 || ih >= in[1]) {
                                src += out[2];
                                continue;
                            }
                            T* dst = dst_c + id * in_plane + static_cast<std::size_t>(ih) * in[2];
                            const int off = e - g.padding[2];
                            for (int ow = 0; ow < out[2]; ++ow, ++src) {
                                const int iw = ow * g.stride[2] + off;
                                if (iw >= 0 && iw < in[2]) dst[iw] += *src;
                            }
                        }
                    }
                }
    }
}

}  // namespace pgcnet::detail
