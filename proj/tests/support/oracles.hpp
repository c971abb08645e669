#pragma once

// Straightforward reference implementations used as test oracles. They share no code with the
// library beyond the tensor containers.

#include <cmath>
#include <vector>

#include "pgcnet/tensor.hpp"
#include "pgcnet/variational.hpp"

namespace oracle {

inline double normal_pdf(double x, double mu, double sd) {
    const double z = (x - mu) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
}

// KL(q || p) by composite Simpson integration of q log(q/p) over mu_q +- 14 sigma_q.
inline double kl_numeric(double mq, double sq, double mp, double sp, int intervals = 20000) {
    const double a = mq - 14 * sq, b = mq + 14 * sq;
    const double h = (b - a) / intervals;
    auto f = [&](double x) {
        const double q = normal_pdf(x, mq, sq);
        if (q == 0.0) return 0.0;
        const double log_ratio = (-0.5 * std::pow((x - mq) / sq, 2) - std::log(sq)) -
                                 (-0.5 * std::pow((x - mp) / sp, 2) - std::log(sp));
        return q * log_ratio;
    };
    double s = f(a) + f(b);
    for (int i = 1; i < intervals; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

// Direct 3D cross-correlation with zero padding; weights {out, in, kd, kh, kw}.
template <typename T>
pgcnet::Volume<T> conv3d(const pgcnet::Volume<T>& x, const std::vector<T>& w, const std::vector<T>& b,
                         int cout, const pgcnet::ConvGeometry& g) {
    const int cin = x.channels();
    const int od = (x.depth() + 2 * g.padding[0] - g.kernel[0]) / g.stride[0] + 1;
    const int oh = (x.height() + 2 * g.padding[1] - g.kernel[1]) / g.stride[1] + 1;
    const int ow = (x.width() + 2 * g.padding[2] - g.kernel[2]) / g.stride[2] + 1;
    pgcnet::Volume<T> y(cout, od, oh, ow);
    for (int o = 0; o < cout; ++o)
        for (int z = 0; z < od; ++z)
            for (int r = 0; r < oh; ++r)
                for (int c = 0; c < ow; ++c) {
                    double acc = b.empty() ? 0.0 : b[o];
                    for (int i = 0; i < cin; ++i)
                        for (int kd = 0; kd < g.kernel[0]; ++kd)
                            for (int kh = 0; kh < g.kernel[1]; ++kh)
                                for (int kw = 0; kw < g.kernel[2]; ++kw) {
                                    const int zz = z * g.stride[0] - g.padding[0] + kd;
                                    const int rr = r * g.stride[1] - g.padding[1] + kh;
                                    const int cc = c * g.stride[2] - g.padding[2] + kw;
                                    if (zz < 0 || rr < 0 || cc < 0 || zz >= x.depth() ||
                                        rr >= x.height() || cc >= x.width())
                                        continue;
                                    const std::size_t wi =
                                        ((((static_cast<std::size_t>(o) * cin + i) * g.kernel[0] + kd) *
                                              g.kernel[1] + kh) * g.kernel[2] + kw);
                                    acc += static_cast<double>(w[wi]) * x(i, zz, rr, cc);
                                }
                    y(o, z, r, c) = static_cast<T>(acc);
                }
    return y;
}

// Transposed convolution by scattering every input element; weights {in, out, kd, kh, kw}.
template <typename T>
pgcnet::Volume<T> conv3d_transposed(const pgcnet::Volume<T>& x, const std::vector<T>& w,
                                    const std::vector<T>& b, int cout, const pgcnet::ConvGeometry& g) {
    const int cin = x.channels();
    int o_ext[3];
    const int in_ext[3] = {x.depth(), x.height(), x.width()};
    for (int a = 0; a < 3; ++a)
        o_ext[a] = (in_ext[a] - 1) * g.stride[a] - 2 * g.padding[a] + g.kernel[a] + g.output_padding[a];
    std::vector<double> acc(static_cast<std::size_t>(cout) * o_ext[0] * o_ext[1] * o_ext[2], 0.0);
    auto at = [&](int o, int z, int r, int c) -> double& {
        return acc[((static_cast<std::size_t>(o) * o_ext[0] + z) * o_ext[1] + r) * o_ext[2] + c];
    };
    for (int i = 0; i < cin; ++i)
        for (int z = 0; z < x.depth(); ++z)
            for (int r = 0; r < x.height(); ++r)
                for (int c = 0; c < x.width(); ++c)
                    for (int o = 0; o < cout; ++o)
                        for (int kd = 0; kd < g.kernel[0]; ++kd)
                            for (int kh = 0; kh < g.kernel[1]; ++kh)
                                for (int kw = 0; kw < g.kernel[2]; ++kw) {
                                    const int zz = z * g.stride[0] - g.padding[0] + kd;
                                    const int rr = r * g.stride[1] - g.padding[1] + kh;
                                    const int cc = c * g.stride[2] - g.padding[2] + kw;
                                    if (zz < 0 || rr < 0 || cc < 0 || zz >= o_ext[0] ||
                                        rr >= o_ext[1] || cc >= o_ext[2])
                                        continue;
                                    const std::size_t wi =
                                        ((((static_cast<std::size_t>(i) * cout + o) * g.kernel[0] + kd) *
                                              g.kernel[1] + kh) * g.kernel[2] + kw);
                                    at(o, zz, rr, cc) += static_cast<double>(w[wi]) * x(i, z, r, c);
                                }
    pgcnet::Volume<T> y(cout, o_ext[0], o_ext[1], o_ext[2]);
    for (int o = 0; o < cout; ++o)
        for (int z = 0; z < o_ext[0]; ++z)
            for (int r = 0; r < o_ext[1]; ++r)
                for (int c = 0; c < o_ext[2]; ++c)
                    y(o, z, r, c) = static_cast<T>(at(o, z, r, c) + (b.empty() ? 0.0 : b[o]));
    return y;
}

template <typename T>
pgcnet::Volume<T> random_volume(int c, int d, int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    pgcnet::Volume<T> v(c, d, h, w);
    for (auto& x : v.values()) x = static_cast<T>(u(rng));
    return v;
}

// Softmax expectation of the level index under -cost, computed in long double.
inline double soft_argmin_pixel(const std::vector<double>& cost) {
    long double mx = -1e300L;
    for (double c : cost) mx = std::max<long double>(mx, -c);
    long double z = 0, e = 0;
    for (std::size_t k = 0; k < cost.size(); ++k) {
        const long double p = std::exp(-cost[k] - mx);
        z += p;
        e += p * k;
    }
    return static_cast<double>(e / z);
}

}  // namespace oracle
