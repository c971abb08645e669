#include "pgcnet/variational.hpp"

#include <Eigen/Core>
#include <numeric>
#include <sstream>

#include "im2col.hpp"

namespace pgcnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

std::array<int, 3> extent_of(const std::array<int, 4>& shape) {
    return {shape[1], shape[2], shape[3]};
}

std::string extent_string(const std::array<int, 3>& e) {
    return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

std::string layer_label(const LayerConfig& cfg) {
    return "layer '" + (cfg.name.empty() ? std::string("<unnamed>") : cfg.name) + "'";
}

std::array<int, 3> checked_conv_output(const LayerConfig& cfg, int channels,
                                       const std::array<int, 3>& in) {
    if (channels != cfg.in_channels) {
        throw ShapeError(layer_label(cfg) + ": expected " + std::to_string(cfg.in_channels) +
                         " input channels, got " + std::to_string(channels));
    }
    const auto out = cfg.geometry.conv_output(in);
    for (int v : out) {
        if (v <= 0) {
            throw ShapeError(layer_label(cfg) + ": input extent " + extent_string(in) +
                             " too small for the kernel/stride/padding");
        }
    }
    return out;
}

template <typename T>
double glorot_limit(const LayerConfig& cfg) {
    const double k = cfg.geometry.kernel_volume();
    return std::sqrt(6.0 / (cfg.in_channels * k + cfg.out_channels * k));
}

// y = W * cols + b, W is out x K.
template <typename T>
void apply_gemm(const T* weights, const T* cols, std::span<const T> bias, int out_channels,
                std::size_t k, std::size_t p, T* y) {
    ConstMapMat<T> w(weights, out_channels, static_cast<Eigen::Index>(k));
    ConstMapMat<T> c(cols, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    MapMat<T> out(y, out_channels, static_cast<Eigen::Index>(p));
    out.noalias() = w * c;
    if (!bias.empty()) {
        for (int o = 0; o < out_channels; ++o) out.row(o).array() += bias[o];
    }
}

template <typename T>
Volume<T> conv_with_weights(const Volume<T>& input, const T* weights, std::span<const T> bias,
                            const LayerConfig& cfg, std::vector<T>* cols_out = nullptr) {
    const auto in = extent_of(input.shape());
    const auto out = checked_conv_output(cfg, input.channels(), in);
    const std::size_t k = static_cast<std::size_t>(cfg.in_channels) * cfg.geometry.kernel_volume();
    const std::size_t p = static_cast<std::size_t>(out[0]) * out[1] * out[2];
    std::vector<T> local;
    std::vector<T>& cols = cols_out ? *cols_out : local;
    cols.resize(k * p);
    detail::im2col(input.data(), input.channels(), in, cfg.geometry, out, cols.data());
    Volume<T> y(cfg.out_channels, out[0], out[1], out[2]);
    apply_gemm<T>(weights, cols.data(), bias, cfg.out_channels, k, p, y.data());
    return y;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

template <typename T>
GaussianPosterior<T>::GaussianPosterior(std::vector<int> shape_, std::vector<T> mean_,
                                        std::vector<T> raw_scale_)
    : shape(std::move(shape_)), mean(std::move(mean_)), raw_scale(std::move(raw_scale_)) {
    validate();
}

template <typename T>
void GaussianPosterior<T>::validate() const {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          [](std::size_t a, int b) { return a * b; });
    if (mean.size() != raw_scale.size() || mean.size() != n) {
        throw ShapeError("posterior mean/raw_scale sizes do not match the weight shape");
    }
}

ConvGeometry ConvGeometry::planar(int k, int stride, int pad) {
    ConvGeometry g;
    g.kernel = {1, k, k};
    g.stride = {1, stride, stride};
    g.padding = {0, pad, pad};
    return g;
}

ConvGeometry ConvGeometry::cubic(int k, int stride, int pad, int output_pad) {
    ConvGeometry g;
    g.kernel = {k, k, k};
    g.stride = {stride, stride, stride};
    g.padding = {pad, pad, pad};
    g.output_padding = {output_pad, output_pad, output_pad};
    return g;
}

std::array<int, 3> ConvGeometry::conv_output(const std::array<int, 3>& in) const {
    std::array<int, 3> out{};
    for (int i = 0; i < 3; ++i) {
        if (stride[i] < 1) throw ShapeError("stride must be >= 1");
        const int span = in[i] + 2 * padding[i] - kernel[i];
        out[i] = span < 0 ? 0 : span / stride[i] + 1;
    }
    return out;
}

std::array<int, 3> ConvGeometry::transposed_output(const std::array<int, 3>& in) const {
    std::array<int, 3> out{};
    for (int i = 0; i < 3; ++i) {
        if (stride[i] < 1) throw ShapeError("stride must be >= 1");
        out[i] = (in[i] - 1) * stride[i] - 2 * padding[i] + kernel[i] + output_padding[i];
    }
    return out;
}

std::vector<int> LayerConfig::weight_shape() const {
    return {out_channels, in_channels, geometry.kernel[0], geometry.kernel[1], geometry.kernel[2]};
}

std::size_t LayerConfig::weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * geometry.kernel_volume();
}

std::string serialize_rng(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng deserialize_rng(const std::string& state) {
    std::istringstream is(state);
    Rng rng;
    is >> rng;
    if (is.fail()) throw FormatError("invalid random stream state");
    return rng;
}

// ---------------------------------------------------------------------------------------------

template <typename T>
std::vector<T> sample_weights(const GaussianPosterior<T>& posterior, Rng& rng) {
    assert(posterior.mean.size() == posterior.raw_scale.size());
    std::vector<T> w(posterior.size());
    fill_standard_normal<T>(w, rng);
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = posterior.mean[i] + posterior.stddev(i) * w[i];
    }
    return w;
}

template <typename T>
double kl_to_prior(const GaussianPosterior<T>& posterior, const PriorSpec& prior) {
    const double var_p = prior.stddev * prior.stddev;
    const double log_sp = std::log(prior.stddev);
    double total = 0.0;
    for (std::size_t i = 0; i < posterior.size(); ++i) {
        const double sq = softplus(posterior.raw_scale[i]);
        const double dm = static_cast<double>(posterior.mean[i]) - prior.mean;
        total += log_sp - std::log(sq) + (sq * sq + dm * dm) / (2.0 * var_p) - 0.5;
    }
    return total;
}

template <typename T>
void accumulate_kl_gradient(const GaussianPosterior<T>& posterior, const PriorSpec& prior,
                            double scale, std::span<T> d_mean, std::span<T> d_raw_scale) {
    assert(d_mean.size() == posterior.size() && d_raw_scale.size() == posterior.size());
    const double var_p = prior.stddev * prior.stddev;
    for (std::size_t i = 0; i < posterior.size(); ++i) {
        const double rho = posterior.raw_scale[i];
        const double sq = softplus(rho);
        d_mean[i] += static_cast<T>(scale * (posterior.mean[i] - prior.mean) / var_p);
        // d/dsq [-log sq + sq^2 / (2 var_p)] * dsq/drho
        d_raw_scale[i] += static_cast<T>(scale * (-1.0 / sq + sq / var_p) * sigmoid(rho));
    }
}

template <typename T>
GaussianPosterior<T> glorot_posterior(const LayerConfig& cfg, Rng& rng, double initial_stddev) {
    const double limit = glorot_limit<T>(cfg);
    std::uniform_real_distribution<double> u(-limit, limit);
    const std::size_t n = cfg.weight_count();
    std::vector<T> mean(n), raw(n, static_cast<T>(inverse_softplus(initial_stddev)));
    for (auto& m : mean) m = static_cast<T>(u(rng));
    return GaussianPosterior<T>(cfg.weight_shape(), std::move(mean), std::move(raw));
}

// ---------------------------------------------------------------------------------------------

template <typename T>
Volume<T> conv_forward(const Volume<T>& input, std::span<const T> weights, std::span<const T> bias,
                       const LayerConfig& cfg) {
    if (weights.size() != cfg.weight_count()) {
        throw ShapeError(layer_label(cfg) + ": weight count mismatch");
    }
    return conv_with_weights(input, weights.data(), bias, cfg);
}

template <typename T>
std::vector<Volume<T>> conv_variational(std::span<const Volume<T>> batch,
                                        const GaussianPosterior<T>& posterior,
                                        std::span<const T> bias, const LayerConfig& cfg, Rng& rng) {
    posterior.validate();
    if (posterior.size() != cfg.weight_count()) {
        throw ShapeError(layer_label(cfg) + ": posterior size does not match layer config");
    }
    std::vector<Volume<T>> out;
    out.reserve(batch.size());
    if (cfg.sampling == SamplingMode::kMeanOnly) {
        for (const auto& x : batch) out.push_back(conv_with_weights(x, posterior.mean.data(), bias, cfg));
        return out;
    }
    if (cfg.perturbation == Perturbation::kNaiveReparam) {
        const auto w = sample_weights(posterior, rng);
        for (const auto& x : batch) out.push_back(conv_with_weights(x, w.data(), bias, cfg));
        return out;
    }
    // Flipout: one shared perturbation base sigma * eps, independent sign flips per example.
    std::vector<T> delta(posterior.size());
    fill_standard_normal<T>(delta, rng);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= posterior.stddev(i);
    const std::size_t per_out = delta.size() / cfg.out_channels;
    const std::size_t per_in = per_out / cfg.in_channels;
    std::vector<T> s_in(cfg.in_channels), s_out(cfg.out_channels), w(delta.size());
    for (const auto& x : batch) {
        fill_rademacher<T>(s_in, rng);
        fill_rademacher<T>(s_out, rng);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const std::size_t o = i / per_out;
            const std::size_t c = (i % per_out) / per_in;
            w[i] = posterior.mean[i] + s_out[o] * s_in[c] * delta[i];
        }
        out.push_back(conv_with_weights(x, w.data(), bias, cfg));
    }
    return out;
}

template <typename T>
Volume<T> conv_variational(const Volume<T>& input, const GaussianPosterior<T>& posterior,
                           std::span<const T> bias, const LayerConfig& cfg, Rng& rng) {
    auto out = conv_variational<T>(std::span<const Volume<T>>(&input, 1), posterior, bias, cfg, rng);
    return std::move(out.front());
}

template <typename T>
Volume<T> conv_transposed_deterministic(const Volume<T>& input, std::span<const T> weights,
                                        std::span<const T> bias, const LayerConfig& cfg) {
    if (input.channels() != cfg.in_channels) {
        throw ShapeError(layer_label(cfg) + ": expected " + std::to_string(cfg.in_channels) +
                         " input channels, got " + std::to_string(input.channels()));
    }
    if (weights.size() != cfg.weight_count()) {
        throw ShapeError(layer_label(cfg) + ": weight count mismatch");
    }
    const auto in = extent_of(input.shape());
    const auto out = cfg.geometry.transposed_output(in);
    for (int i = 0; i < 3; ++i) {
        if (out[i] <= 0 || cfg.geometry.output_padding[i] >= cfg.geometry.stride[i]) {
            throw ShapeError(layer_label(cfg) + ": invalid transposed geometry for input " +
                             extent_string(in));
        }
    }
    const std::size_t k = static_cast<std::size_t>(cfg.out_channels) * cfg.geometry.kernel_volume();
    const std::size_t p = input.spatial_size();
    ConstMapMat<T> w(weights.data(), cfg.in_channels, static_cast<Eigen::Index>(k));
    ConstMapMat<T> x(input.data(), cfg.in_channels, static_cast<Eigen::Index>(p));
    RowMat<T> cols = w.transpose() * x;
    Volume<T> y(cfg.out_channels, out[0], out[1], out[2]);
    detail::col2im(cols.data(), cfg.out_channels, out, cfg.geometry, in, y.data());
    if (!bias.empty()) {
        for (int o = 0; o < cfg.out_channels; ++o) {
            T* ch = y.channel(o);
            for (std::size_t i = 0; i < y.spatial_size(); ++i) ch[i] += bias[o];
        }
    }
    return y;
}

// ---------------------------------------------------------------------------------------------

template <typename T>
VariationalConv<T>::VariationalConv(LayerConfig cfg, Rng& init_rng, double initial_stddev)
    : cfg_(std::move(cfg)),
      posterior_(glorot_posterior<T>(cfg_, init_rng, initial_stddev)),
      bias_(cfg_.out_channels, T(0)) {
    zero_grad();
}

template <typename T>
Volume<T> VariationalConv<T>::forward(const Volume<T>& input, SamplingMode mode, Rng& rng) {
    const std::size_t n = posterior_.size();
    weights_.resize(n);
    if (mode == SamplingMode::kMeanOnly) {
        eps_.clear();
        std::copy(posterior_.mean.begin(), posterior_.mean.end(), weights_.begin());
    } else {
        eps_.resize(n);
        fill_standard_normal<T>(eps_, rng);
        if (cfg_.perturbation == Perturbation::kFlipout) {
            sign_in_.resize(cfg_.in_channels);
            sign_out_.resize(cfg_.out_channels);
            fill_rademacher<T>(sign_in_, rng);
            fill_rademacher<T>(sign_out_, rng);
            const std::size_t per_out = n / cfg_.out_channels;
            const std::size_t per_in = per_out / cfg_.in_channels;
            for (std::size_t i = 0; i < n; ++i) {
                const T flip = sign_out_[i / per_out] * sign_in_[(i % per_out) / per_in];
                eps_[i] *= flip;  // store the effective noise so backward needs no signs
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            weights_[i] = posterior_.mean[i] + posterior_.stddev(i) * eps_[i];
        }
    }
    in_extent_ = extent_of(input.shape());
    Volume<T> y = conv_with_weights<T>(input, weights_.data(), bias_, cfg_, &cols_);
    out_extent_ = extent_of(y.shape());
    return y;
}

template <typename T>
Volume<T> VariationalConv<T>::backward(const Volume<T>& grad_output) {
    const std::size_t k = static_cast<std::size_t>(cfg_.in_channels) * cfg_.geometry.kernel_volume();
    const std::size_t p = grad_output.spatial_size();
    assert(grad_output.channels() == cfg_.out_channels && cols_.size() == k * p);
    ConstMapMat<T> dy(grad_output.data(), cfg_.out_channels, static_cast<Eigen::Index>(p));
    ConstMapMat<T> cols(cols_.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    ConstMapMat<T> w(weights_.data(), cfg_.out_channels, static_cast<Eigen::Index>(k));

    RowMat<T> dw = dy * cols.transpose();
    const T* dwp = dw.data();
    for (std::size_t i = 0; i < grad_mean_.size(); ++i) grad_mean_[i] += dwp[i];
    if (!eps_.empty()) {
        for (std::size_t i = 0; i < grad_raw_.size(); ++i) {
            grad_raw_[i] += dwp[i] * eps_[i] * static_cast<T>(sigmoid(posterior_.raw_scale[i]));
        }
    }
    // Sequential sums: Eigen's vectorized reductions depend on buffer alignment.
    for (int o = 0; o < cfg_.out_channels; ++o) {
        const T* ch = grad_output.channel(o);
        double sum = 0.0;
        for (std::size_t i = 0; i < p; ++i) sum += ch[i];
        grad_bias_[o] += static_cast<T>(sum);
    }

    RowMat<T> dcols = w.transpose() * dy;
    Volume<T> dx(cfg_.in_channels, in_extent_[0], in_extent_[1], in_extent_[2]);
    detail::col2im(dcols.data(), cfg_.in_channels, in_extent_, cfg_.geometry, out_extent_, dx.data());
    return dx;
}

template <typename T>
void VariationalConv<T>::zero_grad() {
    grad_mean_.assign(posterior_.size(), T(0));
    grad_raw_.assign(posterior_.size(), T(0));
    grad_bias_.assign(bias_.size(), T(0));
}

template <typename T>
void VariationalConv<T>::accumulate_kl_grad(const PriorSpec& prior, double scale) {
    accumulate_kl_gradient<T>(posterior_, prior, scale, grad_mean_, grad_raw_);
}

template <typename T>
void VariationalConv<T>::append_params(std::vector<ParamRef<T>>& out) {
    out.push_back({cfg_.name + ".mean", posterior_.mean, grad_mean_, posterior_.shape, false});
    out.push_back({cfg_.name + ".raw_scale", posterior_.raw_scale, grad_raw_, posterior_.shape, true});
    out.push_back({cfg_.name + ".bias", bias_, grad_bias_, {cfg_.out_channels}, false});
}

// ---------------------------------------------------------------------------------------------

template <typename T>
TransposedConv<T>::TransposedConv(LayerConfig cfg, Rng& init_rng)
    : cfg_(std::move(cfg)), weights_(cfg_.weight_count()), bias_(cfg_.out_channels, T(0)) {
    const double limit = glorot_limit<T>(cfg_);
    std::uniform_real_distribution<double> u(-limit, limit);
    for (auto& w : weights_) w = static_cast<T>(u(init_rng));
    zero_grad();
}

template <typename T>
Volume<T> TransposedConv<T>::forward(const Volume<T>& input) {
    input_ = input;
    return conv_transposed_deterministic<T>(input, weights_, bias_, cfg_);
}

template <typename T>
Volume<T> TransposedConv<T>::backward(const Volume<T>& grad_output) {
    const auto in = extent_of(input_.shape());
    const auto out = extent_of(grad_output.shape());
    const std::size_t k = static_cast<std::size_t>(cfg_.out_channels) * cfg_.geometry.kernel_volume();
    const std::size_t p = input_.spatial_size();
    // The transposed layer's adjoint is an ordinary convolution of the output gradient.
    std::vector<T> dcols(k * p);
    detail::im2col(grad_output.data(), cfg_.out_channels, out, cfg_.geometry, in, dcols.data());
    ConstMapMat<T> dc(dcols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    ConstMapMat<T> w(weights_.data(), cfg_.in_channels, static_cast<Eigen::Index>(k));
    ConstMapMat<T> x(input_.data(), cfg_.in_channels, static_cast<Eigen::Index>(p));

    MapMat<T> dw(grad_weights_.data(), cfg_.in_channels, static_cast<Eigen::Index>(k));
    dw.noalias() += x * dc.transpose();
    for (int o = 0; o < cfg_.out_channels; ++o) {
        const T* ch = grad_output.channel(o);
        double s = 0.0;
        for (std::size_t i = 0; i < grad_output.spatial_size(); ++i) s += ch[i];
        grad_bias_[o] += static_cast<T>(s);
    }
    Volume<T> dx(cfg_.in_channels, in[0], in[1], in[2]);
    MapMat<T> dxm(dx.data(), cfg_.in_channels, static_cast<Eigen::Index>(p));
    dxm.noalias() = w * dc;
    return dx;
}

template <typename T>
void TransposedConv<T>::zero_grad() {
    grad_weights_.assign(weights_.size(), T(0));
    grad_bias_.assign(bias_.size(), T(0));
}

template <typename T>
void TransposedConv<T>::append_params(std::vector<ParamRef<T>>& out) {
    std::vector<int> shape{cfg_.in_channels, cfg_.out_channels, cfg_.geometry.kernel[0],
                           cfg_.geometry.kernel[1], cfg_.geometry.kernel[2]};
    out.push_back({cfg_.name + ".weight", weights_, grad_weights_, shape, false});
    out.push_back({cfg_.name + ".bias", bias_, grad_bias_, {cfg_.out_channels}, false});
}

// ---------------------------------------------------------------------------------------------

#define PGCNET_INSTANTIATE(T)                                                                      \
    template struct GaussianPosterior<T>;                                                          \
    template std::vector<T> sample_weights<T>(const GaussianPosterior<T>&, Rng&);                  \
    template double kl_to_prior<T>(const GaussianPosterior<T>&, const PriorSpec&);                 \
    template void accumulate_kl_gradient<T>(const GaussianPosterior<T>&, const PriorSpec&, double, \
                                            std::span<T>, std::span<T>);                           \
    template GaussianPosterior<T> glorot_posterior<T>(const LayerConfig&, Rng&, double);           \
    template Volume<T> conv_forward<T>(const Volume<T>&, std::span<const T>, std::span<const T>,   \
                                       const LayerConfig&);                                        \
    template std::vector<Volume<T>> conv_variational<T>(std::span<const Volume<T>>,                \
                                                        const GaussianPosterior<T>&,               \
                                                        std::span<const T>, const LayerConfig&,    \
                                                        Rng&);                                     \
    template Volume<T> conv_variational<T>(const Volume<T>&, const GaussianPosterior<T>&,          \
                                           std::span<const T>, const LayerConfig&, Rng&);          \
    template Volume<T> conv_transposed_deterministic<T>(const Volume<T>&, std::span<const T>,      \
                                                        std::span<const T>, const LayerConfig&);   \
    template class VariationalConv<T>;                                                             \
    template class TransposedConv<T>;

PGCNET_INSTANTIATE(float)
PGCNET_INSTANTIATE(double)

#undef PGCNET_INSTANTIATE

}  // namespace pgcnet
