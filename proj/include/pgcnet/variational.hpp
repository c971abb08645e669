#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pgcnet/random.hpp"
#include "pgcnet/tensor.hpp"

namespace pgcnet {

enum class SamplingMode { kStochastic, kMeanOnly };
enum class Perturbation { kNaiveReparam, kFlipout };

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double inverse_softplus(double y) { return y > 30 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Initial posterior stddev of freshly constructed variational layers.
inline constexpr double kInitialPosteriorStddev = 1e-3;

/// Factorized Gaussian weight posterior: stddev = softplus(raw_scale).
template <typename T>
struct GaussianPosterior {
    std::vector<int> shape;
    std::vector<T> mean;
    std::vector<T> raw_scale;

    GaussianPosterior() = default;
    GaussianPosterior(std::vector<int> shape_, std::vector<T> mean_, std::vector<T> raw_scale_);

    std::size_t size() const { return mean.size(); }
    T stddev(std::size_t i) const { return static_cast<T>(softplus(raw_scale[i])); }
    /// Asserts shape consistency; throws ShapeError on mismatch.
    void validate() const;
};

struct PriorSpec {
    double mean = 0.0;
    double stddev = 1.0;
    friend bool operator==(const PriorSpec&, const PriorSpec&) = default;
};

/// Spatial geometry of a convolution over (depth, height, width). 2D layers use depth extent 1.
struct ConvGeometry {
    std::array<int, 3> kernel{1, 1, 1};
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};
    /// Transposed convolutions only: extra rows appended at the high end of each axis.
    std::array<int, 3> output_padding{0, 0, 0};

    static ConvGeometry planar(int k, int stride = 1, int pad = 0);
    static ConvGeometry cubic(int k, int stride = 1, int pad = 0, int output_pad = 0);

    int kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
    std::array<int, 3> conv_output(const std::array<int, 3>& in) const;
    std::array<int, 3> transposed_output(const std::array<int, 3>& in) const;
};

struct LayerConfig {
    std::string name;
    int in_channels = 1;
    int out_channels = 1;
    ConvGeometry geometry;
    SamplingMode sampling = SamplingMode::kStochastic;
    Perturbation perturbation = Perturbation::kNaiveReparam;

    std::vector<int> weight_shape() const;  // {out, in, kd, kh, kw}
    std::size_t weight_count() const;
};

// ---------------------------------------------------------------------------------------------
// Posterior operations

/// mean + softplus(raw_scale) * eps, eps ~ N(0, 1) i.i.d.
template <typename T>
std::vector<T> sample_weights(const GaussianPosterior<T>& posterior, Rng& rng);

/// Closed-form KL(q || prior) summed over every weight.
template <typename T>
double kl_to_prior(const GaussianPosterior<T>& posterior, const PriorSpec& prior);

/// Accumulates scale * dKL/dmean and scale * dKL/draw_scale into the given gradient buffers.
template <typename T>
void accumulate_kl_gradient(const GaussianPosterior<T>& posterior, const PriorSpec& prior,
                            double scale, std::span<T> d_mean, std::span<T> d_raw_scale);

/// Glorot-uniform means, raw_scale set so every stddev equals `initial_stddev`.
template <typename T>
GaussianPosterior<T> glorot_posterior(const LayerConfig& cfg, Rng& rng,
                                      double initial_stddev = kInitialPosteriorStddev);

// ---------------------------------------------------------------------------------------------
// Convolution primitives. Weight layout is row-major {out, in, kd, kh, kw} for convolutions and
// {in, out, kd, kh, kw} for transposed convolutions.

template <typename T>
Volume<T> conv_forward(const Volume<T>& input, std::span<const T> weights, std::span<const T> bias,
                       const LayerConfig& cfg);

/// Convolution with weights drawn from `posterior` per cfg.sampling / cfg.perturbation. The whole
/// batch shares one naive draw; flipout shares the perturbation base and flips signs per example.
template <typename T>
std::vector<Volume<T>> conv_variational(std::span<const Volume<T>> batch,
                                        const GaussianPosterior<T>& posterior,
                                        std::span<const T> bias, const LayerConfig& cfg, Rng& rng);

template <typename T>
Volume<T> conv_variational(const Volume<T>& input, const GaussianPosterior<T>& posterior,
                           std::span<const T> bias, const LayerConfig& cfg, Rng& rng);

template <typename T>
Volume<T> conv_transposed_deterministic(const Volume<T>& input, std::span<const T> weights,
                                        std::span<const T> bias, const LayerConfig& cfg);

// ---------------------------------------------------------------------------------------------
// Trainable layers with cached activations for backpropagation.

/// Named view onto one trainable parameter array and its gradient.
template <typename T>
struct ParamRef {
    std::string name;
    std::span<T> value;
    std::span<T> grad;
    std::vector<int> shape;
    bool is_raw_scale = false;
};

template <typename T>
class VariationalConv {
public:
    VariationalConv() = default;
    VariationalConv(LayerConfig cfg, Rng& init_rng,
                    double initial_stddev = kInitialPosteriorStddev);

    const LayerConfig& config() const { return cfg_; }
    LayerConfig& config() { return cfg_; }
    GaussianPosterior<T>& posterior() { return posterior_; }
    const GaussianPosterior<T>& posterior() const { return posterior_; }
    std::vector<T>& bias() { return bias_; }
    const std::vector<T>& bias() const { return bias_; }

    /// Draws a weight set (stochastic) or uses the mean (mean_only), caches what backward needs.
    Volume<T> forward(const Volume<T>& input, SamplingMode mode, Rng& rng);
    /// Returns d(loss)/d(input) and accumulates parameter gradients.
    Volume<T> backward(const Volume<T>& grad_output);

    void zero_grad();
    double kl(const PriorSpec& prior) const { return kl_to_prior(posterior_, prior); }
    void accumulate_kl_grad(const PriorSpec& prior, double scale);
    void append_params(std::vector<ParamRef<T>>& out);

private:
    LayerConfig cfg_;
    GaussianPosterior<T> posterior_;
    std::vector<T> bias_;
    std::vector<T> grad_mean_, grad_raw_, grad_bias_;

    // forward cache
    std::array<int, 3> in_extent_{};
    std::array<int, 3> out_extent_{};
    std::vector<T> cols_;
    std::vector<T> weights_;  // effective weights used in the last forward
    std::vector<T> eps_;      // empty when the last pass was mean_only
    std::vector<T> sign_in_, sign_out_;
};

template <typename T>
class TransposedConv {
public:
    TransposedConv() = default;
    /// Glorot-uniform weights, zero bias.
    TransposedConv(LayerConfig cfg, Rng& init_rng);

    const LayerConfig& config() const { return cfg_; }
    std::vector<T>& weights() { return weights_; }
    const std::vector<T>& weights() const { return weights_; }
    std::vector<T>& bias() { return bias_; }
    const std::vector<T>& bias() const { return bias_; }

    Volume<T> forward(const Volume<T>& input);
    Volume<T> backward(const Volume<T>& grad_output);

    void zero_grad();
    void append_params(std::vector<ParamRef<T>>& out);

private:
    LayerConfig cfg_;
    std::vector<T> weights_, bias_;
    std::vector<T> grad_weights_, grad_bias_;
    Volume<T> input_;
};

}  // namespace pgcnet
