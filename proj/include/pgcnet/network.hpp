#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pgcnet/random.hpp"
#include "pgcnet/tensor.hpp"
#include "pgcnet/variational.hpp"

namespace pgcnet {

/// Epipolar-rectified pair. Images are C x 1 x H x W in raw intensity units; the network
/// standardizes each image internally. Missing ground truth is an empty grid.
struct StereoSample {
    Volume<float> left;
    Volume<float> right;
    Grid<float> gt_disparity;
    Mask valid_mask;
    std::string name;

    int height() const { return left.height(); }
    int width() const { return left.width(); }
    bool has_ground_truth() const { return !gt_disparity.empty(); }
    /// Throws ShapeError when left/right/gt/mask disagree.
    void validate() const;
};

/// exp(-7) ~ 1e-3 px: finer aleatoric scales carry no information and let the loss blow up.
inline constexpr double kDefaultLogVarianceFloor = -7.0;

struct NetworkConfig {
    int in_channels = 1;
    int max_disparity = 32;
    int feature_stride = 2;
    int feature_channels = 16;
    int residual_blocks = 4;
    int volume_channels = 16;
    int encoder_depth = 2;
    /// false: every convolution is a point estimate (no raw scales, zero KL).
    bool probabilistic = true;
    Perturbation perturbation = Perturbation::kNaiveReparam;
    double initial_stddev = kInitialPosteriorStddev;
    PriorSpec prior;
    /// Lower clamp on the per-pixel log variance s (no gradient below it). nullopt: unclamped.
    std::optional<double> log_variance_floor = kDefaultLogVarianceFloor;

    int disparity_levels() const { return max_disparity / feature_stride; }
    /// Image height and width must be multiples of this.
    int size_multiple() const { return feature_stride << encoder_depth; }
    void validate() const;

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename T>
struct DualVolume {
    Volume<T> cost;          // 1 x D x H x W
    Volume<T> log_variance;  // 1 x D x H x W
};

template <typename T>
struct ForwardOutput {
    Grid<T> disparity;
    Grid<T> log_variance;  // s = mean log-variance along the disparity axis
};

/// Per-pixel zero mean, unit variance over all pixels and channels of one image.
template <typename T>
Volume<T> standardize_image(const Volume<float>& image);

/// Concatenation cost volume: channel block [0, C) holds left features, [C, 2C) holds right
/// features shifted by d; shifted-out positions are zero. Output 2C x levels x H x W.
template <typename T>
Volume<T> build_cost_volume(const Volume<T>& left_features, const Volume<T>& right_features,
                            int levels);

/// d_hat = sum_d d * softmax(-cost)_d, per pixel. `cost` is 1 x D x H x W.
template <typename T>
Grid<T> soft_argmin(const Volume<T>& cost);

template <typename T>
Volume<T> soft_argmin_backward(const Volume<T>& cost, const Grid<T>& grad_disparity);

/// Mean of the log-variance volume along the disparity axis.
template <typename T>
Grid<T> aleatoric_map(const Volume<T>& log_variance);

/// Probabilistic GC-Net: shared 2D variational feature tower, concatenation cost volume,
/// 3D variational encoder with deterministic transposed-convolution decoder, and a two-channel
/// head split into cost and log-variance volumes.
///
/// Forward caches activations for a single subsequent backward call.
template <typename T>
class Network {
public:
    Network(const NetworkConfig& cfg, std::uint64_t init_seed);

    const NetworkConfig& config() const { return cfg_; }

    /// Feature map of a standardized C x 1 x H x W image (1/feature_stride resolution).
    Volume<T> extract_features(const Volume<T>& image, SamplingMode mode, Rng& rng);
    /// Features of a stacked left/right pair (depth axis 0 = left, 1 = right).
    Volume<T> extract_pair_features(const Volume<T>& stacked, SamplingMode mode, Rng& rng);
    DualVolume<T> regularize_volume(const Volume<T>& cost_volume, SamplingMode mode, Rng& rng);

    /// One weight draw for all variational layers (stochastic) or the posterior mean (mean_only).
    ForwardOutput<T> forward(const StereoSample& sample, SamplingMode mode, Rng& rng);
    /// Backpropagates d(loss)/d(disparity) and d(loss)/d(s) through the last forward.
    void backward(const Grid<T>& grad_disparity, const Grid<T>& grad_log_variance);

    void zero_grad();
    std::vector<ParamRef<T>> parameters();
    std::size_t parameter_count();

    std::vector<VariationalConv<T>*> variational_layers();
    std::vector<TransposedConv<T>*> transposed_layers();
    /// Sum of closed-form KL over every variational layer (0 for a deterministic network).
    double kl_total() const;
    void accumulate_kl_grad(double scale);

    /// Sets every posterior raw scale to inverse_softplus(stddev).
    void set_posterior_stddev(double stddev);

    /// Copies all parameter values from a network of another precision with the same config.
    template <typename U>
    void copy_parameters_from(Network<U>& other) {
        auto dst = parameters();
        auto src = other.parameters();
        if (dst.size() != src.size()) throw ShapeError("parameter layout mismatch");
        for (std::size_t i = 0; i < dst.size(); ++i) {
            if (dst[i].value.size() != src[i].value.size()) throw ShapeError("parameter size mismatch");
            for (std::size_t j = 0; j < dst[i].value.size(); ++j)
                dst[i].value[j] = static_cast<T>(src[i].value[j]);
        }
    }

private:
    void check_image_dims(int h, int w) const;
    int level_channels(int level) const;

    struct ResBlock {
        VariationalConv<T> first;
        VariationalConv<T> second;
    };

    NetworkConfig cfg_;
    VariationalConv<T> stem_;
    std::vector<ResBlock> blocks_;
    VariationalConv<T> feature_out_;
    VariationalConv<T> volume_in_a_, volume_in_b_;
    std::vector<VariationalConv<T>> down_;      // per encoder level, strided
    std::vector<VariationalConv<T>> down_conv_; // per encoder level
    std::vector<TransposedConv<T>> up_;         // per encoder level, mirrored
    TransposedConv<T> head_;

    // forward cache
    std::vector<Volume<T>> feature_relu_;  // outputs of ReLUs in the feature tower
    std::vector<Volume<T>> volume_relu_;   // outputs of ReLUs in the volume network
    std::vector<Volume<T>> up_relu_;
    int feature_channels_cached_ = 0;
    Volume<T> head_cost_;
    Mask floor_active_;
    int cached_levels_ = 0;
};

}  // namespace pgcnet
