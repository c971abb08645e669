#pragma once

#include <span>

#include "pgcnet/network.hpp"

namespace pgcnet {

/// Residual norm inside the heteroscedastic term: |r| (default) or r^2.
enum class ResidualNorm { kL1, kL2 };

struct LossBreakdown {
    double regression = 0.0;
    double kl = 0.0;
    double kl_weight = 0.0;
    double total = 0.0;
};

/// Pixels counted by the loss: mask (when non-empty) AND finite ground truth.
Mask effective_mask(const Grid<float>& gt, const Mask& mask);

/// (1/N) sum_i [ 0.5 exp(-s_i) ||d_i - d_hat_i|| + 0.5 s_i ] over valid pixels.
/// Optionally writes d(loss)/d(d_hat) and d(loss)/d(s). Throws DataError when N == 0.
template <typename T>
double regression_loss(const Grid<float>& gt, const Grid<T>& d_hat, const Grid<T>& s,
                       const Mask& mask, ResidualNorm norm = ResidualNorm::kL1,
                       Grid<T>* grad_d_hat = nullptr, Grid<T>* grad_s = nullptr);

template <typename T>
double kl_total(std::span<const GaussianPosterior<T>> posteriors, const PriorSpec& prior);

template <typename T>
double kl_total(const Network<T>& model);

template <typename T>
LossBreakdown total_loss(const Grid<float>& gt, const Grid<T>& d_hat, const Grid<T>& s,
                         const Mask& mask, const Network<T>& model, double kl_weight,
                         ResidualNorm norm = ResidualNorm::kL1);

/// Forward pass, loss, and full backward (regression + kl_weight * KL) accumulated into the
/// model's gradient buffers. Gradients are NOT zeroed first.
template <typename T>
LossBreakdown loss_and_gradients(Network<T>& model, const StereoSample& sample, SamplingMode mode,
                                 Rng& rng, double kl_weight, ResidualNorm norm = ResidualNorm::kL1,
                                 ForwardOutput<T>* forward_out = nullptr);

}  // namespace pgcnet
