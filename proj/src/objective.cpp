#include "pgcnet/objective.hpp"

#include <cmath>

namespace pgcnet {

Mask effective_mask(const Grid<float>& gt, const Mask& mask) {
    Mask out(gt.height(), gt.width(), 0);
    if (!mask.empty() && !mask.same_shape(gt)) throw ShapeError("mask and ground truth differ in size");
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool ok = std::isfinite(gt[i]) && (mask.empty() || mask[i] != 0);
        out[i] = ok ? 1 : 0;
    }
    return out;
}

template <typename T>
double regression_loss(const Grid<float>& gt, const Grid<T>& d_hat, const Grid<T>& s,
                       const Mask& mask, ResidualNorm norm, Grid<T>* grad_d_hat, Grid<T>* grad_s) {
    if (!gt.same_shape(d_hat) || !gt.same_shape(s)) {
        throw ShapeError("regression loss: ground truth, prediction and log-variance differ in size");
    }
    const Mask valid = effective_mask(gt, mask);
    std::size_t n = 0;
    for (std::size_t i = 0; i < valid.size(); ++i) n += valid[i];
    if (n == 0) throw DataError("no valid ground truth");

    if (grad_d_hat) *grad_d_hat = Grid<T>(gt.height(), gt.width(), T(0));
    if (grad_s) *grad_s = Grid<T>(gt.height(), gt.width(), T(0));
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!valid[i]) continue;
        const double r = static_cast<double>(d_hat[i]) - gt[i];
        const double si = s[i];
        const double w = std::exp(-si);
        const double penalty = norm == ResidualNorm::kL1 ? std::abs(r) : r * r;
        total += 0.5 * w * penalty + 0.5 * si;
        if (grad_d_hat) {
            const double dpen = norm == ResidualNorm::kL1 ? (r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)) : 2.0 * r;
            (*grad_d_hat)[i] = static_cast<T>(inv_n * 0.5 * w * dpen);
        }
        if (grad_s) (*grad_s)[i] = static_cast<T>(inv_n * (0.5 - 0.5 * w * penalty));
    }
    return total * inv_n;
}

template <typename T>
double kl_total(std::span<const GaussianPosterior<T>> posteriors, const PriorSpec& prior) {
    double total = 0.0;
    for (const auto& q : posteriors) total += kl_to_prior(q, prior);
    return total;
}

template <typename T>
double kl_total(const Network<T>& model) {
    return model.kl_total();
}

template <typename T>
LossBreakdown total_loss(const Grid<float>& gt, const Grid<T>& d_hat, const Grid<T>& s,
                         const Mask& mask, const Network<T>& model, double kl_weight,
                         ResidualNorm norm) {
    if (kl_weight < 0) throw ParameterError("kl_weight must be >= 0");
    LossBreakdown out;
    out.regression = regression_loss<T>(gt, d_hat, s, mask, norm);
    out.kl = kl_total(model);
    out.kl_weight = kl_weight;
    out.total = out.regression + kl_weight * out.kl;
    return out;
}

template <typename T>
LossBreakdown loss_and_gradients(Network<T>& model, const StereoSample& sample, SamplingMode mode,
                                 Rng& rng, double kl_weight, ResidualNorm norm,
                                 ForwardOutput<T>* forward_out) {
    if (!sample.has_ground_truth()) throw DataError("sample '" + sample.name + "' has no ground truth");
    if (kl_weight < 0) throw ParameterError("kl_weight must be >= 0");
    ForwardOutput<T> fwd = model.forward(sample, mode, rng);
    Grid<T> g_d, g_s;
    LossBreakdown out;
    out.regression = regression_loss<T>(sample.gt_disparity, fwd.disparity, fwd.log_variance,
                                        sample.valid_mask, norm, &g_d, &g_s);
    out.kl = model.kl_total();
    out.kl_weight = kl_weight;
    out.total = out.regression + kl_weight * out.kl;
    model.backward(g_d, g_s);
    model.accumulate_kl_grad(kl_weight);
    if (forward_out) *forward_out = std::move(fwd);
    return out;
}

#define PGCNET_INSTANTIATE(T)                                                                   \
    template double regression_loss<T>(const Grid<float>&, const Grid<T>&, const Grid<T>&,      \
                                       const Mask&, ResidualNorm, Grid<T>*, Grid<T>*);          \
    template double kl_total<T>(std::span<const GaussianPosterior<T>>, const PriorSpec&);       \
    template double kl_total<T>(const Network<T>&);                                             \
    template LossBreakdown total_loss<T>(const Grid<float>&, const Grid<T>&, const Grid<T>&,    \
                                         const Mask&, const Network<T>&, double, ResidualNorm); \
    template LossBreakdown loss_and_gradients<T>(Network<T>&, const StereoSample&, SamplingMode, \
                                                 Rng&, double, ResidualNorm, ForwardOutput<T>*);

PGCNET_INSTANTIATE(float)
PGCNET_INSTANTIATE(double)

#undef PGCNET_INSTANTIATE

}  // namespace pgcnet
