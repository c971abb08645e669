#include "pgcnet/inference.hpp"

#include <cmath>

namespace pgcnet {

template <typename T>
UncertainDisparity aggregate_passes(std::span<const Grid<T>> disparities,
                                    std::span<const Grid<T>> log_variances) {
    if (disparities.empty()) throw ParameterError("at least one pass is required");
    if (disparities.size() != log_variances.size()) {
        throw ShapeError("disparity and log-variance pass counts differ");
    }
    const int h = disparities.front().height(), w = disparities.front().width();
    for (std::size_t t = 0; t < disparities.size(); ++t) {
        if (disparities[t].height() != h || disparities[t].width() != w ||
            log_variances[t].height() != h || log_variances[t].width() != w) {
            throw ShapeError("pass maps differ in size");
        }
    }
    const double inv_t = 1.0 / static_cast<double>(disparities.size());
    UncertainDisparity u;
    u.samples = static_cast<int>(disparities.size());
    u.mean_disparity = Grid<double>(h, w, 0.0);
    u.epistemic_var = Grid<double>(h, w, 0.0);
    u.aleatoric_var = Grid<double>(h, w, 0.0);
    u.combined_var = Grid<double>(h, w, 0.0);
    for (std::size_t i = 0; i < u.mean_disparity.size(); ++i) {
        double sum = 0.0, ale = 0.0;
        for (std::size_t t = 0; t < disparities.size(); ++t) {
            sum += static_cast<double>(disparities[t][i]);
            ale += std::exp(static_cast<double>(log_variances[t][i]));
        }
        const double mean = sum * inv_t;
        double var = 0.0;
        for (std::size_t t = 0; t < disparities.size(); ++t) {
            const double dv = static_cast<double>(disparities[t][i]) - mean;
            var += dv * dv;
        }
        u.mean_disparity[i] = mean;
        u.epistemic_var[i] = var * inv_t;
        u.aleatoric_var[i] = ale * inv_t;
        u.combined_var[i] = u.epistemic_var[i] + u.aleatoric_var[i];
    }
    return u;
}

template <typename T>
UncertainDisparity mc_predict(Network<T>& model, const StereoSample& sample, int passes,
                              std::uint64_t master_seed, SamplingMode mode) {
    if (passes < 1) throw ParameterError("number of passes T must be >= 1");
    std::vector<Grid<T>> disp, logvar;
    disp.reserve(passes);
    logvar.reserve(passes);
    for (int t = 0; t < passes; ++t) {
        Rng rng = derive_stream(master_seed, static_cast<std::uint64_t>(t));
        ForwardOutput<T> out = model.forward(sample, mode, rng);
        disp.push_back(std::move(out.disparity));
        logvar.push_back(std::move(out.log_variance));
    }
    return aggregate_passes<T>(disp, logvar);
}

UncertaintyStddev uncertainty_stddev_maps(const UncertainDisparity& u) {
    auto root = [](const Grid<double>& g) {
        Grid<double> out(g.height(), g.width());
        for (std::size_t i = 0; i < g.size(); ++i) out[i] = std::sqrt(std::max(0.0, g[i]));
        return out;
    };
    return {root(u.aleatoric_var), root(u.epistemic_var), root(u.combined_var)};
}

template <typename T>
std::vector<ConvergenceRow> convergence_analysis(Network<T>& model,
                                                 std::span<const StereoSample> samples,
                                                 std::span<const int> pass_counts, int repeats,
                                                 std::uint64_t master_seed) {
    if (pass_counts.empty()) throw ParameterError("convergence analysis needs at least one T value");
    if (repeats < 2) throw ParameterError("convergence analysis needs repeats >= 2");
    if (samples.empty()) throw ParameterError("convergence analysis needs at least one sample");
    std::vector<ConvergenceRow> rows;
    std::uint64_t stream = 0;
    for (int passes : pass_counts) {
        double acc = 0.0;
        std::size_t pixels = 0;
        for (const auto& sample : samples) {
            std::vector<Grid<double>> means;
            for (int r = 0; r < repeats; ++r) {
                means.push_back(
                    mc_predict(model, sample, passes, derive_seed(master_seed, stream++)).mean_disparity);
            }
            for (std::size_t i = 0; i < means.front().size(); ++i) {
                double m = 0.0;
                for (const auto& g : means) m += g[i];
                m /= repeats;
                double v = 0.0;
                for (const auto& g : means) v += (g[i] - m) * (g[i] - m);
                acc += std::sqrt(v / (repeats - 1));
                ++pixels;
            }
        }
        ConvergenceRow row;
        row.passes = passes;
        row.mean_stddev = acc / static_cast<double>(pixels);
        row.standard_error = row.mean_stddev / std::sqrt(2.0 * (repeats - 1));
        rows.push_back(row);
    }
    return rows;
}

#define PGCNET_INSTANTIATE(T)                                                                   \
    template UncertainDisparity aggregate_passes<T>(std::span<const Grid<T>>,                   \
                                                    std::span<const Grid<T>>);                  \
    template UncertainDisparity mc_predict<T>(Network<T>&, const StereoSample&, int,            \
                                              std::uint64_t, SamplingMode);                     \
    template std::vector<ConvergenceRow> convergence_analysis<T>(                               \
        Network<T>&, std::span<const StereoSample>, std::span<const int>, int, std::uint64_t);

PGCNET_INSTANTIATE(float)
PGCNET_INSTANTIATE(double)

#undef PGCNET_INSTANTIATE

}  // namespace pgcnet
