#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pgcnet/network.hpp"

namespace pgcnet {

/// Monte-Carlo prediction summary, all maps in double precision.
struct UncertainDisparity {
    Grid<double> mean_disparity;  // px
    Grid<double> epistemic_var;   // px^2
    Grid<double> aleatoric_var;   // px^2
    Grid<double> combined_var;    // px^2, epistemic + aleatoric
    int samples = 0;
};

struct UncertaintyStddev {
    Grid<double> aleatoric;  // px
    Grid<double> epistemic;
    Grid<double> combined;
};

/// Aggregates T stored passes: mean disparity, 1/T variance of the passes (epistemic), mean of
/// exp(s) (aleatoric), and their sum.
template <typename T>
UncertainDisparity aggregate_passes(std::span<const Grid<T>> disparities,
                                    std::span<const Grid<T>> log_variances);

/// Runs `passes` forward passes, each with its own stream derived from `master_seed`.
template <typename T>
UncertainDisparity mc_predict(Network<T>& model, const StereoSample& sample, int passes,
                              std::uint64_t master_seed,
                              SamplingMode mode = SamplingMode::kStochastic);

UncertaintyStddev uncertainty_stddev_maps(const UncertainDisparity& u);

struct ConvergenceRow {
    int passes = 0;
    double mean_stddev = 0.0;     // mean over pixels (and samples) of the across-repeat stddev
    double standard_error = 0.0;  // approximate, mean_stddev / sqrt(2 (repeats - 1))
};

/// For each pass count, repeats mc_predict and reports how much the mean disparity varies.
template <typename T>
std::vector<ConvergenceRow> convergence_analysis(Network<T>& model,
                                                 std::span<const StereoSample> samples,
                                                 std::span<const int> pass_counts, int repeats,
                                                 std::uint64_t master_seed);

}  // namespace pgcnet
