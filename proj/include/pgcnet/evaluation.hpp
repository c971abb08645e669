#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pgcnet/inference.hpp"
#include "pgcnet/tensor.hpp"

namespace pgcnet {

struct MetricsReport {
    double bad1 = 0.0;  // % of valid pixels with |error| > 1 px
    double bad3 = 0.0;
    double bad5 = 0.0;
    double mae = 0.0;   // px
    double rmse = 0.0;  // px
    std::optional<double> mean_aleatoric_px;
    std::optional<double> mean_epistemic_px;
    std::optional<double> mean_combined_px;
    std::size_t n_valid = 0;
};

/// Count/sum accumulator; merging is commutative so dataset reports weight every pixel equally.
struct MetricsAccumulator {
    std::size_t n = 0;
    std::size_t over1 = 0, over3 = 0, over5 = 0;
    double sum_abs = 0.0, sum_sq = 0.0;
    std::size_t n_uncertainty = 0;
    double sum_aleatoric = 0.0, sum_epistemic = 0.0, sum_combined = 0.0;

    void add(double abs_error);
    void add_uncertainty(double aleatoric_px, double epistemic_px, double combined_px);
    void merge(const MetricsAccumulator& other);
    MetricsReport report() const;
};

/// Valid pixels: mask (if non-empty) and finite ground truth.
MetricsAccumulator accumulate_metrics(const Grid<double>& d_hat, const Grid<float>& gt,
                                      const Mask& mask, const UncertainDisparity* u = nullptr);
MetricsReport accuracy_metrics(const Grid<double>& d_hat, const Grid<float>& gt, const Mask& mask,
                               const UncertainDisparity* u = nullptr);

struct SparsificationCurve {
    std::vector<double> densities;      // (0, 1], strictly increasing
    std::vector<double> mae_at_density; // ranking by the given uncertainty
    std::vector<double> oracle_mae;     // ranking by the error itself
    double ause = 0.0;                  // mean of (model - oracle); not part of the original protocol
};

/// Pixels are accumulated in order of increasing uncertainty (ties by pixel index); for each
/// density f the MAE of the first round(f * n) pixels is reported. `steps` uniform densities
/// 1/steps, ..., 1.
SparsificationCurve sparsification(const Grid<double>& abs_error, const Grid<double>& uncertainty,
                                   const Mask& mask, int steps = 100);

struct Histogram2D {
    int error_bins = 0;
    int sigma_bins = 0;
    double error_max = 0.0;
    double sigma_max = 0.0;
    std::vector<std::size_t> counts;  // error-major: counts[e * sigma_bins + s]

    std::size_t at(int e, int s) const { return counts[static_cast<std::size_t>(e) * sigma_bins + s]; }
    std::size_t total() const;
    std::vector<std::size_t> error_marginal() const;
};

/// Uniform bins on [0, max]; values beyond max land in the last bin. A non-positive max is
/// replaced by the largest valid value.
Histogram2D error_uncertainty_histogram(const Grid<double>& abs_error, const Grid<double>& stddev,
                                        const Mask& mask, int error_bins, int sigma_bins,
                                        double error_max = 0.0, double sigma_max = 0.0);

std::vector<std::size_t> error_histogram(const Grid<double>& abs_error, const Mask& mask, int bins,
                                         double error_max);

/// Fraction of valid pixels with |sigma - |error|| < width.
double diagonal_mass_fraction(const Grid<double>& abs_error, const Grid<double>& stddev,
                              const Mask& mask, double width);

Grid<double> absolute_error(const Grid<double>& d_hat, const Grid<float>& gt);

std::string format_report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);
std::string curve_to_csv(const SparsificationCurve& curve);
std::string histogram_to_csv(const Histogram2D& hist);

}  // namespace pgcnet
