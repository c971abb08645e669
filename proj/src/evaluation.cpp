#include "pgcnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace pgcnet {

namespace {

std::vector<std::size_t> valid_indices(const Grid<double>& values, const Mask& mask) {
    if (!mask.empty() && !mask.same_shape(values)) throw ShapeError("mask size differs from map size");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if ((mask.empty() || mask[i]) && std::isfinite(values[i])) idx.push_back(i);
    }
    return idx;
}

std::vector<double> running_mae(const std::vector<std::size_t>& order, const Grid<double>& err,
                                const std::vector<double>& densities) {
    const std::size_t n = order.size();
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + err[order[i]];
    std::vector<double> out;
    for (double f : densities) {
        const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(f * n)), 1, n);
        out.push_back(prefix[k] / static_cast<double>(k));
    }
    return out;
}

std::vector<std::size_t> ranked(const std::vector<std::size_t>& idx, const Grid<double>& key) {
    std::vector<std::size_t> order = idx;  // already in pixel-index order
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
    return order;
}

int bin_of(double v, double max, int bins) {
    if (!(max > 0)) return 0;
    const int b = static_cast<int>(std::floor(v / max * bins));
    return std::clamp(b, 0, bins - 1);
}

}  // namespace

void MetricsAccumulator::add(double e) {
    ++n;
    over1 += e > 1.0;
    over3 += e > 3.0;
    over5 += e > 5.0;
    sum_abs += e;
    sum_sq += e * e;
}

void MetricsAccumulator::add_uncertainty(double a, double e, double c) {
    ++n_uncertainty;
    sum_aleatoric += a;
    sum_epistemic += e;
    sum_combined += c;
}

void MetricsAccumulator::merge(const MetricsAccumulator& o) {
    n += o.n;
    over1 += o.over1;
    over3 += o.over3;
    over5 += o.over5;
    sum_abs += o.sum_abs;
    sum_sq += o.sum_sq;
    n_uncertainty += o.n_uncertainty;
    sum_aleatoric += o.sum_aleatoric;
    sum_epistemic += o.sum_epistemic;
    sum_combined += o.sum_combined;
}

MetricsReport MetricsAccumulator::report() const {
    if (n == 0) throw DataError("metrics: no valid pixels");
    MetricsReport r;
    const double inv = 1.0 / static_cast<double>(n);
    r.n_valid = n;
    r.bad1 = 100.0 * over1 * inv;
    r.bad3 = 100.0 * over3 * inv;
    r.bad5 = 100.0 * over5 * inv;
    r.mae = sum_abs * inv;
    r.rmse = std::sqrt(sum_sq * inv);
    // Jensen: RMSE >= MAE; guard against the last-ulp rounding of sqrt.
    r.rmse = std::max(r.rmse, r.mae);
    if (n_uncertainty > 0) {
        const double iu = 1.0 / static_cast<double>(n_uncertainty);
        r.mean_aleatoric_px = sum_aleatoric * iu;
        r.mean_epistemic_px = sum_epistemic * iu;
        r.mean_combined_px = sum_combined * iu;
    }
    return r;
}

Grid<double> absolute_error(const Grid<double>& d_hat, const Grid<float>& gt) {
    if (!gt.same_shape(d_hat)) throw ShapeError("prediction and ground truth differ in size");
    Grid<double> out(gt.height(), gt.width());
    for (std::size_t i = 0; i < gt.size(); ++i) out[i] = std::abs(d_hat[i] - static_cast<double>(gt[i]));
    return out;
}

MetricsAccumulator accumulate_metrics(const Grid<double>& d_hat, const Grid<float>& gt,
                                      const Mask& mask, const UncertainDisparity* u) {
    const Grid<double> err = absolute_error(d_hat, gt);
    const auto idx = valid_indices(err, mask);
    MetricsAccumulator acc;
    std::optional<UncertaintyStddev> sd;
    if (u) {
        if (!u->aleatoric_var.same_shape(gt) || !u->epistemic_var.same_shape(gt) ||
            !u->combined_var.same_shape(gt))
            throw ShapeError("uncertainty maps differ in size");
        sd = uncertainty_stddev_maps(*u);
    }
    for (std::size_t i : idx) {
        acc.add(err[i]);
        if (sd) acc.add_uncertainty(sd->aleatoric[i], sd->epistemic[i], sd->combined[i]);
    }
    return acc;
}

MetricsReport accuracy_metrics(const Grid<double>& d_hat, const Grid<float>& gt, const Mask& mask,
                               const UncertainDisparity* u) {
    const MetricsAccumulator acc = accumulate_metrics(d_hat, gt, mask, u);
    if (acc.n == 0) throw DataError("metrics: empty validity mask");
    return acc.report();
}

SparsificationCurve sparsification(const Grid<double>& abs_error, const Grid<double>& uncertainty,
                                   const Mask& mask, int steps) {
    if (steps < 2) throw ParameterError("sparsification needs steps >= 2");
    if (!abs_error.same_shape(uncertainty)) throw ShapeError("error and uncertainty maps differ in size");
    auto idx = valid_indices(abs_error, mask);
    idx.erase(std::remove_if(idx.begin(), idx.end(),
                             [&](std::size_t i) { return !std::isfinite(uncertainty[i]); }),
              idx.end());
    if (idx.empty()) throw DataError("sparsification: no valid pixels");
    SparsificationCurve c;
    for (int k = 1; k <= steps; ++k) c.densities.push_back(static_cast<double>(k) / steps);
    c.mae_at_density = running_mae(ranked(idx, uncertainty), abs_error, c.densities);
    c.oracle_mae = running_mae(ranked(idx, abs_error), abs_error, c.densities);
    double area = 0.0;
    for (std::size_t i = 0; i < c.densities.size(); ++i) area += c.mae_at_density[i] - c.oracle_mae[i];
    c.ause = area / static_cast<double>(c.densities.size());
    return c;
}

std::size_t Histogram2D::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::vector<std::size_t> Histogram2D::error_marginal() const {
    std::vector<std::size_t> m(error_bins, 0);
    for (int e = 0; e < error_bins; ++e)
        for (int s = 0; s < sigma_bins; ++s) m[e] += at(e, s);
    return m;
}

Histogram2D error_uncertainty_histogram(const Grid<double>& abs_error, const Grid<double>& stddev,
                                        const Mask& mask, int error_bins, int sigma_bins,
                                        double error_max, double sigma_max) {
    if (error_bins < 1 || sigma_bins < 1) throw ParameterError("histogram needs >= 1 bin per axis");
    if (!abs_error.same_shape(stddev)) throw ShapeError("error and stddev maps differ in size");
    const auto idx = valid_indices(abs_error, mask);
    Histogram2D h;
    h.error_bins = error_bins;
    h.sigma_bins = sigma_bins;
    h.error_max = error_max;
    h.sigma_max = sigma_max;
    if (!(h.error_max > 0))
        for (std::size_t i : idx) h.error_max = std::max(h.error_max, abs_error[i]);
    if (!(h.sigma_max > 0))
        for (std::size_t i : idx) h.sigma_max = std::max(h.sigma_max, stddev[i]);
    h.counts.assign(static_cast<std::size_t>(error_bins) * sigma_bins, 0);
    for (std::size_t i : idx) {
        const int e = bin_of(abs_error[i], h.error_max, error_bins);
        const int s = bin_of(stddev[i], h.sigma_max, sigma_bins);
        ++h.counts[static_cast<std::size_t>(e) * sigma_bins + s];
    }
    return h;
}

std::vector<std::size_t> error_histogram(const Grid<double>& abs_error, const Mask& mask, int bins,
                                         double error_max) {
    if (bins < 1) throw ParameterError("histogram needs >= 1 bin");
    std::vector<std::size_t> out(bins, 0);
    for (std::size_t i : valid_indices(abs_error, mask)) ++out[bin_of(abs_error[i], error_max, bins)];
    return out;
}

double diagonal_mass_fraction(const Grid<double>& abs_error, const Grid<double>& stddev,
                              const Mask& mask, double width) {
    const auto idx = valid_indices(abs_error, mask);
    if (idx.empty()) return 0.0;
    std::size_t near = 0;
    for (std::size_t i : idx) near += std::abs(stddev[i] - abs_error[i]) < width;
    return static_cast<double>(near) / static_cast<double>(idx.size());
}

std::string format_report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %9s %9s %11s %11s %9s\n", "image", ">1px[%]",
                  ">3px[%]", ">5px[%]", "MAE[px]", "RMSE[px]", "Aleat.[px]", "Epist.[px]", "n_valid");
    os << line;
    auto opt = [](const std::optional<double>& v) {
        char b[32];
        if (v) std::snprintf(b, sizeof b, "%11.3f", *v);
        else std::snprintf(b, sizeof b, "%11s", "-");
        return std::string(b);
    };
    for (const auto& [name, r] : rows) {
        std::snprintf(line, sizeof line, "%-24s %8.2f %8.2f %8.2f %9.3f %9.3f %s %s %9zu\n", name.c_str(),
                      r.bad1, r.bad3, r.bad5, r.mae, r.rmse, opt(r.mean_aleatoric_px).c_str(),
                      opt(r.mean_epistemic_px).c_str(), r.n_valid);
        os << line;
    }
    return os.str();
}

std::string curve_to_csv(const SparsificationCurve& c) {
    std::ostringstream os;
    os.precision(17);
    os << "density,mae,oracle_mae\n";
    for (std::size_t i = 0; i < c.densities.size(); ++i) {
        os << c.densities[i] << "," << c.mae_at_density[i] << "," << c.oracle_mae[i] << "\n";
    }
    return os.str();
}

std::string histogram_to_csv(const Histogram2D& h) {
    std::ostringstream os;
    os.precision(17);
    os << "error_lo,error_hi,sigma_lo,sigma_hi,count\n";
    const double ew = h.error_max / h.error_bins, sw = h.sigma_max / h.sigma_bins;
    for (int e = 0; e < h.error_bins; ++e)
        for (int s = 0; s < h.sigma_bins; ++s) {
            os << e * ew << "," << (e + 1) * ew << "," << s * sw << "," << (s + 1) * sw << ","
               << h.at(e, s) << "\n";
        }
    return os.str();
}

}  // namespace pgcnet
